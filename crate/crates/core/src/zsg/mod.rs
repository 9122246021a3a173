//! The two-player 501 game: turn rules, policies, best responses, Nash
//! iteration, match probabilities and aim analysis.
//!
//! Values are stored from the thrower's point of view for "start-like" states
//! `(own, opp, i, u = 0)`. A within-turn state whose remaining score
//! `own - u` is at least `60 i + 2` can neither bust nor check out, so it is
//! the same state as `(own - u, opp, i, 0)`; only the remaining "sensitive"
//! states (`own ≤ 181`) need their own entries.

mod analysis;
mod checkout;
mod engine;
mod matchprob;
mod nash;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aimprob::ActionGrid;
use crate::board::Outcome;

pub use analysis::{
    action_values, analyze_state, compare_action_sets, heatmap, ActionSetComparison, ActionValue, GapRow, Heatmap, OutcomeBranch,
    StateAnalysis,
};
pub use checkout::{checkout_policy, CheckoutValues};
pub use engine::{best_response, evaluate};
pub use matchprob::{match_table, match_win_prob, MatchRow};
pub use nash::{deviation_gain, solve_nash, NashConfig, NashSolution};

pub const START_SCORE: u32 = 501;
pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ROUNDS: usize = 20;
/// Highest score a single dart can make.
pub const MAX_DART: u32 = 60;
/// Scores above this can never be finished (or bust) within one turn.
pub const SENSITIVE_MAX: u32 = 3 * MAX_DART + 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ZsgError {
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("state is terminal")]
    Terminal,
    #[error("no checkout path from score {score}")]
    NoCheckout { score: u32 },
    #[error("degenerate_dynamics: both players stall with probability 1 at ({s_a}, {s_b})")]
    DegenerateDynamics { s_a: u32, s_b: u32 },
    #[error("policy iteration did not settle at ({s_a}, {s_b})")]
    PolicyIteration { s_a: u32, s_b: u32 },
    #[error("no convergence after {rounds} best-response rounds; value gaps {trace:?}")]
    NoConvergence { rounds: usize, trace: Vec<f64> },
    #[error("policy does not fit this game: {0}")]
    Mismatch(String),
    #[error("number of legs must be odd, got {0}")]
    EvenLegs(u32),
    #[error("probability out of range: {0}")]
    Probability(f64),
    #[error("state {0} is outside the solved game")]
    Unsolved(GameState),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Player {
    A,
    B,
}

impl Player {
    pub fn other(self) -> Player {
        match self {
            Player::A => Player::B,
            Player::B => Player::A,
        }
    }

    pub fn idx(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Player {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Player::A => "A",
            Player::B => "B",
        })
    }
}

/// `(sA, sB, t, i, u)`: scores at turn start, thrower, throws left, turn total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GameState {
    #[serde(rename = "sA")]
    pub s_a: u32,
    #[serde(rename = "sB")]
    pub s_b: u32,
    #[serde(rename = "t")]
    pub thrower: Player,
    #[serde(rename = "i")]
    pub throws_left: u8,
    #[serde(rename = "u")]
    pub turn_score: u32,
}

impl GameState {
    pub fn turn_start(s_a: u32, s_b: u32, thrower: Player) -> Self {
        GameState {
            s_a,
            s_b,
            thrower,
            throws_left: 3,
            turn_score: 0,
        }
    }

    pub fn initial() -> Self {
        Self::turn_start(START_SCORE, START_SCORE, Player::A)
    }

    pub fn score(&self, p: Player) -> u32 {
        match p {
            Player::A => self.s_a,
            Player::B => self.s_b,
        }
    }

    pub fn own(&self) -> u32 {
        self.score(self.thrower)
    }

    pub fn opp(&self) -> u32 {
        self.score(self.thrower.other())
    }

    pub fn winner(&self) -> Option<Player> {
        if self.s_a == 0 {
            Some(Player::A)
        } else if self.s_b == 0 {
            Some(Player::B)
        } else {
            None
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.winner().is_some()
    }

    pub fn validate(&self) -> Result<(), ZsgError> {
        let bad = |m: String| Err(ZsgError::InvalidState(m));
        for s in [self.s_a, self.s_b] {
            if s == 1 || s > START_SCORE {
                return bad(format!("score {s} is not a standing score"));
            }
        }
        if !(1..=3).contains(&self.throws_left) {
            return bad(format!("throws left must be 1..3, got {}", self.throws_left));
        }
        if self.turn_score > (3 - self.throws_left as u32) * MAX_DART {
            return bad(format!(
                "turn score {} impossible with {} throws left",
                self.turn_score, self.throws_left
            ));
        }
        if !self.is_terminal() && self.turn_score + 2 > self.own() {
            return bad(format!(
                "turn score {} leaves no valid remainder from {}",
                self.turn_score,
                self.own()
            ));
        }
        Ok(())
    }

    fn with_scores(&self, own: u32, opp: u32) -> (u32, u32) {
        match self.thrower {
            Player::A => (own, opp),
            Player::B => (opp, own),
        }
    }
}

impl fmt::Display for GameState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{}",
            self.s_a, self.s_b, self.thrower, self.throws_left, self.turn_score
        )
    }
}

impl FromStr for GameState {
    type Err = ZsgError;
    /// `sA,sB,t,i,u`, e.g. `501,501,A,3,0`.
    fn from_str(s: &str) -> Result<Self, ZsgError> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let bad = || ZsgError::InvalidState(format!("expected sA,sB,t,i,u but got {s:?}"));
        if parts.len() != 5 {
            return Err(bad());
        }
        let num = |x: &str| x.parse::<u32>().map_err(|_| bad());
        let thrower = match parts[2] {
            "A" | "a" => Player::A,
            "B" | "b" => Player::B,
            _ => return Err(bad()),
        };
        let st = GameState {
            s_a: num(parts[0])?,
            s_b: num(parts[1])?,
            thrower,
            throws_left: num(parts[3])? as u8,
            turn_score: num(parts[4])?,
        };
        st.validate()?;
        Ok(st)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transition {
    Win(Player),
    Next(GameState),
}

/// One dart under the standard rules: finish exactly on a double, bust on
/// overshoot, a remainder of 1, or reaching zero without a double.
pub fn turn_transition(s: &GameState, outcome: Outcome) -> Result<Transition, ZsgError> {
    if s.is_terminal() {
        return Err(ZsgError::Terminal);
    }
    let t = s.thrower;
    let own = s.own();
    let u2 = s.turn_score + outcome.numeric_score();
    if u2 == own && outcome.is_double() {
        return Ok(Transition::Win(t));
    }
    if u2 + 1 >= own {
        return Ok(Transition::Next(GameState::turn_start(s.s_a, s.s_b, t.other())));
    }
    if s.throws_left > 1 {
        return Ok(Transition::Next(GameState {
            throws_left: s.throws_left - 1,
            turn_score: u2,
            ..*s
        }));
    }
    let (a, b) = s.with_scores(own - u2, s.opp());
    Ok(Transition::Next(GameState::turn_start(a, b, t.other())))
}

/// Whether `(own, i, u)` can bust or finish before the turn ends.
pub(crate) fn is_sensitive(own: u32, i: u8, u: u32) -> bool {
    own - u < MAX_DART * i as u32 + 2
}

/// Indexing of one player's states for a given grid and score cap.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub max_own: u32,
    pub max_opp: u32,
    /// Dart scores with positive probability under some action (0 included if possible).
    pub dart_scores: Vec<u32>,
    /// Per own score: sensitive `(i, u)` with `u > 0`, i = 1 first.
    states: Vec<Vec<(u8, u32)>>,
    base: Vec<usize>,
    slot: Vec<i32>,
    pub sens_total: usize,
}

const U_SPAN: usize = 2 * MAX_DART as usize + 1;

impl Layout {
    pub fn new(grid: &ActionGrid, max_own: u32, max_opp: u32) -> Self {
        let mut dart_scores: Vec<u32> = grid.support().iter().map(|o| o.numeric_score()).collect();
        dart_scores.sort_unstable();
        dart_scores.dedup();
        // (s, 2, 0) is solved even when no dart scores zero, so i = 1 also
        // needs the one-dart totals.
        let with_zero: Vec<u32> = std::iter::once(0).chain(dart_scores.iter().copied()).collect();
        let mut two: Vec<u32> = with_zero.iter().flat_map(|a| with_zero.iter().map(move |b| a + b)).collect();
        two.sort_unstable();
        two.dedup();
        let top = max_own.min(SENSITIVE_MAX) as usize;
        let mut states = vec![Vec::new(); max_own as usize + 1];
        let mut base = vec![0; max_own as usize + 2];
        let mut slot = vec![-1i32; (top + 1) * 2 * U_SPAN];
        let mut total = 0;
        for s in 0..=max_own as usize {
            base[s] = total;
            if (2..=top).contains(&s) {
                for (i, us) in [(1u8, &two), (2u8, &dart_scores)] {
                    for &u in us {
                        if u > 0 && u as usize + 2 <= s && is_sensitive(s as u32, i, u) {
                            slot[(s * 2 + i as usize - 1) * U_SPAN + u as usize] = states[s].len() as i32;
                            states[s].push((i, u));
                        }
                    }
                }
            }
            total += states[s].len();
        }
        base[max_own as usize + 1] = total;
        Layout {
            max_own,
            max_opp,
            dart_scores,
            states,
            base,
            slot,
            sens_total: total,
        }
    }

    pub fn sensitive_states(&self, s: u32) -> &[(u8, u32)] {
        &self.states[s as usize]
    }

    /// Local index of a sensitive state within its own-score block.
    pub(crate) fn local(&self, s: u32, i: u8, u: u32) -> Option<usize> {
        let k = (s as usize * 2 + i as usize - 1) * U_SPAN + u as usize;
        self.slot.get(k).and_then(|&v| usize::try_from(v).ok())
    }

    pub(crate) fn start_index(&self, own: u32, opp: u32, i: u8) -> usize {
        ((opp as usize * (self.max_own as usize + 1)) + own as usize) * 3 + i as usize - 1
    }

    pub(crate) fn sens_index(&self, opp: u32, own: u32, local: usize) -> usize {
        opp as usize * self.sens_total + self.base[own as usize] + local
    }

    pub(crate) fn start_len(&self) -> usize {
        (self.max_opp as usize + 1) * (self.max_own as usize + 1) * 3
    }

    /// Where a within-turn state lives: start-like `(own', i)` or sensitive.
    pub(crate) fn locate(&self, own: u32, opp: u32, i: u8, u: u32) -> Option<Loc> {
        if own > self.max_own || opp > self.max_opp || own < 2 || opp < 2 || u + 2 > own {
            return None;
        }
        if u == 0 || !is_sensitive(own, i, u) {
            return Some(Loc::Start(self.start_index(own - u, opp, i)));
        }
        self.local(own, i, u).map(|l| Loc::Sens(self.sens_index(opp, own, l)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Loc {
    Start(usize),
    Sens(usize),
}

/// A deterministic policy for one player: an action index per state.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub owner: Player,
    pub layout: Arc<Layout>,
    pub(crate) start: Vec<u32>,
    pub(crate) sens: Vec<u32>,
}

impl Policy {
    pub(crate) fn blank(owner: Player, layout: Arc<Layout>) -> Self {
        let start = vec![u32::MAX; layout.start_len()];
        let sens = vec![u32::MAX; (layout.max_opp as usize + 1) * layout.sens_total];
        Policy {
            owner,
            layout,
            start,
            sens,
        }
    }

    /// Action at a state thrown by the owner; `None` off the solved range.
    pub fn action(&self, state: &GameState) -> Option<u32> {
        if state.thrower != self.owner || state.is_terminal() {
            return None;
        }
        let a = match self.layout.locate(state.own(), state.opp(), state.throws_left, state.turn_score)? {
            Loc::Start(k) => self.start[k],
            Loc::Sens(k) => self.sens[k],
        };
        (a != u32::MAX).then_some(a)
    }

    /// The same action everywhere.
    pub fn constant(owner: Player, layout: Arc<Layout>, action: u32) -> Self {
        let mut p = Policy::blank(owner, layout);
        p.start.fill(action);
        p.sens.fill(action);
        p
    }

    /// Every state of the owner this policy covers: start-like states with
    /// `u = 0` and the sensitive within-turn states.
    pub fn states(&self) -> Vec<GameState> {
        let l = &self.layout;
        let mut out = Vec::new();
        let make = |own: u32, opp: u32, i: u8, u: u32| {
            let (s_a, s_b) = match self.owner {
                Player::A => (own, opp),
                Player::B => (opp, own),
            };
            GameState {
                s_a,
                s_b,
                thrower: self.owner,
                throws_left: i,
                turn_score: u,
            }
        };
        for opp in 2..=l.max_opp {
            for own in 2..=l.max_own {
                for i in 1..=3u8 {
                    out.push(make(own, opp, i, 0));
                }
                for &(i, u) in l.sensitive_states(own) {
                    out.push(make(own, opp, i, u));
                }
            }
        }
        out
    }

    /// Set the action at one state (and every state sharing its entry).
    pub fn set_action(&mut self, state: &GameState, action: u32) -> Result<(), ZsgError> {
        if state.thrower != self.owner {
            return Err(ZsgError::Mismatch(format!("state {state} is not thrown by {}", self.owner)));
        }
        match self.layout.locate(state.own(), state.opp(), state.throws_left, state.turn_score) {
            Some(Loc::Start(k)) => self.start[k] = action,
            Some(Loc::Sens(k)) => self.sens[k] = action,
            None => return Err(ZsgError::Unsolved(*state)),
        }
        Ok(())
    }

    /// Number of states on which two policies disagree.
    pub fn differences(&self, other: &Policy) -> usize {
        let d = |a: &[u32], b: &[u32]| a.iter().zip(b).filter(|(x, y)| x != y).count();
        d(&self.start, &other.start) + d(&self.sens, &other.sens)
    }
}

/// Score caps of a (possibly truncated) game and the two grids.
#[derive(Debug, Clone, Copy)]
pub struct Game<'a> {
    pub grids: [&'a ActionGrid; 2],
    /// Highest standing score for A and for B.
    pub max: [u32; 2],
}

impl<'a> Game<'a> {
    pub fn new(grid_a: &'a ActionGrid, grid_b: &'a ActionGrid) -> Self {
        Game {
            grids: [grid_a, grid_b],
            max: [START_SCORE, START_SCORE],
        }
    }

    pub fn truncated(grid_a: &'a ActionGrid, grid_b: &'a ActionGrid, max_a: u32, max_b: u32) -> Self {
        Game {
            grids: [grid_a, grid_b],
            max: [max_a, max_b],
        }
    }

    pub fn layout(&self, p: Player) -> Layout {
        let q = p.other();
        Layout::new(self.grids[p.idx()], self.max[p.idx()], self.max[q.idx()])
    }
}

/// Values and policies of a solved policy pair.
#[derive(Debug, Clone)]
pub struct Solution {
    pub max: [u32; 2],
    pub policies: [Arc<Policy>; 2],
    /// Start-like values, thrower's perspective, indexed like `Policy::start`.
    pub(crate) values: [Vec<f64>; 2],
}

impl Solution {
    /// Probability that A wins from a turn-start state.
    pub fn value(&self, game: &Game, state: &GameState) -> Result<f64, ZsgError> {
        state.validate()?;
        match state.winner() {
            Some(Player::A) => return Ok(1.0),
            Some(Player::B) => return Ok(0.0),
            None => {}
        }
        let v = self.thrower_value(game, state)?;
        Ok(if state.thrower == Player::A { v } else { 1.0 - v })
    }

    /// Win probability of the player to throw.
    pub fn thrower_value(&self, game: &Game, state: &GameState) -> Result<f64, ZsgError> {
        let p = state.thrower;
        let layout = &self.policies[p.idx()].layout;
        match layout.locate(state.own(), state.opp(), state.throws_left, state.turn_score) {
            Some(Loc::Start(k)) => Ok(self.values[p.idx()][k]),
            Some(Loc::Sens(_)) => analysis::sensitive_value(game, self, state),
            None => Err(ZsgError::Unsolved(*state)),
        }
    }

    /// A's probability of winning a leg that A starts from `max`.
    pub fn p_a_star(&self) -> f64 {
        self.values[0][self.policies[0].layout.start_index(self.max[0], self.max[1], 3)]
    }

    /// A's probability of winning a leg that B starts.
    pub fn p_b_star(&self) -> f64 {
        1.0 - self.values[1][self.policies[1].layout.start_index(self.max[1], self.max[0], 3)]
    }

    /// Largest difference over all start-like values of both players.
    pub fn max_value_change(&self, other: &Solution) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::board::Outcome as O;

    fn st(a: u32, b: u32, t: Player, i: u8, u: u32) -> GameState {
        GameState {
            s_a: a,
            s_b: b,
            thrower: t,
            throws_left: i,
            turn_score: u,
        }
    }

    #[test]
    fn rules_examples() {
        let s = st(16, 40, Player::A, 3, 0);
        assert_eq!(turn_transition(&s, O::Double(8)).unwrap(), Transition::Win(Player::A));
        let Transition::Next(n) = turn_transition(&s, O::Single(8)).unwrap() else {
            panic!()
        };
        assert_eq!(n, st(16, 40, Player::A, 2, 8));
        assert_eq!(turn_transition(&n, O::Double(4)).unwrap(), Transition::Win(Player::A));
        let b = st(20, 40, Player::A, 2, 4);
        assert_eq!(
            turn_transition(&b, O::Single(20)).unwrap(),
            Transition::Next(st(20, 40, Player::B, 3, 0))
        );
    }

    #[test]
    fn rules_edge_cases() {
        // remainder 1 and reaching zero without a double both bust
        let s = st(40, 30, Player::B, 1, 0);
        assert_eq!(
            turn_transition(&s, O::Single(29)).unwrap(),
            Transition::Next(st(40, 30, Player::A, 3, 0))
        );
        assert_eq!(
            turn_transition(&s, O::Treble(10)).unwrap(),
            Transition::Next(st(40, 30, Player::A, 3, 0))
        );
        assert_eq!(turn_transition(&s, O::Double(15)).unwrap(), Transition::Win(Player::B));
        assert_eq!(
            turn_transition(&s, O::Single(5)).unwrap(),
            Transition::Next(st(40, 25, Player::A, 3, 0))
        );
        assert_eq!(
            turn_transition(&st(50, 9, Player::A, 3, 0), O::DoubleBull).unwrap(),
            Transition::Win(Player::A)
        );
        assert_eq!(turn_transition(&st(0, 9, Player::A, 3, 0), O::Miss), Err(ZsgError::Terminal));
    }

    #[test]
    fn state_parsing_and_validation() {
        let s: GameState = "501,501,A,3,0".parse().unwrap();
        assert_eq!(s, GameState::initial());
        assert!("1,501,A,3,0".parse::<GameState>().is_err());
        assert!("501,501,A,3,10".parse::<GameState>().is_err());
        assert!("501,501,C,3,0".parse::<GameState>().is_err());
        assert!("100,501,B,1,120".parse::<GameState>().is_ok());
        assert_eq!(s.to_string().parse::<GameState>().unwrap(), s);
    }
}
