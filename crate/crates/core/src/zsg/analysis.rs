//! Values of individual aims at a state: heat-maps, state analysis and the
//! multi- vs single-action comparison.

use serde::{Deserialize, Serialize};

use super::engine::{dot, next_coefficients, run_layer, Choose, LayerResult, OutcomeInfo, Slot};
use super::{
    is_sensitive, match_win_prob, solve_nash, turn_transition, Game, GameState, NashConfig, Player, Solution, Transition, ZsgError,
};
use crate::aimprob::{ActionGrid, Probs, STRIDE};
use crate::board::{Outcome, Point, TargetRegion};

/// Canonical form: a state that cannot bust is the same as a fresh one on
/// the remaining score.
fn canonical(st: &GameState) -> (u32, u32, u8, u32) {
    let (own, opp, i, u) = (st.own(), st.opp(), st.throws_left, st.turn_score);
    if u > 0 && !is_sensitive(own, i, u) {
        (own - u, opp, i, 0)
    } else {
        (own, opp, i, u)
    }
}

fn layer_for(game: &Game, sol: &Solution, p: Player, own: u32, opp: u32) -> LayerResult {
    let q = p.other();
    let pol = &sol.policies[p.idx()];
    let layout = &pol.layout;
    let lq = &sol.policies[q.idx()].layout;
    let (vp, vq) = (&sol.values[p.idx()], &sol.values[q.idx()]);
    let free = |rem: u32, i: u8| vp[layout.start_index(rem, opp, i)];
    let end = |rem: u32| 1.0 - vq[lq.start_index(opp, rem, 3)];
    let fixed = |slot: Slot| match slot {
        Slot::Start(i) => pol.start[layout.start_index(own, opp, i)],
        Slot::Sens(l) => pol.sens[layout.sens_index(opp, own, l)],
    };
    let grid = game.grids[p.idx()];
    let mut res = LayerResult::default();
    run_layer(
        grid,
        &OutcomeInfo::new(grid),
        layout,
        own,
        1.0,
        &free,
        &end,
        &Choose::Fixed(&fixed),
        &mut res,
    );
    res
}

fn check_state(game: &Game, st: &GameState) -> Result<(), ZsgError> {
    st.validate()?;
    if st.is_terminal() {
        return Err(ZsgError::Terminal);
    }
    if st.s_a > game.max[0] || st.s_b > game.max[1] {
        return Err(ZsgError::Unsolved(*st));
    }
    Ok(())
}

/// Value of the next state for each outcome, thrower's perspective.
/// Outcomes whose next state lies off the solved layout get value 0 and are
/// flagged in the second return value.
fn continuation(game: &Game, sol: &Solution, st: &GameState) -> Result<(Probs, [bool; STRIDE]), ZsgError> {
    check_state(game, st)?;
    let p = st.thrower;
    let (own, opp, i, u) = canonical(st);
    let layout = &sol.policies[p.idx()].layout;
    if u > 0 && layout.local(own, i, u).is_none() {
        return Err(ZsgError::Unsolved(*st));
    }
    let q = p.other();
    let lq = &sol.policies[q.idx()].layout;
    let (vp, vq) = (&sol.values[p.idx()], &sol.values[q.idx()]);
    let res = layer_for(game, sol, p, own, opp);
    let t = 1.0 - vq[lq.start_index(opp, own, 3)];
    let free = |rem: u32, i: u8| vp[layout.start_index(rem, opp, i)];
    let end = |rem: u32| 1.0 - vq[lq.start_index(opp, rem, 3)];
    let info = OutcomeInfo::new(&all_outcomes_grid());
    let (mut vc, mut vk) = ([0.0; STRIDE], [0.0; STRIDE]);
    next_coefficients(&info, layout, own, i, u, 1.0, &free, &end, &res, &mut vc, &mut vk);
    let mut v = [0.0; STRIDE];
    let mut unknown = [false; STRIDE];
    for z in 0..STRIDE {
        v[z] = vc[z] + vk[z] * t;
        if v[z].is_nan() {
            v[z] = 0.0;
            unknown[z] = true;
        }
    }
    Ok((v, unknown))
}

fn values_for(grid: &ActionGrid, v: &Probs, unknown: &[bool; STRIDE], st: &GameState) -> Result<Vec<f64>, ZsgError> {
    grid.probs
        .iter()
        .map(|p| {
            if p.iter().zip(unknown).any(|(&x, &u)| u && x > 0.0) {
                Err(ZsgError::Unsolved(*st))
            } else {
                Ok(dot(p, v))
            }
        })
        .collect()
}

/// Placeholder grid whose support is every outcome, so continuation values
/// are filled for all 63 labels (states off the layout never get looked up
/// because their outcomes bust or leave the turn).
fn all_outcomes_grid() -> ActionGrid {
    let mut p = [0.0; STRIDE];
    p[..Outcome::COUNT].fill(1.0 / Outcome::COUNT as f64);
    ActionGrid::new(
        crate::aimprob::ActionSet::Single,
        vec![crate::aimprob::Action {
            aim: Point::ORIGIN,
            region: None,
            model: None,
        }],
        vec![p],
    )
}

/// Win probability of the thrower for each action of `grid` at `st`, with
/// both players following the solution's policies afterwards.
pub fn action_values(game: &Game, sol: &Solution, st: &GameState, grid: &ActionGrid) -> Result<Vec<f64>, ZsgError> {
    let (v, unknown) = continuation(game, sol, st)?;
    values_for(grid, &v, &unknown, st)
}

/// Thrower's value at a sensitive state, by re-running its layer.
pub(crate) fn sensitive_value(game: &Game, sol: &Solution, st: &GameState) -> Result<f64, ZsgError> {
    check_state(game, st)?;
    let p = st.thrower;
    let (own, opp, i, u) = canonical(st);
    let layout = &sol.policies[p.idx()].layout;
    let l = layout.local(own, i, u).ok_or(ZsgError::Unsolved(*st))?;
    let res = layer_for(game, sol, p, own, opp);
    let lq = &sol.policies[p.other().idx()].layout;
    let y = sol.values[p.other().idx()][lq.start_index(opp, own, 3)];
    Ok((res.c[l] + res.k[l] * (1.0 - y)).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Heatmap {
    pub state: GameState,
    /// Whose win probability `values` holds.
    pub perspective: Player,
    pub aims: Vec<Point>,
    pub values: Vec<f64>,
    pub argmax: usize,
    pub argmax_aim: Point,
    pub argmax_value: f64,
}

/// Thrower's win probability for every aim of `aim_grid` (normally the
/// thrower's multi-action grid) at `st`.
pub fn heatmap(game: &Game, sol: &Solution, st: &GameState, aim_grid: &ActionGrid) -> Result<Heatmap, ZsgError> {
    let values = action_values(game, sol, st, aim_grid)?;
    let mut argmax = 0;
    for (a, &v) in values.iter().enumerate() {
        if v > values[argmax] {
            argmax = a;
        }
    }
    Ok(Heatmap {
        state: *st,
        perspective: st.thrower,
        aims: aim_grid.actions.iter().map(|a| a.aim).collect(),
        argmax_aim: aim_grid.actions[argmax].aim,
        argmax_value: values[argmax],
        values,
        argmax,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActionValue {
    pub index: usize,
    pub aim: Point,
    pub region: Option<TargetRegion>,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutcomeBranch {
    pub outcome: Outcome,
    pub probability: f64,
    pub next: Transition,
    /// Thrower's win probability after this outcome.
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateAnalysis {
    pub state: GameState,
    /// Thrower's win probability under the solved policies.
    pub value: f64,
    pub best: ActionValue,
    pub top: Vec<ActionValue>,
    /// Outcomes of the best action with their next states.
    pub outcomes: Vec<OutcomeBranch>,
}

/// Best aim, its value, the `top_k` aims and the branches of the best aim.
pub fn analyze_state(game: &Game, sol: &Solution, st: &GameState, top_k: usize) -> Result<StateAnalysis, ZsgError> {
    let grid = game.grids[st.thrower.idx()];
    let (v, unknown) = continuation(game, sol, st)?;
    let vals = values_for(grid, &v, &unknown, st)?;
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]).then(a.cmp(&b)));
    let av = |a: usize| ActionValue {
        index: a,
        aim: grid.actions[a].aim,
        region: grid.actions[a].region,
        value: vals[a],
    };
    let best = av(order[0]);
    let top = order.iter().take(top_k.max(1)).map(|&a| av(a)).collect();
    let p = &grid.probs[best.index];
    let mut outcomes = Vec::new();
    for o in Outcome::all() {
        let pr = p[o.index()];
        if pr > 0.0 {
            outcomes.push(OutcomeBranch {
                outcome: o,
                probability: pr,
                next: turn_transition(st, o)?,
                value: v[o.index()],
            });
        }
    }
    let value = sol.thrower_value(game, st)?;
    Ok(StateAnalysis {
        state: *st,
        value,
        best,
        top,
        outcomes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub legs: u32,
    /// Multi-action player's match-win probability when starting the match.
    pub multi_first: f64,
    /// Single-action player's match-win probability when starting the match.
    pub single_first: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActionSetComparison {
    /// Multi-action player's leg-win probability when starting the leg.
    pub p_multi_start: f64,
    /// Multi-action player's leg-win probability when the opponent starts.
    pub p_multi_second: f64,
    pub rounds: usize,
    pub rows: Vec<GapRow>,
}

/// Solve multi (A) against single (B) and tabulate match gaps per leg count.
pub fn compare_action_sets(game: &Game, legs: &[u32], cfg: &NashConfig) -> Result<ActionSetComparison, ZsgError> {
    let nash = solve_nash(game, cfg)?;
    let (pa, pb) = (nash.p_a_star(), nash.p_b_star());
    let rows = legs
        .iter()
        .map(|&n| {
            let multi_first = match_win_prob(pa, pb, n)?;
            let single_first = match_win_prob(1.0 - pb, 1.0 - pa, n)?;
            Ok(GapRow {
                legs: n,
                multi_first,
                single_first,
                gap: multi_first - single_first,
            })
        })
        .collect::<Result<Vec<_>, ZsgError>>()?;
    Ok(ActionSetComparison {
        p_multi_start: pa,
        p_multi_second: pb,
        rounds: nash.rounds,
        rows,
    })
}
