//! Alternating best responses until neither player can improve.

use serde::{Deserialize, Serialize};

use super::analysis::action_values;
use super::{best_response, checkout_policy, evaluate, Game, GameState, Player, Solution, ZsgError, DEFAULT_MAX_ROUNDS, DEFAULT_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NashConfig {
    pub tol: f64,
    pub max_rounds: usize,
}

impl Default for NashConfig {
    fn default() -> Self {
        NashConfig {
            tol: DEFAULT_TOL,
            max_rounds: DEFAULT_MAX_ROUNDS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NashSolution {
    pub solution: Solution,
    /// Rounds of best responses; a round is A's solve followed by B's.
    pub rounds: usize,
    /// Individual best-response solves.
    pub best_responses: usize,
    /// Max state-value change after each best response.
    pub trace: Vec<f64>,
}

impl NashSolution {
    pub fn p_a_star(&self) -> f64 {
        self.solution.p_a_star()
    }

    pub fn p_b_star(&self) -> f64 {
        self.solution.p_b_star()
    }
}

/// Start from both checkout policies, then A and B best-respond in turn until
/// a best response moves no state value by `tol` or more (after both have
/// moved). `max_rounds` counts A+B pairs.
pub fn solve_nash(game: &Game, cfg: &NashConfig) -> Result<NashSolution, ZsgError> {
    let [ma, mb] = game.max;
    let (ca, _) = checkout_policy(game.grids[0], Player::A, ma, mb)?;
    let (cb, _) = checkout_policy(game.grids[1], Player::B, mb, ma)?;
    let mut current = evaluate(game, &ca, &cb)?;
    let mut trace = Vec::new();
    let mut optimizer = Player::A;
    for n in 1..=2 * cfg.max_rounds {
        let opponent = current.policies[optimizer.other().idx()].clone();
        let next = best_response(game, optimizer, &opponent, Some(&current))?;
        let change = next.max_value_change(&current);
        trace.push(change);
        log::info!("best response {n} ({optimizer}): max value change {change:.3e}");
        current = next;
        if n >= 2 && change < cfg.tol {
            return Ok(NashSolution {
                solution: current,
                rounds: n.div_ceil(2),
                best_responses: n,
                trace,
            });
        }
        optimizer = optimizer.other();
    }
    Err(ZsgError::NoConvergence {
        rounds: cfg.max_rounds,
        trace,
    })
}

/// Largest gain either thrower could get at any of `states` by switching the
/// current action while both keep their policies afterwards.
pub fn deviation_gain(game: &Game, sol: &Solution, states: &[GameState]) -> Result<f64, ZsgError> {
    let mut worst = 0.0f64;
    for st in states {
        let vals = action_values(game, sol, st, game.grids[st.thrower.idx()])?;
        let chosen = sol.policies[st.thrower.idx()].action(st).ok_or(ZsgError::Unsolved(*st))?;
        let best = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        worst = worst.max(best - vals[chosen as usize]);
    }
    Ok(worst)
}
