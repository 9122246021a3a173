//! Test-side oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;

use dartsolve_core::aimprob::{ActionGrid, ActionSet, OutcomeDistribution};
use dartsolve_core::board::Outcome;
use dartsolve_core::zsg::{turn_transition, GameState, Player, Policy, Transition};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn dist(parts: &[(Outcome, f64)]) -> OutcomeDistribution {
    let mut d = OutcomeDistribution::zero();
    for &(o, p) in parts {
        d.probs[o.index()] += p;
    }
    d
}

pub fn grid(actions: &[&[(Outcome, f64)]]) -> ActionGrid {
    let ds: Vec<_> = actions.iter().map(|a| dist(a)).collect();
    ActionGrid::from_distributions(ActionSet::Single, &ds)
}

/// Three actions, each with at most three outcomes, scores up to 8.
pub fn toy_grids() -> (ActionGrid, ActionGrid) {
    use Outcome::*;
    let a = grid(&[
        &[(Double(2), 0.45), (Single(2), 0.35), (Miss, 0.2)],
        &[(Double(1), 0.5), (Single(1), 0.3), (Single(2), 0.2)],
        &[(Treble(1), 0.4), (Single(1), 0.4), (Miss, 0.2)],
    ]);
    let b = grid(&[
        &[(Double(1), 0.6), (Miss, 0.3), (Single(1), 0.1)],
        &[(Double(2), 0.3), (Single(2), 0.5), (Double(1), 0.2)],
        &[(Double(4), 0.25), (Single(4), 0.5), (Miss, 0.25)],
    ]);
    (a, b)
}

pub fn random_policy(template: &Policy, n_actions: u32, seed: u64) -> Policy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = template.clone();
    for st in template.states() {
        p.set_action(&st, rng.random_range(0..n_actions)).unwrap();
    }
    p
}

/// Absorption probabilities of "A wins" for the raw Markov chain induced by
/// the two policies, over every state reachable from any turn start.
pub fn dense_values(grids: [&ActionGrid; 2], pols: [&Policy; 2], max: [u32; 2]) -> HashMap<GameState, f64> {
    let mut index: HashMap<GameState, usize> = HashMap::new();
    let mut order = Vec::new();
    let mut stack = Vec::new();
    for sa in 2..=max[0] {
        for sb in 2..=max[1] {
            for t in [Player::A, Player::B] {
                stack.push(GameState::turn_start(sa, sb, t));
            }
        }
    }
    while let Some(st) = stack.pop() {
        if index.contains_key(&st) {
            continue;
        }
        index.insert(st, order.len());
        order.push(st);
        let p = st.thrower as usize;
        let a = pols[p].action(&st).expect("policy covers reachable state");
        let d = grids[p].distribution(a as usize);
        for o in Outcome::all() {
            if d.get(o) > 0.0 {
                if let Transition::Next(n) = turn_transition(&st, o).unwrap() {
                    stack.push(n);
                }
            }
        }
    }
    let n = order.len();
    let mut m = DMatrix::<f64>::identity(n, n);
    let mut r = DVector::<f64>::zeros(n);
    for (k, st) in order.iter().enumerate() {
        let p = st.thrower as usize;
        let a = pols[p].action(st).unwrap();
        let d = grids[p].distribution(a as usize);
        for o in Outcome::all() {
            let pr = d.get(o);
            if pr == 0.0 {
                continue;
            }
            match turn_transition(st, o).unwrap() {
                Transition::Win(Player::A) => r[k] += pr,
                Transition::Win(Player::B) => {}
                Transition::Next(nx) => m[(k, index[&nx])] -= pr,
            }
        }
    }
    let x = m.lu().solve(&r).expect("chain absorbs");
    order.into_iter().enumerate().map(|(k, st)| (st, x[k])).collect()
}

/// Fraction of simulated legs A wins from `start`.
pub fn rollouts(grids: [&ActionGrid; 2], pols: [&Policy; 2], start: GameState, n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cdfs: Vec<Vec<Vec<(f64, Outcome)>>> = grids
        .iter()
        .map(|g| {
            (0..g.len())
                .map(|a| {
                    let d = g.distribution(a);
                    let mut acc = 0.0;
                    Outcome::all()
                        .filter(|o| d.get(*o) > 0.0)
                        .map(|o| {
                            acc += d.get(o);
                            (acc, o)
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let mut wins = 0usize;
    for _ in 0..n {
        let mut st = start;
        loop {
            let p = st.thrower as usize;
            let a = pols[p].action(&st).unwrap() as usize;
            let cdf = &cdfs[p][a];
            let x: f64 = rng.random::<f64>() * cdf.last().unwrap().0;
            let o = cdf.iter().find(|(c, _)| x < *c).map_or(cdf.last().unwrap().1, |&(_, o)| o);
            match turn_transition(&st, o).unwrap() {
                Transition::Win(w) => {
                    if w == Player::A {
                        wins += 1;
                    }
                    break;
                }
                Transition::Next(nx) => st = nx,
            }
        }
    }
    wins as f64 / n as f64
}
