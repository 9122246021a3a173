mod common;

use std::sync::Arc;

use common::{dense_values, random_policy, rollouts, toy_grids};
use dartsolve_core::aimprob::{ActionGrid, ActionSet};
use dartsolve_core::board::{Outcome, TargetRegion};
use dartsolve_core::zsg::{
    best_response, checkout_policy, deviation_gain, evaluate, solve_nash, turn_transition, Game, GameState, NashConfig, Player, Policy,
    Transition, ZsgError,
};
use proptest::prelude::*;

const MAX: u32 = 8;

fn blank(game: &Game, p: Player) -> Policy {
    Policy::constant(p, Arc::new(game.layout(p)), 0)
}

#[test]
fn evaluation_matches_dense_chain() {
    let (ga, gb) = toy_grids();
    let game = Game::truncated(&ga, &gb, MAX, MAX);
    let mut checked = 0;
    for seed in 0..20 {
        let pa = random_policy(&blank(&game, Player::A), 3, seed);
        let pb = random_policy(&blank(&game, Player::B), 3, 100 + seed);
        // Random pairs can stall forever (both stuck on an unfinishable
        // score); those chains do not absorb and are rejected.
        let sol = match evaluate(&game, &pa, &pb) {
            Ok(s) => s,
            Err(ZsgError::DegenerateDynamics { .. }) => continue,
            Err(e) => panic!("{e}"),
        };
        checked += 1;
        let dense = dense_values([&ga, &gb], [&pa, &pb], [MAX, MAX]);
        assert!(dense.len() > 100);
        for (st, v) in &dense {
            let got = sol.value(&game, st).unwrap();
            assert!((got - v).abs() < 1e-9, "{st}: dp {got} dense {v}");
        }
    }
    assert!(checked >= 3);
}

#[test]
fn best_response_matches_dense_and_dominates() {
    let (ga, gb) = toy_grids();
    let game = Game::truncated(&ga, &gb, MAX, MAX);
    let pb = random_policy(&blank(&game, Player::B), 3, 7);
    let br = best_response(&game, Player::A, &pb, None).unwrap();
    let dense = dense_values([&ga, &gb], [&br.policies[0], &pb], [MAX, MAX]);
    for (st, v) in &dense {
        assert!((br.value(&game, st).unwrap() - v).abs() < 1e-9, "{st}");
    }
    for seed in 0..20 {
        let pa = random_policy(&blank(&game, Player::A), 3, 1000 + seed);
        let other = evaluate(&game, &pa, &pb).unwrap();
        for sa in 2..=MAX {
            for sb in 2..=MAX {
                for t in [Player::A, Player::B] {
                    let st = GameState::turn_start(sa, sb, t);
                    assert!(br.value(&game, &st).unwrap() >= other.value(&game, &st).unwrap() - 1e-12);
                }
            }
        }
    }
    // B's best response pushes A's value down.
    let brb = best_response(&game, Player::B, &br.policies[0], None).unwrap();
    let st = GameState::turn_start(MAX, MAX, Player::A);
    assert!(brb.value(&game, &st).unwrap() <= br.value(&game, &st).unwrap() + 1e-12);
}

#[test]
fn best_response_beats_checkout_policy() {
    let (ga, gb) = toy_grids();
    let game = Game::truncated(&ga, &gb, MAX, MAX);
    let (ca, _) = checkout_policy(&ga, Player::A, MAX, MAX).unwrap();
    let (cb, _) = checkout_policy(&gb, Player::B, MAX, MAX).unwrap();
    let br = best_response(&game, Player::A, &cb, None).unwrap();
    let base = evaluate(&game, &ca, &cb).unwrap();
    let st = GameState::turn_start(MAX, MAX, Player::A);
    assert!(br.value(&game, &st).unwrap() >= base.value(&game, &st).unwrap() - 1e-12);
}

#[test]
fn rollouts_agree_at_four_all() {
    use Outcome::*;
    // two-outcome actions
    let ga = common::grid(&[
        &[(Double(2), 0.4), (Miss, 0.6)],
        &[(Single(2), 0.7), (Miss, 0.3)],
        &[(Double(1), 0.5), (Single(1), 0.5)],
    ]);
    let gb = common::grid(&[
        &[(Double(2), 0.35), (Single(2), 0.65)],
        &[(Double(1), 0.55), (Miss, 0.45)],
        &[(Single(1), 0.5), (Double(1), 0.5)],
    ]);
    let game = Game::truncated(&ga, &gb, 4, 4);
    let nash = solve_nash(&game, &NashConfig::default()).unwrap();
    let sol = &nash.solution;
    let start = GameState::turn_start(4, 4, Player::A);
    let v = sol.value(&game, &start).unwrap();
    let n = 1_000_000;
    let mc = rollouts([&ga, &gb], [&sol.policies[0], &sol.policies[1]], start, n, 42);
    let se = (v * (1.0 - v) / n as f64).sqrt();
    assert!((mc - v).abs() < 3.0 * se, "dp {v} mc {mc} se {se}");
}

fn deterministic_grid() -> ActionGrid {
    let ds: Vec<_> = TargetRegion::all().map(|r| common::dist(&[(r.outcome(), 1.0)])).collect();
    ActionGrid::from_distributions(ActionSet::Single, &ds)
}

#[test]
fn deterministic_game() {
    let g = deterministic_grid();
    let game = Game::truncated(&g, &g, 200, 200);
    let nash = solve_nash(&game, &NashConfig::default()).unwrap();
    let sol = &nash.solution;
    // Everything up to 170 bar the bogey numbers finishes in one turn.
    let v = |a, b, t| sol.value(&game, &GameState::turn_start(a, b, t)).unwrap();
    assert_eq!(v(40, 32, Player::A), 1.0);
    assert_eq!(v(40, 32, Player::B), 0.0);
    assert_eq!(v(3, 2, Player::A), 1.0);
    assert_eq!(v(170, 2, Player::A), 1.0);
    assert_eq!(v(169, 2, Player::A), 0.0);
    assert_eq!(v(200, 180, Player::A), 1.0);
}

#[test]
fn symmetric_self_play() {
    let (ga, _) = toy_grids();
    let game = Game::truncated(&ga, &ga, 30, 30);
    let nash = solve_nash(&game, &NashConfig::default()).unwrap();
    assert!((nash.p_a_star() + nash.p_b_star() - 1.0).abs() < 1e-5);
    assert!(nash.rounds <= 5, "{:?}", nash.trace);
    let states: Vec<GameState> = (2..=30)
        .flat_map(|a| (2..=30).flat_map(move |b| [GameState::turn_start(a, b, Player::A), GameState::turn_start(a, b, Player::B)]))
        .collect();
    let gain = deviation_gain(&game, &nash.solution, &states).unwrap();
    assert!(gain <= 10.0 * 1e-6, "{gain}");
}

proptest! {
    #[test]
    fn transitions_never_raise_the_layer(a in 2u32..=501, b in 2u32..=501, tb in any::<bool>(), i in 1u8..=3, u in 0u32..=120, z in 0usize..63) {
        let t = if tb { Player::A } else { Player::B };
        let st = GameState { s_a: a, s_b: b, thrower: t, throws_left: i, turn_score: u };
        prop_assume!(st.validate().is_ok());
        if let Transition::Next(n) = turn_transition(&st, Outcome::from_index(z)).unwrap() {
            prop_assert!(n.s_a + n.s_b <= a + b);
            prop_assert!(n.validate().is_ok());
        }
    }
}
