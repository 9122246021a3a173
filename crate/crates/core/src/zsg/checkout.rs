//! Single-player policy minimizing the expected number of turns to finish.

use std::sync::Arc;

use super::engine::{run_layer, Choose, LayerResult, OutcomeInfo, Slot};
use super::{Layout, Player, Policy, ZsgError};
use crate::aimprob::ActionGrid;

const MAX_PASSES: usize = 100;
/// Starting guess for the turn count; large enough to favour proper policies.
const T_INIT: f64 = 1e4;

/// Expected turns to finish under the checkout policy.
#[derive(Debug, Clone)]
pub struct CheckoutValues {
    pub max_own: u32,
    /// `turns[s]` for a turn starting on `s`; 0 for `s = 0`, NaN for 1.
    pub turns: Vec<f64>,
    /// Expected turns after the current one, for `(s, i, 0)` at `s * 3 + i - 1`.
    after: Vec<f64>,
}

impl CheckoutValues {
    /// Expected turns still to come (after this one) at `(s, i, 0)`.
    pub fn after_turn(&self, s: u32, i: u8) -> f64 {
        self.after[s as usize * 3 + i as usize - 1]
    }
}

/// Opponent-blind checkout policy for `owner`, replicated over opponent
/// scores up to `max_opp` so it can be used as a game policy.
pub fn checkout_policy(grid: &ActionGrid, owner: Player, max_own: u32, max_opp: u32) -> Result<(Policy, CheckoutValues), ZsgError> {
    let layout = Arc::new(Layout::new(grid, max_own, max_opp));
    let info = OutcomeInfo::new(grid);
    let n = max_own as usize + 1;
    let mut after = vec![0.0; n * 3];
    let mut turns = vec![0.0; n];
    if n > 1 {
        turns[1] = f64::NAN;
    }
    let mut policy = Policy::blank(owner, layout.clone());
    let mut res = LayerResult::default();
    let mut prev = LayerResult::default();
    for s in 2..=max_own {
        let free = |rem: u32, i: u8| after[rem as usize * 3 + i as usize - 1];
        let end = |rem: u32| 1.0 + after[rem as usize * 3 + 2];
        let mut t = T_INIT;
        let mut done = None;
        for pass in 0..MAX_PASSES {
            let prev_ref = &prev;
            let incumbent = |slot: Slot| (pass > 0).then(|| prev_ref.actions[prev_ref.index(slot)]);
            run_layer(
                grid,
                &info,
                &layout,
                s,
                0.0,
                &free,
                &end,
                &Choose::Min {
                    t,
                    incumbent: &incumbent,
                    reuse: (pass > 0).then_some(prev_ref),
                },
                &mut res,
            );
            let (c, k) = res.start(3);
            if k >= 1.0 - 1e-12 {
                if pass == 0 {
                    return Err(ZsgError::NoCheckout { score: s });
                }
            } else {
                let t_new = (1.0 + c) / (1.0 - k);
                if 2.0 * (t_new - t).abs() < res.margin || (t_new - t).abs() <= 1e-12 * t_new || (pass > 0 && res.actions == prev.actions) {
                    done = Some(t_new);
                    break;
                }
                t = t_new;
            }
            std::mem::swap(&mut prev, &mut res);
        }
        let t = done.ok_or(ZsgError::NoCheckout { score: s })?;
        for i in 1..=3u8 {
            let (c, k) = res.start(i);
            after[s as usize * 3 + i as usize - 1] = c + k * t;
        }
        turns[s as usize] = t;
        for o in 2..=max_opp {
            for i in 1..=3u8 {
                policy.start[layout.start_index(s, o, i)] = res.actions[res.index(Slot::Start(i))];
            }
            for l in 0..res.count {
                policy.sens[layout.sens_index(o, s, l)] = res.actions[l];
            }
        }
    }
    Ok((policy, CheckoutValues { max_own, turns, after }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aimprob::{ActionSet, OutcomeDistribution};
    use crate::board::{Outcome, TargetRegion};

    fn point_mass(o: Outcome) -> OutcomeDistribution {
        let mut d = OutcomeDistribution::zero();
        d.probs[o.index()] = 1.0;
        d
    }

    fn deterministic_grid() -> ActionGrid {
        let dists: Vec<_> = TargetRegion::all().map(|r| point_mass(r.outcome())).collect();
        ActionGrid::from_distributions(ActionSet::Single, &dists)
    }

    #[test]
    fn deterministic_checkout_from_32() {
        let g = deterministic_grid();
        let (pol, vals) = checkout_policy(&g, Player::A, 60, 2).unwrap();
        assert_eq!(vals.turns[32], 1.0);
        // D16 and S1-S15-D8 tie; either way the policy finishes this turn
        let mut st = crate::zsg::GameState::turn_start(32, 2, Player::A);
        let mut darts = 0;
        loop {
            let a = pol.action(&st).unwrap();
            darts += 1;
            match crate::zsg::turn_transition(&st, TargetRegion::all().nth(a as usize).unwrap().outcome()).unwrap() {
                crate::zsg::Transition::Win(p) => {
                    assert_eq!(p, Player::A);
                    break;
                }
                crate::zsg::Transition::Next(n) => {
                    assert_eq!(n.thrower, Player::A, "turn ended without a checkout");
                    st = n;
                }
            }
        }
        assert!(darts <= 3);
        // Every reachable score finishes; 2 and 50 in one dart.
        assert_eq!(vals.turns[50], 1.0);
        assert!(vals.turns[2..].iter().all(|t| t.is_finite()));
    }

    #[test]
    fn geometric_turns() {
        let mut d = OutcomeDistribution::zero();
        d.probs[Outcome::Double(1).index()] = 0.5;
        d.probs[Outcome::Miss.index()] = 0.5;
        let g = ActionGrid::from_distributions(ActionSet::Single, &[d]);
        let (_, vals) = checkout_policy(&g, Player::A, 2, 2).unwrap();
        let p_turn = 1.0 - 0.5f64.powi(3);
        assert!((vals.turns[2] - 1.0 / p_turn).abs() < 1e-12);
    }

    #[test]
    fn extra_darts_never_hurt() {
        let mut d = OutcomeDistribution::zero();
        for (o, p) in [
            (Outcome::Double(1), 0.3),
            (Outcome::Single(1), 0.3),
            (Outcome::Single(2), 0.2),
            (Outcome::Miss, 0.2),
        ] {
            d.probs[o.index()] = p;
        }
        // a sure miss lets the thrower waste a dart; without one a forced
        // throw can bust and extra darts do hurt
        let g = ActionGrid::from_distributions(ActionSet::Single, &[d, point_mass(Outcome::Miss)]);
        let (_, vals) = checkout_policy(&g, Player::A, 40, 2).unwrap();
        for s in 2..=40 {
            assert!(
                vals.after_turn(s, 3) <= vals.after_turn(s, 2) + 1e-12,
                "{s}: {} {} {} t {}",
                vals.after_turn(s, 1),
                vals.after_turn(s, 2),
                vals.after_turn(s, 3),
                vals.turns[s as usize]
            );
            assert!(vals.after_turn(s, 2) <= vals.after_turn(s, 1) + 1e-12);
        }
    }

    #[test]
    fn no_double_no_checkout() {
        let g = ActionGrid::from_distributions(ActionSet::Single, &[point_mass(Outcome::Single(1))]);
        assert_eq!(
            checkout_policy(&g, Player::A, 10, 2).unwrap_err(),
            ZsgError::NoCheckout { score: 2 }
        );
    }
}
