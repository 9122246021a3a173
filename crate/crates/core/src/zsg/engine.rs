//! Layer-by-layer dynamic programming shared by best responses, policy
//! evaluation and the checkout policy.
//!
//! Within a layer (fixed own and opponent score) every state value is affine
//! in one unknown `t`: `1 - Y` for the game (Y = opponent's turn-start value
//! at the same scores) or the expected turn count for checkout. States are
//! kept as `(c, k)` with value `c + k t`.

use std::sync::Arc;

use super::{is_sensitive, Game, Layout, Player, Policy, Solution, ZsgError};
use crate::aimprob::{ActionGrid, BoundNode, BoundTree, Probs, STRIDE};

const MAX_PASSES: usize = 60;
const VALUE_EPS: f64 = 1e-14;
/// Slack used when pruning with tile bounds; pruned actions are at least this
/// far below the best, which keeps the policy-iteration certificate usable.
const PRUNE_SLACK: f64 = 1e-7;
/// Grids smaller than this are scanned exhaustively.
const SCAN_LIMIT: usize = 512;

#[inline]
pub(crate) fn dot(p: &Probs, v: &Probs) -> f64 {
    let mut acc = [0.0f64; 8];
    for c in 0..STRIDE / 8 {
        for l in 0..8 {
            acc[l] += p[c * 8 + l] * v[c * 8 + l];
        }
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]))
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Choice {
    pub action: u32,
    /// Lower bound on best minus second best.
    pub margin: f64,
}

struct Tracker {
    best: f64,
    best_a: u32,
    second: f64,
    /// Highest bound among pruned subtrees.
    pruned: f64,
}

impl Tracker {
    fn new() -> Self {
        Tracker {
            best: f64::NEG_INFINITY,
            best_a: u32::MAX,
            second: f64::NEG_INFINITY,
            pruned: f64::NEG_INFINITY,
        }
    }

    #[inline]
    fn consider(&mut self, a: u32, val: f64) {
        if val > self.best || (val == self.best && a < self.best_a) {
            if self.best_a != u32::MAX {
                self.second = self.second.max(self.best);
            }
            self.best = val;
            self.best_a = a;
        } else {
            self.second = self.second.max(val);
        }
    }
}

/// Highest `p · v` over the grid, lowest index on ties.
pub(crate) fn best_action(grid: &ActionGrid, v: &Probs, incumbent: Option<u32>) -> Choice {
    let mut tr = Tracker::new();
    match (&grid.bounds, grid.len() > SCAN_LIMIT) {
        (Some(tree), true) => {
            if let Some(a) = incumbent {
                tr.consider(a, dot(&grid.probs[a as usize], v));
            }
            let top: Vec<u32> = (0..tree.levels[0].len() as u32).collect();
            descend(grid, tree, 0, &top, v, incumbent, &mut tr);
            Choice {
                action: tr.best_a,
                margin: tr.best - tr.second.max(tr.pruned),
            }
        }
        _ => {
            for (a, p) in grid.probs.iter().enumerate() {
                tr.consider(a as u32, dot(p, v));
            }
            Choice {
                action: tr.best_a,
                margin: tr.best - tr.second,
            }
        }
    }
}

/// Upper bound on `p · v` over a node's members. Members sum to one, so for
/// any `m`, `p · v = m + p · (v - m) <= m + Σ mid·w + half·|w|` with `w = v - m`.
#[inline]
fn node_bound(n: &BoundNode, v: &Probs) -> f64 {
    let (mut sm, mut smv) = (0.0, 0.0);
    for z in 0..STRIDE {
        sm += n.mid[z];
        smv += n.mid[z] * v[z];
    }
    let m = if sm > 0.0 { smv / sm } else { 0.0 };
    let mut acc = [0.0; 4];
    for z in (0..STRIDE).step_by(4) {
        for j in 0..4 {
            let w = v[z + j] - m;
            acc[j] += n.mid[z + j] * w + n.half[z + j] * w.abs();
        }
    }
    m + acc.iter().sum::<f64>()
}

/// Best-first search below `nodes` of `level`, skipping subtrees whose bound
/// cannot beat the current best.
fn descend(grid: &ActionGrid, tree: &BoundTree, level: usize, nodes: &[u32], v: &Probs, incumbent: Option<u32>, tr: &mut Tracker) {
    let layer = &tree.levels[level];
    let mut order: Vec<(f64, u32)> = nodes.iter().map(|&n| (node_bound(&layer[n as usize], v), n)).collect();
    order.sort_unstable_by(|x, y| y.0.total_cmp(&x.0));
    for (b, n) in order {
        if b < tr.best - PRUNE_SLACK {
            tr.pruned = tr.pruned.max(b);
            break;
        }
        let children = &layer[n as usize].children;
        if level + 1 < tree.levels.len() {
            descend(grid, tree, level + 1, children, v, incumbent, tr);
        } else {
            for &a in children {
                if Some(a) != incumbent {
                    tr.consider(a, dot(&grid.probs[a as usize], v));
                }
            }
        }
    }
}

/// A state inside the layer being solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Slot {
    /// `(s, i, 0)`
    Start(u8),
    /// Sensitive state by local index.
    Sens(usize),
}

pub(crate) enum Choose<'a> {
    Fixed(&'a dyn Fn(Slot) -> u32),
    /// Maximize `c + k t`. `reuse` is the previous pass at another `t`;
    /// its choices are kept where their margin still certifies them.
    Max {
        t: f64,
        incumbent: &'a dyn Fn(Slot) -> Option<u32>,
        reuse: Option<&'a LayerResult>,
    },
    /// Minimize `c + k t`.
    Min {
        t: f64,
        incumbent: &'a dyn Fn(Slot) -> Option<u32>,
        reuse: Option<&'a LayerResult>,
    },
}

#[derive(Debug, Default, Clone)]
pub(crate) struct LayerResult {
    /// Sensitive locals first, then `(s, 1..3, 0)`.
    pub c: Vec<f64>,
    pub k: Vec<f64>,
    pub actions: Vec<u32>,
    /// Per slot: the argmax margin and the `t` it was measured at.
    pub margins: Vec<f64>,
    pub ts: Vec<f64>,
    /// Per slot: the continuation coefficients the choice was made against.
    pub vcs: Vec<Probs>,
    pub vks: Vec<Probs>,
    /// Smallest margin valid at this pass's `t`.
    pub margin: f64,
    pub count: usize,
}

impl LayerResult {
    pub fn start(&self, i: u8) -> (f64, f64) {
        (self.c[self.count + i as usize - 1], self.k[self.count + i as usize - 1])
    }

    pub fn index(&self, slot: Slot) -> usize {
        match slot {
            Slot::Start(i) => self.count + i as usize - 1,
            Slot::Sens(l) => l,
        }
    }
}

pub(crate) struct OutcomeInfo {
    pub support: Vec<(usize, u32, bool)>,
}

impl OutcomeInfo {
    pub fn new(grid: &ActionGrid) -> Self {
        OutcomeInfo {
            support: grid
                .support()
                .into_iter()
                .map(|o| (o.index(), o.numeric_score(), o.is_double()))
                .collect(),
        }
    }
}

/// Coefficients of the next state for every outcome from `(s, i, u)`.
/// `free(rem, i')` is the known value of start-like `(rem, i', 0)` in a lower
/// layer; `end(rem)` the known value once the turn ends on `rem`.
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn next_coefficients<F: Fn(u32, u8) -> f64, E: Fn(u32) -> f64>(
    info: &OutcomeInfo,
    layout: &Layout,
    s: u32,
    i: u8,
    u: u32,
    win: f64,
    free: &F,
    end: &E,
    res: &LayerResult,
    vc: &mut Probs,
    vk: &mut Probs,
) {
    for &(z, h, dbl) in &info.support {
        let u2 = u + h;
        let (c, k) = if u2 == s && dbl {
            (win, 0.0)
        } else if u2 + 1 >= s {
            (0.0, 1.0)
        } else if i > 1 {
            if u2 == 0 {
                res.start(i - 1)
            } else if !is_sensitive(s, i - 1, u2) {
                (free(s - u2, i - 1), 0.0)
            } else {
                // Off the layout only for outcomes outside the grid's support.
                match layout.local(s, i - 1, u2) {
                    Some(l) => (res.c[l], res.k[l]),
                    None => (f64::NAN, f64::NAN),
                }
            }
        } else if u2 == 0 {
            (0.0, 1.0)
        } else {
            (end(s - u2), 0.0)
        };
        vc[z] = c;
        vk[z] = k;
    }
}

/// Solve one player's states at own score `s`, in the order i = 1, 2, 3.
pub(crate) fn run_layer<F: Fn(u32, u8) -> f64, E: Fn(u32) -> f64>(
    grid: &ActionGrid,
    info: &OutcomeInfo,
    layout: &Layout,
    s: u32,
    win: f64,
    free: &F,
    end: &E,
    choose: &Choose,
    res: &mut LayerResult,
) {
    let sens = layout.sensitive_states(s);
    let count = sens.len();
    res.count = count;
    res.c.clear();
    res.c.resize(count + 3, 0.0);
    res.k.clear();
    res.k.resize(count + 3, 0.0);
    res.actions.clear();
    res.actions.resize(count + 3, u32::MAX);
    res.margins.clear();
    res.margins.resize(count + 3, f64::INFINITY);
    res.ts.clear();
    res.ts.resize(count + 3, 0.0);
    res.vcs.resize(count + 3, [0.0; STRIDE]);
    res.vks.resize(count + 3, [0.0; STRIDE]);
    res.margin = f64::INFINITY;
    let mut vc = [0.0; STRIDE];
    let mut vk = [0.0; STRIDE];
    let mut v = [0.0; STRIDE];
    for i in 1..=3u8 {
        let slots = sens
            .iter()
            .enumerate()
            .filter(|(_, st)| st.0 == i)
            .map(|(l, st)| (Slot::Sens(l), st.1));
        for (slot, u) in slots.chain(std::iter::once((Slot::Start(i), 0))) {
            next_coefficients(info, layout, s, i, u, win, free, end, res, &mut vc, &mut vk);
            let idx = res.index(slot);
            let a = match choose {
                Choose::Fixed(f) => f(slot),
                Choose::Max { t, incumbent, reuse } | Choose::Min { t, incumbent, reuse } => {
                    let t = *t;
                    // Values move by at most |dt| since every k lies in [0, 1].
                    let same = |r: &LayerResult| {
                        info.support
                            .iter()
                            .all(|&(z, _, _)| r.vcs[idx][z].to_bits() == vc[z].to_bits() && r.vks[idx][z].to_bits() == vk[z].to_bits())
                    };
                    let kept = reuse.filter(|r| same(r)).and_then(|r| {
                        let drift = (t - r.ts[idx]).abs();
                        (r.margins[idx] > 2.0 * drift).then(|| (r.actions[idx], r.margins[idx], r.ts[idx], r.margins[idx] - drift))
                    });
                    let (a, m, at, valid) = match kept {
                        Some(k) => k,
                        None => {
                            let minimize = matches!(choose, Choose::Min { .. });
                            let mut top = 0.0f64;
                            for z in 0..STRIDE {
                                v[z] = vc[z] + vk[z] * t;
                                top = top.max(v[z]);
                            }
                            if minimize {
                                for x in v.iter_mut() {
                                    *x = top - *x;
                                }
                            }
                            let ch = best_action(grid, &v, incumbent(slot));
                            (ch.action, ch.margin, t, ch.margin)
                        }
                    };
                    res.vcs[idx] = vc;
                    res.vks[idx] = vk;
                    res.margins[idx] = m;
                    res.ts[idx] = at;
                    res.margin = res.margin.min(valid);
                    a
                }
            };
            let p = &grid.probs[a as usize];
            res.c[idx] = dot(p, &vc);
            res.k[idx] = dot(p, &vk);
            res.actions[idx] = a;
        }
    }
}

enum Side<'a> {
    Fixed(&'a Policy),
    Optimize { policy: Policy, warm: Option<&'a Policy> },
}

/// The state store for one player during a solve.
struct PlayerRun<'a> {
    grid: &'a ActionGrid,
    info: OutcomeInfo,
    layout: Arc<Layout>,
    values: Vec<f64>,
    side: Side<'a>,
}

fn check_policy(game: &Game, p: &Policy) -> Result<(), ZsgError> {
    let want = game.layout(p.owner);
    if *p.layout != want {
        return Err(ZsgError::Mismatch(format!(
            "policy for {} was built for a different grid or score range",
            p.owner
        )));
    }
    Ok(())
}

fn fixed_lookup<'a>(pol: &'a Policy, own: u32, opp: u32) -> impl Fn(Slot) -> u32 + 'a {
    move |slot| match slot {
        Slot::Start(i) => pol.start[pol.layout.start_index(own, opp, i)],
        Slot::Sens(l) => pol.sens[pol.layout.sens_index(opp, own, l)],
    }
}

fn solve(game: &Game, sides: [Side; 2], warm: Option<&Solution>) -> Result<Solution, ZsgError> {
    let mut runs: Vec<PlayerRun> = sides
        .into_iter()
        .enumerate()
        .map(|(p, side)| {
            let layout = match &side {
                Side::Fixed(pol) => pol.layout.clone(),
                Side::Optimize { policy, .. } => policy.layout.clone(),
            };
            PlayerRun {
                grid: game.grids[p],
                info: OutcomeInfo::new(game.grids[p]),
                values: vec![0.0; layout.start_len()],
                layout,
                side,
            }
        })
        .collect();
    let warm = warm.filter(|w| w.max == game.max);
    let [max_a, max_b] = game.max;
    let mut res = [LayerResult::default(), LayerResult::default()];
    let mut prev = LayerResult::default();
    for total in 4..=max_a + max_b {
        let lo = total.saturating_sub(max_b).max(2);
        let hi = max_a.min(total - 2);
        for s_a in lo..=hi {
            let s_b = total - s_a;
            if s_a == 1 || s_b == 1 {
                continue;
            }
            let own = [s_a, s_b];
            // Which player (if any) optimizes.
            let opt = runs.iter().position(|r| matches!(r.side, Side::Optimize { .. }));
            for p in 0..2 {
                if Some(p) == opt {
                    continue;
                }
                let q = 1 - p;
                let (run, other) = (&runs[p], &runs[q]);
                let (s, o) = (own[p], own[q]);
                let Side::Fixed(pol) = &run.side else { unreachable!() };
                let f = fixed_lookup(pol, s, o);
                let free = |rem: u32, i: u8| run.values[run.layout.start_index(rem, o, i)];
                let end = |rem: u32| 1.0 - other.values[other.layout.start_index(o, rem, 3)];
                let [r0, r1] = &mut res;
                let r = if p == 0 { r0 } else { r1 };
                run_layer(run.grid, &run.info, &run.layout, s, 1.0, &free, &end, &Choose::Fixed(&f), r);
            }
            let (x_idx, y_idx) = (runs[0].layout.start_index(s_a, s_b, 3), runs[1].layout.start_index(s_b, s_a, 3));
            let degenerate = || ZsgError::DegenerateDynamics { s_a, s_b };
            let (x, y) = match opt {
                None => {
                    let (cx, kx) = res[0].start(3);
                    let (cy, ky) = res[1].start(3);
                    solve2(cx, kx, cy, ky).ok_or_else(degenerate)?
                }
                Some(p) => {
                    let q = 1 - p;
                    let (s, o) = (own[p], own[q]);
                    let (cf, kf) = res[q].start(3);
                    let start_idx = if p == 0 { x_idx } else { y_idx };
                    let (run, other) = (&runs[p], &runs[q]);
                    // The state one point of opponent score lower is already solved
                    // and usually has the same choices and a close value.
                    let near = (o > 2 && o - 1 != 1).then(|| o - 1);
                    let guess_own = match (warm, near) {
                        (Some(w), _) => w.values[p][start_idx],
                        (None, Some(n)) => run.values[run.layout.start_index(s, n, 3)],
                        (None, None) => 0.5,
                    };
                    let mut y_guess = cf + kf * (1.0 - guess_own);
                    let Side::Optimize {
                        warm: warm_pol,
                        policy: partial,
                    } = &run.side
                    else {
                        unreachable!()
                    };
                    let seed = match (warm_pol, near) {
                        (Some(w), _) => Some(fixed_lookup(w, s, o)),
                        (None, Some(n)) => Some(fixed_lookup(partial, s, n)),
                        (None, None) => None,
                    };
                    let free = |rem: u32, i: u8| run.values[run.layout.start_index(rem, o, i)];
                    let end = |rem: u32| 1.0 - other.values[other.layout.start_index(o, rem, 3)];
                    let mut pass = 0;
                    let mut settled = None;
                    while pass < MAX_PASSES {
                        let first = pass == 0;
                        let prev_ref = &prev;
                        let incumbent = |slot: Slot| -> Option<u32> {
                            if !first {
                                return Some(prev_ref.actions[prev_ref.index(slot)]);
                            }
                            seed.as_ref().map(|f| f(slot)).filter(|&a| a != u32::MAX)
                        };
                        let r = &mut res[p];
                        run_layer(
                            run.grid,
                            &run.info,
                            &run.layout,
                            s,
                            1.0,
                            &free,
                            &end,
                            &Choose::Max {
                                t: 1.0 - y_guess,
                                incumbent: &incumbent,
                                reuse: (!first).then_some(prev_ref),
                            },
                            r,
                        );
                        let (co, ko) = r.start(3);
                        let (own_v, opp_v) = solve2(co, ko, cf, kf).ok_or_else(degenerate)?;
                        // Near-ties can make the argmax flicker at rounding level; a fixed
                        // point of the coupled value is as good as a repeated policy.
                        let dy = (opp_v - y_guess).abs();
                        if 2.0 * dy < r.margin || dy <= VALUE_EPS || (!first && r.actions == prev.actions) {
                            settled = Some((own_v, opp_v));
                            break;
                        }
                        std::mem::swap(&mut prev, r);
                        y_guess = opp_v;
                        pass += 1;
                    }
                    let (own_v, opp_v) = settled.ok_or(ZsgError::PolicyIteration { s_a, s_b })?;
                    if p == 0 {
                        (own_v, opp_v)
                    } else {
                        (opp_v, own_v)
                    }
                }
            };
            let start_vals = [x, y];
            for p in 0..2 {
                let q = 1 - p;
                let (s, o) = (own[p], own[q]);
                let t = 1.0 - start_vals[q];
                let r = &res[p];
                let run = &mut runs[p];
                for i in 1..=3u8 {
                    let (c, k) = r.start(i);
                    let idx = run.layout.start_index(s, o, i);
                    run.values[idx] = (c + k * t).clamp(0.0, 1.0);
                }
                if let Side::Optimize { policy, .. } = &mut run.side {
                    for i in 1..=3u8 {
                        policy.start[run.layout.start_index(s, o, i)] = r.actions[r.index(Slot::Start(i))];
                    }
                    for l in 0..r.count {
                        policy.sens[run.layout.sens_index(o, s, l)] = r.actions[l];
                    }
                }
            }
        }
    }
    let mut pols = Vec::with_capacity(2);
    let mut vals = Vec::with_capacity(2);
    for run in runs {
        vals.push(run.values);
        pols.push(match run.side {
            Side::Fixed(p) => Arc::new(p.clone()),
            Side::Optimize { policy, .. } => Arc::new(policy),
        });
    }
    let (v1, v0) = (vals.pop().unwrap(), vals.pop().unwrap());
    let (p1, p0) = (pols.pop().unwrap(), pols.pop().unwrap());
    Ok(Solution {
        max: game.max,
        policies: [p0, p1],
        values: [v0, v1],
    })
}

/// `x = cx + kx (1 - y)`, `y = cy + ky (1 - x)`.
fn solve2(cx: f64, kx: f64, cy: f64, ky: f64) -> Option<(f64, f64)> {
    let det = 1.0 - kx * ky;
    if det <= 1e-14 {
        return None;
    }
    let x = (cx + kx * (1.0 - cy - ky)) / det;
    let y = cy + ky * (1.0 - x);
    Some((x, y))
}

/// Exact best response of `optimizer` against the opponent's fixed policy.
/// `warm` (a previous solution of the same game) only speeds things up.
pub fn best_response(game: &Game, optimizer: Player, opponent: &Policy, warm: Option<&Solution>) -> Result<Solution, ZsgError> {
    if opponent.owner != optimizer.other() {
        return Err(ZsgError::Mismatch("opponent policy belongs to the optimizer".into()));
    }
    check_policy(game, opponent)?;
    let layout = Arc::new(game.layout(optimizer));
    let warm_pol = warm.map(|w| w.policies[optimizer.idx()].as_ref()).filter(|p| p.layout == layout);
    let opt = Side::Optimize {
        policy: Policy::blank(optimizer, layout),
        warm: warm_pol,
    };
    let fixed = Side::Fixed(opponent);
    let sides = match optimizer {
        Player::A => [opt, fixed],
        Player::B => [fixed, opt],
    };
    solve(game, sides, warm)
}

/// Values of a fixed policy pair.
pub fn evaluate(game: &Game, policy_a: &Policy, policy_b: &Policy) -> Result<Solution, ZsgError> {
    if policy_a.owner != Player::A || policy_b.owner != Player::B {
        return Err(ZsgError::Mismatch("policies must be (A, B)".into()));
    }
    check_policy(game, policy_a)?;
    check_policy(game, policy_b)?;
    solve(game, [Side::Fixed(policy_a), Side::Fixed(policy_b)], None)
}
