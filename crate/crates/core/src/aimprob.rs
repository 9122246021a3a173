//! Outcome distributions for aim points and the action grids fed to the solver.
//!
//! Probabilities are integrated on a 1 mm lattice of cell centers at integer
//! coordinates. Cells cut by a wire or sector boundary carry fractional labels
//! from an 8×8 subsample (the wires sit at integer radii, so plain midpoint
//! labels would be biased). The Gaussian kernel is truncated at Mahalanobis distance²
//! `KERNEL_CUTOFF` and renormalized, so every distribution sums to one with
//! Miss absorbing whatever falls outside the scoring area.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::board::{BoardSpec, Outcome, Point, TargetRegion, BOARD_RADIUS, SECTOR_DEG};
use crate::emfit::{GaussianSkill, Sym2};

/// Mahalanobis distance² beyond which kernel weights are dropped (mass ≈ e^-30).
pub const KERNEL_CUTOFF: f64 = 60.0;
/// Probability vectors are padded to this length for the solver.
pub const STRIDE: usize = 64;

pub type Probs = [f64; STRIDE];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AimError {
    #[error("{player} has no model usable for {region}")]
    MissingModel { player: String, region: TargetRegion },
    #[error("{player} has no fitted regions")]
    NoModels { player: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeDistribution {
    pub probs: Vec<f64>,
}

impl OutcomeDistribution {
    pub fn zero() -> Self {
        OutcomeDistribution {
            probs: vec![0.0; Outcome::COUNT],
        }
    }

    pub fn get(&self, o: Outcome) -> f64 {
        self.probs[o.index()]
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn padded(&self) -> Probs {
        let mut p = [0.0; STRIDE];
        p[..Outcome::COUNT].copy_from_slice(&self.probs);
        p
    }

    pub fn from_padded(p: &Probs) -> Self {
        OutcomeDistribution {
            probs: p[..Outcome::COUNT].to_vec(),
        }
    }
}

/// Kernel weights on integer offsets, for aims on lattice points.
#[derive(Debug, Clone)]
pub struct IntKernel {
    offsets: Vec<(i32, i32)>,
    flat: Vec<isize>,
    weights: Vec<f64>,
    reach: f64,
}

/// Weighted cells around `aim`, normalized, plus the kernel's reach in mm.
fn kernel_cells(sigma: &Sym2, aim: Point, resolution: f64) -> (Vec<(i32, i32)>, Vec<f64>, f64) {
    let inv = sigma.inverse().expect("skill covariance must be positive definite");
    let rx = (KERNEL_CUTOFF * sigma.xx).sqrt();
    let ry = (KERNEL_CUTOFF * sigma.yy).sqrt();
    let (i0, i1) = (
        ((aim.x - rx) / resolution).floor() as i32,
        ((aim.x + rx) / resolution).ceil() as i32,
    );
    let (j0, j1) = (
        ((aim.y - ry) / resolution).floor() as i32,
        ((aim.y + ry) / resolution).ceil() as i32,
    );
    let mut cells = Vec::new();
    let mut weights = Vec::new();
    for j in j0..=j1 {
        let dy = j as f64 * resolution - aim.y;
        for i in i0..=i1 {
            let dx = i as f64 * resolution - aim.x;
            let q = inv.xx * dx * dx + 2.0 * inv.xy * dx * dy + inv.yy * dy * dy;
            if q <= KERNEL_CUTOFF {
                cells.push((i, j));
                weights.push((-0.5 * q).exp());
            }
        }
    }
    if cells.is_empty() {
        cells.push(((aim.x / resolution).round() as i32, (aim.y / resolution).round() as i32));
        weights.push(1.0);
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    (cells, weights, rx.max(ry) + resolution)
}

const SUB: usize = 8;

/// Square lattice of cells over `[-230, 230]²`. Entries below 64 are pure
/// labels; larger ones index `mixed` (offset by 64).
#[derive(Debug, Clone)]
struct CellMap {
    resolution: f64,
    half: i32,
    cells: Vec<u32>,
    mixed: Vec<Vec<(u8, f64)>>,
}

impl CellMap {
    fn new(board: &BoardSpec, resolution: f64) -> Self {
        let n = (BOARD_RADIUS / resolution).round() as i32;
        let h = resolution * std::f64::consts::FRAC_1_SQRT_2;
        let radii = board.radii();
        let mut cells = Vec::with_capacity(((2 * n + 1) * (2 * n + 1)) as usize);
        let mut mixed = Vec::new();
        for j in -n..=n {
            for i in -n..=n {
                let p = Point::new(i as f64 * resolution, j as f64 * resolution);
                let r = p.radius();
                let clear_rings = radii.iter().all(|&w| (r - w).abs() > h);
                let clear_sectors = r + h <= board.r_sb || r - h > board.r_double_outer || {
                    let phi = (p.compass_deg() + SECTOR_DEG / 2.0).rem_euclid(SECTOR_DEG);
                    let d = phi.min(SECTOR_DEG - phi).to_radians();
                    r > h && r * d.sin() > h
                };
                if clear_rings && clear_sectors {
                    cells.push(board.score_at(p).index() as u32);
                    continue;
                }
                let mut counts = [0u32; Outcome::COUNT];
                for a in 0..SUB {
                    for b in 0..SUB {
                        let dx = ((a as f64 + 0.5) / SUB as f64 - 0.5) * resolution;
                        let dy = ((b as f64 + 0.5) / SUB as f64 - 0.5) * resolution;
                        counts[board.score_at(Point::new(p.x + dx, p.y + dy)).index()] += 1;
                    }
                }
                let parts: Vec<(u8, f64)> = counts
                    .iter()
                    .enumerate()
                    .filter(|&(_, &c)| c > 0)
                    .map(|(l, &c)| (l as u8, c as f64 / (SUB * SUB) as f64))
                    .collect();
                if parts.len() == 1 {
                    cells.push(parts[0].0 as u32);
                } else {
                    cells.push(STRIDE as u32 + mixed.len() as u32);
                    mixed.push(parts);
                }
            }
        }
        CellMap {
            resolution,
            half: n,
            cells,
            mixed,
        }
    }

    #[inline]
    fn flat(&self, i: i32, j: i32) -> isize {
        ((j + self.half) * (2 * self.half + 1) + (i + self.half)) as isize
    }

    #[inline]
    fn on_map(&self, i: i32, j: i32) -> bool {
        i.abs() <= self.half && j.abs() <= self.half
    }

    #[inline]
    fn add(&self, p: &mut Probs, cell: u32, w: f64) {
        if (cell as usize) < STRIDE {
            p[cell as usize] += w;
        } else {
            for &(l, f) in &self.mixed[cell as usize - STRIDE] {
                p[l as usize] += w * f;
            }
        }
    }
}

/// Integrates Gaussians over the board on a square lattice.
#[derive(Debug, Clone)]
pub struct AimIntegrator {
    pub board: BoardSpec,
    map: CellMap,
}

impl AimIntegrator {
    /// The standard 1 mm integrator.
    pub fn new(board: BoardSpec) -> Self {
        Self::with_resolution(board, 1.0)
    }

    pub fn with_resolution(board: BoardSpec, resolution: f64) -> Self {
        let map = CellMap::new(&board, resolution);
        AimIntegrator { board, map }
    }

    pub fn resolution(&self) -> f64 {
        self.map.resolution
    }

    fn finish(mut p: Probs) -> Probs {
        let miss = Outcome::Miss.index();
        let rest: f64 = p[..Outcome::COUNT]
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != miss)
            .map(|(_, v)| v)
            .sum();
        p[miss] = (1.0 - rest).max(0.0);
        p
    }

    fn accumulate(&self, cells: &[(i32, i32)], weights: &[f64], di: i32, dj: i32) -> Probs {
        let mut p = [0.0; STRIDE];
        let miss = Outcome::Miss.index();
        for (&(i, j), &w) in cells.iter().zip(weights) {
            let (i, j) = (i + di, j + dj);
            if self.map.on_map(i, j) {
                self.map.add(&mut p, self.map.cells[self.map.flat(i, j) as usize], w);
            } else {
                p[miss] += w;
            }
        }
        Self::finish(p)
    }

    /// Distribution of the outcome when aiming at `aim` with zero bias.
    pub fn outcome_distribution(&self, sigma: &Sym2, aim: Point) -> OutcomeDistribution {
        let (cells, weights, _) = kernel_cells(sigma, aim, self.map.resolution);
        OutcomeDistribution::from_padded(&self.accumulate(&cells, &weights, 0, 0))
    }

    /// Distribution for a fitted skill: the dart lands around `aim + mu`.
    pub fn skill_distribution(&self, skill: &GaussianSkill, aim: Point) -> OutcomeDistribution {
        self.outcome_distribution(&skill.sigma, Point::new(aim.x + skill.mu.x, aim.y + skill.mu.y))
    }

    pub fn int_kernel(&self, sigma: &Sym2) -> IntKernel {
        let (offsets, weights, reach) = kernel_cells(sigma, Point::ORIGIN, self.map.resolution);
        let flat = offsets.iter().map(|&(i, j)| self.map.flat(i, j) - self.map.flat(0, 0)).collect();
        IntKernel {
            offsets,
            flat,
            weights,
            reach,
        }
    }

    /// Distribution for an aim at lattice point `(i, j)`.
    pub fn lattice_distribution(&self, k: &IntKernel, i: i32, j: i32) -> Probs {
        let p = Point::new(i as f64 * self.map.resolution, j as f64 * self.map.resolution);
        // The lattice square contains the 230 mm disk.
        if p.radius() + k.reach * std::f64::consts::SQRT_2 >= BOARD_RADIUS {
            return self.accumulate(&k.offsets, &k.weights, i, j);
        }
        let base = self.map.flat(i, j);
        let mut out = [0.0; STRIDE];
        for (&off, &w) in k.flat.iter().zip(&k.weights) {
            self.map.add(&mut out, self.map.cells[(base + off) as usize], w);
        }
        Self::finish(out)
    }
}

/// A fitted region model as used to build action grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionModel {
    pub skill: GaussianSkill,
    /// Pseudo-fractions over `outcome_set(region)`, when count data exist.
    pub pseudo_fractions: Option<Vec<f64>>,
    pub low_coverage: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerModels {
    pub player: String,
    pub regions: BTreeMap<TargetRegion, RegionModel>,
}

/// Which model serves an aim point, and whether it is a stand-in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelChoice {
    pub region: TargetRegion,
    pub substituted: bool,
}

impl PlayerModels {
    fn usable(&self, r: TargetRegion) -> bool {
        self.regions.get(&r).is_some_and(|m| !m.low_coverage)
    }

    /// The model used for `region`: its own when usable; a thin or missing
    /// double falls back to DB; anything else to the nearest usable center.
    pub fn model_for_region(&self, board: &BoardSpec, region: TargetRegion) -> Result<ModelChoice, AimError> {
        if self.usable(region) {
            return Ok(ModelChoice {
                region,
                substituted: false,
            });
        }
        if matches!(region.outcome(), Outcome::Double(_)) && self.usable(TargetRegion::DOUBLE_BULL) {
            return Ok(ModelChoice {
                region: TargetRegion::DOUBLE_BULL,
                substituted: true,
            });
        }
        self.nearest(board, board.region_center(region))
            .map(|r| ModelChoice {
                region: r,
                substituted: true,
            })
            .ok_or_else(|| AimError::MissingModel {
                player: self.player.clone(),
                region,
            })
    }

    fn nearest(&self, board: &BoardSpec, p: Point) -> Option<TargetRegion> {
        let mut best: Option<(f64, TargetRegion)> = None;
        for (&r, m) in &self.regions {
            if m.low_coverage {
                continue;
            }
            let d = board.region_center(r).dist(p);
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, r));
            }
        }
        best.map(|(_, r)| r)
    }

    /// Model for an arbitrary aim: the region whose bed contains it, else the
    /// nearest usable center.
    pub fn model_for_aim(&self, board: &BoardSpec, aim: Point) -> Result<ModelChoice, AimError> {
        match board.score_at(aim) {
            Outcome::Miss => self
                .nearest(board, aim)
                .map(|r| ModelChoice {
                    region: r,
                    substituted: true,
                })
                .ok_or_else(|| AimError::NoModels {
                    player: self.player.clone(),
                }),
            o => self.model_for_region(board, TargetRegion::new(o).expect("not Miss")),
        }
    }

    pub fn sigma(&self, choice: ModelChoice) -> &Sym2 {
        &self.regions[&choice.region].skill.sigma
    }
}

/// Embed pseudo-fractions over `outcome_set(region)` into the 63 labels.
pub fn single_action_distribution(board: &BoardSpec, region: TargetRegion, fractions: &[f64]) -> OutcomeDistribution {
    let set = board.outcome_set(region);
    assert_eq!(set.len(), fractions.len(), "fractions do not match the outcome set of {region}");
    let mut d = OutcomeDistribution::zero();
    for (o, f) in set.iter().zip(fractions) {
        d.probs[o.index()] += f;
    }
    d
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSet {
    Single,
    Multi,
}

impl std::str::FromStr for ActionSet {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "single" => Ok(ActionSet::Single),
            "multi" => Ok(ActionSet::Multi),
            _ => Err(format!("unknown action set {s:?} (expected single or multi)")),
        }
    }
}

impl std::fmt::Display for ActionSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ActionSet::Single => "single",
            ActionSet::Multi => "multi",
        })
    }
}

/// How single-action distributions are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingleSource {
    /// The region's pseudo-fractions; regions without data use the Gaussian.
    PseudoFractions,
    /// The zero-bias Gaussian of the region's model, aimed at the center.
    GaussianAtCenter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub aim: Point,
    /// Set for actions that aim at a region center.
    pub region: Option<TargetRegion>,
    pub model: Option<ModelChoice>,
}

/// Componentwise ranges over nested tiles of actions, for bounding the best
/// member's value against any value vector.
#[derive(Debug, Clone)]
pub struct BoundTree {
    /// Outcomes with positive probability under some member.
    pub support: Vec<usize>,
    /// Coarsest first. Children index the next level, or actions at the last.
    pub levels: Vec<Vec<BoundNode>>,
}

#[derive(Debug, Clone)]
pub struct BoundNode {
    /// Midpoint and half-width of the members' probabilities per outcome.
    pub mid: Probs,
    pub half: Probs,
    /// Ascending.
    pub children: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct ActionGrid {
    pub set: ActionSet,
    pub actions: Vec<Action>,
    pub probs: Vec<Probs>,
    pub bounds: Option<BoundTree>,
}

/// Square tile sides of the bound levels, coarsest first.
const LEVEL_MM: [f64; 4] = [128.0, 32.0, 8.0, 2.0];

impl ActionGrid {
    pub fn new(set: ActionSet, actions: Vec<Action>, probs: Vec<Probs>) -> Self {
        assert_eq!(actions.len(), probs.len());
        ActionGrid {
            set,
            actions,
            probs,
            bounds: None,
        }
    }

    /// A grid from explicit distributions, e.g. for toy games.
    pub fn from_distributions(set: ActionSet, dists: &[OutcomeDistribution]) -> Self {
        let actions = dists
            .iter()
            .map(|_| Action {
                aim: Point::ORIGIN,
                region: None,
                model: None,
            })
            .collect();
        ActionGrid::new(set, actions, dists.iter().map(|d| d.padded()).collect())
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn distribution(&self, a: usize) -> OutcomeDistribution {
        OutcomeDistribution::from_padded(&self.probs[a])
    }

    /// Outcomes with positive probability under some action.
    pub fn support(&self) -> Vec<Outcome> {
        Outcome::all().filter(|o| self.probs.iter().any(|p| p[o.index()] > 0.0)).collect()
    }

    /// Build spatial bounds (8 mm tiles in 32 mm groups) for pruned search.
    pub fn with_bounds(mut self) -> Self {
        struct Acc {
            lo: Probs,
            hi: Probs,
            children: Vec<u32>,
        }
        let acc = || Acc {
            lo: [f64::INFINITY; STRIDE],
            hi: [f64::NEG_INFINITY; STRIDE],
            children: vec![],
        };
        let merge = |n: &mut Acc, lo: &Probs, hi: &Probs| {
            for z in 0..STRIDE {
                n.lo[z] = n.lo[z].min(lo[z]);
                n.hi[z] = n.hi[z].max(hi[z]);
            }
        };
        let mut levels: Vec<Vec<BoundNode>> = Vec::new();
        let mut ranges: Vec<(Probs, Probs)> = Vec::new();
        let mut keys: Vec<(f64, f64)> = Vec::new();
        for (depth, &mm) in LEVEL_MM.iter().enumerate().rev() {
            let key = |x: f64, y: f64| ((x / mm).floor() as i64, (y / mm).floor() as i64);
            let mut nodes: BTreeMap<(i64, i64), Acc> = BTreeMap::new();
            if depth == LEVEL_MM.len() - 1 {
                for (a, (act, p)) in self.actions.iter().zip(&self.probs).enumerate() {
                    let n = nodes.entry(key(act.aim.x, act.aim.y)).or_insert_with(acc);
                    merge(n, p, p);
                    n.children.push(a as u32);
                }
            } else {
                for (c, ((lo, hi), &(x, y))) in ranges.iter().zip(&keys).enumerate() {
                    let n = nodes.entry(key(x, y)).or_insert_with(acc);
                    merge(n, lo, hi);
                    n.children.push(c as u32);
                }
            }
            // a point inside each tile, for locating it one level up
            keys = nodes
                .keys()
                .map(|&(kx, ky)| ((kx as f64 + 0.5) * mm, (ky as f64 + 0.5) * mm))
                .collect();
            ranges = nodes.values().map(|n| (n.lo, n.hi)).collect();
            levels.push(
                nodes
                    .into_values()
                    .map(|n| {
                        let mut mid = [0.0; STRIDE];
                        let mut half = [0.0; STRIDE];
                        for z in 0..STRIDE {
                            mid[z] = 0.5 * (n.lo[z] + n.hi[z]);
                            half[z] = 0.5 * (n.hi[z] - n.lo[z]);
                        }
                        BoundNode {
                            mid,
                            half,
                            children: n.children,
                        }
                    })
                    .collect(),
            );
        }
        levels.reverse();
        let support = (0..Outcome::COUNT).filter(|&z| self.probs.iter().any(|p| p[z] > 0.0)).collect();
        self.bounds = Some(BoundTree { support, levels });
        self
    }

    /// Content hash of the grid (set, aims and probabilities).
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("{}", self.set).as_bytes());
        for (a, p) in self.actions.iter().zip(&self.probs) {
            h.update(a.aim.x.to_le_bytes());
            h.update(a.aim.y.to_le_bytes());
            for v in p {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Lattice points (mm, multiples of `step`) inside the scoring area,
/// row-major from the bottom.
pub fn multi_aims(board: &BoardSpec, step: u32) -> Vec<(i32, i32)> {
    let r = board.r_double_outer;
    let step = step.max(1) as i32;
    let n = (r.floor() as i32) / step * step;
    let mut out = Vec::new();
    for j in (-n..=n).step_by(step as usize) {
        for i in (-n..=n).step_by(step as usize) {
            if ((i * i + j * j) as f64) <= r * r {
                out.push((i, j));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridOptions {
    pub source: SingleSource,
    /// Multi-action lattice spacing, whole mm.
    pub lattice_mm: u32,
}

impl Default for GridOptions {
    fn default() -> Self {
        GridOptions {
            source: SingleSource::PseudoFractions,
            lattice_mm: 1,
        }
    }
}

/// Build the single- or multi-action grid for one player.
///
/// Single: one action per region center in label order. Multi: every lattice
/// point of `multi_aims` (zero bias, covariance by `model_for_aim`), followed
/// by the 62 exact region centers so it contains every single-action aim.
pub fn build_action_grid(
    integrator: &AimIntegrator,
    models: &PlayerModels,
    set: ActionSet,
    opts: &GridOptions,
) -> Result<ActionGrid, AimError> {
    let board = &integrator.board;
    let source = opts.source;
    let centers = |src: SingleSource| -> Result<(Vec<Action>, Vec<Probs>), AimError> {
        let mut actions = Vec::with_capacity(TargetRegion::COUNT);
        let mut probs = Vec::with_capacity(TargetRegion::COUNT);
        for region in TargetRegion::all() {
            let aim = board.region_center(region);
            let choice = models.model_for_region(board, region)?;
            let pseudo = models.regions.get(&region).and_then(|m| m.pseudo_fractions.as_ref());
            let dist = match (src, pseudo) {
                (SingleSource::PseudoFractions, Some(f)) => single_action_distribution(board, region, f),
                _ => integrator.outcome_distribution(models.sigma(choice), aim),
            };
            actions.push(Action {
                aim,
                region: Some(region),
                model: Some(choice),
            });
            probs.push(dist.padded());
        }
        Ok((actions, probs))
    };
    match set {
        ActionSet::Single => {
            let (actions, probs) = centers(source)?;
            Ok(ActionGrid::new(set, actions, probs))
        }
        ActionSet::Multi => {
            let aims = multi_aims(board, opts.lattice_mm);
            let choices = aims
                .iter()
                .map(|&(i, j)| models.model_for_aim(board, Point::new(i as f64, j as f64)))
                .collect::<Result<Vec<_>, _>>()?;
            let mut kernels: HashMap<TargetRegion, IntKernel> = HashMap::new();
            for c in &choices {
                kernels.entry(c.region).or_insert_with(|| integrator.int_kernel(models.sigma(*c)));
            }
            let mut probs: Vec<Probs> = aims
                .par_iter()
                .zip(&choices)
                .map(|(&(i, j), c)| integrator.lattice_distribution(&kernels[&c.region], i, j))
                .collect();
            let mut actions: Vec<Action> = aims
                .iter()
                .zip(choices)
                .map(|(&(i, j), c)| Action {
                    aim: Point::new(i as f64, j as f64),
                    region: None,
                    model: Some(c),
                })
                .collect();
            let (ca, cp) = centers(SingleSource::GaussianAtCenter)?;
            actions.extend(ca);
            probs.extend(cp);
            Ok(ActionGrid::new(set, actions, probs).with_bounds())
        }
    }
}
