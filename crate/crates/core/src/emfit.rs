//! Bivariate Gaussian skill models fitted from outcome fractions by EM.
//!
//! A throw aimed at a region lands at `center + v`, `v ~ N(mu, sigma)`. The data
//! only say which outcome region the dart fell in, so `v` is censored to that
//! region. The E-step estimates the first two conditional moments of `v` per
//! outcome, either by quadrature on a square grid or by self-normalized
//! importance sampling with a uniform proposal on the region.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::board::{BoardSpec, Lattice, Outcome, Point, TargetRegion, BOARD_RADIUS};

/// Resolution of the grid used for observed log-likelihoods and fitted tables.
pub const LL_RESOLUTION: f64 = 0.5;
pub const EIGEN_FLOOR: f64 = 0.25;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmError {
    #[error("invalid fit configuration: {0}")]
    Config(String),
    #[error("fractions have {got} entries but {target} has {expected} outcomes")]
    Dimension { target: TargetRegion, got: usize, expected: usize },
    #[error("fractions must be non-negative and sum to 1")]
    NotSimplex,
    #[error("insufficient_coverage: only one outcome observed")]
    InsufficientCoverage,
    #[error("model puts no mass on outcome {0}")]
    VanishingRegion(Outcome),
    #[error("covariance is not positive definite")]
    NotPositiveDefinite,
    #[error("EM did not converge in {iterations} iterations")]
    NoConvergence { iterations: usize, trajectory: Vec<f64> },
}

/// A symmetric 2x2 matrix `[[xx, xy], [xy, yy]]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Sym2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Sym2 {
    pub fn new(xx: f64, xy: f64, yy: f64) -> Self {
        Sym2 { xx, xy, yy }
    }

    pub fn isotropic(v: f64) -> Self {
        Sym2 { xx: v, xy: 0.0, yy: v }
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    pub fn inverse(&self) -> Option<Sym2> {
        let d = self.det();
        (d > 0.0 && d.is_finite()).then(|| Sym2 {
            xx: self.yy / d,
            xy: -self.xy / d,
            yy: self.xx / d,
        })
    }

    /// Eigenvalues (larger first) and the angle of the first eigenvector,
    /// radians counterclockwise from `+x`.
    pub fn eigen(&self) -> (f64, f64, f64) {
        let m = 0.5 * (self.xx + self.yy);
        let h = (0.5 * (self.xx - self.yy)).hypot(self.xy);
        let angle = 0.5 * (2.0 * self.xy).atan2(self.xx - self.yy);
        (m + h, m - h, angle)
    }

    pub fn from_eigen(l1: f64, l2: f64, angle: f64) -> Sym2 {
        let (s, c) = angle.sin_cos();
        Sym2 {
            xx: l1 * c * c + l2 * s * s,
            xy: (l1 - l2) * c * s,
            yy: l1 * s * s + l2 * c * c,
        }
    }

    pub fn floor_eigen(&self, floor: f64) -> Sym2 {
        let (l1, l2, a) = self.eigen();
        if l2 >= floor {
            *self
        } else {
            Sym2::from_eigen(l1.max(floor), l2.max(floor), a)
        }
    }

    pub fn is_pd(&self) -> bool {
        self.xx > 0.0 && self.det() > 0.0 && self.xx.is_finite() && self.yy.is_finite() && self.xy.is_finite()
    }

    /// `R S R^T` for a counterclockwise rotation by `angle` radians.
    pub fn rotated(&self, angle: f64) -> Sym2 {
        let (l1, l2, a) = self.eigen();
        Sym2::from_eigen(l1, l2, a + angle)
    }

    pub fn as_rows(&self) -> [[f64; 2]; 2] {
        [[self.xx, self.xy], [self.xy, self.yy]]
    }

    pub fn max_abs_diff(&self, o: &Sym2) -> f64 {
        (self.xx - o.xx).abs().max((self.xy - o.xy).abs()).max((self.yy - o.yy).abs())
    }
}

impl Serialize for Sym2 {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.as_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Sym2 {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = <[[f64; 2]; 2]>::deserialize(d)?;
        if (r[0][1] - r[1][0]).abs() > 1e-9 * (r[0][1].abs() + 1.0) {
            return Err(serde::de::Error::custom("covariance matrix is not symmetric"));
        }
        Ok(Sym2 {
            xx: r[0][0],
            xy: r[0][1],
            yy: r[1][1],
        })
    }
}

/// Skill at one target region. `mu` is relative to the region center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianSkill {
    pub target: TargetRegion,
    pub mu: Point,
    pub sigma: Sym2,
}

impl GaussianSkill {
    pub fn new(target: TargetRegion, mu: Point, sigma: Sym2) -> Result<Self, EmError> {
        if !sigma.is_pd() || !mu.x.is_finite() || !mu.y.is_finite() {
            return Err(EmError::NotPositiveDefinite);
        }
        Ok(GaussianSkill { target, mu, sigma })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Unbiased,
    InferredMu,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EStep {
    ImportanceSampling { m: usize, seed: u64 },
    Grid { resolution: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub mode: Mode,
    pub estep: EStep,
    pub tol: f64,
    pub max_iter: usize,
    /// Initial isotropic variance, mm².
    pub sigma_init: f64,
    /// Squared-extrapolation steps between plain EM updates. Each accepted
    /// step never lowers the observed log-likelihood.
    #[serde(default = "default_true")]
    pub accelerate: bool,
}

fn default_true() -> bool {
    true
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            mode: Mode::Unbiased,
            estep: EStep::ImportanceSampling { m: 50_000, seed: 0 },
            tol: 1e-4,
            max_iter: 2000,
            sigma_init: 225.0,
            accelerate: true,
        }
    }
}

impl FitConfig {
    pub fn grid(mode: Mode) -> Self {
        FitConfig {
            mode,
            estep: EStep::Grid { resolution: LL_RESOLUTION },
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), EmError> {
        match self.estep {
            EStep::ImportanceSampling { m, .. } if m < 1000 => {
                return Err(EmError::Config(format!("importance sample size {m} is below 1000")))
            }
            EStep::Grid { resolution } if !(resolution > 0.0 && resolution <= 1.0) => {
                return Err(EmError::Config(format!("grid resolution {resolution} must be in (0, 1] mm")))
            }
            _ => {}
        }
        if !(self.tol > 0.0) || self.max_iter == 0 || !(self.sigma_init > 0.0) {
            return Err(EmError::Config("tol, max_iter and sigma_init must be positive".into()));
        }
        Ok(())
    }
}

/// Equally weighted support points of one outcome region, relative to the
/// target center.
#[derive(Debug, Clone)]
struct RegionSupport {
    outcome: Outcome,
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// Area represented by each point.
    cell: f64,
}

/// Conditional moments of `v` given the outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: [f64; 2],
    /// Raw second moment `E[v v^T]`.
    pub second: Sym2,
    /// Region probability under the model.
    pub prob: f64,
}

struct Density {
    mu: Point,
    inv: Sym2,
    log_norm: f64,
}

impl Density {
    fn new(model: &GaussianSkill) -> Result<Self, EmError> {
        let inv = model.sigma.inverse().ok_or(EmError::NotPositiveDefinite)?;
        let log_norm = -(2.0 * std::f64::consts::PI).ln() - 0.5 * model.sigma.det().ln();
        Ok(Density {
            mu: model.mu,
            inv,
            log_norm,
        })
    }

    #[inline]
    fn log_pdf(&self, x: f64, y: f64) -> f64 {
        let dx = x - self.mu.x;
        let dy = y - self.mu.y;
        self.log_norm - 0.5 * (self.inv.xx * dx * dx + 2.0 * self.inv.xy * dx * dy + self.inv.yy * dy * dy)
    }
}

impl RegionSupport {
    /// Log of the region probability, and the moments when the region has mass.
    fn moments(&self, d: &Density, want_moments: bool) -> (f64, Option<Moments>) {
        if self.xs.is_empty() {
            return (f64::NEG_INFINITY, None);
        }
        let mut lmax = f64::NEG_INFINITY;
        for (&x, &y) in self.xs.iter().zip(&self.ys) {
            lmax = lmax.max(d.log_pdf(x, y));
        }
        let (mut w, mut sx, mut sy, mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for (&x, &y) in self.xs.iter().zip(&self.ys) {
            let e = (d.log_pdf(x, y) - lmax).exp();
            w += e;
            if want_moments {
                sx += e * x;
                sy += e * y;
                sxx += e * x * x;
                sxy += e * x * y;
                syy += e * y * y;
            }
        }
        let log_prob = lmax + w.ln() + self.cell.ln();
        if !want_moments || !(w > 0.0) || !lmax.is_finite() {
            return (log_prob, None);
        }
        let m = Moments {
            mean: [sx / w, sy / w],
            second: Sym2::new(sxx / w, sxy / w, syy / w),
            prob: log_prob.exp(),
        };
        (log_prob, Some(m))
    }
}

/// Support points for every outcome of one target, plus the reference grid.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub target: TargetRegion,
    pub outcomes: Vec<Outcome>,
    estep: Vec<RegionSupport>,
    reference: Option<Vec<RegionSupport>>,
    pub estep_kind: EStep,
}

fn grid_support(board: &BoardSpec, lattice: &Lattice, target: TargetRegion, outcomes: &[Outcome]) -> Vec<RegionSupport> {
    let c = board.region_center(target);
    let mut slot = [usize::MAX; Outcome::COUNT];
    for (k, o) in outcomes.iter().enumerate() {
        slot[o.index()] = k;
    }
    let mut out: Vec<RegionSupport> = outcomes
        .iter()
        .map(|&o| RegionSupport {
            outcome: o,
            xs: Vec::new(),
            ys: Vec::new(),
            cell: lattice.cell_area(),
        })
        .collect();
    for (p, label) in lattice.cells() {
        let k = slot[label as usize];
        if k == usize::MAX || (label as usize == Outcome::Miss.index() && p.radius() > BOARD_RADIUS) {
            continue;
        }
        out[k].xs.push(p.x - c.x);
        out[k].ys.push(p.y - c.y);
    }
    out
}

fn is_support(board: &BoardSpec, target: TargetRegion, outcomes: &[Outcome], m: usize, seed: u64) -> Vec<RegionSupport> {
    let c = board.region_center(target);
    outcomes
        .iter()
        .map(|&o| {
            let pieces = board.pieces(o);
            let areas: Vec<f64> = pieces.iter().map(|p| p.area()).collect();
            let total: f64 = areas.iter().sum();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(o.index() as u64);
            let (mut xs, mut ys) = (Vec::with_capacity(m), Vec::with_capacity(m));
            for _ in 0..m {
                let mut u = rng.random::<f64>() * total;
                let mut piece = &pieces[pieces.len() - 1];
                for (p, a) in pieces.iter().zip(&areas) {
                    if u < *a {
                        piece = p;
                        break;
                    }
                    u -= a;
                }
                let r2 = piece.r_in * piece.r_in + rng.random::<f64>() * (piece.r_out * piece.r_out - piece.r_in * piece.r_in);
                let deg = piece.start_deg + rng.random::<f64>() * piece.width_deg;
                let p = Point::from_polar(r2.sqrt(), deg);
                xs.push(p.x - c.x);
                ys.push(p.y - c.y);
            }
            RegionSupport {
                outcome: o,
                xs,
                ys,
                cell: total / m as f64,
            }
        })
        .collect()
}

/// Shares the board lattices across fits.
#[derive(Debug, Clone)]
pub struct Fitter {
    pub board: BoardSpec,
    reference: Lattice,
}

impl Fitter {
    pub fn new(board: BoardSpec) -> Self {
        let reference = Lattice::new(&board, LL_RESOLUTION, BOARD_RADIUS);
        Fitter { board, reference }
    }

    /// Build the E-step support for `target`. Reused across players.
    pub fn prepare(&self, target: TargetRegion, estep: EStep) -> Prepared {
        let outcomes = self.board.outcome_set(target);
        let reference = grid_support(&self.board, &self.reference, target, &outcomes);
        let (estep_support, reference) = match estep {
            EStep::Grid { resolution } if resolution == LL_RESOLUTION => (reference, None),
            EStep::Grid { resolution } => {
                let lat = Lattice::new(&self.board, resolution, BOARD_RADIUS);
                (grid_support(&self.board, &lat, target, &outcomes), Some(reference))
            }
            EStep::ImportanceSampling { m, seed } => (is_support(&self.board, target, &outcomes, m, seed), Some(reference)),
        };
        Prepared {
            target,
            outcomes,
            estep: estep_support,
            reference,
            estep_kind: estep,
        }
    }

    pub fn fit(&self, fractions: &[f64], target: TargetRegion, config: &FitConfig) -> Result<FitResult, EmError> {
        config.validate()?;
        self.prepare(target, config.estep).fit(fractions, config)
    }

    pub fn observed_log_likelihood(&self, model: &GaussianSkill, fractions: &[f64]) -> Result<f64, EmError> {
        self.prepare(model.target, EStep::Grid { resolution: LL_RESOLUTION })
            .observed_log_likelihood(model, fractions)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: GaussianSkill,
    pub mode: Mode,
    /// EM updates evaluated.
    pub iterations: usize,
    pub log_likelihood: f64,
    /// Observed log-likelihood after each iteration, starting with the initial model.
    pub trajectory: Vec<f64>,
    pub outcomes: Vec<Outcome>,
    /// Model probability of each outcome on the reference grid.
    pub fitted: Vec<f64>,
    /// Mass outside the outcome set.
    pub leak: f64,
    /// `|fitted - fractions|` per outcome.
    pub abs_error: Vec<f64>,
}

impl FitResult {
    pub fn fitted_error(&self) -> f64 {
        self.abs_error.iter().sum::<f64>() / self.abs_error.len() as f64
    }

    pub fn bias_magnitude(&self) -> f64 {
        bias_magnitude(&self.model)
    }
}

/// Distance of the fitted mean from the region center, mm.
pub fn bias_magnitude(model: &GaussianSkill) -> f64 {
    model.mu.radius()
}

/// Parameter change scaled by the new covariance: mean shift in units of the
/// typical standard deviation, covariance change relative to the mean variance.
fn param_change(old: &GaussianSkill, new: &GaussianSkill) -> f64 {
    let scale = 0.5 * new.sigma.trace();
    ((new.mu.x - old.mu.x).hypot(new.mu.y - old.mu.y) / scale.sqrt()).max(new.sigma.max_abs_diff(&old.sigma) / scale)
}

fn to_params(m: &GaussianSkill) -> [f64; 5] {
    [m.mu.x, m.mu.y, m.sigma.xx, m.sigma.xy, m.sigma.yy]
}

fn from_params(target: TargetRegion, t: &[f64]) -> GaussianSkill {
    GaussianSkill {
        target,
        mu: Point::new(t[0], t[1]),
        sigma: Sym2::new(t[2], t[3], t[4]),
    }
}

fn check_fractions(fractions: &[f64], target: TargetRegion, k: usize) -> Result<(), EmError> {
    if fractions.len() != k {
        return Err(EmError::Dimension {
            target,
            got: fractions.len(),
            expected: k,
        });
    }
    let s: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !(f.is_finite() && *f >= 0.0)) || (s - 1.0).abs() > 1e-9 {
        return Err(EmError::NotSimplex);
    }
    Ok(())
}

/// `mu = sum f_k E[v|k]`, `sigma = sum f_k E[(v-mu)(v-mu)^T|k]`; `mu` is pinned
/// at zero in unbiased mode.
pub fn m_step(moments: &[Option<Moments>], fractions: &[f64], mode: Mode) -> Result<(Point, Sym2), EmError> {
    let mut mu = [0.0, 0.0];
    if mode == Mode::InferredMu {
        for (m, &f) in moments.iter().zip(fractions) {
            if let (Some(m), true) = (m, f > 0.0) {
                mu[0] += f * m.mean[0];
                mu[1] += f * m.mean[1];
            }
        }
    }
    let mut s = Sym2::default();
    for (m, &f) in moments.iter().zip(fractions) {
        if let (Some(m), true) = (m, f > 0.0) {
            s.xx += f * (m.second.xx - 2.0 * m.mean[0] * mu[0] + mu[0] * mu[0]);
            s.xy += f * (m.second.xy - m.mean[0] * mu[1] - m.mean[1] * mu[0] + mu[0] * mu[1]);
            s.yy += f * (m.second.yy - 2.0 * m.mean[1] * mu[1] + mu[1] * mu[1]);
        }
    }
    let s = s.floor_eigen(EIGEN_FLOOR);
    if !s.is_pd() {
        return Err(EmError::NotPositiveDefinite);
    }
    Ok((Point::new(mu[0], mu[1]), s))
}

impl Prepared {
    fn reference(&self) -> &[RegionSupport] {
        self.reference.as_deref().unwrap_or(&self.estep)
    }

    /// Number of support points per outcome used by the E-step.
    pub fn support_sizes(&self) -> Vec<usize> {
        self.estep.iter().map(|r| r.xs.len()).collect()
    }

    /// Conditional moments per outcome; `None` where the fraction is zero.
    pub fn e_step(&self, model: &GaussianSkill, fractions: &[f64]) -> Result<Vec<Option<Moments>>, EmError> {
        let d = Density::new(model)?;
        self.estep
            .iter()
            .zip(fractions)
            .map(|(r, &f)| {
                if f <= 0.0 {
                    return Ok(None);
                }
                match r.moments(&d, true) {
                    (_, Some(m)) => Ok(Some(m)),
                    _ => Err(EmError::VanishingRegion(r.outcome)),
                }
            })
            .collect()
    }

    /// Region probabilities on the reference grid, in outcome-set order.
    pub fn probabilities(&self, model: &GaussianSkill) -> Result<Vec<f64>, EmError> {
        let d = Density::new(model)?;
        Ok(self.reference().iter().map(|r| r.moments(&d, false).0.exp()).collect())
    }

    /// `sum_k f_k log P(k)` on the reference grid.
    pub fn observed_log_likelihood(&self, model: &GaussianSkill, fractions: &[f64]) -> Result<f64, EmError> {
        check_fractions(fractions, self.target, self.outcomes.len())?;
        let d = Density::new(model)?;
        let mut ll = 0.0;
        for (r, &f) in self.reference().iter().zip(fractions) {
            if f <= 0.0 {
                continue;
            }
            let lp = r.moments(&d, false).0;
            if lp < (1e-300f64).ln() {
                log::debug!("{} has probability below 1e-300 under {:?}", r.outcome, model);
                return Ok(f64::NEG_INFINITY);
            }
            ll += f * lp;
        }
        Ok(ll)
    }

    pub fn fit(&self, fractions: &[f64], config: &FitConfig) -> Result<FitResult, EmError> {
        config.validate()?;
        check_fractions(fractions, self.target, self.outcomes.len())?;
        if fractions.iter().filter(|&&f| f > 0.0).count() < 2 {
            return Err(EmError::InsufficientCoverage);
        }
        let mut model = GaussianSkill {
            target: self.target,
            mu: Point::ORIGIN,
            sigma: Sym2::isotropic(config.sigma_init),
        };
        let mut ll = self.observed_log_likelihood(&model, fractions)?;
        let mut trajectory = vec![ll];
        let mut evals = 0;
        while evals < config.max_iter {
            let m1 = self.em_map(&model, fractions, config.mode)?;
            evals += 1;
            if param_change(&model, &m1) < config.tol || !config.accelerate {
                let done = param_change(&model, &m1) < config.tol;
                model = m1;
                trajectory.push(self.observed_log_likelihood(&model, fractions)?);
                if done {
                    return self.finish(model, config.mode, evals, trajectory, fractions);
                }
                continue;
            }
            let m2 = self.em_map(&m1, fractions, config.mode)?;
            evals += 1;
            let ll2 = self.observed_log_likelihood(&m2, fractions)?;
            if param_change(&m1, &m2) < config.tol {
                trajectory.push(ll2);
                return self.finish(m2, config.mode, evals, trajectory, fractions);
            }
            // SQUAREM extrapolation, kept only when it beats two plain steps.
            let (t0, t1, t2) = (to_params(&model), to_params(&m1), to_params(&m2));
            let r: Vec<f64> = (0..5).map(|i| t1[i] - t0[i]).collect();
            let v: Vec<f64> = (0..5).map(|i| t2[i] - 2.0 * t1[i] + t0[i]).collect();
            let norm = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
            let alpha = (-norm(&r) / norm(&v)).min(-1.0);
            let mut next = m2;
            let mut next_ll = ll2;
            if alpha.is_finite() && alpha < -1.0 {
                let t: Vec<f64> = (0..5).map(|i| t0[i] - 2.0 * alpha * r[i] + alpha * alpha * v[i]).collect();
                let jump = from_params(self.target, &t);
                if jump.sigma.is_pd() && evals < config.max_iter {
                    if let Ok(m3) = self.em_map(&jump, fractions, config.mode) {
                        evals += 1;
                        let ll3 = self.observed_log_likelihood(&m3, fractions)?;
                        if ll3 >= next_ll {
                            next = m3;
                            next_ll = ll3;
                        }
                    }
                }
            }
            if next_ll < ll - 1e-9 && matches!(self.estep_kind, EStep::Grid { .. }) {
                log::debug!("grid EM step lowered the log-likelihood by {:e}", ll - next_ll);
            }
            model = next;
            ll = next_ll;
            trajectory.push(ll);
        }
        Err(EmError::NoConvergence {
            iterations: evals,
            trajectory,
        })
    }

    /// One plain EM update.
    pub fn em_map(&self, model: &GaussianSkill, fractions: &[f64], mode: Mode) -> Result<GaussianSkill, EmError> {
        let moments = self.e_step(model, fractions)?;
        let (mu, sigma) = m_step(&moments, fractions, mode)?;
        Ok(GaussianSkill {
            target: self.target,
            mu,
            sigma,
        })
    }

    fn finish(
        &self,
        model: GaussianSkill,
        mode: Mode,
        iterations: usize,
        trajectory: Vec<f64>,
        fractions: &[f64],
    ) -> Result<FitResult, EmError> {
        let fitted = self.probabilities(&model)?;
        let leak = (1.0 - fitted.iter().sum::<f64>()).max(0.0);
        let abs_error = fitted.iter().zip(fractions).map(|(p, f)| (p - f).abs()).collect();
        Ok(FitResult {
            model,
            mode,
            iterations,
            log_likelihood: *trajectory.last().expect("trajectory is never empty"),
            trajectory,
            outcomes: self.outcomes.clone(),
            fitted,
            leak,
            abs_error,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center: Point,
    pub semi_axes: [f64; 2],
    /// Direction of the major axis, degrees counterclockwise from `+x`.
    pub rotation_deg: f64,
}

/// The level set of `model` containing probability `level`, in board
/// coordinates.
pub fn confidence_ellipse(board: &BoardSpec, model: &GaussianSkill, level: f64) -> Ellipse {
    assert!(level > 0.0 && level < 1.0, "level must lie in (0, 1)");
    let q = -2.0 * (1.0 - level).ln();
    let (l1, l2, a) = model.sigma.eigen();
    let c = board.region_center(model.target);
    Ellipse {
        center: Point::new(c.x + model.mu.x, c.y + model.mu.y),
        semi_axes: [(q * l1).sqrt(), (q * l2.max(0.0)).sqrt()],
        rotation_deg: a.to_degrees(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn fitter() -> Fitter {
        Fitter::new(BoardSpec::default())
    }

    #[test]
    fn sym2_eigen_round_trip() {
        let s = Sym2::new(30.0, -7.0, 12.0);
        let (l1, l2, a) = s.eigen();
        assert!(l1 >= l2);
        assert!((l1 + l2 - s.trace()).abs() < 1e-12);
        assert!((l1 * l2 - s.det()).abs() < 1e-9);
        assert!(Sym2::from_eigen(l1, l2, a).max_abs_diff(&s) < 1e-12);
        let f = Sym2::new(4.0, 0.0, 0.01).floor_eigen(EIGEN_FLOOR);
        assert!((f.yy - EIGEN_FLOOR).abs() < 1e-12);
        let inv = s.inverse().unwrap();
        assert!((s.xx * inv.xx + s.xy * inv.xy - 1.0).abs() < 1e-12);
    }

    #[test]
    fn concentrated_db_model() {
        let f = fitter();
        let mut fr = vec![0.0; 22];
        fr[0] = 1.0;
        let m = GaussianSkill {
            target: TargetRegion::DOUBLE_BULL,
            mu: Point::ORIGIN,
            sigma: Sym2::isotropic(0.25),
        };
        let ll = f.observed_log_likelihood(&m, &fr).unwrap();
        assert!(ll.abs() < 0.01, "{ll}");
    }

    #[test]
    fn symmetric_region_mean_is_centroid() {
        let f = fitter();
        let p = f.prepare(TargetRegion::DOUBLE_BULL, EStep::Grid { resolution: 0.5 });
        let m = GaussianSkill {
            target: TargetRegion::DOUBLE_BULL,
            mu: Point::ORIGIN,
            sigma: Sym2::new(40.0, 0.0, 90.0),
        };
        let mut fr = vec![0.0; 22];
        fr[0] = 0.5;
        fr[1] = 0.5;
        let mo = p.e_step(&m, &fr).unwrap();
        for k in 0..2 {
            let mm = mo[k].unwrap();
            assert!(mm.mean[0].abs() < 1e-9 && mm.mean[1].abs() < 1e-9, "{:?}", mm.mean);
        }
        assert!(mo[2].is_none());
    }

    #[test]
    fn m_step_arithmetic() {
        let one = Moments {
            mean: [1.0, 2.0],
            second: Sym2::new(2.0, 2.5, 5.0),
            prob: 0.3,
        };
        let (mu, s) = m_step(&[Some(one)], &[1.0], Mode::InferredMu).unwrap();
        assert_eq!(mu, Point::new(1.0, 2.0));
        assert!(s.max_abs_diff(&Sym2::new(1.0, 0.5, 1.0)) < 1e-12);
        let (mu, _) = m_step(&[Some(one)], &[1.0], Mode::Unbiased).unwrap();
        assert_eq!(mu, Point::ORIGIN);

        let a = Moments {
            mean: [2.0, 0.0],
            second: Sym2::new(5.0, 0.0, 1.0),
            prob: 0.0,
        };
        let b = Moments {
            mean: [-1.0, 1.0],
            second: Sym2::new(2.0, -1.0, 3.0),
            prob: 0.0,
        };
        let (mu, s) = m_step(&[Some(a), Some(b)], &[0.25, 0.75], Mode::InferredMu).unwrap();
        // mu = (0.5 - 0.75, 0.75); raw second = (0.25*5 + 0.75*2, -0.75, 0.25 + 2.25)
        assert!((mu.x + 0.25).abs() < 1e-12 && (mu.y - 0.75).abs() < 1e-12);
        assert!(s.max_abs_diff(&Sym2::new(2.75 - 0.0625, -0.75 + 0.1875, 2.5 - 0.5625)) < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        let f = fitter();
        let t = TargetRegion::treble(20);
        let cfg = FitConfig::grid(Mode::Unbiased);
        assert_eq!(f.fit(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0], t, &cfg), Err(EmError::InsufficientCoverage));
        assert!(matches!(f.fit(&[0.5, 0.5], t, &cfg), Err(EmError::Dimension { .. })));
        assert_eq!(f.fit(&[0.5, 0.6, 0.0, 0.0, 0.0, 0.0], t, &cfg), Err(EmError::NotSimplex));
        let bad = FitConfig {
            estep: EStep::ImportanceSampling { m: 10, seed: 1 },
            ..cfg
        };
        assert!(matches!(f.fit(&[0.5, 0.5, 0.0, 0.0, 0.0, 0.0], t, &bad), Err(EmError::Config(_))));
        let bad = FitConfig {
            estep: EStep::Grid { resolution: 2.0 },
            ..cfg
        };
        assert!(matches!(bad.validate(), Err(EmError::Config(_))));
    }

    #[test]
    fn grid_em_is_monotone_and_mu_stays_pinned() {
        let f = fitter();
        let t = TargetRegion::treble(20);
        let fr = [0.42, 0.45, 0.03, 0.04, 0.02, 0.04];
        for accelerate in [false, true] {
            for mode in [Mode::Unbiased, Mode::InferredMu] {
                let res = f
                    .fit(
                        &fr,
                        t,
                        &FitConfig {
                            accelerate,
                            ..FitConfig::grid(mode)
                        },
                    )
                    .unwrap();
                for w in res.trajectory.windows(2) {
                    assert!(w[1] >= w[0] - 1e-9, "{} -> {}", w[0], w[1]);
                }
            }
        }
        let res = f.fit(&fr, t, &FitConfig::grid(Mode::Unbiased)).unwrap();
        assert_eq!(res.model.mu, Point::ORIGIN);
        let inferred = f.fit(&fr, t, &FitConfig::grid(Mode::InferredMu)).unwrap();
        assert!(inferred.log_likelihood >= res.log_likelihood - 1e-6);
        assert!(res.fitted.iter().all(|p| (0.0..=1.0).contains(p)));
        assert!(res.leak >= 0.0 && res.fitted_error() >= 0.0);
    }

    #[test]
    fn double_fit_probabilities_partition_the_disk() {
        let f = fitter();
        let fr = [0.35, 0.2, 0.05, 0.1, 0.05, 0.1, 0.15];
        let res = f.fit(&fr, TargetRegion::double(16), &FitConfig::grid(Mode::InferredMu)).unwrap();
        let total: f64 = res.fitted.iter().sum();
        assert!((total - 1.0).abs() < 1e-3, "{total}");
    }

    #[test]
    fn ellipse_matches_chi_square_quantile() {
        let b = BoardSpec::default();
        let m = GaussianSkill {
            target: TargetRegion::DOUBLE_BULL,
            mu: Point::ORIGIN,
            sigma: Sym2::isotropic(1.0),
        };
        let e = confidence_ellipse(&b, &m, 0.95);
        let q = ChiSquared::new(2.0).unwrap().inverse_cdf(0.95);
        assert!((e.semi_axes[0] - q.sqrt()).abs() < 1e-9 && (e.semi_axes[1] - q.sqrt()).abs() < 1e-9);
        let d = GaussianSkill {
            sigma: Sym2::new(9.0, 0.0, 4.0),
            ..m
        };
        assert_eq!(confidence_ellipse(&b, &d, 0.5).rotation_deg, 0.0);
        let area = |l: f64| {
            let e = confidence_ellipse(&b, &d, l);
            e.semi_axes[0] * e.semi_axes[1]
        };
        assert!(area(0.5) < area(0.9) && area(0.9) < area(0.99));
    }

    #[test]
    fn importance_sampling_weights_and_sizes() {
        let f = fitter();
        let t = TargetRegion::treble(19);
        let p = f.prepare(t, EStep::ImportanceSampling { m: 2000, seed: 7 });
        assert_eq!(p.support_sizes(), vec![2000; 6]);
        let q = f.prepare(t, EStep::ImportanceSampling { m: 2000, seed: 7 });
        let m = GaussianSkill {
            target: t,
            mu: Point::new(1.0, -2.0),
            sigma: Sym2::new(200.0, 30.0, 150.0),
        };
        let fr = [0.4, 0.4, 0.05, 0.05, 0.05, 0.05];
        assert_eq!(p.e_step(&m, &fr).unwrap(), q.e_step(&m, &fr).unwrap());
    }
}
