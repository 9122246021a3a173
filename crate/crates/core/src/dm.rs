//! Dirichlet-multinomial empirical Bayes across players for one target region.
//!
//! `alpha` is fitted with Minka's fixed point. With a `HyperPrior` of
//! `(a, b)` the update becomes the MAP step for the independent prior
//! `p(alpha_k) ∝ alpha_k^(a-1) exp(-b alpha_k)`; `(0, 0)` is the plain MLE.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};
use thiserror::Error;

use crate::board::TargetRegion;
use crate::dataio::{coverage, CountTable};

pub const ALPHA_FLOOR: f64 = 1e-6;
pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 10_000;
const INIT_SUM_RANGE: (f64, f64) = (0.5, 1e4);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DmError {
    #[error("alpha component {index} = {value} is not positive and finite")]
    Domain { index: usize, value: f64 },
    #[error("table for {player} at {target} has {got} outcomes, expected {expected}")]
    Dimension {
        player: String,
        target: TargetRegion,
        got: usize,
        expected: usize,
    },
    #[error("need at least 2 tables to fit, got {0}")]
    TooFewTables(usize),
    #[error("table for {0} has no throws")]
    EmptyTable(String),
    #[error("fixed point did not converge in {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        last: AlphaVector,
        residual: f64,
        iterations: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaVector {
    pub target: TargetRegion,
    pub alpha: Vec<f64>,
}

impl AlphaVector {
    pub fn new(target: TargetRegion, alpha: Vec<f64>) -> Result<Self, DmError> {
        let v = AlphaVector { target, alpha };
        v.check()?;
        Ok(v)
    }

    fn check(&self) -> Result<(), DmError> {
        match self.alpha.iter().position(|a| !(a.is_finite() && *a > 0.0)) {
            Some(index) => Err(DmError::Domain {
                index,
                value: self.alpha[index],
            }),
            None => Ok(()),
        }
    }

    pub fn sum(&self) -> f64 {
        self.alpha.iter().sum()
    }

    /// Prior mean `alpha / sum(alpha)`.
    pub fn mean(&self) -> Vec<f64> {
        let s = self.sum();
        self.alpha.iter().map(|a| a / s).collect()
    }
}

/// Gamma hyper-prior on each `alpha_k` (shape `a`, rate `b`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperPrior {
    pub a: f64,
    pub b: f64,
}

impl HyperPrior {
    pub const NONE: HyperPrior = HyperPrior { a: 0.0, b: 0.0 };
    /// The default of the widely used R `DirichletMultinomial` package.
    pub const PACKAGE_DEFAULT: HyperPrior = HyperPrior { a: 0.1, b: 0.1 };

    pub fn log_density(&self, alpha: &[f64]) -> f64 {
        alpha.iter().map(|&x| self.a * x.ln() - self.b * x).sum()
    }
}

impl Default for HyperPrior {
    fn default() -> Self {
        HyperPrior::PACKAGE_DEFAULT
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DmConfig {
    pub prior: HyperPrior,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for DmConfig {
    fn default() -> Self {
        DmConfig {
            prior: HyperPrior::default(),
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmFit {
    pub alpha: AlphaVector,
    pub iterations: usize,
    pub residual: f64,
    pub log_likelihood: f64,
    pub prior: HyperPrior,
    /// Outcomes never observed by any player; their alpha sits at the floor.
    pub floored: Vec<usize>,
    pub low_coverage: bool,
}

fn check_dims(alpha: &AlphaVector, tables: &[&CountTable]) -> Result<(), DmError> {
    for t in tables {
        if t.target != alpha.target || t.k() != alpha.alpha.len() {
            return Err(DmError::Dimension {
                player: t.player.clone(),
                target: t.target,
                got: t.k(),
                expected: alpha.alpha.len(),
            });
        }
    }
    Ok(())
}

/// Log-likelihood of the multinomial counts under the DM model, without the
/// multinomial coefficients (constant in alpha).
pub fn dm_log_likelihood(alpha: &AlphaVector, tables: &[&CountTable]) -> Result<f64, DmError> {
    alpha.check()?;
    check_dims(alpha, tables)?;
    let s = alpha.sum();
    let lg_alpha: Vec<f64> = alpha.alpha.iter().map(|&a| ln_gamma(a)).collect();
    let mut ll = 0.0;
    for t in tables {
        ll += ln_gamma(s) - ln_gamma(t.n() as f64 + s);
        for ((&x, &a), lga) in t.counts.iter().zip(&alpha.alpha).zip(&lg_alpha) {
            if x > 0 {
                ll += ln_gamma(x as f64 + a) - lga;
            }
        }
    }
    Ok(ll)
}

/// `psi(x + a) - psi(a)` for integer `x >= 0`.
fn digamma_shift(x: u64, a: f64) -> f64 {
    if x == 0 {
        0.0
    } else if x <= 16 {
        (0..x).map(|i| 1.0 / (a + i as f64)).sum()
    } else {
        digamma(x as f64 + a) - digamma(a)
    }
}

/// Moment-matched starting point from the players' raw fractions.
pub fn moment_init(target: TargetRegion, tables: &[&CountTable]) -> AlphaVector {
    let fr: Vec<Vec<f64>> = tables.iter().filter_map(|t| t.fractions()).collect();
    let k = tables.first().map_or(0, |t| t.k());
    if fr.is_empty() {
        return AlphaVector {
            target,
            alpha: vec![1.0; k],
        };
    }
    let j = fr.len() as f64;
    let mean: Vec<f64> = (0..k).map(|c| fr.iter().map(|f| f[c]).sum::<f64>() / j).collect();
    let var: f64 = (0..k).map(|c| fr.iter().map(|f| (f[c] - mean[c]).powi(2)).sum::<f64>() / j).sum();
    let spread: f64 = mean.iter().map(|m| m * (1.0 - m)).sum();
    let s = if var > 0.0 { spread / var - 1.0 } else { INIT_SUM_RANGE.1 };
    let s = s.clamp(INIT_SUM_RANGE.0, INIT_SUM_RANGE.1);
    AlphaVector {
        target,
        alpha: mean.iter().map(|m| (m * s).max(ALPHA_FLOOR)).collect(),
    }
}

fn fit_impl(tables: &[&CountTable], init: &AlphaVector, prior: HyperPrior, tol: f64, max_iter: usize) -> Result<DmFit, DmError> {
    if tables.len() < 2 {
        return Err(DmError::TooFewTables(tables.len()));
    }
    init.check()?;
    check_dims(init, tables)?;
    if let Some(t) = tables.iter().find(|t| t.n() == 0) {
        return Err(DmError::EmptyTable(t.player.clone()));
    }
    let k = init.alpha.len();
    let floored: Vec<usize> = (0..k).filter(|&c| tables.iter().all(|t| t.counts[c] == 0)).collect();

    let mut alpha = init.alpha.clone();
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        let s: f64 = alpha.iter().sum();
        let den: f64 = tables.iter().map(|t| digamma_shift(t.n(), s)).sum::<f64>() + prior.b;
        residual = 0.0;
        for (c, a) in alpha.iter_mut().enumerate() {
            let num: f64 = tables.iter().map(|t| digamma_shift(t.counts[c], *a)).sum();
            let next = ((*a * num + prior.a) / den).max(ALPHA_FLOOR);
            residual = f64::max(residual, (next - *a).abs() / *a);
            *a = next;
        }
        if residual < tol {
            let alpha = AlphaVector {
                target: init.target,
                alpha,
            };
            let log_likelihood = dm_log_likelihood(&alpha, tables)?;
            return Ok(DmFit {
                low_coverage: low_coverage(tables),
                alpha,
                iterations: it,
                residual,
                log_likelihood,
                prior,
                floored,
            });
        }
    }
    Err(DmError::NoConvergence {
        last: AlphaVector {
            target: init.target,
            alpha,
        },
        residual,
        iterations: max_iter,
    })
}

/// Maximum-likelihood alpha by Minka's fixed point.
pub fn fit_alpha_mle(tables: &[&CountTable], init: &AlphaVector, tol: f64, max_iter: usize) -> Result<DmFit, DmError> {
    fit_impl(tables, init, HyperPrior::NONE, tol, max_iter)
}

/// Posterior-mode alpha under a gamma hyper-prior.
pub fn fit_alpha_map(tables: &[&CountTable], init: &AlphaVector, prior: HyperPrior, tol: f64, max_iter: usize) -> Result<DmFit, DmError> {
    fit_impl(tables, init, prior, tol, max_iter)
}

/// Fit one region from a moment-matched start; tables with no throws are skipped.
pub fn fit_region(tables: &[&CountTable], config: &DmConfig) -> Result<DmFit, DmError> {
    let used: Vec<&CountTable> = tables.iter().copied().filter(|t| t.n() > 0).collect();
    let target = tables.first().map(|t| t.target).ok_or(DmError::TooFewTables(0))?;
    let init = moment_init(target, &used);
    fit_impl(&used, &init, config.prior, config.tol, config.max_iter)
}

/// A region is flagged when pooled data leave some outcome unseen or are thin.
pub fn low_coverage(tables: &[&CountTable]) -> bool {
    let k = tables.first().map_or(0, |t| t.k());
    let pooled: Vec<u64> = (0..k).map(|c| tables.iter().map(|t| t.counts[c]).sum()).collect();
    let n: u64 = pooled.iter().sum();
    let cov = coverage(&CountTable::new("", tables[0].target, pooled));
    cov < k || n < 100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoCounts {
    pub player: String,
    pub target: TargetRegion,
    pub values: Vec<f64>,
    pub fractions: Vec<f64>,
}

pub fn pseudo_counts(alpha: &AlphaVector, table: &CountTable) -> PseudoCounts {
    assert_eq!(alpha.alpha.len(), table.k(), "alpha and table dimensions differ");
    let values: Vec<f64> = alpha.alpha.iter().zip(&table.counts).map(|(a, &x)| a + x as f64).collect();
    let total: f64 = values.iter().sum();
    let fractions = values.iter().map(|v| v / total).collect();
    PseudoCounts {
        player: table.player.clone(),
        target: table.target,
        values,
        fractions,
    }
}

/// Weight placed on the prior mean: `S / (S + n)`.
pub fn shrinkage_weight(alpha_sum: f64, n: u64) -> f64 {
    alpha_sum / (alpha_sum + n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerPseudo {
    pub counts: Vec<u64>,
    pub fractions: Vec<f64>,
}

/// JSON persistence of one fitted region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmRegionRecord {
    pub target: TargetRegion,
    pub alpha: Vec<f64>,
    pub low_coverage: bool,
    pub players: BTreeMap<String, PlayerPseudo>,
}

impl DmRegionRecord {
    pub fn new(fit: &DmFit, tables: &[&CountTable]) -> Self {
        let players = tables
            .iter()
            .map(|t| {
                let pc = pseudo_counts(&fit.alpha, t);
                (
                    t.player.clone(),
                    PlayerPseudo {
                        counts: t.counts.clone(),
                        fractions: pc.fractions,
                    },
                )
            })
            .collect();
        DmRegionRecord {
            target: fit.alpha.target,
            alpha: fit.alpha.alpha.clone(),
            low_coverage: fit.low_coverage,
            players,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tr() -> TargetRegion {
        TargetRegion::treble(20)
    }

    fn tab(p: &str, c: &[u64]) -> CountTable {
        CountTable::new(p, tr(), c.to_vec())
    }

    #[test]
    fn hand_computed_likelihood() {
        let a = AlphaVector {
            target: tr(),
            alpha: vec![1.0, 1.0],
        };
        let t = tab("a", &[1, 0]);
        let ll = dm_log_likelihood(&a, &[&t]).unwrap();
        assert!((ll - 0.5f64.ln()).abs() < 1e-12);
        assert_eq!(dm_log_likelihood(&a, &[]).unwrap(), 0.0);
    }

    #[test]
    fn rejects_bad_alpha() {
        assert!(matches!(
            AlphaVector::new(tr(), vec![1.0, 0.0]),
            Err(DmError::Domain { index: 1, .. })
        ));
        let a = AlphaVector {
            target: tr(),
            alpha: vec![1.0, -1.0],
        };
        assert!(dm_log_likelihood(&a, &[]).is_err());
    }

    #[test]
    fn digamma_shift_matches_sum() {
        for &a in &[1e-3, 0.7, 12.0, 300.0] {
            for x in [0u64, 1, 5, 16, 17, 40] {
                let direct: f64 = (0..x).map(|i| 1.0 / (a + i as f64)).sum();
                assert!((digamma_shift(x, a) - direct).abs() < 1e-10 * direct.max(1.0), "{a} {x}");
            }
        }
    }

    #[test]
    fn mle_improves_on_init_and_is_stationary() {
        let ts = [
            tab("a", &[50, 30, 20]),
            tab("b", &[20, 40, 40]),
            tab("c", &[35, 35, 30]),
            tab("d", &[60, 10, 30]),
        ];
        let refs: Vec<&CountTable> = ts.iter().collect();
        let init = moment_init(tr(), &refs);
        let fit = fit_alpha_mle(&refs, &init, 1e-10, 100_000).unwrap();
        assert!(fit.log_likelihood >= dm_log_likelihood(&init, &refs).unwrap());
        for c in 0..3 {
            for h in [1e-4, -1e-4] {
                let mut a = fit.alpha.clone();
                a.alpha[c] *= 1.0 + h;
                assert!(dm_log_likelihood(&a, &refs).unwrap() <= fit.log_likelihood + 1e-9);
            }
        }
    }

    #[test]
    fn replicated_tables_give_same_alpha() {
        let base = [tab("a", &[50, 30, 20]), tab("b", &[20, 40, 40]), tab("c", &[10, 35, 55])];
        let once: Vec<&CountTable> = base.iter().collect();
        let many: Vec<&CountTable> = base.iter().cycle().take(base.len() * 16).collect();
        let cfg = DmConfig {
            prior: HyperPrior::NONE,
            tol: 1e-12,
            max_iter: 100_000,
        };
        let a1 = fit_region(&once, &cfg).unwrap().alpha;
        let a2 = fit_region(&many, &cfg).unwrap().alpha;
        for (x, y) in a1.alpha.iter().zip(&a2.alpha) {
            assert!((x - y).abs() / x < 1e-6, "{x} vs {y}");
        }
    }

    #[test]
    fn unseen_outcome_is_floored_and_flagged() {
        let ts = [tab("a", &[50, 30, 0]), tab("b", &[20, 40, 0]), tab("c", &[35, 33, 0])];
        let refs: Vec<&CountTable> = ts.iter().collect();
        let fit = fit_region(
            &refs,
            &DmConfig {
                prior: HyperPrior::NONE,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(fit.floored, vec![2]);
        assert!(fit.alpha.alpha[2] <= 1e-5);
        assert!(fit.low_coverage);
        assert!(fit.log_likelihood.is_finite());
    }

    #[test]
    fn input_errors() {
        let a = tab("a", &[1, 2, 3]);
        let init = AlphaVector {
            target: tr(),
            alpha: vec![1.0; 3],
        };
        assert_eq!(fit_alpha_mle(&[&a], &init, 1e-8, 10), Err(DmError::TooFewTables(1)));
        let z = tab("z", &[0, 0, 0]);
        assert!(matches!(fit_alpha_mle(&[&a, &z], &init, 1e-8, 10), Err(DmError::EmptyTable(_))));
        let b = tab("b", &[3, 2, 1]);
        let short = AlphaVector {
            target: tr(),
            alpha: vec![1.0; 2],
        };
        assert!(matches!(fit_alpha_mle(&[&a, &b], &short, 1e-8, 10), Err(DmError::Dimension { .. })));
        assert!(matches!(
            fit_alpha_mle(&[&a, &b], &init, 1e-300, 2),
            Err(DmError::NoConvergence { iterations: 2, .. })
        ));
    }

    #[test]
    fn pseudo_count_limits() {
        let a = AlphaVector {
            target: tr(),
            alpha: vec![2.0, 1.0, 1.0],
        };
        let pc = pseudo_counts(&a, &tab("a", &[0, 0, 0]));
        assert_eq!(pc.fractions, vec![0.5, 0.25, 0.25]);
        let pc = pseudo_counts(&a, &tab("a", &[600_000, 300_000, 100_000]));
        for (f, r) in pc.fractions.iter().zip([0.6, 0.3, 0.1]) {
            assert!((f - r).abs() < 1e-3);
        }
    }

    mod props {
        use super::*;
        use proptest::collection::vec;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn pseudo_fractions_are_a_convex_combination(
                alpha in vec(0.01f64..50.0, 6),
                counts in vec(0u64..2000, 6),
            ) {
                prop_assume!(counts.iter().sum::<u64>() > 0);
                let a = AlphaVector { target: TargetRegion::treble(20), alpha };
                let t = CountTable::new("p", TargetRegion::treble(20), counts);
                let pc = pseudo_counts(&a, &t);
                let lam = shrinkage_weight(a.sum(), t.n());
                let raw = t.fractions().unwrap();
                for ((f, m), r) in pc.fractions.iter().zip(a.mean()).zip(raw) {
                    prop_assert!((f - (lam * m + (1.0 - lam) * r)).abs() < 1e-12);
                }
                prop_assert!((pc.fractions.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                for (v, al) in pc.values.iter().zip(&a.alpha) { prop_assert!(v >= al); }
            }

            #[test]
            fn shrinkage_weight_decreases_in_n(s in 0.1f64..1e4, n in 0u64..100_000) {
                prop_assert!(shrinkage_weight(s, n + 1) < shrinkage_weight(s, n));
            }

            #[test]
            fn likelihood_symmetries(
                alpha in vec(0.05f64..30.0, 4),
                rows in vec(vec(0u64..100, 4), 1..5),
                rot in 0usize..4,
            ) {
                let t = TargetRegion::treble(20);
                let a = AlphaVector { target: t, alpha: alpha.clone() };
                let tabs: Vec<CountTable> = rows.iter().map(|r| CountTable::new("p", t, r.clone())).collect();
                let refs: Vec<&CountTable> = tabs.iter().collect();
                let ll = dm_log_likelihood(&a, &refs).unwrap();
                let mut rev = refs.clone();
                rev.reverse();
                prop_assert!((dm_log_likelihood(&a, &rev).unwrap() - ll).abs() < 1e-9 * ll.abs().max(1.0));
                let mut pa = alpha.clone();
                pa.rotate_left(rot);
                let ptabs: Vec<CountTable> = rows.iter().map(|r| {
                    let mut r = r.clone();
                    r.rotate_left(rot);
                    CountTable::new("p", t, r)
                }).collect();
                let prefs: Vec<&CountTable> = ptabs.iter().collect();
                let pll = dm_log_likelihood(&AlphaVector { target: t, alpha: pa }, &prefs).unwrap();
                prop_assert!((pll - ll).abs() < 1e-9 * ll.abs().max(1.0));
            }
        }
    }
}
