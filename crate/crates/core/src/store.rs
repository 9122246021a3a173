//! Fitted model store: DM per region, then a Gaussian fit per (player, region).

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::aimprob::{PlayerModels, RegionModel};
use crate::board::{BoardSpec, Outcome, Point, TargetRegion};
use crate::dataio::{by_target, coverage, CountTable};
use crate::dm::{fit_region, pseudo_counts, DmConfig, DmRegionRecord};
use crate::emfit::{FitConfig, Fitter, GaussianSkill, Mode, Sym2};

pub const STORE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown player {0}")]
    UnknownPlayer(String),
    #[error("store version {found} is not supported (expected {STORE_VERSION})")]
    Version { found: u32 },
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

/// Which fractions the Gaussian is fitted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FractionSource {
    Raw,
    Dm,
}

impl std::str::FromStr for FractionSource {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "raw" => Ok(FractionSource::Raw),
            "dm" => Ok(FractionSource::Dm),
            _ => Err(format!("unknown fraction source {s:?} (raw, dm)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub fit: FitConfig,
    pub source: FractionSource,
    pub dm: DmConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            fit: FitConfig::default(),
            source: FractionSource::Dm,
            dm: DmConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub config: FitConfig,
    pub source: FractionSource,
    pub iterations: usize,
    pub attempts: u64,
    pub coverage: usize,
    pub low_coverage: bool,
    pub outcomes: Vec<Outcome>,
    pub observed: Vec<f64>,
    /// Fractions the fit used (pseudo-fractions under DM).
    pub fractions: Vec<f64>,
    pub fitted: Vec<f64>,
    pub leak: f64,
    pub mean_abs_error: f64,
}

/// One fitted (player, region) model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub player: String,
    pub target: TargetRegion,
    pub mode: Mode,
    pub mu: [f64; 2],
    pub sigma: [[f64; 2]; 2],
    pub loglik: f64,
    pub meta: RecordMeta,
}

impl ModelRecord {
    pub fn skill(&self) -> GaussianSkill {
        let s = self.sigma;
        GaussianSkill {
            target: self.target,
            mu: Point::new(self.mu[0], self.mu[1]),
            sigma: Sym2::new(s[0][0], s[0][1], s[1][1]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitFailure {
    pub player: String,
    pub target: TargetRegion,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelStore {
    pub version: u32,
    pub board: BoardSpec,
    pub config: PipelineConfig,
    pub dm: Vec<DmRegionRecord>,
    pub records: Vec<ModelRecord>,
    pub failures: Vec<FitFailure>,
}

/// Run DM on every region of `tables`, then fit each (player, region).
/// Failed fits are collected, not fatal.
pub fn build_store(board: &BoardSpec, tables: &[CountTable], config: &PipelineConfig) -> ModelStore {
    let fitter = Fitter::new(board.clone());
    let mut dm = Vec::new();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (target, group) in by_target(tables) {
        let fit = match fit_region(&group, &config.dm) {
            Ok(f) => Some(f),
            Err(e) => {
                if config.source == FractionSource::Dm {
                    failures.extend(group.iter().map(|t| FitFailure {
                        player: t.player.clone(),
                        target,
                        error: format!("dm: {e}"),
                    }));
                    continue;
                }
                None
            }
        };
        let low = fit.as_ref().is_some_and(|f| f.low_coverage);
        if let Some(f) = &fit {
            dm.push(DmRegionRecord::new(f, &group));
        }
        let prepared = fitter.prepare(target, config.fit.estep);
        let outcomes = board.outcome_set(target);
        let results: Vec<_> = group
            .par_iter()
            .map(|t| {
                let observed = t.fractions().unwrap_or_else(|| vec![0.0; t.k()]);
                let fractions = match &fit {
                    Some(f) if config.source == FractionSource::Dm => pseudo_counts(&f.alpha, t).fractions,
                    _ => observed.clone(),
                };
                (t, observed, prepared.fit(&fractions, &config.fit).map(|r| (r, fractions)))
            })
            .collect();
        for (t, observed, res) in results {
            match res {
                Ok((r, fractions)) => {
                    let s = r.model.sigma.as_rows();
                    records.push(ModelRecord {
                        player: t.player.clone(),
                        target,
                        mode: r.mode,
                        mu: [r.model.mu.x, r.model.mu.y],
                        sigma: s,
                        loglik: r.log_likelihood,
                        meta: RecordMeta {
                            config: config.fit,
                            source: config.source,
                            iterations: r.iterations,
                            attempts: t.n(),
                            coverage: coverage(t),
                            low_coverage: low,
                            outcomes: outcomes.clone(),
                            observed,
                            fractions,
                            mean_abs_error: r.fitted_error(),
                            fitted: r.fitted,
                            leak: r.leak,
                        },
                    });
                }
                Err(e) => failures.push(FitFailure {
                    player: t.player.clone(),
                    target,
                    error: e.to_string(),
                }),
            }
        }
    }
    records.sort_by(|a, b| (&a.player, a.target).cmp(&(&b.player, b.target)));
    ModelStore {
        version: STORE_VERSION,
        board: board.clone(),
        config: *config,
        dm,
        records,
        failures,
    }
}

impl ModelStore {
    pub fn empty(board: BoardSpec) -> Self {
        ModelStore {
            version: STORE_VERSION,
            board,
            config: PipelineConfig::default(),
            dm: vec![],
            records: vec![],
            failures: vec![],
        }
    }

    pub fn players(&self) -> Vec<String> {
        let mut out: Vec<String> = self.records.iter().map(|r| r.player.clone()).collect();
        out.dedup();
        out
    }

    pub fn record(&self, player: &str, target: TargetRegion) -> Option<&ModelRecord> {
        self.records.iter().find(|r| r.player == player && r.target == target)
    }

    pub fn player_records<'a>(&'a self, player: &'a str) -> impl Iterator<Item = &'a ModelRecord> + 'a {
        self.records.iter().filter(move |r| r.player == player)
    }

    /// Region models for `player`; regions without a record are filled in
    /// by the substitution rule when grids are built.
    pub fn player_models(&self, player: &str) -> Result<PlayerModels, StoreError> {
        let regions: BTreeMap<TargetRegion, RegionModel> = self
            .player_records(player)
            .map(|r| {
                let m = RegionModel {
                    skill: r.skill(),
                    pseudo_fractions: Some(r.meta.fractions.clone()),
                    low_coverage: r.meta.low_coverage,
                };
                (r.target, m)
            })
            .collect();
        if regions.is_empty() {
            return Err(StoreError::UnknownPlayer(player.to_string()));
        }
        Ok(PlayerModels {
            player: player.to_string(),
            regions,
        })
    }

    /// Content hash over the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("store serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_json(&self) -> Result<String, StoreError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, StoreError> {
        let store: ModelStore = serde_json::from_str(s)?;
        if store.version != STORE_VERSION {
            return Err(StoreError::Version { found: store.version });
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<(), StoreError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, StoreError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emfit::EStep;

    fn tables() -> Vec<CountTable> {
        let t = TargetRegion::treble(20);
        vec![
            CountTable::new("a", t, vec![40, 45, 2, 3, 3, 4]),
            CountTable::new("b", t, vec![35, 50, 3, 4, 2, 5]),
            CountTable::new("c", t, vec![100, 0, 0, 0, 0, 0]),
        ]
    }

    fn config() -> PipelineConfig {
        let mut fit = FitConfig::grid(Mode::Unbiased);
        fit.estep = EStep::Grid { resolution: 1.0 };
        PipelineConfig {
            fit,
            source: FractionSource::Raw,
            dm: DmConfig::default(),
        }
    }

    #[test]
    fn failures_are_collected() {
        let store = build_store(&BoardSpec::default(), &tables(), &config());
        assert_eq!(store.players(), vec!["a".to_string(), "b".to_string()]);
        assert_eq!(store.failures.len(), 1);
        assert_eq!(store.failures[0].player, "c");
        assert!(store.failures[0].error.contains("insufficient_coverage"));
    }

    #[test]
    fn json_round_trip_and_models() {
        let store = build_store(&BoardSpec::default(), &tables(), &config());
        let back = ModelStore::from_json(&store.to_json().unwrap()).unwrap();
        assert_eq!(back, store);
        assert_eq!(back.hash(), store.hash());
        let m = back.player_models("a").unwrap();
        let r = &m.regions[&TargetRegion::treble(20)];
        assert_eq!(r.skill.mu, Point::ORIGIN);
        assert!(r.skill.sigma.is_pd());
        assert!(matches!(back.player_models("zz"), Err(StoreError::UnknownPlayer(_))));
    }

    #[test]
    fn version_is_checked() {
        let mut store = ModelStore::empty(BoardSpec::default());
        store.version = 99;
        let json = serde_json::to_string(&store).unwrap();
        assert!(matches!(ModelStore::from_json(&json), Err(StoreError::Version { found: 99 })));
    }
}
