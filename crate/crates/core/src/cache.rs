//! On-disk cache for action grids and Nash solutions.
//!
//! Every entry is a pair of files named by a hash of its key:
//! `<kind>-<id>.bin` holds little-endian packed numbers and `<kind>-<id>.json`
//! is the manifest (format version, the full key, array lengths, the sha256 of
//! the binary file).
//!
//! Grid binary, per action in grid order: `aim.x, aim.y`, then `STRIDE`
//! probabilities indexed by outcome label (the last is padding), all f64.
//! Region and model choice per action live in the manifest.
//!
//! Solve binary: A's start then sensitive actions, B's start then sensitive
//! actions (u32 each), then A's and B's start-like values (f64 each). The
//! manifest gives each array length.
//!
//! Entries are written to a temporary name and renamed, never modified. A
//! manifest with another version or a checksum mismatch counts as a miss.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::aimprob::{Action, ActionGrid, ActionSet, GridOptions, ModelChoice, Probs, STRIDE};
use crate::board::{Point, TargetRegion};
use crate::zsg::{Game, NashConfig, NashSolution, Player, Policy, Solution};

pub const CACHE_VERSION: u32 = 1;
pub const CACHE_ENV: &str = "DARTSOLVE_CACHE";

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("cache manifest: {0}")]
    Json(#[from] serde_json::Error),
}

fn sha_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn key_id<K: Serialize>(key: &K) -> String {
    sha_hex(&serde_json::to_vec(key).expect("key serializes"))[..32].to_string()
}

/// Identifies a grid: whose models, which store, which action set and lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridKey {
    pub player: String,
    pub store_hash: String,
    pub set: ActionSet,
    pub options: GridOptions,
    /// Integration cell size, mm.
    pub resolution: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GridManifest {
    version: u32,
    key: GridKey,
    actions: usize,
    stride: usize,
    regions: Vec<Option<TargetRegion>>,
    models: Vec<Option<ModelChoice>>,
    bin_sha256: String,
    grid_hash: String,
}

/// Identifies a Nash solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveKey {
    pub player_a: String,
    pub player_b: String,
    pub grid_a: String,
    pub grid_b: String,
    pub max: [u32; 2],
    pub config: NashConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SolveManifest {
    version: u32,
    key: SolveKey,
    rounds: usize,
    best_responses: usize,
    trace: Vec<f64>,
    /// Lengths of A start, A sensitive, B start, B sensitive, A values, B values.
    lengths: [usize; 6],
    bin_sha256: String,
}

#[derive(Debug, Clone)]
pub struct Cache {
    dir: PathBuf,
}

impl Cache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self, CacheError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Cache { dir })
    }

    /// The cache named by `DARTSOLVE_CACHE`, if set.
    pub fn from_env() -> Result<Option<Self>, CacheError> {
        match std::env::var_os(CACHE_ENV) {
            Some(d) if !d.is_empty() => Ok(Some(Cache::new(PathBuf::from(d))?)),
            _ => Ok(None),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn paths(&self, kind: &str, id: &str) -> (PathBuf, PathBuf) {
        (
            self.dir.join(format!("{kind}-{id}.bin")),
            self.dir.join(format!("{kind}-{id}.json")),
        )
    }

    fn write(&self, bin_path: &Path, bin: &[u8], man_path: &Path, manifest: &[u8]) -> Result<(), CacheError> {
        for (path, data) in [(bin_path, bin), (man_path, manifest)] {
            let tmp = path.with_extension(format!("tmp{}", std::process::id()));
            std::fs::write(&tmp, data)?;
            std::fs::rename(&tmp, path)?;
        }
        Ok(())
    }

    /// Manifest and binary for `kind/id`, or None when absent or stale.
    fn read<M: for<'de> Deserialize<'de>>(&self, kind: &str, id: &str, check: impl Fn(&M) -> (u32, String)) -> Option<(M, Vec<u8>)> {
        let (bin_path, man_path) = self.paths(kind, id);
        let manifest: M = serde_json::from_slice(&std::fs::read(man_path).ok()?).ok()?;
        let bin = std::fs::read(bin_path).ok()?;
        let (version, sha) = check(&manifest);
        if version != CACHE_VERSION || sha != sha_hex(&bin) {
            log::warn!("ignoring stale cache entry {kind}-{id}");
            return None;
        }
        Some((manifest, bin))
    }

    pub fn load_grid(&self, key: &GridKey) -> Option<ActionGrid> {
        let (m, bin) = self.read::<GridManifest>("grid", &key_id(key), |m| (m.version, m.bin_sha256.clone()))?;
        let width = 2 + m.stride;
        if m.key != *key || m.stride != STRIDE || bin.len() != m.actions * width * 8 || m.regions.len() != m.actions {
            return None;
        }
        let nums: Vec<f64> = bin.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let mut actions = Vec::with_capacity(m.actions);
        let mut probs = Vec::with_capacity(m.actions);
        for (a, row) in nums.chunks_exact(width).enumerate() {
            actions.push(Action {
                aim: Point::new(row[0], row[1]),
                region: m.regions[a],
                model: m.models[a],
            });
            let mut p: Probs = [0.0; STRIDE];
            p.copy_from_slice(&row[2..]);
            probs.push(p);
        }
        let grid = ActionGrid::new(key.set, actions, probs);
        let grid = if key.set == ActionSet::Multi { grid.with_bounds() } else { grid };
        (grid.hash() == m.grid_hash).then_some(grid)
    }

    pub fn store_grid(&self, key: &GridKey, grid: &ActionGrid) -> Result<(), CacheError> {
        let mut bin = Vec::with_capacity(grid.len() * (2 + STRIDE) * 8);
        for (a, p) in grid.actions.iter().zip(&grid.probs) {
            for x in [a.aim.x, a.aim.y].iter().chain(p.iter()) {
                bin.extend_from_slice(&x.to_le_bytes());
            }
        }
        let manifest = GridManifest {
            version: CACHE_VERSION,
            key: key.clone(),
            actions: grid.len(),
            stride: STRIDE,
            regions: grid.actions.iter().map(|a| a.region).collect(),
            models: grid.actions.iter().map(|a| a.model).collect(),
            bin_sha256: sha_hex(&bin),
            grid_hash: grid.hash(),
        };
        let (bp, mp) = self.paths("grid", &key_id(key));
        self.write(&bp, &bin, &mp, &serde_json::to_vec(&manifest)?)
    }

    /// Cached grid for `key`, else `build` it and store the result. The flag
    /// says whether it came from the cache.
    pub fn grid_or<E>(&self, key: &GridKey, build: impl FnOnce() -> Result<ActionGrid, E>) -> Result<(ActionGrid, bool), E>
    where
        E: From<CacheError>,
    {
        if let Some(g) = self.load_grid(key) {
            return Ok((g, true));
        }
        let g = build()?;
        self.store_grid(key, &g)?;
        Ok((g, false))
    }

    pub fn load_solve(&self, key: &SolveKey, game: &Game) -> Option<NashSolution> {
        let (m, bin) = self.read::<SolveManifest>("solve", &key_id(key), |m| (m.version, m.bin_sha256.clone()))?;
        if m.key != *key || game.max != key.max {
            return None;
        }
        let [sa, na, sb, nb, va, vb] = m.lengths;
        if bin.len() != (sa + na + sb + nb) * 4 + (va + vb) * 8 {
            return None;
        }
        let mut at = 0;
        let mut take_u32 = |n: usize| {
            let out: Vec<u32> = bin[at..at + 4 * n]
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            at += 4 * n;
            out
        };
        let (a_start, a_sens, b_start, b_sens) = (take_u32(sa), take_u32(na), take_u32(sb), take_u32(nb));
        let off = (sa + na + sb + nb) * 4;
        let f = |from: usize, n: usize| -> Vec<f64> {
            bin[from..from + 8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect()
        };
        let (v_a, v_b) = (f(off, va), f(off + 8 * va, vb));
        let policy = |owner: Player, start: Vec<u32>, sens: Vec<u32>| -> Option<Arc<Policy>> {
            let layout = Arc::new(game.layout(owner));
            let blank = Policy::blank(owner, layout);
            (blank.start.len() == start.len() && blank.sens.len() == sens.len()).then(|| Arc::new(Policy { start, sens, ..blank }))
        };
        let pa = policy(Player::A, a_start, a_sens)?;
        let pb = policy(Player::B, b_start, b_sens)?;
        if v_a.len() != pa.start.len() || v_b.len() != pb.start.len() {
            return None;
        }
        let solution = Solution {
            max: game.max,
            policies: [pa, pb],
            values: [v_a, v_b],
        };
        Some(NashSolution {
            solution,
            rounds: m.rounds,
            best_responses: m.best_responses,
            trace: m.trace,
        })
    }

    pub fn store_solve(&self, key: &SolveKey, sol: &NashSolution) -> Result<(), CacheError> {
        let [pa, pb] = &sol.solution.policies;
        let [va, vb] = &sol.solution.values;
        let mut bin = Vec::new();
        for arr in [&pa.start, &pa.sens, &pb.start, &pb.sens] {
            for x in arr.iter() {
                bin.extend_from_slice(&x.to_le_bytes());
            }
        }
        for arr in [va, vb] {
            for x in arr {
                bin.extend_from_slice(&x.to_le_bytes());
            }
        }
        let manifest = SolveManifest {
            version: CACHE_VERSION,
            key: key.clone(),
            rounds: sol.rounds,
            best_responses: sol.best_responses,
            trace: sol.trace.clone(),
            lengths: [pa.start.len(), pa.sens.len(), pb.start.len(), pb.sens.len(), va.len(), vb.len()],
            bin_sha256: sha_hex(&bin),
        };
        let (bp, mp) = self.paths("solve", &key_id(key));
        self.write(&bp, &bin, &mp, &serde_json::to_vec(&manifest)?)
    }

    /// Stable opaque id of a solve key, usable as a handle.
    pub fn solve_id(key: &SolveKey) -> String {
        key_id(key)
    }
}
