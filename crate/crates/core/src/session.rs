//! Grids and Nash solves for a pair of players from a model store, going
//! through the on-disk cache when one is configured.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aimprob::{build_action_grid, ActionGrid, ActionSet, AimError, AimIntegrator, GridOptions};
use crate::cache::{Cache, CacheError, GridKey, SolveKey};
use crate::store::{ModelStore, StoreError};
use crate::zsg::{solve_nash, Game, NashConfig, NashSolution, ZsgError, START_SCORE};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Aim(#[from] AimError),
    #[error(transparent)]
    Zsg(#[from] ZsgError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error("maximum score must be in 2..=501, got {0}")]
    MaxScore(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveSpec {
    pub player_a: String,
    pub player_b: String,
    pub actions: [ActionSet; 2],
    pub grid: GridOptions,
    /// Largest starting score per player; 501 is the full game.
    pub max: [u32; 2],
    pub nash: NashConfig,
}

impl SolveSpec {
    pub fn new(player_a: &str, player_b: &str, actions: [ActionSet; 2]) -> Self {
        SolveSpec {
            player_a: player_a.to_string(),
            player_b: player_b.to_string(),
            actions,
            grid: GridOptions::default(),
            max: [START_SCORE; 2],
            nash: NashConfig::default(),
        }
    }
}

pub struct Solved {
    pub grids: [ActionGrid; 2],
    pub nash: NashSolution,
    /// The solve came from the cache.
    pub cached: bool,
}

impl Solved {
    pub fn game(&self) -> Game<'_> {
        Game::truncated(&self.grids[0], &self.grids[1], self.nash.solution.max[0], self.nash.solution.max[1])
    }
}

/// Builds grids and solves, sharing one integrator.
pub struct Session<'a> {
    pub store: &'a ModelStore,
    pub integrator: AimIntegrator,
    pub cache: Option<Cache>,
    store_hash: String,
}

impl<'a> Session<'a> {
    pub fn new(store: &'a ModelStore, cache: Option<Cache>) -> Self {
        Session {
            store,
            integrator: AimIntegrator::new(store.board.clone()),
            cache,
            store_hash: store.hash(),
        }
    }

    pub fn grid(&self, player: &str, set: ActionSet, opts: &GridOptions) -> Result<(ActionGrid, bool), SessionError> {
        let build = || -> Result<ActionGrid, SessionError> {
            let models = self.store.player_models(player)?;
            Ok(build_action_grid(&self.integrator, &models, set, opts)?)
        };
        match &self.cache {
            None => Ok((build()?, false)),
            Some(c) => {
                let key = GridKey {
                    player: player.to_string(),
                    store_hash: self.store_hash.clone(),
                    set,
                    options: *opts,
                    resolution: self.integrator.resolution(),
                };
                c.grid_or(&key, build)
            }
        }
    }

    /// Cache id of a solve, available before solving.
    pub fn solve_key(&self, spec: &SolveSpec, grids: &[ActionGrid; 2]) -> SolveKey {
        SolveKey {
            player_a: spec.player_a.clone(),
            player_b: spec.player_b.clone(),
            grid_a: grids[0].hash(),
            grid_b: grids[1].hash(),
            max: spec.max,
            config: spec.nash,
        }
    }

    pub fn grids(&self, spec: &SolveSpec) -> Result<[ActionGrid; 2], SessionError> {
        for m in spec.max {
            if !(2..=START_SCORE).contains(&m) {
                return Err(SessionError::MaxScore(m));
            }
        }
        let (ga, _) = self.grid(&spec.player_a, spec.actions[0], &spec.grid)?;
        let (gb, _) = self.grid(&spec.player_b, spec.actions[1], &spec.grid)?;
        Ok([ga, gb])
    }

    /// Cached solution for already built grids, if any.
    pub fn lookup(&self, spec: &SolveSpec, grids: &[ActionGrid; 2]) -> Option<NashSolution> {
        let c = self.cache.as_ref()?;
        let game = Game::truncated(&grids[0], &grids[1], spec.max[0], spec.max[1]);
        c.load_solve(&self.solve_key(spec, grids), &game)
    }

    pub fn solve_grids(&self, spec: &SolveSpec, grids: [ActionGrid; 2]) -> Result<Solved, SessionError> {
        if let Some(nash) = self.lookup(spec, &grids) {
            return Ok(Solved { grids, nash, cached: true });
        }
        let game = Game::truncated(&grids[0], &grids[1], spec.max[0], spec.max[1]);
        let nash = solve_nash(&game, &spec.nash)?;
        if let Some(c) = &self.cache {
            c.store_solve(&self.solve_key(spec, &grids), &nash)?;
        }
        Ok(Solved {
            grids,
            nash,
            cached: false,
        })
    }

    pub fn solve(&self, spec: &SolveSpec) -> Result<Solved, SessionError> {
        let grids = self.grids(spec)?;
        self.solve_grids(spec, grids)
    }
}
