//! `dartsolve` command line: summarize data, fit models, solve matches and
//! compute aim heat-maps.
//!
//! Exit codes: 0 success, 1 usage, 2 data validation, 3 numerical failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use dartsolve_core::aimprob::{ActionSet, GridOptions};
use dartsolve_core::board::BoardSpec;
use dartsolve_core::cache::Cache;
use dartsolve_core::dataio::{load_dataset_file, summarize, DataError, SummaryStats};
use dartsolve_core::dm::DmConfig;
use dartsolve_core::emfit::{EStep, FitConfig, Mode};
use dartsolve_core::session::{Session, SessionError, SolveSpec, Solved};
use dartsolve_core::store::{build_store, FractionSource, ModelStore, PipelineConfig, StoreError};
use dartsolve_core::zsg::{heatmap, match_table, GameState, NashConfig, ZsgError, DEFAULT_MAX_ROUNDS, DEFAULT_TOL, START_SCORE};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser, Serialize)]
#[command(name = "dartsolve", version, about = "Dart skill models and optimal 501 strategies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case", tag = "command")]
pub enum Command {
    /// Success rate and expected score per player and target.
    Summarize(SummarizeArgs),
    /// Dirichlet-multinomial smoothing then a Gaussian skill fit per player and region.
    Fit(FitArgs),
    /// Nash equilibrium of a leg and match-win probabilities.
    Solve(SolveArgs),
    /// Thrower's win probability for every aim at one state.
    Heatmap(HeatmapArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct Common {
    /// Board geometry JSON (default: standard board).
    #[arg(long)]
    pub board: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct SummarizeArgs {
    /// Counts CSV with header player,target,outcome,count.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EStepKind {
    Is,
    Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeArg {
    Unbiased,
    InferredMu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceArg {
    Dm,
    Raw,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value_t = EStepKind::Grid)]
    pub estep: EStepKind,
    /// Grid E-step cell size, mm.
    #[arg(long, default_value_t = 0.5)]
    pub resolution: f64,
    /// Importance samples per outcome region.
    #[arg(long, default_value_t = 50_000)]
    pub samples: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Unbiased)]
    pub mode: ModeArg,
    /// Fit to DM pseudo-fractions or to raw fractions.
    #[arg(long, value_enum, default_value_t = SourceArg::Dm)]
    pub source: SourceArg,
}

#[derive(Debug, Args, Serialize)]
pub struct GameArgs {
    /// Model store written by `fit`.
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub player_a: String,
    #[arg(long)]
    pub player_b: String,
    /// Action set for both players, or `A,B`.
    #[arg(long, default_value = "single")]
    pub actions: String,
    /// Multi-action lattice spacing, whole mm.
    #[arg(long, default_value_t = 1)]
    pub lattice: u32,
    /// Largest starting score (both players); below 501 solves an end-game.
    #[arg(long, default_value_t = START_SCORE)]
    pub max_score: u32,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ROUNDS)]
    pub max_rounds: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args, Serialize)]
pub struct SolveArgs {
    #[command(flatten)]
    pub game: GameArgs,
    /// Match lengths, odd.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1, 3, 5, 7, 9, 11, 21, 35])]
    pub legs: Vec<u32>,
}

#[derive(Debug, Args, Serialize)]
pub struct HeatmapArgs {
    #[command(flatten)]
    pub game: GameArgs,
    /// `sA,sB,t,i,u`, e.g. `20,18,B,3,0`.
    #[arg(long)]
    pub state: String,
    /// Lattice spacing of the heat-map aims, whole mm.
    #[arg(long, default_value_t = 2)]
    pub heat_lattice: u32,
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(m: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: m.into(),
        }
    }
    fn data(m: impl std::fmt::Display) -> Self {
        CliError {
            code: EXIT_DATA,
            message: m.to_string(),
        }
    }
    fn numeric(m: impl std::fmt::Display) -> Self {
        CliError {
            code: EXIT_NUMERIC,
            message: m.to_string(),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::data(e)
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        CliError::data(e)
    }
}

impl From<ZsgError> for CliError {
    fn from(e: ZsgError) -> Self {
        match e {
            ZsgError::InvalidState(_) | ZsgError::Terminal | ZsgError::Unsolved(_) | ZsgError::EvenLegs(_) => {
                CliError::usage(e.to_string())
            }
            _ => CliError::numeric(e),
        }
    }
}

impl From<SessionError> for CliError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Store(s) => s.into(),
            SessionError::Aim(a) => CliError::data(a),
            SessionError::Zsg(z) => z.into(),
            SessionError::Cache(c) => CliError::data(c),
            SessionError::MaxScore(_) => CliError::usage(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::data(e)
    }
}

/// Parse and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let config = serde_json::to_value(&cli.command).expect("arguments serialize");
    match &cli.command {
        Command::Summarize(a) => summarize_cmd(a, &config),
        Command::Fit(a) => fit_cmd(a, &config),
        Command::Solve(a) => solve_cmd(a, &config),
        Command::Heatmap(a) => heatmap_cmd(a, &config),
    }
}

fn load_board(path: &Option<PathBuf>) -> Result<BoardSpec, CliError> {
    match path {
        None => Ok(BoardSpec::default()),
        Some(p) => {
            let s = std::fs::read_to_string(p).map_err(|e| CliError::data(format!("{}: {e}", p.display())))?;
            BoardSpec::from_json(&s).map_err(|e| CliError::data(format!("{}: {e}", p.display())))
        }
    }
}

fn existing(p: &Path) -> Result<(), CliError> {
    if p.exists() {
        Ok(())
    } else {
        Err(CliError::usage(format!("{} does not exist", p.display())))
    }
}

/// Write `<stem>.json` (with the config echo) and `<stem>.txt` into `out`.
fn emit(out: &Option<PathBuf>, stem: &str, config: &serde_json::Value, body: serde_json::Value, text: &str) -> Result<(), CliError> {
    print!("{text}");
    let Some(dir) = out else { return Ok(()) };
    std::fs::create_dir_all(dir)?;
    let mut doc = json!({ "config": config });
    if let (Some(d), serde_json::Value::Object(b)) = (doc.as_object_mut(), body) {
        d.extend(b);
    }
    std::fs::write(
        dir.join(format!("{stem}.json")),
        serde_json::to_string_pretty(&doc).expect("json") + "\n",
    )?;
    std::fs::write(dir.join(format!("{stem}.txt")), format!("# config: {config}\n{text}"))?;
    Ok(())
}

fn pct(x: Option<f64>) -> String {
    x.map_or("-".into(), |v| format!("{:.1}%", 100.0 * v))
}

pub fn summary_text(stats: &[SummaryStats]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<16} {:>6} {:>9} {:>8} {:>8} {:>8}",
        "player", "target", "attempts", "success", "expected", "coverage"
    );
    for r in stats {
        let _ = writeln!(
            s,
            "{:<16} {:>6} {:>9} {:>8} {:>8} {:>8}",
            r.player.as_deref().unwrap_or("Total"),
            r.target.to_string(),
            r.attempts,
            pct(r.success_rate),
            r.expected_score.map_or("-".into(), |v| format!("{v:.1}")),
            r.coverage
        );
    }
    s
}

fn summarize_cmd(a: &SummarizeArgs, config: &serde_json::Value) -> Result<(), CliError> {
    existing(&a.data)?;
    let board = load_board(&a.common.board)?;
    let tables = load_dataset_file(&board, &a.data)?;
    let stats = summarize(&board, &tables)?;
    emit(
        &a.common.out,
        "summary",
        config,
        json!({ "seed": a.common.seed, "rows": stats }),
        &summary_text(&stats),
    )
}

fn fit_config(a: &FitArgs) -> Result<PipelineConfig, CliError> {
    let mode = match a.mode {
        ModeArg::Unbiased => Mode::Unbiased,
        ModeArg::InferredMu => Mode::InferredMu,
    };
    let estep = match a.estep {
        EStepKind::Grid => EStep::Grid { resolution: a.resolution },
        EStepKind::Is => EStep::ImportanceSampling {
            m: a.samples,
            seed: a.common.seed,
        },
    };
    let fit = FitConfig {
        mode,
        estep,
        ..FitConfig::default()
    };
    fit.validate().map_err(|e| CliError::usage(e.to_string()))?;
    let source = match a.source {
        SourceArg::Dm => FractionSource::Dm,
        SourceArg::Raw => FractionSource::Raw,
    };
    Ok(PipelineConfig {
        fit,
        source,
        dm: DmConfig::default(),
    })
}

pub fn fit_text(store: &ModelStore) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "observed vs fitted, % per outcome ({:?} fractions)", store.config.source);
    for r in &store.records {
        let _ = writeln!(
            s,
            "{:<16} {:>4} mu=({:+.2},{:+.2}) mean|err|={:.2}pp{}",
            r.player,
            r.target.to_string(),
            r.mu[0],
            r.mu[1],
            100.0 * r.meta.mean_abs_error,
            if r.meta.low_coverage { " [low coverage]" } else { "" }
        );
        for (k, o) in r.meta.outcomes.iter().enumerate() {
            let _ = writeln!(
                s,
                "    {:>4} obs {:>5.1} fit {:>5.1}",
                o.to_string(),
                100.0 * r.meta.fractions[k],
                100.0 * r.meta.fitted[k]
            );
        }
    }
    let _ = writeln!(s, "mean |mu| by target, mm");
    for (target, d) in bias_by_target(store) {
        let _ = writeln!(s, "    {target:>4} {d:.2}");
    }
    for f in &store.failures {
        let _ = writeln!(s, "FAILED {} {}: {}", f.player, f.target, f.error);
    }
    s
}

fn bias_by_target(store: &ModelStore) -> Vec<(String, f64)> {
    let mut acc: std::collections::BTreeMap<_, (f64, usize)> = Default::default();
    for r in &store.records {
        let e = acc.entry(r.target).or_insert((0.0, 0));
        e.0 += r.mu[0].hypot(r.mu[1]);
        e.1 += 1;
    }
    acc.into_iter().map(|(t, (s, n))| (t.to_string(), s / n as f64)).collect()
}

fn fit_cmd(a: &FitArgs, config: &serde_json::Value) -> Result<(), CliError> {
    existing(&a.data)?;
    let board = load_board(&a.common.board)?;
    let cfg = fit_config(a)?;
    let tables = load_dataset_file(&board, &a.data)?;
    if tables.is_empty() {
        return Err(CliError::data(DataError::Empty));
    }
    let store = build_store(&board, &tables, &cfg);
    let out = a.common.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out)?;
    store.save(&out.join("store.json"))?;
    let body = json!({
        "seed": a.common.seed,
        "store_hash": store.hash(),
        "records": store.records,
        "bias_mm": bias_by_target(&store),
        "failures": store.failures,
    });
    emit(&Some(out), "fit_report", config, body, &fit_text(&store))?;
    if !store.failures.is_empty() {
        return Err(CliError::numeric(format!("{} (player, region) fits failed", store.failures.len())));
    }
    Ok(())
}

fn parse_actions(s: &str) -> Result<[ActionSet; 2], CliError> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let p = |x: &str| x.parse::<ActionSet>().map_err(CliError::usage);
    match parts.as_slice() {
        [one] => Ok([p(one)?; 2]),
        [a, b] => Ok([p(a)?, p(b)?]),
        _ => Err(CliError::usage(format!("--actions expects SET or SET_A,SET_B, got {s:?}"))),
    }
}

fn session_parts(g: &GameArgs) -> Result<(ModelStore, SolveSpec, Option<Cache>), CliError> {
    existing(&g.store)?;
    let store = ModelStore::load(&g.store)?;
    let mut spec = SolveSpec::new(&g.player_a, &g.player_b, parse_actions(&g.actions)?);
    if g.lattice == 0 {
        return Err(CliError::usage("--lattice must be at least 1"));
    }
    spec.grid = GridOptions {
        lattice_mm: g.lattice,
        ..GridOptions::default()
    };
    spec.max = [g.max_score; 2];
    if !(g.tol > 0.0) || g.max_rounds == 0 {
        return Err(CliError::usage("--tol and --max-rounds must be positive"));
    }
    spec.nash = NashConfig {
        tol: g.tol,
        max_rounds: g.max_rounds,
    };
    let cache = Cache::from_env().map_err(CliError::data)?;
    Ok((store, spec, cache))
}

fn solve_cmd(a: &SolveArgs, config: &serde_json::Value) -> Result<(), CliError> {
    if let Some(&n) = a.legs.iter().find(|&&n| n % 2 == 0) {
        return Err(CliError::usage(format!("number of legs must be odd, got {n}")));
    }
    let (store, spec, cache) = session_parts(&a.game)?;
    let session = Session::new(&store, cache);
    let solved = session.solve(&spec)?;
    let (pa, pb) = (solved.nash.p_a_star(), solved.nash.p_b_star());
    let rows = match_table(pa, pb, &a.legs)?;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{} ({}) vs {} ({}), scores up to {}",
        spec.player_a, spec.actions[0], spec.player_b, spec.actions[1], spec.max[0]
    );
    let _ = writeln!(s, "P(A wins leg | A starts) = {pa:.4}");
    let _ = writeln!(s, "P(A wins leg | B starts) = {pb:.4}");
    let _ = writeln!(
        s,
        "best-response rounds {} ({} solves){}",
        solved.nash.rounds,
        solved.nash.best_responses,
        if solved.cached { ", cached" } else { "" }
    );
    let _ = writeln!(s, "{:>5} {:>9} {:>9} {:>8}", "legs", "A first", "B first", "gap");
    for r in &rows {
        let _ = writeln!(
            s,
            "{:>5} {:>8.2}% {:>8.2}% {:>7.2}pp",
            r.legs,
            100.0 * r.a_first,
            100.0 * r.b_first,
            100.0 * r.gap
        );
    }
    let body = json!({
        "seed": a.game.common.seed,
        "p_a_star": pa,
        "p_b_star": pb,
        "rounds": solved.nash.rounds,
        "best_responses": solved.nash.best_responses,
        "trace": solved.nash.trace,
        "cached": solved.cached,
        "matches": rows,
    });
    emit(&a.game.common.out, "solve", config, body, &s)
}

fn heatmap_cmd(a: &HeatmapArgs, config: &serde_json::Value) -> Result<(), CliError> {
    let st: GameState = a.state.parse().map_err(|e: ZsgError| CliError::usage(e.to_string()))?;
    if st.is_terminal() {
        return Err(CliError::usage(format!("state {st} is terminal")));
    }
    if a.heat_lattice == 0 {
        return Err(CliError::usage("--heat-lattice must be at least 1"));
    }
    let (store, spec, cache) = session_parts(&a.game)?;
    let session = Session::new(&store, cache);
    let solved: Solved = session.solve(&spec)?;
    let game = solved.game();
    let thrower = match st.thrower {
        dartsolve_core::zsg::Player::A => &spec.player_a,
        dartsolve_core::zsg::Player::B => &spec.player_b,
    };
    let opts = GridOptions {
        lattice_mm: a.heat_lattice,
        ..spec.grid
    };
    let (aims, _) = session.grid(thrower, ActionSet::Multi, &opts)?;
    let hm = heatmap(&game, &solved.nash.solution, &st, &aims)?;
    let best = &aims.actions[hm.argmax];
    let mut s = String::new();
    let _ = writeln!(s, "state {st}: {} aims for {thrower}", hm.aims.len());
    let _ = writeln!(
        s,
        "best aim ({:.1}, {:.1}){} win probability {:.4}",
        hm.argmax_aim.x,
        hm.argmax_aim.y,
        best.region.map_or(String::new(), |r| format!(" [{r}]")),
        hm.argmax_value
    );
    let body = json!({ "seed": a.game.common.seed, "cached_solve": solved.cached, "heatmap": hm });
    emit(&a.game.common.out, "heatmap", config, body, &s)
}
