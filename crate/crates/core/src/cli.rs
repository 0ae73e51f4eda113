//! Command-line front end.
//!
//! Every subcommand resolves a [`RunConfig`] from flags, an optional JSON
//! config file and defaults (in that order of precedence), runs the owning
//! module inside a thread pool of the chosen size, writes its table atomically
//! and prints a one-line summary on stderr.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 budget exhausted,
//! 4 internal error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::enumeration::{
    audit_paper_bounds, paper_bound, saw_census, AuditOptions, AuditRow, EngineConfig,
    EnumerationError, DEFAULT_NODE_CAP, ENDPOINT_CONVENTION,
};
use crate::estimator::{
    compare_to_paper, find_threshold, ComparisonReport, ThresholdConfig, ThresholdFlag,
    DEFAULT_TARGET, INITIAL_TRIALS, MAX_STEPS, MAX_TRIALS_PER_PROBE,
};
use crate::lattice::{ArcMode, Dimension};
use crate::montecarlo::{estimate_theta, sweep_theta, TrialSpec};
use crate::output::{
    self, Artifact, ArtifactKind, Format, Metadata, SeriesRow, ThetaRow, ThresholdRow,
};
use crate::rng::{RNG_ALGORITHM, RNG_STREAM_VERSION};
use crate::series::{empirical_psi, psi_lower, upper_bound_series, PROBABILITY_CONVENTION};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_BUDGET: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;

pub const THREADS_ENV: &str = "PERCOLAB_THREADS";
pub const DEFAULT_TRIALS: u64 = 10_000;
pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_TOLERANCE: f64 = 0.01;
pub const DEFAULT_TRUNCATION: u64 = 200;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Budget(String),
    Internal(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Budget(_) => EXIT_BUDGET,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Budget(m) | CliError::Internal(m) => m,
        }
    }
}

impl From<output::OutputError> for CliError {
    fn from(e: output::OutputError) -> Self {
        CliError::Internal(e.to_string())
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

#[derive(Debug, Parser)]
#[command(
    name = "percolab",
    version,
    about = "Exact SAW census and Monte Carlo site percolation on the L1 ball of Z^d"
)]
pub struct Cli {
    /// Worker threads (default: all cores; PERCOLAB_THREADS overrides the default).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Exact counts n_{k+2m}(A_k) for the given radii.
    Enumerate(EnumerateArgs),
    /// Exact counts for k = 1..k_max, m = 0..m_max against the claimed bounds.
    Audit(AuditArgs),
    /// Evaluate the psi expressions on a (p, k) grid.
    Series(SeriesArgs),
    /// Estimate theta_k(p) at one probability.
    Simulate(SimulateArgs),
    /// Estimate theta_k(p) over a probability grid.
    Sweep(SweepArgs),
    /// Bisect for p*(k) with theta_k(p*) = target and compare with 1/d.
    Estimate(EstimateArgs),
    /// Merge previously written artifacts into one comparison document.
    Report(ReportArgs),
}

#[derive(Debug, Args, Clone, Default)]
struct OutputArgs {
    /// JSON config file (flat key/value; flags take precedence).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format: csv | json [default: csv]
    #[arg(long)]
    format: Option<Format>,
}

#[derive(Debug, Args, Clone, Default)]
struct CountArgs {
    /// Confine walks to the ball ||v|| <= r.
    #[arg(long)]
    ball_radius: Option<u64>,
    /// Arc reading: face (v >= 0) | sphere [default: face]
    #[arg(long)]
    arc: Option<ArcMode>,
    /// DFS node-expansion cap per walk length [default: 1000000000]
    #[arg(long)]
    node_cap: Option<u64>,
}

#[derive(Debug, Args)]
struct EnumerateArgs {
    #[arg(long)]
    d: Option<usize>,
    /// Arc radii (comma separated).
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<u64>>,
    #[arg(long)]
    m_max: Option<u64>,
    #[command(flatten)]
    count: CountArgs,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Debug, Args)]
struct AuditArgs {
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    k_max: Option<u64>,
    #[arg(long)]
    m_max: Option<u64>,
    /// Recorded in the output; the audit itself is deterministic [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    count: CountArgs,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Debug, Args)]
struct SeriesArgs {
    #[arg(long)]
    d: Option<usize>,
    /// Arc radii (comma separated).
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<u64>>,
    #[arg(long)]
    p: Option<f64>,
    /// Probability grid (comma separated); overrides --p.
    #[arg(long, value_delimiter = ',')]
    p_grid: Option<Vec<f64>>,
    /// Terms I of the bounding series [default: 200]
    #[arg(long)]
    truncation: Option<u64>,
    /// Also emit the series from exact counts up to i = m_max.
    #[arg(long)]
    m_max: Option<u64>,
    #[command(flatten)]
    count: CountArgs,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Debug, Args, Clone, Default)]
struct TrialArgs {
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    k: Option<u64>,
    /// Trials per estimate [default: 10000]
    #[arg(long)]
    trials: Option<u64>,
    /// [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Condition on an open origin [default: true]
    #[arg(long)]
    condition_origin_open: Option<bool>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    trial: TrialArgs,
    #[arg(long)]
    p: Option<f64>,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    trial: TrialArgs,
    /// Probability grid (comma separated).
    #[arg(long, value_delimiter = ',')]
    p_grid: Option<Vec<f64>>,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[arg(long)]
    d: Option<usize>,
    /// Arc radii (comma separated).
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<u64>>,
    /// Level of theta defining p* [default: 0.5]
    #[arg(long)]
    target: Option<f64>,
    /// Final bracket width [default: 0.01]
    #[arg(long)]
    tolerance: Option<f64>,
    /// [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Maximum trials per probe [default: 64000]
    #[arg(long)]
    trial_budget: Option<u64>,
    /// Bisection step limit [default: 60]
    #[arg(long)]
    max_steps: Option<u32>,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Artifacts written by other subcommands.
    inputs: Vec<PathBuf>,
    #[command(flatten)]
    out: OutputArgs,
}

/// Accepts either a single number or a list in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    fn into_vec(self) -> Vec<T> {
        match self {
            OneOrMany::One(x) => vec![x],
            OneOrMany::Many(v) => v,
        }
    }
}

/// Fully resolved run parameters, echoed into every output.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subcommand: Option<String>,
    pub d: Option<usize>,
    pub k: Option<OneOrMany<u64>>,
    pub k_max: Option<u64>,
    pub m_max: Option<u64>,
    pub p: Option<f64>,
    pub p_grid: Option<Vec<f64>>,
    pub trials: Option<u64>,
    pub seed: Option<u64>,
    pub tolerance: Option<f64>,
    pub target: Option<f64>,
    pub trial_budget: Option<u64>,
    pub max_steps: Option<u32>,
    pub node_cap: Option<u64>,
    pub ball_radius: Option<u64>,
    pub arc: Option<ArcMode>,
    pub truncation: Option<u64>,
    pub condition_origin_open: Option<bool>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub threads: Option<usize>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident; $($f:ident),* $(,)?) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f.clone(); } )*
    };
}

impl RunConfig {
    /// Fields set in `top` replace those in `self`.
    fn overlay(mut self, top: &RunConfig) -> RunConfig {
        overlay!(self, top; subcommand, d, k, k_max, m_max, p, p_grid, trials, seed, tolerance,
            target, trial_budget, max_steps, node_cap, ball_radius, arc, truncation,
            condition_origin_open, out, format, threads);
        self
    }

    fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("bad config {}: {e}", path.display())))
    }

    fn dimension(&self) -> Result<Dimension, CliError> {
        let d = self.d.ok_or_else(|| config_err("--d is required"))?;
        Dimension::new(d).map_err(config_err)
    }

    fn ks(&self) -> Result<Vec<u64>, CliError> {
        let ks = self
            .k
            .clone()
            .map(OneOrMany::into_vec)
            .ok_or_else(|| config_err("--k is required"))?;
        if ks.is_empty() {
            return Err(config_err("--k must list at least one radius"));
        }
        Ok(ks)
    }

    fn single_k(&self) -> Result<u64, CliError> {
        match self.ks()?.as_slice() {
            [k] => Ok(*k),
            _ => Err(config_err("exactly one --k is expected")),
        }
    }

    fn probability(p: f64) -> Result<f64, CliError> {
        if (0.0..=1.0).contains(&p) {
            Ok(p)
        } else {
            Err(config_err(format!("probability {p} outside [0, 1]")))
        }
    }

    fn echo(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).unwrap_or(serde_json::Value::Null);
        if let Some(obj) = v.as_object_mut() {
            obj.retain(|_, x| !x.is_null());
        }
        v
    }
}

fn from_output(o: &OutputArgs) -> RunConfig {
    RunConfig {
        out: o.out.clone(),
        format: o.format,
        ..RunConfig::default()
    }
}

fn from_count(c: &CountArgs) -> RunConfig {
    RunConfig {
        ball_radius: c.ball_radius,
        arc: c.arc,
        node_cap: c.node_cap,
        ..RunConfig::default()
    }
}

fn from_trial(t: &TrialArgs) -> RunConfig {
    RunConfig {
        d: t.d,
        k: t.k.map(OneOrMany::One),
        trials: t.trials,
        seed: t.seed,
        condition_origin_open: t.condition_origin_open,
        ..RunConfig::default()
    }
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Enumerate(_) => "enumerate",
            Command::Audit(_) => "audit",
            Command::Series(_) => "series",
            Command::Simulate(_) => "simulate",
            Command::Sweep(_) => "sweep",
            Command::Estimate(_) => "estimate",
            Command::Report(_) => "report",
        }
    }

    fn output_args(&self) -> &OutputArgs {
        match self {
            Command::Enumerate(a) => &a.out,
            Command::Audit(a) => &a.out,
            Command::Series(a) => &a.out,
            Command::Simulate(a) => &a.out,
            Command::Sweep(a) => &a.out,
            Command::Estimate(a) => &a.out,
            Command::Report(a) => &a.out,
        }
    }

    /// Flag values as a sparse config.
    fn flags(&self) -> RunConfig {
        let base = match self {
            Command::Enumerate(a) => RunConfig {
                d: a.d,
                k: a.k.clone().map(OneOrMany::Many),
                m_max: a.m_max,
                ..RunConfig::default()
            }
            .overlay(&from_count(&a.count)),
            Command::Audit(a) => RunConfig {
                d: a.d,
                k_max: a.k_max,
                m_max: a.m_max,
                seed: a.seed,
                ..RunConfig::default()
            }
            .overlay(&from_count(&a.count)),
            Command::Series(a) => RunConfig {
                d: a.d,
                k: a.k.clone().map(OneOrMany::Many),
                p: a.p,
                p_grid: a.p_grid.clone(),
                truncation: a.truncation,
                m_max: a.m_max,
                ..RunConfig::default()
            }
            .overlay(&from_count(&a.count)),
            Command::Simulate(a) => RunConfig {
                p: a.p,
                ..from_trial(&a.trial)
            },
            Command::Sweep(a) => RunConfig {
                p_grid: a.p_grid.clone(),
                ..from_trial(&a.trial)
            },
            Command::Estimate(a) => RunConfig {
                d: a.d,
                k: a.k.clone().map(OneOrMany::Many),
                target: a.target,
                tolerance: a.tolerance,
                seed: a.seed,
                trial_budget: a.trial_budget,
                max_steps: a.max_steps,
                ..RunConfig::default()
            },
            Command::Report(_) => RunConfig::default(),
        };
        base.overlay(&from_output(self.output_args()))
    }
}

/// Defaults applied beneath file and flags, per subcommand.
fn defaults(sub: &str) -> RunConfig {
    let mut c = RunConfig {
        format: Some(Format::Csv),
        ..RunConfig::default()
    };
    match sub {
        "enumerate" | "audit" => {
            c.arc = Some(ArcMode::Face);
            c.node_cap = Some(DEFAULT_NODE_CAP);
            if sub == "audit" {
                c.seed = Some(DEFAULT_SEED);
            }
        }
        "series" => {
            c.truncation = Some(DEFAULT_TRUNCATION);
            c.arc = Some(ArcMode::Face);
            c.node_cap = Some(DEFAULT_NODE_CAP);
        }
        "simulate" | "sweep" => {
            c.trials = Some(DEFAULT_TRIALS);
            c.seed = Some(DEFAULT_SEED);
            c.condition_origin_open = Some(true);
        }
        "estimate" => {
            c.target = Some(DEFAULT_TARGET);
            c.tolerance = Some(DEFAULT_TOLERANCE);
            c.seed = Some(DEFAULT_SEED);
            c.trial_budget = Some(MAX_TRIALS_PER_PROBE);
            c.max_steps = Some(MAX_STEPS);
        }
        _ => {}
    }
    c
}

fn emit<R: Serialize>(cfg: &RunConfig, meta: Metadata, rows: &[R]) -> Result<(), CliError> {
    let bytes = output::encode(&meta, rows, cfg.format.unwrap_or_default())?;
    match &cfg.out {
        Some(path) => output::write_atomic(path, &bytes)?,
        None => std::io::stdout()
            .write_all(&bytes)
            .map_err(|e| CliError::Internal(e.to_string()))?,
    }
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn engine(cfg: &RunConfig) -> EngineConfig {
    EngineConfig {
        node_cap: cfg.node_cap.unwrap_or(DEFAULT_NODE_CAP),
    }
}

fn count_meta(cfg: &RunConfig) -> Metadata {
    Metadata::new(ArtifactKind::Counts, cfg.echo())
        .note("endpoint_convention", ENDPOINT_CONVENTION)
        .note("arc", cfg.arc.unwrap_or_default().to_string())
        .note(
            "confinement",
            cfg.ball_radius
                .map_or("none".to_string(), |r| format!("ball radius {r}")),
        )
}

fn run_enumerate(cfg: &RunConfig) -> Result<String, CliError> {
    let d = cfg.dimension()?;
    let ks = cfg.ks()?;
    let m_max = cfg.m_max.ok_or_else(|| config_err("--m-max is required"))?;
    let arc = cfg.arc.unwrap_or_default();
    if let (Some(r), Some(&kmax)) = (cfg.ball_radius, ks.iter().max()) {
        if r < kmax {
            return Err(config_err(format!(
                "ball radius {r} is smaller than k = {kmax}"
            )));
        }
    }
    let mut censuses = BTreeMap::new();
    for &k in &ks {
        for m in 0..=m_max {
            let len = k + 2 * m;
            if let std::collections::btree_map::Entry::Vacant(e) = censuses.entry(len) {
                e.insert(saw_census(d, len, cfg.ball_radius, &engine(cfg)));
            }
        }
    }
    let mut rows = Vec::new();
    let mut over_budget = 0;
    for &k in &ks {
        for m in 0..=m_max {
            let len = k + 2 * m;
            let bound = paper_bound(d, k, m);
            rows.push(match &censuses[&len] {
                Ok(c) => {
                    let exact = c.ending_on(k, arc);
                    AuditRow {
                        d: d.get(),
                        k,
                        m,
                        length: len,
                        bound_holds: Some(exact <= bound),
                        exact_count: Some(exact.to_string()),
                        paper_bound: bound.to_string(),
                        computed: true,
                    }
                }
                Err(
                    EnumerationError::ResourceBudgetExceeded { .. }
                    | EnumerationError::GridTooLarge { .. },
                ) => {
                    over_budget += 1;
                    AuditRow {
                        d: d.get(),
                        k,
                        m,
                        length: len,
                        exact_count: None,
                        paper_bound: bound.to_string(),
                        bound_holds: None,
                        computed: false,
                    }
                }
                Err(e) => return Err(config_err(e)),
            });
        }
    }
    emit(cfg, count_meta(cfg), &rows)?;
    let summary = format!(
        "enumerate: {} rows for d={}, {} over budget",
        rows.len(),
        d,
        over_budget
    );
    if over_budget > 0 {
        return Err(CliError::Budget(summary));
    }
    Ok(summary)
}

fn run_audit(cfg: &RunConfig) -> Result<String, CliError> {
    let d = cfg.dimension()?;
    let k_max = cfg.k_max.ok_or_else(|| config_err("--k-max is required"))?;
    let m_max = cfg.m_max.ok_or_else(|| config_err("--m-max is required"))?;
    let opts = AuditOptions {
        arc: cfg.arc.unwrap_or_default(),
        ball_radius: cfg.ball_radius,
        engine: engine(cfg),
    };
    let (report, _) = audit_paper_bounds(d, k_max, m_max, &opts).map_err(config_err)?;
    emit(cfg, count_meta(cfg), &report.rows)?;
    let computed = report.rows.iter().filter(|r| r.computed).count();
    let violated = report
        .rows
        .iter()
        .filter(|r| r.bound_holds == Some(false))
        .count();
    let summary = format!(
        "audit: d={} {} rows, {} computed, {} exceed the claimed bound",
        d,
        report.rows.len(),
        computed,
        violated
    );
    if computed < report.rows.len() {
        return Err(CliError::Budget(summary));
    }
    Ok(summary)
}

fn run_series(cfg: &RunConfig) -> Result<String, CliError> {
    let d = cfg.dimension()?;
    let ks = cfg.ks()?;
    let grid = match (&cfg.p_grid, cfg.p) {
        (Some(g), _) if !g.is_empty() => g.clone(),
        (_, Some(p)) => vec![p],
        _ => return Err(config_err("--p or --p-grid is required")),
    };
    for &p in &grid {
        RunConfig::probability(p)?;
    }
    let truncation = cfg.truncation.unwrap_or(DEFAULT_TRUNCATION);
    let table = match cfg.m_max {
        Some(m_max) => {
            let k_hi = *ks.iter().max().unwrap_or(&1);
            let opts = AuditOptions {
                arc: cfg.arc.unwrap_or_default(),
                ball_radius: cfg.ball_radius,
                engine: engine(cfg),
            };
            let (_, table) =
                audit_paper_bounds(d, k_hi.max(1), m_max.max(1), &opts).map_err(config_err)?;
            Some((table, m_max))
        }
        None => None,
    };
    let mut rows: Vec<SeriesRow> = Vec::new();
    for &p in &grid {
        for &k in &ks {
            rows.push((&psi_lower(d, p, k).map_err(config_err)?).into());
            if p < 1.0 {
                let (t, c) = upper_bound_series(d, p, k, truncation).map_err(config_err)?;
                rows.push((&t).into());
                rows.push((&c).into());
            }
            if let Some((table, m_max)) = &table {
                match empirical_psi(table, d, p, k, *m_max) {
                    Ok(v) => rows.push((&v).into()),
                    Err(e) => {
                        return Err(CliError::Budget(format!(
                            "empirical series unavailable: {e}"
                        )))
                    }
                }
            }
        }
    }
    let meta = Metadata::new(ArtifactKind::Series, cfg.echo())
        .note("probability_convention", PROBABILITY_CONVENTION)
        .note("quantity", "expectations of path counts, not random counts");
    emit(cfg, meta, &rows)?;
    Ok(format!("series: {} rows for d={}", rows.len(), d))
}

fn trial_spec(cfg: &RunConfig, p: f64) -> Result<TrialSpec, CliError> {
    let d = cfg.dimension()?;
    let k = cfg.single_k()?;
    let trials = cfg.trials.unwrap_or(DEFAULT_TRIALS);
    if trials == 0 {
        return Err(config_err("--trials must be at least 1"));
    }
    Ok(TrialSpec {
        condition_origin_open: cfg.condition_origin_open.unwrap_or(true),
        ..TrialSpec::new(
            d,
            k,
            RunConfig::probability(p)?,
            trials,
            cfg.seed.unwrap_or(DEFAULT_SEED),
        )
    })
}

fn theta_meta(cfg: &RunConfig) -> Metadata {
    Metadata::new(ArtifactKind::Theta, cfg.echo())
        .note("rng_algorithm", RNG_ALGORITHM)
        .note("rng_stream_version", RNG_STREAM_VERSION.to_string())
        .note(
            "site_order",
            "lexicographic coordinate order within the L1 ball",
        )
        .note(
            "event",
            "v_0 joined to an open site with ||v|| = k through open sites",
        )
}

fn run_simulate(cfg: &RunConfig) -> Result<String, CliError> {
    let p = cfg.p.ok_or_else(|| config_err("--p is required"))?;
    let spec = trial_spec(cfg, p)?;
    let est = estimate_theta(&spec).map_err(config_err)?;
    emit(cfg, theta_meta(cfg), &[ThetaRow::from(&est)])?;
    Ok(format!(
        "simulate: d={} k={} p={} theta={:.6} [{:.6}, {:.6}] ({} trials)",
        spec.d, spec.k, spec.p, est.point, est.ci_low, est.ci_high, spec.trials
    ))
}

fn run_sweep(cfg: &RunConfig) -> Result<String, CliError> {
    let grid = cfg
        .p_grid
        .clone()
        .ok_or_else(|| config_err("--p-grid is required"))?;
    if grid.is_empty() {
        return Err(config_err("--p-grid must not be empty"));
    }
    let spec = trial_spec(cfg, grid[0])?;
    for &p in &grid {
        RunConfig::probability(p)?;
    }
    let out = sweep_theta(&spec, &grid).map_err(config_err)?;
    let rows: Vec<ThetaRow> = out.iter().map(ThetaRow::from).collect();
    emit(
        cfg,
        theta_meta(cfg).note("grid_seeds", "point i uses derive_seed(seed, i)"),
        &rows,
    )?;
    Ok(format!(
        "sweep: d={} k={} {} grid points",
        spec.d,
        spec.k,
        rows.len()
    ))
}

fn run_estimate(cfg: &RunConfig) -> Result<String, CliError> {
    let d = cfg.dimension()?;
    let ks = cfg.ks()?;
    let tcfg = ThresholdConfig {
        target_level: cfg.target.unwrap_or(DEFAULT_TARGET),
        tolerance: cfg.tolerance.unwrap_or(DEFAULT_TOLERANCE),
        seed: cfg.seed.unwrap_or(DEFAULT_SEED),
        initial_trials: INITIAL_TRIALS,
        trial_budget: cfg.trial_budget.unwrap_or(MAX_TRIALS_PER_PROBE),
        max_steps: cfg.max_steps.unwrap_or(MAX_STEPS),
    };
    let mut results = Vec::new();
    for &k in &ks {
        results.push(find_threshold(d, k, &tcfg).map_err(config_err)?);
    }
    let rows: Vec<ThresholdRow> = results.iter().map(ThresholdRow::from).collect();
    let meta = Metadata::new(ArtifactKind::Threshold, cfg.echo())
        .note("rng_algorithm", RNG_ALGORITHM)
        .note("rng_stream_version", RNG_STREAM_VERSION.to_string())
        .note("ci", "final bisection bracket")
        .note("adaptive_trials", format!("{INITIAL_TRIALS} doubling to trial_budget while the Wilson interval straddles target"));
    emit(cfg, meta, &rows)?;

    let comparison = compare_to_paper(&results).map_err(config_err)?;
    let text = comparison.to_text();
    match &cfg.out {
        Some(path) => {
            let cmeta = Metadata::new(ArtifactKind::Comparison, cfg.echo())
                .note("trend", comparison.trend.to_string())
                .note("extrapolation_note", comparison.extrapolation_note.clone());
            let bytes = output::encode(&cmeta, &comparison.rows, Format::Csv)?;
            output::write_atomic(&sibling(path, ".comparison.csv"), &bytes)?;
            output::write_atomic(&sibling(path, ".comparison.txt"), text.as_bytes())?;
        }
        None => eprint!("{text}"),
    }
    let summary = format!(
        "estimate: d={} {} radii, p* = [{}], 1/d in CI for {} of them",
        d,
        results.len(),
        results
            .iter()
            .map(|r| format!("{:.4}", r.p_star))
            .collect::<Vec<_>>()
            .join(", "),
        comparison.rows.iter().filter(|r| r.consistent).count()
    );
    if results
        .iter()
        .any(|r| r.flag == ThresholdFlag::BudgetExhausted)
    {
        return Err(CliError::Budget(summary));
    }
    Ok(summary)
}

#[derive(Debug, Serialize)]
struct ReportDoc {
    tool_version: String,
    generated_at: String,
    inputs: Vec<String>,
    counting: Option<serde_json::Value>,
    series: Option<serde_json::Value>,
    simulation: Option<serde_json::Value>,
    thresholds: Vec<ComparisonReport>,
}

/// Builds the combined report from parsed artifacts; returns (text, json).
pub fn build_report(
    inputs: &[(String, Artifact)],
) -> Result<(String, serde_json::Value), CliError> {
    if inputs.is_empty() {
        return Err(config_err("report needs at least one input artifact"));
    }
    let mut text = String::new();
    let _ = writeln!(text, "percolab report (tool {})", crate::VERSION);
    let _ = writeln!(
        text,
        "inputs: {}",
        inputs
            .iter()
            .map(|(p, _)| p.as_str())
            .collect::<Vec<_>>()
            .join(", ")
    );

    let counts: Vec<&AuditRow> = inputs
        .iter()
        .filter_map(|(_, a)| match a {
            Artifact::Counts(_, r) => Some(r.iter()),
            _ => None,
        })
        .flatten()
        .collect();
    let series: Vec<&SeriesRow> = inputs
        .iter()
        .filter_map(|(_, a)| match a {
            Artifact::Series(_, r) => Some(r.iter()),
            _ => None,
        })
        .flatten()
        .collect();
    let thetas: Vec<&ThetaRow> = inputs
        .iter()
        .filter_map(|(_, a)| match a {
            Artifact::Theta(_, r) => Some(r.iter()),
            _ => None,
        })
        .flatten()
        .collect();
    let thresholds: Vec<&ThresholdRow> = inputs
        .iter()
        .filter_map(|(_, a)| match a {
            Artifact::Threshold(_, r) => Some(r.iter()),
            _ => None,
        })
        .flatten()
        .collect();

    let mut doc = ReportDoc {
        tool_version: crate::VERSION.to_string(),
        generated_at: chrono::Utc::now().to_rfc3339(),
        inputs: inputs.iter().map(|(p, _)| p.clone()).collect(),
        counting: None,
        series: None,
        simulation: None,
        thresholds: Vec::new(),
    };

    if !counts.is_empty() {
        let _ = writeln!(text, "\n== Counting claims ==");
        let _ = writeln!(text, "claim: number of k-paths n_k(A_k) = d^k");
        let _ = writeln!(
            text,
            "claim: n_{{k+2}}(A_k) <= d^k and n_{{k+2m}}(A_k) <= m d^k"
        );
        let _ = writeln!(
            text,
            "{:>3} {:>4} {:>3} {:>6} {:>22} {:>22}  holds",
            "d", "k", "m", "length", "exact", "claimed bound"
        );
        let mut holds = 0;
        let mut fails = 0;
        let mut skipped = 0;
        for r in &counts {
            let verdict = match r.bound_holds {
                Some(true) => {
                    holds += 1;
                    "yes"
                }
                Some(false) => {
                    fails += 1;
                    "NO"
                }
                None => {
                    skipped += 1;
                    "not computed"
                }
            };
            let _ = writeln!(
                text,
                "{:>3} {:>4} {:>3} {:>6} {:>22} {:>22}  {}",
                r.d,
                r.k,
                r.m,
                r.length,
                r.exact_count.as_deref().unwrap_or("-"),
                r.paper_bound,
                verdict
            );
        }
        let _ = writeln!(text, "summary: {holds} rows within the claimed bound, {fails} above it, {skipped} not computed");
        doc.counting = Some(serde_json::json!({
            "claims": ["n_k(A_k) = d^k", "n_{k+2}(A_k) <= d^k", "n_{k+2m}(A_k) <= m d^k"],
            "rows": counts,
            "within_bound": holds,
            "above_bound": fails,
            "not_computed": skipped,
        }));
    }

    if !series.is_empty() {
        let _ = writeln!(text, "\n== Series ==");
        let _ = writeln!(text, "claim: psi >= psi_k = (dp)^k, hence p_H <= 1/d");
        let _ = writeln!(
            text,
            "claim: psi <= (dp)^k (1 + sum i p^(2i)), hence p_H >= 1/d"
        );
        let _ = writeln!(text, "convention: {PROBABILITY_CONVENTION}");
        let _ = writeln!(
            text,
            "{:>3} {:>8} {:>4} {:>20} {:>6} {:>14}",
            "d", "p", "k", "kind", "I", "value"
        );
        for r in &series {
            let _ = writeln!(
                text,
                "{:>3} {:>8.4} {:>4} {:>20} {:>6} {:>14.6e}",
                r.d,
                r.p,
                r.k,
                r.kind.to_string(),
                r.truncation.map_or("-".to_string(), |t| t.to_string()),
                r.value
            );
        }
        doc.series =
            Some(serde_json::json!({ "convention": PROBABILITY_CONVENTION, "rows": series }));
    }

    if !thetas.is_empty() {
        let _ = writeln!(text, "\n== Connection probability theta_k(p) ==");
        let _ = writeln!(
            text,
            "{:>3} {:>5} {:>8} {:>8} {:>10} {:>21}",
            "d", "k", "p", "trials", "theta", "95% Wilson"
        );
        for r in &thetas {
            let _ = writeln!(
                text,
                "{:>3} {:>5} {:>8.4} {:>8} {:>10.6} [{:>8.6}, {:>8.6}]",
                r.d, r.k, r.p, r.trials, r.theta, r.ci_low, r.ci_high
            );
        }
        doc.simulation = Some(serde_json::json!({ "rows": thetas }));
    }

    if !thresholds.is_empty() {
        let _ = writeln!(text, "\n== Threshold claim p_H = 1/d ==");
        let mut by_d: BTreeMap<usize, Vec<_>> = BTreeMap::new();
        for r in &thresholds {
            by_d.entry(r.d).or_default().push(r.to_result());
        }
        for results in by_d.values() {
            let rep = compare_to_paper(results).map_err(config_err)?;
            text.push_str(&rep.to_text());
            doc.thresholds.push(rep);
        }
    }

    let json = serde_json::to_value(&doc).map_err(|e| CliError::Internal(e.to_string()))?;
    Ok((text, json))
}

fn run_report(args: &ReportArgs, cfg: &RunConfig) -> Result<String, CliError> {
    let mut parsed = Vec::new();
    for path in &args.inputs {
        let a = output::read_artifact(path).map_err(|e| CliError::Config(e.to_string()))?;
        parsed.push((path.display().to_string(), a));
    }
    let (text, json) = build_report(&parsed)?;
    let json_bytes =
        serde_json::to_vec_pretty(&json).map_err(|e| CliError::Internal(e.to_string()))?;
    match &cfg.out {
        Some(path) => {
            let (main, other, other_path) = match cfg.format.unwrap_or_default() {
                Format::Json => (json_bytes, text.into_bytes(), path.with_extension("txt")),
                Format::Csv => (text.into_bytes(), json_bytes, path.with_extension("json")),
            };
            output::write_atomic(path, &main)?;
            if other_path != *path {
                output::write_atomic(&other_path, &other)?;
            }
        }
        None => print!("{text}"),
    }
    Ok(format!("report: {} inputs merged", parsed.len()))
}

fn worker_count(cfg: &RunConfig) -> Result<usize, CliError> {
    if let Some(n) = cfg.threads {
        return Ok(n);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| config_err(format!("{THREADS_ENV}='{v}' is not a thread count"))),
        Err(_) => Ok(0),
    }
}

fn dispatch(cli: Cli) -> Result<String, CliError> {
    let sub = cli.command.name();
    let flags = RunConfig {
        subcommand: Some(sub.to_string()),
        threads: cli.threads,
        ..cli.command.flags()
    };
    let file = match &cli.command.output_args().config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let cfg = defaults(sub).overlay(&file).overlay(&flags);
    let threads = worker_count(&cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    pool.install(|| match &cli.command {
        Command::Enumerate(_) => run_enumerate(&cfg),
        Command::Audit(_) => run_audit(&cfg),
        Command::Series(_) => run_series(&cfg),
        Command::Simulate(_) => run_simulate(&cfg),
        Command::Sweep(_) => run_sweep(&cfg),
        Command::Estimate(_) => run_estimate(&cfg),
        Command::Report(a) => run_report(a, &cfg),
    })
}

/// Parses `argv` (including the program name), runs, and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(summary) => {
            eprintln!("{summary}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}
