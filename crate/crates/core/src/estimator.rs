//! Pseudo-critical point `p*(k)` where `θ_k(p)` crosses a target level, found
//! by bisection on Monte Carlo estimates, and its comparison with `1/d`.

use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::Dimension;
use crate::montecarlo::{
    count_successes, wilson_interval, BallLattice, MonteCarloError, TrialSpec,
};
use crate::rng::derive_seed;

pub const DEFAULT_TARGET: f64 = 0.5;
pub const INITIAL_TRIALS: u64 = 2_000;
pub const MAX_TRIALS_PER_PROBE: u64 = 64_000;
pub const MAX_STEPS: u32 = 60;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("target level {0} must lie strictly between 0 and 1")]
    InvalidTarget(f64),
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("trial budget must be at least the initial {INITIAL_TRIALS} trials per probe")]
    InvalidBudget,
    #[error("no threshold results to compare")]
    NoResults,
    #[error("results mix dimensions {0} and {1}")]
    MixedDimensions(usize, usize),
    #[error(transparent)]
    MonteCarlo(#[from] MonteCarloError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdConfig {
    pub target_level: f64,
    pub tolerance: f64,
    pub seed: u64,
    pub initial_trials: u64,
    /// Trials a single probe may spend while its interval straddles the target.
    pub trial_budget: u64,
    pub max_steps: u32,
}

impl ThresholdConfig {
    pub fn new(tolerance: f64, seed: u64) -> Self {
        ThresholdConfig {
            target_level: DEFAULT_TARGET,
            tolerance,
            seed,
            initial_trials: INITIAL_TRIALS,
            trial_budget: MAX_TRIALS_PER_PROBE,
            max_steps: MAX_STEPS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdFlag {
    Ok,
    /// At least one probe was classified by its point estimate alone.
    Ambiguous,
    /// The step limit was reached before the bracket shrank to tolerance.
    BudgetExhausted,
}

impl fmt::Display for ThresholdFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ThresholdFlag::Ok => "ok",
            ThresholdFlag::Ambiguous => "ambiguous",
            ThresholdFlag::BudgetExhausted => "budget_exhausted",
        })
    }
}

impl std::str::FromStr for ThresholdFlag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ok" => Ok(ThresholdFlag::Ok),
            "ambiguous" => Ok(ThresholdFlag::Ambiguous),
            "budget_exhausted" => Ok(ThresholdFlag::BudgetExhausted),
            other => Err(format!("unknown flag '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub p: f64,
    pub seed: u64,
    pub trials: u64,
    pub successes: u64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// The interval still contained the target when the probe stopped.
    pub straddled: bool,
}

impl Probe {
    pub fn point(&self) -> f64 {
        self.successes as f64 / self.trials as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub d: usize,
    pub k: u64,
    pub p_star: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub trials_used: u64,
    pub bisection_steps: u32,
    pub target_level: f64,
    pub seed: u64,
    pub flag: ThresholdFlag,
    pub ambiguous_steps: u32,
    pub probes: Vec<Probe>,
}

/// Bisects `[0, 1]` on `θ̂_k(p) − target`. Each probe starts with
/// `initial_trials` and doubles while the Wilson interval contains the target,
/// up to `trial_budget`; an undecided probe is classified by its point estimate.
/// Probe `i` draws from `derive_seed(seed, i)`; trials are extended, never redrawn.
pub fn find_threshold(
    d: Dimension,
    k: u64,
    cfg: &ThresholdConfig,
) -> Result<ThresholdResult, EstimatorError> {
    if !(cfg.target_level > 0.0 && cfg.target_level < 1.0) {
        return Err(EstimatorError::InvalidTarget(cfg.target_level));
    }
    if cfg.tolerance.is_nan() || cfg.tolerance <= 0.0 {
        return Err(EstimatorError::InvalidTolerance(cfg.tolerance));
    }
    if cfg.initial_trials == 0 || cfg.trial_budget < cfg.initial_trials {
        return Err(EstimatorError::InvalidBudget);
    }
    let ball = BallLattice::new(d, k)?;
    let target = cfg.target_level;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut probes = Vec::new();
    let mut trials_used = 0;
    let mut ambiguous_steps = 0;
    let mut step = 0u32;

    while hi - lo > cfg.tolerance && step < cfg.max_steps {
        let p = 0.5 * (lo + hi);
        let seed = derive_seed(cfg.seed, step as u64);
        let spec = TrialSpec::new(d, k, p, cfg.trial_budget, seed);
        let mut n = cfg.initial_trials;
        let mut successes = count_successes(&ball, &spec, 0..n);
        let (mut ci_low, mut ci_high) = wilson_interval(successes, n);
        while ci_low <= target && target <= ci_high && n < cfg.trial_budget {
            let next = (2 * n).min(cfg.trial_budget);
            successes += count_successes(&ball, &spec, n..next);
            n = next;
            (ci_low, ci_high) = wilson_interval(successes, n);
        }
        let straddled = ci_low <= target && target <= ci_high;
        if straddled {
            ambiguous_steps += 1;
        }
        trials_used += n;
        let probe = Probe {
            p,
            seed,
            trials: n,
            successes,
            ci_low,
            ci_high,
            straddled,
        };
        if probe.point() < target {
            lo = p;
        } else {
            hi = p;
        }
        probes.push(probe);
        step += 1;
    }

    let flag = if hi - lo > cfg.tolerance {
        ThresholdFlag::BudgetExhausted
    } else if ambiguous_steps > 0 {
        ThresholdFlag::Ambiguous
    } else {
        ThresholdFlag::Ok
    };
    Ok(ThresholdResult {
        d: d.get(),
        k,
        p_star: 0.5 * (lo + hi),
        ci_low: lo,
        ci_high: hi,
        trials_used,
        bisection_steps: step,
        target_level: target,
        seed: cfg.seed,
        flag,
        ambiguous_steps,
        probes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub k: u64,
    pub p_star: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub paper_prediction: f64,
    pub consistent: bool,
    pub flag: ThresholdFlag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    Single,
    Increasing,
    Decreasing,
    Constant,
    Mixed,
}

impl fmt::Display for Trend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Trend::Single => "single point",
            Trend::Increasing => "increasing in k",
            Trend::Decreasing => "decreasing in k",
            Trend::Constant => "constant in k",
            Trend::Mixed => "not monotone in k",
        })
    }
}

/// `p*(k) ≈ p_c + a k^{-b}`, least squares over a grid of exponents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub p_c: f64,
    pub a: f64,
    pub b: f64,
    pub rss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub d: usize,
    pub paper_prediction: f64,
    pub rows: Vec<ComparisonRow>,
    pub trend: Trend,
    pub extrapolation_note: String,
    pub fit: Option<PowerLawFit>,
}

fn trend_of(values: &[f64]) -> Trend {
    if values.len() < 2 {
        return Trend::Single;
    }
    let diffs: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
    if diffs.iter().all(|&x| x == 0.0) {
        Trend::Constant
    } else if diffs.iter().all(|&x| x >= 0.0) {
        Trend::Increasing
    } else if diffs.iter().all(|&x| x <= 0.0) {
        Trend::Decreasing
    } else {
        Trend::Mixed
    }
}

/// Fits `p_c + a k^{-b}` for `b` on a grid in `(0, 4]`; needs three distinct `k`.
pub fn power_law_fit(points: &[(u64, f64)]) -> Option<PowerLawFit> {
    if points.len() < 3 || points.iter().any(|&(k, _)| k == 0) {
        return None;
    }
    let mut best: Option<PowerLawFit> = None;
    for step in 1..=400 {
        let b = step as f64 * 0.01;
        let xs: Vec<f64> = points.iter().map(|&(k, _)| (k as f64).powf(-b)).collect();
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = points.iter().map(|&(_, y)| y).sum::<f64>() / n;
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        if sxx <= 0.0 {
            continue;
        }
        let sxy: f64 = xs
            .iter()
            .zip(points)
            .map(|(x, &(_, y))| (x - mx) * (y - my))
            .sum();
        let a = sxy / sxx;
        let p_c = my - a * mx;
        let rss = xs
            .iter()
            .zip(points)
            .map(|(x, &(_, y))| (y - p_c - a * x).powi(2))
            .sum();
        if best.is_none_or(|f| rss < f.rss) {
            best = Some(PowerLawFit { p_c, a, b, rss });
        }
    }
    best
}

/// Tabulates `p*(k)` against `1/d`; a row is consistent when `1/d` lies in its bracket.
pub fn compare_to_paper(results: &[ThresholdResult]) -> Result<ComparisonReport, EstimatorError> {
    let first = results.first().ok_or(EstimatorError::NoResults)?;
    let d = first.d;
    if let Some(r) = results.iter().find(|r| r.d != d) {
        return Err(EstimatorError::MixedDimensions(d, r.d));
    }
    let prediction = 1.0 / d as f64;
    let mut rows: Vec<ComparisonRow> = results
        .iter()
        .map(|r| ComparisonRow {
            k: r.k,
            p_star: r.p_star,
            ci_low: r.ci_low,
            ci_high: r.ci_high,
            paper_prediction: prediction,
            consistent: r.ci_low <= prediction && prediction <= r.ci_high,
            flag: r.flag,
        })
        .collect();
    rows.sort_by_key(|r| r.k);
    let values: Vec<f64> = rows.iter().map(|r| r.p_star).collect();
    let trend = trend_of(&values);
    let fit = power_law_fit(&rows.iter().map(|r| (r.k, r.p_star)).collect::<Vec<_>>());
    let extrapolation_note = match trend {
        Trend::Single => "one radius measured; no trend available".to_string(),
        t => format!(
            "p*(k) is {t} over k = {}..{}; no limit is asserted from finite radii",
            rows.first().map_or(0, |r| r.k),
            rows.last().map_or(0, |r| r.k)
        ),
    };
    Ok(ComparisonReport {
        d,
        paper_prediction: prediction,
        rows,
        trend,
        extrapolation_note,
        fit,
    })
}

impl ComparisonReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "Pseudo-critical points p*(k) on Z_k^{} (theta_k(p*) = target)",
            self.d
        );
        let _ = writeln!(s, "claimed p_H = 1/d = {:.6}", self.paper_prediction);
        let _ = writeln!(
            s,
            "{:>6}  {:>9}  {:>21}  {:>10}  flag",
            "k", "p_star", "bracket", "1/d in CI"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:>6}  {:>9.6}  [{:>8.6}, {:>8.6}]  {:>10}  {}",
                r.k,
                r.p_star,
                r.ci_low,
                r.ci_high,
                if r.consistent { "yes" } else { "no" },
                r.flag
            );
        }
        let _ = writeln!(s, "trend: {}", self.trend);
        let _ = writeln!(s, "note: {}", self.extrapolation_note);
        if let Some(f) = &self.fit {
            let _ = writeln!(
                s,
                "convenience fit (not a claim): p*(k) ~ {:.6} + {:.4} k^-{:.2} (rss {:.3e})",
                f.p_c, f.a, f.b, f.rss
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dim(d: usize) -> Dimension {
        Dimension::new(d).unwrap()
    }

    fn fake(d: usize, k: u64, p_star: f64, half: f64) -> ThresholdResult {
        ThresholdResult {
            d,
            k,
            p_star,
            ci_low: p_star - half,
            ci_high: p_star + half,
            trials_used: 0,
            bisection_steps: 0,
            target_level: 0.5,
            seed: 0,
            flag: ThresholdFlag::Ok,
            ambiguous_steps: 0,
            probes: vec![],
        }
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = ThresholdConfig::new(0.01, 1);
        cfg.target_level = 1.0;
        assert_eq!(
            find_threshold(dim(1), 4, &cfg),
            Err(EstimatorError::InvalidTarget(1.0))
        );
        cfg.target_level = 0.0;
        assert!(find_threshold(dim(1), 4, &cfg).is_err());
        let mut cfg = ThresholdConfig::new(0.0, 1);
        assert_eq!(
            find_threshold(dim(1), 4, &cfg),
            Err(EstimatorError::InvalidTolerance(0.0))
        );
        cfg.tolerance = 0.01;
        cfg.trial_budget = 10;
        assert_eq!(
            find_threshold(dim(1), 4, &cfg),
            Err(EstimatorError::InvalidBudget)
        );
    }

    #[test]
    fn bracket_invariants() {
        let cfg = ThresholdConfig::new(0.01, 5);
        let r = find_threshold(dim(2), 6, &cfg).unwrap();
        assert!(r.ci_low <= r.p_star && r.p_star <= r.ci_high);
        assert!(r.p_star > 0.0 && r.p_star < 1.0);
        assert!(r.ci_high - r.ci_low <= 0.01);
        assert_eq!(r.bisection_steps as usize, r.probes.len());
        assert_eq!(
            r.trials_used,
            r.probes.iter().map(|p| p.trials).sum::<u64>()
        );
        // Every probe below the bracket read low, every probe above read high.
        for p in &r.probes {
            if p.p <= r.ci_low {
                assert!(p.point() < 0.5);
            }
            if p.p >= r.ci_high {
                assert!(p.point() >= 0.5);
            }
            assert!(p.trials >= INITIAL_TRIALS && p.trials <= MAX_TRIALS_PER_PROBE);
        }
    }

    #[test]
    fn step_limit_flags_budget() {
        let mut cfg = ThresholdConfig::new(1e-6, 5);
        cfg.max_steps = 3;
        cfg.trial_budget = cfg.initial_trials;
        let r = find_threshold(dim(1), 4, &cfg).unwrap();
        assert_eq!(r.flag, ThresholdFlag::BudgetExhausted);
        assert_eq!(r.bisection_steps, 3);
        assert!((r.ci_high - r.ci_low - 0.125).abs() < 1e-15);
    }

    #[test]
    fn comparison_consistency_and_trend() {
        let rep = compare_to_paper(&[fake(2, 16, 0.55, 0.01), fake(2, 8, 0.51, 0.02)]).unwrap();
        assert_eq!(rep.rows[0].k, 8);
        assert!(rep.rows[0].consistent);
        assert!(!rep.rows[1].consistent);
        assert_eq!(rep.trend, Trend::Increasing);
        assert_eq!(rep.paper_prediction, 0.5);
        assert!(rep.to_text().contains("1/d = 0.500000"));
    }

    #[test]
    fn comparison_errors() {
        assert_eq!(compare_to_paper(&[]), Err(EstimatorError::NoResults));
        assert_eq!(
            compare_to_paper(&[fake(2, 8, 0.5, 0.1), fake(3, 8, 0.3, 0.1)]),
            Err(EstimatorError::MixedDimensions(2, 3))
        );
    }

    #[test]
    fn line_prediction_is_one() {
        let rep = compare_to_paper(&[fake(1, 8, 0.86, 0.002)]).unwrap();
        assert_eq!(rep.paper_prediction, 1.0);
        assert!(!rep.rows[0].consistent);
        assert_eq!(rep.trend, Trend::Single);
        assert!(rep.fit.is_none());
    }

    #[test]
    fn trend_classes() {
        assert_eq!(trend_of(&[0.5, 0.5]), Trend::Constant);
        assert_eq!(trend_of(&[0.6, 0.5, 0.4]), Trend::Decreasing);
        assert_eq!(trend_of(&[0.5, 0.6, 0.4]), Trend::Mixed);
    }

    #[test]
    fn power_law_recovers_exact_curve() {
        let pts: Vec<(u64, f64)> = [4u64, 8, 16, 32, 64]
            .iter()
            .map(|&k| (k, 0.59 - 0.3 * (k as f64).powf(-0.75)))
            .collect();
        let f = power_law_fit(&pts).unwrap();
        assert!((f.b - 0.75).abs() < 1e-9);
        assert!((f.p_c - 0.59).abs() < 1e-9);
        assert!((f.a + 0.3).abs() < 1e-9);
    }
}
