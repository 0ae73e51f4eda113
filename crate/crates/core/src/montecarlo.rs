//! Bernoulli site percolation on the L1 ball `Z_k^d`.
//!
//! A trial succeeds when the origin reaches an open site of `A_k = {‖v‖ = k}`
//! through open sites. Site `i` (lexicographic index within the ball) of trial
//! `t` is open iff `site_uniform(seed, t, i) < p`.

use std::collections::{HashMap, VecDeque};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{BallSpec, Dimension};
use crate::rng::{derive_seed, site_uniform};
use crate::unionfind::UnionFind;

pub const WILSON_Z: f64 = 1.959_963_984_540_054;
const NONE: u32 = u32::MAX;
/// Above this many sites the ball is not materialised.
pub const MAX_BALL_SITES: usize = 50_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MonteCarloError {
    #[error("probability {0} outside [0, 1]")]
    ProbabilityOutOfRange(f64),
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("trials must be at least 1")]
    NoTrials,
    #[error("probability grid is empty")]
    EmptyGrid,
    #[error("ball Z_{k}^{d} is too large to simulate")]
    BallTooLarge { d: usize, k: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub d: usize,
    pub k: u64,
    pub p: f64,
    pub trials: u64,
    pub seed: u64,
    pub condition_origin_open: bool,
}

impl TrialSpec {
    pub fn new(d: Dimension, k: u64, p: f64, trials: u64, seed: u64) -> Self {
        TrialSpec {
            d: d.get(),
            k,
            p,
            trials,
            seed,
            condition_origin_open: true,
        }
    }

    pub fn dimension(&self) -> Result<Dimension, MonteCarloError> {
        Dimension::new(self.d).map_err(|_| MonteCarloError::ZeroDimension)
    }

    pub fn validate(&self) -> Result<(), MonteCarloError> {
        self.dimension()?;
        if !(0.0..=1.0).contains(&self.p) {
            return Err(MonteCarloError::ProbabilityOutOfRange(self.p));
        }
        if self.trials == 0 {
            return Err(MonteCarloError::NoTrials);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaEstimate {
    pub spec: TrialSpec,
    pub successes: u64,
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub elapsed: f64,
}

impl ThetaEstimate {
    /// Equality on everything except wall-clock time.
    pub fn same_outcome(&self, other: &ThetaEstimate) -> bool {
        self.spec == other.spec
            && self.successes == other.successes
            && self.point.to_bits() == other.point.to_bits()
            && self.ci_low.to_bits() == other.ci_low.to_bits()
            && self.ci_high.to_bits() == other.ci_high.to_bits()
    }

    /// Standard error implied by the 95% Wilson interval.
    pub fn wilson_sigma(&self) -> f64 {
        (self.ci_high - self.ci_low) / (2.0 * WILSON_Z)
    }
}

/// 95% Wilson score interval for `successes` out of `n`.
pub fn wilson_interval(successes: u64, n: u64) -> (f64, f64) {
    let n_f = n as f64;
    let phat = successes as f64 / n_f;
    let z2 = WILSON_Z * WILSON_Z;
    let denom = 1.0 + z2 / n_f;
    let centre = (phat + z2 / (2.0 * n_f)) / denom;
    let half = WILSON_Z * (phat * (1.0 - phat) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    let lo = (centre - half).max(0.0);
    let hi = (centre + half).min(1.0);
    // Rounding can push a bound past the point estimate at 0 or 1.
    (lo.min(phat), hi.max(phat))
}

/// Site table of the ball: lexicographic order, norms and a flat neighbor list.
#[derive(Debug, Clone)]
pub struct BallLattice {
    d: usize,
    k: u64,
    norm: Vec<u32>,
    adjacency: Vec<u32>,
    origin: u32,
}

impl BallLattice {
    pub fn new(d: Dimension, k: u64) -> Result<Self, MonteCarloError> {
        let spec = BallSpec::new(d, k);
        let size = spec.size();
        if size > num_bigint::BigUint::from(MAX_BALL_SITES) {
            return Err(MonteCarloError::BallTooLarge { d: d.get(), k });
        }
        let sites = spec.vertices();
        let index: HashMap<&[i64], u32> = sites
            .iter()
            .enumerate()
            .map(|(i, v)| (v.coords(), i as u32))
            .collect();
        let d = d.get();
        let mut adjacency = vec![NONE; sites.len() * 2 * d];
        let mut norm = Vec::with_capacity(sites.len());
        let mut scratch = vec![0i64; d];
        for (i, v) in sites.iter().enumerate() {
            norm.push(v.l1_norm() as u32);
            for axis in 0..d {
                for (slot, delta) in [(0usize, 1i64), (1, -1)] {
                    scratch.copy_from_slice(v.coords());
                    scratch[axis] += delta;
                    if let Some(&j) = index.get(scratch.as_slice()) {
                        adjacency[i * 2 * d + 2 * axis + slot] = j;
                    }
                }
            }
        }
        let origin = index[vec![0i64; d].as_slice()];
        Ok(BallLattice {
            d,
            k,
            norm,
            adjacency,
            origin,
        })
    }

    pub fn num_sites(&self) -> usize {
        self.norm.len()
    }

    pub fn origin(&self) -> u32 {
        self.origin
    }

    pub fn norm(&self, site: u32) -> u32 {
        self.norm[site as usize]
    }

    pub fn neighbors(&self, site: u32) -> impl Iterator<Item = u32> + '_ {
        let w = 2 * self.d;
        self.adjacency[site as usize * w..(site as usize + 1) * w]
            .iter()
            .copied()
            .filter(|&j| j != NONE)
    }

    fn on_arc(&self, site: u32) -> bool {
        self.norm[site as usize] as u64 == self.k
    }
}

/// Per-thread BFS state reused across trials.
#[derive(Debug, Default)]
pub struct Scratch {
    stamp: Vec<u32>,
    epoch: u32,
    queue: VecDeque<u32>,
}

impl Scratch {
    fn begin(&mut self, n: usize) {
        if self.stamp.len() != n {
            self.stamp = vec![0; n];
            self.epoch = 0;
        }
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.stamp.fill(0);
            self.epoch = 1;
        }
        self.queue.clear();
    }
}

fn site_open(spec: &TrialSpec, trial: u64, site: u32) -> bool {
    site_uniform(spec.seed, trial, site as u64) < spec.p
}

fn origin_open(spec: &TrialSpec, ball: &BallLattice, trial: u64) -> bool {
    spec.condition_origin_open || site_open(spec, trial, ball.origin)
}

/// One trial by breadth-first search over open sites, sampling lazily.
pub fn run_trial_bfs(
    ball: &BallLattice,
    spec: &TrialSpec,
    trial: u64,
    scratch: &mut Scratch,
) -> bool {
    if !origin_open(spec, ball, trial) {
        return false;
    }
    if ball.on_arc(ball.origin) {
        return true;
    }
    scratch.begin(ball.num_sites());
    let epoch = scratch.epoch;
    scratch.stamp[ball.origin as usize] = epoch;
    scratch.queue.push_back(ball.origin);
    while let Some(v) = scratch.queue.pop_front() {
        for w in ball.neighbors(v) {
            if scratch.stamp[w as usize] == epoch {
                continue;
            }
            scratch.stamp[w as usize] = epoch;
            if site_open(spec, trial, w) {
                if ball.on_arc(w) {
                    return true;
                }
                scratch.queue.push_back(w);
            }
        }
    }
    false
}

/// One trial by sampling every site and labelling open clusters.
pub fn run_trial_union_find(ball: &BallLattice, spec: &TrialSpec, trial: u64) -> bool {
    let n = ball.num_sites();
    let open: Vec<bool> = (0..n as u32)
        .map(|s| {
            if s == ball.origin {
                origin_open(spec, ball, trial)
            } else {
                site_open(spec, trial, s)
            }
        })
        .collect();
    if !open[ball.origin as usize] {
        return false;
    }
    let mut uf = UnionFind::new(n);
    for s in 0..n as u32 {
        if !open[s as usize] {
            continue;
        }
        for t in ball.neighbors(s) {
            if t > s && open[t as usize] {
                uf.union(s, t);
            }
        }
    }
    (0..n as u32).any(|s| open[s as usize] && ball.on_arc(s) && uf.connected(s, ball.origin))
}

/// Convenience single trial that builds its own ball and scratch space.
pub fn run_trial(spec: &TrialSpec, trial_index: u64) -> Result<bool, MonteCarloError> {
    spec.validate()?;
    let ball = BallLattice::new(spec.dimension()?, spec.k)?;
    Ok(run_trial_bfs(
        &ball,
        spec,
        trial_index,
        &mut Scratch::default(),
    ))
}

/// Successes over the trial indices `range`.
pub fn count_successes(ball: &BallLattice, spec: &TrialSpec, range: std::ops::Range<u64>) -> u64 {
    range
        .into_par_iter()
        .map_init(Scratch::default, |scratch, t| {
            run_trial_bfs(ball, spec, t, scratch) as u64
        })
        .sum()
}

pub fn estimate_from_counts(spec: TrialSpec, successes: u64, elapsed: f64) -> ThetaEstimate {
    let (ci_low, ci_high) = wilson_interval(successes, spec.trials);
    ThetaEstimate {
        spec,
        successes,
        point: successes as f64 / spec.trials as f64,
        ci_low,
        ci_high,
        elapsed,
    }
}

pub fn estimate_theta_on(
    ball: &BallLattice,
    spec: &TrialSpec,
) -> Result<ThetaEstimate, MonteCarloError> {
    spec.validate()?;
    let start = Instant::now();
    let successes = count_successes(ball, spec, 0..spec.trials);
    Ok(estimate_from_counts(
        *spec,
        successes,
        start.elapsed().as_secs_f64(),
    ))
}

pub fn estimate_theta(spec: &TrialSpec) -> Result<ThetaEstimate, MonteCarloError> {
    spec.validate()?;
    let d = spec.dimension()?;
    let ball = BallLattice::new(d, spec.k)?;
    estimate_theta_on(&ball, spec)
}

/// One estimate per grid point; point `i` runs with seed `derive_seed(seed, i)`.
pub fn sweep_theta(
    base: &TrialSpec,
    p_grid: &[f64],
) -> Result<Vec<ThetaEstimate>, MonteCarloError> {
    if p_grid.is_empty() {
        return Err(MonteCarloError::EmptyGrid);
    }
    for &p in p_grid {
        TrialSpec { p, ..*base }.validate()?;
    }
    let d = base.dimension()?;
    let ball = BallLattice::new(d, base.k)?;
    p_grid
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let spec = TrialSpec {
                p,
                seed: derive_seed(base.seed, i as u64),
                ..*base
            };
            estimate_theta_on(&ball, &spec)
        })
        .collect()
}

/// Success indicators under shared variates: `out[t][j]` is trial `t` at
/// `p_grid[j]`, every grid point reading the same uniforms as `base.seed`.
pub fn coupled_sweep(base: &TrialSpec, p_grid: &[f64]) -> Result<Vec<Vec<bool>>, MonteCarloError> {
    if p_grid.is_empty() {
        return Err(MonteCarloError::EmptyGrid);
    }
    for &p in p_grid {
        TrialSpec { p, ..*base }.validate()?;
    }
    let d = base.dimension()?;
    let ball = BallLattice::new(d, base.k)?;
    Ok((0..base.trials)
        .into_par_iter()
        .map_init(Scratch::default, |scratch, t| {
            p_grid
                .iter()
                .map(|&p| run_trial_bfs(&ball, &TrialSpec { p, ..*base }, t, scratch))
                .collect()
        })
        .collect())
}

/// `1 - (1 - p^k)^2`, the exact d = 1 connection probability given an open origin.
pub fn theta_line_exact(p: f64, k: u64) -> f64 {
    let run = p.powi(k as i32);
    1.0 - (1.0 - run) * (1.0 - run)
}
