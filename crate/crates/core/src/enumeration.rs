//! Exact census of self-avoiding walks from the origin.
//!
//! The production engine is a depth-first traversal over a flat visited grid.
//! The walk forest is cut at depth two and the subtrees are counted in
//! parallel; partial tallies merge by exact addition, so results do not depend
//! on the worker count.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};

use num_bigint::BigUint;
use num_traits::{One, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{ArcMode, Dimension};

pub const DEFAULT_NODE_CAP: u64 = 1_000_000_000;
const MAX_GRID_CELLS: usize = 1 << 28;
const SPLIT_DEPTH: usize = 2;
const FLUSH_EVERY: u64 = 1 << 12;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EnumerationError {
    #[error("node-expansion budget of {cap} exceeded")]
    ResourceBudgetExceeded { cap: u64 },
    #[error("visited grid of {cells} cells is too large for this query")]
    GridTooLarge { cells: u128 },
    #[error("invalid query: {0}")]
    InvalidQuery(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EngineConfig {
    /// Maximum number of DFS node expansions a single traversal may perform.
    pub node_cap: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            node_cap: DEFAULT_NODE_CAP,
        }
    }
}

/// Walks of length `k + 2m` from the origin that end on the arc `A_k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SawQuery {
    pub d: Dimension,
    pub k: u64,
    pub m: u64,
    /// Keep every visited vertex inside `Z_r^d` when set.
    pub ball_radius: Option<u64>,
    pub arc: ArcMode,
}

impl SawQuery {
    pub fn new(d: Dimension, k: u64, m: u64) -> Self {
        SawQuery {
            d,
            k,
            m,
            ball_radius: None,
            arc: ArcMode::Face,
        }
    }

    pub fn length(&self) -> u64 {
        self.k + 2 * self.m
    }

    fn validate(&self) -> Result<(), EnumerationError> {
        if let Some(r) = self.ball_radius {
            if r < self.k {
                return Err(EnumerationError::InvalidQuery(format!(
                    "ball radius {r} is smaller than arc radius {}",
                    self.k
                )));
            }
        }
        Ok(())
    }
}

/// `d^k` counted as paths: a layer-by-layer tally over the positive face using
/// only the fixed-sign steps `+up_i`.
pub fn count_monotone_paths(d: Dimension, k: u64) -> BigUint {
    let mut layer: BTreeMap<Vec<u64>, BigUint> = BTreeMap::new();
    layer.insert(vec![0; d.get()], BigUint::one());
    for _ in 0..k {
        let mut next: BTreeMap<Vec<u64>, BigUint> = BTreeMap::new();
        for (v, ways) in &layer {
            for axis in 0..d.get() {
                let mut w = v.clone();
                w[axis] += 1;
                *next.entry(w).or_insert_with(BigUint::zero) += ways;
            }
        }
        layer = next;
    }
    layer.into_values().sum()
}

/// Endpoint histogram of every SAW of one length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Census {
    pub d: Dimension,
    pub length: u64,
    pub ball_radius: Option<u64>,
    /// `sphere[j]`: walks ending at norm `j`.
    pub sphere: Vec<BigUint>,
    /// `face[j]`: walks ending at norm `j` with every coordinate `>= 0`.
    pub face: Vec<BigUint>,
}

impl Census {
    pub fn total(&self) -> BigUint {
        self.sphere.iter().sum()
    }

    pub fn ending_on(&self, k: u64, arc: ArcMode) -> BigUint {
        let table = match arc {
            ArcMode::Face => &self.face,
            ArcMode::Sphere => &self.sphere,
        };
        table.get(k as usize).cloned().unwrap_or_default()
    }
}

#[derive(Clone, Copy)]
struct Target {
    k: u64,
}

struct Grid {
    d: usize,
    radius: i64,
    strides: Vec<usize>,
    cells: usize,
}

impl Grid {
    fn new(d: usize, radius: u64) -> Result<Self, EnumerationError> {
        let side = 2 * radius as u128 + 1;
        let cells = side.checked_pow(d as u32).unwrap_or(u128::MAX);
        if cells > MAX_GRID_CELLS as u128 {
            return Err(EnumerationError::GridTooLarge { cells });
        }
        let mut strides = Vec::with_capacity(d);
        let mut s = 1usize;
        for _ in 0..d {
            strides.push(s);
            s *= side as usize;
        }
        Ok(Grid {
            d,
            radius: radius as i64,
            strides,
            cells: cells as usize,
        })
    }

    fn centre(&self) -> usize {
        self.strides.iter().map(|s| s * self.radius as usize).sum()
    }
}

struct Budget<'a> {
    cap: u64,
    spent: &'a AtomicU64,
    abort: &'a AtomicBool,
}

impl Budget<'_> {
    fn charge(&self, n: u64) -> bool {
        let total = self.spent.fetch_add(n, Ordering::Relaxed) + n;
        if total > self.cap {
            self.abort.store(true, Ordering::Relaxed);
            return false;
        }
        !self.abort.load(Ordering::Relaxed)
    }
}

struct Walker<'g, 'b> {
    grid: &'g Grid,
    budget: &'b Budget<'b>,
    length: u64,
    ball_radius: Option<u64>,
    target: Option<Target>,
    visited: Vec<bool>,
    coords: Vec<i64>,
    pos: usize,
    norm: u64,
    negatives: usize,
    sphere: Vec<u64>,
    face: Vec<u64>,
    pending: u64,
    aborted: bool,
}

impl<'g, 'b> Walker<'g, 'b> {
    fn new(
        grid: &'g Grid,
        budget: &'b Budget<'b>,
        length: u64,
        ball_radius: Option<u64>,
        target: Option<Target>,
    ) -> Self {
        let mut visited = vec![false; grid.cells];
        let pos = grid.centre();
        visited[pos] = true;
        Walker {
            grid,
            budget,
            length,
            ball_radius,
            target,
            visited,
            coords: vec![0; grid.d],
            pos,
            norm: 0,
            negatives: 0,
            sphere: vec![0; length as usize + 1],
            face: vec![0; length as usize + 1],
            pending: 0,
            aborted: false,
        }
    }

    /// Applies a step; returns false (and leaves state untouched) if the target
    /// cell is already on the walk or outside the confinement ball.
    fn push(&mut self, axis: usize, up: bool) -> bool {
        let a = self.coords[axis];
        let b = if up { a + 1 } else { a - 1 };
        let norm = self.norm - a.unsigned_abs() + b.unsigned_abs();
        if let Some(r) = self.ball_radius {
            if norm > r {
                return false;
            }
        }
        let next = if up {
            self.pos + self.grid.strides[axis]
        } else {
            self.pos - self.grid.strides[axis]
        };
        if self.visited[next] {
            return false;
        }
        self.visited[next] = true;
        self.pos = next;
        self.coords[axis] = b;
        self.norm = norm;
        if a < 0 && b >= 0 {
            self.negatives -= 1;
        } else if a >= 0 && b < 0 {
            self.negatives += 1;
        }
        true
    }

    fn pop(&mut self, axis: usize, up: bool) {
        self.visited[self.pos] = false;
        let b = self.coords[axis];
        let a = if up { b - 1 } else { b + 1 };
        self.pos = if up {
            self.pos - self.grid.strides[axis]
        } else {
            self.pos + self.grid.strides[axis]
        };
        self.coords[axis] = a;
        self.norm = self.norm - b.unsigned_abs() + a.unsigned_abs();
        if a < 0 && b >= 0 {
            self.negatives += 1;
        } else if a >= 0 && b < 0 {
            self.negatives -= 1;
        }
    }

    fn dfs(&mut self, depth: u64) {
        if self.aborted {
            return;
        }
        self.pending += 1;
        if self.pending >= FLUSH_EVERY {
            let n = std::mem::take(&mut self.pending);
            if !self.budget.charge(n) {
                self.aborted = true;
                return;
            }
        }
        let remaining = self.length - depth;
        if let Some(t) = self.target {
            if self.norm.abs_diff(t.k) > remaining {
                return;
            }
        }
        if remaining == 0 {
            let j = self.norm as usize;
            self.sphere[j] += 1;
            if self.negatives == 0 {
                self.face[j] += 1;
            }
            return;
        }
        for axis in 0..self.grid.d {
            for up in [true, false] {
                if self.push(axis, up) {
                    self.dfs(depth + 1);
                    self.pop(axis, up);
                }
            }
        }
    }

    fn finish(mut self) -> Tally {
        let n = std::mem::take(&mut self.pending);
        if self.aborted || !self.budget.charge(n) {
            return Err(());
        }
        Ok((self.sphere, self.face))
    }
}

type Prefix = Vec<(usize, bool)>;
type Tally = Result<(Vec<u64>, Vec<u64>), ()>;

/// All SAW prefixes of the given depth, in a fixed order.
fn prefixes(grid: &Grid, depth: u64, ball_radius: Option<u64>) -> Vec<Prefix> {
    let spent = AtomicU64::new(0);
    let abort = AtomicBool::new(false);
    let budget = Budget {
        cap: u64::MAX,
        spent: &spent,
        abort: &abort,
    };
    let mut w = Walker::new(grid, &budget, depth, ball_radius, None);
    let mut out = Vec::new();
    let mut stack: Prefix = Vec::new();
    fn rec(w: &mut Walker, depth: u64, stack: &mut Prefix, out: &mut Vec<Prefix>) {
        if stack.len() as u64 == depth {
            out.push(stack.clone());
            return;
        }
        for axis in 0..w.grid.d {
            for up in [true, false] {
                if w.push(axis, up) {
                    stack.push((axis, up));
                    rec(w, depth, stack, out);
                    stack.pop();
                    w.pop(axis, up);
                }
            }
        }
    }
    rec(&mut w, depth, &mut stack, &mut out);
    out
}

fn run_census(
    d: Dimension,
    length: u64,
    ball_radius: Option<u64>,
    target: Option<Target>,
    cfg: &EngineConfig,
) -> Result<Census, EnumerationError> {
    let radius = ball_radius.map_or(length, |r| r.min(length)).max(1);
    let grid = Grid::new(d.get(), radius)?;
    let split = length.min(SPLIT_DEPTH as u64);
    let roots = prefixes(&grid, split, ball_radius);

    let spent = AtomicU64::new(0);
    let abort = AtomicBool::new(false);
    let budget = Budget {
        cap: cfg.node_cap,
        spent: &spent,
        abort: &abort,
    };
    // The prefix nodes themselves count as expansions.
    if !budget.charge(roots.len() as u64) {
        return Err(EnumerationError::ResourceBudgetExceeded { cap: cfg.node_cap });
    }

    let partials: Vec<Tally> = roots
        .par_iter()
        .map(|prefix| {
            let mut w = Walker::new(&grid, &budget, length, ball_radius, target);
            for &(axis, up) in prefix {
                let ok = w.push(axis, up);
                debug_assert!(ok);
            }
            w.dfs(split);
            w.finish()
        })
        .collect();

    let n = length as usize + 1;
    let mut sphere = vec![BigUint::zero(); n];
    let mut face = vec![BigUint::zero(); n];
    for part in partials {
        let (s, f) =
            part.map_err(|_| EnumerationError::ResourceBudgetExceeded { cap: cfg.node_cap })?;
        for j in 0..n {
            sphere[j] += s[j];
            face[j] += f[j];
        }
    }
    Ok(Census {
        d,
        length,
        ball_radius,
        sphere,
        face,
    })
}

/// Endpoint-norm histogram of all SAWs of `length` steps.
pub fn saw_census(
    d: Dimension,
    length: u64,
    ball_radius: Option<u64>,
    cfg: &EngineConfig,
) -> Result<Census, EnumerationError> {
    run_census(d, length, ball_radius, None, cfg)
}

/// `n_{k+2m}(A_k)`: SAWs of `k + 2m` steps whose endpoint lies on the arc.
pub fn count_saws_to_arc(q: &SawQuery, cfg: &EngineConfig) -> Result<BigUint, EnumerationError> {
    q.validate()?;
    let census = run_census(q.d, q.length(), q.ball_radius, Some(Target { k: q.k }), cfg)?;
    Ok(census.ending_on(q.k, q.arc))
}

pub fn total_saw_count(
    d: Dimension,
    length: u64,
    cfg: &EngineConfig,
) -> Result<BigUint, EnumerationError> {
    Ok(saw_census(d, length, None, cfg)?.total())
}

/// Exact counts keyed by `(d, k, length)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CountTable {
    entries: BTreeMap<(usize, u64, u64), BigUint>,
}

impl CountTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, d: Dimension, k: u64, length: u64, count: BigUint) {
        self.entries.insert((d.get(), k, length), count);
    }

    /// Stored count, or the structural zero when `length < k` or the parity differs.
    pub fn get(&self, d: Dimension, k: u64, length: u64) -> Option<BigUint> {
        if length < k || (length - k) % 2 == 1 {
            return Some(BigUint::zero());
        }
        self.entries.get(&(d.get(), k, length)).cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(usize, u64, u64), &BigUint)> {
        self.entries.iter()
    }
}

/// Claimed ceiling on `n_{k+2m}(A_k)`: `d^k` for `m <= 1`, `m d^k` beyond.
pub fn paper_bound(d: Dimension, k: u64, m: u64) -> BigUint {
    let dk = BigUint::from(d.get()).pow(k as u32);
    if m <= 1 {
        dk
    } else {
        dk * m
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRow {
    pub d: usize,
    pub k: u64,
    pub m: u64,
    pub length: u64,
    /// Decimal string; absent when the row was not computed.
    pub exact_count: Option<String>,
    pub paper_bound: String,
    pub bound_holds: Option<bool>,
    pub computed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditMetadata {
    pub generated_at: String,
    pub tool_version: String,
    pub arc: ArcMode,
    pub ball_radius: Option<u64>,
    pub node_cap: u64,
    pub endpoint_convention: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub rows: Vec<AuditRow>,
    pub metadata: AuditMetadata,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuditOptions {
    pub arc: ArcMode,
    pub ball_radius: Option<u64>,
    pub engine: EngineConfig,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions {
            arc: ArcMode::Face,
            ball_radius: None,
            engine: EngineConfig::default(),
        }
    }
}

pub const ENDPOINT_CONVENTION: &str =
    "n_{k+2m}(A_k) counts self-avoiding walks of k+2m steps from v_0 whose endpoint v has ||v|| = k";

/// Fills a [`CountTable`] for `k = 1..=k_max`, `m = 0..=m_max` and reports each
/// exact count next to the claimed bound. One census per walk length serves
/// every `k` sharing it; a length that exceeds the budget marks its rows as not
/// computed.
pub fn audit_paper_bounds(
    d: Dimension,
    k_max: u64,
    m_max: u64,
    opts: &AuditOptions,
) -> Result<(AuditReport, CountTable), EnumerationError> {
    if k_max < 1 || m_max < 1 {
        return Err(EnumerationError::InvalidQuery(
            "k_max and m_max must both be at least 1".into(),
        ));
    }
    if let Some(r) = opts.ball_radius {
        if r < k_max {
            return Err(EnumerationError::InvalidQuery(format!(
                "ball radius {r} is smaller than k_max {k_max}"
            )));
        }
    }
    let max_len = k_max + 2 * m_max;
    let mut censuses: BTreeMap<u64, Result<Census, EnumerationError>> = BTreeMap::new();
    for len in 1..=max_len {
        censuses.insert(len, saw_census(d, len, opts.ball_radius, &opts.engine));
    }

    let mut table = CountTable::new();
    let mut rows = Vec::new();
    for k in 1..=k_max {
        for m in 0..=m_max {
            let length = k + 2 * m;
            let bound = paper_bound(d, k, m);
            let row = match &censuses[&length] {
                Ok(c) => {
                    let exact = c.ending_on(k, opts.arc);
                    table.insert(d, k, length, exact.clone());
                    AuditRow {
                        d: d.get(),
                        k,
                        m,
                        length,
                        exact_count: Some(exact.to_string()),
                        paper_bound: bound.to_string(),
                        bound_holds: Some(exact <= bound),
                        computed: true,
                    }
                }
                Err(_) => AuditRow {
                    d: d.get(),
                    k,
                    m,
                    length,
                    exact_count: None,
                    paper_bound: bound.to_string(),
                    bound_holds: None,
                    computed: false,
                },
            };
            rows.push(row);
        }
    }
    let metadata = AuditMetadata {
        generated_at: chrono::Utc::now().to_rfc3339(),
        tool_version: crate::VERSION.to_string(),
        arc: opts.arc,
        ball_radius: opts.ball_radius,
        node_cap: opts.engine.node_cap,
        endpoint_convention: ENDPOINT_CONVENTION.to_string(),
    };
    Ok((AuditReport { rows, metadata }, table))
}
