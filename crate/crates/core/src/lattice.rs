//! Geometry of `Z^d` restricted to the L1 ball.
//!
//! Coordinates are `i64` with checked arithmetic. Axes are zero-based in the
//! API (`0..d`); textual output uses the one-based `up_i` / `down_i` names.

use std::fmt;

use num_bigint::BigUint;
use num_traits::{One, Zero};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LatticeError {
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("vertex has {got} coordinates, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("axis {axis} out of range for d = {d}")]
    AxisOutOfRange { axis: usize, d: usize },
    #[error("coordinate overflow")]
    Overflow,
}

/// Number of lattice dimensions, always at least 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Dimension(usize);

impl Dimension {
    pub fn new(d: usize) -> Result<Self, LatticeError> {
        if d == 0 {
            return Err(LatticeError::ZeroDimension);
        }
        Ok(Dimension(d))
    }

    #[inline]
    pub fn get(self) -> usize {
        self.0
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sign {
    Up,
    Down,
}

impl Sign {
    #[inline]
    pub fn delta(self) -> i64 {
        match self {
            Sign::Up => 1,
            Sign::Down => -1,
        }
    }
}

/// A unit step along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DirectionStep {
    axis: usize,
    sign: Sign,
}

impl DirectionStep {
    pub fn new(d: Dimension, axis: usize, sign: Sign) -> Result<Self, LatticeError> {
        if axis >= d.get() {
            return Err(LatticeError::AxisOutOfRange { axis, d: d.get() });
        }
        Ok(DirectionStep { axis, sign })
    }

    pub fn axis(&self) -> usize {
        self.axis
    }

    pub fn sign(&self) -> Sign {
        self.sign
    }
}

impl fmt::Display for DirectionStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.sign {
            Sign::Up => write!(f, "up_{}", self.axis + 1),
            Sign::Down => write!(f, "down_{}", self.axis + 1),
        }
    }
}

/// A point of `Z^d`; the zero vector is the origin `v_0`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Vertex {
    coords: Vec<i64>,
}

impl Vertex {
    pub fn origin(d: Dimension) -> Self {
        Vertex {
            coords: vec![0; d.get()],
        }
    }

    pub fn from_coords(coords: Vec<i64>) -> Result<Self, LatticeError> {
        if coords.is_empty() {
            return Err(LatticeError::ZeroDimension);
        }
        Ok(Vertex { coords })
    }

    pub fn dim(&self) -> Dimension {
        Dimension(self.coords.len())
    }

    pub fn coords(&self) -> &[i64] {
        &self.coords
    }

    pub fn is_origin(&self) -> bool {
        self.coords.iter().all(|&a| a == 0)
    }

    /// `‖v‖ = Σ |a_i(v)|`.
    pub fn l1_norm(&self) -> u64 {
        l1_norm(self)
    }

    pub fn step(&self, step: DirectionStep) -> Result<Vertex, LatticeError> {
        if step.axis >= self.coords.len() {
            return Err(LatticeError::AxisOutOfRange {
                axis: step.axis,
                d: self.coords.len(),
            });
        }
        let mut coords = self.coords.clone();
        coords[step.axis] = coords[step.axis]
            .checked_add(step.sign.delta())
            .ok_or(LatticeError::Overflow)?;
        Ok(Vertex { coords })
    }
}

impl fmt::Display for Vertex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, a) in self.coords.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, ")")
    }
}

pub fn l1_norm(v: &Vertex) -> u64 {
    v.coords.iter().map(|a| a.unsigned_abs()).sum()
}

/// Neighbors of a vertex split into up-step and down-step halves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighborhood {
    pub up: Vec<Vertex>,
    pub down: Vec<Vertex>,
}

impl Neighborhood {
    pub fn len(&self) -> usize {
        self.up.len() + self.down.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vertex> {
        self.up.iter().chain(self.down.iter())
    }
}

/// The norm-increasing step along `axis` at `v`: `+1` when `a_i(v) >= 0`.
pub fn up_step_at(v: &Vertex, axis: usize) -> DirectionStep {
    let sign = if v.coords[axis] >= 0 {
        Sign::Up
    } else {
        Sign::Down
    };
    DirectionStep { axis, sign }
}

/// All `2d` neighbors. The up half holds the step along each axis that raises
/// `‖v‖` by one; the down half holds the opposite steps.
pub fn neighbors(v: &Vertex) -> Result<Neighborhood, LatticeError> {
    let d = v.coords.len();
    let mut up = Vec::with_capacity(d);
    let mut down = Vec::with_capacity(d);
    for axis in 0..d {
        let s = up_step_at(v, axis);
        up.push(v.step(s)?);
        let opposite = DirectionStep {
            axis,
            sign: match s.sign {
                Sign::Up => Sign::Down,
                Sign::Down => Sign::Up,
            },
        };
        down.push(v.step(opposite)?);
    }
    Ok(Neighborhood { up, down })
}

/// Neighbors with the fixed-sign convention: up is always `+up_i`.
pub fn fixed_sign_neighbors(v: &Vertex) -> Result<Neighborhood, LatticeError> {
    let d = v.coords.len();
    let mut up = Vec::with_capacity(d);
    let mut down = Vec::with_capacity(d);
    for axis in 0..d {
        up.push(v.step(DirectionStep {
            axis,
            sign: Sign::Up,
        })?);
        down.push(v.step(DirectionStep {
            axis,
            sign: Sign::Down,
        })?);
    }
    Ok(Neighborhood { up, down })
}

/// Which reading of the arc `A_k` a query uses.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, Default, serde::Serialize, serde::Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum ArcMode {
    /// Up-step closure of the basis: `{v : v >= 0, ‖v‖ = k}`.
    #[default]
    Face,
    /// The whole L1 sphere `{v : ‖v‖ = k}`.
    Sphere,
}

impl fmt::Display for ArcMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ArcMode::Face => "face",
            ArcMode::Sphere => "sphere",
        })
    }
}

impl std::str::FromStr for ArcMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "face" => Ok(ArcMode::Face),
            "sphere" => Ok(ArcMode::Sphere),
            other => Err(format!("unknown arc mode '{other}' (expected face|sphere)")),
        }
    }
}

/// Membership in the sphere `‖v‖ = k`.
pub fn arc_contains(v: &Vertex, k: u64) -> bool {
    v.l1_norm() == k
}

/// Membership in the positive face of the arc.
pub fn arc_face_contains(v: &Vertex, k: u64) -> bool {
    v.coords.iter().all(|&a| a >= 0) && v.l1_norm() == k
}

pub fn arc_mode_contains(mode: ArcMode, v: &Vertex, k: u64) -> bool {
    match mode {
        ArcMode::Face => arc_face_contains(v, k),
        ArcMode::Sphere => arc_contains(v, k),
    }
}

pub(crate) fn binomial(n: u64, r: u64) -> BigUint {
    if r > n {
        return BigUint::zero();
    }
    let r = r.min(n - r);
    let mut acc = BigUint::one();
    for i in 0..r {
        acc *= n - i;
        acc /= i + 1;
    }
    acc
}

/// `|{v : ‖v‖ = k}|`. A vertex with exactly `j` nonzero coordinates is fixed by
/// choosing the axes, the signs and a composition of `k` into `j` parts.
pub fn arc_size(d: Dimension, k: u64) -> BigUint {
    if k == 0 {
        return BigUint::one();
    }
    let d = d.get() as u64;
    (1..=d.min(k))
        .map(|j| (BigUint::one() << j) * binomial(d, j) * binomial(k - 1, j - 1))
        .sum()
}

/// `|{v >= 0 : ‖v‖ = k}|`, the number of weak compositions of `k` into `d` parts.
pub fn arc_face_size(d: Dimension, k: u64) -> BigUint {
    binomial(k + d.get() as u64 - 1, d.get() as u64 - 1)
}

/// The ball `Z_k^d = {v : ‖v‖ <= k}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BallSpec {
    pub d: Dimension,
    pub k: u64,
}

impl BallSpec {
    pub fn new(d: Dimension, k: u64) -> Self {
        BallSpec { d, k }
    }

    pub fn contains(&self, v: &Vertex) -> bool {
        v.coords.len() == self.d.get() && v.l1_norm() <= self.k
    }

    /// Number of sites, `Σ_{j<=k} |A_j|`.
    pub fn size(&self) -> BigUint {
        (0..=self.k).map(|j| arc_size(self.d, j)).sum()
    }

    /// Every site of the ball in lexicographic order of the coordinate vector.
    pub fn vertices(&self) -> Vec<Vertex> {
        let d = self.d.get();
        let k = self.k as i64;
        let mut out = Vec::new();
        let mut coords = vec![0i64; d];
        fn fill(axis: usize, budget: i64, coords: &mut Vec<i64>, out: &mut Vec<Vertex>) {
            if axis == coords.len() {
                out.push(Vertex {
                    coords: coords.clone(),
                });
                return;
            }
            for a in -budget..=budget {
                coords[axis] = a;
                fill(axis + 1, budget - a.abs(), coords, out);
            }
            coords[axis] = 0;
        }
        fill(0, k, &mut coords, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(c: &[i64]) -> Vertex {
        Vertex::from_coords(c.to_vec()).unwrap()
    }

    fn dim(d: usize) -> Dimension {
        Dimension::new(d).unwrap()
    }

    fn brute_arc(d: usize, k: i64) -> u64 {
        let mut count = 0;
        let mut idx = vec![-k; d];
        loop {
            if idx.iter().map(|a| a.abs()).sum::<i64>() == k {
                count += 1;
            }
            let mut i = 0;
            loop {
                if i == d {
                    return count;
                }
                idx[i] += 1;
                if idx[i] <= k {
                    break;
                }
                idx[i] = -k;
                i += 1;
            }
        }
    }

    #[test]
    fn norm_examples() {
        assert_eq!(l1_norm(&v(&[0, 0])), 0);
        assert_eq!(l1_norm(&v(&[2, 2])), 4);
        assert_eq!(l1_norm(&v(&[-3, 1, 0, 2])), 6);
    }

    #[test]
    fn zero_dimension_rejected() {
        assert_eq!(Dimension::new(0), Err(LatticeError::ZeroDimension));
        assert!(Vertex::from_coords(vec![]).is_err());
    }

    #[test]
    fn neighbors_line() {
        let n = neighbors(&v(&[0])).unwrap();
        assert_eq!(n.up, vec![v(&[1])]);
        assert_eq!(n.down, vec![v(&[-1])]);
    }

    #[test]
    fn neighbors_origin_plane() {
        let n = neighbors(&v(&[0, 0])).unwrap();
        assert_eq!(n.up, vec![v(&[1, 0]), v(&[0, 1])]);
        assert_eq!(n.down, vec![v(&[-1, 0]), v(&[0, -1])]);
    }

    #[test]
    fn neighbors_mixed_signs() {
        let c = v(&[1, -1, 0]);
        let n = neighbors(&c).unwrap();
        assert_eq!(n.len(), 6);
        for w in n.iter() {
            let dist: u64 = w
                .coords()
                .iter()
                .zip(c.coords())
                .map(|(a, b)| (a - b).unsigned_abs())
                .sum();
            assert_eq!(dist, 1);
        }
        assert!(n.up.iter().all(|w| w.l1_norm() == 3));
        // At a zero coordinate both directions raise the norm.
        assert_eq!(n.down[0].l1_norm(), 1);
        assert_eq!(n.down[1].l1_norm(), 1);
        assert_eq!(n.down[2].l1_norm(), 3);
        // down_2 at a_2 = -1 moves further from the origin.
        assert!(n.up.contains(&v(&[1, -2, 0])));
    }

    #[test]
    fn fixed_sign_neighbors_use_positive_steps() {
        let n = fixed_sign_neighbors(&v(&[-1, 0])).unwrap();
        assert_eq!(n.up, vec![v(&[0, 0]), v(&[-1, 1])]);
    }

    #[test]
    fn overflow_detected() {
        let c = v(&[i64::MAX]);
        let s = DirectionStep::new(dim(1), 0, Sign::Up).unwrap();
        assert_eq!(c.step(s), Err(LatticeError::Overflow));
        assert!(DirectionStep::new(dim(1), 1, Sign::Up).is_err());
    }

    #[test]
    fn arc_membership() {
        assert!(arc_contains(&v(&[0, 0]), 0));
        assert!(arc_contains(&v(&[2, 2]), 4));
        assert!(!arc_contains(&v(&[1, 1]), 4));
        assert!(arc_contains(&v(&[-2, 2]), 4));
        assert!(!arc_face_contains(&v(&[-2, 2]), 4));
        assert!(arc_face_contains(&v(&[2, 2]), 4));
    }

    #[test]
    fn arc_size_examples() {
        assert_eq!(arc_size(dim(2), 0), BigUint::from(1u32));
        assert_eq!(arc_size(dim(2), 1), BigUint::from(4u32));
        assert_eq!(arc_size(dim(2), 4), BigUint::from(16u32));
        assert_eq!(arc_size(dim(3), 2), BigUint::from(18u32));
    }

    #[test]
    fn arc_size_matches_brute_force() {
        for d in 1..=4 {
            for k in 0..=8 {
                assert_eq!(
                    arc_size(dim(d), k as u64),
                    BigUint::from(brute_arc(d, k)),
                    "d={d} k={k}"
                );
            }
        }
    }

    #[test]
    fn face_size_matches_up_step_closure() {
        // Build A_k from A_1 = basis by repeated +up_i closure.
        for d in 1..=4 {
            let mut arc = std::collections::BTreeSet::new();
            arc.insert(Vertex::origin(dim(d)));
            for k in 1..=6u64 {
                let mut next = std::collections::BTreeSet::new();
                for w in &arc {
                    for u in fixed_sign_neighbors(w).unwrap().up {
                        next.insert(u);
                    }
                }
                arc = next;
                assert!(arc.iter().all(|w| arc_face_contains(w, k)));
                assert_eq!(BigUint::from(arc.len()), arc_face_size(dim(d), k));
            }
        }
    }

    #[test]
    fn ball_vertices_are_lexicographic_and_complete() {
        for d in 1..=3 {
            for k in 0..=4 {
                let ball = BallSpec::new(dim(d), k);
                let vs = ball.vertices();
                assert!(vs.windows(2).all(|w| w[0].coords() < w[1].coords()));
                assert!(vs.iter().all(|w| ball.contains(w)));
                assert_eq!(BigUint::from(vs.len()), ball.size());
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn vertex() -> impl Strategy<Value = Vertex> {
            prop::collection::vec(-20i64..=20, 1..=5).prop_map(|c| Vertex::from_coords(c).unwrap())
        }

        proptest! {
            #[test]
            fn norm_zero_iff_origin(w in vertex()) {
                prop_assert_eq!(w.l1_norm() == 0, w.is_origin());
            }

            #[test]
            fn neighbor_norms_differ_by_one(w in vertex()) {
                let n = neighbors(&w).unwrap();
                prop_assert_eq!(n.len(), 2 * w.coords().len());
                prop_assert!(!n.iter().any(|x| x == &w));
                let mut all: Vec<_> = n.iter().cloned().collect();
                all.sort();
                all.dedup();
                prop_assert_eq!(all.len(), 2 * w.coords().len());
                for u in &n.up {
                    prop_assert_eq!(u.l1_norm(), w.l1_norm() + 1);
                }
                for x in n.iter() {
                    prop_assert_eq!(x.l1_norm().abs_diff(w.l1_norm()), 1);
                }
            }

            #[test]
            fn arc_membership_invariant_under_signed_permutations(
                w in vertex(),
                flips in prop::collection::vec(any::<bool>(), 5),
                rot in 0usize..5,
            ) {
                let mut c = w.coords().to_vec();
                for (a, f) in c.iter_mut().zip(&flips) {
                    if *f { *a = -*a; }
                }
                let n = c.len();
                c.rotate_left(rot % n);
                let image = Vertex::from_coords(c).unwrap();
                prop_assert_eq!(image.l1_norm(), w.l1_norm());
            }
        }
    }
}
