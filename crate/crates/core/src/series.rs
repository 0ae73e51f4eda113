//! The ψ expressions: the monotone-path term, the bounding series and the
//! series built from exact counts.
//!
//! All expectations are conditioned on the origin being open, so a path of
//! `ℓ` steps contributes `p^ℓ`. Values are `f64`.

use std::fmt;

use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::enumeration::CountTable;
use crate::lattice::Dimension;

pub const PROBABILITY_CONVENTION: &str =
    "expected number of open paths conditioned on v_0 open; an l-step path contributes p^l";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SeriesError {
    #[error("probability {0} outside [0, 1]")]
    ProbabilityOutOfRange(f64),
    #[error("closed form diverges at p = 1")]
    Diverges,
    #[error("truncation index must be at least 1")]
    BadTruncation,
    #[error("count n_{length}(A_{k}) missing for d = {d}")]
    MissingCount { d: usize, k: u64, length: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesKind {
    LowerPsi,
    UpperBound,
    UpperBoundClosed,
    Empirical,
}

impl fmt::Display for SeriesKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SeriesKind::LowerPsi => "lower_psi",
            SeriesKind::UpperBound => "upper_bound",
            SeriesKind::UpperBoundClosed => "upper_bound_closed",
            SeriesKind::Empirical => "empirical",
        })
    }
}

impl std::str::FromStr for SeriesKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "lower_psi" => SeriesKind::LowerPsi,
            "upper_bound" => SeriesKind::UpperBound,
            "upper_bound_closed" => SeriesKind::UpperBoundClosed,
            "empirical" => SeriesKind::Empirical,
            other => return Err(format!("unknown series kind '{other}'")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesValue {
    pub d: usize,
    pub p: f64,
    pub k: u64,
    pub kind: SeriesKind,
    /// Last summed index, where the expression is a truncated sum.
    pub truncation: Option<u64>,
    pub value: f64,
}

fn check_p(p: f64) -> Result<(), SeriesError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(SeriesError::ProbabilityOutOfRange(p));
    }
    Ok(())
}

fn powu(x: f64, n: u64) -> f64 {
    // powi takes i32; k beyond that is far outside any meaningful use.
    x.powi(n.min(i32::MAX as u64) as i32)
}

/// `ψ_k = (pd)^k`.
pub fn psi_lower(d: Dimension, p: f64, k: u64) -> Result<SeriesValue, SeriesError> {
    check_p(p)?;
    Ok(SeriesValue {
        d: d.get(),
        p,
        k,
        kind: SeriesKind::LowerPsi,
        truncation: None,
        value: powu(p * d.get() as f64, k),
    })
}

/// Truncated bound `(dp)^k (1 + Σ_{i=1..I} i p^{2i})` together with its
/// `I → ∞` limit `(dp)^k (1 + p²/(1 − p²)²)`.
pub fn upper_bound_series(
    d: Dimension,
    p: f64,
    k: u64,
    truncation: u64,
) -> Result<(SeriesValue, SeriesValue), SeriesError> {
    check_p(p)?;
    if p >= 1.0 {
        return Err(SeriesError::Diverges);
    }
    if truncation < 1 {
        return Err(SeriesError::BadTruncation);
    }
    let lead = powu(d.get() as f64 * p, k);
    let x = p * p;
    // Horner over i = I..1 keeps the small terms summed first.
    let mut tail = 0.0;
    for i in (1..=truncation).rev() {
        tail = (tail + i as f64) * x;
    }
    let closed = x / ((1.0 - x) * (1.0 - x));
    let base = SeriesValue {
        d: d.get(),
        p,
        k,
        kind: SeriesKind::UpperBound,
        truncation: Some(truncation),
        value: lead * (1.0 + tail),
    };
    let limit = SeriesValue {
        kind: SeriesKind::UpperBoundClosed,
        truncation: None,
        value: lead * (1.0 + closed),
        ..base
    };
    Ok((base, limit))
}

/// `Σ_{i=0..m_max} n_{k+2i}(A_k) p^{k+2i}` from exact counts.
pub fn empirical_psi(
    counts: &CountTable,
    d: Dimension,
    p: f64,
    k: u64,
    m_max: u64,
) -> Result<SeriesValue, SeriesError> {
    check_p(p)?;
    let mut value = 0.0;
    for i in 0..=m_max {
        let length = k + 2 * i;
        let n = counts.get(d, k, length).ok_or(SeriesError::MissingCount {
            d: d.get(),
            k,
            length,
        })?;
        value += n.to_f64().unwrap_or(f64::INFINITY) * powu(p, length);
    }
    Ok(SeriesValue {
        d: d.get(),
        p,
        k,
        kind: SeriesKind::Empirical,
        truncation: Some(m_max),
        value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigUint;

    fn dim(d: usize) -> Dimension {
        Dimension::new(d).unwrap()
    }

    #[test]
    fn lower_examples() {
        assert_eq!(psi_lower(dim(2), 0.5, 3).unwrap().value, 1.0);
        assert_eq!(psi_lower(dim(3), 0.0, 5).unwrap().value, 0.0);
        assert!((psi_lower(dim(2), 0.25, 4).unwrap().value - 0.0625).abs() < 1e-15);
        assert!(psi_lower(dim(2), 1.5, 1).is_err());
    }

    #[test]
    fn lower_at_inverse_d_is_one() {
        for d in 1..=10 {
            for k in 0..=64 {
                let v = psi_lower(dim(d), 1.0 / d as f64, k).unwrap().value;
                assert!((v - 1.0).abs() <= 1e-12, "d={d} k={k} v={v}");
            }
        }
    }

    #[test]
    fn lower_decays_below_inverse_d() {
        for d in 1..=4 {
            let p = 1.0 / d as f64 - 0.01;
            let vals: Vec<f64> = (1..=64)
                .map(|k| psi_lower(dim(d), p, k).unwrap().value)
                .collect();
            assert!(vals.windows(2).all(|w| w[1] < w[0]));
        }
    }

    #[test]
    fn upper_zero_probability() {
        let (t, c) = upper_bound_series(dim(2), 0.0, 0, 5).unwrap();
        assert_eq!(t.value, 1.0);
        assert_eq!(c.value, 1.0);
        let (t, _) = upper_bound_series(dim(2), 0.0, 3, 5).unwrap();
        assert_eq!(t.value, 0.0);
    }

    #[test]
    fn upper_closed_form_example() {
        // Partial sums of Σ i x^i at x = 1/4 run to convergence independently.
        let mut partial = 0.0f64;
        for i in 1..=200 {
            partial += i as f64 * 0.25f64.powi(i);
        }
        let oracle = 1.0 + partial;
        let (_, closed) = upper_bound_series(dim(2), 0.5, 2, 1).unwrap();
        assert!((closed.value - oracle).abs() < 1e-12);
        assert!((closed.value - 13.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn upper_errors() {
        assert_eq!(
            upper_bound_series(dim(2), 1.0, 1, 3),
            Err(SeriesError::Diverges)
        );
        assert_eq!(
            upper_bound_series(dim(2), 0.3, 1, 0),
            Err(SeriesError::BadTruncation)
        );
    }

    #[test]
    fn upper_truncation_converges() {
        for &p in &[0.1, 0.3, 0.5, 0.7, 0.9] {
            let (t, c) = upper_bound_series(dim(3), p, 2, 200).unwrap();
            assert!((t.value - c.value).abs() <= 1e-9, "p={p}");
        }
    }

    #[test]
    fn empirical_requires_counts() {
        let table = CountTable::new();
        assert_eq!(
            empirical_psi(&table, dim(2), 0.3, 2, 1),
            Err(SeriesError::MissingCount {
                d: 2,
                k: 2,
                length: 2
            })
        );
    }

    #[test]
    fn empirical_leading_term() {
        let mut table = CountTable::new();
        table.insert(dim(2), 3, 3, BigUint::from(8u32));
        let v = empirical_psi(&table, dim(2), 0.4, 3, 0).unwrap().value;
        assert!((v - psi_lower(dim(2), 0.4, 3).unwrap().value).abs() < 1e-12);
        assert_eq!(empirical_psi(&table, dim(2), 0.0, 3, 0).unwrap().value, 0.0);
    }
}
