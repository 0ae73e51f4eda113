//! Independent reference implementations used as test oracles. Nothing here
//! calls into the crate's enumeration or simulation code.

#![allow(dead_code)]

use std::collections::HashMap;

/// Endpoint tallies of every self-avoiding walk of `length` steps, by plain
/// recursion with a linear scan of the path for revisits.
pub struct NaiveCensus {
    /// Walks ending at each norm.
    pub sphere: HashMap<u64, u64>,
    /// Walks ending at each norm with all coordinates non-negative.
    pub face: HashMap<u64, u64>,
    pub total: u64,
}

pub fn naive_census(d: usize, length: usize, ball_radius: Option<u64>) -> NaiveCensus {
    let mut out = NaiveCensus {
        sphere: HashMap::new(),
        face: HashMap::new(),
        total: 0,
    };
    let mut path = vec![vec![0i64; d]];
    extend(&mut path, length, ball_radius, &mut out);
    out
}

fn norm(v: &[i64]) -> u64 {
    v.iter().map(|a| a.unsigned_abs()).sum()
}

fn extend(
    path: &mut Vec<Vec<i64>>,
    length: usize,
    ball_radius: Option<u64>,
    out: &mut NaiveCensus,
) {
    if path.len() == length + 1 {
        let end = path.last().unwrap();
        let n = norm(end);
        out.total += 1;
        *out.sphere.entry(n).or_default() += 1;
        if end.iter().all(|&a| a >= 0) {
            *out.face.entry(n).or_default() += 1;
        }
        return;
    }
    let here = path.last().unwrap().clone();
    for axis in 0..here.len() {
        for delta in [1i64, -1] {
            let mut next = here.clone();
            next[axis] += delta;
            if ball_radius.is_some_and(|r| norm(&next) > r) {
                continue;
            }
            if path.contains(&next) {
                continue;
            }
            path.push(next);
            extend(path, length, ball_radius, out);
            path.pop();
        }
    }
}

/// Count of walks of `length` steps ending at norm `k` (face or full sphere).
pub fn naive_to_arc(d: usize, k: u64, length: usize, face: bool, ball_radius: Option<u64>) -> u64 {
    let c = naive_census(d, length, ball_radius);
    let table = if face { &c.face } else { &c.sphere };
    table.get(&k).copied().unwrap_or(0)
}

/// Root of `1 - (1 - p^k)^2 = level` on `[0, 1]`.
pub fn line_root(k: u64, level: f64) -> f64 {
    (1.0 - (1.0 - level).sqrt()).powf(1.0 / k as f64)
}

/// Exact `P(origin connects to norm k inside the ball | origin open)` by
/// summing over every configuration of the non-origin sites of the ball.
/// Only practical for balls with about 20 sites.
pub fn exact_theta(d: usize, k: u64, p: f64) -> f64 {
    let mut sites = Vec::new();
    let mut v = vec![-(k as i64); d];
    loop {
        if norm(&v) <= k {
            sites.push(v.clone());
        }
        let mut i = d;
        loop {
            if i == 0 {
                break;
            }
            i -= 1;
            if v[i] < k as i64 {
                v[i] += 1;
                break;
            }
            v[i] = -(k as i64);
            if i == 0 {
                i = usize::MAX;
                break;
            }
        }
        if i == usize::MAX {
            break;
        }
    }
    let origin = sites.iter().position(|s| norm(s) == 0).unwrap();
    let others: Vec<usize> = (0..sites.len()).filter(|&i| i != origin).collect();
    assert!(others.len() <= 24);
    let adjacent =
        |a: &[i64], b: &[i64]| a.iter().zip(b).map(|(x, y)| x.abs_diff(*y)).sum::<u64>() == 1;
    let mut total = 0.0;
    for mask in 0u64..(1 << others.len()) {
        let mut open = vec![false; sites.len()];
        open[origin] = true;
        let mut n_open = 0;
        for (bit, &s) in others.iter().enumerate() {
            if mask >> bit & 1 == 1 {
                open[s] = true;
                n_open += 1;
            }
        }
        let mut seen = vec![false; sites.len()];
        seen[origin] = true;
        let mut stack = vec![origin];
        let mut hit = k == 0;
        while let Some(a) = stack.pop() {
            for b in 0..sites.len() {
                if open[b] && !seen[b] && adjacent(&sites[a], &sites[b]) {
                    seen[b] = true;
                    hit |= norm(&sites[b]) == k;
                    stack.push(b);
                }
            }
        }
        if hit {
            let closed = others.len() - n_open;
            total += p.powi(n_open as i32) * (1.0 - p).powi(closed as i32);
        }
    }
    total
}
