//! Stationary distribution of a single chain by power iteration.

use super::ChainParams;
use crate::error::{ConvergenceCause, Error, Result};

pub const DEFAULT_STATIONARY_TOL: f64 = 1e-10;
pub const DEFAULT_STATIONARY_MAX_ITERS: usize = 10_000;

/// Solves `pi T = pi`, `sum(pi) = 1` by power iteration from the uniform vector.
///
/// Chains whose support graph has several closed classes, or whose closed
/// class is periodic, are rejected up front: for those the power iterates
/// either depend on the start vector or oscillate, and a uniform start can
/// hit a fixed point by coincidence (every permutation matrix fixes it).
///
/// Once the residual is below `tol` the iteration keeps going for as long as
/// the residual still shrinks, so well-mixing chains come back accurate to
/// rounding error rather than merely to `tol`.
pub fn stationary_distribution(chain: &ChainParams, tol: f64, max_iters: usize) -> Result<Vec<f64>> {
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("tolerance must be positive, got {tol}")));
    }
    let c = chain.num_categories();
    let mut pi = vec![1.0 / c as f64; c];

    if let Some(cause) = structural_obstruction(chain) {
        let residual = step(chain, &pi).1;
        return Err(Error::NotConverged { iterate: pi, residual, iterations: 0, cause });
    }

    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut residual = f64::INFINITY;
    for _ in 0..max_iters {
        let (next, r) = step(chain, &pi);
        residual = r;
        match &best {
            Some((_, best_r)) if r >= *best_r => break,
            Some(_) => best = Some((pi.clone(), r)),
            None if r <= tol => best = Some((pi.clone(), r)),
            None => {}
        }
        if r == 0.0 {
            break;
        }
        pi = next;
    }
    match best {
        Some((pi, _)) => Ok(pi),
        None => Err(Error::NotConverged {
            iterate: pi,
            residual,
            iterations: max_iters,
            cause: ConvergenceCause::IterationLimit,
        }),
    }
}

/// One power step: the normalized `pi T` and the residual `max|pi T - pi|`.
fn step(chain: &ChainParams, pi: &[f64]) -> (Vec<f64>, f64) {
    let c = pi.len();
    let mut next = vec![0.0; c];
    for (from, row) in chain.rows().enumerate() {
        let w = pi[from];
        for (n, t) in next.iter_mut().zip(row) {
            *n += w * t;
        }
    }
    let residual = next.iter().zip(pi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let sum: f64 = next.iter().sum();
    next.iter_mut().for_each(|x| *x /= sum);
    (next, residual)
}

/// Checks that the support graph has exactly one closed class and that it is aperiodic.
fn structural_obstruction(chain: &ChainParams) -> Option<ConvergenceCause> {
    let c = chain.num_categories();
    let edge = |i: usize, j: usize| chain.transition(i, j) > 0.0;

    // transitive closure, reflexive
    let mut reach = vec![vec![false; c]; c];
    for i in 0..c {
        for j in 0..c {
            reach[i][j] = i == j || edge(i, j);
        }
    }
    for m in 0..c {
        for i in 0..c {
            if reach[i][m] {
                for j in 0..c {
                    if reach[m][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }

    let mut closed_classes: Vec<Vec<usize>> = Vec::new();
    let mut assigned = vec![false; c];
    for i in 0..c {
        if assigned[i] {
            continue;
        }
        let class: Vec<usize> = (0..c).filter(|&j| reach[i][j] && reach[j][i]).collect();
        class.iter().for_each(|&j| assigned[j] = true);
        let closed = class.iter().all(|&u| (0..c).all(|v| !reach[u][v] || reach[v][u]));
        if closed {
            closed_classes.push(class);
        }
    }
    if closed_classes.len() != 1 {
        return Some(ConvergenceCause::MultipleClosedClasses { count: closed_classes.len() });
    }

    let period = class_period(&closed_classes[0], c, edge);
    (period > 1).then_some(ConvergenceCause::Periodic { period })
}

/// Period of a strongly connected class: gcd of `level(u) + 1 - level(v)` over its edges.
fn class_period(class: &[usize], c: usize, edge: impl Fn(usize, usize) -> bool) -> usize {
    let mut in_class = vec![false; c];
    class.iter().for_each(|&u| in_class[u] = true);
    let mut level = vec![usize::MAX; c];
    level[class[0]] = 0;
    let mut queue = std::collections::VecDeque::from([class[0]]);
    while let Some(u) = queue.pop_front() {
        for v in 0..c {
            if in_class[v] && edge(u, v) && level[v] == usize::MAX {
                level[v] = level[u] + 1;
                queue.push_back(v);
            }
        }
    }
    let mut g = 0usize;
    for &u in class {
        for &v in class {
            if edge(u, v) {
                let d = (level[u] as i64 + 1 - level[v] as i64).unsigned_abs() as usize;
                g = gcd(g, d);
            }
        }
    }
    g
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}
