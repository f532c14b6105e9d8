//! Reference computations used by the integration tests. Written
//! independently of the library: direct products instead of log sums,
//! explicit loops instead of weighted count matrices.
#![allow(dead_code)]

use chainmix::{CategorySet, ChainParams, MixtureModel, Sequence, SequenceDataset};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn categories(c: usize) -> CategorySet {
    CategorySet::new((0..c).map(|i| format!("c{i}"))).unwrap()
}

/// Plain probability of `states` under `(f, T)`, no logs.
pub fn direct_prob(f: &[f64], t: &[Vec<f64>], states: &[usize]) -> f64 {
    let mut p = f[states[0]];
    for w in states.windows(2) {
        p *= t[w[0]][w[1]];
    }
    p
}

/// Count-and-normalize estimate of one chain from hard-assigned sequences.
/// Rows with no observations are uniform.
pub fn counting_oracle(c: usize, seqs: &[&[usize]]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let uniform = vec![1.0 / c as f64; c];
    let mut f = vec![0.0; c];
    let mut t = vec![vec![0.0; c]; c];
    for s in seqs {
        f[s[0]] += 1.0;
        for i in 1..s.len() {
            t[s[i - 1]][s[i]] += 1.0;
        }
    }
    let norm = |v: &mut Vec<f64>| {
        let total: f64 = v.iter().sum();
        if total == 0.0 {
            *v = uniform.clone();
        } else {
            for x in v.iter_mut() {
                *x /= total;
            }
        }
    };
    norm(&mut f);
    t.iter_mut().for_each(norm);
    (f, t)
}

/// Solves pi (T - I) = 0, sum(pi) = 1 by Gaussian elimination with partial pivoting.
pub fn stationary_oracle(t: &[Vec<f64>]) -> Vec<f64> {
    let c = t.len();
    // rows: equations; columns: unknowns pi_0..pi_{c-1}, then rhs
    let mut a = vec![vec![0.0; c + 1]; c];
    for (eq, row) in a.iter_mut().enumerate().take(c - 1) {
        for j in 0..c {
            row[j] = t[j][eq] - if j == eq { 1.0 } else { 0.0 };
        }
    }
    a[c - 1] = vec![1.0; c + 1];
    for col in 0..c {
        let piv = (col..c).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs())).unwrap();
        a.swap(col, piv);
        for r in 0..c {
            if r != col {
                let factor = a[r][col] / a[col][col];
                for k in col..=c {
                    a[r][k] -= factor * a[col][k];
                }
            }
        }
    }
    (0..c).map(|i| a[i][c] / a[i][i]).collect()
}

pub fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Strictly positive probability vector.
pub fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

pub fn random_chain(rng: &mut ChaCha8Rng, c: usize) -> ChainParams {
    let f = random_simplex(rng, c);
    let t = (0..c).map(|_| random_simplex(rng, c)).collect();
    ChainParams::new(f, t).unwrap()
}

pub fn random_model(rng: &mut ChaCha8Rng, k: usize, c: usize) -> MixtureModel {
    let p = random_simplex(rng, k);
    let clusters = (0..k).map(|_| random_chain(rng, c)).collect();
    MixtureModel::new(categories(c), p, clusters).unwrap()
}

pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize, c: usize, len: std::ops::RangeInclusive<usize>) -> SequenceDataset {
    let seqs = (0..n)
        .map(|_| {
            let l = rng.gen_range(len.clone());
            Sequence::from_states((0..l).map(|_| rng.gen_range(0..c)).collect()).unwrap()
        })
        .collect();
    SequenceDataset::new(categories(c), seqs).unwrap()
}
