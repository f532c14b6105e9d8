//! Domain types for a mixture of first-order, time-homogeneous Markov chains
//! over a finite category alphabet, together with the sequence likelihoods.
//!
//! All probabilities are combined in natural-log space. A sequence
//! `s = (s_1, ..., s_l)` has probability `f(s_1) * T(s_1, s_2) * ... * T(s_{l-1}, s_l)`
//! under one chain, and `sum_i p_i * P(s | chain_i)` under the mixture.

mod stationary;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};

pub use stationary::{stationary_distribution, DEFAULT_STATIONARY_MAX_ITERS, DEFAULT_STATIONARY_TOL};

/// Absolute tolerance for "sums to one" checks on constructed parameters.
pub const NORMALIZATION_TOL: f64 = 1e-10;

/// Venue categories of the Weeplaces check-in data, in their canonical order.
pub const WEEPLACES_CATEGORIES: [&str; 8] = [
    "Food",
    "Art & Entertainment",
    "College & Education",
    "Home/Work",
    "Nightlife",
    "Parks & Outdoors",
    "Shops",
    "Travel",
];

/// Ordered category vocabulary. Index `j` is the state `j` of every chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategorySet {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl CategorySet {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() < 2 {
            return Err(Error::invalid(format!(
                "a category set needs at least 2 categories, got {}",
                names.len()
            )));
        }
        let mut index = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() {
                return Err(Error::invalid(format!("category {i} has an empty name")));
            }
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate category {name:?}")));
            }
        }
        Ok(CategorySet { names, index })
    }

    pub fn weeplaces() -> Self {
        CategorySet::new(WEEPLACES_CATEGORIES).expect("static vocabulary is valid")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }
}

/// ISO-8601 week (Monday start), written `YYYY-Www`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct IsoWeek {
    pub year: i32,
    pub week: u32,
}

impl IsoWeek {
    pub fn new(year: i32, week: u32) -> Result<Self> {
        if !(1..=53).contains(&week) {
            return Err(Error::invalid(format!("ISO week number {week} out of range 1..=53")));
        }
        Ok(IsoWeek { year, week })
    }
}

impl From<chrono::IsoWeek> for IsoWeek {
    fn from(w: chrono::IsoWeek) -> Self {
        IsoWeek { year: w.year(), week: w.week() }
    }
}

impl fmt::Display for IsoWeek {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-W{:02}", self.year, self.week)
    }
}

impl FromStr for IsoWeek {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("malformed ISO week {s:?}, expected YYYY-Www"));
        let (year, week) = s.split_once("-W").ok_or_else(bad)?;
        let year = year.parse().map_err(|_| bad())?;
        let week = week.parse().map_err(|_| bad())?;
        IsoWeek::new(year, week)
    }
}

/// One user's chronologically ordered category indices within one week.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sequence {
    pub user: String,
    pub city: String,
    pub week: IsoWeek,
    states: Vec<usize>,
}

impl Sequence {
    pub fn new(
        user: impl Into<String>,
        city: impl Into<String>,
        week: IsoWeek,
        states: Vec<usize>,
    ) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::invalid("a sequence needs at least one state"));
        }
        Ok(Sequence { user: user.into(), city: city.into(), week, states })
    }

    /// Anonymous sequence, mostly for tests and synthetic data.
    pub fn from_states(states: Vec<usize>) -> Result<Self> {
        Sequence::new("", "", IsoWeek { year: 1970, week: 1 }, states)
    }

    pub fn states(&self) -> &[usize] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub(crate) fn check_dimension(&self, num_categories: usize) -> Result<()> {
        match self.states.iter().copied().max() {
            Some(m) if m >= num_categories => {
                Err(Error::DimensionMismatch { expected: num_categories, found: m + 1 })
            }
            _ => Ok(()),
        }
    }

    /// Consecutive `(from, to)` state pairs.
    pub fn transitions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.states.windows(2).map(|w| (w[0], w[1]))
    }
}

/// The corpus of sequences to cluster, sharing one vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDataset {
    categories: CategorySet,
    sequences: Vec<Sequence>,
}

impl SequenceDataset {
    pub fn new(categories: CategorySet, sequences: Vec<Sequence>) -> Result<Self> {
        for (i, s) in sequences.iter().enumerate() {
            s.check_dimension(categories.len())
                .map_err(|e| Error::invalid(format!("sequence {i}: {e}")))?;
        }
        Ok(SequenceDataset { categories, sequences })
    }

    pub fn categories(&self) -> &CategorySet {
        &self.categories
    }

    pub fn sequences(&self) -> &[Sequence] {
        &self.sequences
    }

    pub fn into_sequences(self) -> Vec<Sequence> {
        self.sequences
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Keeps the sequences whose positions are accepted by `keep`, preserving order.
    pub fn retain_indices(&self, mut keep: impl FnMut(usize) -> bool) -> SequenceDataset {
        let sequences =
            self.sequences.iter().enumerate().filter(|(i, _)| keep(*i)).map(|(_, s)| s.clone()).collect();
        SequenceDataset { categories: self.categories.clone(), sequences }
    }
}

fn check_distribution(what: &str, v: &[f64]) -> Result<()> {
    for (i, &x) in v.iter().enumerate() {
        if !x.is_finite() || !(0.0..=1.0).contains(&x) {
            return Err(Error::invalid(format!("{what}: entry {i} = {x} is not a probability")));
        }
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::invalid(format!("{what}: entries sum to {sum}, expected 1")));
    }
    Ok(())
}

/// One cluster's chain: initial distribution `f` and row-stochastic matrix `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainParams {
    initial: Vec<f64>,
    // row-major C x C
    transition: Vec<f64>,
    log_initial: Vec<f64>,
    log_transition: Vec<f64>,
}

impl ChainParams {
    pub fn new(initial: Vec<f64>, transition: Vec<Vec<f64>>) -> Result<Self> {
        let c = initial.len();
        if transition.len() != c {
            return Err(Error::DimensionMismatch { expected: c, found: transition.len() });
        }
        let mut flat = Vec::with_capacity(c * c);
        for row in &transition {
            if row.len() != c {
                return Err(Error::DimensionMismatch { expected: c, found: row.len() });
            }
            flat.extend_from_slice(row);
        }
        Self::from_flat(initial, flat)
    }

    pub(crate) fn from_flat(initial: Vec<f64>, transition: Vec<f64>) -> Result<Self> {
        let c = initial.len();
        if c == 0 {
            return Err(Error::invalid("a chain needs at least one state"));
        }
        if transition.len() != c * c {
            return Err(Error::DimensionMismatch { expected: c * c, found: transition.len() });
        }
        check_distribution("initial distribution", &initial)?;
        for (j, row) in transition.chunks_exact(c).enumerate() {
            check_distribution(&format!("transition row {j}"), row)?;
        }
        let log_initial = initial.iter().map(|x| x.ln()).collect();
        let log_transition = transition.iter().map(|x| x.ln()).collect();
        Ok(ChainParams { initial, transition, log_initial, log_transition })
    }

    /// All entries `1/C`.
    pub fn uniform(num_categories: usize) -> Self {
        let u = 1.0 / num_categories as f64;
        Self::from_flat(vec![u; num_categories], vec![u; num_categories * num_categories])
            .expect("uniform chain is valid")
    }

    pub fn num_categories(&self) -> usize {
        self.initial.len()
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn row(&self, from: usize) -> &[f64] {
        let c = self.num_categories();
        &self.transition[from * c..(from + 1) * c]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.transition.chunks_exact(self.num_categories())
    }

    pub fn transition(&self, from: usize, to: usize) -> f64 {
        self.transition[from * self.num_categories() + to]
    }

    pub fn transition_matrix(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    /// `log P(s | chain)`; negative infinity when any factor is zero.
    pub fn sequence_log_prob(&self, s: &Sequence) -> Result<f64> {
        s.check_dimension(self.num_categories())?;
        Ok(self.log_prob_unchecked(s.states()))
    }

    pub(crate) fn log_prob_unchecked(&self, states: &[usize]) -> f64 {
        let c = self.num_categories();
        let mut lp = self.log_initial[states[0]];
        for w in states.windows(2) {
            lp += self.log_transition[w[0] * c + w[1]];
        }
        lp
    }
}

/// Free-function form of [`ChainParams::sequence_log_prob`].
pub fn sequence_log_prob(chain: &ChainParams, s: &Sequence) -> Result<f64> {
    chain.sequence_log_prob(s)
}

/// Mixing distribution `p` over `K` chains sharing a vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModel {
    categories: CategorySet,
    weights: Vec<f64>,
    clusters: Vec<ChainParams>,
}

impl MixtureModel {
    pub fn new(categories: CategorySet, weights: Vec<f64>, clusters: Vec<ChainParams>) -> Result<Self> {
        if clusters.is_empty() {
            return Err(Error::invalid("a mixture needs at least one cluster"));
        }
        if weights.len() != clusters.len() {
            return Err(Error::DimensionMismatch { expected: clusters.len(), found: weights.len() });
        }
        check_distribution("mixing distribution", &weights)?;
        for chain in &clusters {
            if chain.num_categories() != categories.len() {
                return Err(Error::DimensionMismatch {
                    expected: categories.len(),
                    found: chain.num_categories(),
                });
            }
        }
        Ok(MixtureModel { categories, weights, clusters })
    }

    pub fn categories(&self) -> &CategorySet {
        &self.categories
    }

    pub fn num_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn num_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn clusters(&self) -> &[ChainParams] {
        &self.clusters
    }

    pub fn cluster(&self, i: usize) -> &ChainParams {
        &self.clusters[i]
    }

    /// Relabels clusters so that new cluster `i` is old cluster `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<MixtureModel> {
        let k = self.num_clusters();
        let mut seen = vec![false; k];
        if order.len() != k || !order.iter().all(|&i| i < k && !std::mem::replace(&mut seen[i], true)) {
            return Err(Error::invalid(format!("{order:?} is not a permutation of 0..{k}")));
        }
        Ok(MixtureModel {
            categories: self.categories.clone(),
            weights: order.iter().map(|&i| self.weights[i]).collect(),
            clusters: order.iter().map(|&i| self.clusters[i].clone()).collect(),
        })
    }

    /// Per-cluster joint log-weights `log p_i + log P(s | chain_i)`.
    pub(crate) fn joint_log_weights(&self, states: &[usize], out: &mut [f64]) {
        for ((o, &w), chain) in out.iter_mut().zip(&self.weights).zip(&self.clusters) {
            *o = w.ln() + chain.log_prob_unchecked(states);
        }
    }

    /// `log sum_i p_i P(s | chain_i)`.
    pub fn mixture_log_prob(&self, s: &Sequence) -> Result<f64> {
        s.check_dimension(self.num_categories())?;
        let mut buf = vec![0.0; self.num_clusters()];
        self.joint_log_weights(s.states(), &mut buf);
        Ok(log_sum_exp(&buf))
    }

    fn check_dataset(&self, data: &SequenceDataset) -> Result<()> {
        if data.is_empty() {
            return Err(Error::invalid("dataset is empty"));
        }
        if data.categories().len() != self.num_categories() {
            return Err(Error::DimensionMismatch {
                expected: self.num_categories(),
                found: data.categories().len(),
            });
        }
        Ok(())
    }

    /// Log of the corpus likelihood: the sum of per-sequence mixture log-probabilities.
    pub fn corpus_log_likelihood(&self, data: &SequenceDataset) -> Result<LogLikelihood> {
        self.check_dataset(data)?;
        let mut buf = vec![0.0; self.num_clusters()];
        let mut total = 0.0;
        for s in data.sequences() {
            self.joint_log_weights(s.states(), &mut buf);
            total += log_sum_exp(&buf);
        }
        Ok(LogLikelihood(total))
    }

    /// Same as [`corpus_log_likelihood`](Self::corpus_log_likelihood), with the
    /// per-sequence terms evaluated on the current rayon pool. The terms are
    /// summed in corpus order, so the result matches the sequential value.
    pub fn corpus_log_likelihood_parallel(&self, data: &SequenceDataset) -> Result<LogLikelihood> {
        self.check_dataset(data)?;
        let terms: Vec<f64> = data
            .sequences()
            .par_iter()
            .map_init(
                || vec![0.0; self.num_clusters()],
                |buf, s| {
                    self.joint_log_weights(s.states(), buf);
                    log_sum_exp(buf)
                },
            )
            .collect();
        Ok(LogLikelihood(terms.iter().sum()))
    }
}

pub fn mixture_log_prob(model: &MixtureModel, s: &Sequence) -> Result<f64> {
    model.mixture_log_prob(s)
}

pub fn corpus_log_likelihood(model: &MixtureModel, data: &SequenceDataset) -> Result<LogLikelihood> {
    model.corpus_log_likelihood(data)
}

/// Natural-log likelihood of a corpus.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct LogLikelihood(pub f64);

impl LogLikelihood {
    pub fn value(self) -> f64 {
        self.0
    }
}

impl fmt::Display for LogLikelihood {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// `log sum exp(x_i)`, stable for large magnitudes. Empty or all `-inf` input gives `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}
