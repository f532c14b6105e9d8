//! Expectation-maximization for a mixture of Markov chains.
//!
//! The E-step computes per-sequence cluster posteriors
//! `g[s][i] = p_i P(s | chain_i) / sum_j p_j P(s | chain_j)` in log space.
//! The M-step re-estimates `p`, the initial distributions and the transition
//! rows in closed form from posterior-weighted start and transition counts.
//! Iteration stops once the corpus log-likelihood improves by less than
//! `epsilon` between consecutive iterations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rayon::ThreadPool;

use crate::error::{Error, Result};
use crate::model::{log_sum_exp, CategorySet, ChainParams, LogLikelihood, MixtureModel, SequenceDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// Uniform parameters, each entry multiplicatively perturbed by seeded noise.
    UniformJitter,
    /// Every probability vector drawn from the flat Dirichlet distribution.
    Random,
}

impl std::str::FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform-jitter" => Ok(InitMode::UniformJitter),
            "random" => Ok(InitMode::Random),
            other => Err(Error::invalid(format!("unknown init mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for InitMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InitMode::UniformJitter => "uniform-jitter",
            InitMode::Random => "random",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    pub num_clusters: usize,
    /// Stop once the log-likelihood improves by less than this.
    pub epsilon: f64,
    pub max_iters: usize,
    /// Pseudo-count added to every start and transition count.
    pub alpha: f64,
    pub init: InitMode,
    pub seed: u64,
    /// Relative noise magnitude for [`InitMode::UniformJitter`]; 0 gives exact uniform.
    pub jitter_scale: f64,
    /// Worker threads for the E-step; 1 runs on the calling thread.
    pub threads: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            num_clusters: 4,
            epsilon: 1e-4,
            max_iters: 500,
            alpha: 1e-6,
            init: InitMode::UniformJitter,
            seed: 0,
            jitter_scale: 0.01,
            threads: 1,
        }
    }
}

impl EmConfig {
    pub fn with_clusters(num_clusters: usize) -> Self {
        EmConfig { num_clusters, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_clusters == 0 {
            return Err(Error::invalid("number of clusters must be at least 1"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::invalid(format!("alpha must be a non-negative number, got {}", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.jitter_scale) {
            return Err(Error::invalid(format!("jitter_scale must lie in [0, 1), got {}", self.jitter_scale)));
        }
        if self.threads == 0 {
            return Err(Error::invalid("threads must be at least 1"));
        }
        Ok(())
    }
}

/// Cluster membership probabilities, one row per sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMatrix {
    num_clusters: usize,
    values: Vec<f64>,
}

impl PosteriorMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        if k == 0 {
            return Err(Error::invalid("posterior matrix needs at least one row and one column"));
        }
        let mut values = Vec::with_capacity(rows.len() * k);
        for (s, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::invalid(format!("posterior row {s} has {} entries, expected {k}", row.len())));
            }
            let sum: f64 = row.iter().sum();
            if row.iter().any(|g| !(0.0..=1.0).contains(g)) || (sum - 1.0).abs() > 1e-10 {
                return Err(Error::invalid(format!("posterior row {s} is not a probability vector")));
            }
            values.extend_from_slice(row);
        }
        Ok(PosteriorMatrix { num_clusters: k, values })
    }

    pub fn num_sequences(&self) -> usize {
        self.values.len() / self.num_clusters
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.num_clusters..(s + 1) * self.num_clusters]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.num_clusters)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    /// Lowest-index argmax of each row.
    pub fn hard_assignments(&self) -> Vec<usize> {
        self.rows().map(argmax).collect()
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: MixtureModel,
    /// Posteriors under the final `model`.
    pub posteriors: PosteriorMatrix,
    /// Log-likelihood of the initial model, before the first M-step.
    pub initial_log_likelihood: LogLikelihood,
    /// Log-likelihood after each iteration's M-step.
    pub log_likelihood_trace: Vec<LogLikelihood>,
    pub iterations: usize,
    pub converged: bool,
}

impl FitResult {
    pub fn final_log_likelihood(&self) -> LogLikelihood {
        self.log_likelihood_trace.last().copied().unwrap_or(self.initial_log_likelihood)
    }

    /// Consecutive improvements, the first one measured from the initial model.
    pub fn deltas(&self) -> Vec<f64> {
        let mut prev = self.initial_log_likelihood.0;
        self.log_likelihood_trace
            .iter()
            .map(|ll| {
                let d = ll.0 - prev;
                prev = ll.0;
                d
            })
            .collect()
    }
}

/// State handed to a [`fit_observed`] callback. Iteration 0 is the initial model.
#[derive(Debug)]
pub struct IterationState<'a> {
    pub iteration: usize,
    pub model: &'a MixtureModel,
    pub posteriors: &'a PosteriorMatrix,
    pub log_likelihood: LogLikelihood,
}

fn uniform_vec(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let sum: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= sum);
    v
}

fn jittered(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if scale == 0.0 {
        return uniform_vec(n);
    }
    let base = 1.0 / n as f64;
    normalized((0..n).map(|_| base * (1.0 + scale * (2.0 * rng.gen::<f64>() - 1.0))).collect())
}

fn flat_dirichlet(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    // normalized unit exponentials
    normalized((0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect())
}

/// Starting model for EM, deterministic in `config.seed`.
pub fn initialize(config: &EmConfig, categories: &CategorySet) -> Result<MixtureModel> {
    config.validate()?;
    let (k, c) = (config.num_clusters, categories.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let draw = |n: usize, rng: &mut ChaCha8Rng| match config.init {
        InitMode::UniformJitter => jittered(n, config.jitter_scale, rng),
        InitMode::Random => flat_dirichlet(n, rng),
    };
    let weights = match config.init {
        InitMode::UniformJitter => uniform_vec(k),
        InitMode::Random => draw(k, &mut rng),
    };
    let mut clusters = Vec::with_capacity(k);
    for _ in 0..k {
        let initial = draw(c, &mut rng);
        let mut transition = Vec::with_capacity(c * c);
        for _ in 0..c {
            transition.extend(draw(c, &mut rng));
        }
        clusters.push(ChainParams::from_flat(initial, transition)?);
    }
    MixtureModel::new(categories.clone(), weights, clusters)
}

fn check_compatible(model: &MixtureModel, data: &SequenceDataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::invalid("dataset is empty"));
    }
    if model.num_categories() != data.categories().len() {
        return Err(Error::DimensionMismatch {
            expected: model.num_categories(),
            found: data.categories().len(),
        });
    }
    Ok(())
}

/// Posteriors under `model`, plus the corpus log-likelihood as a by-product.
fn expectation(
    model: &MixtureModel,
    data: &SequenceDataset,
    pool: Option<&ThreadPool>,
) -> Result<(PosteriorMatrix, LogLikelihood)> {
    check_compatible(model, data)?;
    let k = model.num_clusters();
    let n = data.len();
    let mut values = vec![0.0; n * k];
    let mut lls = vec![0.0; n];
    let fill = |s: usize, row: &mut [f64], ll: &mut f64| -> Result<()> {
        model.joint_log_weights(data.sequences()[s].states(), row);
        let lse = log_sum_exp(row);
        if lse == f64::NEG_INFINITY {
            return Err(Error::Degenerate { sequence: s });
        }
        row.iter_mut().for_each(|x| *x = (*x - lse).exp());
        *ll = lse;
        Ok(())
    };
    match pool {
        Some(pool) => pool.install(|| {
            values
                .par_chunks_mut(k)
                .zip(lls.par_iter_mut())
                .enumerate()
                .try_for_each(|(s, (row, ll))| fill(s, row, ll))
        })?,
        None => values
            .chunks_mut(k)
            .zip(lls.iter_mut())
            .enumerate()
            .try_for_each(|(s, (row, ll))| fill(s, row, ll))?,
    }
    // summed in corpus order regardless of threading
    let total = lls.iter().sum();
    Ok((PosteriorMatrix { num_clusters: k, values }, LogLikelihood(total)))
}

/// E-step: posterior cluster probabilities of every sequence.
pub fn e_step(model: &MixtureModel, data: &SequenceDataset) -> Result<PosteriorMatrix> {
    expectation(model, data, None).map(|(g, _)| g)
}

/// Adds `alpha`, then normalizes; an all-zero vector becomes uniform.
fn normalize_counts(counts: &mut [f64], alpha: f64) {
    counts.iter_mut().for_each(|x| *x += alpha);
    let total: f64 = counts.iter().sum();
    if total > 0.0 {
        counts.iter_mut().for_each(|x| *x /= total);
    } else {
        let u = 1.0 / counts.len() as f64;
        counts.iter_mut().for_each(|x| *x = u);
    }
}

/// M-step: closed-form re-estimation from posterior-weighted counts.
pub fn m_step(data: &SequenceDataset, posteriors: &PosteriorMatrix, alpha: f64) -> Result<MixtureModel> {
    if posteriors.num_sequences() != data.len() {
        return Err(Error::DimensionMismatch { expected: data.len(), found: posteriors.num_sequences() });
    }
    if data.is_empty() {
        return Err(Error::invalid("dataset is empty"));
    }
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::invalid(format!("alpha must be a non-negative number, got {alpha}")));
    }
    let k = posteriors.num_clusters();
    let c = data.categories().len();

    let mut mass = vec![0.0; k];
    let mut starts = vec![vec![0.0; c]; k];
    let mut transitions = vec![vec![0.0; c * c]; k];
    for (s, g) in data.sequences().iter().zip(posteriors.rows()) {
        let first = s.states()[0];
        for i in 0..k {
            mass[i] += g[i];
            starts[i][first] += g[i];
        }
        for (a, b) in s.transitions() {
            for i in 0..k {
                transitions[i][a * c + b] += g[i];
            }
        }
    }

    let n = data.len() as f64;
    let weights = mass.iter().map(|m| m / n).collect();
    let clusters = starts
        .into_iter()
        .zip(transitions)
        .map(|(mut f, mut t)| {
            normalize_counts(&mut f, alpha);
            t.chunks_mut(c).for_each(|row| normalize_counts(row, alpha));
            ChainParams::from_flat(f, t)
        })
        .collect::<Result<Vec<_>>>()?;
    MixtureModel::new(data.categories().clone(), weights, clusters)
}

/// Runs EM from the seeded [`initialize`] model.
pub fn fit(data: &SequenceDataset, config: &EmConfig) -> Result<FitResult> {
    let initial = initialize(config, data.categories())?;
    fit_from(data, initial, config)
}

/// Runs EM from a caller-supplied starting model; `config.num_clusters` must match it.
pub fn fit_from(data: &SequenceDataset, initial: MixtureModel, config: &EmConfig) -> Result<FitResult> {
    fit_observed(data, initial, config, |_| {})
}

/// [`fit_from`] with a callback invoked on the initial model and after every iteration.
pub fn fit_observed(
    data: &SequenceDataset,
    initial: MixtureModel,
    config: &EmConfig,
    mut observe: impl FnMut(&IterationState<'_>),
) -> Result<FitResult> {
    config.validate()?;
    if initial.num_clusters() != config.num_clusters {
        return Err(Error::DimensionMismatch { expected: config.num_clusters, found: initial.num_clusters() });
    }
    check_compatible(&initial, data)?;
    if data.len() < config.num_clusters {
        log::warn!("fitting {} clusters to only {} sequences", config.num_clusters, data.len());
    }
    let pool = if config.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(config.threads)
                .build()
                .map_err(|e| Error::invalid(format!("cannot start thread pool: {e}")))?,
        )
    } else {
        None
    };

    let mut model = initial;
    let (mut posteriors, initial_ll) = expectation(&model, data, pool.as_ref())?;
    observe(&IterationState { iteration: 0, model: &model, posteriors: &posteriors, log_likelihood: initial_ll });

    let mut trace = Vec::new();
    let mut previous = initial_ll;
    let mut converged = false;
    for iteration in 1..=config.max_iters {
        model = m_step(data, &posteriors, config.alpha)?;
        let (next, ll) = expectation(&model, data, pool.as_ref())?;
        posteriors = next;
        trace.push(ll);
        observe(&IterationState { iteration, model: &model, posteriors: &posteriors, log_likelihood: ll });
        let delta = ll.0 - previous.0;
        log::debug!("iteration {iteration}: log-likelihood {} (delta {delta:e})", ll.0);
        if delta < config.epsilon {
            converged = true;
            break;
        }
        previous = ll;
    }

    Ok(FitResult {
        model,
        posteriors,
        initial_log_likelihood: initial_ll,
        iterations: trace.len(),
        log_likelihood_trace: trace,
        converged,
    })
}
