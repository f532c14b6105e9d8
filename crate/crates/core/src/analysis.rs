//! Post-fit summaries: cluster sizes over sequences and over users, category
//! popularity (column sums of a transition matrix), top-k rankings, per-user
//! cluster assignment and stationary-distribution forecasts.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::em::{argmax, e_step, PosteriorMatrix};
use crate::error::{Error, Result};
use crate::model::{
    stationary_distribution, CategorySet, ChainParams, MixtureModel, Sequence, SequenceDataset,
    DEFAULT_STATIONARY_MAX_ITERS,
};

/// Column means of the posterior matrix.
pub fn cluster_sizes_sequences(posteriors: &PosteriorMatrix) -> Vec<f64> {
    let mut sums = vec![0.0; posteriors.num_clusters()];
    for row in posteriors.rows() {
        sums.iter_mut().zip(row).for_each(|(s, g)| *s += g);
    }
    let n = posteriors.num_sequences() as f64;
    sums.into_iter().map(|s| s / n).collect()
}

/// Average over users of each user's mean posterior, so every user weighs the same.
pub fn cluster_sizes_users(data: &SequenceDataset, posteriors: &PosteriorMatrix) -> Result<Vec<f64>> {
    if posteriors.num_sequences() != data.len() {
        return Err(Error::DimensionMismatch { expected: data.len(), found: posteriors.num_sequences() });
    }
    let k = posteriors.num_clusters();
    let mut per_user: BTreeMap<&str, (Vec<f64>, usize)> = BTreeMap::new();
    for (s, row) in data.sequences().iter().zip(posteriors.rows()) {
        let (sums, count) = per_user.entry(s.user.as_str()).or_insert_with(|| (vec![0.0; k], 0));
        sums.iter_mut().zip(row).for_each(|(a, g)| *a += g);
        *count += 1;
    }
    let mut total = vec![0.0; k];
    for (sums, count) in per_user.values() {
        total.iter_mut().zip(sums).for_each(|(t, s)| *t += s / *count as f64);
    }
    let users = per_user.len() as f64;
    Ok(total.into_iter().map(|t| t / users).collect())
}

/// Column sums of `T`: how often each category is the next step.
pub fn popularity_vector(chain: &ChainParams) -> Vec<f64> {
    let mut sums = vec![0.0; chain.num_categories()];
    for row in chain.rows() {
        sums.iter_mut().zip(row).for_each(|(s, t)| *s += t);
    }
    sums
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCategory {
    pub index: usize,
    pub name: String,
    pub popularity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedTransition {
    pub from: usize,
    pub to: usize,
    pub from_name: String,
    pub to_name: String,
    pub probability: f64,
}

/// Indices of the `k` largest values, descending; lower index first on ties.
fn top_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

pub fn top_categories(chain: &ChainParams, categories: &CategorySet, k: usize) -> Result<Vec<RankedCategory>> {
    let c = chain.num_categories();
    if categories.len() != c {
        return Err(Error::DimensionMismatch { expected: c, found: categories.len() });
    }
    if k == 0 || k > c {
        return Err(Error::invalid(format!("k must lie in 1..={c}, got {k}")));
    }
    let popularity = popularity_vector(chain);
    Ok(top_indices(&popularity, k)
        .into_iter()
        .map(|j| RankedCategory { index: j, name: categories.names()[j].clone(), popularity: popularity[j] })
        .collect())
}

/// The `k` most probable transitions `(from, to)` of the chain.
pub fn top_transitions(chain: &ChainParams, categories: &CategorySet, k: usize) -> Result<Vec<RankedTransition>> {
    let c = chain.num_categories();
    if categories.len() != c {
        return Err(Error::DimensionMismatch { expected: c, found: categories.len() });
    }
    if k == 0 || k > c * c {
        return Err(Error::invalid(format!("k must lie in 1..={}, got {k}", c * c)));
    }
    let flat: Vec<f64> = chain.rows().flatten().copied().collect();
    Ok(top_indices(&flat, k)
        .into_iter()
        .map(|idx| {
            let (from, to) = (idx / c, idx % c);
            RankedTransition {
                from,
                to,
                from_name: categories.names()[from].clone(),
                to_name: categories.names()[to].clone(),
                probability: flat[idx],
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserAssignment {
    pub cluster: usize,
    /// Mean posterior over the user's sequences.
    pub membership: Vec<f64>,
}

/// Most probable cluster for one user's sequences.
pub fn assign_user(model: &MixtureModel, user_sequences: &[Sequence]) -> Result<UserAssignment> {
    if user_sequences.is_empty() {
        return Err(Error::invalid("a user needs at least one sequence"));
    }
    for s in user_sequences {
        s.check_dimension(model.num_categories())?;
    }
    let data = SequenceDataset::new(model.categories().clone(), user_sequences.to_vec())?;
    let membership = cluster_sizes_sequences(&e_step(model, &data)?);
    Ok(UserAssignment { cluster: argmax(&membership), membership })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    pub assignment: UserAssignment,
    /// Long-run category frequencies of the assigned cluster's chain.
    pub stationary: Vec<f64>,
}

pub fn forecast_user(model: &MixtureModel, user_sequences: &[Sequence], tol: f64) -> Result<Forecast> {
    let assignment = assign_user(model, user_sequences)?;
    let stationary =
        stationary_distribution(model.cluster(assignment.cluster), tol, DEFAULT_STATIONARY_MAX_ITERS)?;
    Ok(Forecast { assignment, stationary })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    /// Position in the fitted model, before ordering by size.
    pub model_index: usize,
    pub p_seqs: f64,
    pub p_users: f64,
    pub initial: Vec<f64>,
    pub transition: Vec<Vec<f64>>,
    pub popularity: Vec<f64>,
    pub top_categories: Vec<RankedCategory>,
    pub top_transitions: Vec<RankedTransition>,
}

/// Everything reported about a fit, clusters ordered by descending sequence share.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub categories: Vec<String>,
    pub num_sequences: usize,
    pub num_users: usize,
    pub top_k: usize,
    /// Sequence-level sizes, in report order.
    pub p_seqs: Vec<f64>,
    /// User-level sizes, in report order.
    pub p_users: Vec<f64>,
    pub clusters: Vec<ClusterSummary>,
}

impl ClusterReport {
    pub fn new(
        model: &MixtureModel,
        data: &SequenceDataset,
        posteriors: &PosteriorMatrix,
        top_k: usize,
    ) -> Result<ClusterReport> {
        if posteriors.num_clusters() != model.num_clusters() {
            return Err(Error::DimensionMismatch {
                expected: model.num_clusters(),
                found: posteriors.num_clusters(),
            });
        }
        if data.categories().names() != model.categories().names() {
            return Err(Error::invalid("sequence file and model use different category sets"));
        }
        if data.is_empty() {
            return Err(Error::invalid("dataset is empty"));
        }
        let cats = model.categories();
        let c = cats.len();
        if top_k == 0 {
            return Err(Error::invalid("top_k must be at least 1"));
        }
        // A vocabulary smaller than k just lists every category.
        let top_k = top_k.min(c);
        let p_seqs = cluster_sizes_sequences(posteriors);
        let p_users = cluster_sizes_users(data, posteriors)?;
        let order = top_indices(&p_seqs, p_seqs.len());

        let mut clusters = Vec::with_capacity(order.len());
        for &i in &order {
            let chain = model.cluster(i);
            clusters.push(ClusterSummary {
                model_index: i,
                p_seqs: p_seqs[i],
                p_users: p_users[i],
                initial: chain.initial().to_vec(),
                transition: chain.transition_matrix(),
                popularity: popularity_vector(chain),
                top_categories: top_categories(chain, cats, top_k)?,
                top_transitions: top_transitions(chain, cats, top_k)?,
            });
        }
        let num_users = data.sequences().iter().map(|s| s.user.as_str()).collect::<std::collections::BTreeSet<_>>().len();
        Ok(ClusterReport {
            categories: cats.names().to_vec(),
            num_sequences: data.len(),
            num_users,
            top_k,
            p_seqs: order.iter().map(|&i| p_seqs[i]).collect(),
            p_users: order.iter().map(|&i| p_users[i]).collect(),
            clusters,
        })
    }

    /// Plain-text rendering with values rounded to two decimals.
    pub fn render_text(&self) -> String {
        let fmt_vec = |v: &[f64]| v.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(", ");
        let mut out = String::new();
        let _ = writeln!(
            out,
            "K={} clusters, {} sequences, {} users",
            self.clusters.len(),
            self.num_sequences,
            self.num_users
        );
        let _ = writeln!(out, "p_seqs  = ({})", fmt_vec(&self.p_seqs));
        let _ = writeln!(out, "p_users = ({})", fmt_vec(&self.p_users));
        for (rank, cl) in self.clusters.iter().enumerate() {
            let _ = writeln!(out);
            let _ = writeln!(
                out,
                "Cluster {} (model index {}): p_seqs {:.2}, p_users {:.2}",
                rank + 1,
                cl.model_index,
                cl.p_seqs,
                cl.p_users
            );
            let _ = writeln!(out, "  initial probabilities:");
            for (name, f) in self.categories.iter().zip(&cl.initial) {
                let _ = writeln!(out, "    {name}, {f:.2}");
            }
            let _ = writeln!(out, "  top {} categories (category, popularity):", self.top_k);
            for rc in &cl.top_categories {
                let _ = writeln!(out, "    {}, {:.2}", rc.name, rc.popularity);
            }
            let _ = writeln!(out, "  top {} transitions:", self.top_k);
            for t in &cl.top_transitions {
                let _ = writeln!(out, "    {} - {}, {:.2}", t.from_name, t.to_name, t.probability);
            }
        }
        out
    }
}
