//! Ancestral sampling from a [`MixtureModel`].
//!
//! Randomness comes from ChaCha8 (`rand_chacha`) seeded with
//! `seed_from_u64`, whose output stream is fixed across platforms, so a seed
//! fully determines the generated corpus.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{IsoWeek, MixtureModel, Sequence, SequenceDataset};

pub const SYNTHETIC_CITY: &str = "synthetic";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LengthDistribution {
    Fixed(usize),
    /// Uniform over `min..=max`.
    Uniform { min: usize, max: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthConfig {
    pub n_sequences: usize,
    pub lengths: LengthDistribution,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sequences == 0 {
            return Err(Error::invalid("n_sequences must be at least 1"));
        }
        match self.lengths {
            LengthDistribution::Fixed(0) => Err(Error::invalid("sequence length must be at least 1")),
            LengthDistribution::Uniform { min, max } if min == 0 || min > max => {
                Err(Error::invalid(format!("invalid length range {min}..={max}")))
            }
            _ => Ok(()),
        }
    }
}

/// Inverse-CDF draw from a probability vector. Falls back to the last
/// positive entry when rounding leaves `u` above the cumulative sum.
fn draw<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Draws `config.n_sequences` sequences and their generating cluster labels.
/// Each sequence gets its own synthetic user id.
pub fn sample(model: &MixtureModel, config: &SynthConfig) -> Result<(SequenceDataset, Vec<usize>)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let week = IsoWeek { year: 1970, week: 1 };
    let width = config.n_sequences.to_string().len();

    let mut sequences = Vec::with_capacity(config.n_sequences);
    let mut labels = Vec::with_capacity(config.n_sequences);
    for n in 0..config.n_sequences {
        let cluster = draw(&mut rng, model.weights());
        let chain = model.cluster(cluster);
        let len = match config.lengths {
            LengthDistribution::Fixed(l) => l,
            LengthDistribution::Uniform { min, max } => rng.gen_range(min..=max),
        };
        let mut states = Vec::with_capacity(len);
        let mut state = draw(&mut rng, chain.initial());
        states.push(state);
        for _ in 1..len {
            state = draw(&mut rng, chain.row(state));
            states.push(state);
        }
        let user = format!("synth-{n:0width$}");
        sequences.push(Sequence::new(user, SYNTHETIC_CITY, week, states)?);
        labels.push(cluster);
    }
    Ok((SequenceDataset::new(model.categories().clone(), sequences)?, labels))
}
