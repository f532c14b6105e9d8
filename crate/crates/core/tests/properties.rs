mod common;

use chainmix::analysis::{assign_user, cluster_sizes_sequences, cluster_sizes_users, popularity_vector};
use chainmix::em::{argmax, e_step, fit, fit_from, initialize, m_step, EmConfig, InitMode, PosteriorMatrix};
use chainmix::ingest::{build_sequences, downsample_per_user, median_sequences_per_user, CheckinRecord, IngestConfig};
use chainmix::model::{stationary_distribution, DEFAULT_STATIONARY_MAX_ITERS};
use chainmix::synth::{sample, LengthDistribution, SynthConfig};
use chainmix::{IsoWeek, MixtureModel, Sequence, SequenceDataset};
use chrono::{Duration, NaiveDate};
use common::*;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn log_prob_matches_direct_product(seed in any::<u64>(), c in 2usize..6, len in 1usize..12) {
        let mut r = rng(seed);
        let chain = random_chain(&mut r, c);
        let states: Vec<usize> = (0..len).map(|_| r.gen_range(0..c)).collect();
        let got = chain.sequence_log_prob(&Sequence::from_states(states.clone()).unwrap()).unwrap();
        let want = direct_prob(chain.initial(), &chain.transition_matrix(), &states).ln();
        prop_assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0));
    }

    #[test]
    fn concatenation_identity(seed in any::<u64>(), c in 2usize..6, a in 1usize..8, b in 1usize..8) {
        let mut r = rng(seed);
        let chain = random_chain(&mut r, c);
        let s: Vec<usize> = (0..a).map(|_| r.gen_range(0..c)).collect();
        let t: Vec<usize> = (0..b).map(|_| r.gen_range(0..c)).collect();
        let lp = |v: &[usize]| chain.sequence_log_prob(&Sequence::from_states(v.to_vec()).unwrap()).unwrap();
        let joined: Vec<usize> = s.iter().chain(&t).copied().collect();
        let expected = lp(&s) + lp(&t) - chain.initial()[t[0]].ln() + chain.transition(*s.last().unwrap(), t[0]).ln();
        prop_assert!((lp(&joined) - expected).abs() <= 1e-9);
    }

    #[test]
    fn mixture_lies_between_components(seed in any::<u64>(), k in 1usize..5, c in 2usize..6, len in 1usize..10) {
        let mut r = rng(seed);
        let model = random_model(&mut r, k, c);
        let s = Sequence::from_states((0..len).map(|_| r.gen_range(0..c)).collect()).unwrap();
        let per: Vec<f64> = model.clusters().iter().map(|ch| ch.sequence_log_prob(&s).unwrap()).collect();
        let m = model.mixture_log_prob(&s).unwrap();
        let lo = per.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = per.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(m >= lo - 1e-12 && m <= hi + 1e-12);
        let direct: f64 = model
            .weights()
            .iter()
            .zip(model.clusters())
            .map(|(p, ch)| p * direct_prob(ch.initial(), &ch.transition_matrix(), s.states()))
            .sum();
        prop_assert!((m - direct.ln()).abs() <= 1e-9 * m.abs().max(1.0));
    }

    #[test]
    fn corpus_log_likelihood_is_additive(seed in any::<u64>(), n in 1usize..20) {
        let mut r = rng(seed);
        let model = random_model(&mut r, 3, 4);
        let data = random_dataset(&mut r, n, 4, 1..=8);
        let ll = model.corpus_log_likelihood(&data).unwrap().0;
        let sum: f64 = data.sequences().iter().map(|s| model.mixture_log_prob(s).unwrap()).sum();
        prop_assert!((ll - sum).abs() <= 1e-9 * ll.abs().max(1.0));
        let doubled: Vec<Sequence> = data.sequences().iter().chain(data.sequences()).cloned().collect();
        let doubled = SequenceDataset::new(data.categories().clone(), doubled).unwrap();
        prop_assert!((model.corpus_log_likelihood(&doubled).unwrap().0 - 2.0 * ll).abs() <= 1e-9 * ll.abs().max(1.0));
        prop_assert_eq!(model.corpus_log_likelihood_parallel(&data).unwrap().0.to_bits(), ll.to_bits());
    }

    #[test]
    fn stationary_matches_linear_solve(seed in any::<u64>(), c in 2usize..7) {
        let chain = random_chain(&mut rng(seed), c);
        let pi = stationary_distribution(&chain, 1e-10, DEFAULT_STATIONARY_MAX_ITERS).unwrap();
        let sum: f64 = pi.iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-10);
        let t = chain.transition_matrix();
        let residual = (0..c)
            .map(|k| ((0..c).map(|j| pi[j] * t[j][k]).sum::<f64>() - pi[k]).abs())
            .fold(0.0, f64::max);
        prop_assert!(residual <= 1e-10);
        prop_assert!(max_abs(&pi, &stationary_oracle(&t)) <= 1e-9);
    }

    #[test]
    fn posteriors_and_params_are_normalized(seed in any::<u64>(), k in 1usize..5, c in 2usize..6) {
        let mut r = rng(seed);
        let model = random_model(&mut r, k, c);
        let data = random_dataset(&mut r, 15, c, 1..=10);
        let g = e_step(&model, &data).unwrap();
        for row in g.rows() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
        }
        let next = m_step(&data, &g, 0.0).unwrap();
        prop_assert!((next.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-10);
        for ch in next.clusters() {
            prop_assert!((ch.initial().iter().sum::<f64>() - 1.0).abs() <= 1e-10);
            for row in ch.rows() {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
            }
            prop_assert!((popularity_vector(ch).iter().sum::<f64>() - c as f64).abs() <= 1e-9);
        }
    }

    #[test]
    fn em_never_decreases_likelihood(seed in any::<u64>(), k in 1usize..4, c in 2usize..5) {
        let mut r = rng(seed);
        let data = random_dataset(&mut r, 40, c, 2..=12);
        let config = EmConfig { num_clusters: k, alpha: 0.0, epsilon: 1e-10, max_iters: 60, init: InitMode::Random, seed, ..EmConfig::default() };
        let result = fit(&data, &config).unwrap();
        for d in result.deltas() {
            prop_assert!(d >= -1e-9, "delta {d}");
        }
    }

    #[test]
    fn hard_m_step_is_counting(seed in any::<u64>(), k in 1usize..4, c in 2usize..5, n in 1usize..20) {
        let mut r = rng(seed);
        let data = random_dataset(&mut r, n, c, 1..=10);
        let labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..k)).collect();
        let rows = labels.iter().map(|&l| (0..k).map(|i| if i == l { 1.0 } else { 0.0 }).collect()).collect();
        let model = m_step(&data, &PosteriorMatrix::from_rows(rows).unwrap(), 0.0).unwrap();
        for i in 0..k {
            let members: Vec<&[usize]> =
                data.sequences().iter().zip(&labels).filter(|(_, &l)| l == i).map(|(s, _)| s.states()).collect();
            prop_assert!((model.weights()[i] - members.len() as f64 / n as f64).abs() <= 1e-12);
            let (f, t) = counting_oracle(c, &members);
            let ch = model.cluster(i);
            prop_assert!(max_abs(ch.initial(), &f) <= 1e-12);
            for (a, b) in ch.transition_matrix().iter().zip(&t) {
                prop_assert!(max_abs(a, b) <= 1e-12);
            }
        }
    }

    #[test]
    fn e_step_is_permutation_equivariant(seed in any::<u64>(), k in 2usize..5) {
        let mut r = rng(seed);
        let model = random_model(&mut r, k, 4);
        let data = random_dataset(&mut r, 10, 4, 1..=8);
        let mut order: Vec<usize> = (0..k).collect();
        order.shuffle(&mut r);
        let permuted = model.permuted(&order).unwrap();
        let g = e_step(&model, &data).unwrap();
        let h = e_step(&permuted, &data).unwrap();
        for s in 0..data.len() {
            for (new_i, &old_i) in order.iter().enumerate() {
                prop_assert!((h.row(s)[new_i] - g.row(s)[old_i]).abs() <= 1e-12);
            }
        }
        prop_assert!((model.corpus_log_likelihood(&data).unwrap().0 - permuted.corpus_log_likelihood(&data).unwrap().0).abs() <= 1e-9);
    }

    #[test]
    fn smaller_epsilon_extends_the_trace(seed in any::<u64>()) {
        let mut r = rng(seed);
        let data = random_dataset(&mut r, 30, 3, 2..=10);
        let base = EmConfig { num_clusters: 2, init: InitMode::Random, seed, max_iters: 200, ..EmConfig::default() };
        let coarse = fit(&data, &EmConfig { epsilon: 1e-2, ..base.clone() }).unwrap();
        let fine = fit(&data, &EmConfig { epsilon: 1e-6, ..base }).unwrap();
        prop_assert!(fine.log_likelihood_trace.len() >= coarse.log_likelihood_trace.len());
        for (a, b) in coarse.log_likelihood_trace.iter().zip(&fine.log_likelihood_trace) {
            prop_assert_eq!(a.0.to_bits(), b.0.to_bits());
        }
    }

    #[test]
    fn user_sizes_ignore_duplicated_history(seed in any::<u64>(), users in 1usize..6, k in 1usize..4) {
        let mut r = rng(seed);
        let mut seqs = Vec::new();
        let mut rows = Vec::new();
        for u in 0..users {
            for _ in 0..r.gen_range(1..5) {
                seqs.push(Sequence::new(format!("u{u}"), "X", IsoWeek::new(2010, 1).unwrap(), vec![0, 1]).unwrap());
                rows.push(random_simplex(&mut r, k));
            }
        }
        let data = SequenceDataset::new(categories(2), seqs.clone()).unwrap();
        let before = cluster_sizes_users(&data, &PosteriorMatrix::from_rows(rows.clone()).unwrap()).unwrap();
        prop_assert!((before.iter().sum::<f64>() - 1.0).abs() <= 1e-12);

        // duplicate every sequence of user u0
        let dup: Vec<usize> = (0..seqs.len()).filter(|&i| seqs[i].user == "u0").collect();
        for &i in &dup {
            seqs.push(seqs[i].clone());
            rows.push(rows[i].clone());
        }
        let data = SequenceDataset::new(categories(2), seqs).unwrap();
        let after = cluster_sizes_users(&data, &PosteriorMatrix::from_rows(rows).unwrap()).unwrap();
        prop_assert!(max_abs(&before, &after) <= 1e-12);
    }

    #[test]
    fn argmax_survives_monotone_maps(v in prop::collection::vec(0.001f64..1.0, 1..8)) {
        let i = argmax(&v);
        prop_assert_eq!(argmax(&v.iter().map(|x| x.ln()).collect::<Vec<_>>()), i);
        prop_assert_eq!(argmax(&v.iter().map(|x| 3.0 * x + 1.0).collect::<Vec<_>>()), i);
        prop_assert!(v.iter().all(|&x| x <= v[i]));
        prop_assert!(v[..i].iter().all(|&x| x < v[i]));
    }

    #[test]
    fn downsampling_caps_and_is_idempotent(counts in prop::collection::vec(1usize..12, 1..8), seed in any::<u64>()) {
        let mut seqs = Vec::new();
        for (u, &n) in counts.iter().enumerate() {
            for w in 0..n {
                seqs.push(Sequence::new(format!("user{u}"), "X", IsoWeek::new(2010, w as u32 + 1).unwrap(), vec![0, 1]).unwrap());
            }
        }
        let data = SequenceDataset::new(categories(2), seqs).unwrap();
        let mut sorted = counts.clone();
        sorted.sort_unstable();
        let me = sorted[(sorted.len() + 1) / 2 - 1];
        prop_assert_eq!(median_sequences_per_user(&data), me);

        let once = downsample_per_user(&data, seed);
        for (u, &n) in counts.iter().enumerate() {
            let kept: Vec<&Sequence> = once.sequences().iter().filter(|s| s.user == format!("user{u}")).collect();
            prop_assert_eq!(kept.len(), n.min(me));
            prop_assert!(kept.windows(2).all(|w| w[0].week < w[1].week));
        }
        let twice = downsample_per_user(&once, seed ^ 0x5eed);
        prop_assert_eq!(twice.sequences(), once.sequences());
        let again = downsample_per_user(&data, seed);
        prop_assert_eq!(again.sequences(), once.sequences());
    }

    #[test]
    fn sequences_do_not_depend_on_record_order(seed in any::<u64>(), n in 10usize..60) {
        let mut r = rng(seed);
        let start = NaiveDate::from_ymd_opt(2010, 3, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let config = IngestConfig::new("X");
        let cats = config.categories.names().to_vec();
        let mut minutes: Vec<i64> = (0..n as i64).map(|i| i * 997 + r.gen_range(0..900)).collect();
        minutes.sort_unstable();
        let mut records: Vec<CheckinRecord> = minutes
            .iter()
            .enumerate()
            .map(|(i, &m)| CheckinRecord {
                userid: format!("u{}", r.gen_range(0..3)),
                placeid: None,
                datetime: start + Duration::minutes(m),
                lat: None,
                lon: None,
                city: "X".into(),
                category: cats[r.gen_range(0..cats.len())].clone(),
                line: i as u64 + 2,
            })
            .collect();
        let reference = build_sequences(&records, &config);
        records.shuffle(&mut r);
        let shuffled = build_sequences(&records, &config);
        prop_assert_eq!(shuffled.sequences(), reference.sequences());
        for s in reference.sequences() {
            prop_assert!(s.len() >= config.min_seq_len);
        }
    }
}

#[test]
fn parallel_fit_is_bit_identical() {
    let mut r = rng(99);
    let data = random_dataset(&mut r, 300, 5, 2..=15);
    let config = EmConfig { num_clusters: 3, init: InitMode::Random, seed: 4, ..EmConfig::default() };
    let seq = fit(&data, &config).unwrap();
    let par = fit(&data, &EmConfig { threads: 4, ..config }).unwrap();
    assert_eq!(seq.model, par.model);
    assert_eq!(seq.log_likelihood_trace, par.log_likelihood_trace);
    assert_eq!(seq.posteriors, par.posteriors);
}

#[test]
fn same_seed_same_initial_model() {
    for init in [InitMode::UniformJitter, InitMode::Random] {
        let config = EmConfig { num_clusters: 3, init, seed: 17, ..EmConfig::default() };
        let a = initialize(&config, &categories(5)).unwrap();
        let b = initialize(&config, &categories(5)).unwrap();
        assert_eq!(a, b);
        let other = initialize(&EmConfig { seed: 18, ..config }, &categories(5)).unwrap();
        assert_ne!(a, other);
    }
}

#[test]
fn cluster_sizes_equal_final_weights() {
    let mut r = rng(5);
    let data = random_dataset(&mut r, 80, 4, 2..=10);
    let result = fit(&data, &EmConfig { num_clusters: 3, init: InitMode::Random, ..EmConfig::default() }).unwrap();
    // p after an M-step is the column mean of the posteriors that produced it
    let g = e_step(&result.model, &data).unwrap();
    let next = m_step(&data, &g, EmConfig::default().alpha).unwrap();
    assert_eq!(cluster_sizes_sequences(&g), next.weights());
}

#[test]
fn synthetic_labels_and_transitions_follow_the_model() {
    let mut r = rng(2024);
    let model: MixtureModel = random_model(&mut r, 3, 4);
    let config = SynthConfig { n_sequences: 50_000, lengths: LengthDistribution::Uniform { min: 1, max: 6 }, seed: 8 };
    let (data, labels) = sample(&model, &config).unwrap();

    let mut freq = vec![0.0; 3];
    labels.iter().for_each(|&l| freq[l] += 1.0 / labels.len() as f64);
    assert!(max_abs(&freq, model.weights()) <= 0.01, "{freq:?} vs {:?}", model.weights());

    for i in 0..3 {
        let members: Vec<&[usize]> =
            data.sequences().iter().zip(&labels).filter(|(_, &l)| l == i).map(|(s, _)| s.states()).collect();
        let (f, t) = counting_oracle(4, &members);
        let ch = model.cluster(i);
        assert!(max_abs(&f, ch.initial()) <= 0.02);
        for (row, want) in t.iter().zip(ch.rows()) {
            assert!(max_abs(row, want) <= 0.02, "{row:?} vs {want:?}");
        }
    }
}

#[test]
fn symmetric_start_stays_symmetric() {
    let mut r = rng(12);
    let data = random_dataset(&mut r, 25, 4, 1..=9);
    let config = EmConfig { num_clusters: 3, jitter_scale: 0.0, max_iters: 20, ..EmConfig::default() };
    let start = initialize(&config, data.categories()).unwrap();
    let result = fit_from(&data, start, &config).unwrap();
    for row in result.posteriors.rows() {
        assert!(row.iter().all(|&g| (g - 1.0 / 3.0).abs() <= 1e-12));
    }
    let user = assign_user(&result.model, &data.sequences()[..3]).unwrap();
    assert_eq!(user.cluster, 0);
}
