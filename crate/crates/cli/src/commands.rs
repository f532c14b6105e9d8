use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::time::Instant;

use chainmix::analysis::{forecast_user, ClusterReport};
use chainmix::em::{fit, EmConfig, InitMode};
use chainmix::ingest::{
    build_sequences_with_summary, downsample_per_user, median_sequences_per_user, parse_checkins, IngestConfig,
};
use chainmix::io::{
    model_from_json, model_to_json, read_posteriors, read_sequences, to_precise_json, write_labels,
    write_posteriors, write_sequences, write_trace,
};
use chainmix::synth::{sample, LengthDistribution, SynthConfig};
use chainmix::{CategorySet, MixtureModel, Sequence, SequenceDataset};
use chrono::NaiveDate;
use serde::Serialize;
use serde_json::json;

use crate::args::{FitArgs, IngestArgs, PredictArgs, ReportArgs, SimulateArgs};
use crate::error::CliError;
use crate::manifest::{sidecar, RunManifest};

fn open(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|e| CliError::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn load_sequences(path: &Path) -> Result<SequenceDataset, CliError> {
    read_sequences(BufReader::new(open(path)?)).map_err(|e| CliError::at(path, e))
}

fn load_model(path: &Path) -> Result<MixtureModel, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    model_from_json(&text).map_err(|e| CliError::at(path, e))
}

fn parse_date(flag: &str, value: &str) -> Result<NaiveDate, CliError> {
    NaiveDate::parse_from_str(value, "%Y-%m-%d")
        .map_err(|e| CliError::Input(format!("--{flag} {value:?}: {e}")))
}

pub fn ingest(args: &IngestArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let categories = match &args.categories {
        Some(names) => CategorySet::new(names.iter().map(|s| s.trim().to_string()))?,
        None => CategorySet::weeplaces(),
    };
    let config = IngestConfig {
        city: args.city.clone(),
        date_from: parse_date("date-from", &args.date_from)?,
        date_to: parse_date("date-to", &args.date_to)?,
        min_checkins: args.min_checkins,
        min_seq_len: args.min_seq_len,
        seed: args.seed,
        categories,
        strict: args.strict,
    };

    let parsed = parse_checkins(BufReader::new(open(&args.input)?), &config).map_err(|e| CliError::at(&args.input, e))?;
    println!("rows read: {}", parsed.rows_read);
    println!("records kept ({}, {}..{}): {}", config.city, config.date_from, config.date_to, parsed.records.len());
    for (name, count) in &parsed.unknown_categories {
        eprintln!("warning: skipped {count} rows with unknown category {name:?}");
    }
    if parsed.records.is_empty() {
        return Err(CliError::Input(format!("{}: no records for city {:?} in the date window", args.input.display(), config.city)));
    }

    let (built, summary) = build_sequences_with_summary(&parsed.records, &config);
    println!("users: {} seen, {} with at least {} check-ins", summary.users_seen, summary.users_kept, config.min_checkins);
    println!("sequences: {} built, {} after dropping those shorter than {}", summary.sequences_built, summary.sequences_kept, config.min_seq_len);
    if built.is_empty() {
        eprintln!("warning: no sequences survived the activity and length filters");
    }

    let median = median_sequences_per_user(&built);
    let data = if args.no_downsample || built.is_empty() {
        built
    } else {
        let d = downsample_per_user(&built, config.seed);
        println!("median sequences per user (Me): {median}");
        println!("sequences after downsampling: {}", d.len());
        d
    };

    write_sequences(create(&args.output)?, &data).map_err(|e| CliError::at(&args.output, e))?;

    let mut manifest = RunManifest::new("ingest", args).input("checkins", &args.input);
    manifest.output("sequences", &args.output);
    manifest.results = json!({
        "rows_read": parsed.rows_read,
        "records_kept": parsed.records.len(),
        "unknown_categories": parsed.unknown_categories,
        "users_seen": summary.users_seen,
        "users_kept": summary.users_kept,
        "sequences_built": summary.sequences_built,
        "sequences_after_length_filter": summary.sequences_kept,
        "median_sequences_per_user": median,
        "sequences_written": data.len(),
    });
    manifest.write(&sidecar(&args.output), started)
}

pub fn fit_cmd(args: &FitArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let data = load_sequences(&args.sequences)?;
    if data.is_empty() {
        return Err(CliError::Input(format!("{}: no sequences to fit", args.sequences.display())));
    }
    let config = EmConfig {
        num_clusters: args.clusters,
        epsilon: args.epsilon,
        max_iters: args.max_iters,
        alpha: args.alpha,
        init: args.init.parse::<InitMode>()?,
        seed: args.seed,
        jitter_scale: args.jitter_scale,
        threads: args.threads,
    };
    let result = fit(&data, &config)?;

    ensure_dir(&args.out_dir)?;
    let model_path = args.out_dir.join("model.json");
    let trace_path = args.out_dir.join("trace.csv");
    let posteriors_path = args.out_dir.join("posteriors.csv");
    fs::write(&model_path, model_to_json(&result.model)?).map_err(|e| CliError::io(&model_path, e))?;
    write_trace(create(&trace_path)?, &result).map_err(|e| CliError::at(&trace_path, e))?;
    write_posteriors(create(&posteriors_path)?, &data, &result.posteriors).map_err(|e| CliError::at(&posteriors_path, e))?;

    let final_ll = result.final_log_likelihood().0;
    println!(
        "{} after {} iterations: log-likelihood {final_ll:.6} ({} sequences, K={})",
        if result.converged { "converged" } else { "not converged" },
        result.iterations,
        data.len(),
        config.num_clusters
    );
    let weights: Vec<String> = result.model.weights().iter().map(|p| format!("{p:.4}")).collect();
    println!("p = ({})", weights.join(", "));

    let mut manifest = RunManifest::new("fit", args).input("sequences", &args.sequences);
    manifest.output("model", &model_path);
    manifest.output("trace", &trace_path);
    manifest.output("posteriors", &posteriors_path);
    manifest.results = json!({
        "converged": result.converged,
        "iterations": result.iterations,
        "initial_log_likelihood": result.initial_log_likelihood.0,
        "final_log_likelihood": final_ll,
        "num_sequences": data.len(),
    });
    manifest.write(&args.out_dir.join("fit.manifest.json"), started)?;

    if args.strict && !result.converged {
        return Err(CliError::NotConverged(format!(
            "EM did not converge within {} iterations (epsilon {})",
            config.max_iters, config.epsilon
        )));
    }
    Ok(())
}

pub fn report(args: &ReportArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let model = load_model(&args.model)?;
    let data = load_sequences(&args.sequences)?;
    let posteriors = read_posteriors(open(&args.posteriors)?).map_err(|e| CliError::at(&args.posteriors, e))?;
    if posteriors.num_sequences() != data.len() {
        return Err(CliError::Input(format!(
            "{} has {} rows but {} has {} sequences",
            args.posteriors.display(),
            posteriors.num_sequences(),
            args.sequences.display(),
            data.len()
        )));
    }
    let report = ClusterReport::new(&model, &data, &posteriors, args.top_k)?;

    ensure_dir(&args.out_dir)?;
    let json_path = args.out_dir.join("report.json");
    let text_path = args.out_dir.join("report.txt");
    let text = report.render_text();
    fs::write(&json_path, to_precise_json(&report)?).map_err(|e| CliError::io(&json_path, e))?;
    fs::write(&text_path, &text).map_err(|e| CliError::io(&text_path, e))?;
    print!("{text}");

    let mut manifest = RunManifest::new("report", args)
        .input("model", &args.model)
        .input("sequences", &args.sequences)
        .input("posteriors", &args.posteriors);
    manifest.output("report_json", &json_path);
    manifest.output("report_text", &text_path);
    manifest.results = json!({ "p_seqs": report.p_seqs, "p_users": report.p_users });
    manifest.write(&args.out_dir.join("report.manifest.json"), started)
}

#[derive(Debug, Serialize)]
struct Prediction {
    user: String,
    cluster: usize,
    membership: Vec<f64>,
    stationary: BTreeMap<String, f64>,
}

pub fn predict(args: &PredictArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let model = load_model(&args.model)?;
    let data = load_sequences(&args.sequences)?;
    if data.categories().names() != model.categories().names() {
        return Err(CliError::Input("sequence file and model use different category sets".into()));
    }
    let mut by_user: BTreeMap<&str, Vec<Sequence>> = BTreeMap::new();
    for s in data.sequences() {
        if args.user.as_deref().is_none_or(|u| u == s.user) {
            by_user.entry(s.user.as_str()).or_default().push(s.clone());
        }
    }
    if by_user.is_empty() {
        return Err(CliError::Input(match &args.user {
            Some(u) => format!("no sequences for user {u:?}"),
            None => "no sequences to predict from".into(),
        }));
    }

    let names = model.categories().names();
    let mut predictions = Vec::with_capacity(by_user.len());
    for (user, seqs) in by_user {
        let forecast = forecast_user(&model, &seqs, args.tol).map_err(|e| match e {
            chainmix::Error::NotConverged { .. } => CliError::Stationary(format!("user {user:?}: {e}")),
            other => CliError::from(other),
        })?;
        let a = &forecast.assignment;
        let membership: Vec<String> = a.membership.iter().map(|x| format!("{x:.4}")).collect();
        println!("user {user}: cluster {} (p_u = ({}))", a.cluster, membership.join(", "));
        println!("  stationary distribution:");
        for (name, pi) in names.iter().zip(&forecast.stationary) {
            println!("    {name}, {pi:.4}");
        }
        predictions.push(Prediction {
            user: user.to_string(),
            cluster: a.cluster,
            membership: a.membership.clone(),
            stationary: names.iter().cloned().zip(forecast.stationary.iter().copied()).collect(),
        });
    }

    if let Some(out) = &args.output {
        fs::write(out, to_precise_json(&predictions)?).map_err(|e| CliError::io(out, e))?;
        let mut manifest = RunManifest::new("predict", args).input("model", &args.model).input("sequences", &args.sequences);
        manifest.output("predictions", out);
        manifest.results = json!({ "users": predictions.len() });
        manifest.write(&sidecar(out), started)?;
    }
    Ok(())
}

pub fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let model = load_model(&args.model)?;
    let lengths = match args.length {
        Some(l) => LengthDistribution::Fixed(l),
        None => LengthDistribution::Uniform { min: args.min_len, max: args.max_len },
    };
    let config = SynthConfig { n_sequences: args.n_sequences, lengths, seed: args.seed };
    let (data, labels) = sample(&model, &config)?;

    let labels_path = args.labels.clone().unwrap_or_else(|| {
        let mut p = args.output.as_os_str().to_owned();
        p.push(".labels");
        p.into()
    });
    write_sequences(create(&args.output)?, &data).map_err(|e| CliError::at(&args.output, e))?;
    write_labels(create(&labels_path)?, &labels).map_err(|e| CliError::at(&labels_path, e))?;
    println!("wrote {} sequences to {}", data.len(), args.output.display());

    let mut manifest = RunManifest::new("simulate", args).input("model", &args.model);
    manifest.output("sequences", &args.output);
    manifest.output("labels", &labels_path);
    manifest.results = json!({ "rng": "ChaCha8 (rand_chacha), seed_from_u64", "seed": args.seed });
    manifest.write(&sidecar(&args.output), started)
}
