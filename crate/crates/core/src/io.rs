//! On-disk formats.
//!
//! * model: JSON `{"categories": [..], "K": k, "p": [..], "clusters": [{"f": [..], "T": [[..], ..]}, ..]}`
//! * sequences: JSON lines; a header `{"categories": [..]}` followed by one
//!   `{"user": .., "city": .., "week": "YYYY-Www", "states": [..]}` per sequence
//! * posteriors: CSV `sequence,user,g0,..,g{K-1}`
//! * labels: one cluster index per line
//! * trace: CSV `iter,loglik,delta`
//!
//! Floats in the model, posterior and report files are written with 17
//! significant digits, which round-trips every `f64`.

use std::io::{self, BufRead, Write};

use serde::ser::Serialize;
use serde::Deserialize;
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::em::{FitResult, PosteriorMatrix};
use crate::error::{Error, Result};
use crate::model::{CategorySet, ChainParams, IsoWeek, MixtureModel, Sequence, SequenceDataset};

/// `f64` in scientific notation with 17 significant digits.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Pretty JSON formatter that writes every float via [`format_f64`].
struct PreciseFormatter {
    inner: PrettyFormatter<'static>,
}

impl Formatter for PreciseFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        if value.is_finite() {
            writer.write_all(format_f64(value).as_bytes())
        } else {
            writer.write_all(b"null")
        }
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object_value(w)
    }
}

/// Pretty-printed JSON with full-precision floats and a trailing newline.
pub fn to_precise_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser =
        serde_json::Serializer::with_formatter(&mut buf, PreciseFormatter { inner: PrettyFormatter::new() });
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

#[derive(serde::Serialize, Deserialize)]
struct ChainFile {
    f: Vec<f64>,
    #[serde(rename = "T")]
    t: Vec<Vec<f64>>,
}

#[derive(serde::Serialize, Deserialize)]
struct ModelFile {
    categories: Vec<String>,
    #[serde(rename = "K")]
    k: usize,
    p: Vec<f64>,
    clusters: Vec<ChainFile>,
}

pub fn model_to_json(model: &MixtureModel) -> Result<String> {
    let file = ModelFile {
        categories: model.categories().names().to_vec(),
        k: model.num_clusters(),
        p: model.weights().to_vec(),
        clusters: model
            .clusters()
            .iter()
            .map(|c| ChainFile { f: c.initial().to_vec(), t: c.transition_matrix() })
            .collect(),
    };
    to_precise_json(&file)
}

pub fn model_from_json(text: &str) -> Result<MixtureModel> {
    let file: ModelFile = serde_json::from_str(text)?;
    if file.k != file.clusters.len() {
        return Err(Error::invalid(format!("K = {} but {} clusters listed", file.k, file.clusters.len())));
    }
    let clusters = file.clusters.into_iter().map(|c| ChainParams::new(c.f, c.t)).collect::<Result<Vec<_>>>()?;
    MixtureModel::new(CategorySet::new(file.categories)?, file.p, clusters)
}

pub fn write_model<W: Write>(mut w: W, model: &MixtureModel) -> Result<()> {
    w.write_all(model_to_json(model)?.as_bytes())?;
    Ok(())
}

pub fn read_model<R: io::Read>(mut r: R) -> Result<MixtureModel> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    model_from_json(&text)
}

#[derive(serde::Serialize, Deserialize)]
struct SequenceHeader {
    categories: Vec<String>,
}

#[derive(serde::Serialize, Deserialize)]
struct SequenceLine {
    user: String,
    city: String,
    week: String,
    states: Vec<usize>,
}

pub fn write_sequences<W: Write>(mut w: W, data: &SequenceDataset) -> Result<()> {
    serde_json::to_writer(&mut w, &SequenceHeader { categories: data.categories().names().to_vec() })?;
    w.write_all(b"\n")?;
    for s in data.sequences() {
        let line = SequenceLine {
            user: s.user.clone(),
            city: s.city.clone(),
            week: s.week.to_string(),
            states: s.states().to_vec(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sequences<R: BufRead>(r: R) -> Result<SequenceDataset> {
    let mut lines = r.lines().enumerate().map(|(i, l)| (i as u64 + 1, l));
    let parse_err = |line: u64, e: &dyn std::fmt::Display| Error::Parse { line, reason: e.to_string() };

    let (_, header) = lines.next().ok_or_else(|| Error::Parse { line: 1, reason: "empty sequence file".into() })?;
    let header: SequenceHeader = serde_json::from_str(&header?).map_err(|e| parse_err(1, &e))?;
    let categories = CategorySet::new(header.categories).map_err(|e| parse_err(1, &e))?;

    let mut sequences = Vec::new();
    for (line_no, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SequenceLine = serde_json::from_str(&line).map_err(|e| parse_err(line_no, &e))?;
        let week: IsoWeek = rec.week.parse().map_err(|e: Error| parse_err(line_no, &e))?;
        let seq = Sequence::new(rec.user, rec.city, week, rec.states).map_err(|e| parse_err(line_no, &e))?;
        if let Some(&bad) = seq.states().iter().find(|&&x| x >= categories.len()) {
            return Err(parse_err(line_no, &format!("state {bad} outside 0..{}", categories.len())));
        }
        sequences.push(seq);
    }
    SequenceDataset::new(categories, sequences)
}

pub fn write_labels<W: Write>(mut w: W, labels: &[usize]) -> Result<()> {
    for l in labels {
        writeln!(w, "{l}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels<R: BufRead>(r: R) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        out.push(line.parse().map_err(|_| Error::Parse { line: i as u64 + 1, reason: format!("bad label {line:?}") })?);
    }
    Ok(out)
}

pub fn write_posteriors<W: Write>(w: W, data: &SequenceDataset, posteriors: &PosteriorMatrix) -> Result<()> {
    if data.len() != posteriors.num_sequences() {
        return Err(Error::DimensionMismatch { expected: data.len(), found: posteriors.num_sequences() });
    }
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["sequence".to_string(), "user".to_string()];
    header.extend((0..posteriors.num_clusters()).map(|i| format!("g{i}")));
    out.write_record(&header)?;
    for (i, (s, row)) in data.sequences().iter().zip(posteriors.rows()).enumerate() {
        let mut rec = vec![i.to_string(), s.user.clone()];
        rec.extend(row.iter().map(|&g| format_f64(g)));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_posteriors<R: io::Read>(r: R) -> Result<PosteriorMatrix> {
    let mut reader = csv::Reader::from_reader(r);
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let row = rec
            .iter()
            .skip(2)
            .map(|v| v.parse::<f64>().map_err(|_| Error::Parse { line, reason: format!("bad probability {v:?}") }))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    PosteriorMatrix::from_rows(rows)
}

/// One row per iteration; `delta` is measured against the previous row (the initial model for row 1).
pub fn write_trace<W: Write>(w: W, fit: &FitResult) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["iter", "loglik", "delta"])?;
    for (i, (ll, delta)) in fit.log_likelihood_trace.iter().zip(fit.deltas()).enumerate() {
        out.write_record([(i + 1).to_string(), format_f64(ll.0), format_f64(delta)])?;
    }
    out.flush()?;
    Ok(())
}
