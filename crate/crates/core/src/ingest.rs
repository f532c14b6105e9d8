//! Check-in log parsing and preprocessing into weekly category sequences.
//!
//! Pipeline: [`parse_checkins`] keeps one city's rows inside a date window,
//! [`build_sequences`] groups each user's check-ins by ISO week after dropping
//! low-activity users and short weeks, and [`downsample_per_user`] caps every
//! user at the median number of sequences per user.

use std::collections::{BTreeMap, HashSet};
use std::io::Read;

use chrono::{Datelike, NaiveDate, NaiveDateTime};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{CategorySet, IsoWeek, Sequence, SequenceDataset};

const DATETIME_FORMATS: [&str; 2] = ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"];

#[derive(Debug, Clone, PartialEq)]
pub struct CheckinRecord {
    pub userid: String,
    pub placeid: Option<String>,
    pub datetime: NaiveDateTime,
    pub lat: Option<f64>,
    pub lon: Option<f64>,
    pub city: String,
    pub category: String,
    /// 1-based line in the source file.
    pub line: u64,
}

#[derive(Debug, Clone)]
pub struct IngestConfig {
    pub city: String,
    pub date_from: NaiveDate,
    pub date_to: NaiveDate,
    /// Users with fewer check-ins (after the city and date filters) are dropped.
    pub min_checkins: usize,
    /// Weekly sequences shorter than this are dropped.
    pub min_seq_len: usize,
    pub seed: u64,
    pub categories: CategorySet,
    /// Fail on unknown categories instead of skipping them.
    pub strict: bool,
}

impl IngestConfig {
    pub fn new(city: impl Into<String>) -> Self {
        IngestConfig {
            city: city.into(),
            date_from: NaiveDate::from_ymd_opt(2009, 1, 1).unwrap(),
            date_to: NaiveDate::from_ymd_opt(2011, 12, 31).unwrap(),
            min_checkins: 10,
            min_seq_len: 2,
            seed: 0,
            categories: CategorySet::weeplaces(),
            strict: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_checkins == 0 {
            return Err(Error::invalid("min_checkins must be at least 1"));
        }
        if self.min_seq_len == 0 {
            return Err(Error::invalid("min_seq_len must be at least 1"));
        }
        if self.date_from > self.date_to {
            return Err(Error::invalid(format!(
                "date window is empty: {} is after {}",
                self.date_from, self.date_to
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParsedCheckins {
    pub records: Vec<CheckinRecord>,
    /// Data rows in the file, before any filtering.
    pub rows_read: usize,
    /// Rows in the selected city and window skipped for an unknown category, by name.
    pub unknown_categories: BTreeMap<String, usize>,
}

pub fn parse_datetime(s: &str) -> Option<NaiveDateTime> {
    DATETIME_FORMATS.iter().find_map(|fmt| NaiveDateTime::parse_from_str(s, fmt).ok())
}

struct Columns {
    userid: usize,
    datetime: usize,
    city: usize,
    category: usize,
    placeid: Option<usize>,
    lat: Option<usize>,
    lon: Option<usize>,
}

impl Columns {
    fn from_header(header: &csv::StringRecord) -> Result<Self> {
        let find = |name: &str| header.iter().position(|h| h.eq_ignore_ascii_case(name));
        let require = |name: &str| {
            find(name).ok_or_else(|| Error::Parse { line: 1, reason: format!("header lacks a {name:?} column") })
        };
        Ok(Columns {
            userid: require("userid")?,
            datetime: require("datetime")?,
            city: require("city")?,
            category: require("category")?,
            placeid: find("placeid"),
            lat: find("lat"),
            lon: find("lon"),
        })
    }
}

fn optional_field(row: &csv::StringRecord, col: Option<usize>) -> Option<&str> {
    col.and_then(|c| row.get(c)).filter(|v| !v.is_empty())
}

fn parse_coordinate(row: &csv::StringRecord, col: Option<usize>, name: &str, line: u64) -> Result<Option<f64>> {
    optional_field(row, col)
        .map(|v| v.parse::<f64>().map_err(|_| Error::Parse { line, reason: format!("{name} {v:?} is not a number") }))
        .transpose()
}

fn parse_row(row: &csv::StringRecord, cols: &Columns, line: u64) -> Result<CheckinRecord> {
    let required = |col: usize, name: &str| -> Result<String> {
        match row.get(col) {
            Some(v) if !v.is_empty() => Ok(v.to_string()),
            _ => Err(Error::Parse { line, reason: format!("empty {name}") }),
        }
    };
    let raw_datetime = required(cols.datetime, "datetime")?;
    let datetime = parse_datetime(&raw_datetime)
        .ok_or_else(|| Error::Parse { line, reason: format!("unparseable datetime {raw_datetime:?}") })?;
    Ok(CheckinRecord {
        userid: required(cols.userid, "userid")?,
        placeid: optional_field(row, cols.placeid).map(str::to_string),
        datetime,
        lat: parse_coordinate(row, cols.lat, "lat", line)?,
        lon: parse_coordinate(row, cols.lon, "lon", line)?,
        city: required(cols.city, "city")?,
        category: required(cols.category, "category")?,
        line,
    })
}

/// Reads a check-in CSV, keeping rows of `config.city` dated inside the window.
///
/// Output is sorted by `(userid, datetime)`; rows with equal keys keep file order.
pub fn parse_checkins<R: Read>(source: R, config: &IngestConfig) -> Result<ParsedCheckins> {
    config.validate()?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(source);
    let cols = Columns::from_header(reader.headers()?)?;

    let mut out = ParsedCheckins::default();
    let mut row = csv::StringRecord::new();
    loop {
        match reader.read_record(&mut row) {
            Ok(true) => {}
            Ok(false) => break,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                return Err(Error::Parse { line, reason: e.to_string() });
            }
        }
        let line = row.position().map_or(0, |p| p.line());
        out.rows_read += 1;
        let record = parse_row(&row, &cols, line)?;
        let date = record.datetime.date();
        if record.city != config.city || date < config.date_from || date > config.date_to {
            continue;
        }
        if config.categories.index_of(&record.category).is_none() {
            if config.strict {
                return Err(Error::UnknownCategory { line, name: record.category });
            }
            log::warn!("line {line}: skipping unknown category {:?}", record.category);
            *out.unknown_categories.entry(record.category).or_default() += 1;
            continue;
        }
        out.records.push(record);
    }
    out.records.sort_by(|a, b| a.userid.cmp(&b.userid).then(a.datetime.cmp(&b.datetime)));
    Ok(out)
}

/// Counts reported by [`build_sequences_with_summary`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BuildSummary {
    pub users_seen: usize,
    pub users_kept: usize,
    /// Weekly sequences of the kept users, before the length filter.
    pub sequences_built: usize,
    pub sequences_kept: usize,
}

pub fn build_sequences(records: &[CheckinRecord], config: &IngestConfig) -> SequenceDataset {
    build_sequences_with_summary(records, config).0
}

/// One sequence per (user, ISO week), users ordered by id and weeks chronologically.
pub fn build_sequences_with_summary(
    records: &[CheckinRecord],
    config: &IngestConfig,
) -> (SequenceDataset, BuildSummary) {
    let mut by_user: BTreeMap<&str, Vec<&CheckinRecord>> = BTreeMap::new();
    for r in records {
        by_user.entry(&r.userid).or_default().push(r);
    }

    let mut summary = BuildSummary { users_seen: by_user.len(), ..Default::default() };
    let mut sequences = Vec::new();
    for (user, mut checkins) in by_user {
        if checkins.len() < config.min_checkins {
            continue;
        }
        summary.users_kept += 1;
        checkins.sort_by_key(|r| r.datetime);

        let mut current: Option<(IsoWeek, String, Vec<usize>)> = None;
        let mut flush = |week: IsoWeek, city: String, states: Vec<usize>, summary: &mut BuildSummary| {
            summary.sequences_built += 1;
            if states.len() >= config.min_seq_len {
                summary.sequences_kept += 1;
                sequences.push(Sequence::new(user, city, week, states).expect("non-empty week"));
            }
        };
        for r in checkins {
            let Some(state) = config.categories.index_of(&r.category) else {
                log::warn!("line {}: dropping unknown category {:?}", r.line, r.category);
                continue;
            };
            let week = IsoWeek::from(r.datetime.iso_week());
            match &mut current {
                Some((w, _, states)) if *w == week => states.push(state),
                _ => {
                    if let Some((w, city, states)) = current.take() {
                        flush(w, city, states, &mut summary);
                    }
                    current = Some((week, r.city.clone(), vec![state]));
                }
            }
        }
        if let Some((w, city, states)) = current {
            flush(w, city, states, &mut summary);
        }
    }
    let data = SequenceDataset::new(config.categories.clone(), sequences).expect("indices come from the vocabulary");
    (data, summary)
}

/// Lower median of the per-user sequence counts; 0 for an empty dataset.
pub fn median_sequences_per_user(data: &SequenceDataset) -> usize {
    let mut counts: Vec<usize> = per_user_indices(data).values().map(Vec::len).collect();
    if counts.is_empty() {
        return 0;
    }
    counts.sort_unstable();
    counts[counts.len().div_ceil(2) - 1]
}

fn per_user_indices(data: &SequenceDataset) -> BTreeMap<&str, Vec<usize>> {
    let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in data.sequences().iter().enumerate() {
        map.entry(s.user.as_str()).or_default().push(i);
    }
    map
}

/// Keeps at most `Me` (the lower median of sequences per user) randomly chosen
/// sequences for every user. Surviving sequences keep their original order.
pub fn downsample_per_user(data: &SequenceDataset, seed: u64) -> SequenceDataset {
    let cap = median_sequences_per_user(data);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = HashSet::new();
    for indices in per_user_indices(data).into_values() {
        if indices.len() <= cap {
            keep.extend(indices);
        } else {
            let chosen = rand::seq::index::sample(&mut rng, indices.len(), cap);
            keep.extend(chosen.into_iter().map(|j| indices[j]));
        }
    }
    data.retain_indices(|i| keep.contains(&i))
}
