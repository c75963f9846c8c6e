//! CSV ingestion of per-slice velocity records.
//!
//! Input columns, located by header name: `road_id`, `day`, `slice` (1..=288),
//! `velocity` (km/h) and optionally `road_length` (metres). Other columns are
//! ignored, so a denoised output file can be read back.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use bvtraffic::series::{nearest_interpolate, VelocitySeries, DEFAULT_SLICE_MINUTES, SLICES_PER_DAY};
use log::info;
use serde::Serialize;

pub type Key = (String, String);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Skipped {
    pub road_id: String,
    pub day: String,
    pub reason: String,
}

/// Road-day series keyed by `(road_id, day)`, in sorted order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub series: BTreeMap<Key, VelocitySeries>,
    pub skipped: Vec<Skipped>,
}

impl Corpus {
    /// Days of each road in sorted order.
    pub fn by_road(&self) -> BTreeMap<&str, Vec<&VelocitySeries>> {
        let mut out: BTreeMap<&str, Vec<&VelocitySeries>> = BTreeMap::new();
        for ((road, _), s) in &self.series {
            out.entry(road.as_str()).or_default().push(s);
        }
        out
    }
}

/// Raw rows grouped by road-day before filtering.
#[derive(Debug, Default)]
struct Rows {
    records: BTreeMap<Key, Vec<(usize, f64)>>,
    lengths: HashMap<String, f64>,
}

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim() == name)
}

fn read_rows<R: Read>(reader: R) -> Result<Rows> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().context("reading header")?.clone();
    let need = |name| column(&headers, name).ok_or_else(|| anyhow!("missing column `{name}`"));
    let (ci, cd, cs, cv) = (need("road_id")?, need("day")?, need("slice")?, need("velocity")?);
    let cl = column(&headers, "road_length");

    let mut rows = Rows::default();
    let mut seen: HashMap<(String, String, usize), u64> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.context("malformed CSV")?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| rec.get(i).ok_or_else(|| anyhow!("line {line}: missing field"));
        let road = field(ci)?.to_string();
        let day = field(cd)?.to_string();
        if road.is_empty() || day.is_empty() {
            bail!("line {line}: empty road_id or day");
        }
        let slice: usize = field(cs)?
            .parse()
            .with_context(|| format!("line {line}: bad slice"))?;
        if !(1..=SLICES_PER_DAY).contains(&slice) {
            bail!("line {line}: slice {slice} outside 1..={SLICES_PER_DAY}");
        }
        let v: f64 = field(cv)?
            .parse()
            .with_context(|| format!("line {line}: bad velocity"))?;
        if !v.is_finite() || v < 0.0 {
            bail!("line {line}: velocity must be finite and >= 0, got {v}");
        }
        if let Some(prev) = seen.insert((road.clone(), day.clone(), slice), line) {
            bail!("line {line}: duplicate record ({road}, {day}, {slice}), first seen on line {prev}");
        }
        if let Some(cl) = cl {
            let raw = field(cl)?;
            if !raw.is_empty() {
                let len: f64 = raw
                    .parse()
                    .with_context(|| format!("line {line}: bad road_length"))?;
                rows.lengths.entry(road.clone()).or_insert(len);
            }
        }
        rows.records.entry((road, day)).or_default().push((slice, v));
    }
    Ok(rows)
}

/// Groups, filters and interpolates records to full days.
pub fn ingest_reader<R: Read>(reader: R, min_records: usize, min_road_length: f64) -> Result<Corpus> {
    let rows = read_rows(reader)?;
    let mut corpus = Corpus::default();
    for ((road, day), recs) in rows.records {
        let skip = |reason: String| Skipped {
            road_id: road.clone(),
            day: day.clone(),
            reason,
        };
        if let Some(&len) = rows.lengths.get(&road) {
            if len < min_road_length {
                let s = skip(format!("road length {len} m below {min_road_length} m"));
                info!("{}/{}: skipped, {}", s.road_id, s.day, s.reason);
                corpus.skipped.push(s);
                continue;
            }
        }
        if recs.len() < min_records {
            let s = skip(format!("{} records, need {min_records}", recs.len()));
            info!("{}/{}: skipped, {}", s.road_id, s.day, s.reason);
            corpus.skipped.push(s);
            continue;
        }
        let series = nearest_interpolate(
            road.clone(),
            day.clone(),
            DEFAULT_SLICE_MINUTES,
            &recs,
            SLICES_PER_DAY,
        )
        .with_context(|| format!("{road}/{day}"))?;
        corpus.series.insert((road, day), series);
    }
    Ok(corpus)
}

pub fn ingest(path: &Path, min_records: usize, min_road_length: f64) -> Result<Corpus> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    ingest_reader(std::io::BufReader::new(file), min_records, min_road_length)
        .with_context(|| format!("ingesting {}", path.display()))
}
