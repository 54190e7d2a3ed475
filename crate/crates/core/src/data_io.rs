//! Dataset files (long CSV and JSON lines, optionally gzipped) and
//! train/test window extraction.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use chrono::{Datelike, Months, NaiveDate, NaiveDateTime, TimeDelta};
use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::TimeSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    LongCsv,
    Jsonl,
}

impl Format {
    /// Guesses the format from the file name, ignoring a trailing `.gz`.
    pub fn from_path(path: &Path) -> Result<Self> {
        let name = path.to_string_lossy();
        let name = name.strip_suffix(".gz").unwrap_or(&name);
        if name.ends_with(".csv") {
            Ok(Format::LongCsv)
        } else if name.ends_with(".jsonl") || name.ends_with(".json") {
            Ok(Format::Jsonl)
        } else {
            Err(Error::InvalidArgument(format!(
                "cannot infer dataset format of '{}'",
                path.display()
            )))
        }
    }
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "long-csv" | "csv" => Ok(Format::LongCsv),
            "jsonl" => Ok(Format::Jsonl),
            other => Err(Error::InvalidArgument(format!("unknown dataset format '{other}'"))),
        }
    }
}

/// Series sharing one frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub series: Vec<TimeSeries>,
    pub freq: String,
}

impl Dataset {
    /// Checks that ids are unique and every series carries `freq`.
    pub fn new(series: Vec<TimeSeries>, freq: impl Into<String>) -> Result<Self> {
        let freq = freq.into();
        let mut seen = HashMap::new();
        for s in &series {
            if s.freq != freq {
                return Err(Error::MixedFrequency(freq, s.freq.clone()));
            }
            if seen.insert(s.id.as_str(), ()).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate series id '{}'", s.id)));
            }
        }
        Ok(Self { series, freq })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Step {
    Seconds(i64),
    Months(u32),
}

/// Grid step of a frequency tag such as `H`, `15min`, `W-SUN`, `MS`.
fn parse_step(freq: &str) -> Option<Step> {
    let digits = freq.chars().take_while(|c| c.is_ascii_digit()).count();
    let n: i64 = if digits == 0 { 1 } else { freq[..digits].parse().ok()? };
    let unit = freq[digits..].split('-').next()?;
    let secs = match unit {
        "S" | "s" => Some(1),
        "T" | "min" => Some(60),
        "H" | "h" => Some(3600),
        "D" => Some(86_400),
        "W" => Some(604_800),
        _ => None,
    };
    if let Some(s) = secs {
        return Some(Step::Seconds(n * s));
    }
    let months = match unit {
        "M" | "MS" | "ME" => 1,
        "Q" | "QS" | "QE" => 3,
        "Y" | "YS" | "YE" | "A" | "AS" => 12,
        _ => return None,
    };
    Some(Step::Months(u32::try_from(n).ok()? * months))
}

fn step_tag(step: Step) -> String {
    let with_count = |n: i64, unit: &str| if n == 1 { unit.to_string() } else { format!("{n}{unit}") };
    match step {
        Step::Seconds(604_800) => "W".into(),
        Step::Seconds(s) if s % 86_400 == 0 => with_count(s / 86_400, "D"),
        Step::Seconds(s) if s % 3600 == 0 => with_count(s / 3600, "H"),
        Step::Seconds(s) if s % 60 == 0 => with_count(s / 60, "min"),
        Step::Seconds(s) => with_count(s, "S"),
        Step::Months(12) => "Y".into(),
        Step::Months(3) => "Q".into(),
        Step::Months(m) => with_count(m as i64, "M"),
    }
}

/// Timestamp of grid position `k` after `start`.
fn advance(start: NaiveDateTime, step: Step, k: usize) -> Option<NaiveDateTime> {
    match step {
        Step::Seconds(s) => start.checked_add_signed(TimeDelta::try_seconds(s.checked_mul(k as i64)?)?),
        Step::Months(m) => start.checked_add_months(Months::new(m.checked_mul(k as u32)?)),
    }
}

/// Grid position of `t`; months compare by calendar month only.
fn grid_index(start: NaiveDateTime, step: Step, t: NaiveDateTime) -> Option<usize> {
    match step {
        Step::Seconds(s) => {
            let d = (t - start).num_seconds();
            (d >= 0 && d % s == 0).then(|| (d / s) as usize)
        }
        Step::Months(m) => {
            let months = (t.year() - start.year()) as i64 * 12 + t.month() as i64 - start.month() as i64;
            (months >= 0 && months % m as i64 == 0).then(|| (months / m as i64) as usize)
        }
    }
}

/// Infers the step from the smallest gap between consecutive timestamps.
fn infer_step(sorted: &[NaiveDateTime]) -> Option<Step> {
    let gap = sorted.windows(2).map(|w| w[1] - w[0]).min()?;
    let secs = gap.num_seconds();
    let same_time = sorted.iter().all(|t| t.time() == sorted[0].time());
    let days = gap.num_days();
    if same_time && secs % 86_400 == 0 {
        let months = match days {
            28..=31 => Some(1),
            89..=92 => Some(3),
            365..=366 => Some(12),
            _ => None,
        };
        if let Some(m) = months {
            return Some(Step::Months(m));
        }
    }
    (secs > 0).then_some(Step::Seconds(secs))
}

/// Accepts `YYYY-MM-DD`, `YYYY-MM-DD HH:MM[:SS[.f]]` and the `T`-separated
/// form, with an optional trailing `Z`.
pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim().trim_end_matches('Z');
    for fmt in [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t);
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
}

pub fn format_timestamp(t: NaiveDateTime) -> String {
    t.format("%Y-%m-%d %H:%M:%S").to_string()
}

fn open_reader(path: &Path) -> Result<Box<dyn BufRead>> {
    let file = File::open(path)?;
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(BufReader::new(MultiGzDecoder::new(file))))
    } else {
        Ok(Box::new(BufReader::new(file)))
    }
}

fn open_writer(path: &Path) -> Result<Box<dyn Write>> {
    let file = BufWriter::new(File::create(path)?);
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(GzEncoder::new(file, Compression::default())))
    } else {
        Ok(Box::new(file))
    }
}

/// Loads a dataset; `format` defaults to the one implied by the file name.
pub fn load_dataset(path: &Path, format: Option<Format>) -> Result<Dataset> {
    let format = match format {
        Some(f) => f,
        None => Format::from_path(path)?,
    };
    let reader = open_reader(path)?;
    let name = path.display().to_string();
    match format {
        Format::LongCsv => read_long_csv(reader, &name),
        Format::Jsonl => read_jsonl(reader, &name),
    }
}

fn parse_value(raw: &str) -> std::result::Result<f64, String> {
    let raw = raw.trim();
    if raw.is_empty() || raw.eq_ignore_ascii_case("nan") || raw.eq_ignore_ascii_case("na") {
        return Ok(f64::NAN);
    }
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) => Err(format!("non-finite value '{raw}'")),
        Err(_) => Err(format!("cannot parse value '{raw}'")),
    }
}

/// Reads `item_id,timestamp,value` rows (header required, any column
/// order). Rows of one item may come in any order; timestamps absent from
/// the inferred regular grid become missing values.
pub fn read_long_csv<R: Read>(reader: R, name: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let parse_err = |line: usize, message: String| Error::Parse {
        path: name.to_string(),
        line,
        message,
    };
    let headers = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let col = |want: &str| {
        headers
            .iter()
            .position(|h| h == want)
            .ok_or_else(|| parse_err(1, format!("missing column '{want}'")))
    };
    let (c_id, c_ts, c_val) = (col("item_id")?, col("timestamp")?, col("value")?);

    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<(NaiveDateTime, f64, usize)>> = HashMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| record.get(i).ok_or_else(|| parse_err(line, "too few fields".into()));
        let id = field(c_id)?;
        if id.is_empty() {
            return Err(parse_err(line, "empty item_id".into()));
        }
        let ts_raw = field(c_ts)?;
        let ts =
            parse_timestamp(ts_raw).ok_or_else(|| parse_err(line, format!("cannot parse timestamp '{ts_raw}'")))?;
        let value = parse_value(field(c_val)?).map_err(|m| parse_err(line, m))?;
        if !rows.contains_key(id) {
            order.push(id.to_string());
        }
        rows.entry(id.to_string()).or_default().push((ts, value, line));
    }
    if order.is_empty() {
        return Err(parse_err(2, "no data rows".into()));
    }

    let mut steps: Vec<Option<Step>> = Vec::with_capacity(order.len());
    for id in &order {
        let r = rows.get_mut(id).expect("id recorded");
        r.sort_by_key(|&(ts, _, line)| (ts, line));
        if let Some(w) = r.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::DuplicateTimestamp {
                item_id: id.clone(),
                timestamp: format_timestamp(w[0].0),
                first_line: w[0].2,
                second_line: w[1].2,
            });
        }
        let ts: Vec<NaiveDateTime> = r.iter().map(|x| x.0).collect();
        steps.push(infer_step(&ts));
    }
    let mut common: Option<Step> = None;
    for step in steps.iter().flatten() {
        match common {
            None => common = Some(*step),
            Some(c) if c != *step => return Err(Error::MixedFrequency(step_tag(c), step_tag(*step))),
            _ => {}
        }
    }
    // single-observation series only: the grid is irrelevant
    let step = common.unwrap_or(Step::Seconds(86_400));
    let freq = step_tag(step);

    let mut series = Vec::with_capacity(order.len());
    for id in order {
        let r = &rows[&id];
        let start = r[0].0;
        let last = grid_index(start, step, r[r.len() - 1].0);
        let slots = last.map_or(0, |l| l + 1);
        let mut values = vec![f64::NAN; slots];
        let mut taken = vec![false; slots];
        for &(ts, v, line) in r {
            let k = grid_index(start, step, ts).ok_or_else(|| {
                parse_err(
                    line,
                    format!("timestamp {} is off the {freq} grid", format_timestamp(ts)),
                )
            })?;
            if std::mem::replace(&mut taken[k], true) {
                return Err(parse_err(
                    line,
                    format!("two observations fall on grid slot {k} of '{id}'"),
                ));
            }
            values[k] = v;
        }
        series.push(TimeSeries::new(id, start, freq.clone(), values));
    }
    Dataset::new(series, freq)
}

#[derive(Serialize, Deserialize)]
struct JsonRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    item_id: Option<String>,
    start: String,
    freq: String,
    target: Vec<Option<f64>>,
}

/// Reads one `{item_id?, start, freq, target}` object per line; `null`
/// targets are missing values. Blank lines are ignored.
pub fn read_jsonl<R: BufRead>(reader: R, name: &str) -> Result<Dataset> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: name.to_string(),
        line,
        message,
    };
    let mut series: Vec<TimeSeries> = Vec::new();
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut freq: Option<String> = None;
    for (i, text) in reader.lines().enumerate() {
        let line = i + 1;
        let text = text?;
        if text.trim().is_empty() {
            continue;
        }
        let rec: JsonRecord = serde_json::from_str(&text).map_err(|e| parse_err(line, e.to_string()))?;
        let start = parse_timestamp(&rec.start)
            .ok_or_else(|| parse_err(line, format!("cannot parse start '{}'", rec.start)))?;
        match &freq {
            None => freq = Some(rec.freq.clone()),
            Some(f) if *f != rec.freq => return Err(Error::MixedFrequency(f.clone(), rec.freq)),
            _ => {}
        }
        let id = rec.item_id.unwrap_or_else(|| format!("series-{}", series.len()));
        if let Some(first) = ids.insert(id.clone(), line) {
            return Err(parse_err(line, format!("item_id '{id}' already used on line {first}")));
        }
        let values = rec.target.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect();
        series.push(TimeSeries::new(id, start, rec.freq, values));
    }
    let freq = freq.ok_or_else(|| parse_err(1, "no records".into()))?;
    Dataset::new(series, freq)
}

/// Writes a dataset; gzip is applied when the name ends in `.gz`.
pub fn save_dataset(ds: &Dataset, path: &Path, format: Option<Format>) -> Result<()> {
    let format = match format {
        Some(f) => f,
        None => Format::from_path(path)?,
    };
    let mut out = open_writer(path)?;
    match format {
        Format::LongCsv => write_long_csv(ds, &mut out)?,
        Format::Jsonl => write_jsonl(ds, &mut out)?,
    }
    out.flush()?;
    Ok(())
}

/// Missing values are written as empty fields. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_long_csv<W: Write>(ds: &Dataset, out: W) -> Result<()> {
    let step = parse_step(&ds.freq)
        .ok_or_else(|| Error::InvalidArgument(format!("cannot lay out timestamps for frequency '{}'", ds.freq)))?;
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(["item_id", "timestamp", "value"]).map_err(io)?;
    for s in &ds.series {
        for (k, v) in s.values.iter().enumerate() {
            let ts = advance(s.start, step, k)
                .ok_or_else(|| Error::InvalidArgument(format!("timestamp overflow in '{}'", s.id)))?;
            let value = if v.is_nan() { String::new() } else { v.to_string() };
            w.write_record([s.id.as_str(), &format_timestamp(ts), &value])
                .map_err(io)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_jsonl<W: Write>(ds: &Dataset, mut out: W) -> Result<()> {
    for s in &ds.series {
        let rec = JsonRecord {
            item_id: Some(s.id.clone()),
            start: format_timestamp(s.start),
            freq: s.freq.clone(),
            target: s.values.iter().map(|v| (!v.is_nan()).then_some(*v)).collect(),
        };
        serde_json::to_writer(&mut out, &rec).map_err(|e| Error::Io(std::io::Error::other(e)))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Held-out evaluation window of one series.
#[derive(Debug, Clone, PartialEq)]
pub struct TestWindow {
    pub id: String,
    /// At most `C` values immediately preceding the horizon.
    pub context: Vec<f64>,
    pub horizon: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    /// Every series with its last `H` values removed.
    pub train: Vec<TimeSeries>,
    pub test: Vec<TestWindow>,
    /// One message per skipped series.
    pub warnings: Vec<String>,
}

/// Holds out the last `h` points of every series; the context is the up
/// to `c` points before them. Series with at most `h` points are skipped.
pub fn split_last_h(ds: &Dataset, h: usize, c: usize) -> Result<Split> {
    if h == 0 || c == 0 {
        return Err(Error::InvalidArgument(
            "context and horizon lengths must be positive".into(),
        ));
    }
    let mut split = Split {
        train: Vec::new(),
        test: Vec::new(),
        warnings: Vec::new(),
    };
    for s in &ds.series {
        let n = s.len();
        if n <= h {
            split.warnings.push(format!(
                "series '{}' has {n} points, needs more than {h}; skipped",
                s.id
            ));
            continue;
        }
        let cut = n - h;
        split.test.push(TestWindow {
            id: s.id.clone(),
            context: s.values[cut.saturating_sub(c)..cut].to_vec(),
            horizon: s.values[cut..].to_vec(),
        });
        split.train.push(TimeSeries::new(
            s.id.clone(),
            s.start,
            s.freq.clone(),
            s.values[..cut].to_vec(),
        ));
    }
    Ok(split)
}

/// Left-pads with missing values up to length `c`.
pub fn left_pad(context: &[f64], c: usize) -> Vec<f64> {
    let mut out = vec![f64::NAN; c.saturating_sub(context.len())];
    out.extend_from_slice(context);
    out
}

/// Training pairs cut from the end of each series backwards every
/// `stride` points. Series too short for a full window yield one pair with
/// a shorter context, provided more than `h` points exist.
pub fn training_pairs(series: &[TimeSeries], c: usize, h: usize, stride: usize) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    if c == 0 || h == 0 || stride == 0 {
        return Err(Error::InvalidArgument(
            "window lengths and stride must be positive".into(),
        ));
    }
    let mut pairs = Vec::new();
    for s in series {
        let x = &s.values;
        if x.len() <= h {
            continue;
        }
        if x.len() < c + h {
            let cut = x.len() - h;
            pairs.push((x[..cut].to_vec(), x[cut..].to_vec()));
            continue;
        }
        let mut end = x.len();
        while end >= c + h {
            let cut = end - h;
            pairs.push((x[cut - c..cut].to_vec(), x[cut..end].to_vec()));
            if end < c + h + stride {
                break;
            }
            end -= stride;
        }
    }
    Ok(pairs)
}
