//! Forecast evaluation: WQL, MASE, VRSE, relative scores and ranks.
//!
//! Truth positions that are missing (`NaN`) are left out of every sum.

use std::io::Write;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::codebook::sorted_quantile;
use crate::error::{Error, Result};
use crate::tokenizer::fill_missing;

/// The nine evaluated quantile levels.
pub const QUANTILE_LEVELS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Pinball loss of quantile `q` at level `alpha` against `x`.
pub fn quantile_loss(alpha: f64, q: f64, x: f64) -> f64 {
    if x >= q {
        alpha * (x - q)
    } else {
        (1.0 - alpha) * (q - x)
    }
}

fn check_len(what: &str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::InvalidArgument(format!(
            "{what} has length {got}, expected {expected}"
        )));
    }
    Ok(())
}

/// Numerator and denominator of WQL, kept apart so that datasets can pool
/// them across series.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct WqlParts {
    /// `Σ_α 2·Σ_t QL_α` divided by the number of levels.
    pub loss: f64,
    /// `Σ_t |x_t|`.
    pub scale: f64,
}

impl WqlParts {
    pub fn value(&self) -> Result<f64> {
        if self.scale > 0.0 {
            Ok(self.loss / self.scale)
        } else {
            Err(Error::Degenerate("WQL: truth is identically zero".into()))
        }
    }
}

impl std::ops::AddAssign for WqlParts {
    fn add_assign(&mut self, rhs: Self) {
        self.loss += rhs.loss;
        self.scale += rhs.scale;
    }
}

pub fn wql_parts(truth: &[f64], quantiles: &[Vec<f64>], levels: &[f64]) -> Result<WqlParts> {
    check_len("quantile set", quantiles.len(), levels.len())?;
    if levels.is_empty() {
        return Err(Error::Empty("quantile levels"));
    }
    let mut loss = 0.0;
    for (q, &alpha) in quantiles.iter().zip(levels) {
        check_len("quantile forecast", q.len(), truth.len())?;
        let ql: f64 = truth
            .iter()
            .zip(q)
            .filter(|(x, _)| !x.is_nan())
            .map(|(&x, &qt)| quantile_loss(alpha, qt, x))
            .sum();
        loss += 2.0 * ql;
    }
    let scale = truth.iter().filter(|x| !x.is_nan()).map(|x| x.abs()).sum();
    Ok(WqlParts {
        loss: loss / levels.len() as f64,
        scale,
    })
}

/// Weighted quantile loss at the nine standard levels.
pub fn wql(truth: &[f64], quantiles: &[Vec<f64>]) -> Result<f64> {
    wql_parts(truth, quantiles, &QUANTILE_LEVELS)?.value()
}

/// Mean absolute seasonal difference of the context.
pub fn seasonal_error(context: &[f64], season: usize) -> Result<f64> {
    if season == 0 || context.len() <= season {
        return Err(Error::InvalidArgument(format!(
            "context of length {} is too short for season {season}",
            context.len()
        )));
    }
    let diffs: Vec<f64> = context
        .iter()
        .zip(&context[season..])
        .map(|(a, b)| (a - b).abs())
        .filter(|d| !d.is_nan())
        .collect();
    if diffs.is_empty() {
        return Err(Error::Degenerate("MASE: no observed seasonal pairs in context".into()));
    }
    Ok(diffs.iter().sum::<f64>() / diffs.len() as f64)
}

/// Mean absolute scaled error: mean forecast error over the in-sample
/// mean seasonal error, i.e. `[(C−S)/H · Σ|ŷ−y|] / Σ|x_t − x_{t+S}|`.
pub fn mase(truth: &[f64], forecast: &[f64], context: &[f64], season: usize) -> Result<f64> {
    check_len("point forecast", forecast.len(), truth.len())?;
    let denom = seasonal_error(context, season)?;
    if denom == 0.0 {
        return Err(Error::Degenerate("MASE: context is perfectly seasonal".into()));
    }
    let errs: Vec<f64> = truth
        .iter()
        .zip(forecast)
        .filter(|(x, _)| !x.is_nan())
        .map(|(x, y)| (y - x).abs())
        .collect();
    if errs.is_empty() {
        return Err(Error::Empty("observed truth"));
    }
    Ok(errs.iter().sum::<f64>() / errs.len() as f64 / denom)
}

/// One-sided DFT amplitude spectrum `|X_k|`, `k = 0..=n/2`.
pub fn amplitude_spectrum(x: &[f64]) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf.truncate(x.len() / 2 + 1);
    buf.iter().map(|c| c.norm()).collect()
}

/// Relative squared error between the amplitude spectra of forecast and
/// truth. Missing truth values are linearly filled first, since the
/// spectrum needs a complete grid.
pub fn vrse(truth: &[f64], forecast: &[f64]) -> Result<f64> {
    check_len("point forecast", forecast.len(), truth.len())?;
    if truth.len() < 2 {
        return Err(Error::InvalidArgument("VRSE needs at least two time steps".into()));
    }
    let mut filled = truth.to_vec();
    fill_missing(&mut filled);
    if filled.iter().any(|v| v.is_nan()) {
        return Err(Error::AllMissing);
    }
    let at = amplitude_spectrum(&filled);
    let af = amplitude_spectrum(forecast);
    let energy: f64 = at.iter().map(|a| a * a).sum();
    if energy == 0.0 {
        return Err(Error::Degenerate("VRSE: truth has zero spectral energy".into()));
    }
    Ok(at.iter().zip(&af).map(|(t, f)| (f - t).powi(2)).sum::<f64>() / energy)
}

/// Geometric mean of `scores[d] / baselines[d]`, skipping non-positive or
/// non-finite ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeScore {
    pub value: f64,
    /// Indices of datasets left out of the mean.
    pub excluded: Vec<usize>,
}

pub fn aggregate_relative(scores: &[f64], baselines: &[f64]) -> Result<RelativeScore> {
    check_len("baseline scores", baselines.len(), scores.len())?;
    let mut log_sum = 0.0;
    let mut used = 0usize;
    let mut excluded = Vec::new();
    for (d, (&s, &b)) in scores.iter().zip(baselines).enumerate() {
        let ratio = s / b;
        if b > 0.0 && ratio > 0.0 && ratio.is_finite() {
            log_sum += ratio.ln();
            used += 1;
        } else {
            excluded.push(d);
        }
    }
    if used == 0 {
        return Err(Error::Degenerate("no dataset has a positive relative score".into()));
    }
    Ok(RelativeScore {
        value: (log_sum / used as f64).exp(),
        excluded,
    })
}

/// Mean rank per model over a `models × datasets` table where lower is
/// better. Ties share the mean of the ranks they span.
pub fn average_rank(table: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n_models = table.len();
    if n_models == 0 {
        return Err(Error::Empty("score table"));
    }
    let n_data = table[0].len();
    if n_data == 0 {
        return Err(Error::Empty("score table datasets"));
    }
    for (m, row) in table.iter().enumerate() {
        check_len("score table row", row.len(), n_data)?;
        if let Some(d) = row.iter().position(|v| v.is_nan()) {
            return Err(Error::InvalidArgument(format!(
                "missing score for model {m} on dataset {d}"
            )));
        }
    }
    let mut totals = vec![0.0; n_models];
    for d in 0..n_data {
        for m in 0..n_models {
            let v = table[m][d];
            let below = table.iter().filter(|r| r[d] < v).count();
            let tied = table.iter().filter(|r| r[d] == v).count();
            totals[m] += below as f64 + (tied as f64 + 1.0) / 2.0;
        }
    }
    Ok(totals.into_iter().map(|t| t / n_data as f64).collect())
}

/// Default seasonal period for a frequency tag. Unknown tags map to 1.
pub fn seasonality(freq: &str) -> usize {
    let base = freq.trim_start_matches(|c: char| c.is_ascii_digit());
    let base = base.split('-').next().unwrap_or(base);
    match base {
        "S" | "s" => 3600,
        "T" | "min" => 1440,
        "H" | "h" => 24,
        "D" => 7,
        "B" => 5,
        "W" => 1,
        "M" | "MS" | "ME" => 12,
        "Q" | "QS" | "QE" => 4,
        "Y" | "YS" | "YE" | "A" | "AS" => 1,
        _ => 1,
    }
}

/// Point and quantile forecasts of a single series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilisticForecast {
    pub point: Vec<f64>,
    /// One array per entry of [`QUANTILE_LEVELS`].
    pub quantiles: Vec<Vec<f64>>,
}

/// Repeats the last `season` context values over the horizon. Missing
/// context values are filled first. All quantiles equal the point forecast.
pub fn seasonal_naive(context: &[f64], season: usize, horizon: usize) -> Result<ProbabilisticForecast> {
    if season == 0 || context.len() < season {
        return Err(Error::InvalidArgument(format!(
            "seasonal naive needs at least {season} context values, got {}",
            context.len()
        )));
    }
    let mut ctx = context.to_vec();
    fill_missing(&mut ctx);
    if ctx.iter().any(|v| v.is_nan()) {
        return Err(Error::AllMissing);
    }
    let last = &ctx[ctx.len() - season..];
    let point: Vec<f64> = (0..horizon).map(|h| last[h % season]).collect();
    Ok(ProbabilisticForecast {
        quantiles: vec![point.clone(); QUANTILE_LEVELS.len()],
        point,
    })
}

/// Per-step empirical quantiles of sample paths (inclusive linear
/// interpolation); the point forecast is the median.
pub fn forecast_from_samples(samples: &[Vec<f64>]) -> Result<ProbabilisticForecast> {
    let Some(first) = samples.first() else {
        return Err(Error::Empty("sample paths"));
    };
    let h = first.len();
    for s in samples {
        check_len("sample path", s.len(), h)?;
    }
    let mut quantiles = vec![Vec::with_capacity(h); QUANTILE_LEVELS.len()];
    let mut point = Vec::with_capacity(h);
    let mut column = Vec::with_capacity(samples.len());
    for t in 0..h {
        column.clear();
        column.extend(samples.iter().map(|s| s[t]));
        column.sort_by(f64::total_cmp);
        for (q, &alpha) in quantiles.iter_mut().zip(&QUANTILE_LEVELS) {
            q.push(sorted_quantile(&column, alpha));
        }
        point.push(sorted_quantile(&column, 0.5));
    }
    Ok(ProbabilisticForecast { point, quantiles })
}

/// Metrics of one series; `None` marks a degenerate value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesScores {
    pub wql: Option<f64>,
    pub mase: Option<f64>,
    pub vrse: Option<f64>,
}

/// Dataset-level aggregation: WQL pools numerators and denominators over
/// series; MASE and VRSE are means over the series where they are defined.
#[derive(Debug, Clone, Default)]
pub struct DatasetAccumulator {
    wql: WqlParts,
    mase: Vec<f64>,
    vrse: Vec<f64>,
    pub series: usize,
    /// Series whose MASE or VRSE was degenerate.
    pub degenerate: usize,
}

impl DatasetAccumulator {
    pub fn add(
        &mut self,
        truth: &[f64],
        forecast: &ProbabilisticForecast,
        context: &[f64],
        season: usize,
    ) -> Result<SeriesScores> {
        let parts = wql_parts(truth, &forecast.quantiles, &QUANTILE_LEVELS)?;
        self.wql += parts;
        self.series += 1;
        let m = mase(truth, &forecast.point, context, season);
        let v = vrse(truth, &forecast.point);
        for r in [&m, &v] {
            if let Err(e) = r {
                if !matches!(e, Error::Degenerate(_) | Error::AllMissing) {
                    return Err(Error::InvalidArgument(e.to_string()));
                }
            }
        }
        if m.is_err() || v.is_err() {
            self.degenerate += 1;
        }
        if let Ok(m) = m {
            self.mase.push(m);
        }
        if let Ok(v) = v {
            self.vrse.push(v);
        }
        Ok(SeriesScores {
            wql: parts.value().ok(),
            mase: m.ok(),
            vrse: v.ok(),
        })
    }

    pub fn finish(&self) -> Result<DatasetScores> {
        let mean = |v: &[f64], what: &str| {
            if v.is_empty() {
                Err(Error::Degenerate(format!("{what} undefined for every series")))
            } else {
                Ok(v.iter().sum::<f64>() / v.len() as f64)
            }
        };
        Ok(DatasetScores {
            wql: self.wql.value()?,
            mase: mean(&self.mase, "MASE")?,
            vrse: mean(&self.vrse, "VRSE")?,
            series: self.series,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetScores {
    pub wql: f64,
    pub mase: f64,
    pub vrse: f64,
    pub series: usize,
}

impl DatasetScores {
    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Wql => self.wql,
            Metric::Mase => self.mase,
            Metric::Vrse => self.vrse,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Wql,
    Mase,
    Vrse,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Wql, Metric::Mase, Metric::Vrse];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Wql => "wql",
            Metric::Mase => "mase",
            Metric::Vrse => "vrse",
        }
    }
}

/// One line of the evaluation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub model: String,
    pub metric: String,
    pub value: f64,
    pub fingerprint: String,
}

/// Builds the long-format table: raw scores per dataset × model × metric,
/// then per model and metric the geometric-mean score relative to
/// `baseline` (dataset `_relative`) and the average rank (dataset `_rank`).
///
/// `scores[m][d]` belongs to `models[m]` on `datasets[d]`.
pub fn build_report(
    datasets: &[String],
    models: &[String],
    scores: &[Vec<DatasetScores>],
    baseline: &str,
    fingerprint: &str,
) -> Result<Vec<ReportRow>> {
    check_len("score table", scores.len(), models.len())?;
    let base = models
        .iter()
        .position(|m| m == baseline)
        .ok_or_else(|| Error::InvalidArgument(format!("baseline model '{baseline}' not in report")))?;
    let row = |dataset: &str, model: &str, metric: &str, value: f64| ReportRow {
        dataset: dataset.to_string(),
        model: model.to_string(),
        metric: metric.to_string(),
        value,
        fingerprint: fingerprint.to_string(),
    };
    let mut rows = Vec::new();
    for (m, model) in models.iter().enumerate() {
        check_len("model scores", scores[m].len(), datasets.len())?;
        for (d, dataset) in datasets.iter().enumerate() {
            for metric in Metric::ALL {
                rows.push(row(dataset, model, metric.as_str(), scores[m][d].get(metric)));
            }
        }
    }
    for metric in Metric::ALL {
        let table: Vec<Vec<f64>> = scores
            .iter()
            .map(|r| r.iter().map(|s| s.get(metric)).collect())
            .collect();
        let ranks = average_rank(&table)?;
        for (m, model) in models.iter().enumerate() {
            let rel = aggregate_relative(&table[m], &table[base])
                .map(|r| r.value)
                .unwrap_or(f64::NAN);
            rows.push(row("_relative", model, metric.as_str(), rel));
            rows.push(row("_rank", model, metric.as_str(), ranks[m]));
        }
    }
    Ok(rows)
}

pub fn write_report<W: Write>(rows: &[ReportRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}
