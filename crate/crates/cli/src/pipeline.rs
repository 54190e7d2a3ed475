//! Batch steps shared by the subcommands and the ablation sweep.

use anyhow::{Context, Result};
use rayon::prelude::*;
use wavetoken::codebook::{fit_codebook_with, Codebook};
use wavetoken::data_io::{training_pairs, TestWindow};
use wavetoken::metrics::{
    forecast_from_samples, seasonal_naive, DatasetAccumulator, DatasetScores, ProbabilisticForecast,
};
use wavetoken::seq_model::{sample_forecast, train_markov, MarkovModel, SamplingConfig};
use wavetoken::series::TimeSeries;
use wavetoken::tokenizer::{compute_scale, Tokenizer};

use crate::config::RunConfig;

pub struct CodebookFit {
    pub codebook: Codebook,
    pub windows: usize,
    pub coefficients: usize,
    /// Share of pooled coefficients outside the clipping bounds.
    pub clamp_rate: f64,
    pub failures: Vec<String>,
}

fn window_coefficients(cfg: &RunConfig, context: &[f64], horizon: &[f64]) -> wavetoken::Result<Vec<f64>> {
    let wavelet = cfg
        .wavelet()
        .map_err(|e| wavetoken::Error::InvalidArgument(e.to_string()))?;
    let scale = compute_scale(context)?;
    let mut out: Vec<f64> = wavelet.coefficients(context, &scale)?.observed().collect();
    match wavelet.coefficients(horizon, &scale) {
        Ok(h) => out.extend(h.observed()),
        Err(wavetoken::Error::AllMissing) => {}
        Err(e) => return Err(e),
    }
    Ok(out)
}

/// Pools scaled (and thresholded) coefficients of every training window and
/// fits the codebook on them.
pub fn fit_codebook(cfg: &RunConfig, series: &[TimeSeries]) -> Result<CodebookFit> {
    let pairs = training_pairs(series, cfg.context_length, cfg.horizon_length, cfg.stride)?;
    let per_window: Vec<wavetoken::Result<Vec<f64>>> =
        pairs.par_iter().map(|(c, h)| window_coefficients(cfg, c, h)).collect();
    let mut pooled = Vec::new();
    let mut failures = Vec::new();
    for (i, r) in per_window.into_iter().enumerate() {
        match r {
            Ok(v) => pooled.extend(v),
            Err(e) => failures.push(format!("window {i}: {e}")),
        }
    }
    let codebook = fit_codebook_with(&pooled, cfg.vocab, cfg.bounds(), cfg.binning).context("fitting codebook")?;
    let clamped = pooled.iter().filter(|&&w| !codebook.in_range(w)).count();
    Ok(CodebookFit {
        clamp_rate: clamped as f64 / pooled.len() as f64,
        coefficients: pooled.len(),
        windows: pairs.len(),
        codebook,
        failures,
    })
}

pub fn tokenizer(cfg: &RunConfig, codebook: Codebook) -> Result<Tokenizer> {
    Ok(Tokenizer::new(cfg.wavelet()?, codebook))
}

pub struct Trained {
    pub model: MarkovModel,
    pub windows: usize,
    pub failures: Vec<String>,
}

pub fn train(cfg: &RunConfig, tok: &Tokenizer, series: &[TimeSeries]) -> Result<Trained> {
    let pairs = training_pairs(series, cfg.context_length, cfg.horizon_length, cfg.stride)?;
    let streams: Vec<_> = pairs.par_iter().map(|(c, h)| tok.tokenize_pair(c, h)).collect();
    let mut corpus = Vec::with_capacity(streams.len());
    let mut failures = Vec::new();
    for (i, s) in streams.into_iter().enumerate() {
        match s {
            Ok(p) => corpus.push(p),
            Err(e) => failures.push(format!("window {i}: {e}")),
        }
    }
    let model = train_markov(&corpus, cfg.order, cfg.alpha, tok.codebook.vocab_size()).context("training model")?;
    Ok(Trained {
        model,
        windows: corpus.len(),
        failures,
    })
}

/// Per-series seed so that series do not share sample streams.
fn series_seed(seed: u64, index: usize) -> u64 {
    let mut z = seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sample paths of length `horizon_length` for every context.
pub fn forecast(
    cfg: &RunConfig,
    model: &MarkovModel,
    tok: &Tokenizer,
    contexts: &[&[f64]],
) -> Vec<Result<Vec<Vec<f64>>>> {
    contexts
        .par_iter()
        .enumerate()
        .map(|(i, ctx)| {
            let stream = tok.tokenize(ctx)?;
            let sampling = SamplingConfig {
                seed: series_seed(cfg.seed, i),
                ..cfg.sampling()
            };
            Ok(sample_forecast(model, tok, &stream, cfg.horizon_length, &sampling)?.samples)
        })
        .collect()
}

/// Seasonal period actually usable with this context.
pub fn usable_season(season: usize, context_len: usize) -> usize {
    if context_len > season {
        season
    } else {
        1
    }
}

pub struct Evaluation {
    pub model: DatasetScores,
    pub baseline: DatasetScores,
    pub failures: Vec<String>,
}

/// Scores `forecasts[i]` (sample paths) against `windows[i]`, and the
/// seasonal-naive baseline on the same windows.
pub fn evaluate(windows: &[TestWindow], forecasts: &[Vec<Vec<f64>>], season: usize) -> Result<Evaluation> {
    let mut model = DatasetAccumulator::default();
    let mut baseline = DatasetAccumulator::default();
    let mut failures = Vec::new();
    for (w, samples) in windows.iter().zip(forecasts) {
        let s = usable_season(season, w.context.len());
        let step = || -> wavetoken::Result<(ProbabilisticForecast, ProbabilisticForecast)> {
            let f = forecast_from_samples(samples)?;
            let naive = seasonal_naive(&w.context, s, w.horizon.len())?;
            Ok((f, naive))
        };
        match step() {
            Ok((f, naive)) => {
                let both = model
                    .add(&w.horizon, &f, &w.context, s)
                    .and_then(|_| baseline.add(&w.horizon, &naive, &w.context, s));
                if let Err(e) = both {
                    failures.push(format!("{}: {e}", w.id));
                }
            }
            Err(e) => failures.push(format!("{}: {e}", w.id)),
        }
    }
    Ok(Evaluation {
        model: model.finish().context("aggregating model scores")?,
        baseline: baseline.finish().context("aggregating baseline scores")?,
        failures,
    })
}
