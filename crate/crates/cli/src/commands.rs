use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use wavetoken::data_io::{load_dataset, save_dataset, split_last_h, Dataset, TestWindow};
use wavetoken::metrics::{build_report, seasonality, write_report, DatasetScores};
use wavetoken::seq_model::MarkovModel;
use wavetoken::series::TimeSeries;
use wavetoken::synth::{make_corpus, KindTag};
use wavetoken::tokenizer::detokenize as detokenize_stream;
use wavetoken::wavelet_bank::get_family;

use crate::artifacts::{self, ForecastRecord, TokenRecord, CODEBOOK_KEY};
use crate::config::RunConfig;
use crate::pipeline;

/// Per-item problems that did not stop the command.
pub type Failures = Vec<String>;

/// Sample paths per series.
type SamplePaths = Vec<Vec<Vec<f64>>>;

pub const BASELINE: &str = "seasonal_naive";

fn load(path: &Path) -> Result<Dataset> {
    load_dataset(path, None).with_context(|| format!("loading dataset {}", path.display()))
}

/// File name without directories and without `.gz` and format extensions.
pub fn dataset_name(path: &Path) -> String {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = name.strip_suffix(".gz").unwrap_or(&name);
    match name.rsplit_once('.') {
        Some((stem, _)) if !stem.is_empty() => stem.to_string(),
        _ => name.to_string(),
    }
}

pub fn synth(cfg: &RunConfig, out: &Path) -> Result<Failures> {
    let windows = make_corpus(
        cfg.n_series,
        cfg.p_mix,
        cfg.context_length,
        cfg.horizon_length,
        cfg.seed,
    )?;
    let mixed = windows.iter().filter(|w| w.source == KindTag::Tsmixup).count();
    let freq = "H";
    let ds = Dataset::new(windows.iter().map(|w| w.to_series(freq)).collect(), freq)?;
    save_dataset(&ds, out, None)?;
    artifacts::write_manifest(out, "synth", cfg)?;
    println!(
        "wrote {} series ({} mixtures, {} GP draws) of length {} to {}",
        windows.len(),
        mixed,
        windows.len() - mixed,
        cfg.context_length + cfg.horizon_length,
        out.display()
    );
    Ok(Vec::new())
}

pub fn fit_codebook(cfg: &RunConfig, data: &Path, out: &Path) -> Result<Failures> {
    let ds = load(data)?;
    let fit = pipeline::fit_codebook(cfg, &ds.series)?;
    fit.codebook.save_with(out, &artifacts::provenance(cfg))?;
    let cb = &fit.codebook;
    println!("value bins B = {}", cb.num_bins());
    println!("vocabulary   = {} (including PAD and EOS)", cb.vocab_size());
    println!("bin width h  = {}", cb.bin_width());
    println!(
        "clamp rate   = {:.6} ({} coefficients from {} windows)",
        fit.clamp_rate, fit.coefficients, fit.windows
    );
    println!("fingerprint  = {}", cb.fingerprint());
    Ok(fit.failures)
}

pub fn tokenize(cfg: &RunConfig, data: &Path, codebook: &Path, out: &Path) -> Result<Failures> {
    let ds = load(data)?;
    let cb = artifacts::load_codebook(codebook, cfg)?;
    let cb_fp = cb.fingerprint();
    let tok = pipeline::tokenizer(cfg, cb)?;
    let results: Vec<_> = ds
        .series
        .par_iter()
        .map(|s| -> wavetoken::Result<(TokenRecord, f64, f64)> {
            let stream = tok.tokenize(&s.values)?;
            let recon = tok.detokenize(&stream)?;
            let (mut sq, mut n) = (0.0, 0usize);
            for (x, y) in s.values.iter().zip(&recon) {
                if !x.is_nan() {
                    sq += (x - y).powi(2);
                    n += 1;
                }
            }
            let bound = tok.codebook.bin_width() / 2.0 * stream.scale.sigma;
            let record = TokenRecord {
                item_id: s.id.clone(),
                start: wavetoken::data_io::format_timestamp(s.start),
                freq: s.freq.clone(),
                run_fingerprint: cfg.fingerprint(),
                codebook_fingerprint: cb_fp.clone(),
                stream,
            };
            Ok((record, (sq / n.max(1) as f64).sqrt(), bound))
        })
        .collect();

    let mut records = Vec::new();
    let mut failures = Vec::new();
    let (mut pads, mut coeffs) = (0usize, 0usize);
    let (mut worst_rmse, mut worst_ratio) = (0.0f64, 0.0f64);
    for (s, r) in ds.series.iter().zip(results) {
        match r {
            Ok((rec, rmse, bound)) => {
                pads += rec.stream.pad_count(tok.codebook.pad_id());
                coeffs += rec.stream.coefficient_tokens().len();
                worst_rmse = worst_rmse.max(rmse);
                if bound > 0.0 {
                    worst_ratio = worst_ratio.max(rmse / bound);
                }
                records.push(rec);
            }
            Err(e) => failures.push(format!("{}: {e}", s.id)),
        }
    }
    artifacts::write_jsonl(out, &records)?;
    println!("tokenized {} of {} series", records.len(), ds.series.len());
    println!("PAD rate            = {:.6}", pads as f64 / coeffs.max(1) as f64);
    println!("max RMSE            = {worst_rmse}");
    println!("max RMSE / (h/2)·σ  = {worst_ratio:.6}");
    Ok(failures)
}

pub fn detokenize(cfg: &RunConfig, tokens: &Path, codebook: &Path, out: &Path) -> Result<Failures> {
    let cb = artifacts::load_codebook(codebook, cfg)?;
    let records: Vec<TokenRecord> = artifacts::read_jsonl(tokens)?;
    let Some(first) = records.first() else {
        bail!("{} holds no token records", tokens.display());
    };
    let freq = first.freq.clone();
    let mut series = Vec::with_capacity(records.len());
    let mut failures = Vec::new();
    for r in &records {
        artifacts::check_codebook(&r.codebook_fingerprint, &cb, &format!("token record '{}'", r.item_id))?;
        let decoded = get_family(&r.stream.family_name).and_then(|f| detokenize_stream(&r.stream, &cb, &f));
        let start = wavetoken::data_io::parse_timestamp(&r.start);
        match (decoded, start) {
            (Ok(values), Some(start)) => series.push(TimeSeries::new(r.item_id.clone(), start, r.freq.clone(), values)),
            (Err(e), _) => failures.push(format!("{}: {e}", r.item_id)),
            (_, None) => failures.push(format!("{}: bad start '{}'", r.item_id, r.start)),
        }
    }
    save_dataset(&Dataset::new(series, freq)?, out, None)?;
    artifacts::write_manifest(out, "detokenize", cfg)?;
    println!(
        "reconstructed {} of {} series",
        records.len() - failures.len(),
        records.len()
    );
    Ok(failures)
}

pub fn train(cfg: &RunConfig, data: &Path, codebook: &Path, out: &Path) -> Result<Failures> {
    let ds = load(data)?;
    let cb = artifacts::load_codebook(codebook, cfg)?;
    let mut meta = artifacts::provenance(cfg);
    meta.insert(CODEBOOK_KEY.into(), cb.fingerprint());
    let tok = pipeline::tokenizer(cfg, cb)?;
    let trained = pipeline::train(cfg, &tok, &ds.series)?;
    trained.model.save(out, &meta)?;
    println!(
        "trained order-{} model on {} windows (vocabulary {})",
        cfg.order,
        trained.windows,
        tok.codebook.vocab_size()
    );
    Ok(trained.failures)
}

pub fn load_model(path: &Path, cfg: &RunConfig, cb_fingerprint: &str) -> Result<MarkovModel> {
    let (model, meta) = MarkovModel::load(path).with_context(|| format!("loading model {}", path.display()))?;
    artifacts::check_tokenizer(&meta, cfg, "model")?;
    let found = meta.get(CODEBOOK_KEY).map(String::as_str).unwrap_or("");
    if found != cb_fingerprint {
        return Err(wavetoken::Error::FingerprintMismatch {
            expected: cb_fingerprint.to_string(),
            found: found.to_string(),
        })
        .context("model was trained with a different codebook");
    }
    Ok(model)
}

pub fn forecast(
    cfg: &RunConfig,
    data: &Path,
    codebook: &Path,
    model: &Path,
    out: &Path,
    holdout: bool,
) -> Result<Failures> {
    let ds = load(data)?;
    let cb = artifacts::load_codebook(codebook, cfg)?;
    let cb_fp = cb.fingerprint();
    let model = load_model(model, cfg, &cb_fp)?;
    let tok = pipeline::tokenizer(cfg, cb)?;

    let mut failures = Vec::new();
    let (ids, contexts): (Vec<String>, Vec<Vec<f64>>) = if holdout {
        let split = split_last_h(&ds, cfg.horizon_length, cfg.context_length)?;
        failures.extend(split.warnings);
        split.test.into_iter().map(|w| (w.id, w.context)).unzip()
    } else {
        ds.series
            .iter()
            .map(|s| {
                (
                    s.id.clone(),
                    s.values[s.len().saturating_sub(cfg.context_length)..].to_vec(),
                )
            })
            .unzip()
    };
    let refs: Vec<&[f64]> = contexts.iter().map(Vec::as_slice).collect();
    let results = pipeline::forecast(cfg, &model, &tok, &refs);
    let mut records = Vec::new();
    for (id, r) in ids.into_iter().zip(results) {
        match r {
            Ok(samples) => records.push(ForecastRecord {
                item_id: id,
                run_fingerprint: cfg.fingerprint(),
                codebook_fingerprint: cb_fp.clone(),
                holdout,
                samples,
            }),
            Err(e) => failures.push(format!("{id}: {e}")),
        }
    }
    artifacts::write_jsonl(out, &records)?;
    println!(
        "wrote {} forecasts of {} samples x {} steps to {}",
        records.len(),
        cfg.n_samples,
        cfg.horizon_length,
        out.display()
    );
    Ok(failures)
}

/// Held-out windows of a dataset matched with their forecast samples.
fn matched_windows(
    cfg: &RunConfig,
    ds: &Dataset,
    records: Vec<ForecastRecord>,
    failures: &mut Failures,
) -> Result<(Vec<TestWindow>, SamplePaths)> {
    let split = split_last_h(ds, cfg.horizon_length, cfg.context_length)?;
    failures.extend(split.warnings);
    let mut by_id: HashMap<String, ForecastRecord> = HashMap::new();
    for r in records {
        if !r.holdout {
            bail!(
                "forecast for '{}' is not a held-out forecast (rerun forecast with --holdout)",
                r.item_id
            );
        }
        if r.samples.is_empty() || r.samples.iter().any(|s| s.len() != cfg.horizon_length) {
            bail!(
                "forecast for '{}' does not have {} steps per sample",
                r.item_id,
                cfg.horizon_length
            );
        }
        by_id.insert(r.item_id.clone(), r);
    }
    let mut windows = Vec::new();
    let mut samples = Vec::new();
    for w in split.test {
        match by_id.remove(&w.id) {
            Some(r) => {
                samples.push(r.samples);
                windows.push(w);
            }
            None => failures.push(format!("{}: no forecast", w.id)),
        }
    }
    Ok((windows, samples))
}

pub fn eval(
    cfg: &RunConfig,
    data: &[PathBuf],
    forecasts: &[PathBuf],
    out: &Path,
    season: Option<usize>,
    model_name: &str,
) -> Result<Failures> {
    if data.len() != forecasts.len() {
        bail!(
            "{} datasets but {} forecast files; pass one forecast file per dataset",
            data.len(),
            forecasts.len()
        );
    }
    if model_name == BASELINE {
        bail!("model name '{BASELINE}' is reserved for the baseline");
    }
    let mut failures = Vec::new();
    let mut names = Vec::new();
    let mut model_scores: Vec<DatasetScores> = Vec::new();
    let mut base_scores: Vec<DatasetScores> = Vec::new();
    for (d, f) in data.iter().zip(forecasts) {
        let ds = load(d)?;
        let records: Vec<ForecastRecord> = artifacts::read_jsonl(f)?;
        let (windows, samples) = matched_windows(cfg, &ds, records, &mut failures)?;
        let s = season.unwrap_or_else(|| seasonality(&ds.freq));
        let ev = pipeline::evaluate(&windows, &samples, s).with_context(|| format!("evaluating {}", d.display()))?;
        failures.extend(ev.failures);
        let mut name = dataset_name(d);
        if names.contains(&name) {
            name = format!("{name}#{}", names.len());
        }
        println!(
            "{name}: {model_name} wql={:.6} mase={:.6} vrse={:.6} | {BASELINE} wql={:.6} mase={:.6} vrse={:.6}",
            ev.model.wql, ev.model.mase, ev.model.vrse, ev.baseline.wql, ev.baseline.mase, ev.baseline.vrse
        );
        names.push(name);
        model_scores.push(ev.model);
        base_scores.push(ev.baseline);
    }
    let rows = build_report(
        &names,
        &[model_name.to_string(), BASELINE.to_string()],
        &[model_scores, base_scores],
        BASELINE,
        &cfg.fingerprint(),
    )?;
    let file = std::fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
    write_report(&rows, file)?;
    Ok(failures)
}
