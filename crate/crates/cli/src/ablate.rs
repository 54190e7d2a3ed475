//! Cartesian sweep over configuration knobs, one evaluation row per cell.
//!
//! The table is rewritten after every cell. On restart, cells whose
//! fingerprint already has an `ok` row are copied instead of recomputed.

use std::collections::HashMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use wavetoken::data_io::{load_dataset, split_last_h};
use wavetoken::metrics::{aggregate_relative, seasonality};

use crate::commands::Failures;
use crate::config::RunConfig;
use crate::pipeline;

/// Knob name and the values it takes, in file order of values and sorted
/// order of names.
pub type Grid = Vec<(String, Vec<toml::Value>)>;

pub fn parse_grid(text: &str) -> Result<Grid> {
    let table: toml::Table = toml::from_str(text).context("parsing grid")?;
    if table.is_empty() {
        bail!("grid declares no knobs");
    }
    let mut grid = Grid::new();
    for (key, value) in table {
        let values = match value {
            toml::Value::Array(v) if v.is_empty() => bail!("knob '{key}' has no values"),
            toml::Value::Array(v) => v,
            scalar => vec![scalar],
        };
        grid.push((key, values));
    }
    Ok(grid)
}

/// Every combination, last knob varying fastest.
pub fn cells(grid: &Grid) -> Vec<Vec<toml::Value>> {
    let mut out = vec![Vec::new()];
    for (_, values) in grid {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push(v.clone());
                    p
                })
            })
            .collect();
    }
    out
}

pub fn cell_config(base: &RunConfig, grid: &Grid, cell: &[toml::Value]) -> Result<RunConfig> {
    let mut table = toml::Table::try_from(base).context("encoding base config")?;
    for ((key, _), value) in grid.iter().zip(cell) {
        table.insert(key.clone(), value.clone());
    }
    let cfg: RunConfig = table.try_into().context("grid value does not fit the configuration")?;
    cfg.validate()?;
    Ok(cfg)
}

fn show(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

const METRIC_COLUMNS: [&str; 6] = ["wql", "mase", "vrse", "relative_wql", "relative_mase", "relative_vrse"];

fn header(grid: &Grid) -> Vec<String> {
    let mut h = vec!["cell".to_string()];
    h.extend(grid.iter().map(|(k, _)| k.clone()));
    h.push("status".into());
    h.extend(METRIC_COLUMNS.iter().map(|s| s.to_string()));
    h.push("error".into());
    h
}

fn run_cell(cfg: &RunConfig, data: &Path) -> Result<[f64; 6]> {
    let ds = load_dataset(data, None)?;
    let split = split_last_h(&ds, cfg.horizon_length, cfg.context_length)?;
    let fit = pipeline::fit_codebook(cfg, &split.train)?;
    let tok = pipeline::tokenizer(cfg, fit.codebook)?;
    let trained = pipeline::train(cfg, &tok, &split.train)?;
    let contexts: Vec<&[f64]> = split.test.iter().map(|w| w.context.as_slice()).collect();
    let mut windows = Vec::new();
    let mut samples = Vec::new();
    for (w, r) in split
        .test
        .iter()
        .zip(pipeline::forecast(cfg, &trained.model, &tok, &contexts))
    {
        if let Ok(s) = r {
            windows.push(w.clone());
            samples.push(s);
        }
    }
    if windows.is_empty() {
        bail!("no series could be forecast");
    }
    let ev = pipeline::evaluate(&windows, &samples, seasonality(&ds.freq))?;
    let rel = |m: f64, b: f64| aggregate_relative(&[m], &[b]).map(|r| r.value).unwrap_or(f64::NAN);
    Ok([
        ev.model.wql,
        ev.model.mase,
        ev.model.vrse,
        rel(ev.model.wql, ev.baseline.wql),
        rel(ev.model.mase, ev.baseline.mase),
        rel(ev.model.vrse, ev.baseline.vrse),
    ])
}

fn read_done(out: &Path, expected: &[String]) -> Result<HashMap<String, Vec<String>>> {
    let mut done = HashMap::new();
    if !out.exists() {
        return Ok(done);
    }
    let mut rdr = csv::Reader::from_path(out).with_context(|| format!("reading {}", out.display()))?;
    let found: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if found != expected {
        bail!(
            "{} was written for a different grid (columns {:?})",
            out.display(),
            found
        );
    }
    let status = expected.iter().position(|c| c == "status").expect("status column");
    for rec in rdr.records() {
        let rec = rec?;
        if rec.get(status) == Some("ok") {
            let row: Vec<String> = rec.iter().map(str::to_string).collect();
            done.insert(row[0].clone(), row);
        }
    }
    Ok(done)
}

fn write_table(out: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let tmp = out.with_extension("partial");
    {
        let mut w = csv::Writer::from_path(&tmp)?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, out)?;
    Ok(())
}

pub fn ablate(base: &RunConfig, grid_path: &Path, data: &Path, out: &Path) -> Result<Failures> {
    let text = std::fs::read_to_string(grid_path).with_context(|| format!("reading {}", grid_path.display()))?;
    let grid = parse_grid(&text)?;
    let header = header(&grid);
    let done = read_done(out, &header)?;
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut failures = Vec::new();
    let (mut reused, mut computed) = (0, 0);
    for cell in cells(&grid) {
        let knobs: Vec<String> = cell.iter().map(show).collect();
        let cfg = cell_config(base, &grid, &cell);
        let id = match &cfg {
            Ok(c) => c.fingerprint(),
            Err(_) => format!("invalid:{}", knobs.join("/")),
        };
        if let Some(row) = done.get(&id) {
            rows.push(row.clone());
            reused += 1;
            continue;
        }
        let mut row = vec![id.clone()];
        row.extend(knobs.iter().cloned());
        match cfg.and_then(|c| run_cell(&c, data)) {
            Ok(values) => {
                row.push("ok".into());
                row.extend(values.iter().map(|v| v.to_string()));
                row.push(String::new());
            }
            Err(e) => {
                let msg = format!("{e:#}");
                failures.push(format!("cell {}: {msg}", knobs.join(", ")));
                row.push("failed".into());
                row.extend(std::iter::repeat_n(String::new(), METRIC_COLUMNS.len()));
                row.push(msg);
            }
        }
        computed += 1;
        rows.push(row);
        // keep finished rows from an earlier run that this pass has not reached yet
        let reached: std::collections::HashSet<&String> = rows.iter().map(|r| &r[0]).collect();
        let mut snapshot = rows.clone();
        let mut pending: Vec<&Vec<String>> = done.values().filter(|r| !reached.contains(&r[0])).collect();
        pending.sort();
        snapshot.extend(pending.into_iter().cloned());
        write_table(out, &header, &snapshot)?;
    }
    write_table(out, &header, &rows)?;
    println!(
        "{} cells: {computed} computed, {reused} reused, {} failed",
        rows.len(),
        failures.len()
    );
    Ok(failures)
}
