//! File records written and read by the subcommands.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use wavetoken::codebook::Codebook;
use wavetoken::tokenizer::TokenStream;

use crate::config::RunConfig;

pub const RUN_KEY: &str = "run_fingerprint";
pub const TOKENIZER_KEY: &str = "tokenizer_fingerprint";
pub const CODEBOOK_KEY: &str = "codebook_fingerprint";

pub fn provenance(cfg: &RunConfig) -> BTreeMap<String, String> {
    BTreeMap::from([
        (RUN_KEY.to_string(), cfg.fingerprint()),
        (TOKENIZER_KEY.to_string(), cfg.tokenizer_fingerprint()),
    ])
}

/// Fails unless `meta` was written under the same tokenizer settings.
pub fn check_tokenizer(meta: &BTreeMap<String, String>, cfg: &RunConfig, what: &str) -> Result<()> {
    let expected = cfg.tokenizer_fingerprint();
    match meta.get(TOKENIZER_KEY) {
        Some(found) if *found == expected => Ok(()),
        Some(found) => Err(wavetoken::Error::FingerprintMismatch {
            expected,
            found: found.clone(),
        })
        .with_context(|| format!("{what} was built with different tokenizer settings")),
        None => bail!("{what} carries no tokenizer fingerprint"),
    }
}

pub fn check_codebook(found: &str, cb: &Codebook, what: &str) -> Result<()> {
    let expected = cb.fingerprint();
    if found != expected {
        return Err(wavetoken::Error::FingerprintMismatch {
            expected,
            found: found.to_string(),
        })
        .with_context(|| format!("{what} was produced with a different codebook"));
    }
    Ok(())
}

pub fn load_codebook(path: &Path, cfg: &RunConfig) -> Result<Codebook> {
    let (cb, meta) = Codebook::load_with(path).with_context(|| format!("loading codebook {}", path.display()))?;
    check_tokenizer(&meta, cfg, "codebook")?;
    Ok(cb)
}

/// Sidecar written next to data files, whose formats have no room for it.
#[derive(Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub run_fingerprint: String,
    pub config: RunConfig,
}

pub fn manifest_path(data: &Path) -> PathBuf {
    let mut name = data.as_os_str().to_os_string();
    name.push(".meta.json");
    PathBuf::from(name)
}

pub fn write_manifest(data: &Path, command: &str, cfg: &RunConfig) -> Result<()> {
    let m = Manifest {
        command: command.to_string(),
        run_fingerprint: cfg.fingerprint(),
        config: cfg.clone(),
    };
    std::fs::write(manifest_path(data), serde_json::to_string_pretty(&m)? + "\n")?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenRecord {
    pub item_id: String,
    pub start: String,
    pub freq: String,
    pub run_fingerprint: String,
    pub codebook_fingerprint: String,
    pub stream: TokenStream,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub item_id: String,
    #[serde(default)]
    pub run_fingerprint: String,
    #[serde(default)]
    pub codebook_fingerprint: String,
    /// Whether the forecast covers the held-out last `H` points.
    pub holdout: bool,
    pub samples: Vec<Vec<f64>>,
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(out)
}
