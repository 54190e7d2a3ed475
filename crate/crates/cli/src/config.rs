use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use wavetoken::codebook::{Binning, DEFAULT_BOUNDS, DEFAULT_VOCAB};
use wavetoken::dwt::BoundaryMode;
use wavetoken::seq_model::SamplingConfig;
use wavetoken::thresholding::ThresholdSpec;
use wavetoken::tokenizer::WaveletConfig;

/// Every knob that affects an artifact. Paths are not part of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub family: String,
    pub level: usize,
    pub mode: BoundaryMode,
    /// `none`, `visu_soft`, `visu_hard`, `cdf[:b]` or `fdrc[:q]`.
    pub threshold: String,
    pub vocab: usize,
    pub bounds: [f64; 2],
    pub binning: Binning,
    pub context_length: usize,
    pub horizon_length: usize,
    /// Step between successive training windows of one series.
    pub stride: usize,
    pub order: usize,
    pub alpha: f64,
    pub n_samples: usize,
    pub temperature: f64,
    pub seed: u64,
    pub n_series: usize,
    pub p_mix: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            family: "bior2.2".into(),
            level: 1,
            mode: BoundaryMode::Symmetric,
            threshold: "none".into(),
            vocab: DEFAULT_VOCAB,
            bounds: [DEFAULT_BOUNDS.0, DEFAULT_BOUNDS.1],
            binning: Binning::Uniform,
            context_length: 512,
            horizon_length: 64,
            stride: 64,
            order: 1,
            alpha: 0.1,
            n_samples: 20,
            temperature: 1.0,
            seed: 0,
            n_series: 1000,
            p_mix: 0.9,
        }
    }
}

/// Command-line overrides; each one beats the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML file with any RunConfig keys
    #[arg(long, global = true)]
    pub config: Option<std::path::PathBuf>,
    #[arg(long, global = true)]
    pub family: Option<String>,
    #[arg(long, global = true)]
    pub level: Option<usize>,
    /// symmetric | periodic
    #[arg(long, global = true)]
    pub mode: Option<BoundaryMode>,
    /// none | visu_soft | visu_hard | cdf[:b] | fdrc[:q]
    #[arg(long, global = true)]
    pub threshold: Option<String>,
    /// Total vocabulary including PAD and EOS
    #[arg(long, global = true)]
    pub vocab: Option<usize>,
    /// Clipping range of the scaled coefficients
    #[arg(
        long,
        global = true,
        num_args = 2,
        value_names = ["LO", "HI"],
        allow_negative_numbers = true
    )]
    pub bounds: Option<Vec<f64>>,
    /// uniform | quantile
    #[arg(long, global = true)]
    pub binning: Option<Binning>,
    #[arg(long, global = true)]
    pub context_length: Option<usize>,
    #[arg(long, global = true)]
    pub horizon_length: Option<usize>,
    #[arg(long, global = true)]
    pub stride: Option<usize>,
    #[arg(long, global = true)]
    pub order: Option<usize>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true)]
    pub n_samples: Option<usize>,
    #[arg(long, global = true)]
    pub temperature: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub n_series: Option<usize>,
    #[arg(long, global = true)]
    pub p_mix: Option<f64>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Defaults, then the config file, then flags.
    pub fn resolve(o: &Overrides) -> Result<Self> {
        let mut c = match &o.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        macro_rules! take {
            ($($field:ident),*) => {$(
                if let Some(v) = &o.$field {
                    c.$field = v.clone();
                }
            )*};
        }
        take!(
            family,
            level,
            mode,
            threshold,
            vocab,
            binning,
            context_length,
            horizon_length,
            stride,
            order,
            alpha,
            n_samples,
            temperature,
            seed,
            n_series,
            p_mix
        );
        if let Some(b) = &o.bounds {
            c.bounds = [b[0], b[1]];
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.wavelet()?;
        if self.vocab < 3 {
            bail!("vocab must be at least 3 (PAD, EOS and one value bin)");
        }
        let [lo, hi] = self.bounds;
        if !(lo < 0.0 && hi > 0.0 && lo.is_finite() && hi.is_finite()) {
            bail!("bounds must satisfy lo < 0 < hi, got [{lo}, {hi}]");
        }
        if self.context_length == 0 || self.horizon_length == 0 || self.stride == 0 {
            bail!("context_length, horizon_length and stride must be positive");
        }
        self.wavelet()?
            .layout(self.horizon_length)
            .context("horizon too short for the decomposition")?;
        self.wavelet()?
            .layout(self.context_length)
            .context("context too short for the decomposition")?;
        if self.order == 0 {
            bail!("order must be at least 1");
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            bail!("alpha must be positive");
        }
        if self.n_samples == 0 {
            bail!("n_samples must be positive");
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            bail!("temperature must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.p_mix) {
            bail!("p_mix must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn threshold_spec(&self) -> Result<ThresholdSpec> {
        Ok(self.threshold.parse()?)
    }

    pub fn wavelet(&self) -> Result<WaveletConfig> {
        if self.level == 0 {
            bail!("level must be at least 1");
        }
        Ok(WaveletConfig::new(&self.family, self.level)?
            .with_mode(self.mode)
            .with_threshold(self.threshold_spec()?))
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.bounds[0], self.bounds[1])
    }

    pub fn sampling(&self) -> SamplingConfig {
        SamplingConfig {
            n_samples: self.n_samples,
            temperature: self.temperature,
            seed: self.seed,
        }
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        short_hash(&serde_json::to_string(self).expect("config serializes"))
    }

    /// Hash of the knobs that decide what a token id means. Artifacts with
    /// equal tokenizer fingerprints can be mixed.
    pub fn tokenizer_fingerprint(&self) -> String {
        let key = serde_json::json!({
            "family": self.family,
            "level": self.level,
            "mode": self.mode,
            "threshold": self.threshold,
            "vocab": self.vocab,
            "bounds": self.bounds,
            "binning": self.binning,
        });
        short_hash(&key.to_string())
    }
}

fn short_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes())[..8]
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
