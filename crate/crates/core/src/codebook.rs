//! Quantization codebook shared by approximation and detail coefficients.
//!
//! Token ids: `PAD = 0`, `EOS = 1`, value bins from `2` in ascending order
//! of their centers.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD_ID: TokenId = 0;
pub const EOS_ID: TokenId = 1;
pub const VALUE_OFFSET: TokenId = 2;

/// Default clipping bounds for bin centers.
pub const DEFAULT_BOUNDS: (f64, f64) = (-30.0, 30.0);
/// Default total vocabulary (value bins + PAD + EOS).
pub const DEFAULT_VOCAB: usize = 1024;

const FORMAT_TAG: &str = "wavetoken-codebook";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Binning {
    /// Equal-width bins, width from the Freedman–Diaconis rule or the
    /// vocabulary budget, whichever is wider.
    #[default]
    Uniform,
    /// Symmetric bins at empirical quantiles of |w|.
    Quantile,
}

impl std::str::FromStr for Binning {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Binning::Uniform),
            "quantile" => Ok(Binning::Quantile),
            other => Err(Error::InvalidArgument(format!("unknown binning '{other}'"))),
        }
    }
}

/// A value recovered from a token.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dequantized {
    pub value: f64,
    /// Set for PAD: the coefficient was never observed.
    pub missing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    centers: Vec<f64>,
    edges: Vec<f64>,
    bounds: (f64, f64),
    /// Widest bin; `bin_width / 2` bounds the quantization error of any
    /// in-range value.
    bin_width: f64,
    binning: Binning,
    pad_id: TokenId,
    eos_id: TokenId,
    value_offset: TokenId,
}

/// On-disk layout. Every field is required.
#[derive(Serialize, Deserialize)]
struct CodebookFile {
    format: String,
    version: u32,
    /// Free-form provenance such as configuration hashes; not part of the
    /// codebook's own fingerprint.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    metadata: BTreeMap<String, String>,
    binning: Binning,
    bin_width: f64,
    bounds: [f64; 2],
    pad_id: TokenId,
    eos_id: TokenId,
    value_offset: TokenId,
    centers: Vec<f64>,
    edges: Vec<f64>,
}

/// Linear-interpolation quantile of an ascending slice.
pub(crate) fn sorted_quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Freedman–Diaconis bin width `2·IQR·n^(-1/3)`.
pub fn freedman_diaconis_width(sample: &[f64]) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::Empty("coefficient sample"));
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = sorted_quantile(&sorted, 0.75) - sorted_quantile(&sorted, 0.25);
    Ok(2.0 * iqr * (sorted.len() as f64).powf(-1.0 / 3.0))
}

/// Fits a uniform codebook; see [`fit_codebook_with`].
pub fn fit_codebook(sample: &[f64], vocab_budget: usize, bounds: (f64, f64)) -> Result<Codebook> {
    fit_codebook_with(sample, vocab_budget, bounds, Binning::Uniform)
}

/// Fits a codebook with at most `vocab_budget - 2` value bins, an odd bin
/// count and a bin centered exactly at 0.
pub fn fit_codebook_with(
    sample: &[f64],
    vocab_budget: usize,
    bounds: (f64, f64),
    binning: Binning,
) -> Result<Codebook> {
    if sample.is_empty() {
        return Err(Error::Empty("coefficient sample"));
    }
    if let Some(index) = sample.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    if vocab_budget < 5 {
        return Err(Error::InvalidArgument(format!(
            "vocabulary budget must be at least 5, got {vocab_budget}"
        )));
    }
    let (lo, hi) = bounds;
    if !(lo < 0.0 && hi > 0.0 && lo.is_finite() && hi.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "bounds must satisfy lo < 0 < hi, got ({lo}, {hi})"
        )));
    }
    let half_range = (-lo).min(hi);
    let max_side = (vocab_budget - 3) / 2;
    let budget_width = (hi - lo) / (vocab_budget - 2) as f64;

    let uniform = |width: f64| -> Codebook {
        let width = width.min(half_range);
        let side = ((half_range / width).floor() as usize).clamp(1, max_side) as i64;
        let centers: Vec<f64> = (-side..=side).map(|i| i as f64 * width).collect();
        let edges: Vec<f64> = (-side..side).map(|i| (i as f64 + 0.5) * width).collect();
        Codebook::from_parts(centers, edges, bounds, width, Binning::Uniform)
    };

    match binning {
        Binning::Uniform => {
            let fd = freedman_diaconis_width(sample)?;
            Ok(uniform(fd.max(budget_width)))
        }
        Binning::Quantile => {
            let mut magnitudes: Vec<f64> = sample.iter().map(|w| w.abs().min(half_range)).collect();
            magnitudes.sort_by(f64::total_cmp);
            let mut positive: Vec<f64> = Vec::with_capacity(max_side);
            for k in 1..=max_side {
                let c = sorted_quantile(&magnitudes, k as f64 / (max_side + 1) as f64);
                if c > positive.last().copied().unwrap_or(0.0) {
                    positive.push(c);
                }
            }
            if positive.is_empty() {
                return Ok(uniform(budget_width));
            }
            let centers: Vec<f64> = positive
                .iter()
                .rev()
                .map(|c| -c)
                .chain(std::iter::once(0.0))
                .chain(positive.iter().copied())
                .collect();
            let edges: Vec<f64> = centers.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
            let width = centers.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
            Ok(Codebook::from_parts(centers, edges, bounds, width, Binning::Quantile))
        }
    }
}

impl Codebook {
    fn from_parts(centers: Vec<f64>, edges: Vec<f64>, bounds: (f64, f64), bin_width: f64, binning: Binning) -> Self {
        Self {
            centers,
            edges,
            bounds,
            bin_width,
            binning,
            pad_id: PAD_ID,
            eos_id: EOS_ID,
            value_offset: VALUE_OFFSET,
        }
    }

    /// Builds a codebook from explicit centers and edges, checking every
    /// invariant.
    pub fn from_centers(centers: Vec<f64>, edges: Vec<f64>, bounds: (f64, f64)) -> Result<Self> {
        let width = centers.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        let cb = Self::from_parts(centers, edges, bounds, width, Binning::Uniform);
        cb.validate()?;
        Ok(cb)
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.centers.len();
        let bad = |msg: String| Err(Error::InvalidCodebook(msg));
        if b < 3 || b.is_multiple_of(2) {
            return bad(format!("bin count must be odd and at least 3, got {b}"));
        }
        if self.centers.iter().chain(&self.edges).any(|v| !v.is_finite()) {
            return bad("non-finite center or edge".into());
        }
        if !self.centers.windows(2).all(|w| w[0] < w[1]) {
            return bad("centers are not strictly increasing".into());
        }
        if !self.centers.contains(&0.0) {
            return bad("no bin is centered at 0".into());
        }
        if self.edges.len() != b - 1 {
            return bad(format!("{} edges for {b} centers", self.edges.len()));
        }
        if !self
            .edges
            .iter()
            .enumerate()
            .all(|(i, &e)| self.centers[i] < e && e < self.centers[i + 1])
        {
            return bad("edges do not interleave centers".into());
        }
        let (lo, hi) = self.bounds;
        if !(lo <= self.centers[0] && self.centers[b - 1] <= hi) {
            return bad(format!("centers exceed bounds ({lo}, {hi})"));
        }
        if !(self.bin_width > 0.0 && self.bin_width.is_finite()) {
            return bad(format!("bin width must be positive, got {}", self.bin_width));
        }
        if (self.pad_id, self.eos_id, self.value_offset) != (PAD_ID, EOS_ID, VALUE_OFFSET) {
            return bad(format!(
                "special ids must be pad={PAD_ID}, eos={EOS_ID}, values from {VALUE_OFFSET}; got pad={}, eos={}, values from {}",
                self.pad_id, self.eos_id, self.value_offset
            ));
        }
        Ok(())
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn bounds(&self) -> (f64, f64) {
        self.bounds
    }

    pub fn bin_width(&self) -> f64 {
        self.bin_width
    }

    pub fn binning(&self) -> Binning {
        self.binning
    }

    /// Number of value bins `B`.
    pub fn num_bins(&self) -> usize {
        self.centers.len()
    }

    /// `B + 2`.
    pub fn vocab_size(&self) -> usize {
        self.centers.len() + 2
    }

    pub fn pad_id(&self) -> TokenId {
        self.pad_id
    }

    pub fn eos_id(&self) -> TokenId {
        self.eos_id
    }

    pub fn value_offset(&self) -> TokenId {
        self.value_offset
    }

    pub fn is_value_token(&self, t: TokenId) -> bool {
        t >= self.value_offset && ((t - self.value_offset) as usize) < self.centers.len()
    }

    /// Token of the bin centered at 0.
    pub fn zero_token(&self) -> TokenId {
        self.value_offset + (self.centers.len() / 2) as TokenId
    }

    /// Whether `w` lies inside the outermost bins, i.e. is represented with
    /// error at most `bin_width / 2` without clamping.
    pub fn in_range(&self, w: f64) -> bool {
        let half = 0.5 * self.bin_width;
        w >= self.centers[0] - half && w <= self.centers[self.centers.len() - 1] + half
    }

    /// Bin with `e_{i-1} <= w < e_i`; values beyond the outer edges fall into
    /// the outermost bins.
    pub fn quantize(&self, w: f64) -> Result<TokenId> {
        if !w.is_finite() {
            return Err(Error::NonFinite { index: 0 });
        }
        let bin = self.edges.partition_point(|&e| e <= w);
        Ok(self.value_offset + bin as TokenId)
    }

    /// Like [`Codebook::quantize`], mapping `None` (missing) to PAD.
    pub fn quantize_or_pad(&self, w: Option<f64>) -> Result<TokenId> {
        match w {
            Some(v) => self.quantize(v),
            None => Ok(self.pad_id),
        }
    }

    pub fn dequantize(&self, t: TokenId) -> Result<Dequantized> {
        if t == self.pad_id {
            return Ok(Dequantized {
                value: 0.0,
                missing: true,
            });
        }
        if !self.is_value_token(t) {
            return Err(Error::UnknownToken(t));
        }
        Ok(Dequantized {
            value: self.centers[(t - self.value_offset) as usize],
            missing: false,
        })
    }

    pub fn to_json(&self) -> String {
        self.to_json_with(&BTreeMap::new())
    }

    /// Serializes with provenance metadata recorded alongside.
    pub fn to_json_with(&self, metadata: &BTreeMap<String, String>) -> String {
        let file = CodebookFile {
            format: FORMAT_TAG.to_string(),
            version: FORMAT_VERSION,
            metadata: metadata.clone(),
            binning: self.binning,
            bin_width: self.bin_width,
            bounds: [self.bounds.0, self.bounds.1],
            pad_id: self.pad_id,
            eos_id: self.eos_id,
            value_offset: self.value_offset,
            centers: self.centers.clone(),
            edges: self.edges.clone(),
        };
        serde_json::to_string_pretty(&file).expect("codebook serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_json_with(text).map(|(cb, _)| cb)
    }

    /// Parses a codebook and the metadata stored with it.
    pub fn from_json_with(text: &str) -> Result<(Self, BTreeMap<String, String>)> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        let version = value.get("version").and_then(|v| v.as_u64());
        match version {
            Some(v) if v == FORMAT_VERSION as u64 => {}
            Some(v) => {
                return Err(Error::Version {
                    found: v as u32,
                    expected: FORMAT_VERSION,
                })
            }
            None => return Err(Error::Schema("missing field `version`".into())),
        }
        let file: CodebookFile = serde_json::from_value(value).map_err(|e| Error::Schema(e.to_string()))?;
        if file.format != FORMAT_TAG {
            return Err(Error::Schema(format!("not a codebook file (format '{}')", file.format)));
        }
        let cb = Codebook {
            centers: file.centers,
            edges: file.edges,
            bounds: (file.bounds[0], file.bounds[1]),
            bin_width: file.bin_width,
            binning: file.binning,
            pad_id: file.pad_id,
            eos_id: file.eos_id,
            value_offset: file.value_offset,
        };
        cb.validate()?;
        Ok((cb, file.metadata))
    }

    /// SHA-256 of the serialized codebook, hex encoded.
    pub fn fingerprint(&self) -> String {
        hex_digest(self.to_json().as_bytes())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.save_with(path, &BTreeMap::new())
    }

    pub fn save_with(&self, path: &Path, metadata: &BTreeMap<String, String>) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        file.write_all(self.to_json_with(metadata).as_bytes())?;
        file.write_all(b"\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::load_with(path).map(|(cb, _)| cb)
    }

    pub fn load_with(path: &Path) -> Result<(Self, BTreeMap<String, String>)> {
        let mut text = String::new();
        std::fs::File::open(path)?.read_to_string(&mut text)?;
        Self::from_json_with(&text)
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Codebook {
        Codebook::from_centers(vec![-1.0, 0.0, 1.0], vec![-0.5, 0.5], (-30.0, 30.0)).unwrap()
    }

    #[test]
    fn fd_width_for_unit_iqr() {
        // 1000 points with IQR exactly 1: a linear ramp over [0, 2] has
        // quartiles 0.5 and 1.5.
        let sample: Vec<f64> = (0..1000).map(|i| 2.0 * i as f64 / 999.0).collect();
        let h = freedman_diaconis_width(&sample).unwrap();
        assert!((h - 0.2).abs() < 1e-12, "{h}");
    }

    #[test]
    fn budget_limits_vocabulary() {
        let sample: Vec<f64> = (0..5000).map(|i| ((i * 7919) % 1000) as f64 / 100.0 - 5.0).collect();
        let cb = fit_codebook(&sample, 1024, (-30.0, 30.0)).unwrap();
        assert!(cb.num_bins() <= 1022);
        assert!(cb.vocab_size() <= 1024);
        assert_eq!(cb.num_bins() % 2, 1);
        assert_eq!(cb.centers()[cb.num_bins() / 2], 0.0);
        assert!(cb.centers()[0] >= -30.0 && *cb.centers().last().unwrap() <= 30.0);
        cb.validate().unwrap();
    }

    #[test]
    fn degenerate_iqr_uses_budget_width() {
        let cb = fit_codebook(&[0.0; 100], 64, (-3.0, 3.0)).unwrap();
        assert!((cb.bin_width() - 6.0 / 62.0).abs() < 1e-15);
        assert!(cb.num_bins() <= 62);
    }

    #[test]
    fn huge_spread_still_has_three_bins() {
        let sample: Vec<f64> = (0..10).map(|i| (i as f64 - 5.0) * 1e6).collect();
        let cb = fit_codebook(&sample, 1024, (-30.0, 30.0)).unwrap();
        assert_eq!(cb.centers(), &[-30.0, 0.0, 30.0]);
    }

    #[test]
    fn fit_errors() {
        assert!(matches!(fit_codebook(&[], 1024, (-30.0, 30.0)), Err(Error::Empty(_))));
        assert!(fit_codebook(&[1.0], 4, (-30.0, 30.0)).is_err());
        assert!(fit_codebook(&[1.0], 64, (1.0, 30.0)).is_err());
        assert!(fit_codebook(&[f64::NAN], 64, (-1.0, 1.0)).is_err());
    }

    #[test]
    fn quantize_edges_and_clamp() {
        let cb = small();
        let zero = cb.quantize(0.3).unwrap();
        assert_eq!(cb.dequantize(zero).unwrap().value, 0.0);
        assert_eq!(zero, cb.zero_token());
        let one = cb.quantize(0.7).unwrap();
        assert_eq!(cb.dequantize(one).unwrap().value, 1.0);
        assert_eq!(cb.quantize(0.5).unwrap(), one);
        assert_eq!(cb.quantize(1e6).unwrap(), VALUE_OFFSET + 2);
        assert_eq!(cb.quantize(-1e6).unwrap(), VALUE_OFFSET);
        assert!(cb.quantize(f64::INFINITY).is_err());
        assert_eq!(cb.quantize_or_pad(None).unwrap(), PAD_ID);
    }

    #[test]
    fn dequantize_special_tokens() {
        let cb = small();
        assert_eq!(
            cb.dequantize(PAD_ID).unwrap(),
            Dequantized {
                value: 0.0,
                missing: true
            }
        );
        assert!(matches!(cb.dequantize(EOS_ID), Err(Error::UnknownToken(1))));
        assert!(matches!(cb.dequantize(5), Err(Error::UnknownToken(5))));
    }

    #[test]
    fn quantile_binning_is_symmetric_and_valid() {
        let sample: Vec<f64> = (0..2000)
            .map(|i| ((i as f64) * 0.731).sin() * (i % 13) as f64)
            .collect();
        let cb = fit_codebook_with(&sample, 101, (-30.0, 30.0), Binning::Quantile).unwrap();
        cb.validate().unwrap();
        assert!(cb.num_bins() <= 99);
        let c = cb.centers();
        for i in 0..c.len() {
            assert_eq!(c[i], -c[c.len() - 1 - i]);
        }
    }

    #[test]
    fn file_round_trip_is_exact() {
        let sample: Vec<f64> = (0..777).map(|i| (i as f64 * 0.1).cos() * 3.3).collect();
        let cb = fit_codebook(&sample, 257, (-30.0, 30.0)).unwrap();
        let back = Codebook::from_json(&cb.to_json()).unwrap();
        assert_eq!(back, cb);
        for (a, b) in back.centers().iter().zip(cb.centers()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn metadata_does_not_change_fingerprint() {
        let cb = fit_codebook(&[-1.0, 0.0, 2.0, 0.5], 9, (-30.0, 30.0)).unwrap();
        let meta = BTreeMap::from([("run".to_string(), "x1".to_string())]);
        let (back, meta_back) = Codebook::from_json_with(&cb.to_json_with(&meta)).unwrap();
        assert_eq!(meta_back, meta);
        assert_eq!(back.fingerprint(), cb.fingerprint());
    }

    #[test]
    fn load_rejects_bad_files() {
        let json = small().to_json();
        let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
        v["centers"] = serde_json::json!([0.0, -1.0, 1.0]);
        assert!(matches!(
            Codebook::from_json(&v.to_string()),
            Err(Error::InvalidCodebook(_))
        ));

        let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
        v.as_object_mut().unwrap().remove("pad_id");
        let err = Codebook::from_json(&v.to_string()).unwrap_err();
        assert!(matches!(&err, Error::Schema(m) if m.contains("pad_id")), "{err}");

        let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
        v["version"] = serde_json::json!(99);
        assert!(matches!(
            Codebook::from_json(&v.to_string()),
            Err(Error::Version { found: 99, .. })
        ));

        assert!(matches!(Codebook::from_json("{not json"), Err(Error::Schema(_))));
    }
}
