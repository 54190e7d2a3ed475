//! Forward map scale → DWT → threshold → quantize → concatenate, and its
//! inverse.
//!
//! Token streams are laid out coarsest first: `[a_J, d_J, ..., d_1]`. Only
//! the final approximation is kept.

use serde::{Deserialize, Serialize};

use crate::codebook::{Codebook, TokenId};
use crate::dwt::{self, BoundaryMode, CoefficientPyramid};
use crate::error::{Error, Result};
use crate::thresholding::{apply_threshold, ThresholdSpec};
use crate::wavelet_bank::{get_family, WaveletFamily};

/// Context statistics used to z-score a window and to invert forecasts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleStats {
    pub mu: f64,
    /// Sample standard deviation (n - 1 denominator); 1 when the observed
    /// values have no spread.
    pub sigma: f64,
}

impl ScaleStats {
    pub fn scale(&self, v: f64) -> f64 {
        (v - self.mu) / self.sigma
    }

    pub fn unscale(&self, v: f64) -> f64 {
        v * self.sigma + self.mu
    }
}

/// Mean and standard deviation over the observed (non-NaN) values.
pub fn compute_scale(x: &[f64]) -> Result<ScaleStats> {
    if let Some(index) = x.iter().position(|v| v.is_infinite()) {
        return Err(Error::NonFinite { index });
    }
    let observed: Vec<f64> = x.iter().copied().filter(|v| !v.is_nan()).collect();
    if observed.is_empty() {
        return Err(Error::AllMissing);
    }
    let n = observed.len() as f64;
    let mu = observed.iter().sum::<f64>() / n;
    let sigma = if observed.len() > 1 {
        (observed.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(ScaleStats {
        mu,
        sigma: if sigma > 0.0 { sigma } else { 1.0 },
    })
}

/// Fills NaN gaps in place: linear interpolation between observed
/// neighbours, nearest observed value at either end. Returns the mask of
/// filled positions.
pub fn fill_missing(x: &mut [f64]) -> Vec<bool> {
    let missing: Vec<bool> = x.iter().map(|v| v.is_nan()).collect();
    let observed: Vec<usize> = (0..x.len()).filter(|&i| !missing[i]).collect();
    let (Some(&first), Some(&last)) = (observed.first(), observed.last()) else {
        return missing;
    };
    let hold = x[last];
    for v in &mut x[last + 1..] {
        *v = hold;
    }
    let first_value = x[first];
    for v in &mut x[..first] {
        *v = first_value;
    }
    for pair in observed.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b > a + 1 {
            let (va, vb) = (x[a], x[b]);
            let span = (b - a) as f64;
            for (i, v) in x.iter_mut().enumerate().take(b).skip(a + 1) {
                *v = va + (vb - va) * (i - a) as f64 / span;
            }
        }
    }
    missing
}

/// Wavelet settings shared by tokenization and codebook fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletConfig {
    pub family: WaveletFamily,
    pub level: usize,
    pub mode: BoundaryMode,
    pub threshold: ThresholdSpec,
}

/// Scaled, thresholded coefficients of one window.
#[derive(Debug, Clone)]
pub struct WindowCoefficients {
    pub pyramid: CoefficientPyramid,
    /// One flag per flattened coefficient: its filter support was entirely
    /// unobserved.
    pub missing: Vec<bool>,
}

impl WindowCoefficients {
    /// Observed coefficients in token order.
    pub fn observed(&self) -> impl Iterator<Item = f64> + '_ {
        self.pyramid
            .flatten()
            .into_iter()
            .zip(self.missing.iter())
            .filter_map(|(v, &m)| (!m).then_some(v))
    }
}

impl WaveletConfig {
    pub fn new(family: &str, level: usize) -> Result<Self> {
        Ok(Self {
            family: get_family(family)?,
            level,
            mode: BoundaryMode::default(),
            threshold: ThresholdSpec::none(),
        })
    }

    pub fn with_mode(mut self, mode: BoundaryMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_threshold(mut self, threshold: ThresholdSpec) -> Self {
        self.threshold = threshold;
        self
    }

    /// `[len(a_J), len(d_J), ..., len(d_1)]` for a window of `n` samples.
    pub fn layout(&self, n: usize) -> Result<Vec<usize>> {
        dwt::coefficient_layout(n, &self.family, self.level, self.mode)
    }

    /// Number of coefficient tokens for a window of `n` samples.
    pub fn token_count(&self, n: usize) -> Result<usize> {
        Ok(self.layout(n)?.iter().sum())
    }

    pub fn coefficients(&self, x: &[f64], scale: &ScaleStats) -> Result<WindowCoefficients> {
        if let Some(index) = x.iter().position(|v| v.is_infinite()) {
            return Err(Error::NonFinite { index });
        }
        self.layout(x.len())?;
        let mut scaled: Vec<f64> = x.iter().map(|&v| scale.scale(v)).collect();
        let mut mask = fill_missing(&mut scaled);
        if mask.iter().all(|&m| m) {
            return Err(Error::AllMissing);
        }
        let pyramid = dwt::decompose(&scaled, &self.family, self.level, self.mode)?;
        let pyramid = apply_threshold(&pyramid, &self.threshold)?;

        let mut detail_masks = Vec::with_capacity(self.level);
        for _ in 0..self.level {
            let (a, d) = dwt::mask_step(&mask, &self.family, self.mode);
            detail_masks.push(d);
            mask = a;
        }
        let mut missing = mask;
        for d in detail_masks.into_iter().rev() {
            missing.extend(d);
        }
        Ok(WindowCoefficients { pyramid, missing })
    }
}

/// Token ids plus what is needed to invert them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenStream {
    pub tokens: Vec<TokenId>,
    /// `[len(a_J), len(d_J), ..., len(d_1)]`; sums to the token count
    /// excluding a trailing EOS.
    pub segment_lengths: Vec<usize>,
    pub scale: ScaleStats,
    pub family_name: String,
    pub level: usize,
    pub boundary_mode: BoundaryMode,
    pub source_length: usize,
}

impl TokenStream {
    /// Tokens without the trailing EOS, if any.
    pub fn coefficient_tokens(&self) -> &[TokenId] {
        let n: usize = self.segment_lengths.iter().sum();
        &self.tokens[..n.min(self.tokens.len())]
    }

    pub fn pad_count(&self, pad_id: TokenId) -> usize {
        self.coefficient_tokens().iter().filter(|&&t| t == pad_id).count()
    }
}

/// A [`WaveletConfig`] paired with a fitted codebook.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    pub wavelet: WaveletConfig,
    pub codebook: Codebook,
}

impl Tokenizer {
    pub fn new(wavelet: WaveletConfig, codebook: Codebook) -> Self {
        Self { wavelet, codebook }
    }

    /// Tokenizes a window scaled by its own statistics.
    pub fn tokenize(&self, x: &[f64]) -> Result<TokenStream> {
        let scale = compute_scale(x)?;
        self.tokenize_with_scale(x, scale)
    }

    /// Tokenizes a window under externally supplied statistics.
    pub fn tokenize_with_scale(&self, x: &[f64], scale: ScaleStats) -> Result<TokenStream> {
        let coeffs = self.wavelet.coefficients(x, &scale)?;
        let tokens = coeffs
            .pyramid
            .flatten()
            .into_iter()
            .zip(&coeffs.missing)
            .map(|(w, &m)| self.codebook.quantize_or_pad((!m).then_some(w)))
            .collect::<Result<Vec<_>>>()?;
        Ok(TokenStream {
            tokens,
            segment_lengths: coeffs.pyramid.layout(),
            scale,
            family_name: self.wavelet.family.name().to_string(),
            level: self.wavelet.level,
            boundary_mode: self.wavelet.mode,
            source_length: x.len(),
        })
    }

    /// Context and horizon streams. Both use the context statistics; the
    /// horizon is decomposed on its own and terminated by EOS.
    pub fn tokenize_pair(&self, context: &[f64], horizon: &[f64]) -> Result<(TokenStream, TokenStream)> {
        let ctx = self.tokenize(context)?;
        let mut hor = self.tokenize_with_scale(horizon, ctx.scale)?;
        hor.tokens.push(self.codebook.eos_id());
        Ok((ctx, hor))
    }

    /// Inverse map: dequantize, reconstruct, un-scale.
    pub fn detokenize(&self, ts: &TokenStream) -> Result<Vec<f64>> {
        detokenize(ts, &self.codebook, &self.wavelet.family)
    }
}

/// Rebuilds the window a token stream came from (up to quantization).
pub fn detokenize(ts: &TokenStream, cb: &Codebook, f: &WaveletFamily) -> Result<Vec<f64>> {
    if ts.family_name != f.name() {
        return Err(Error::InconsistentPyramid(format!(
            "stream built with '{}' decoded with '{}'",
            ts.family_name,
            f.name()
        )));
    }
    let layout = dwt::coefficient_layout(ts.source_length, f, ts.level, ts.boundary_mode)?;
    if layout != ts.segment_lengths {
        return Err(Error::InconsistentPyramid(format!(
            "segment lengths {:?} do not match {:?} for {} samples",
            ts.segment_lengths, layout, ts.source_length
        )));
    }
    let n: usize = layout.iter().sum();
    let body = match ts.tokens.len() {
        len if len == n => &ts.tokens[..],
        len if len == n + 1 && ts.tokens[n] == cb.eos_id() => &ts.tokens[..n],
        len => {
            return Err(Error::InconsistentPyramid(format!(
                "{len} tokens for {n} coefficient positions"
            )))
        }
    };
    let mut values = Vec::with_capacity(n);
    for (pos, &t) in body.iter().enumerate() {
        if t == cb.eos_id() {
            return Err(Error::EosInSegment(pos));
        }
        values.push(cb.dequantize(t)?.value);
    }
    let mut segments = Vec::with_capacity(layout.len());
    let mut offset = 0;
    for len in &layout {
        segments.push(values[offset..offset + len].to_vec());
        offset += len;
    }
    let mut segments = segments.into_iter();
    let approx = segments.next().expect("layout has an approximation segment");
    let pyramid = CoefficientPyramid {
        approx,
        details: segments.collect(),
        level: ts.level,
        input_length: ts.source_length,
        family_name: ts.family_name.clone(),
        boundary_mode: ts.boundary_mode,
    };
    let y = dwt::reconstruct(&pyramid, f)?;
    Ok(y.into_iter().map(|v| ts.scale.unscale(v)).collect())
}
