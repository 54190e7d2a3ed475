//! Decimated discrete wavelet transform: filter, keep every second sample,
//! repeat on the approximation.
//!
//! Coefficients and lengths match PyWavelets (`pywt.wavedec`/`pywt.waverec`)
//! for the `symmetric` and `periodization` modes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wavelet_bank::WaveletFamily;

/// Signal extension at the edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryMode {
    /// Half-sample symmetric reflection. Each level yields
    /// `floor((n + L - 1) / 2)` coefficients.
    #[default]
    Symmetric,
    /// Periodic extension with `ceil(n / 2)` coefficients per level (an odd
    /// level input is first extended by repeating its last sample).
    Periodic,
}

impl BoundaryMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            BoundaryMode::Symmetric => "symmetric",
            BoundaryMode::Periodic => "periodic",
        }
    }
}

impl std::str::FromStr for BoundaryMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symmetric" => Ok(BoundaryMode::Symmetric),
            "periodic" | "periodization" => Ok(BoundaryMode::Periodic),
            other => Err(Error::InvalidArgument(format!("unknown boundary mode '{other}'"))),
        }
    }
}

/// Approximation `a_J` plus details `[d_J, ..., d_1]`, coarsest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientPyramid {
    pub approx: Vec<f64>,
    pub details: Vec<Vec<f64>>,
    pub level: usize,
    pub input_length: usize,
    pub family_name: String,
    pub boundary_mode: BoundaryMode,
}

impl CoefficientPyramid {
    /// Segment lengths `[len(a_J), len(d_J), ..., len(d_1)]`.
    pub fn layout(&self) -> Vec<usize> {
        std::iter::once(self.approx.len())
            .chain(self.details.iter().map(Vec::len))
            .collect()
    }

    /// Detail array at decomposition level `j` (1 = finest).
    pub fn detail_at_level(&self, j: usize) -> &[f64] {
        &self.details[self.level - j]
    }

    pub fn coefficient_count(&self) -> usize {
        self.approx.len() + self.details.iter().map(Vec::len).sum::<usize>()
    }

    /// All coefficients in token order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.coefficient_count());
        out.extend_from_slice(&self.approx);
        for d in &self.details {
            out.extend_from_slice(d);
        }
        out
    }

    pub fn energy(&self) -> f64 {
        self.approx.iter().map(|v| v * v).sum::<f64>() + self.details.iter().flatten().map(|v| v * v).sum::<f64>()
    }
}

/// Smallest input length a single level accepts for filters of length `filter_len`.
pub fn min_level_input(filter_len: usize) -> usize {
    filter_len.saturating_sub(1).max(2)
}

/// Output length of one analysis step.
pub fn step_output_len(n: usize, filter_len: usize, mode: BoundaryMode) -> usize {
    match mode {
        BoundaryMode::Symmetric => (n + filter_len - 1) / 2,
        BoundaryMode::Periodic => n.div_ceil(2),
    }
}

/// Input lengths of every level, `[n_0 = n, n_1, ..., n_J]`, where `n_J` is
/// the length of `a_J`.
pub fn level_lengths(n: usize, f: &WaveletFamily, level: usize, mode: BoundaryMode) -> Result<Vec<usize>> {
    if level == 0 {
        return Err(Error::ZeroLevel);
    }
    let filter_len = f.filter_len();
    let min = min_level_input(filter_len);
    let mut lengths = Vec::with_capacity(level + 1);
    let mut current = n;
    lengths.push(current);
    for j in 1..=level {
        if current < min {
            return Err(Error::SignalTooShort {
                length: n,
                level: j,
                family: f.name().to_string(),
                min,
            });
        }
        current = step_output_len(current, filter_len, mode);
        lengths.push(current);
    }
    Ok(lengths)
}

/// Segment lengths `[len(a_J), len(d_J), ..., len(d_1)]` without running the
/// transform.
pub fn coefficient_layout(n: usize, f: &WaveletFamily, level: usize, mode: BoundaryMode) -> Result<Vec<usize>> {
    let lengths = level_lengths(n, f, level, mode)?;
    let mut layout = Vec::with_capacity(level + 1);
    layout.push(lengths[level]);
    for j in (1..=level).rev() {
        layout.push(lengths[j]);
    }
    Ok(layout)
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let r = i.rem_euclid(period) as usize;
    if r < n {
        r
    } else {
        2 * n - 1 - r
    }
}

/// Geometry of one analysis step: each output `k` combines the extended
/// samples `ext[centre(k) - j]`, `j < L`, where `ext[i] = x[source(i)]`.
struct AnalysisPlan {
    n: usize,
    out_len: usize,
    offset: usize,
    pad: usize,
    mode: BoundaryMode,
}

impl AnalysisPlan {
    fn new(n: usize, filter_len: usize, mode: BoundaryMode) -> Self {
        let (offset, pad) = match mode {
            BoundaryMode::Symmetric => (1, filter_len - 1),
            BoundaryMode::Periodic => (filter_len / 2, filter_len),
        };
        Self {
            n,
            out_len: step_output_len(n, filter_len, mode),
            offset: offset + pad,
            pad,
            mode,
        }
    }

    fn ext_len(&self) -> usize {
        self.n + self.n % 2 + 2 * self.pad
    }

    /// Input index behind extended position `i`. Periodic mode works on an
    /// even-length signal; an odd input repeats its last sample.
    #[inline]
    fn source(&self, i: usize) -> usize {
        let i = i as isize - self.pad as isize;
        match self.mode {
            BoundaryMode::Symmetric => reflect(i, self.n),
            BoundaryMode::Periodic => (i.rem_euclid((self.n + self.n % 2) as isize) as usize).min(self.n - 1),
        }
    }

    fn extend(&self, x: &[f64]) -> Vec<f64> {
        let mut ext = Vec::with_capacity(self.ext_len());
        ext.extend((0..self.pad).map(|i| x[self.source(i)]));
        ext.extend_from_slice(x);
        ext.extend((self.pad + self.n..self.ext_len()).map(|i| x[self.source(i)]));
        ext
    }

    #[inline]
    fn centre(&self, k: usize) -> usize {
        2 * k + self.offset
    }
}

/// Single analysis step. Returns `(approximation, detail)`.
pub fn dwt_step(x: &[f64], f: &WaveletFamily, mode: BoundaryMode) -> (Vec<f64>, Vec<f64>) {
    let lo = f.dec_lo();
    let hi = f.dec_hi();
    let len = lo.len();
    let plan = AnalysisPlan::new(x.len(), len, mode);
    let ext = plan.extend(x);
    let mut approx = Vec::with_capacity(plan.out_len);
    let mut detail = Vec::with_capacity(plan.out_len);
    for k in 0..plan.out_len {
        let centre = plan.centre(k);
        let mut a = 0.0;
        let mut d = 0.0;
        for j in 0..len {
            let v = ext[centre - j];
            a += lo[j] * v;
            d += hi[j] * v;
        }
        approx.push(a);
        detail.push(d);
    }
    (approx, detail)
}

/// Propagates a missing-sample mask through one analysis step: an output is
/// missing when every sample under a nonzero tap of its filter is missing.
pub fn mask_step(missing: &[bool], f: &WaveletFamily, mode: BoundaryMode) -> (Vec<bool>, Vec<bool>) {
    let len = f.filter_len();
    let plan = AnalysisPlan::new(missing.len(), len, mode);
    let covered = |taps: &[f64], k: usize| {
        let centre = plan.centre(k);
        (0..len)
            .filter(|&j| taps[j] != 0.0)
            .all(|j| missing[plan.source(centre - j)])
    };
    (0..plan.out_len)
        .map(|k| (covered(f.dec_lo(), k), covered(f.dec_hi(), k)))
        .unzip()
}

/// Single synthesis step producing exactly `out_len` samples.
pub fn idwt_step(approx: &[f64], detail: &[f64], f: &WaveletFamily, mode: BoundaryMode, out_len: usize) -> Vec<f64> {
    let lo = f.rec_lo();
    let hi = f.rec_hi();
    let len = lo.len() as isize;
    match mode {
        BoundaryMode::Symmetric => {
            // x[m] = Σ_k g[m + L - 2 - 2k] c[k]
            let mut out = vec![0.0; out_len];
            for (k, (&a, &d)) in approx.iter().zip(detail).enumerate() {
                for t in 0..len {
                    let m = 2 * k as isize + t - (len - 2);
                    if m >= 0 && (m as usize) < out_len {
                        out[m as usize] += lo[t as usize] * a + hi[t as usize] * d;
                    }
                }
            }
            out
        }
        BoundaryMode::Periodic => {
            let period = 2 * approx.len();
            let shift = len / 2 - 1;
            let mut full = vec![0.0; period];
            for (k, (&a, &d)) in approx.iter().zip(detail).enumerate() {
                for t in 0..len {
                    let m = (2 * k as isize + t - shift).rem_euclid(period as isize) as usize;
                    full[m] += lo[t as usize] * a + hi[t as usize] * d;
                }
            }
            full.truncate(out_len);
            full
        }
    }
}

/// Multi-level decomposition. Only the final approximation is kept; the
/// intermediate ones are re-decomposed.
pub fn decompose(x: &[f64], f: &WaveletFamily, level: usize, mode: BoundaryMode) -> Result<CoefficientPyramid> {
    if let Some(index) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    level_lengths(x.len(), f, level, mode)?;
    let mut details = Vec::with_capacity(level);
    let (mut current, d) = dwt_step(x, f, mode);
    details.push(d);
    for _ in 1..level {
        let (a, d) = dwt_step(&current, f, mode);
        details.push(d);
        current = a;
    }
    details.reverse();
    Ok(CoefficientPyramid {
        approx: current,
        details,
        level,
        input_length: x.len(),
        family_name: f.name().to_string(),
        boundary_mode: mode,
    })
}

/// Inverse of [`decompose`]; returns exactly `p.input_length` samples.
pub fn reconstruct(p: &CoefficientPyramid, f: &WaveletFamily) -> Result<Vec<f64>> {
    if p.family_name != f.name() {
        return Err(Error::InconsistentPyramid(format!(
            "pyramid built with '{}' reconstructed with '{}'",
            p.family_name,
            f.name()
        )));
    }
    if p.details.len() != p.level {
        return Err(Error::InconsistentPyramid(format!(
            "{} detail arrays for level {}",
            p.details.len(),
            p.level
        )));
    }
    let expected = coefficient_layout(p.input_length, f, p.level, p.boundary_mode)?;
    let actual = p.layout();
    if expected != actual {
        return Err(Error::InconsistentPyramid(format!(
            "segment lengths {actual:?} do not match {expected:?} for input length {}",
            p.input_length
        )));
    }
    let lengths = level_lengths(p.input_length, f, p.level, p.boundary_mode)?;
    let mut current = p.approx.clone();
    for (i, detail) in p.details.iter().enumerate() {
        let j = p.level - i;
        current = idwt_step(&current, detail, f, p.boundary_mode, lengths[j - 1]);
    }
    Ok(current)
}
