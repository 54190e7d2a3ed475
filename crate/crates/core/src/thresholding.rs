//! Detail-coefficient thresholding. Approximation coefficients always pass
//! through untouched.

use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};

use crate::dwt::CoefficientPyramid;
use crate::error::{Error, Result};

/// Consistency constant of the median absolute deviation for Gaussian noise.
pub const MAD_TO_SIGMA: f64 = 0.6745;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaEstimator {
    /// median(|d_1|) / 0.6745
    #[default]
    MadFinest,
    /// Sample standard deviation of d_1.
    StdFinest,
}

/// How the CDF-threshold quantile depends on the level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CdfCutoff {
    /// fraction(j) = b^j: the finest level (j = 1) loses the largest share.
    #[default]
    FinerMoreAggressive,
    /// fraction(j) = b^(J - j + 1): the coarsest level loses the largest share.
    CoarserMoreAggressive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FdrcPooling {
    /// One multiple-testing problem over all detail levels.
    #[default]
    Pooled,
    /// An independent problem per level.
    PerLevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ThresholdMethod {
    #[default]
    None,
    Cdf {
        b: f64,
        #[serde(default)]
        cutoff: CdfCutoff,
    },
    VisuSoft,
    VisuHard,
    Fdrc {
        q: f64,
        #[serde(default)]
        pooling: FdrcPooling,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ThresholdSpec {
    #[serde(flatten)]
    pub method: ThresholdMethod,
    #[serde(default)]
    pub sigma_estimator: SigmaEstimator,
}

impl ThresholdSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn new(method: ThresholdMethod) -> Self {
        Self {
            method,
            sigma_estimator: SigmaEstimator::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        match self.method {
            ThresholdMethod::Cdf { b, .. } if !open_unit(b) => Err(Error::InvalidThreshold(format!(
                "cdf base b must lie in (0, 1), got {b}"
            ))),
            ThresholdMethod::Fdrc { q, .. } if !open_unit(q) => Err(Error::InvalidThreshold(format!(
                "fdrc level q must lie in (0, 1), got {q}"
            ))),
            _ => Ok(()),
        }
    }

    /// Short stable label, e.g. `none`, `cdf(b=0.5)`, `fdrc(q=0.05)`.
    pub fn label(&self) -> String {
        match self.method {
            ThresholdMethod::None => "none".into(),
            ThresholdMethod::Cdf { b, .. } => format!("cdf(b={b})"),
            ThresholdMethod::VisuSoft => "visu_soft".into(),
            ThresholdMethod::VisuHard => "visu_hard".into(),
            ThresholdMethod::Fdrc { q, .. } => format!("fdrc(q={q})"),
        }
    }
}

impl std::str::FromStr for ThresholdSpec {
    type Err = Error;

    /// Parses `none`, `visu_soft`, `visu_hard`, `cdf`, `cdf:0.3`, `fdrc`, `fdrc:0.1`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let parse_arg = |default: f64| -> Result<f64> {
            arg.map_or(Ok(default), |a| {
                a.parse::<f64>()
                    .map_err(|_| Error::InvalidThreshold(format!("bad parameter '{a}'")))
            })
        };
        let method = match name {
            "none" => ThresholdMethod::None,
            "visu_soft" => ThresholdMethod::VisuSoft,
            "visu_hard" => ThresholdMethod::VisuHard,
            "cdf" => ThresholdMethod::Cdf {
                b: parse_arg(0.5)?,
                cutoff: CdfCutoff::default(),
            },
            "fdrc" => ThresholdMethod::Fdrc {
                q: parse_arg(0.05)?,
                pooling: FdrcPooling::default(),
            },
            other => return Err(Error::InvalidThreshold(format!("unknown method '{other}'"))),
        };
        let spec = ThresholdSpec::new(method);
        spec.validate()?;
        Ok(spec)
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Noise scale estimated from the finest-level details.
pub fn estimate_sigma(finest: &[f64], estimator: SigmaEstimator) -> Result<f64> {
    if finest.is_empty() {
        return Err(Error::Empty("finest detail coefficients"));
    }
    Ok(match estimator {
        SigmaEstimator::MadFinest => {
            let mut abs: Vec<f64> = finest.iter().map(|d| d.abs()).collect();
            median(&mut abs) / MAD_TO_SIGMA
        }
        SigmaEstimator::StdFinest => {
            let n = finest.len();
            if n < 2 {
                0.0
            } else {
                let mean = finest.iter().sum::<f64>() / n as f64;
                let ss: f64 = finest.iter().map(|d| (d - mean).powi(2)).sum();
                (ss / (n - 1) as f64).sqrt()
            }
        }
    })
}

/// Universal threshold `σ̂·sqrt(2 ln N)`.
pub fn visu_lambda(finest: &[f64], n_total: usize, estimator: SigmaEstimator) -> Result<f64> {
    if n_total < 2 {
        return Err(Error::InvalidThreshold(format!(
            "coefficient count must be at least 2, got {n_total}"
        )));
    }
    let sigma = estimate_sigma(finest, estimator)?;
    Ok(sigma * (2.0 * (n_total as f64).ln()).sqrt())
}

pub fn hard_threshold(values: &[f64], lambda: f64) -> Vec<f64> {
    values.iter().map(|&d| if d.abs() > lambda { d } else { 0.0 }).collect()
}

pub fn soft_threshold(values: &[f64], lambda: f64) -> Vec<f64> {
    values
        .iter()
        .map(|&d| {
            let shrunk = (d.abs() - lambda).max(0.0);
            if shrunk == 0.0 {
                0.0
            } else {
                d.signum() * shrunk
            }
        })
        .collect()
}

/// Fraction of level-`j` magnitudes (1 = finest) that falls in the zeroed
/// lower tail.
pub fn cdf_cutoff_fraction(j: usize, max_level: usize, b: f64, cutoff: CdfCutoff) -> f64 {
    match cutoff {
        CdfCutoff::FinerMoreAggressive => b.powi(j as i32),
        CdfCutoff::CoarserMoreAggressive => b.powi((max_level - j + 1) as i32),
    }
}

/// Zeroes every coefficient whose magnitude lies in the lower `fraction`
/// tail of the level's empirical magnitude distribution, i.e. every `d`
/// with `F_n(|d|) <= fraction`. Survivors keep their position and value.
pub fn cdf_threshold_fraction(details: &[f64], fraction: f64) -> Vec<f64> {
    let n = details.len();
    if n == 0 {
        return Vec::new();
    }
    let mut sorted: Vec<f64> = details.iter().map(|d| d.abs()).collect();
    sorted.sort_by(f64::total_cmp);
    details
        .iter()
        .map(|&d| {
            // F_n(|d|) = #{|d_i| <= |d|} / n
            let rank = sorted.partition_point(|&v| v <= d.abs());
            if (rank as f64) / (n as f64) <= fraction {
                0.0
            } else {
                d
            }
        })
        .collect()
}

/// CDF thresholding of level `j` out of `max_level`, with the default
/// finer-is-more-aggressive cutoff.
pub fn cdf_threshold(details: &[f64], j: usize, max_level: usize, b: f64) -> Result<Vec<f64>> {
    if j == 0 || j > max_level {
        return Err(Error::InvalidThreshold(format!("level {j} outside 1..={max_level}")));
    }
    if !(b > 0.0 && b < 1.0) {
        return Err(Error::InvalidThreshold(format!(
            "cdf base b must lie in (0, 1), got {b}"
        )));
    }
    let fraction = cdf_cutoff_fraction(j, max_level, b, CdfCutoff::FinerMoreAggressive);
    Ok(cdf_threshold_fraction(details, fraction))
}

/// Two-sided Gaussian p-values `2(1 - Φ(|d|/σ))`.
pub fn gaussian_pvalues(details: &[f64], sigma: f64) -> Vec<f64> {
    details
        .iter()
        .map(|d| erfc(d.abs() / (sigma * std::f64::consts::SQRT_2)))
        .collect()
}

/// Benjamini–Hochberg step-up index: the largest 1-based `i` with
/// `p_(i) <= (i/m) q` over the ascending p-values, or `None`.
pub fn fdr_cutoff_index(sorted_pvalues: &[f64], q: f64) -> Option<usize> {
    let m = sorted_pvalues.len() as f64;
    sorted_pvalues
        .iter()
        .enumerate()
        .rev()
        .find(|(i, &p)| p <= (*i as f64 + 1.0) / m * q)
        .map(|(i, _)| i + 1)
}

/// `σ·Φ⁻¹(1 - p/2)`: the magnitude whose two-sided p-value is `p`.
pub fn pvalue_to_lambda(p: f64, sigma: f64) -> f64 {
    sigma * std::f64::consts::SQRT_2 * erfc_inv(p)
}

/// Result of the FDR threshold search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdrcSelection {
    /// 1-based index into the sorted p-values.
    pub i0: usize,
    pub p_cutoff: f64,
    pub lambda: f64,
}

/// Threshold selection from raw p-values (any order).
pub fn fdrc_select(pvalues: &[f64], q: f64, sigma: f64) -> Option<FdrcSelection> {
    let mut sorted = pvalues.to_vec();
    sorted.sort_by(f64::total_cmp);
    fdr_cutoff_index(&sorted, q).map(|i0| {
        let p_cutoff = sorted[i0 - 1];
        FdrcSelection {
            i0,
            p_cutoff,
            lambda: pvalue_to_lambda(p_cutoff, sigma),
        }
    })
}

/// FDRC hard thresholding of `details` with known noise scale `sigma`.
/// When no hypothesis is rejected every coefficient is zeroed.
pub fn fdrc_threshold(details: &[f64], sigma: f64, q: f64) -> Result<Vec<f64>> {
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(Error::NonPositiveSigma(sigma));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidThreshold(format!(
            "fdrc level q must lie in (0, 1), got {q}"
        )));
    }
    let pvalues = gaussian_pvalues(details, sigma);
    Ok(match fdrc_select(&pvalues, q, sigma) {
        // Comparing p-values rather than |d| >= λ keeps the cutoff
        // coefficient itself regardless of rounding in Φ⁻¹.
        Some(sel) => details
            .iter()
            .zip(&pvalues)
            .map(|(&d, &p)| if p <= sel.p_cutoff { d } else { 0.0 })
            .collect(),
        None => vec![0.0; details.len()],
    })
}

/// Applies `spec` to every detail level of `p`.
pub fn apply_threshold(p: &CoefficientPyramid, spec: &ThresholdSpec) -> Result<CoefficientPyramid> {
    spec.validate()?;
    let mut out = p.clone();
    let levels = p.level;
    match spec.method {
        ThresholdMethod::None => {}
        ThresholdMethod::Cdf { b, cutoff } => {
            for (i, d) in out.details.iter_mut().enumerate() {
                let j = levels - i;
                *d = cdf_threshold_fraction(d, cdf_cutoff_fraction(j, levels, b, cutoff));
            }
        }
        ThresholdMethod::VisuSoft | ThresholdMethod::VisuHard => {
            let lambda = visu_lambda(p.detail_at_level(1), p.coefficient_count(), spec.sigma_estimator)?;
            for d in out.details.iter_mut() {
                *d = if spec.method == ThresholdMethod::VisuSoft {
                    soft_threshold(d, lambda)
                } else {
                    hard_threshold(d, lambda)
                };
            }
        }
        ThresholdMethod::Fdrc { q, pooling } => {
            let sigma = estimate_sigma(p.detail_at_level(1), spec.sigma_estimator)?;
            // Zero spread leaves every nonzero detail infinitely significant.
            if sigma == 0.0 {
                return Ok(out);
            }
            match pooling {
                FdrcPooling::PerLevel => {
                    for d in out.details.iter_mut() {
                        *d = fdrc_threshold(d, sigma, q)?;
                    }
                }
                FdrcPooling::Pooled => {
                    let pooled: Vec<f64> = p.details.iter().flatten().copied().collect();
                    let kept = fdrc_threshold(&pooled, sigma, q)?;
                    let mut offset = 0;
                    for d in out.details.iter_mut() {
                        let n = d.len();
                        d.copy_from_slice(&kept[offset..offset + n]);
                        offset += n;
                    }
                }
            }
        }
    }
    Ok(out)
}
