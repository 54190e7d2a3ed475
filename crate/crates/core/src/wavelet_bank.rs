//! Wavelet families as quadruples of FIR filters.
//!
//! Taps follow the PyWavelets convention: `dec_*` are applied by convolution
//! (not correlation) before keeping every second output, `rec_*` after
//! zero-insertion upsampling. Under this convention the Haar detail
//! coefficient of the pair `(x0, x1)` is `(x0 - x1) / sqrt(2)`, and for
//! orthogonal families `dec_*` is the time reverse of `rec_*`.

use serde::{Deserialize, Serialize};

use crate::dwt::{self, BoundaryMode};
use crate::error::{Error, Result};

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Names accepted by [`get_family`].
pub const FAMILY_NAMES: [&str; 4] = ["haar", "db2", "db4", "bior2.2"];

/// Tolerance for the filter-sum and norm checks in [`verify_family`].
pub const FILTER_TOLERANCE: f64 = 1e-12;

/// A wavelet family: analysis and synthesis filter pairs.
///
/// The low-pass filters carry the scaling function (father wavelet), the
/// high-pass filters the wavelet (mother wavelet).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveletFamily {
    name: String,
    dec_lo: Vec<f64>,
    dec_hi: Vec<f64>,
    rec_lo: Vec<f64>,
    rec_hi: Vec<f64>,
    orthogonal: bool,
    vanishing_moments: (u32, u32),
}

impl WaveletFamily {
    /// Builds a family from explicit taps. All four filters must be non-empty
    /// and of equal length; no mathematical property is checked here, use
    /// [`verify_family`] for that.
    pub fn new(
        name: impl Into<String>,
        dec_lo: Vec<f64>,
        dec_hi: Vec<f64>,
        rec_lo: Vec<f64>,
        rec_hi: Vec<f64>,
        orthogonal: bool,
        vanishing_moments: (u32, u32),
    ) -> Result<Self> {
        let len = dec_lo.len();
        if len == 0 || [&dec_hi, &rec_lo, &rec_hi].iter().any(|f| f.len() != len) {
            return Err(Error::InvalidArgument(
                "wavelet filters must be non-empty and of equal length".into(),
            ));
        }
        Ok(Self {
            name: name.into(),
            dec_lo,
            dec_hi,
            rec_lo,
            rec_hi,
            orthogonal,
            vanishing_moments,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dec_lo(&self) -> &[f64] {
        &self.dec_lo
    }

    pub fn dec_hi(&self) -> &[f64] {
        &self.dec_hi
    }

    pub fn rec_lo(&self) -> &[f64] {
        &self.rec_lo
    }

    pub fn rec_hi(&self) -> &[f64] {
        &self.rec_hi
    }

    /// Whether the family is declared orthogonal.
    pub fn is_orthogonal(&self) -> bool {
        self.orthogonal
    }

    /// (analysis, synthesis) vanishing moments.
    pub fn vanishing_moments(&self) -> (u32, u32) {
        self.vanishing_moments
    }

    pub fn filter_len(&self) -> usize {
        self.dec_lo.len()
    }
}

fn orthogonal_from_rec(name: &str, rec_lo: &[f64], moments: u32) -> WaveletFamily {
    // Quadrature mirror: rec_hi[k] = (-1)^k rec_lo[L-1-k], analysis = time reverse.
    let len = rec_lo.len();
    let rec_hi: Vec<f64> = (0..len)
        .map(|k| {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sign * rec_lo[len - 1 - k]
        })
        .collect();
    let dec_lo: Vec<f64> = rec_lo.iter().rev().copied().collect();
    let dec_hi: Vec<f64> = rec_hi.iter().rev().copied().collect();
    WaveletFamily {
        name: name.to_string(),
        dec_lo,
        dec_hi,
        rec_lo: rec_lo.to_vec(),
        rec_hi,
        orthogonal: true,
        vanishing_moments: (moments, moments),
    }
}

/// Looks up a shipped family by name.
pub fn get_family(name: &str) -> Result<WaveletFamily> {
    match name {
        "haar" => Ok(orthogonal_from_rec("haar", &[FRAC_1_SQRT_2, FRAC_1_SQRT_2], 1)),
        "db2" => Ok(orthogonal_from_rec(
            "db2",
            &[
                0.48296291314453416,
                0.8365163037378079,
                0.2241438680420134,
                -0.12940952255126037,
            ],
            2,
        )),
        "db4" => Ok(orthogonal_from_rec(
            "db4",
            &[
                0.2303778133088965,
                0.7148465705529157,
                0.6308807679298589,
                -0.027983769416859854,
                -0.18703481171909309,
                0.030841381835560764,
                0.0328830116668852,
                -0.010597401785069032,
            ],
            4,
        )),
        "bior2.2" => {
            let s = std::f64::consts::SQRT_2;
            Ok(WaveletFamily {
                name: "bior2.2".to_string(),
                dec_lo: vec![0.0, -s / 8.0, s / 4.0, 3.0 * s / 4.0, s / 4.0, -s / 8.0],
                dec_hi: vec![0.0, s / 4.0, -s / 2.0, s / 4.0, 0.0, 0.0],
                rec_lo: vec![0.0, s / 4.0, s / 2.0, s / 4.0, 0.0, 0.0],
                rec_hi: vec![0.0, s / 8.0, s / 4.0, -3.0 * s / 4.0, s / 4.0, s / 8.0],
                orthogonal: false,
                vanishing_moments: (2, 2),
            })
        }
        other => Err(Error::UnknownFamily(other.to_string())),
    }
}

/// Outcome of [`verify_family`]. Failures are reported, never raised.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyReport {
    pub finite_nonempty: bool,
    /// Σ dec_lo = √2.
    pub lowpass_gain: bool,
    /// Σ dec_hi = 0.
    pub highpass_zero_mean: bool,
    /// Analysis filters are the time-reversed synthesis filters and
    /// Σ dec_lo² = 1.
    pub orthogonal: bool,
    /// The declared orthogonality flag agrees with `orthogonal`.
    pub orthogonality_consistent: bool,
    /// Single-level round trip is the identity on every unit impulse of
    /// every valid length up to 64.
    pub perfect_reconstruction: bool,
}

impl FamilyReport {
    /// All invariants hold. A biorthogonal family passes with
    /// `orthogonal == false` as long as it is declared as such.
    pub fn all_passed(&self) -> bool {
        self.finite_nonempty
            && self.lowpass_gain
            && self.highpass_zero_mean
            && self.orthogonality_consistent
            && self.perfect_reconstruction
    }
}

pub fn verify_family(f: &WaveletFamily) -> FamilyReport {
    let filters = [&f.dec_lo, &f.dec_hi, &f.rec_lo, &f.rec_hi];
    let finite_nonempty = filters
        .iter()
        .all(|taps| !taps.is_empty() && taps.iter().all(|v| v.is_finite()));

    let lo_sum: f64 = f.dec_lo.iter().sum();
    let hi_sum: f64 = f.dec_hi.iter().sum();
    let lowpass_gain = (lo_sum - std::f64::consts::SQRT_2).abs() <= FILTER_TOLERANCE;
    let highpass_zero_mean = hi_sum.abs() <= FILTER_TOLERANCE;

    let reversed_eq = |a: &[f64], b: &[f64]| {
        a.len() == b.len()
            && a.iter()
                .zip(b.iter().rev())
                .all(|(x, y)| (x - y).abs() <= FILTER_TOLERANCE)
    };
    let energy: f64 = f.dec_lo.iter().map(|v| v * v).sum();
    let orthogonal = reversed_eq(&f.dec_lo, &f.rec_lo)
        && reversed_eq(&f.dec_hi, &f.rec_hi)
        && (energy - 1.0).abs() <= FILTER_TOLERANCE;

    let perfect_reconstruction = finite_nonempty && impulse_round_trip(f, 64);

    FamilyReport {
        finite_nonempty,
        lowpass_gain,
        highpass_zero_mean,
        orthogonal,
        orthogonality_consistent: orthogonal == f.orthogonal,
        perfect_reconstruction,
    }
}

fn impulse_round_trip(f: &WaveletFamily, max_len: usize) -> bool {
    for mode in [BoundaryMode::Symmetric, BoundaryMode::Periodic] {
        for n in 2..=max_len {
            if dwt::coefficient_layout(n, f, 1, mode).is_err() {
                continue;
            }
            let mut x = vec![0.0; n];
            for pos in 0..n {
                x[pos] = 1.0;
                let ok = dwt::decompose(&x, f, 1, mode)
                    .and_then(|p| dwt::reconstruct(&p, f))
                    .map(|y| y.iter().zip(&x).all(|(a, b)| (a - b).abs() <= 1e-9))
                    .unwrap_or(false);
                if !ok {
                    return false;
                }
                x[pos] = 0.0;
            }
        }
    }
    true
}
