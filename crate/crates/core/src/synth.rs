//! Synthetic series: trends, sparse spikes, frequency switches, Gaussian
//! process draws with composite kernels, and convex mixtures of these.

use nalgebra::{Cholesky, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{epoch, TimeSeries};

/// Longest series a GP draw may produce (dense Cholesky).
pub const MAX_GP_LENGTH: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KindTag {
    TrendExp,
    SparseSpikes,
    MultiFreqSwitch,
    GpKernelMix,
    Tsmixup,
}

impl KindTag {
    pub const ALL: [KindTag; 5] = [
        KindTag::TrendExp,
        KindTag::SparseSpikes,
        KindTag::MultiFreqSwitch,
        KindTag::GpKernelMix,
        KindTag::Tsmixup,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            KindTag::TrendExp => "trend_exp",
            KindTag::SparseSpikes => "sparse_spikes",
            KindTag::MultiFreqSwitch => "multi_freq_switch",
            KindTag::GpKernelMix => "gp_kernel_mix",
            KindTag::Tsmixup => "tsmixup",
        }
    }
}

impl std::str::FromStr for KindTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        KindTag::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown generator '{s}'")))
    }
}

/// Covariance functions on the unit time grid `t = i / length`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Kernel {
    Rbf {
        variance: f64,
        length_scale: f64,
    },
    Periodic {
        variance: f64,
        period: f64,
        length_scale: f64,
    },
    Linear {
        variance: f64,
        offset: f64,
    },
}

impl Kernel {
    pub fn eval(&self, s: f64, t: f64) -> f64 {
        match *self {
            Kernel::Rbf { variance, length_scale } => {
                variance * (-(s - t).powi(2) / (2.0 * length_scale.powi(2))).exp()
            }
            Kernel::Periodic {
                variance,
                period,
                length_scale,
            } => {
                let sin = (std::f64::consts::PI * (s - t).abs() / period).sin();
                variance * (-2.0 * sin * sin / length_scale.powi(2)).exp()
            }
            Kernel::Linear { variance, offset } => variance * (s - offset) * (t - offset),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Kernel::Rbf { variance, length_scale } => variance > 0.0 && length_scale > 0.0,
            Kernel::Periodic {
                variance,
                period,
                length_scale,
            } => variance > 0.0 && period > 0.0 && length_scale > 0.0,
            Kernel::Linear { variance, offset } => variance > 0.0 && offset.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid kernel parameters {self:?}")))
        }
    }

    fn sample(rng: &mut impl Rng) -> Self {
        match rng.random_range(0..3) {
            0 => Kernel::Rbf {
                variance: rng.random_range(0.5..2.0),
                length_scale: rng.random_range(0.02..0.3),
            },
            1 => Kernel::Periodic {
                variance: rng.random_range(0.5..2.0),
                period: rng.random_range(0.02..0.5),
                length_scale: rng.random_range(0.5..2.0),
            },
            _ => Kernel::Linear {
                variance: rng.random_range(0.5..2.0),
                offset: rng.random_range(0.0..1.0),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelOp {
    Add,
    Mul,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    /// `a · exp(b · i)`.
    TrendExp { a: f64, b: f64 },
    /// `baseline` plus `Poisson(rate · length)` spikes at uniform positions,
    /// each of random sign and magnitude in `[max_height / 2, max_height]`.
    SparseSpikes { baseline: f64, rate: f64, max_height: f64 },
    /// Sum of unit sinusoids whose frequency set (cycles per step) changes
    /// at each change point; `frequency_sets.len() == change_points.len() + 1`.
    MultiFreqSwitch {
        frequency_sets: Vec<Vec<f64>>,
        change_points: Vec<usize>,
        amplitude: f64,
    },
    /// One draw from a zero-mean GP whose covariance folds `kernels` left to
    /// right with `ops` (`ops.len() == kernels.len() - 1`).
    GpKernelMix { kernels: Vec<Kernel>, ops: Vec<KernelOp> },
    /// Convex combination of the component series. Weights default to a
    /// Dirichlet(1, …, 1) draw.
    Tsmixup {
        components: Vec<GeneratorSpec>,
        weights: Option<Vec<f64>>,
    },
}

impl Generator {
    pub fn tag(&self) -> KindTag {
        match self {
            Generator::TrendExp { .. } => KindTag::TrendExp,
            Generator::SparseSpikes { .. } => KindTag::SparseSpikes,
            Generator::MultiFreqSwitch { .. } => KindTag::MultiFreqSwitch,
            Generator::GpKernelMix { .. } => KindTag::GpKernelMix,
            Generator::Tsmixup { .. } => KindTag::Tsmixup,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    #[serde(flatten)]
    pub generator: Generator,
    pub length: usize,
    /// Standard deviation of additive Gaussian noise.
    pub noise: f64,
    pub seed: u64,
}

impl GeneratorSpec {
    /// Draws random parameters for `kind`. Mixtures take one to three base
    /// components (every kind except `tsmixup`).
    pub fn random(kind: KindTag, length: usize, rng: &mut impl Rng) -> Self {
        let generator = match kind {
            KindTag::TrendExp => {
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                Generator::TrendExp {
                    a: sign * rng.random_range(0.5..2.0),
                    b: rng.random_range(-3.0..3.0) / length.max(1) as f64,
                }
            }
            KindTag::SparseSpikes => Generator::SparseSpikes {
                baseline: rng.random_range(-1.0..1.0),
                rate: rng.random_range(0.005..0.05),
                max_height: rng.random_range(2.0..10.0),
            },
            KindTag::MultiFreqSwitch => {
                let mut freqs = |n: usize| (0..n).map(|_| rng.random_range(0.005..0.2)).collect::<Vec<f64>>();
                let frequency_sets = vec![freqs(2), freqs(5)];
                let cut = if length > 2 {
                    rng.random_range(length / 4..=3 * length / 4).max(1)
                } else {
                    1
                };
                Generator::MultiFreqSwitch {
                    frequency_sets,
                    change_points: vec![cut],
                    amplitude: rng.random_range(0.5..2.0),
                }
            }
            KindTag::GpKernelMix => {
                let n = rng.random_range(1..=3);
                let kernels = (0..n).map(|_| Kernel::sample(rng)).collect();
                let ops = (1..n)
                    .map(|_| {
                        if rng.random_bool(0.5) {
                            KernelOp::Add
                        } else {
                            KernelOp::Mul
                        }
                    })
                    .collect();
                Generator::GpKernelMix { kernels, ops }
            }
            KindTag::Tsmixup => {
                let n = rng.random_range(1..=3);
                let components = (0..n)
                    .map(|_| {
                        let base = [
                            KindTag::TrendExp,
                            KindTag::SparseSpikes,
                            KindTag::MultiFreqSwitch,
                            KindTag::GpKernelMix,
                        ][rng.random_range(0..4)];
                        GeneratorSpec::random(base, length, rng)
                    })
                    .collect();
                Generator::Tsmixup {
                    components,
                    weights: None,
                }
            }
        };
        GeneratorSpec {
            generator,
            length,
            noise: rng.random_range(0.0..0.1),
            seed: rng.random(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.length == 0 {
            return bad("series length must be positive".into());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise level must be non-negative, got {}", self.noise));
        }
        match &self.generator {
            Generator::TrendExp { a, b } => {
                if !(a.is_finite() && b.is_finite()) {
                    return bad("trend parameters must be finite".into());
                }
            }
            Generator::SparseSpikes {
                baseline,
                rate,
                max_height,
            } => {
                if !(baseline.is_finite() && (0.0..=1.0).contains(rate) && *max_height >= 0.0 && max_height.is_finite())
                {
                    return bad("spike rate must lie in [0, 1] and heights be non-negative".into());
                }
            }
            Generator::MultiFreqSwitch {
                frequency_sets,
                change_points,
                amplitude,
            } => {
                if frequency_sets.len() != change_points.len() + 1 {
                    return bad(format!(
                        "{} frequency sets for {} change points",
                        frequency_sets.len(),
                        change_points.len()
                    ));
                }
                if change_points.windows(2).any(|w| w[0] >= w[1])
                    || change_points.iter().any(|&c| c == 0 || c >= self.length)
                {
                    return bad("change points must be increasing and inside the series".into());
                }
                if !amplitude.is_finite() || frequency_sets.iter().flatten().any(|f| !f.is_finite()) {
                    return bad("frequencies and amplitude must be finite".into());
                }
            }
            Generator::GpKernelMix { kernels, ops } => {
                if kernels.is_empty() || ops.len() + 1 != kernels.len() {
                    return bad(format!(
                        "{} kernels need {} operators",
                        kernels.len(),
                        kernels.len().max(1) - 1
                    ));
                }
                if self.length > MAX_GP_LENGTH {
                    return bad(format!("GP draws are limited to {MAX_GP_LENGTH} samples"));
                }
                kernels.iter().try_for_each(Kernel::validate)?;
            }
            Generator::Tsmixup { components, weights } => {
                if components.is_empty() {
                    return bad("a mixture needs at least one component".into());
                }
                if let Some(w) = weights {
                    if w.len() != components.len()
                        || w.iter().any(|v| v.is_nan() || *v < 0.0)
                        || w.iter().sum::<f64>() <= 0.0
                    {
                        return bad("mixture weights must be non-negative, one per component, not all zero".into());
                    }
                }
                for c in components {
                    GeneratorSpec {
                        length: self.length,
                        ..c.clone()
                    }
                    .validate()?;
                }
            }
        }
        Ok(())
    }
}

fn gp_draw(kernels: &[Kernel], ops: &[KernelOp], n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let t: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
    let cov = DMatrix::from_fn(n, n, |i, j| {
        let mut k = kernels[0].eval(t[i], t[j]);
        for (kern, op) in kernels[1..].iter().zip(ops) {
            let v = kern.eval(t[i], t[j]);
            match op {
                KernelOp::Add => k += v,
                KernelOp::Mul => k *= v,
            }
        }
        k
    });
    let scale = (0..n).map(|i| cov[(i, i)].abs()).fold(0.0, f64::max).max(1.0);
    let mut jitter = 1e-8 * scale;
    let chol = loop {
        let mut m = cov.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(m) {
            break c;
        }
        jitter *= 10.0;
        if jitter > scale {
            return Err(Error::Degenerate("GP covariance is not positive definite".into()));
        }
    };
    let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Ok((chol.l() * nalgebra::DVector::from_vec(z)).iter().copied().collect())
}

/// Produces the series described by `spec`; identical specs give
/// identical output.
pub fn generate(spec: &GeneratorSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let n = spec.length;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut x = match &spec.generator {
        Generator::TrendExp { a, b } => (0..n).map(|i| a * (b * i as f64).exp()).collect(),
        Generator::SparseSpikes {
            baseline,
            rate,
            max_height,
        } => {
            let mut x = vec![*baseline; n];
            let count = if *rate > 0.0 {
                Poisson::new(rate * n as f64)
                    .map_err(|e| Error::InvalidArgument(e.to_string()))?
                    .sample(&mut rng) as usize
            } else {
                0
            };
            for _ in 0..count {
                let pos = rng.random_range(0..n);
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                x[pos] += sign * max_height * rng.random_range(0.5..=1.0);
            }
            x
        }
        Generator::MultiFreqSwitch {
            frequency_sets,
            change_points,
            amplitude,
        } => (0..n)
            .map(|i| {
                let seg = change_points.partition_point(|&c| c <= i);
                let freqs = &frequency_sets[seg];
                freqs
                    .iter()
                    .map(|f| (2.0 * std::f64::consts::PI * f * i as f64).sin())
                    .sum::<f64>()
                    * amplitude
            })
            .collect(),
        Generator::GpKernelMix { kernels, ops } => gp_draw(kernels, ops, n, &mut rng)?,
        Generator::Tsmixup { components, weights } => {
            let weights = match weights {
                Some(w) => w.clone(),
                None => (0..components.len()).map(|_| rng.sample::<f64, _>(Exp1)).collect(),
            };
            let total: f64 = weights.iter().sum();
            let mut x = vec![0.0; n];
            for (c, w) in components.iter().zip(&weights) {
                let part = generate(&GeneratorSpec { length: n, ..c.clone() })?;
                for (acc, v) in x.iter_mut().zip(part) {
                    *acc += w / total * v;
                }
            }
            x
        }
    };
    if spec.noise > 0.0 {
        for v in &mut x {
            *v += spec.noise * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(x)
}

/// A training window drawn from one generated series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusWindow {
    pub id: String,
    pub source: KindTag,
    pub context: Vec<f64>,
    pub horizon: Vec<f64>,
}

impl CorpusWindow {
    /// The window as one series (context followed by horizon).
    pub fn to_series(&self, freq: &str) -> TimeSeries {
        let mut values = self.context.clone();
        values.extend_from_slice(&self.horizon);
        TimeSeries::new(self.id.clone(), epoch(), freq, values)
    }
}

/// Generates `n_series` windows of lengths exactly `(c, h)`. Each series is
/// a mixture with probability `p_mix` and a GP draw otherwise. Series `i`
/// uses ChaCha stream `i` under `seed`.
pub fn make_corpus(n_series: usize, p_mix: f64, c: usize, h: usize, seed: u64) -> Result<Vec<CorpusWindow>> {
    if n_series == 0 {
        return Err(Error::InvalidArgument("corpus needs at least one series".into()));
    }
    if !(0.0..=1.0).contains(&p_mix) {
        return Err(Error::InvalidArgument(format!(
            "mixing probability {p_mix} outside [0, 1]"
        )));
    }
    if c == 0 || h == 0 {
        return Err(Error::InvalidArgument(
            "context and horizon lengths must be positive".into(),
        ));
    }
    let length = c + h;
    (0..n_series)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let kind = if rng.random_bool(p_mix) {
                KindTag::Tsmixup
            } else {
                KindTag::GpKernelMix
            };
            let spec = GeneratorSpec::random(kind, length, &mut rng);
            let mut x = generate(&spec)?;
            let horizon = x.split_off(c);
            Ok(CorpusWindow {
                id: format!("synth-{i:06}"),
                source: kind,
                context: x,
                horizon,
            })
        })
        .collect()
}
