//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//!
//! Tests hold a shared lock so the timing criteria are not disturbed by the
//! others running in parallel. Result lines go straight to stdout and stay
//! visible even when the harness captures test output.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use wavetoken::codebook::{fit_codebook, Codebook, DEFAULT_BOUNDS, DEFAULT_VOCAB};
use wavetoken::data_io::training_pairs;
use wavetoken::dwt::{decompose, level_lengths, reconstruct, BoundaryMode};
use wavetoken::metrics::{aggregate_relative, mase, vrse, wql, QUANTILE_LEVELS};
use wavetoken::seq_model::{sample_forecast, train_markov, SamplingConfig};
use wavetoken::series::{epoch, TimeSeries};
use wavetoken::synth::make_corpus;
use wavetoken::thresholding::{
    apply_threshold, fdrc_select, visu_lambda, SigmaEstimator, ThresholdMethod, ThresholdSpec,
};
use wavetoken::tokenizer::{compute_scale, Tokenizer, WaveletConfig};
use wavetoken::wavelet_bank::{get_family, FAMILY_NAMES};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(id: u32, name: &str, pass: bool, detail: String) {
    let line = format!(
        "{} criterion {id:>2} {name}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
    assert!(pass, "{line}");
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn rmse(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

fn noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Fits a codebook on the pooled scaled coefficients of `windows`.
fn pooled_codebook(wavelet: &WaveletConfig, windows: &[Vec<f64>], vocab: usize) -> Codebook {
    let mut pooled = Vec::new();
    for w in windows {
        let scale = compute_scale(w).unwrap();
        pooled.extend(wavelet.coefficients(w, &scale).unwrap().observed());
    }
    fit_codebook(&pooled, vocab, DEFAULT_BOUNDS).unwrap()
}

#[test]
fn c01_perfect_reconstruction() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    let (mut signals, mut cases, mut worst) = (0, 0, 0.0f64);
    while signals < 1200 {
        let name = FAMILY_NAMES[rng.random_range(0..FAMILY_NAMES.len())];
        let f = get_family(name).unwrap();
        let mode = if rng.random_bool(0.5) {
            BoundaryMode::Symmetric
        } else {
            BoundaryMode::Periodic
        };
        let n = rng.random_range(2..=1024);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let valid: Vec<usize> = (1..=5).filter(|&j| level_lengths(n, &f, j, mode).is_ok()).collect();
        if valid.is_empty() {
            continue;
        }
        signals += 1;
        for j in valid {
            let p = decompose(&x, &f, j, mode).unwrap();
            worst = worst.max(max_abs_diff(&reconstruct(&p, &f).unwrap(), &x));
            cases += 1;
        }
    }
    let elapsed = start.elapsed();
    report(
        1,
        "perfect reconstruction",
        worst <= 1e-9 && elapsed < Duration::from_secs(10),
        format!("{signals} signals / {cases} (family, level) cases, max error {worst:.2e} (<= 1e-9), {elapsed:.2?} (< 10 s)"),
    );
}

#[test]
fn c02_parseval_for_orthogonal_families() {
    let _g = serial();
    // Energy is preserved by the orthonormal transform: periodic extension
    // on lengths that stay even at every level.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut signals, mut worst) = (0, 0.0f64);
    while signals < 1200 {
        let name = ["haar", "db2", "db4"][rng.random_range(0..3)];
        let f = get_family(name).unwrap();
        let j = rng.random_range(1..=5usize);
        let n = rng.random_range(1..=(1024 >> j)) << j;
        if level_lengths(n, &f, j, BoundaryMode::Periodic).is_err() {
            continue;
        }
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let energy: f64 = x.iter().map(|v| v * v).sum();
        let p = decompose(&x, &f, j, BoundaryMode::Periodic).unwrap();
        worst = worst.max((p.energy() - energy).abs() / energy);
        signals += 1;
    }
    report(
        2,
        "Parseval (orthogonal families)",
        worst <= 1e-10,
        format!("{signals} signals, max relative energy mismatch {worst:.2e} (<= 1e-10)"),
    );
}

#[test]
fn c03_linear_time_decomposition() {
    let _g = serial();
    let f = get_family("bior2.2").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // Each measurement covers 2^21 samples in total so that short inputs
    // are timed over many calls. Sizes are measured round-robin and the
    // fastest round is kept, so a burst of machine load cannot land on a
    // single size.
    let time_once = |x: &[f64]| -> f64 {
        let calls = ((1usize << 21) / x.len()).max(1);
        let t = Instant::now();
        for _ in 0..calls {
            std::hint::black_box(decompose(std::hint::black_box(x), &f, 1, BoundaryMode::Symmetric).unwrap());
        }
        t.elapsed().as_secs_f64() / calls as f64
    };
    let inputs: Vec<Vec<f64>> = (12..=20).map(|k| noise(&mut rng, 1 << k)).collect();
    let mut times = vec![f64::INFINITY; inputs.len()];
    for _ in 0..9 {
        for (t, x) in times.iter_mut().zip(&inputs) {
            *t = t.min(time_once(x));
        }
    }
    let ratios: Vec<f64> = times.windows(2).map(|w| w[1] / w[0]).collect();
    let worst = ratios.iter().copied().fold(0.0, f64::max);
    let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.2}")).collect();
    report(
        3,
        "linear-time decomposition",
        worst <= 3.0,
        format!(
            "time ratios for 2^12..2^20: [{}], max {worst:.2} (<= 3)",
            shown.join(", ")
        ),
    );
}

#[test]
fn c04_coefficient_layouts() {
    let _g = serial();
    // Symmetric extension yields floor((n + L - 1) / 2) coefficients per
    // level; bior2.2 has six taps.
    let oracle = |n: usize| (n + 6 - 1) / 2;
    let (ctx_len, hor_len) = (oracle(512), oracle(64));
    let wavelet = WaveletConfig::new("bior2.2", 1).unwrap();
    let ctx_layout = wavelet.layout(512).unwrap();
    let hor_layout = wavelet.layout(64).unwrap();

    let x: Vec<f64> = (0..576).map(|t| (t as f64 / 9.0).sin()).collect();
    let cb = pooled_codebook(&wavelet, &[x[..512].to_vec()], DEFAULT_VOCAB);
    let (ctx, hor) = Tokenizer::new(wavelet, cb).tokenize_pair(&x[..512], &x[512..]).unwrap();

    let pass = ctx_layout == [ctx_len, ctx_len]
        && hor_layout == [hor_len, hor_len]
        && hor_layout == [34, 34]
        && ctx_layout.iter().sum::<usize>() == 516
        && ctx.tokens.len() == 516
        && ctx.segment_lengths == ctx_layout
        && hor.tokens.len() == 68 + 1;
    report(
        4,
        "coefficient layout",
        pass,
        format!(
            "context {ctx_layout:?} (total {}), horizon {hor_layout:?}, streams of {} and {} tokens (horizon incl. EOS)",
            ctx_layout.iter().sum::<usize>(),
            ctx.tokens.len(),
            hor.tokens.len()
        ),
    );
}

#[test]
fn c05_quantization_round_trip() {
    let _g = serial();
    // Largest absolute row sum of the one-level bior2.2 synthesis matrix
    // (symmetric mode), computed offline from the reference toolbox; it is
    // 3/sqrt(2) for every length. Since max|e| <= kappa * max|q|, the RMSE
    // is bounded by kappa * (h/2) * sigma.
    const KAPPA_BIOR22: f64 = 2.121_320_343_559_643;
    let corpus = make_corpus(200, 0.9, 512, 64, 5).unwrap();
    let windows: Vec<Vec<f64>> = corpus.iter().map(|w| w.context.clone()).collect();
    let mut details = Vec::new();
    let mut pass = true;
    for (name, kappa) in [("haar", 1.0), ("bior2.2", KAPPA_BIOR22)] {
        let wavelet = WaveletConfig::new(name, 1).unwrap();
        let tok = Tokenizer::new(wavelet.clone(), pooled_codebook(&wavelet, &windows, DEFAULT_VOCAB));
        let h = tok.codebook.bin_width();
        let (mut checked, mut worst) = (0, 0.0f64);
        for x in &windows {
            let ts = tok.tokenize(x).unwrap();
            let coeffs = wavelet.coefficients(x, &ts.scale).unwrap();
            if !coeffs.observed().all(|w| tok.codebook.in_range(w)) {
                continue;
            }
            let back = tok.detokenize(&ts).unwrap();
            worst = worst.max(rmse(&back, x) / (kappa * h / 2.0 * ts.scale.sigma));
            checked += 1;
        }
        pass &= checked >= 150 && worst <= 1.0;
        details.push(format!(
            "{name}: {checked} in-range signals, max RMSE / bound = {worst:.3}"
        ));
    }
    report(
        5,
        "quantization round trip",
        pass,
        format!("{} (kappa = {KAPPA_BIOR22:.4} for bior2.2)", details.join("; ")),
    );
}

#[test]
fn c06_visushrink() {
    let _g = serial();
    let oracle = (2.0 * 1024f64.ln()).sqrt();
    // A finest level whose MAD estimate is exactly sigma = 1.
    let lambda = visu_lambda(&[0.6745; 9], 1024, SigmaEstimator::MadFinest).unwrap();
    let lambda_ok = (lambda - 3.7233).abs() <= 1e-4 && (lambda - oracle).abs() <= 1e-12;

    let f = get_family("haar").unwrap();
    let spec = ThresholdSpec::new(ThresholdMethod::VisuHard);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut zeroed = 0.0;
    for _ in 0..1000 {
        let p = decompose(&noise(&mut rng, 1024), &f, 1, BoundaryMode::Periodic).unwrap();
        let t = apply_threshold(&p, &spec).unwrap();
        let d1 = &t.details[0];
        zeroed += d1.iter().filter(|&&v| v == 0.0).count() as f64 / d1.len() as f64;
    }
    let zeroed = zeroed / 1000.0;
    report(
        6,
        "VisuShrink",
        lambda_ok && zeroed >= 0.99,
        format!(
            "lambda(1, 1024) = {lambda:.6} (3.7233 +- 1e-4), level-1 details zeroed on noise: {:.3}% (>= 99%)",
            100.0 * zeroed
        ),
    );
}

/// `z` with `Phi(z) = 1 - p / 2`, by bisection on the forward error function.
fn two_sided_z(p: f64) -> f64 {
    let tail = |z: f64| 1.0 - statrs::function::erf::erf(z / std::f64::consts::SQRT_2);
    let (mut lo, mut hi) = (0.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if tail(mid) > p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn c07_fdrc() {
    let _g = serial();
    let pvalues = [0.001, 0.2, 0.5, 0.9];
    // Only 0.001 <= 1 * 0.05 / 4; 0.2 > 2 * 0.05 / 4 and beyond.
    let mut example_ok = true;
    let mut lambdas = Vec::new();
    for sigma in [1.0, 2.5] {
        let sel = fdrc_select(&pvalues, 0.05, sigma).expect("a rejection");
        let z = two_sided_z(0.001);
        example_ok &=
            sel.i0 == 1 && (sel.lambda - sigma * 3.2905).abs() <= 1e-3 && (sel.lambda - sigma * z).abs() <= 1e-9;
        lambdas.push(format!("lambda(sigma={sigma}) = {:.5}", sel.lambda));
    }

    let q = 0.05;
    let f = get_family("haar").unwrap();
    let spec = ThresholdSpec::new(ThresholdMethod::Fdrc {
        q,
        pooling: Default::default(),
    });
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut kept = 0.0;
    for _ in 0..100 {
        let p = decompose(&noise(&mut rng, 1024), &f, 3, BoundaryMode::Periodic).unwrap();
        let t = apply_threshold(&p, &spec).unwrap();
        let all: Vec<f64> = t.details.iter().flatten().copied().collect();
        kept += all.iter().filter(|&&v| v != 0.0).count() as f64 / all.len() as f64;
    }
    let kept = kept / 100.0;
    report(
        7,
        "FDRC",
        example_ok && kept <= 2.0 * q,
        format!(
            "i0 = 1, {} (sigma * 3.2905 +- 1e-3); retained under the null {:.4} (<= {})",
            lambdas.join(", "),
            kept,
            2.0 * q
        ),
    );
}

#[test]
fn c08_metric_identities() {
    let _g = serial();
    let mut checks: Vec<(String, bool)> = Vec::new();
    let truth = [1.0, 2.0, 3.0, 4.0];
    let context = [1.0, 3.0, 1.0, 3.0, 1.0];

    let perfect = vec![truth.to_vec(); QUANTILE_LEVELS.len()];
    let zeros = [
        wql(&truth, &perfect).unwrap(),
        mase(&truth, &truth, &context, 1).unwrap(),
        vrse(&truth, &truth).unwrap(),
    ];
    checks.push((format!("perfect: {zeros:?}"), zeros == [0.0; 3]));

    // Every quantile half a unit off: each level loses 0.5·α or 0.5·(1−α)
    // per step, whose mean over symmetric levels is 0.25; 2·4·0.25 / 10.
    let off: Vec<Vec<f64>> = QUANTILE_LEVELS
        .iter()
        .enumerate()
        .map(|(i, _)| {
            truth
                .iter()
                .map(|y| if i % 2 == 0 { y + 0.5 } else { y - 0.5 })
                .collect()
        })
        .collect();
    let oracle: f64 = QUANTILE_LEVELS
        .iter()
        .zip(&off)
        .map(|(&a, q)| {
            2.0 * truth
                .iter()
                .zip(q)
                .map(|(&y, &f)| if y >= f { a * (y - f) } else { (1.0 - a) * (f - y) })
                .sum::<f64>()
        })
        .sum::<f64>()
        / QUANTILE_LEVELS.len() as f64
        / truth.iter().sum::<f64>();
    let got = wql(&truth, &off).unwrap();
    checks.push((
        format!("WQL = {got}"),
        (got - 0.2).abs() <= 1e-12 && (got - oracle).abs() <= 1e-12,
    ));

    // Seasonal errors of the context are all 2; forecast errors are all 1.
    let got = mase(&[2.0, 2.0], &[3.0, 1.0], &context, 1).unwrap();
    checks.push((format!("MASE = {got}"), (got - 0.5).abs() <= 1e-12));

    let double: Vec<f64> = truth.iter().map(|v| 2.0 * v).collect();
    let got = vrse(&truth, &double).unwrap();
    checks.push((format!("VRSE(2x) = {got}"), (got - 1.0).abs() <= 1e-12));

    let got = aggregate_relative(&[0.25, 4.0], &[1.0, 1.0]).unwrap().value;
    checks.push((format!("gmean[0.25, 4] = {got}"), (got - 1.0).abs() <= 1e-12));

    report(
        8,
        "metric identities",
        checks.iter().all(|c| c.1),
        checks.iter().map(|c| c.0.clone()).collect::<Vec<_>>().join(", "),
    );
}

#[test]
fn c09_vrse_prefers_a_shifted_forecast() {
    let _g = serial();
    let truth: Vec<f64> = (0..64).map(|t| (2.0 * PI * t as f64 / 16.0).sin()).collect();
    let mut shifted = truth.clone();
    shifted.rotate_right(4);
    let mae = |f: &[f64]| truth.iter().zip(f).map(|(a, b)| (a - b).abs()).sum::<f64>() / truth.len() as f64;

    let (best_c, best_vrse) = (-200..=200)
        .map(|i| i as f64 / 100.0)
        .map(|c| (c, vrse(&truth, &vec![c; truth.len()]).unwrap()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let constant = vec![best_c; truth.len()];
    let shift_vrse = vrse(&truth, &shifted).unwrap();
    let (shift_mae, const_mae) = (mae(&shifted), mae(&constant));
    report(
        9,
        "VRSE shift pitfall",
        shift_vrse < best_vrse && shift_mae > const_mae,
        format!(
            "quarter-period shift: VRSE {shift_vrse:.2e} < {best_vrse:.3} and MAE {shift_mae:.3} > {const_mae:.3} (best constant c = {best_c})"
        ),
    );
}

#[test]
fn c10_periodic_signal_is_learned() {
    let _g = serial();
    let start = Instant::now();
    let (c, h, order) = (64, 16, 4);
    // Haar J=1 turns [2, 0, 1, 0, -1, 0, -2, 0] into approximation and
    // detail segments that both cycle through four values, so the whole
    // token stream has period 4.
    let period = [2.0, 0.0, 1.0, 0.0, -1.0, 0.0, -2.0, 0.0];
    let x: Vec<f64> = (0..4 * c + h).map(|t| period[t % 8]).collect();
    let (history, future) = x.split_at(x.len() - h);

    let wavelet = WaveletConfig::new("haar", 1).unwrap();
    let train = vec![TimeSeries::new("p", epoch(), "H", history.to_vec())];
    let pairs = training_pairs(&train, c, h, 8).unwrap();
    let mut pooled = Vec::new();
    for (ctx, hor) in &pairs {
        let scale = compute_scale(ctx).unwrap();
        pooled.extend(wavelet.coefficients(ctx, &scale).unwrap().observed());
        pooled.extend(wavelet.coefficients(hor, &scale).unwrap().observed());
    }
    let tok = Tokenizer::new(wavelet, fit_codebook(&pooled, 256, DEFAULT_BOUNDS).unwrap());
    let corpus: Vec<_> = pairs.iter().map(|(a, b)| tok.tokenize_pair(a, b).unwrap()).collect();
    let model = train_markov(&corpus, order, 0.1, tok.codebook.vocab_size()).unwrap();

    let context = &history[history.len() - c..];
    let (ctx, truth) = tok.tokenize_pair(context, future).unwrap();
    let greedy = SamplingConfig {
        n_samples: 1,
        temperature: 0.0,
        seed: 0,
    };
    let out = sample_forecast(&model, &tok, &ctx, h, &greedy).unwrap();
    let exact = out.tokens[0] == truth.coefficient_tokens();
    let err = rmse(&out.samples[0], future);
    let bound = tok.codebook.bin_width() / 2.0 * ctx.scale.sigma;
    let elapsed = start.elapsed();
    report(
        10,
        "end-to-end learnability",
        exact && err <= bound && elapsed < Duration::from_secs(5),
        format!(
            "order {order}, {} training windows: horizon tokens reproduced = {exact}, RMSE {err:.4} <= {bound:.4}, {elapsed:.2?} (< 5 s)",
            corpus.len()
        ),
    );
}

#[test]
fn c11_token_streams_ignore_level_and_scale() {
    let _g = serial();
    let corpus = make_corpus(100, 0.9, 256, 1, 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut mismatches = Vec::new();
    for name in ["bior2.2", "haar"] {
        let wavelet = WaveletConfig::new(name, 1).unwrap();
        let windows: Vec<Vec<f64>> = corpus.iter().map(|w| w.context.clone()).collect();
        let tok = Tokenizer::new(wavelet.clone(), pooled_codebook(&wavelet, &windows, DEFAULT_VOCAB));
        for (i, x) in windows.iter().enumerate() {
            let c: f64 = rng.random_range(-1e3..1e3);
            let alpha: f64 = 10f64.powf(rng.random_range(-2.0..2.0));
            let base = tok.tokenize(x).unwrap().tokens;
            let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
            let scaled: Vec<f64> = x.iter().map(|v| alpha * v).collect();
            if tok.tokenize(&shifted).unwrap().tokens != base || tok.tokenize(&scaled).unwrap().tokens != base {
                mismatches.push(format!("{name}#{i}"));
            }
        }
    }
    report(
        11,
        "shift and scale invariance",
        mismatches.is_empty(),
        format!(
            "100 signals x 2 families, x+c and alpha*x: {} mismatching streams {mismatches:?}",
            mismatches.len()
        ),
    );
}

/// Corpus, codebook, model and forecasts of one seeded run, serialized.
fn seeded_run(seed: u64) -> [Vec<u8>; 4] {
    let corpus = make_corpus(48, 0.9, 128, 32, seed).unwrap();
    let wavelet = WaveletConfig::new("bior2.2", 1).unwrap();
    let mut pooled = Vec::new();
    for w in &corpus {
        let scale = compute_scale(&w.context).unwrap();
        pooled.extend(wavelet.coefficients(&w.context, &scale).unwrap().observed());
        pooled.extend(wavelet.coefficients(&w.horizon, &scale).unwrap().observed());
    }
    let tok = Tokenizer::new(wavelet, fit_codebook(&pooled, 256, DEFAULT_BOUNDS).unwrap());
    let pairs: Vec<_> = corpus
        .iter()
        .map(|w| tok.tokenize_pair(&w.context, &w.horizon).unwrap())
        .collect();
    let model = train_markov(&pairs, 2, 0.1, tok.codebook.vocab_size()).unwrap();
    let sampling = SamplingConfig {
        n_samples: 5,
        temperature: 1.0,
        seed,
    };
    let forecasts: Vec<Vec<Vec<f64>>> = pairs[..8]
        .iter()
        .map(|(ctx, _)| sample_forecast(&model, &tok, ctx, 32, &sampling).unwrap().samples)
        .collect();
    [
        serde_json::to_vec(&corpus).unwrap(),
        tok.codebook.to_json().into_bytes(),
        model.to_json(&BTreeMap::new()).into_bytes(),
        serde_json::to_vec(&forecasts).unwrap(),
    ]
}

#[test]
fn c12_determinism() {
    let _g = serial();
    let first = seeded_run(12);
    // A single worker thread must not change anything either.
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let second = pool.install(|| seeded_run(12));
    let other = seeded_run(13);
    let names = ["corpus", "codebook", "model", "forecasts"];
    let same: Vec<String> = names
        .iter()
        .zip(first.iter().zip(&second))
        .map(|(n, (a, b))| format!("{n} {} bytes {}", a.len(), if a == b { "identical" } else { "DIFFER" }))
        .collect();
    report(
        12,
        "determinism",
        first == second && first[0] != other[0] && first[3] != other[3],
        format!(
            "{}; another seed changes the output: {}",
            same.join(", "),
            first[3] != other[3]
        ),
    );
}
