//! Autoregressive categorical models over token ids, the next-token loss
//! and constrained forecast sampling.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codebook::{TokenId, PAD_ID};
use crate::error::{Error, Result};
use crate::tokenizer::{TokenStream, Tokenizer};

/// `p(next | history)` over a fixed vocabulary.
pub trait SequenceModel: Sync {
    fn vocab_size(&self) -> usize;

    /// Probability vector of length `vocab_size()`.
    fn next_token_distribution(&self, history: &[TokenId]) -> Vec<f64>;

    fn token_probability(&self, history: &[TokenId], token: TokenId) -> f64 {
        self.next_token_distribution(history)
            .get(token as usize)
            .copied()
            .unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct ContextCounts {
    total: u64,
    next: HashMap<TokenId, u64>,
}

/// Order-k Markov model with additive smoothing.
///
/// Counts are kept for every history length `0..=k`; a query uses the last
/// `min(k, len(history))` tokens, so an empty history yields the smoothed
/// unigram and an unseen history the uniform distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovModel {
    order: usize,
    alpha: f64,
    vocab_size: usize,
    tables: Vec<HashMap<Vec<TokenId>, ContextCounts>>,
}

impl MarkovModel {
    pub fn new(order: usize, alpha: f64, vocab_size: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidArgument("Markov order must be at least 1".into()));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "smoothing must be positive, got {alpha}"
            )));
        }
        if vocab_size == 0 {
            return Err(Error::InvalidArgument("vocabulary must be non-empty".into()));
        }
        Ok(Self {
            order,
            alpha,
            vocab_size,
            tables: vec![HashMap::new(); order + 1],
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Adds every transition of `stream`. PAD targets are skipped; PAD may
    /// still appear in histories.
    pub fn observe(&mut self, stream: &[TokenId]) -> Result<()> {
        if let Some(&bad) = stream.iter().find(|&&t| t as usize >= self.vocab_size) {
            return Err(Error::UnknownToken(bad));
        }
        for (i, &target) in stream.iter().enumerate() {
            if target == PAD_ID {
                continue;
            }
            for len in 0..=self.order.min(i) {
                let entry = self.tables[len].entry(stream[i - len..i].to_vec()).or_default();
                entry.total += 1;
                *entry.next.entry(target).or_insert(0) += 1;
            }
        }
        Ok(())
    }

    fn lookup(&self, history: &[TokenId]) -> Option<&ContextCounts> {
        let len = self.order.min(history.len());
        self.tables[len].get(&history[history.len() - len..])
    }
}

impl SequenceModel for MarkovModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_token_distribution(&self, history: &[TokenId]) -> Vec<f64> {
        let denom = self.alpha * self.vocab_size as f64;
        match self.lookup(history) {
            None => vec![1.0 / self.vocab_size as f64; self.vocab_size],
            Some(counts) => {
                let denom = counts.total as f64 + denom;
                let mut probs = vec![self.alpha / denom; self.vocab_size];
                for (&t, &c) in &counts.next {
                    probs[t as usize] = (c as f64 + self.alpha) / denom;
                }
                probs
            }
        }
    }

    fn token_probability(&self, history: &[TokenId], token: TokenId) -> f64 {
        if token as usize >= self.vocab_size {
            return 0.0;
        }
        let denom = self.alpha * self.vocab_size as f64;
        match self.lookup(history) {
            None => 1.0 / self.vocab_size as f64,
            Some(counts) => {
                let c = counts.next.get(&token).copied().unwrap_or(0);
                (c as f64 + self.alpha) / (counts.total as f64 + denom)
            }
        }
    }
}

/// Trains on the concatenation `context ++ horizon` of every pair.
pub fn train_markov(
    corpus: &[(TokenStream, TokenStream)],
    order: usize,
    alpha: f64,
    vocab_size: usize,
) -> Result<MarkovModel> {
    if corpus.is_empty() {
        return Err(Error::Empty("training corpus"));
    }
    let mut model = MarkovModel::new(order, alpha, vocab_size)?;
    let mut stream = Vec::new();
    for (ctx, hor) in corpus {
        stream.clear();
        stream.extend_from_slice(&ctx.tokens);
        stream.extend_from_slice(&hor.tokens);
        model.observe(&stream)?;
    }
    Ok(model)
}

/// Mean negative log-likelihood of the horizon tokens (EOS included) given
/// the context and all earlier horizon tokens. PAD targets are excluded.
/// A zero-probability target makes the loss infinite.
pub fn cross_entropy(model: &dyn SequenceModel, context: &TokenStream, horizon: &TokenStream) -> Result<f64> {
    let mut history = context.tokens.clone();
    let mut total = 0.0;
    let mut count = 0usize;
    for &target in &horizon.tokens {
        if target != PAD_ID {
            let p = model.token_probability(&history, target);
            total += if p > 0.0 { -p.ln() } else { f64::INFINITY };
            count += 1;
        }
        history.push(target);
    }
    if count == 0 {
        return Err(Error::Empty("horizon has no scored positions"));
    }
    Ok(total / count as f64)
}

/// Sampling controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub n_samples: usize,
    /// 0 means greedy decoding.
    pub temperature: f64,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            n_samples: 20,
            temperature: 1.0,
            seed: 0,
        }
    }
}

/// Sample paths in the original units plus the token ids behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSamples {
    pub samples: Vec<Vec<f64>>,
    pub tokens: Vec<Vec<TokenId>>,
}

fn pick_token(probs: &mut [f64], allowed: &[bool], temperature: f64, rng: &mut ChaCha8Rng) -> TokenId {
    for (p, &ok) in probs.iter_mut().zip(allowed) {
        if !ok {
            *p = 0.0;
        }
    }
    if temperature <= 0.0 {
        let mut best = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = i;
            }
        }
        return best as TokenId;
    }
    if temperature != 1.0 {
        let max_log = probs
            .iter()
            .filter(|p| **p > 0.0)
            .map(|p| p.ln())
            .fold(f64::NEG_INFINITY, f64::max);
        for p in probs.iter_mut() {
            if *p > 0.0 {
                *p = ((p.ln() - max_log) / temperature).exp();
            }
        }
    }
    let total: f64 = probs.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last = i;
            if u < p {
                return i as TokenId;
            }
            u -= p;
        }
    }
    last as TokenId
}

/// Draws `n_samples` horizon paths of exactly `horizon_len` samples.
///
/// Each path generates the full horizon coefficient grid token by token with
/// PAD and EOS removed from the sampling distribution, then inverts it with
/// the context statistics. Sample `i` uses its own ChaCha stream `i` under
/// `seed`, so results do not depend on thread scheduling.
pub fn sample_forecast(
    model: &dyn SequenceModel,
    tokenizer: &Tokenizer,
    context: &TokenStream,
    horizon_len: usize,
    sampling: &SamplingConfig,
) -> Result<ForecastSamples> {
    let cb = &tokenizer.codebook;
    if model.vocab_size() != cb.vocab_size() {
        return Err(Error::InvalidArgument(format!(
            "model vocabulary {} does not match codebook vocabulary {}",
            model.vocab_size(),
            cb.vocab_size()
        )));
    }
    let layout = tokenizer.wavelet.layout(horizon_len)?;
    let n_tokens: usize = layout.iter().sum();
    let allowed: Vec<bool> = (0..cb.vocab_size() as TokenId).map(|t| cb.is_value_token(t)).collect();

    let paths: Vec<(Vec<TokenId>, Vec<f64>)> = (0..sampling.n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
            rng.set_stream(i as u64);
            let mut history = context.tokens.clone();
            let mut generated = Vec::with_capacity(n_tokens);
            for _ in 0..n_tokens {
                let mut probs = model.next_token_distribution(&history);
                let t = pick_token(&mut probs, &allowed, sampling.temperature, &mut rng);
                generated.push(t);
                history.push(t);
            }
            let stream = TokenStream {
                tokens: generated.clone(),
                segment_lengths: layout.clone(),
                scale: context.scale,
                family_name: tokenizer.wavelet.family.name().to_string(),
                level: tokenizer.wavelet.level,
                boundary_mode: tokenizer.wavelet.mode,
                source_length: horizon_len,
            };
            tokenizer.detokenize(&stream).map(|y| (generated, y))
        })
        .collect::<Result<_>>()?;

    let (tokens, samples) = paths.into_iter().unzip();
    Ok(ForecastSamples { samples, tokens })
}

const MODEL_FORMAT: &str = "wavetoken-markov";
const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ContextEntry {
    context: Vec<TokenId>,
    counts: Vec<(TokenId, u64)>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    /// Free-form provenance such as configuration hashes.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    metadata: BTreeMap<String, String>,
    order: usize,
    alpha: f64,
    vocab_size: usize,
    /// `tables[l]` holds the histories of length `l`.
    tables: Vec<Vec<ContextEntry>>,
}

impl MarkovModel {
    /// Versioned JSON checkpoint with entries in sorted order, so equal
    /// models serialize to equal bytes.
    pub fn to_json(&self, metadata: &BTreeMap<String, String>) -> String {
        let tables = self
            .tables
            .iter()
            .map(|table| {
                let mut entries: Vec<ContextEntry> = table
                    .iter()
                    .map(|(ctx, counts)| {
                        let mut next: Vec<(TokenId, u64)> = counts.next.iter().map(|(&t, &c)| (t, c)).collect();
                        next.sort_unstable();
                        ContextEntry {
                            context: ctx.clone(),
                            counts: next,
                        }
                    })
                    .collect();
                entries.sort_by(|a, b| a.context.cmp(&b.context));
                entries
            })
            .collect();
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            metadata: metadata.clone(),
            order: self.order,
            alpha: self.alpha,
            vocab_size: self.vocab_size,
            tables,
        };
        serde_json::to_string(&file).expect("model serialization is infallible")
    }

    /// Parses a checkpoint, returning the model and its metadata.
    pub fn from_json(text: &str) -> Result<(Self, BTreeMap<String, String>)> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        if file.format != MODEL_FORMAT {
            return Err(Error::Schema(format!("not a model file (format '{}')", file.format)));
        }
        if file.version != MODEL_VERSION {
            return Err(Error::Version {
                found: file.version,
                expected: MODEL_VERSION,
            });
        }
        let mut model = MarkovModel::new(file.order, file.alpha, file.vocab_size)?;
        if file.tables.len() != file.order + 1 {
            return Err(Error::Schema(format!(
                "{} count tables for order {}",
                file.tables.len(),
                file.order
            )));
        }
        for (len, entries) in file.tables.into_iter().enumerate() {
            for entry in entries {
                if entry.context.len() != len {
                    return Err(Error::Schema(format!(
                        "history of length {} in table {len}",
                        entry.context.len()
                    )));
                }
                let mut counts = ContextCounts::default();
                for (t, c) in entry.counts {
                    if t as usize >= model.vocab_size {
                        return Err(Error::UnknownToken(t));
                    }
                    counts.total += c;
                    counts.next.insert(t, c);
                }
                model.tables[len].insert(entry.context, counts);
            }
        }
        Ok((model, file.metadata))
    }

    pub fn save(&self, path: &Path, metadata: &BTreeMap<String, String>) -> Result<()> {
        std::fs::write(path, self.to_json(metadata))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, BTreeMap<String, String>)> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
