use proptest::prelude::*;
use wavetoken::codebook::{fit_codebook, TokenId, DEFAULT_BOUNDS, EOS_ID, PAD_ID};
use wavetoken::dwt::BoundaryMode;
use wavetoken::seq_model::{cross_entropy, sample_forecast, train_markov, MarkovModel, SamplingConfig, SequenceModel};
use wavetoken::tokenizer::{ScaleStats, TokenStream, Tokenizer, WaveletConfig};

fn stream(tokens: Vec<TokenId>) -> TokenStream {
    TokenStream {
        segment_lengths: vec![tokens.len()],
        tokens,
        scale: ScaleStats { mu: 0.0, sigma: 1.0 },
        family_name: "haar".into(),
        level: 1,
        boundary_mode: BoundaryMode::Symmetric,
        source_length: 0,
    }
}

fn tokens(vocab: u32, len: impl Into<prop::collection::SizeRange>) -> impl Strategy<Value = Vec<TokenId>> {
    prop::collection::vec(0..vocab, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn distributions_are_probability_vectors(
        train in prop::collection::vec(tokens(12, 1..40), 1..6),
        history in tokens(12, 0..10),
        order in 1usize..4,
        alpha in 1e-3f64..2.0,
    ) {
        let mut m = MarkovModel::new(order, alpha, 12).unwrap();
        for s in &train {
            m.observe(s).unwrap();
        }
        let p = m.next_token_distribution(&history);
        prop_assert_eq!(p.len(), 12);
        prop_assert!(p.iter().all(|&v| v >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        for (t, &v) in p.iter().enumerate() {
            prop_assert_eq!(m.token_probability(&history, t as TokenId), v);
        }
    }

    // With at least as many vocabulary entries as stream positions, every
    // scored target is at least as frequent as uniform under its history,
    // so extra copies can only raise its probability.
    #[test]
    fn more_copies_of_the_stream_never_raise_the_loss(
        ctx in tokens(64, 1..30),
        hor in tokens(64, 1..30),
        order in 1usize..4,
        alpha in 1e-3f64..2.0,
    ) {
        let (c, h) = (stream(ctx), stream(hor));
        let mut last = f64::INFINITY;
        for copies in 1..6 {
            let corpus = vec![(c.clone(), h.clone()); copies];
            let model = train_markov(&corpus, order, alpha, 64).unwrap();
            let loss = cross_entropy(&model, &c, &h).unwrap();
            prop_assert!(loss <= last + 1e-12, "copies={copies}: {loss} > {last}");
            last = loss;
        }
    }
}

fn small_tokenizer() -> Tokenizer {
    let sample: Vec<f64> = (0..501).map(|i| (i as f64 - 250.0) / 50.0).collect();
    Tokenizer::new(
        WaveletConfig::new("bior2.2", 1).unwrap(),
        fit_codebook(&sample, 64, DEFAULT_BOUNDS).unwrap(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn forecasts_have_exactly_h_steps(
        x in prop::collection::vec(-10.0f64..10.0, 40..120),
        h in 1usize..40,
        temperature in prop_oneof![Just(0.0), 0.1f64..2.0],
        seed in any::<u64>(),
        order in 1usize..3,
    ) {
        let tok = small_tokenizer();
        let split = x.len() - h.min(x.len() - 8);
        let (ctx, hor) = x.split_at(split);
        prop_assume!(tok.wavelet.layout(ctx.len()).is_ok() && tok.wavelet.layout(hor.len()).is_ok());
        let pair = tok.tokenize_pair(ctx, hor).unwrap();
        let model = train_markov(std::slice::from_ref(&pair), order, 0.5, tok.codebook.vocab_size()).unwrap();
        let cfg = SamplingConfig { n_samples: 3, temperature, seed };
        let out = sample_forecast(&model, &tok, &pair.0, hor.len(), &cfg).unwrap();
        prop_assert_eq!(out.samples.len(), 3);
        for (s, t) in out.samples.iter().zip(&out.tokens) {
            prop_assert_eq!(s.len(), hor.len());
            prop_assert!(s.iter().all(|v| v.is_finite()));
            prop_assert!(t.iter().all(|&t| t != PAD_ID && t != EOS_ID));
        }
        prop_assert_eq!(out, sample_forecast(&model, &tok, &pair.0, hor.len(), &cfg).unwrap());
    }
}
