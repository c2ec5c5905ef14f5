//! Statistical and determinism checks for the decoding layer.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ucd_core::compose::{ComposeConfig, ComposeMode};
use ucd_core::error::Error;
use ucd_core::logits::{LogitProvider, LogitVector};
use ucd_core::ngram::NGramModel;
use ucd_core::sample::{
    generate, nucleus_pick, nucleus_support, SamplerConfig, SamplingStrategy,
};
use ucd_core::vocab::{Context, TokenId, Vocab, VocabHash};

fn lp(probs: &[f64]) -> LogitVector {
    LogitVector::new(probs.iter().map(|p| p.ln()).collect()).unwrap()
}

/// Empirical nucleus frequencies over 10k seeded draws stay within three
/// binomial standard deviations of the renormalized truncated distribution.
#[test]
fn nucleus_frequencies_match_truncated_distribution() {
    let dist = lp(&[0.4, 0.3, 0.2, 0.1]);
    for (p, seed) in [(0.7, 11u64), (0.9, 12), (1.0, 13)] {
        let (ids, probs) = nucleus_support(&dist, p).unwrap();
        let n = 10_000usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut counts = vec![0usize; 4];
        for _ in 0..n {
            let tok = nucleus_pick(&dist, p, &mut rng).unwrap();
            counts[tok.index()] += 1;
        }
        let mut expected = vec![0.0; 4];
        for (id, q) in ids.iter().zip(&probs) {
            expected[id.index()] = *q;
        }
        for (i, &q) in expected.iter().enumerate() {
            let freq = counts[i] as f64 / n as f64;
            let sigma = (q * (1.0 - q) / n as f64).sqrt();
            assert!(
                (freq - q).abs() <= 3.0 * sigma.max(f64::EPSILON),
                "p={p} token {i}: freq {freq} vs expected {q} (sigma {sigma})"
            );
            if q == 0.0 {
                assert_eq!(counts[i], 0, "token outside the nucleus was drawn");
            }
        }
    }
}

fn tiny_models() -> (Arc<Vocab>, NGramModel, NGramModel, NGramModel) {
    let docs: Vec<Vec<String>> = ["a b a b a", "b a b", "a a b"]
        .iter()
        .map(|t| t.split_whitespace().map(str::to_string).collect())
        .collect();
    let vocab = Vocab::build(&docs).unwrap().into_arc();
    let ctxs: Vec<Context> = docs
        .iter()
        .map(|d| {
            let ids: Vec<TokenId> = d.iter().map(|w| vocab.id(w).unwrap()).collect();
            Context::from_content(&ids).unwrap()
        })
        .collect();
    let reference = NGramModel::train(vocab.clone(), &ctxs, 2, 0.1).unwrap();
    let forget = NGramModel::train(vocab.clone(), &ctxs[..1].to_vec(), 2, 0.1).unwrap();
    let clean = NGramModel::train(vocab.clone(), &ctxs[1..].to_vec(), 2, 0.1).unwrap();
    (vocab, reference, forget, clean)
}

#[test]
fn zero_budget_returns_empty_continuation() {
    let (_, reference, forget, clean) = tiny_models();
    let cfg = ComposeConfig::new(0.5, ComposeMode::Ucd).unwrap();
    let sampler = SamplerConfig::greedy(0);
    let gen = generate(&reference, &forget, &clean, &cfg, &sampler, &Context::bos()).unwrap();
    assert!(gen.continuation.is_empty());
    assert!(gen.logprobs.is_empty());
}

#[test]
fn greedy_generation_is_deterministic() {
    let (_, reference, forget, clean) = tiny_models();
    let cfg = ComposeConfig::new(0.5, ComposeMode::Ucd).unwrap();
    let sampler = SamplerConfig::greedy(8);
    let a = generate(&reference, &forget, &clean, &cfg, &sampler, &Context::bos()).unwrap();
    let b = generate(&reference, &forget, &clean, &cfg, &sampler, &Context::bos()).unwrap();
    assert_eq!(a.continuation, b.continuation);
    assert_eq!(a.logprobs, b.logprobs);
}

#[test]
fn nucleus_generation_respects_seed_contract() {
    let (_, reference, forget, clean) = tiny_models();
    let cfg = ComposeConfig::new(0.5, ComposeMode::Ucd).unwrap();
    let run = |seed: u64| {
        let sampler =
            SamplerConfig::new(SamplingStrategy::Nucleus { p: 0.9 }, seed, 8).unwrap();
        generate(&reference, &forget, &clean, &cfg, &sampler, &Context::bos())
            .unwrap()
            .continuation
    };
    assert_eq!(run(5), run(5));
    // Different seeds may legitimately coincide on tiny vocabularies, so look
    // for at least one differing seed pair instead of asserting inequality.
    let baseline = run(5);
    let some_differs = (6..30u64).any(|s| run(s) != baseline);
    assert!(some_differs, "thirty seeds all produced identical output");
}

#[test]
fn reference_only_mode_reproduces_plain_decoding() {
    let (_, reference, forget, clean) = tiny_models();
    let cfg = ComposeConfig::reference_only();
    let sampler = SamplerConfig::greedy(10);
    let composed =
        generate(&reference, &forget, &clean, &cfg, &sampler, &Context::bos()).unwrap();

    // Plain decoding: the reference consulted directly at every step.
    let mut ctx = Context::bos();
    let mut plain = Vec::new();
    for _ in 0..10 {
        let logits = ucd_core::compose::log_softmax(&reference.logits(&ctx).unwrap());
        let tok = ucd_core::sample::greedy_pick(&logits);
        ctx.push(tok).unwrap();
        plain.push(tok);
        if tok == TokenId::EOS {
            break;
        }
    }
    assert_eq!(composed.continuation, plain);
}

#[test]
fn vocab_mismatch_fails_before_the_first_step() {
    let (_, reference, forget, _) = tiny_models();
    let other_vocab = Vocab::build(&[vec!["z".to_string()]]).unwrap().into_arc();
    let other = NGramModel::train(
        other_vocab.clone(),
        &[Context::from_content(&[other_vocab.id("z").unwrap()]).unwrap()],
        2,
        0.1,
    )
    .unwrap();
    let cfg = ComposeConfig::new(1.0, ComposeMode::Ucd).unwrap();
    let sampler = SamplerConfig::greedy(4);
    let err = generate(&reference, &forget, &other, &cfg, &sampler, &Context::bos()).unwrap_err();
    assert!(matches!(err, Error::VocabMismatch { .. }));
}

/// Provider that fails on the nth query.
struct FailingProvider {
    inner: NGramModel,
    fail_at_len: usize,
}

impl LogitProvider for FailingProvider {
    fn vocab_hash(&self) -> &VocabHash {
        self.inner.vocab_hash()
    }

    fn logits(&self, ctx: &Context) -> ucd_core::Result<LogitVector> {
        if ctx.len() >= self.fail_at_len {
            return Err(Error::Remote("synthetic failure".to_string()));
        }
        self.inner.logits(ctx)
    }
}

#[test]
fn provider_failure_carries_the_step_index() {
    let (_, reference, forget, clean) = tiny_models();
    let failing = FailingProvider {
        inner: clean,
        fail_at_len: 2, // BOS plus one generated token
    };
    let cfg = ComposeConfig::new(1.0, ComposeMode::Ucd).unwrap();
    let sampler = SamplerConfig::greedy(10);
    let err =
        generate(&reference, &forget, &failing, &cfg, &sampler, &Context::bos()).unwrap_err();
    match err {
        Error::ProviderAtStep { step, .. } => assert_eq!(step, 1),
        other => panic!("expected ProviderAtStep, got {other:?}"),
    }
}

#[test]
fn prompt_already_at_eos_generates_nothing() {
    let (_, reference, forget, clean) = tiny_models();
    let mut prompt = Context::bos();
    prompt.push(TokenId::EOS).unwrap();
    let cfg = ComposeConfig::new(1.0, ComposeMode::Ucd).unwrap();
    let sampler = SamplerConfig::greedy(5);
    let gen = generate(&reference, &forget, &clean, &cfg, &sampler, &prompt).unwrap();
    assert!(gen.continuation.is_empty());
}
