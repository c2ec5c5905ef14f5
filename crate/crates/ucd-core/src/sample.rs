//! Decoding: turning composed log-probabilities into tokens.
//!
//! The stochastic path uses a fixed, portable generator (ChaCha8 seeded from
//! a u64); given the same seed and draw sequence the output is identical on
//! every platform.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::compose::{compose, log_softmax, ComposeConfig, ComposeMode};
use crate::error::{Error, Result};
use crate::logits::{check_same_vocab, LogitProvider, LogitVector};
use crate::vocab::{Context, TokenId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "strategy")]
pub enum SamplingStrategy {
    Greedy,
    Nucleus { p: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub strategy: SamplingStrategy,
    pub seed: u64,
    pub max_new_tokens: usize,
}

impl SamplerConfig {
    pub fn new(strategy: SamplingStrategy, seed: u64, max_new_tokens: usize) -> Result<Self> {
        if let SamplingStrategy::Nucleus { p } = strategy {
            validate_top_p(p)?;
        }
        Ok(SamplerConfig {
            strategy,
            seed,
            max_new_tokens,
        })
    }

    pub fn greedy(max_new_tokens: usize) -> Self {
        SamplerConfig {
            strategy: SamplingStrategy::Greedy,
            seed: 0,
            max_new_tokens,
        }
    }
}

fn validate_top_p(p: f64) -> Result<()> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidParameter {
            reason: format!("nucleus threshold must lie in (0, 1] (got {p})"),
        });
    }
    Ok(())
}

/// One decoded continuation plus the composed log-probability of each chosen
/// token.
#[derive(Debug, Clone)]
pub struct Generation {
    pub prompt: Context,
    pub continuation: Vec<TokenId>,
    pub logprobs: Vec<f64>,
}

/// Argmax with ties broken toward the lowest token id.
pub fn greedy_pick(logprobs: &LogitVector) -> TokenId {
    let mut best = 0usize;
    let mut best_val = f64::NEG_INFINITY;
    for (i, &v) in logprobs.values().iter().enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    TokenId(best as u32)
}

/// The nucleus: tokens sorted by probability descending (ties by ascending
/// id), cut at the minimal prefix whose cumulative probability reaches `p`
/// (boundary token included), with probabilities renormalized over the
/// prefix.
pub fn nucleus_support(logprobs: &LogitVector, p: f64) -> Result<(Vec<TokenId>, Vec<f64>)> {
    validate_top_p(p)?;
    let probs: Vec<f64> = logprobs.values().iter().map(|v| v.exp()).collect();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        probs[b]
            .partial_cmp(&probs[a])
            .expect("finite probabilities")
            .then(a.cmp(&b))
    });
    let mut kept = Vec::new();
    let mut cum = 0.0;
    for idx in order {
        kept.push(idx);
        cum += probs[idx];
        if cum >= p {
            break;
        }
    }
    let total: f64 = kept.iter().map(|&i| probs[i]).sum();
    let ids = kept.iter().map(|&i| TokenId(i as u32)).collect();
    let renorm = kept.iter().map(|&i| probs[i] / total).collect();
    Ok((ids, renorm))
}

/// Draws one token from the renormalized nucleus using the supplied
/// generator.
pub fn nucleus_pick(logprobs: &LogitVector, p: f64, rng: &mut ChaCha8Rng) -> Result<TokenId> {
    let (ids, probs) = nucleus_support(logprobs, p)?;
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for (id, prob) in ids.iter().zip(&probs) {
        cum += prob;
        if u < cum {
            return Ok(*id);
        }
    }
    Ok(*ids.last().expect("nucleus support is nonempty"))
}

/// Autoregressive decoding with per-step composition of the three providers.
/// Stops at EOS or after `max_new_tokens`, whichever comes first.
pub fn generate(
    reference: &dyn LogitProvider,
    forget: &dyn LogitProvider,
    clean: &dyn LogitProvider,
    compose_cfg: &ComposeConfig,
    sampler_cfg: &SamplerConfig,
    prompt: &Context,
) -> Result<Generation> {
    check_same_vocab(&[reference, forget, clean])?;
    if let SamplingStrategy::Nucleus { p } = sampler_cfg.strategy {
        validate_top_p(p)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sampler_cfg.seed);
    let mut ctx = prompt.clone();
    let mut continuation = Vec::new();
    let mut logprobs = Vec::new();

    for step in 0..sampler_cfg.max_new_tokens {
        if ctx.ends_with_eos() {
            break;
        }
        let composed = step_logits(reference, forget, clean, compose_cfg, &ctx)
            .map_err(|e| Error::ProviderAtStep {
                step,
                source: Box::new(e),
            })?;
        let token = match sampler_cfg.strategy {
            SamplingStrategy::Greedy => greedy_pick(&composed),
            SamplingStrategy::Nucleus { p } => nucleus_pick(&composed, p, &mut rng)?,
        };
        let lp = composed.get(token).ok_or(Error::TokenOutOfRange {
            id: token.0,
            vocab_size: composed.len(),
        })?;
        ctx.push(token)?;
        continuation.push(token);
        logprobs.push(lp);
        if token == TokenId::EOS {
            break;
        }
    }

    Ok(Generation {
        prompt: prompt.clone(),
        continuation,
        logprobs,
    })
}

fn step_logits(
    reference: &dyn LogitProvider,
    forget: &dyn LogitProvider,
    clean: &dyn LogitProvider,
    cfg: &ComposeConfig,
    ctx: &Context,
) -> Result<LogitVector> {
    let p = reference.logits(ctx)?;
    if cfg.mode == ComposeMode::ReferenceOnly {
        return Ok(log_softmax(&p));
    }
    let f = forget.logits(ctx)?;
    let c = clean.logits(ctx)?;
    compose(&p, &f, &c, cfg)
}
