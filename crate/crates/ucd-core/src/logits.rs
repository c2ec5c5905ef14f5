//! The logit vector and the provider contract every composable model
//! implements.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::vocab::{Context, TokenId, VocabHash};

/// Length-V vector of finite scores over next tokens, natural-log scale.
/// May be unnormalized; [`crate::compose::log_softmax`] canonicalizes.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector {
    values: Vec<f64>,
}

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<LogitVector> {
        for (index, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteValue { index });
            }
        }
        Ok(LogitVector { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, id: TokenId) -> Option<f64> {
        self.values.get(id.index()).copied()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Probabilities under softmax, computed with max-subtraction.
    pub fn softmax(&self) -> Vec<f64> {
        let max = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = self.values.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / total).collect()
    }
}

/// The contract "context in, logits out". Implementations must be
/// deterministic and read-only once constructed.
pub trait LogitProvider: Send + Sync {
    fn vocab_hash(&self) -> &VocabHash;

    fn logits(&self, ctx: &Context) -> Result<LogitVector>;
}

impl<P: LogitProvider + ?Sized> LogitProvider for &P {
    fn vocab_hash(&self) -> &VocabHash {
        (**self).vocab_hash()
    }

    fn logits(&self, ctx: &Context) -> Result<LogitVector> {
        (**self).logits(ctx)
    }
}

impl<P: LogitProvider + ?Sized> LogitProvider for Arc<P> {
    fn vocab_hash(&self) -> &VocabHash {
        (**self).vocab_hash()
    }

    fn logits(&self, ctx: &Context) -> Result<LogitVector> {
        (**self).logits(ctx)
    }
}

/// Checks that all providers agree on one vocabulary.
pub fn check_same_vocab(providers: &[&dyn LogitProvider]) -> Result<()> {
    if let Some((first, rest)) = providers.split_first() {
        for p in rest {
            if p.vocab_hash() != first.vocab_hash() {
                return Err(Error::VocabMismatch {
                    left: first.vocab_hash().to_string(),
                    right: p.vocab_hash().to_string(),
                });
            }
        }
    }
    Ok(())
}

/// Geometric interpolation of two providers in log space:
/// `log_softmax((1-weight) * log p_a + weight * log p_b)`.
///
/// Useful for standing in an approximate clean model when no exactly
/// retained model exists: any provider slot accepts it like any other.
pub struct BlendedProvider<A, B> {
    a: A,
    b: B,
    weight: f64,
}

impl<A: LogitProvider, B: LogitProvider> BlendedProvider<A, B> {
    pub fn new(a: A, b: B, weight: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&weight) {
            return Err(Error::InvalidParameter {
                reason: format!("blend weight must lie in [0, 1] (got {weight})"),
            });
        }
        if a.vocab_hash() != b.vocab_hash() {
            return Err(Error::VocabMismatch {
                left: a.vocab_hash().to_string(),
                right: b.vocab_hash().to_string(),
            });
        }
        Ok(BlendedProvider { a, b, weight })
    }
}

impl<A: LogitProvider, B: LogitProvider> LogitProvider for BlendedProvider<A, B> {
    fn vocab_hash(&self) -> &VocabHash {
        self.a.vocab_hash()
    }

    fn logits(&self, ctx: &Context) -> Result<LogitVector> {
        let la = crate::compose::log_softmax(&self.a.logits(ctx)?);
        let lb = crate::compose::log_softmax(&self.b.logits(ctx)?);
        if la.len() != lb.len() {
            return Err(Error::LengthMismatch {
                left: la.len(),
                right: lb.len(),
            });
        }
        let mixed: Vec<f64> = la
            .values()
            .iter()
            .zip(lb.values())
            .map(|(x, y)| (1.0 - self.weight) * x + self.weight * y)
            .collect();
        Ok(crate::compose::log_softmax(&LogitVector::new(mixed)?))
    }
}
