//! Logit composition: adjusting a reference model's next-token scores with
//! the gap between two auxiliary models.
//!
//! All composition happens over normalized log-probabilities. Normalizing
//! first makes the clipped variant well-defined: clipping is not invariant
//! under constant shifts of raw scores, so two providers emitting the same
//! distribution at different offsets must compose identically.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logits::{LogitProvider, LogitVector};
use crate::vocab::{Context, VocabHash};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComposeMode {
    /// Subtract `alpha * delta`: suppresses tokens the forget-tuned auxiliary
    /// prefers and boosts tokens the clean auxiliary prefers.
    Ucd,
    /// Subtract `alpha * max(delta, 0)`: only ever suppresses, never boosts.
    Ucs,
    /// Pass the reference model through untouched (baseline).
    ReferenceOnly,
}

impl std::fmt::Display for ComposeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ComposeMode::Ucd => f.write_str("ucd"),
            ComposeMode::Ucs => f.write_str("ucs"),
            ComposeMode::ReferenceOnly => f.write_str("reference-only"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComposeConfig {
    pub alpha: f64,
    pub mode: ComposeMode,
}

impl ComposeConfig {
    pub fn new(alpha: f64, mode: ComposeMode) -> Result<ComposeConfig> {
        if !alpha.is_finite() || alpha < 0.0 {
            return Err(Error::InvalidParameter {
                reason: format!("alpha must be finite and nonnegative (got {alpha})"),
            });
        }
        Ok(ComposeConfig { alpha, mode })
    }

    pub fn reference_only() -> ComposeConfig {
        ComposeConfig {
            alpha: 0.0,
            mode: ComposeMode::ReferenceOnly,
        }
    }
}

/// Per-token log-probability gap between the forget-tuned and clean
/// auxiliaries. Positive entries mark tokens to suppress.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveSignal {
    delta: Vec<f64>,
}

impl ContrastiveSignal {
    pub fn values(&self) -> &[f64] {
        &self.delta
    }

    pub fn len(&self) -> usize {
        self.delta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta.is_empty()
    }

    /// Largest minus smallest entry.
    pub fn span(&self) -> f64 {
        let max = self.delta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = self.delta.iter().copied().fold(f64::INFINITY, f64::min);
        max - min
    }

    /// Population variance of the entries.
    pub fn variance(&self) -> f64 {
        let n = self.delta.len() as f64;
        let mean = self.delta.iter().sum::<f64>() / n;
        self.delta.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n
    }
}

/// `v - logsumexp(v)`, computed with max-subtraction so huge inputs cannot
/// overflow. The output exp-sums to 1.
pub fn log_softmax(v: &LogitVector) -> LogitVector {
    let values = v.values();
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = values.iter().map(|x| (x - max).exp()).sum();
    let lse = max + sum.ln();
    let out: Vec<f64> = values.iter().map(|x| x - lse).collect();
    LogitVector::new(out).expect("log_softmax of finite input is finite")
}

/// The gap `log_softmax(f) - log_softmax(c)`, elementwise.
pub fn contrastive_signal(f: &LogitVector, c: &LogitVector) -> Result<ContrastiveSignal> {
    if f.len() != c.len() {
        return Err(Error::LengthMismatch {
            left: f.len(),
            right: c.len(),
        });
    }
    let fn_ = log_softmax(f);
    let cn = log_softmax(c);
    let delta: Vec<f64> = fn_
        .values()
        .iter()
        .zip(cn.values())
        .map(|(a, b)| a - b)
        .collect();
    Ok(ContrastiveSignal { delta })
}

/// Composed logits before the final renormalization. Exposed so callers can
/// check elementwise relations (e.g. that the clipped mode never raises a
/// logit above the reference).
pub fn compose_raw(
    p: &LogitVector,
    f: &LogitVector,
    c: &LogitVector,
    cfg: &ComposeConfig,
) -> Result<LogitVector> {
    if p.len() != f.len() {
        return Err(Error::LengthMismatch {
            left: p.len(),
            right: f.len(),
        });
    }
    let pn = log_softmax(p);
    if cfg.mode == ComposeMode::ReferenceOnly {
        return Ok(pn);
    }
    let signal = contrastive_signal(f, c)?;
    if p.len() != signal.len() {
        return Err(Error::LengthMismatch {
            left: p.len(),
            right: signal.len(),
        });
    }
    let out: Vec<f64> = pn
        .values()
        .iter()
        .zip(signal.values())
        .map(|(&lp, &d)| match cfg.mode {
            ComposeMode::Ucd => lp - cfg.alpha * d,
            ComposeMode::Ucs => lp - cfg.alpha * d.max(0.0),
            ComposeMode::ReferenceOnly => unreachable!(),
        })
        .collect();
    LogitVector::new(out)
}

/// Adjusted next-token log-probabilities: reference minus `alpha` times the
/// (optionally clipped) contrastive signal, renormalized.
pub fn compose(
    p: &LogitVector,
    f: &LogitVector,
    c: &LogitVector,
    cfg: &ComposeConfig,
) -> Result<LogitVector> {
    Ok(log_softmax(&compose_raw(p, f, c, cfg)?))
}

/// A provider view over three providers and a composition config. No model is
/// materialized; each query composes the three underlying logit vectors.
pub struct ComposedProvider<R, F, C> {
    reference: R,
    forget: F,
    clean: C,
    cfg: ComposeConfig,
}

impl<R, F, C> ComposedProvider<R, F, C>
where
    R: LogitProvider,
    F: LogitProvider,
    C: LogitProvider,
{
    pub fn new(reference: R, forget: F, clean: C, cfg: ComposeConfig) -> Result<Self> {
        crate::logits::check_same_vocab(&[&reference, &forget, &clean])?;
        Ok(ComposedProvider {
            reference,
            forget,
            clean,
            cfg,
        })
    }

    pub fn config(&self) -> &ComposeConfig {
        &self.cfg
    }
}

impl<R, F, C> LogitProvider for ComposedProvider<R, F, C>
where
    R: LogitProvider,
    F: LogitProvider,
    C: LogitProvider,
{
    fn vocab_hash(&self) -> &VocabHash {
        self.reference.vocab_hash()
    }

    fn logits(&self, ctx: &Context) -> Result<LogitVector> {
        let p = self.reference.logits(ctx)?;
        if self.cfg.mode == ComposeMode::ReferenceOnly {
            return Ok(log_softmax(&p));
        }
        let f = self.forget.logits(ctx)?;
        let c = self.clean.logits(ctx)?;
        compose(&p, &f, &c, &self.cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn lv(values: &[f64]) -> LogitVector {
        LogitVector::new(values.to_vec()).unwrap()
    }

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn log_softmax_symmetric_input() {
        let out = log_softmax(&lv(&[0.0, 0.0]));
        assert_abs_diff_eq!(out.values()[0], 0.5f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(out.values()[1], 0.5f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn log_softmax_survives_huge_values() {
        let out = log_softmax(&lv(&[1000.0, 1000.0]));
        assert_abs_diff_eq!(out.values()[0], 0.5f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn log_softmax_output_exp_sums_to_one() {
        let out = log_softmax(&lv(&[2.0, 0.0]));
        let total: f64 = out.values().iter().map(|v| v.exp()).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn signal_zero_when_inputs_equal() {
        let f = lv(&[0.3, -1.0, 2.0]);
        let s = contrastive_signal(&f, &f).unwrap();
        assert!(s.values().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn signal_direct_subtraction() {
        // Hand arithmetic: ln .8 - ln .5 = ln 1.6 and ln .2 - ln .5 = ln 0.4.
        let f = lv(&[0.8f64.ln(), 0.2f64.ln()]);
        let c = lv(&[0.5f64.ln(), 0.5f64.ln()]);
        let s = contrastive_signal(&f, &c).unwrap();
        assert_abs_diff_eq!(s.values()[0], 1.6f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(s.values()[1], 0.4f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn signal_ignores_constant_offsets() {
        let f = lv(&[0.1, 0.9, -0.4]);
        let c = lv(&[1.0, 0.0, 0.0]);
        let f_shift = lv(&[0.1 + 7.0, 0.9 + 7.0, -0.4 + 7.0]);
        let a = contrastive_signal(&f, &c).unwrap();
        let b = contrastive_signal(&f_shift, &c).unwrap();
        assert!(max_abs_diff(a.values(), b.values()) < 1e-12);
    }

    #[test]
    fn signal_rejects_length_mismatch() {
        let err = contrastive_signal(&lv(&[0.0, 0.0]), &lv(&[0.0])).unwrap_err();
        assert!(matches!(err, Error::LengthMismatch { .. }));
    }

    #[test]
    fn compose_with_equal_auxiliaries_returns_reference() {
        let p = lv(&[1.0, -2.0, 0.5]);
        let f = lv(&[9.0, 3.0, -1.0]);
        let cfg = ComposeConfig::new(3.7, ComposeMode::Ucd).unwrap();
        let out = compose(&p, &f, &f, &cfg).unwrap();
        let expected = log_softmax(&p);
        assert!(max_abs_diff(out.values(), expected.values()) < 1e-12);
    }

    #[test]
    fn compose_recovers_clean_model_when_auxiliaries_match_scale() {
        // With alpha = 1, f = reference and c = clean, the update cancels the
        // reference entirely and leaves the clean distribution.
        let p = lv(&[0.5f64.ln(), 0.3f64.ln(), 0.2f64.ln()]);
        let clean = lv(&[0.1f64.ln(), 0.6f64.ln(), 0.3f64.ln()]);
        let cfg = ComposeConfig::new(1.0, ComposeMode::Ucd).unwrap();
        let out = compose(&p, &p, &clean, &cfg).unwrap();
        let expected = log_softmax(&clean);
        assert!(max_abs_diff(out.values(), expected.values()) < 1e-12);
    }

    #[test]
    fn compose_two_token_hand_case() {
        // Normalized reference [ln .7, ln .3], delta [0.5, -0.5], alpha 0.5:
        // pre-norm [ln .7 - .25, ln .3 + .25], then renormalize by hand.
        let p = lv(&[0.7f64.ln(), 0.3f64.ln()]);
        // Construct normalized f, c with f - c = [0.5, -0.5]: solve
        // a + b = 1, a e^{.5} + b e^{-.5} = 1 for c = [ln a, ln b].
        let a = (1.0 - (-0.5f64).exp()) / (0.5f64.exp() - (-0.5f64).exp());
        let b = 1.0 - a;
        let c = lv(&[a.ln(), b.ln()]);
        let f = lv(&[a.ln() + 0.5, b.ln() - 0.5]);
        let cfg = ComposeConfig::new(0.5, ComposeMode::Ucd).unwrap();
        let out = compose(&p, &f, &c, &cfg).unwrap();

        let pre = [0.7f64.ln() - 0.25, 0.3f64.ln() + 0.25];
        let lse = (pre[0].exp() + pre[1].exp()).ln();
        assert_abs_diff_eq!(out.values()[0], pre[0] - lse, epsilon = 1e-12);
        assert_abs_diff_eq!(out.values()[1], pre[1] - lse, epsilon = 1e-12);
    }

    #[test]
    fn ucs_with_all_negative_signal_is_identity() {
        // Equal distributions give delta = 0 everywhere, so every entry is
        // clipped and the clipped mode must leave the reference untouched.
        let f = lv(&[0.2f64.ln(), 0.2f64.ln(), 0.6f64.ln()]);
        let c = lv(&[0.2f64.ln(), 0.2f64.ln(), 0.6f64.ln()]);
        let s = contrastive_signal(&f, &c).unwrap();
        assert!(s.values().iter().all(|&d| d <= 0.0));
        let p = lv(&[1.0, 0.0, -1.0]);
        for alpha in [0.01, 0.5, 2.0] {
            let cfg = ComposeConfig::new(alpha, ComposeMode::Ucs).unwrap();
            let out = compose(&p, &f, &c, &cfg).unwrap();
            let expected = log_softmax(&p);
            assert!(max_abs_diff(out.values(), expected.values()) < 1e-12);
        }
    }

    #[test]
    fn alpha_zero_is_identity_for_both_modes() {
        let p = lv(&[0.2, -0.8, 1.4]);
        let f = lv(&[3.0, 0.0, -2.0]);
        let c = lv(&[-1.0, 2.0, 0.0]);
        for mode in [ComposeMode::Ucd, ComposeMode::Ucs] {
            let cfg = ComposeConfig::new(0.0, mode).unwrap();
            let out = compose(&p, &f, &c, &cfg).unwrap();
            assert!(max_abs_diff(out.values(), log_softmax(&p).values()) < 1e-15);
        }
    }

    #[test]
    fn config_rejects_negative_or_non_finite_alpha() {
        assert!(ComposeConfig::new(-0.1, ComposeMode::Ucd).is_err());
        assert!(ComposeConfig::new(f64::NAN, ComposeMode::Ucd).is_err());
        assert!(ComposeConfig::new(0.0, ComposeMode::Ucd).is_ok());
    }
}
