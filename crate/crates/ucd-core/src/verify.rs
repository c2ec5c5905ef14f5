//! Numerical checks of the recovery guarantees behind the composition rule:
//! exact recovery under proportional auxiliary gaps, the bounded-ratio
//! relaxation, and the gap-spread diagnostic.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::compose::{compose, contrastive_signal, ComposeConfig, ComposeMode};
use crate::error::{Error, Result};
use crate::logits::{check_same_vocab, LogitProvider, LogitVector};
use crate::vocab::Context;

const DIST_SUM_TOL: f64 = 1e-12;
const GAP_EPSILON: f64 = 1e-9;
const RATIO_TOL: f64 = 1e-9;

fn check_distribution(p: &[f64]) -> Result<()> {
    let mut sum = 0.0;
    for (index, &x) in p.iter().enumerate() {
        if !x.is_finite() {
            return Err(Error::NonFiniteValue { index });
        }
        if x <= 0.0 {
            return Err(Error::NonPositiveProbability { index });
        }
        sum += x;
    }
    if (sum - 1.0).abs() > DIST_SUM_TOL {
        return Err(Error::InvalidParameter {
            reason: format!("distribution sums to {sum}, not 1"),
        });
    }
    Ok(())
}

fn ln_vec(p: &[f64]) -> LogitVector {
    LogitVector::new(p.iter().map(|x| x.ln()).collect()).expect("positive probabilities")
}

/// Total variation distance between two distributions.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// A family of four distributions where the auxiliary log-gap is exactly `m`
/// times the reference/clean log-gap (up to the constant introduced by
/// renormalization, which softmax shift invariance absorbs).
#[derive(Debug, Clone)]
pub struct ProportionalFamily {
    clean: Vec<f64>,
    corrupted: Vec<f64>,
    slope: f64,
    a_clean: Vec<f64>,
    a_forget: Vec<f64>,
}

impl ProportionalFamily {
    pub fn vocab_size(&self) -> usize {
        self.clean.len()
    }

    pub fn slope(&self) -> f64 {
        self.slope
    }

    pub fn clean(&self) -> &[f64] {
        &self.clean
    }

    pub fn corrupted(&self) -> &[f64] {
        &self.corrupted
    }

    pub fn a_clean(&self) -> &[f64] {
        &self.a_clean
    }

    pub fn a_forget(&self) -> &[f64] {
        &self.a_forget
    }
}

/// Builds the family: the clean auxiliary is `base`, the forget auxiliary is
/// `normalize(base * (corrupted / clean)^m)`.
pub fn build_proportional_family(
    clean: &[f64],
    corrupted: &[f64],
    m: f64,
    base: &[f64],
) -> Result<ProportionalFamily> {
    if clean.len() != corrupted.len() || clean.len() != base.len() {
        return Err(Error::LengthMismatch {
            left: clean.len(),
            right: corrupted.len().max(base.len()),
        });
    }
    if !(m > 0.0) || !m.is_finite() {
        return Err(Error::InvalidParameter {
            reason: format!("proportionality slope must be positive (got {m})"),
        });
    }
    check_distribution(clean)?;
    check_distribution(corrupted)?;
    check_distribution(base)?;

    let lf: Vec<f64> = base
        .iter()
        .zip(corrupted.iter().zip(clean))
        .map(|(&b, (&p, &q))| b.ln() + m * (p.ln() - q.ln()))
        .collect();
    let a_forget = LogitVector::new(lf)?.softmax();

    Ok(ProportionalFamily {
        clean: clean.to_vec(),
        corrupted: corrupted.to_vec(),
        slope: m,
        a_clean: base.to_vec(),
        a_forget,
    })
}

/// Runs the composition with `alpha = 1/m` and returns the total-variation
/// distance between the aligned distribution and the clean one. Exact
/// proportionality should drive this to numerical zero.
pub fn verify_prop2(fam: &ProportionalFamily) -> f64 {
    verify_recovery_at(fam, 1.0 / fam.slope)
}

/// Same as [`verify_prop2`] but with an arbitrary alpha, for probing how the
/// recovery degrades away from `1/m`.
pub fn verify_recovery_at(fam: &ProportionalFamily, alpha: f64) -> f64 {
    let cfg = ComposeConfig::new(alpha, ComposeMode::Ucd).expect("valid alpha");
    let aligned = compose(
        &ln_vec(&fam.corrupted),
        &ln_vec(&fam.a_forget),
        &ln_vec(&fam.a_clean),
        &cfg,
    )
    .expect("family vectors share one length");
    total_variation(&aligned.softmax(), &fam.clean)
}

/// Ratio bounds for the relaxed proportionality condition, with an alpha
/// inside the admissible interval `[1/c2, 1/c1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioBand {
    pub c1: f64,
    pub c2: f64,
    pub alpha: f64,
}

impl RatioBand {
    pub fn new(c1: f64, c2: f64, alpha: f64) -> Result<RatioBand> {
        if !(c1 > 0.0 && c2 >= c1) {
            return Err(Error::InvalidParameter {
                reason: format!("need 0 < c1 <= c2 (got c1 = {c1}, c2 = {c2})"),
            });
        }
        let lo = 1.0 / c2;
        let hi = 1.0 / c1;
        if !(alpha >= lo - RATIO_TOL && alpha <= hi + RATIO_TOL) {
            return Err(Error::InvalidParameter {
                reason: format!("alpha {alpha} outside admissible interval [{lo}, {hi}]"),
            });
        }
        Ok(RatioBand { c1, c2, alpha })
    }
}

/// Outcome of the bounded-ratio check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BandReport {
    /// Tokens with positive reference/clean gap, subject to the band.
    pub qualifying_tokens: usize,
    /// Tokens with negative or numerically-zero gap, exempt from the band.
    pub exempt_tokens: usize,
    /// Smallest distance from any per-token deviation to its bound; negative
    /// would mean a bound violation (cannot happen when the ratios hold).
    pub worst_slack: f64,
}

/// Checks that, pre-renormalization, the aligned logit of every token with a
/// positive gap `g(y) = log corrupted(y) - log clean(y)` stays within
/// `[-(c2/c1 - 1) g(y), (1 - c1/c2) g(y)]` of the clean log-probability.
/// Tokens must first satisfy the ratio condition itself; a qualifying token
/// with a ratio outside `[c1, c2]` is an error.
pub fn verify_approx_band(
    corrupted: &[f64],
    clean: &[f64],
    a_forget: &[f64],
    a_clean: &[f64],
    band: &RatioBand,
) -> Result<BandReport> {
    let v = corrupted.len();
    if clean.len() != v || a_forget.len() != v || a_clean.len() != v {
        return Err(Error::LengthMismatch {
            left: v,
            right: clean.len().max(a_forget.len()).max(a_clean.len()),
        });
    }
    check_distribution(corrupted)?;
    check_distribution(clean)?;
    check_distribution(a_forget)?;
    check_distribution(a_clean)?;

    let mut qualifying = 0usize;
    let mut exempt = 0usize;
    let mut worst_slack = f64::INFINITY;
    for y in 0..v {
        let gap = corrupted[y].ln() - clean[y].ln();
        if gap < GAP_EPSILON {
            exempt += 1;
            continue;
        }
        qualifying += 1;
        let delta = a_forget[y].ln() - a_clean[y].ln();
        let ratio = delta / gap;
        if ratio < band.c1 - RATIO_TOL || ratio > band.c2 + RATIO_TOL {
            return Err(Error::BandViolated {
                token: y as u32,
                ratio,
                c1: band.c1,
                c2: band.c2,
            });
        }
        let aligned = corrupted[y].ln() - band.alpha * delta;
        let deviation = aligned - clean[y].ln();
        let lo = -(band.c2 / band.c1 - 1.0) * gap;
        let hi = (1.0 - band.c1 / band.c2) * gap;
        let slack = (deviation - lo).min(hi - deviation);
        worst_slack = worst_slack.min(slack);
    }
    if qualifying == 0 {
        worst_slack = 0.0;
    }
    Ok(BandReport {
        qualifying_tokens: qualifying,
        exempt_tokens: exempt,
        worst_slack,
    })
}

/// Span and variance of the contrastive signal over the vocabulary for one
/// prompt. A diagnostic: small spans mean the auxiliaries disagree by almost
/// a constant there, so the composition barely moves the reference.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DeltaSpread {
    pub span: f64,
    pub variance: f64,
}

pub fn delta_spread(
    f_prov: &dyn LogitProvider,
    c_prov: &dyn LogitProvider,
    prompts: &[Context],
) -> Result<Vec<DeltaSpread>> {
    check_same_vocab(&[f_prov, c_prov])?;
    let mut out = Vec::with_capacity(prompts.len());
    for ctx in prompts {
        let signal = contrastive_signal(&f_prov.logits(ctx)?, &c_prov.logits(ctx)?)?;
        out.push(DeltaSpread {
            span: signal.span(),
            variance: signal.variance(),
        });
    }
    Ok(out)
}

/// Strictly positive random distribution: softmax of uniform logits in
/// [-3, 3].
pub fn random_distribution<R: Rng>(rng: &mut R, v: usize) -> Vec<f64> {
    let logits: Vec<f64> = (0..v).map(|_| rng.random_range(-3.0..3.0)).collect();
    LogitVector::new(logits).expect("finite").softmax()
}

/// Random proportional family for recovery sweeps.
pub fn random_family<R: Rng>(rng: &mut R, v: usize, m: f64) -> ProportionalFamily {
    let clean = random_distribution(rng, v);
    let corrupted = random_distribution(rng, v);
    let base = random_distribution(rng, v);
    build_proportional_family(&clean, &corrupted, m, &base).expect("random inputs are valid")
}

/// A generated instance satisfying the bounded-ratio condition by
/// construction.
#[derive(Debug, Clone)]
pub struct BandInstance {
    pub corrupted: Vec<f64>,
    pub clean: Vec<f64>,
    pub a_forget: Vec<f64>,
    pub a_clean: Vec<f64>,
    pub band: RatioBand,
}

/// Builds an instance where roughly a quarter of tokens carry a positive gap
/// with auxiliary/reference ratios sampled inside `[c1, c2]`, and the rest
/// carry a uniformly negative gap (exempt from the band). The positive-gap
/// tokens get little probability mass so that the forget auxiliary can absorb
/// the ratio-implied boosts and still normalize.
pub fn gen_band_instance<R: Rng>(rng: &mut R, v: usize, c1: f64, c2: f64) -> BandInstance {
    assert!(v >= 4, "need at least 4 tokens");
    assert!(c1 > 0.0 && c2 >= c1 && c2 <= 2.5, "keep ratios modest");
    let s = (v / 4).max(1);

    // Positive-gap block: tiny clean mass, corrupted inflated by e^gap.
    let clean_s: Vec<f64> = (0..s).map(|_| rng.random_range(0.001..0.003)).collect();
    let gaps: Vec<f64> = (0..s).map(|_| rng.random_range(0.2..1.0)).collect();
    let corr_s: Vec<f64> = clean_s
        .iter()
        .zip(&gaps)
        .map(|(&c, &g)| c * g.exp())
        .collect();

    // Remaining mass spread over the negative-gap block with shared weights,
    // so the gap is the same (negative) constant there.
    let weights: Vec<f64> = (0..v - s).map(|_| rng.random_range(0.5..1.0)).collect();
    let wsum: f64 = weights.iter().sum();
    let clean_rest = 1.0 - clean_s.iter().sum::<f64>();
    let corr_rest = 1.0 - corr_s.iter().sum::<f64>();
    let mut clean = clean_s.clone();
    let mut corrupted = corr_s.clone();
    clean.extend(weights.iter().map(|w| w * clean_rest / wsum));
    corrupted.extend(weights.iter().map(|w| w * corr_rest / wsum));

    // Auxiliaries: base puts little mass on the positive block; the forget
    // auxiliary applies the sampled ratios there and renormalizes over the
    // exempt block.
    let ac_s: Vec<f64> = (0..s).map(|_| rng.random_range(0.0005..0.0015)).collect();
    let ac_weights: Vec<f64> = (0..v - s).map(|_| rng.random_range(0.5..1.0)).collect();
    let ac_wsum: f64 = ac_weights.iter().sum();
    let ac_rest = 1.0 - ac_s.iter().sum::<f64>();
    let mut a_clean = ac_s.clone();
    a_clean.extend(ac_weights.iter().map(|w| w * ac_rest / ac_wsum));

    let ratios: Vec<f64> = (0..s).map(|_| rng.random_range(c1..=c2)).collect();
    let af_s: Vec<f64> = ac_s
        .iter()
        .zip(ratios.iter().zip(&gaps))
        .map(|(&a, (&r, &g))| a * (r * g).exp())
        .collect();
    let af_rest = 1.0 - af_s.iter().sum::<f64>();
    assert!(af_rest > 0.0, "positive-block mass stayed small");
    let mut a_forget = af_s;
    a_forget.extend(ac_weights.iter().map(|w| w * af_rest / ac_wsum));

    let alpha = {
        let lo = 1.0 / c2;
        let hi = 1.0 / c1;
        rng.random_range(lo..=hi)
    };
    BandInstance {
        corrupted,
        clean,
        a_forget,
        a_clean,
        band: RatioBand::new(c1, c2, alpha).expect("sampled alpha is admissible"),
    }
}
