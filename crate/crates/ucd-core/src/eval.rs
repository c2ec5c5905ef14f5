//! Report assembly: runs the full metric suite for one composed model and
//! sweeps the suppression strength over a grid.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compose::{ComposeConfig, ComposedProvider};
use crate::error::{Error, Result};
use crate::logits::LogitProvider;
use crate::metrics::{
    self, EvalSetKind, EvalSets, QAExample, MIN_K_DEFAULT_FRACTION,
};
use crate::vocab::{Context, Vocab};

/// Everything a single evaluation run needs. The retrain oracle is optional;
/// without it the indistinguishability and leakage numbers are omitted.
pub struct EvalInputs<'a> {
    pub vocab: &'a Vocab,
    pub reference: &'a dyn LogitProvider,
    pub forget_aux: &'a dyn LogitProvider,
    pub clean_aux: &'a dyn LogitProvider,
    pub retrain: Option<&'a dyn LogitProvider>,
    pub eval_sets: &'a EvalSets,
    /// (prefix, true continuation) pairs from the forget corpus.
    pub continuation_docs: &'a [(String, String)],
    /// Texts the reference model trained on (forget side).
    pub mia_members: &'a [String],
    /// Held-out texts no model trained on.
    pub mia_nonmembers: &'a [String],
}

/// Mean raw metrics for one evaluation set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetMetrics {
    pub rouge: f64,
    pub probability: f64,
    pub truth_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: String,
    pub alpha: f64,
    /// `ln` KS p-value of candidate-vs-retrain truth ratios on the forget
    /// set; present only when a retrain oracle was supplied.
    pub forget_quality_log_p: Option<f64>,
    pub model_utility: f64,
    pub verb_mem_forget: f64,
    pub know_mem_forget: f64,
    pub know_mem_retain: f64,
    pub priv_leak: Option<f64>,
    pub per_set: BTreeMap<String, SetMetrics>,
}

fn set_kind_name(kind: EvalSetKind) -> &'static str {
    match kind {
        EvalSetKind::Forget => "forget",
        EvalSetKind::Retain => "retain",
        EvalSetKind::RealWorld => "real_world",
        EvalSetKind::RealAuthors => "real_authors",
    }
}

/// Per-example metrics for a whole set, averaged. Also yields the raw
/// truth-ratio sample for distribution tests.
fn score_set(
    model: &dyn LogitProvider,
    vocab: &Vocab,
    examples: &[QAExample],
) -> Result<(SetMetrics, Vec<f64>)> {
    let mut rouge_sum = 0.0;
    let mut prob_sum = 0.0;
    let mut ratios = Vec::with_capacity(examples.len());
    for ex in examples {
        let gold_len = ex.gold_answer.split_whitespace().count().max(1);
        let prompt = Context::from_content(&vocab.encode(&ex.question)?)?;
        let generated = metrics::greedy_continuation(model, &prompt, gold_len)?;
        let trimmed: Vec<_> = generated
            .iter()
            .copied()
            .filter(|&t| t != crate::vocab::TokenId::EOS)
            .collect();
        let candidate = vocab.decode(&trimmed)?;
        rouge_sum += metrics::rouge_l_recall(&candidate, &ex.gold_answer)?;
        prob_sum += metrics::answer_probability(model, vocab, &ex.question, &ex.gold_answer)?;
        ratios.push(metrics::truth_ratio(model, vocab, ex)?);
    }
    let n = examples.len() as f64;
    let tr_mean = ratios.iter().sum::<f64>() / n;
    Ok((
        SetMetrics {
            rouge: rouge_sum / n,
            probability: prob_sum / n,
            truth_ratio: tr_mean,
        },
        ratios,
    ))
}

/// Runs the whole metric suite for the composition described by `cfg`.
pub fn evaluate(inputs: &EvalInputs<'_>, cfg: &ComposeConfig) -> Result<EvalReport> {
    if inputs.eval_sets.forget.is_empty() || inputs.eval_sets.retain.is_empty() {
        return Err(Error::InvalidParameter {
            reason: "evaluation needs nonempty forget and retain sets".to_string(),
        });
    }
    let candidate = ComposedProvider::new(
        inputs.reference,
        inputs.forget_aux,
        inputs.clean_aux,
        *cfg,
    )?;
    if let Some(retrain) = inputs.retrain {
        crate::logits::check_same_vocab(&[inputs.reference, retrain])?;
    }

    let mut per_set = BTreeMap::new();
    let (forget_metrics, candidate_forget_ratios) =
        score_set(&candidate, inputs.vocab, &inputs.eval_sets.forget)?;
    per_set.insert(set_kind_name(EvalSetKind::Forget).to_string(), forget_metrics);

    // Utility components: rouge, answer probability, and clamped 1 - truth
    // ratio (per example) for every non-forget set present.
    let mut utility_components = Vec::new();
    let mut know_mem_retain = 0.0;
    for (kind, examples) in inputs.eval_sets.non_forget() {
        let (m, ratios) = score_set(&candidate, inputs.vocab, examples)?;
        per_set.insert(set_kind_name(kind).to_string(), m);
        let clamped_tr =
            ratios.iter().map(|tr| (1.0 - tr).max(0.0)).sum::<f64>() / ratios.len() as f64;
        utility_components.extend([m.rouge, m.probability, clamped_tr]);
        if kind == EvalSetKind::Retain {
            know_mem_retain = 100.0 * m.rouge;
        }
    }
    let model_utility = metrics::model_utility(&utility_components)?;

    let verb_mem_forget =
        metrics::verb_mem(&candidate, inputs.vocab, inputs.continuation_docs)?;
    let know_mem_forget = 100.0 * per_set["forget"].rouge;

    let mut forget_quality_log_p = None;
    let mut priv_leak = None;
    if let Some(retrain) = inputs.retrain {
        let mut retrain_ratios = Vec::with_capacity(inputs.eval_sets.forget.len());
        for ex in &inputs.eval_sets.forget {
            retrain_ratios.push(metrics::truth_ratio(retrain, inputs.vocab, ex)?);
        }
        let (_, p) = metrics::ks_two_sample(&candidate_forget_ratios, &retrain_ratios)?;
        forget_quality_log_p = Some(p.ln());

        if !inputs.mia_members.is_empty() && !inputs.mia_nonmembers.is_empty() {
            let score_all = |model: &dyn LogitProvider, texts: &[String]| -> Result<Vec<f64>> {
                texts
                    .iter()
                    .map(|t| {
                        metrics::min_k_logprob(model, inputs.vocab, t, MIN_K_DEFAULT_FRACTION)
                    })
                    .collect()
            };
            let auc_candidate = metrics::auc(
                &score_all(&candidate, inputs.mia_members)?,
                &score_all(&candidate, inputs.mia_nonmembers)?,
            )?;
            let auc_retrain = metrics::auc(
                &score_all(retrain, inputs.mia_members)?,
                &score_all(retrain, inputs.mia_nonmembers)?,
            )?;
            priv_leak = Some(metrics::priv_leak(auc_candidate, auc_retrain)?);
        }
    }

    Ok(EvalReport {
        mode: cfg.mode.to_string(),
        alpha: cfg.alpha,
        forget_quality_log_p,
        model_utility,
        verb_mem_forget,
        know_mem_forget,
        know_mem_retain,
        priv_leak,
        per_set,
    })
}

/// Evaluates every alpha in the grid (in parallel) and returns reports in
/// grid order.
pub fn sweep(
    inputs: &EvalInputs<'_>,
    mode: crate::compose::ComposeMode,
    alphas: &[f64],
) -> Result<Vec<EvalReport>> {
    if alphas.is_empty() {
        return Err(Error::InvalidParameter {
            reason: "alpha grid is empty".to_string(),
        });
    }
    alphas
        .par_iter()
        .map(|&alpha| evaluate(inputs, &ComposeConfig::new(alpha, mode)?))
        .collect()
}

/// Grid selection: the best indistinguishability among alphas whose utility
/// stays within 95% of the grid's maximum utility. Falls back to the highest
/// utility when no indistinguishability numbers exist.
pub fn select_best(reports: &[EvalReport]) -> Option<usize> {
    if reports.is_empty() {
        return None;
    }
    let max_utility = reports
        .iter()
        .map(|r| r.model_utility)
        .fold(f64::NEG_INFINITY, f64::max);
    let admissible: Vec<usize> = (0..reports.len())
        .filter(|&i| reports[i].model_utility >= 0.95 * max_utility)
        .collect();
    let with_fq = admissible
        .iter()
        .copied()
        .filter(|&i| reports[i].forget_quality_log_p.is_some())
        .max_by(|&a, &b| {
            reports[a]
                .forget_quality_log_p
                .unwrap()
                .partial_cmp(&reports[b].forget_quality_log_p.unwrap())
                .expect("finite log p-values")
        });
    with_fq.or_else(|| {
        admissible.into_iter().max_by(|&a, &b| {
            reports[a]
                .model_utility
                .partial_cmp(&reports[b].model_utility)
                .expect("finite utilities")
        })
    })
}

/// Rounds every number in a JSON value to six significant digits, the
/// emission contract for reports.
pub fn round_json_numbers(value: &mut serde_json::Value) {
    match value {
        serde_json::Value::Number(n) => {
            if let Some(x) = n.as_f64() {
                if n.is_f64() {
                    if let Some(rounded) = serde_json::Number::from_f64(round_sig(x, 6)) {
                        *n = rounded;
                    }
                }
            }
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(round_json_numbers),
        serde_json::Value::Object(map) => map.values_mut().for_each(round_json_numbers),
        _ => {}
    }
}

fn round_sig(x: f64, digits: i32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let magnitude = x.abs().log10().floor() as i32;
    let factor = 10f64.powi(digits - 1 - magnitude);
    (x * factor).round() / factor
}

impl EvalReport {
    /// Canonical JSON emission: fixed key set, numbers at six significant
    /// digits, keys sorted. Byte-identical across runs with equal inputs.
    pub fn to_canonical_json(&self) -> String {
        let mut value = serde_json::to_value(self).expect("report serializes");
        round_json_numbers(&mut value);
        serde_json::to_string_pretty(&value).expect("value prints")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_keeps_six_significant_digits() {
        assert_eq!(round_sig(123.4567891, 6), 123.457);
        assert_eq!(round_sig(-0.00012345649, 6), -0.000123456);
        assert_eq!(round_sig(1_000_000.49, 6), 1_000_000.0);
        assert_eq!(round_sig(0.0, 6), 0.0);
    }

    #[test]
    fn selection_prefers_indistinguishability_within_utility_band() {
        let base = EvalReport {
            mode: "ucd".to_string(),
            alpha: 0.0,
            forget_quality_log_p: None,
            model_utility: 0.0,
            verb_mem_forget: 0.0,
            know_mem_forget: 0.0,
            know_mem_retain: 0.0,
            priv_leak: None,
            per_set: BTreeMap::new(),
        };
        let reports = vec![
            EvalReport {
                alpha: 0.01,
                model_utility: 1.0,
                forget_quality_log_p: Some(-30.0),
                ..base.clone()
            },
            EvalReport {
                alpha: 0.5,
                model_utility: 0.97,
                forget_quality_log_p: Some(-1.0),
                ..base.clone()
            },
            EvalReport {
                alpha: 1.0,
                // Below the 95% utility band: ignored despite the best log p.
                model_utility: 0.5,
                forget_quality_log_p: Some(-0.1),
                ..base.clone()
            },
        ];
        assert_eq!(select_best(&reports), Some(1));
    }

    #[test]
    fn selection_falls_back_to_utility_without_oracle() {
        let base = EvalReport {
            mode: "ucd".to_string(),
            alpha: 0.0,
            forget_quality_log_p: None,
            model_utility: 0.0,
            verb_mem_forget: 0.0,
            know_mem_forget: 0.0,
            know_mem_retain: 0.0,
            priv_leak: None,
            per_set: BTreeMap::new(),
        };
        let reports = vec![
            EvalReport {
                alpha: 0.1,
                model_utility: 0.8,
                ..base.clone()
            },
            EvalReport {
                alpha: 0.5,
                model_utility: 0.9,
                ..base.clone()
            },
        ];
        assert_eq!(select_best(&reports), Some(1));
    }
}
