//! Evaluation primitives: overlap recall, answer probabilities, truth ratios,
//! the two-sample Kolmogorov-Smirnov test, memorization scores, and the
//! membership-inference AUC pipeline.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::compose::log_softmax;
use crate::error::{Error, Result};
use crate::logits::LogitProvider;
use crate::vocab::{Context, TokenId, Vocab};

/// p-value floor for calling a candidate indistinguishable from the retrained
/// model.
pub const FORGET_QUALITY_ALPHA: f64 = 0.05;

/// `ln(0.05)`, the acceptance threshold on the log scale.
pub fn forget_quality_threshold_log_p() -> f64 {
    FORGET_QUALITY_ALPHA.ln()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAExample {
    pub question: String,
    pub gold_answer: String,
    pub paraphrased_answer: String,
    pub perturbed_answers: Vec<String>,
}

impl QAExample {
    pub fn new(
        question: impl Into<String>,
        gold_answer: impl Into<String>,
        paraphrased_answer: impl Into<String>,
        perturbed_answers: Vec<String>,
    ) -> Result<QAExample> {
        let ex = QAExample {
            question: question.into(),
            gold_answer: gold_answer.into(),
            paraphrased_answer: paraphrased_answer.into(),
            perturbed_answers,
        };
        ex.validate()?;
        Ok(ex)
    }

    pub fn validate(&self) -> Result<()> {
        if self.perturbed_answers.is_empty() {
            return Err(Error::InvalidParameter {
                reason: "at least one perturbed answer required".to_string(),
            });
        }
        for p in &self.perturbed_answers {
            if p == &self.gold_answer || p == &self.paraphrased_answer {
                return Err(Error::InvalidParameter {
                    reason: "perturbed answers must differ from gold and paraphrased".to_string(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSetKind {
    Forget,
    Retain,
    RealWorld,
    RealAuthors,
}

/// QA examples grouped by evaluation set. Forget and retain may not share a
/// question.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalSets {
    pub forget: Vec<QAExample>,
    pub retain: Vec<QAExample>,
    #[serde(default)]
    pub real_world: Vec<QAExample>,
    #[serde(default)]
    pub real_authors: Vec<QAExample>,
}

impl EvalSets {
    pub fn validate(&self) -> Result<()> {
        let forget_questions: std::collections::HashSet<&str> =
            self.forget.iter().map(|e| e.question.as_str()).collect();
        for ex in &self.retain {
            if forget_questions.contains(ex.question.as_str()) {
                return Err(Error::InvalidParameter {
                    reason: format!(
                        "question appears in both forget and retain sets: {:?}",
                        ex.question
                    ),
                });
            }
        }
        for ex in self.iter_all() {
            ex.validate()?;
        }
        Ok(())
    }

    pub fn iter_all(&self) -> impl Iterator<Item = &QAExample> {
        self.forget
            .iter()
            .chain(&self.retain)
            .chain(&self.real_world)
            .chain(&self.real_authors)
    }

    /// Non-forget sets actually present, in fixed order.
    pub fn non_forget(&self) -> Vec<(EvalSetKind, &[QAExample])> {
        let mut out: Vec<(EvalSetKind, &[QAExample])> = Vec::new();
        if !self.retain.is_empty() {
            out.push((EvalSetKind::Retain, &self.retain));
        }
        if !self.real_world.is_empty() {
            out.push((EvalSetKind::RealWorld, &self.real_world));
        }
        if !self.real_authors.is_empty() {
            out.push((EvalSetKind::RealAuthors, &self.real_authors));
        }
        out
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<EvalSets> {
        let path = path.as_ref();
        let data = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut sets = EvalSets::default();
        for (i, line) in data.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: EvalSetRecord =
                serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
                    path: path.to_path_buf(),
                    line: i + 1,
                    reason: e.to_string(),
                })?;
            let bucket = match rec.set {
                EvalSetKind::Forget => &mut sets.forget,
                EvalSetKind::Retain => &mut sets.retain,
                EvalSetKind::RealWorld => &mut sets.real_world,
                EvalSetKind::RealAuthors => &mut sets.real_authors,
            };
            bucket.push(rec.example);
        }
        sets.validate()?;
        Ok(sets)
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::new();
        let groups: [(EvalSetKind, &[QAExample]); 4] = [
            (EvalSetKind::Forget, &self.forget),
            (EvalSetKind::Retain, &self.retain),
            (EvalSetKind::RealWorld, &self.real_world),
            (EvalSetKind::RealAuthors, &self.real_authors),
        ];
        for (kind, examples) in groups {
            for ex in examples {
                let rec = EvalSetRecord {
                    set: kind,
                    example: ex.clone(),
                };
                serde_json::to_writer(&mut out, &rec).expect("record serializes");
                out.push(b'\n');
            }
        }
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&out).map_err(|e| Error::io(path, e))
    }
}

#[derive(Serialize, Deserialize)]
struct EvalSetRecord {
    set: EvalSetKind,
    #[serde(flatten)]
    example: QAExample,
}

fn rouge_tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Longest-common-subsequence recall: `LCS(candidate, reference) / |reference|`
/// over lowercased whitespace tokens.
pub fn rouge_l_recall(candidate: &str, reference: &str) -> Result<f64> {
    let rt = rouge_tokens(reference);
    if rt.is_empty() {
        return Err(Error::EmptyReference);
    }
    let ct = rouge_tokens(candidate);
    Ok(lcs_len(&ct, &rt) as f64 / rt.len() as f64)
}

fn normalized_logits(scorer: &dyn LogitProvider, ctx: &Context) -> Result<Vec<f64>> {
    Ok(log_softmax(&scorer.logits(ctx)?).into_values())
}

/// Per-token log-probabilities of `tokens` under `scorer`, each conditioned
/// on everything before it (starting from the given context).
fn token_logprobs(
    scorer: &dyn LogitProvider,
    mut ctx: Context,
    tokens: &[TokenId],
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(tokens.len());
    for &tok in tokens {
        let logits = normalized_logits(scorer, &ctx)?;
        let lp = *logits.get(tok.index()).ok_or(Error::TokenOutOfRange {
            id: tok.0,
            vocab_size: logits.len(),
        })?;
        out.push(lp);
        ctx.push(tok)?;
    }
    Ok(out)
}

/// Length-normalized answer probability: the geometric mean of per-token
/// conditional probabilities of the answer given the question.
pub fn answer_probability(
    scorer: &dyn LogitProvider,
    vocab: &Vocab,
    question: &str,
    answer: &str,
) -> Result<f64> {
    let q_ids = vocab.encode(question)?;
    let a_ids = vocab.encode(answer)?;
    if a_ids.is_empty() {
        return Err(Error::InvalidParameter {
            reason: "answer is empty after tokenization".to_string(),
        });
    }
    let ctx = Context::from_content(&q_ids)?;
    let lps = token_logprobs(scorer, ctx, &a_ids)?;
    let mean = lps.iter().sum::<f64>() / lps.len() as f64;
    Ok(mean.exp())
}

/// Mean perturbed-answer probability divided by the paraphrased-answer
/// probability. Values under 1 mean the model prefers the (correct)
/// paraphrase over wrong answers.
pub fn truth_ratio(scorer: &dyn LogitProvider, vocab: &Vocab, ex: &QAExample) -> Result<f64> {
    if ex.perturbed_answers.is_empty() {
        return Err(Error::InvalidParameter {
            reason: "at least one perturbed answer required".to_string(),
        });
    }
    let mut perturbed_sum = 0.0;
    for ans in &ex.perturbed_answers {
        perturbed_sum += answer_probability(scorer, vocab, &ex.question, ans)?;
    }
    let perturbed_mean = perturbed_sum / ex.perturbed_answers.len() as f64;
    let paraphrased = answer_probability(scorer, vocab, &ex.question, &ex.paraphrased_answer)?;
    if paraphrased <= 0.0 {
        return Err(Error::NonPositiveProbability { index: 0 });
    }
    Ok(perturbed_mean / paraphrased)
}

/// Two-sample Kolmogorov-Smirnov test. Returns the statistic
/// `D = sup |F_xs - F_ys|` over the empirical CDFs and an asymptotic p-value.
pub fn ks_two_sample(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut sx = xs.to_vec();
    let mut sy = ys.to_vec();
    sx.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    sy.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));

    let n = sx.len();
    let m = sy.len();
    let mut d: f64 = 0.0;
    for &t in sx.iter().chain(sy.iter()) {
        let fx = count_le(&sx, t) as f64 / n as f64;
        let fy = count_le(&sy, t) as f64 / m as f64;
        d = d.max((fx - fy).abs());
    }
    let p = ks_p_value(d, n, m);
    Ok((d, p))
}

fn count_le(sorted: &[f64], t: f64) -> usize {
    sorted.partition_point(|&x| x <= t)
}

/// Asymptotic survival function of the Kolmogorov distribution:
/// `Q(lambda) = 2 * sum_{j>=1} (-1)^{j-1} exp(-2 j^2 lambda^2)` with
/// `lambda = (sqrt(ne) + 0.12 + 0.11 / sqrt(ne)) * d`, `ne = nm / (n + m)`.
/// The series is truncated once terms fall below 1e-12; the result is
/// clamped into (0, 1].
fn ks_p_value(d: f64, n: usize, m: usize) -> f64 {
    if d <= 0.0 {
        return 1.0;
    }
    let ne = (n as f64 * m as f64) / (n as f64 + m as f64);
    let sqrt_ne = ne.sqrt();
    let lambda = (sqrt_ne + 0.12 + 0.11 / sqrt_ne) * d;
    if lambda < 1e-6 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=1000 {
        let jf = j as f64;
        let term = (-2.0 * jf * jf * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-12 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(f64::MIN_POSITIVE, 1.0)
}

/// `ln` of the KS p-value between the truth-ratio samples of the candidate
/// and the retrained oracle over the forget set. Zero means perfectly
/// indistinguishable.
pub fn forget_quality(
    candidate: &dyn LogitProvider,
    retrain: &dyn LogitProvider,
    vocab: &Vocab,
    forget_set: &[QAExample],
) -> Result<f64> {
    if forget_set.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut xs = Vec::with_capacity(forget_set.len());
    let mut ys = Vec::with_capacity(forget_set.len());
    for ex in forget_set {
        xs.push(truth_ratio(candidate, vocab, ex)?);
        ys.push(truth_ratio(retrain, vocab, ex)?);
    }
    let (_, p) = ks_two_sample(&xs, &ys)?;
    Ok(p.ln())
}

/// Harmonic mean; zero if any component is zero.
pub fn model_utility(components: &[f64]) -> Result<f64> {
    if components.is_empty() {
        return Err(Error::InvalidParameter {
            reason: "utility needs at least one component".to_string(),
        });
    }
    for &c in components {
        if !(c >= 0.0) {
            return Err(Error::InvalidParameter {
                reason: format!("utility components must be nonnegative (got {c})"),
            });
        }
    }
    if components.iter().any(|&c| c == 0.0) {
        return Ok(0.0);
    }
    let denom: f64 = components.iter().map(|c| 1.0 / c).sum();
    Ok(components.len() as f64 / denom)
}

/// Greedy continuation of `prompt` under a single provider, capped at
/// `max_new_tokens`.
pub fn greedy_continuation(
    provider: &dyn LogitProvider,
    prompt: &Context,
    max_new_tokens: usize,
) -> Result<Vec<TokenId>> {
    let mut ctx = prompt.clone();
    let mut out = Vec::new();
    for _ in 0..max_new_tokens {
        if ctx.ends_with_eos() {
            break;
        }
        let logits = log_softmax(&provider.logits(&ctx)?);
        let tok = crate::sample::greedy_pick(&logits);
        ctx.push(tok)?;
        out.push(tok);
        if tok == TokenId::EOS {
            break;
        }
    }
    Ok(out)
}

fn decode_for_rouge(vocab: &Vocab, tokens: &[TokenId]) -> Result<String> {
    let trimmed = match tokens.last() {
        Some(&TokenId::EOS) => &tokens[..tokens.len() - 1],
        _ => tokens,
    };
    vocab.decode(trimmed)
}

/// Verbatim memorization: 100 x mean LCS recall of the greedy continuation
/// (capped at the true continuation's length) against the true continuation.
pub fn verb_mem(
    model: &dyn LogitProvider,
    vocab: &Vocab,
    docs: &[(String, String)],
) -> Result<f64> {
    if docs.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut total = 0.0;
    for (prefix, continuation) in docs {
        let cont_len = continuation.split_whitespace().count();
        if cont_len == 0 {
            return Err(Error::EmptyReference);
        }
        let prompt = Context::from_content(&vocab.encode(prefix)?)?;
        let generated = greedy_continuation(model, &prompt, cont_len)?;
        let candidate = decode_for_rouge(vocab, &generated)?;
        total += rouge_l_recall(&candidate, continuation)?;
    }
    Ok(100.0 * total / docs.len() as f64)
}

/// Knowledge retention: 100 x mean LCS recall of greedy answers against gold
/// answers, generation capped at the gold answer's length.
pub fn know_mem(model: &dyn LogitProvider, vocab: &Vocab, qa: &[QAExample]) -> Result<f64> {
    if qa.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut total = 0.0;
    for ex in qa {
        let gold_len = ex.gold_answer.split_whitespace().count();
        if gold_len == 0 {
            return Err(Error::EmptyReference);
        }
        let prompt = Context::from_content(&vocab.encode(&ex.question)?)?;
        let generated = greedy_continuation(model, &prompt, gold_len)?;
        let candidate = decode_for_rouge(vocab, &generated)?;
        total += rouge_l_recall(&candidate, &ex.gold_answer)?;
    }
    Ok(100.0 * total / qa.len() as f64)
}

/// Mean of the lowest `ceil(k_frac * L)` per-token log-probabilities of the
/// text. Low values on supposed members signal the model no longer assigns
/// them training-like likelihood.
pub fn min_k_logprob(
    scorer: &dyn LogitProvider,
    vocab: &Vocab,
    text: &str,
    k_frac: f64,
) -> Result<f64> {
    if !(k_frac > 0.0 && k_frac <= 1.0) {
        return Err(Error::InvalidParameter {
            reason: format!("k_frac must lie in (0, 1] (got {k_frac})"),
        });
    }
    let ids = vocab.encode(text)?;
    if ids.is_empty() {
        return Err(Error::InvalidParameter {
            reason: "text is empty after tokenization".to_string(),
        });
    }
    let mut lps = token_logprobs(scorer, Context::bos(), &ids)?;
    lps.sort_by(|a, b| a.partial_cmp(b).expect("finite log-probabilities"));
    let keep = ((k_frac * lps.len() as f64).ceil() as usize).clamp(1, lps.len());
    Ok(lps[..keep].iter().sum::<f64>() / keep as f64)
}

/// Rank-based AUC: the fraction of (member, nonmember) pairs where the member
/// scores strictly higher, ties counting one half.
pub fn auc(member_scores: &[f64], nonmember_scores: &[f64]) -> Result<f64> {
    if member_scores.is_empty() || nonmember_scores.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut wins = 0.0;
    for &m in member_scores {
        for &n in nonmember_scores {
            if m > n {
                wins += 1.0;
            } else if m == n {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (member_scores.len() as f64 * nonmember_scores.len() as f64))
}

/// Relative deviation of the candidate's membership-inference AUC from the
/// retrained model's, in percent. Zero is ideal; the sign separates under-
/// from over-unlearning.
pub fn priv_leak(auc_unlearned: f64, auc_retrain: f64) -> Result<f64> {
    if auc_retrain == 0.0 {
        return Err(Error::InvalidParameter {
            reason: "retrain AUC must be nonzero".to_string(),
        });
    }
    Ok(100.0 * (auc_unlearned - auc_retrain) / auc_retrain)
}

/// Default Min-K fraction for the membership-inference scorer.
pub const MIN_K_DEFAULT_FRACTION: f64 = 0.2;
