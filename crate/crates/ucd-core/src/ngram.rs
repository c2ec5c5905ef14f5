//! Add-k smoothed n-gram language model.
//!
//! The desk-scale stand-in for a fine-tuned language model: cheap to train,
//! deterministic, and guaranteed to emit finite log-probabilities for every
//! token thanks to the positive smoothing constant.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logits::{LogitProvider, LogitVector};
use crate::vocab::{Context, TokenId, Vocab, VocabHash};

const MODEL_FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, Default)]
struct ContextCounts {
    next: BTreeMap<TokenId, u64>,
    total: u64,
}

/// Count tables over (order-1)-token histories with add-k smoothing.
/// Immutable after training; share freely across threads.
#[derive(Debug, Clone)]
pub struct NGramModel {
    order: usize,
    k: f64,
    vocab: Arc<Vocab>,
    counts: BTreeMap<Vec<TokenId>, ContextCounts>,
}

impl NGramModel {
    /// Trains on the given contexts. Each sequence is padded with `order - 1`
    /// BOS tokens and terminated with EOS, then counted with a sliding
    /// window, so every position is conditioned on a full-length history.
    pub fn train(vocab: Arc<Vocab>, corpus: &[Context], order: usize, k: f64) -> Result<NGramModel> {
        if order < 1 {
            return Err(Error::InvalidOrder { order });
        }
        if !(k > 0.0) || !k.is_finite() {
            return Err(Error::NonPositiveSmoothing { k });
        }
        let v = vocab.len() as u32;
        let mut counts: BTreeMap<Vec<TokenId>, ContextCounts> = BTreeMap::new();
        for ctx in corpus {
            for &t in ctx.tokens() {
                if t.0 >= v {
                    return Err(Error::TokenOutOfRange {
                        id: t.0,
                        vocab_size: vocab.len(),
                    });
                }
            }
            let mut padded: Vec<TokenId> = vec![TokenId::BOS; order - 1];
            let content = ctx.content();
            let content = match content.last() {
                Some(&TokenId::EOS) => &content[..content.len() - 1],
                _ => content,
            };
            padded.extend_from_slice(content);
            padded.push(TokenId::EOS);
            for j in (order - 1)..padded.len() {
                let tail = padded[j - (order - 1)..j].to_vec();
                let entry = counts.entry(tail).or_default();
                *entry.next.entry(padded[j]).or_insert(0) += 1;
                entry.total += 1;
            }
        }
        Ok(NGramModel {
            order,
            k,
            vocab,
            counts,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing(&self) -> f64 {
        self.k
    }

    pub fn vocab(&self) -> &Arc<Vocab> {
        &self.vocab
    }

    fn tail_for(&self, ctx: &Context) -> Vec<TokenId> {
        let need = self.order - 1;
        let toks = ctx.tokens();
        if toks.len() >= need {
            toks[toks.len() - need..].to_vec()
        } else {
            // Shorter than a full history: left-pad with BOS, mirroring training.
            let mut tail = vec![TokenId::BOS; need - toks.len()];
            tail.extend_from_slice(toks);
            tail
        }
    }

    /// Normalized next-token log-probabilities for the context's last
    /// `order - 1` tokens: `ln((count + k) / (total + k * V))` per token.
    pub fn context_logits(&self, ctx: &Context) -> Result<LogitVector> {
        let v = self.vocab.len();
        for &t in ctx.tokens() {
            if t.index() >= v {
                return Err(Error::TokenOutOfRange {
                    id: t.0,
                    vocab_size: v,
                });
            }
        }
        let tail = self.tail_for(ctx);
        let empty = ContextCounts::default();
        let entry = self.counts.get(&tail).unwrap_or(&empty);
        let denom = entry.total as f64 + self.k * v as f64;
        let unseen = (self.k / denom).ln();
        let mut out = vec![unseen; v];
        for (&tok, &count) in &entry.next {
            out[tok.index()] = ((count as f64 + self.k) / denom).ln();
        }
        LogitVector::new(out)
    }

    /// Raw count for a specific transition, mainly for inspection and tests.
    pub fn count(&self, tail: &[TokenId], next: TokenId) -> u64 {
        self.counts
            .get(tail)
            .and_then(|e| e.next.get(&next).copied())
            .unwrap_or(0)
    }

    pub fn context_total(&self, tail: &[TokenId]) -> u64 {
        self.counts.get(tail).map(|e| e.total).unwrap_or(0)
    }

    pub fn to_json_bytes(&self) -> Vec<u8> {
        let file = ModelFile {
            version: MODEL_FILE_VERSION,
            order: self.order,
            k: self.k,
            tokens: self.vocab.tokens().to_vec(),
            vocab_hash: self.vocab.hash().to_string(),
            counts: self
                .counts
                .iter()
                .map(|(ctx, e)| CountEntry {
                    ctx: ctx.iter().map(|t| t.0).collect(),
                    next: e.next.iter().map(|(t, c)| (t.0, *c)).collect(),
                })
                .collect(),
        };
        serde_json::to_vec(&file).expect("model serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn from_json_bytes(bytes: &[u8]) -> Result<NGramModel> {
        let file: ModelFile = serde_json::from_slice(bytes).map_err(|e| Error::InvalidParameter {
            reason: format!("malformed model file: {e}"),
        })?;
        if file.version != MODEL_FILE_VERSION {
            return Err(Error::UnsupportedVersion {
                found: file.version,
                expected: MODEL_FILE_VERSION,
            });
        }
        if file.order < 1 {
            return Err(Error::InvalidOrder { order: file.order });
        }
        if !(file.k > 0.0) {
            return Err(Error::NonPositiveSmoothing { k: file.k });
        }
        let vocab = Vocab::from_tokens(file.tokens)?;
        if vocab.hash().as_str() != file.vocab_hash {
            return Err(Error::VocabMismatch {
                left: file.vocab_hash,
                right: vocab.hash().to_string(),
            });
        }
        let v = vocab.len() as u32;
        let mut counts: BTreeMap<Vec<TokenId>, ContextCounts> = BTreeMap::new();
        for entry in file.counts {
            if entry.ctx.len() != file.order - 1 {
                return Err(Error::InvalidParameter {
                    reason: "count entry history length does not match model order".to_string(),
                });
            }
            let mut cc = ContextCounts::default();
            for (tok, count) in entry.next {
                if tok >= v {
                    return Err(Error::TokenOutOfRange {
                        id: tok,
                        vocab_size: vocab.len(),
                    });
                }
                cc.next.insert(TokenId(tok), count);
                cc.total += count;
            }
            let key: Vec<TokenId> = entry.ctx.iter().map(|&t| TokenId(t)).collect();
            if key.iter().any(|t| t.0 >= v) {
                return Err(Error::TokenOutOfRange {
                    id: key.iter().find(|t| t.0 >= v).unwrap().0,
                    vocab_size: vocab.len(),
                });
            }
            counts.insert(key, cc);
        }
        Ok(NGramModel {
            order: file.order,
            k: file.k,
            vocab: Arc::new(vocab),
            counts,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<NGramModel> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_bytes(&bytes)
    }

    /// Loads and rejects the model if its vocabulary differs from the
    /// session's.
    pub fn load_expecting(path: impl AsRef<Path>, expected: &VocabHash) -> Result<NGramModel> {
        let model = Self::load(path)?;
        if model.vocab.hash() != expected {
            return Err(Error::VocabMismatch {
                left: expected.to_string(),
                right: model.vocab.hash().to_string(),
            });
        }
        Ok(model)
    }
}

impl LogitProvider for NGramModel {
    fn vocab_hash(&self) -> &VocabHash {
        self.vocab.hash()
    }

    fn logits(&self, ctx: &Context) -> Result<LogitVector> {
        self.context_logits(ctx)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    order: usize,
    k: f64,
    tokens: Vec<String>,
    vocab_hash: String,
    counts: Vec<CountEntry>,
}

#[derive(Serialize, Deserialize)]
struct CountEntry {
    ctx: Vec<u32>,
    next: Vec<(u32, u64)>,
}
