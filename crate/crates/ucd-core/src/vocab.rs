//! Token vocabulary with reserved sentinels, plus the context type fed to
//! logit providers.
//!
//! All models composed together must agree on a single vocabulary; agreement
//! is checked through a content hash of the token list rather than by
//! comparing token lists directly.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const BOS_TOKEN: &str = "<bos>";
pub const EOS_TOKEN: &str = "<eos>";

/// Dense token identifier, valid for its owning [`Vocab`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub const BOS: TokenId = TokenId(0);
    pub const EOS: TokenId = TokenId(1);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Content hash identifying a vocabulary (hex-encoded SHA-256 of the token list).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VocabHash(String);

impl VocabHash {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for VocabHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Ordered token list with BOS and EOS pinned at indices 0 and 1.
#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    hash: VocabHash,
}

impl Vocab {
    /// Builds a vocabulary from tokenized documents: the two sentinels
    /// followed by every distinct token in first-appearance order.
    pub fn build<S: AsRef<str>>(corpus: &[Vec<S>]) -> Result<Vocab> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut tokens: Vec<String> = vec![BOS_TOKEN.to_string(), EOS_TOKEN.to_string()];
        let mut seen: std::collections::HashSet<String> = tokens.iter().cloned().collect();
        for doc in corpus {
            for tok in doc {
                let tok = tok.as_ref();
                if tok == BOS_TOKEN || tok == EOS_TOKEN {
                    return Err(Error::ReservedToken {
                        token: tok.to_string(),
                    });
                }
                if seen.insert(tok.to_string()) {
                    tokens.push(tok.to_string());
                }
            }
        }
        Vocab::from_tokens(tokens)
    }

    /// Reassembles a vocabulary from a stored token list. The list must start
    /// with the sentinels and contain no duplicates.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Vocab> {
        if tokens.len() < 3 {
            return Err(Error::InvalidParameter {
                reason: format!(
                    "vocabulary needs sentinels plus at least one content token (got {})",
                    tokens.len()
                ),
            });
        }
        if tokens[0] != BOS_TOKEN || tokens[1] != EOS_TOKEN {
            return Err(Error::InvalidParameter {
                reason: "vocabulary must start with the BOS and EOS sentinels".to_string(),
            });
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), TokenId(i as u32)).is_some() {
                return Err(Error::InvalidParameter {
                    reason: format!("duplicate token {tok:?}"),
                });
            }
        }
        let hash = hash_tokens(&tokens);
        Ok(Vocab {
            tokens,
            index,
            hash,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // invariant: at least sentinels plus one content token
    }

    pub fn hash(&self) -> &VocabHash {
        &self.hash
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id.index()).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    /// Maps whitespace-separated text onto token ids, collecting any
    /// out-of-vocabulary words into an error.
    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        let mut ids = Vec::new();
        let mut missing = Vec::new();
        for word in text.split_whitespace() {
            match self.id(word) {
                Some(id) => ids.push(id),
                None => missing.push(word.to_string()),
            }
        }
        if !missing.is_empty() {
            missing.dedup();
            return Err(Error::OutOfVocab { tokens: missing });
        }
        Ok(ids)
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        let mut words = Vec::with_capacity(ids.len());
        for &id in ids {
            match self.token(id) {
                Some(tok) => words.push(tok),
                None => {
                    return Err(Error::TokenOutOfRange {
                        id: id.0,
                        vocab_size: self.len(),
                    })
                }
            }
        }
        Ok(words.join(" "))
    }

    pub fn into_arc(self) -> Arc<Vocab> {
        Arc::new(self)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let file = VocabFile {
            version: VOCAB_FILE_VERSION,
            tokens: self.tokens.clone(),
            hash: self.hash.to_string(),
        };
        let bytes = serde_json::to_vec(&file).expect("vocab serializes");
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Vocab> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let file: VocabFile =
            serde_json::from_slice(&bytes).map_err(|e| Error::InvalidParameter {
                reason: format!("malformed vocab file: {e}"),
            })?;
        if file.version != VOCAB_FILE_VERSION {
            return Err(Error::UnsupportedVersion {
                found: file.version,
                expected: VOCAB_FILE_VERSION,
            });
        }
        let vocab = Vocab::from_tokens(file.tokens)?;
        if vocab.hash().as_str() != file.hash {
            return Err(Error::VocabMismatch {
                left: file.hash,
                right: vocab.hash().to_string(),
            });
        }
        Ok(vocab)
    }
}

const VOCAB_FILE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct VocabFile {
    version: u32,
    tokens: Vec<String>,
    hash: String,
}

fn hash_tokens(tokens: &[String]) -> VocabHash {
    let mut hasher = Sha256::new();
    for tok in tokens {
        hasher.update((tok.len() as u64).to_le_bytes());
        hasher.update(tok.as_bytes());
    }
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    VocabHash(hex)
}

/// Token sequence beginning with BOS; once EOS appears the sequence is closed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Context {
    tokens: Vec<TokenId>,
}

impl Context {
    /// A fresh context holding only the BOS sentinel.
    pub fn bos() -> Context {
        Context {
            tokens: vec![TokenId::BOS],
        }
    }

    pub fn new(tokens: Vec<TokenId>) -> Result<Context> {
        if tokens.is_empty() {
            return Err(Error::InvalidContext {
                reason: "context must contain at least BOS".to_string(),
            });
        }
        if tokens[0] != TokenId::BOS {
            return Err(Error::InvalidContext {
                reason: "context must begin with BOS".to_string(),
            });
        }
        if let Some(pos) = tokens.iter().position(|&t| t == TokenId::EOS) {
            if pos != tokens.len() - 1 {
                return Err(Error::InvalidContext {
                    reason: "no token may follow EOS".to_string(),
                });
            }
        }
        Ok(Context { tokens })
    }

    /// BOS followed by the given content tokens.
    pub fn from_content(content: &[TokenId]) -> Result<Context> {
        let mut tokens = Vec::with_capacity(content.len() + 1);
        tokens.push(TokenId::BOS);
        tokens.extend_from_slice(content);
        Context::new(tokens)
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // invariant: BOS is always present
    }

    pub fn ends_with_eos(&self) -> bool {
        *self.tokens.last().expect("context nonempty") == TokenId::EOS
    }

    pub fn push(&mut self, token: TokenId) -> Result<()> {
        if self.ends_with_eos() {
            return Err(Error::InvalidContext {
                reason: "cannot extend a context past EOS".to_string(),
            });
        }
        self.tokens.push(token);
        Ok(())
    }

    /// Content tokens, i.e. everything after the leading BOS.
    pub fn content(&self) -> &[TokenId] {
        &self.tokens[1..]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs(texts: &[&str]) -> Vec<Vec<String>> {
        texts
            .iter()
            .map(|t| t.split_whitespace().map(str::to_string).collect())
            .collect()
    }

    #[test]
    fn build_orders_tokens_by_first_appearance() {
        let v = Vocab::build(&docs(&["a b", "b"])).unwrap();
        assert_eq!(v.tokens(), &["<bos>", "<eos>", "a", "b"]);
        assert_eq!(v.len(), 4);
        assert_eq!(v.id("a"), Some(TokenId(2)));
    }

    #[test]
    fn build_is_deterministic() {
        let a = Vocab::build(&docs(&["a"])).unwrap();
        let b = Vocab::build(&docs(&["a"])).unwrap();
        assert_eq!(a.hash(), b.hash());
    }

    #[test]
    fn build_rejects_empty_corpus() {
        let empty: Vec<Vec<String>> = vec![];
        assert!(matches!(Vocab::build(&empty), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn build_rejects_reserved_tokens() {
        let err = Vocab::build(&docs(&["a <bos> b"])).unwrap_err();
        assert!(matches!(err, Error::ReservedToken { .. }));
    }

    #[test]
    fn hash_differs_when_order_differs() {
        let a = Vocab::build(&docs(&["a b"])).unwrap();
        let b = Vocab::build(&docs(&["b a"])).unwrap();
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn encode_reports_every_oov_word() {
        let v = Vocab::build(&docs(&["a b"])).unwrap();
        match v.encode("a x y") {
            Err(Error::OutOfVocab { tokens }) => assert_eq!(tokens, vec!["x", "y"]),
            other => panic!("expected OutOfVocab, got {other:?}"),
        }
    }

    #[test]
    fn context_rejects_token_after_eos() {
        let err = Context::new(vec![TokenId::BOS, TokenId::EOS, TokenId(2)]).unwrap_err();
        assert!(matches!(err, Error::InvalidContext { .. }));
    }

    #[test]
    fn context_must_begin_with_bos() {
        assert!(Context::new(vec![TokenId(2)]).is_err());
        assert!(Context::new(vec![]).is_err());
        assert!(Context::new(vec![TokenId::BOS, TokenId(2), TokenId::EOS]).is_ok());
    }

    #[test]
    fn push_past_eos_fails() {
        let mut ctx = Context::bos();
        ctx.push(TokenId::EOS).unwrap();
        assert!(ctx.push(TokenId(2)).is_err());
    }
}
