//! Inference-time unlearning by logit composition.
//!
//! A reference model's next-token logits are adjusted with the gap between
//! two auxiliary models (one tuned on the material to forget, one on the
//! material to keep), so the deployed model stops producing the forget-side
//! content without retraining. The crate bundles:
//!
//! - the composition rule and its clipped variant ([`compose`]),
//! - a trainable add-k n-gram model as a desk-scale provider ([`ngram`]),
//! - greedy and nucleus decoding ([`sample`]),
//! - the evaluation harness: forget quality via a two-sample KS test, model
//!   utility, memorization and membership-inference metrics ([`metrics`],
//!   [`eval`]),
//! - a deterministic synthetic benchmark generator ([`benchgen`]),
//! - numerical verification of the exact- and approximate-recovery
//!   conditions ([`verify`]).

pub mod benchgen;
pub mod compose;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod logits;
pub mod metrics;
pub mod ngram;
pub mod sample;
pub mod verify;
pub mod vocab;

pub use compose::{ComposeConfig, ComposeMode, ComposedProvider, ContrastiveSignal};
pub use error::{Error, Result};
pub use logits::{BlendedProvider, LogitProvider, LogitVector};
pub use metrics::{EvalSets, QAExample};
pub use ngram::NGramModel;
pub use sample::{Generation, SamplerConfig, SamplingStrategy};
pub use vocab::{Context, TokenId, Vocab, VocabHash};
