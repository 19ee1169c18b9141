//! Decoding strategies for autoregressive token language models.
//!
//! The crate covers the usual baselines (greedy, top-k and top-p sampling,
//! classic beam search) and a fixed-beam search that penalises tokens
//! repeated inside a per-beam sliding window (temporal penalty) and tokens
//! already picked by lower-indexed beams at the same step (beam-wise
//! penalty). Beams are re-ranked by their unpenalised log-likelihood once
//! decoding finishes.
//!
//! Every decoder works on multi-codebook [`Frame`]s, so models that emit
//! several parallel tokens per step (residual-VQ codec language models) are
//! handled the same way as plain single-stream models.
//!
//! ```
//! use tradbs_core::{beams, scorer::PeakedLoopScorer, PenaltyConfig, Vocabulary};
//!
//! let scorer = PeakedLoopScorer::new(1.0, 0.0, Vocabulary::single(8, None)).unwrap();
//! let cfg = PenaltyConfig { alpha: 15.0, beta: 10.0, window: 4, beam_width: 3, max_steps: 12, seed: 0 };
//! let result = beams::trad_bs(&scorer, &[], &cfg).unwrap();
//! assert_eq!(result.beams.len(), 3);
//! ```

pub mod beams;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod sampling;
pub mod scorer;
pub mod types;

pub use beams::{DecodeResult, RepetitionWindow};
pub use error::{Error, Result};
pub use metrics::CollapseReport;
pub use sampling::{SamplingParams, Strategy};
pub use scorer::{Scorer, ScorerContext};
pub use types::{
    cumulative_logprob, frame_eq, normalize_logits, Beam, Codebook, Frame, LogProbVector,
    PenaltyConfig, TokenId, Vocabulary,
};
