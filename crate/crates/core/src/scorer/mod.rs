//! The scorer contract and the built-in scorers.
//!
//! A scorer maps a decoding context (prompt plus generated frames) to one
//! normalised log-probability vector per codebook. Scorers are immutable
//! once built and may be shared across concurrent decode runs.

mod hashed;
mod ngram;
mod peaked;
mod table;

pub use hashed::SeededContextScorer;
pub use ngram::{ngram_train, parse_corpus, read_corpus, NGramModel};
pub use peaked::{peaked_loop_scorer, PeakedLoopScorer};
pub use table::{replay_load, ReplayTrace, TableScorer};

use crate::error::{Error, Result};
use crate::types::{Frame, LogProbVector, TokenId, Vocabulary};

/// Conditioning history handed to a scorer.
#[derive(Debug, Clone, Copy)]
pub struct ScorerContext<'a> {
    pub prompt: &'a [Frame],
    pub generated: &'a [Frame],
}

impl<'a> ScorerContext<'a> {
    pub fn new(prompt: &'a [Frame], generated: &'a [Frame]) -> Self {
        ScorerContext { prompt, generated }
    }

    /// Index of the step being scored (0 for the first generated frame).
    pub fn step(&self) -> usize {
        self.generated.len()
    }

    /// Prompt followed by generated tokens of one codebook stream.
    pub fn history(&self, codebook: usize) -> impl DoubleEndedIterator<Item = TokenId> + 'a {
        self.prompt.iter().chain(self.generated).map(move |f| f.get(codebook))
    }

    pub fn check_codebooks(&self, expected: usize) -> Result<()> {
        match self.prompt.iter().chain(self.generated).find(|f| f.codebooks() != expected) {
            Some(f) => Err(Error::CodebookMismatch { expected, found: f.codebooks() }),
            None => Ok(()),
        }
    }
}

pub trait Scorer: Send + Sync {
    fn vocab(&self) -> &Vocabulary;

    /// One distribution per codebook for the next frame.
    fn score(&self, ctx: &ScorerContext<'_>) -> Result<Vec<LogProbVector>>;

    fn num_codebooks(&self) -> usize {
        self.vocab().num_codebooks()
    }
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn vocab(&self) -> &Vocabulary {
        (**self).vocab()
    }

    fn score(&self, ctx: &ScorerContext<'_>) -> Result<Vec<LogProbVector>> {
        (**self).score(ctx)
    }
}

impl<S: Scorer + ?Sized> Scorer for Box<S> {
    fn vocab(&self) -> &Vocabulary {
        (**self).vocab()
    }

    fn score(&self, ctx: &ScorerContext<'_>) -> Result<Vec<LogProbVector>> {
        (**self).score(ctx)
    }
}

pub(crate) fn uniform(size: usize) -> LogProbVector {
    LogProbVector::from_raw_unchecked(vec![-(size as f64).ln(); size])
}
