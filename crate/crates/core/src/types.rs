//! Domain types shared by every decoder and the log-domain helpers they use.
//!
//! All scores are natural-log probabilities. Probabilities are only ever
//! materialised inside sampling truncation.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index into one codebook's vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<u32> for TokenId {
    fn from(v: u32) -> Self {
        TokenId(v)
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// The tokens emitted at one decode step, one per codebook.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Frame(pub Vec<TokenId>);

impl Frame {
    pub fn new(tokens: impl IntoIterator<Item = u32>) -> Self {
        Frame(tokens.into_iter().map(TokenId).collect())
    }

    pub fn single(token: u32) -> Self {
        Frame(vec![TokenId(token)])
    }

    pub fn codebooks(&self) -> usize {
        self.0.len()
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.0
    }

    pub fn get(&self, codebook: usize) -> TokenId {
        self.0[codebook]
    }
}

/// Positional equality of two frames. Frames from different codebook
/// layouts are not comparable.
pub fn frame_eq(a: &Frame, b: &Frame) -> Result<bool> {
    if a.codebooks() != b.codebooks() {
        return Err(Error::CodebookMismatch { expected: a.codebooks(), found: b.codebooks() });
    }
    Ok(a.0 == b.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Codebook {
    pub size: u32,
    #[serde(default)]
    pub eos: Option<TokenId>,
}

/// Vocabulary sizes (and optional end-of-sequence tokens) of the `C`
/// parallel codebooks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vocabulary {
    pub codebooks: Vec<Codebook>,
}

impl Vocabulary {
    pub fn new(codebooks: Vec<Codebook>) -> Result<Self> {
        let vocab = Vocabulary { codebooks };
        vocab.validate()?;
        Ok(vocab)
    }

    /// Single-codebook vocabulary. Panics if `eos` is out of range.
    pub fn single(size: u32, eos: Option<u32>) -> Self {
        Self::new(vec![Codebook { size, eos: eos.map(TokenId) }]).expect("invalid vocabulary")
    }

    /// `codebooks` codebooks of identical size and no EOS.
    pub fn uniform(codebooks: usize, size: u32) -> Self {
        Self::new(vec![Codebook { size, eos: None }; codebooks]).expect("invalid vocabulary")
    }

    pub fn validate(&self) -> Result<()> {
        if self.codebooks.is_empty() {
            return Err(Error::InvalidConfig("vocabulary needs at least one codebook".into()));
        }
        for (c, cb) in self.codebooks.iter().enumerate() {
            if cb.size == 0 {
                return Err(Error::InvalidConfig(format!("codebook {c} has size 0")));
            }
            if let Some(eos) = cb.eos {
                if eos.0 >= cb.size {
                    return Err(Error::TokenOutOfRange { codebook: c, token: eos.0, size: cb.size });
                }
            }
        }
        Ok(())
    }

    pub fn num_codebooks(&self) -> usize {
        self.codebooks.len()
    }

    pub fn size(&self, codebook: usize) -> usize {
        self.codebooks[codebook].size as usize
    }

    /// A frame ends its sequence when codebook 0 emits that codebook's EOS.
    pub fn is_eos(&self, frame: &Frame) -> bool {
        match self.codebooks[0].eos {
            Some(eos) => frame.get(0) == eos,
            None => false,
        }
    }

    pub fn check_frame(&self, frame: &Frame) -> Result<()> {
        if frame.codebooks() != self.num_codebooks() {
            return Err(Error::CodebookMismatch {
                expected: self.num_codebooks(),
                found: frame.codebooks(),
            });
        }
        for (c, (tok, cb)) in frame.0.iter().zip(&self.codebooks).enumerate() {
            if tok.0 >= cb.size {
                return Err(Error::TokenOutOfRange { codebook: c, token: tok.0, size: cb.size });
            }
        }
        Ok(())
    }
}

/// Normalised natural-log probabilities for one codebook.
///
/// `logsumexp(values) == 0` within 1e-6 and every entry is `<= 0`.
/// Truncated entries are `-inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogProbVector(Vec<f64>);

impl LogProbVector {
    /// Wraps values that are already log-probabilities, checking they form
    /// a distribution.
    pub fn from_log_probs(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyLogits);
        }
        if let Some(index) = values.iter().position(|v| v.is_nan() || *v > 1e-9) {
            return Err(Error::NonFiniteLogits { index });
        }
        let lse = logsumexp(&values);
        if (lse.abs()) > 1e-6 {
            return Err(Error::InvalidConfig(format!("log-probabilities sum to exp({lse})")));
        }
        Ok(LogProbVector(values))
    }

    pub(crate) fn from_raw_unchecked(values: Vec<f64>) -> Self {
        LogProbVector(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, token: TokenId) -> f64 {
        self.0[token.index()]
    }

    pub fn probs(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter().map(|v| v.exp())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for LogProbVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// `ln Σ exp(v)` with max subtraction. Returns `-inf` when every entry is `-inf`.
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Log-softmax of raw logits.
pub fn normalize_logits(raw: &[f64]) -> Result<LogProbVector> {
    if raw.is_empty() {
        return Err(Error::EmptyLogits);
    }
    if let Some(index) = raw.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLogits { index });
    }
    Ok(LogProbVector(log_softmax(raw)))
}

/// Log-softmax that tolerates `-inf` entries (used to renormalise truncated
/// or penalised score vectors). At least one entry must be finite.
pub(crate) fn log_softmax(values: &[f64]) -> Vec<f64> {
    let lse = logsumexp(values);
    values.iter().map(|v| v - lse).collect()
}

/// Index of the maximum score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> TokenId {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    TokenId(best as u32)
}

/// One hypothesis: the generated frames plus their unpenalised and
/// penalised scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Beam {
    /// Number of prompt frames that preceded generation. The prompt itself
    /// is never scored or penalised.
    pub prompt_len: usize,
    pub frames: Vec<Frame>,
    /// Original `log p` of each chosen token, `[step][codebook]`.
    pub step_logps: Vec<Vec<f64>>,
    pub cum_original: f64,
    pub cum_modified: f64,
    pub finished: bool,
}

impl Beam {
    pub fn new(prompt_len: usize) -> Self {
        Beam {
            prompt_len,
            frames: Vec::new(),
            step_logps: Vec::new(),
            cum_original: 0.0,
            cum_modified: 0.0,
            finished: false,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Appends a frame. `modified` is the penalised step score.
    ///
    /// Panics if the beam already finished.
    pub fn push(&mut self, frame: Frame, logps: Vec<f64>, modified: f64, finished: bool) {
        assert!(!self.finished, "finished beams never grow");
        self.cum_original += logps.iter().sum::<f64>();
        self.cum_modified += modified;
        self.frames.push(frame);
        self.step_logps.push(logps);
        self.finished = finished;
    }

    /// Tokens of one codebook stream, in generation order.
    pub fn stream(&self, codebook: usize) -> impl Iterator<Item = TokenId> + '_ {
        self.frames.iter().map(move |f| f.get(codebook))
    }
}

/// Recomputes `Σ_{t,c} log p` from a beam's per-step log-probabilities.
pub fn cumulative_logprob(beam: &Beam) -> f64 {
    beam.step_logps.iter().flatten().sum()
}

/// Penalty coefficients and search limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PenaltyConfig {
    /// Temporal repetition coefficient, `>= 1`.
    pub alpha: f64,
    /// Beam-wise repetition coefficient, `>= 1`.
    pub beta: f64,
    /// Number of most recent generated steps tracked per beam.
    pub window: usize,
    pub beam_width: usize,
    pub max_steps: usize,
    /// Only read by sampling strategies.
    pub seed: u64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        PenaltyConfig { alpha: 10.0, beta: 3.0, window: 50, beam_width: 5, max_steps: 500, seed: 0 }
    }
}

impl PenaltyConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha < 1.0 {
            return Err(Error::InvalidConfig(format!("alpha must be >= 1, got {}", self.alpha)));
        }
        if !self.beta.is_finite() || self.beta < 1.0 {
            return Err(Error::InvalidConfig(format!("beta must be >= 1, got {}", self.beta)));
        }
        if self.beam_width == 0 {
            return Err(Error::InvalidConfig("beam_width must be >= 1".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidConfig("max_steps must be >= 1".into()));
        }
        Ok(())
    }
}
