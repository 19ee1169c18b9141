//! Classic beam search and repetition-aware fixed-beam search.
//!
//! [`trad_bs`] keeps `B` beams that never get pruned or swapped. At every
//! step the beams are visited in ascending index order and each one greedily
//! extends itself with the argmax of its penalised scores:
//!
//! | candidate token is in ...            | score            |
//! |--------------------------------------|------------------|
//! | the beam's recent window only        | `alpha * log p`  |
//! | an earlier beam's pick at this step  | `beta * log p`   |
//! | both                                 | `alpha * beta * log p` |
//! | neither                              | `log p`          |
//!
//! Penalised scores only steer the choice; the beam keeps the original
//! `log p` of what it picked, and the final ranking uses those originals.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::CollapseReport;
use crate::scorer::{Scorer, ScorerContext};
use crate::types::{argmax, Beam, Frame, LogProbVector, PenaltyConfig, TokenId, Vocabulary};

pub const RANKING_KEY: &str = "original cumulative log p";

/// Token set consulted by the penalty engine.
pub trait TokenSet {
    fn contains_token(&self, token: TokenId) -> bool;

    /// Calls `f` once per distinct member, in no particular order.
    fn for_each_token(&self, f: &mut dyn FnMut(TokenId));
}

impl TokenSet for BTreeSet<TokenId> {
    fn contains_token(&self, token: TokenId) -> bool {
        self.contains(&token)
    }

    fn for_each_token(&self, f: &mut dyn FnMut(TokenId)) {
        self.iter().copied().for_each(f)
    }
}

impl TokenSet for HashSet<TokenId> {
    fn contains_token(&self, token: TokenId) -> bool {
        self.contains(&token)
    }

    fn for_each_token(&self, f: &mut dyn FnMut(TokenId)) {
        self.iter().copied().for_each(f)
    }
}

impl TokenSet for [TokenId] {
    fn contains_token(&self, token: TokenId) -> bool {
        self.contains(&token)
    }

    // duplicates are harmless: membership is all the penalty looks at
    fn for_each_token(&self, f: &mut dyn FnMut(TokenId)) {
        self.iter().copied().for_each(f)
    }
}

/// The empty set.
pub struct NoTokens;

impl TokenSet for NoTokens {
    fn contains_token(&self, _: TokenId) -> bool {
        false
    }

    fn for_each_token(&self, _: &mut dyn FnMut(TokenId)) {}
}

/// Rescales `log p` of tokens that repeat recent output (`temporal`) or an
/// earlier beam's choice at this step (`beamwise`).
///
/// The result is a score vector, not a distribution. Tokens in both sets
/// get `alpha * beta * log p`, evaluated left to right.
pub fn apply_repetition_penalty<T, B>(dist: &LogProbVector, temporal: &T, beamwise: &B, alpha: f64, beta: f64) -> Vec<f64>
where
    T: TokenSet + ?Sized,
    B: TokenSet + ?Sized,
{
    const TEMPORAL: u8 = 1;
    const BEAMWISE: u8 = 2;
    let mut scores = dist.values().to_vec();
    let mut flags = vec![0u8; scores.len()];
    temporal.for_each_token(&mut |t| {
        if let Some(f) = flags.get_mut(t.index()) {
            *f |= TEMPORAL;
        }
    });
    beamwise.for_each_token(&mut |t| {
        if let Some(f) = flags.get_mut(t.index()) {
            *f |= BEAMWISE;
        }
    });
    for (s, &f) in scores.iter_mut().zip(&flags) {
        let lp = *s;
        *s = match f {
            TEMPORAL => alpha * lp,
            BEAMWISE => beta * lp,
            0 => lp,
            _ => alpha * beta * lp,
        };
    }
    scores
}

/// Sliding window over the last `capacity` generated tokens of one
/// codebook stream, with multiplicity-aware membership.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenWindow {
    capacity: usize,
    buf: VecDeque<TokenId>,
    counts: HashMap<TokenId, usize>,
}

impl TokenWindow {
    pub fn new(capacity: usize) -> Self {
        TokenWindow { capacity, buf: VecDeque::with_capacity(capacity), counts: HashMap::new() }
    }

    pub fn advance(&mut self, chosen: TokenId) {
        if self.capacity == 0 {
            return;
        }
        if self.buf.len() == self.capacity {
            let old = self.buf.pop_front().expect("non-empty");
            let n = self.counts.get_mut(&old).expect("buffered token is counted");
            *n -= 1;
            if *n == 0 {
                self.counts.remove(&old);
            }
        }
        self.buf.push_back(chosen);
        *self.counts.entry(chosen).or_insert(0) += 1;
    }

    pub fn buffer(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.buf.iter().copied()
    }

    pub fn members(&self) -> BTreeSet<TokenId> {
        self.counts.keys().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }
}

impl TokenSet for TokenWindow {
    fn contains_token(&self, token: TokenId) -> bool {
        self.counts.contains_key(&token)
    }

    fn for_each_token(&self, f: &mut dyn FnMut(TokenId)) {
        self.counts.keys().copied().for_each(f)
    }
}

/// Returns `window` advanced by `chosen`.
pub fn window_advance(mut window: TokenWindow, chosen: TokenId) -> TokenWindow {
    window.advance(chosen);
    window
}

/// One [`TokenWindow`] per codebook for a single beam.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepetitionWindow {
    codebooks: Vec<TokenWindow>,
}

impl RepetitionWindow {
    pub fn new(codebooks: usize, length: usize) -> Self {
        RepetitionWindow { codebooks: vec![TokenWindow::new(length); codebooks] }
    }

    pub fn codebook(&self, c: usize) -> &TokenWindow {
        &self.codebooks[c]
    }

    pub fn advance(&mut self, frame: &Frame) {
        for (w, &tok) in self.codebooks.iter_mut().zip(frame.tokens()) {
            w.advance(tok);
        }
    }
}

/// Tokens already picked at the current step by lower-indexed beams,
/// per codebook.
#[derive(Debug, Clone, Default)]
pub struct BeamStepChoices {
    codebooks: Vec<BTreeSet<TokenId>>,
}

impl BeamStepChoices {
    pub fn new(codebooks: usize) -> Self {
        BeamStepChoices { codebooks: vec![BTreeSet::new(); codebooks] }
    }

    pub fn codebook(&self, c: usize) -> &BTreeSet<TokenId> {
        &self.codebooks[c]
    }

    pub fn insert(&mut self, frame: &Frame) {
        for (set, &tok) in self.codebooks.iter_mut().zip(frame.tokens()) {
            set.insert(tok);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult {
    /// Sorted non-increasing by `cum_original`; ties keep beam index order.
    pub beams: Vec<Beam>,
    pub ranking_key: String,
    pub config: PenaltyConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<CollapseReport>,
}

impl DecodeResult {
    fn ranked(beams: Vec<Beam>, config: PenaltyConfig) -> Self {
        DecodeResult { beams: rerank(beams), ranking_key: RANKING_KEY.to_string(), config, metrics: None }
    }
}

/// Stable sort by original cumulative log-probability, best first.
pub fn rerank(mut beams: Vec<Beam>) -> Vec<Beam> {
    beams.sort_by(|a, b| b.cum_original.total_cmp(&a.cum_original));
    beams
}

pub(crate) fn check_prompt(vocab: &Vocabulary, prompt: &[Frame]) -> Result<()> {
    prompt.iter().try_for_each(|f| vocab.check_frame(f))
}

pub(crate) fn score_checked<S: Scorer + ?Sized>(
    scorer: &S,
    prompt: &[Frame],
    generated: &[Frame],
) -> Result<Vec<LogProbVector>> {
    let dists = scorer.score(&ScorerContext::new(prompt, generated))?;
    let vocab = scorer.vocab();
    if dists.len() != vocab.num_codebooks() {
        return Err(Error::CodebookMismatch { expected: vocab.num_codebooks(), found: dists.len() });
    }
    for (c, d) in dists.iter().enumerate() {
        if d.len() != vocab.size(c) {
            return Err(Error::InvalidConfig(format!(
                "scorer returned {} entries for codebook {c} of size {}",
                d.len(),
                vocab.size(c)
            )));
        }
    }
    Ok(dists)
}

/// Fixed-beam search with temporal and beam-wise repetition penalties.
///
/// All `cfg.beam_width` beams start from `prompt`. A beam finishes when
/// codebook 0 emits its EOS; its tokens from that step still count against
/// later beams at the same step, after which it is skipped.
pub fn trad_bs<S: Scorer + ?Sized>(scorer: &S, prompt: &[Frame], cfg: &PenaltyConfig) -> Result<DecodeResult> {
    trad_bs_with_penalty(scorer, prompt, cfg, |d, t, b, alpha, beta| apply_repetition_penalty(d, t, b, alpha, beta))
}

/// [`trad_bs`] with a substitute penalty rule. Used to mutation-test the
/// oracle checks.
pub fn trad_bs_with_penalty<S, F>(scorer: &S, prompt: &[Frame], cfg: &PenaltyConfig, penalty: F) -> Result<DecodeResult>
where
    S: Scorer + ?Sized,
    F: Fn(&LogProbVector, &dyn TokenSet, &dyn TokenSet, f64, f64) -> Vec<f64>,
{
    cfg.validate()?;
    let vocab = scorer.vocab();
    check_prompt(vocab, prompt)?;
    let cbs = vocab.num_codebooks();
    let width = cfg.beam_width;

    let mut beams = vec![Beam::new(prompt.len()); width];
    let mut windows = vec![RepetitionWindow::new(cbs, cfg.window); width];

    for step in 0..cfg.max_steps {
        if beams.iter().all(|b| b.finished) {
            break;
        }
        let mut choices = BeamStepChoices::new(cbs);
        for (b, beam) in beams.iter_mut().enumerate() {
            if beam.finished {
                continue;
            }
            let dists = score_checked(scorer, prompt, &beam.frames).map_err(|e| e.at(step, b))?;
            let mut tokens = Vec::with_capacity(cbs);
            let mut logps = Vec::with_capacity(cbs);
            let mut modified = 0.0;
            for (c, dist) in dists.iter().enumerate() {
                let scores = penalty(dist, windows[b].codebook(c), choices.codebook(c), cfg.alpha, cfg.beta);
                let tok = argmax(&scores);
                tokens.push(tok);
                logps.push(dist.get(tok));
                modified += scores[tok.index()];
            }
            let frame = Frame(tokens);
            choices.insert(&frame);
            windows[b].advance(&frame);
            let finished = vocab.is_eos(&frame);
            beam.push(frame, logps, modified, finished);
        }
    }
    Ok(DecodeResult::ranked(beams, *cfg))
}

/// Limits for classic beam search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VanillaOptions {
    /// With more than one codebook, only the top-M tokens of each codebook
    /// are combined into candidate frames.
    pub top_m: usize,
    /// Cap on candidate extensions examined per step.
    pub max_candidates: usize,
}

impl Default for VanillaOptions {
    fn default() -> Self {
        VanillaOptions { top_m: 8, max_candidates: 1 << 22 }
    }
}

/// Per-codebook token options of one parent. Candidate frames are the
/// cross product, addressed by a mixed-radix index with codebook 0 as the
/// most significant digit.
struct Options<'a> {
    dists: &'a [LogProbVector],
    tokens: Vec<Vec<TokenId>>,
    strides: Vec<usize>,
}

impl<'a> Options<'a> {
    fn new(dists: &'a [LogProbVector], top_m: usize) -> Self {
        let tokens = if dists.len() == 1 {
            vec![(0..dists[0].len() as u32).map(TokenId).collect()]
        } else {
            dists
                .iter()
                .map(|d| {
                    let mut idx: Vec<TokenId> = (0..d.len() as u32).map(TokenId).collect();
                    idx.sort_by(|a, b| d.get(*b).total_cmp(&d.get(*a)).then(a.cmp(b)));
                    idx.truncate(top_m.max(1));
                    idx
                })
                .collect()
        };
        let mut strides = vec![1; tokens.len()];
        for c in (0..tokens.len().saturating_sub(1)).rev() {
            strides[c] = strides[c + 1] * tokens[c + 1].len();
        }
        Options { dists, tokens, strides }
    }

    fn token(&self, c: usize, combo: usize) -> TokenId {
        let opts = &self.tokens[c];
        opts[combo / self.strides[c] % opts.len()]
    }

    /// Same value as summing `logps(frame(combo))`, without allocating.
    fn sum_logp(&self, combo: usize) -> f64 {
        let mut sum = 0.0;
        for (c, d) in self.dists.iter().enumerate() {
            sum += d.get(self.token(c, combo));
        }
        sum
    }

    fn count(&self) -> usize {
        self.tokens.iter().map(Vec::len).product()
    }

    fn frame(&self, combo: usize) -> Vec<TokenId> {
        (0..self.tokens.len()).map(|c| self.token(c, combo)).collect()
    }

    fn logps(&self, frame: &[TokenId]) -> Vec<f64> {
        frame.iter().zip(self.dists).map(|(&t, d)| d.get(t)).collect()
    }
}

struct Candidate {
    score: f64,
    parent: usize,
    // None: a finished parent carried over unchanged
    combo: Option<usize>,
}

/// Classic beam search: extend every live beam with every token (or, for
/// multiple codebooks, every top-M combination), keep the `B` best by
/// cumulative `log p`. Ties go to the lower parent index, then the lower
/// token ids. Finished beams compete unchanged.
pub fn vanilla_beam_search<S: Scorer + ?Sized>(
    scorer: &S,
    prompt: &[Frame],
    cfg: &PenaltyConfig,
    opts: &VanillaOptions,
) -> Result<DecodeResult> {
    cfg.validate()?;
    let vocab = scorer.vocab();
    check_prompt(vocab, prompt)?;
    let cbs = vocab.num_codebooks();
    let per_parent: usize = if cbs == 1 {
        vocab.size(0)
    } else {
        (0..cbs).map(|c| vocab.size(c).min(opts.top_m.max(1))).product()
    };

    let mut live = vec![Beam::new(prompt.len())];
    for step in 0..cfg.max_steps {
        if live.iter().all(|b| b.finished) {
            break;
        }
        let candidates_per_step = per_parent.saturating_mul(live.len());
        if candidates_per_step > opts.max_candidates {
            return Err(Error::CandidateLimit { candidates: candidates_per_step, limit: opts.max_candidates });
        }
        let mut dists: Vec<Option<Vec<LogProbVector>>> = Vec::with_capacity(live.len());
        for (i, beam) in live.iter().enumerate() {
            dists.push(if beam.finished {
                None
            } else {
                Some(score_checked(scorer, prompt, &beam.frames).map_err(|e| e.at(step, i))?)
            });
        }
        let options: Vec<Option<Options>> = dists.iter().map(|d| d.as_deref().map(|d| Options::new(d, opts.top_m))).collect();

        let mut cands = Vec::with_capacity(candidates_per_step);
        for (i, beam) in live.iter().enumerate() {
            match &options[i] {
                None => cands.push(Candidate { score: beam.cum_original, parent: i, combo: None }),
                Some(o) => {
                    for combo in 0..o.count() {
                        let sum = o.sum_logp(combo);
                        cands.push(Candidate { score: beam.cum_original + sum, parent: i, combo: Some(combo) });
                    }
                }
            }
        }
        let tokens = |c: &Candidate| c.combo.map(|k| options[c.parent].as_ref().expect("live parent").frame(k));
        // same parent from here on, so both sides index the same options
        let token_order = |a: &Candidate, b: &Candidate| match (a.combo, b.combo) {
            (Some(x), Some(y)) => {
                let o = options[a.parent].as_ref().expect("live parent");
                (0..cbs).map(|c| o.token(c, x).cmp(&o.token(c, y))).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
            }
            (x, y) => x.cmp(&y),
        };
        let order = |a: &Candidate, b: &Candidate| {
            b.score.total_cmp(&a.score).then(a.parent.cmp(&b.parent)).then_with(|| token_order(a, b))
        };
        if cands.len() > cfg.beam_width {
            cands.select_nth_unstable_by(cfg.beam_width - 1, order);
            cands.truncate(cfg.beam_width);
        }
        cands.sort_by(order);
        live = cands
            .iter()
            .map(|cand| {
                let mut beam = live[cand.parent].clone();
                if let Some(frame) = tokens(cand) {
                    let o = options[cand.parent].as_ref().expect("live parent");
                    let logps = o.logps(&frame);
                    let frame = Frame(frame);
                    let finished = vocab.is_eos(&frame);
                    let sum = logps.iter().sum();
                    beam.push(frame, logps, sum, finished);
                }
                beam
            })
            .collect();
    }
    Ok(DecodeResult::ranked(live, *cfg))
}
