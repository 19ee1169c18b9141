//! Brute-force verification of the decoders on small random instances.
//!
//! Three checks:
//! * `vanilla_bs_exhaustive`: single-codebook beam search with
//!   `B = V^(T-1)` never prunes a prefix of the optimum, so its best beam
//!   must equal the argmax over all `V^T` sequences.
//! * `trad_bs_reference`: the decoder against a direct step-by-step
//!   simulation written here without any of the decoder's data structures.
//! * `penalty_branches`: the penalty rule against its four-case definition.
//!
//! The reference code below intentionally shares nothing with `beams`
//! except the scorer trait.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::beams::{apply_repetition_penalty, trad_bs_with_penalty, vanilla_beam_search, TokenSet, VanillaOptions};
use crate::error::{Error, Result};
use crate::scorer::{Scorer, ScorerContext, SeededContextScorer};
use crate::types::{normalize_logits, Codebook, Frame, LogProbVector, PenaltyConfig, TokenId, Vocabulary};

pub const MAX_VOCAB: usize = 6;
pub const MAX_STEPS: usize = 6;
pub const MAX_BEAMS: usize = 3;
pub const MAX_CODEBOOKS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OracleLimits {
    pub vocab: usize,
    pub steps: usize,
    pub beams: usize,
    pub codebooks: usize,
}

impl Default for OracleLimits {
    fn default() -> Self {
        OracleLimits { vocab: 5, steps: 6, beams: 3, codebooks: 2 }
    }
}

impl OracleLimits {
    pub fn validate(&self) -> Result<()> {
        let ok = (2..=MAX_VOCAB).contains(&self.vocab)
            && (1..=MAX_STEPS).contains(&self.steps)
            && (1..=MAX_BEAMS).contains(&self.beams)
            && (1..=MAX_CODEBOOKS).contains(&self.codebooks);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "oracle limits {self:?} outside V in 2..={MAX_VOCAB}, T in 1..={MAX_STEPS}, \
                 B in 1..={MAX_BEAMS}, C in 1..={MAX_CODEBOOKS}"
            )))
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: usize,
    pub failed: usize,
    pub counterexample: Option<String>,
}

impl CheckOutcome {
    fn new(name: &'static str) -> Self {
        CheckOutcome { name, passed: 0, failed: 0, counterexample: None }
    }

    fn record(&mut self, failure: Option<(usize, String)>, best: &mut Option<(usize, String)>) {
        match failure {
            None => self.passed += 1,
            Some(f) => {
                self.failed += 1;
                if best.as_ref().is_none_or(|b| f.0 < b.0) {
                    *best = Some(f);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub limits: OracleLimits,
    pub instances: usize,
    pub seed: u64,
    pub checks: Vec<CheckOutcome>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.failed == 0)
    }
}

/// Random small instance for the trad-bs comparison.
#[derive(Debug, Clone)]
pub struct Instance {
    pub vocab: Vocabulary,
    pub scorer_seed: u64,
    pub spread: f64,
    pub prompt: Vec<Frame>,
    pub cfg: PenaltyConfig,
}

impl Instance {
    pub fn scorer(&self) -> SeededContextScorer {
        SeededContextScorer::new(self.scorer_seed, self.spread, self.vocab.clone())
    }

    fn size(&self) -> usize {
        self.vocab.size(0) * self.cfg.max_steps * self.cfg.beam_width * self.vocab.num_codebooks()
    }
}

const COEFFS: [f64; 5] = [1.0, 3.0, 10.0, 15.0, 100.0];

fn coefficient(rng: &mut ChaCha8Rng) -> f64 {
    if rng.random_bool(0.5) {
        COEFFS[rng.random_range(0..COEFFS.len())]
    } else {
        rng.random_range(1.0..20.0)
    }
}

pub fn random_instance(rng: &mut ChaCha8Rng, limits: &OracleLimits) -> Instance {
    let v = rng.random_range(2..=limits.vocab);
    let c = rng.random_range(1..=limits.codebooks);
    let eos = rng.random_bool(0.3).then(|| TokenId(rng.random_range(0..v as u32)));
    let mut codebooks = vec![Codebook { size: v as u32, eos: None }; c];
    codebooks[0].eos = eos;
    let prompt_len = rng.random_range(0..=2);
    let prompt = (0..prompt_len).map(|_| Frame::new((0..c).map(|_| rng.random_range(0..v as u32)))).collect();
    let steps = rng.random_range(1..=limits.steps);
    Instance {
        vocab: Vocabulary::new(codebooks).expect("valid"),
        scorer_seed: rng.random(),
        spread: rng.random_range(0.5..6.0),
        prompt,
        cfg: PenaltyConfig {
            alpha: coefficient(rng),
            beta: coefficient(rng),
            window: rng.random_range(0..=steps),
            beam_width: rng.random_range(1..=limits.beams),
            max_steps: steps,
            seed: 0,
        },
    }
}

/// Output of the reference simulation, ranked like the decoder's.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceBeam {
    pub frames: Vec<Vec<u32>>,
    pub original: f64,
    pub modified: f64,
    pub finished: bool,
}

/// Step-by-step simulation of fixed-beam repetition-aware search.
///
/// Windows are recomputed from each beam's history every time; the
/// beam-wise set is a plain list of earlier beams' picks at this step.
pub fn reference_trad_bs(
    scorer: &dyn Scorer,
    prompt: &[Frame],
    cfg: &PenaltyConfig,
) -> Result<Vec<ReferenceBeam>> {
    let vocab = scorer.vocab();
    let cbs = vocab.num_codebooks();
    let eos0 = vocab.codebooks[0].eos.map(|t| t.0);
    let mut beams: Vec<ReferenceBeam> = (0..cfg.beam_width)
        .map(|_| ReferenceBeam { frames: vec![], original: 0.0, modified: 0.0, finished: false })
        .collect();

    for _t in 0..cfg.max_steps {
        if beams.iter().all(|b| b.finished) {
            break;
        }
        let mut picked: Vec<Vec<u32>> = vec![vec![]; cbs];
        for beam in beams.iter_mut() {
            if beam.finished {
                continue;
            }
            let generated: Vec<Frame> = beam.frames.iter().map(|f| Frame::new(f.iter().copied())).collect();
            let dists = scorer.score(&ScorerContext::new(prompt, &generated))?;
            let mut frame = Vec::with_capacity(cbs);
            for (c, dist) in dists.iter().enumerate() {
                let history: Vec<u32> = beam.frames.iter().map(|f| f[c]).collect();
                let recent = &history[history.len().saturating_sub(cfg.window)..];
                let mut best: Option<(u32, f64, f64)> = None;
                for (x, &lp) in dist.values().iter().enumerate() {
                    let x = x as u32;
                    let in_window = recent.contains(&x);
                    let in_earlier = picked[c].contains(&x);
                    let score = if in_window && !in_earlier {
                        cfg.alpha * lp
                    } else if in_earlier && !in_window {
                        cfg.beta * lp
                    } else if in_window && in_earlier {
                        cfg.alpha * cfg.beta * lp
                    } else {
                        lp
                    };
                    if best.is_none_or(|(_, s, _)| score > s) {
                        best = Some((x, score, lp));
                    }
                }
                let (x, score, lp) = best.expect("non-empty vocabulary");
                frame.push(x);
                beam.original += lp;
                beam.modified += score;
            }
            for (c, &x) in frame.iter().enumerate() {
                picked[c].push(x);
            }
            beam.finished = eos0 == Some(frame[0]);
            beam.frames.push(frame);
        }
    }
    // insertion sort: stable, best first
    let mut ranked: Vec<ReferenceBeam> = Vec::with_capacity(beams.len());
    for beam in beams {
        let pos = ranked.iter().position(|r| beam.original > r.original).unwrap_or(ranked.len());
        ranked.insert(pos, beam);
    }
    Ok(ranked)
}

/// Best sequence over all `V^T` single-codebook sequences of length
/// `steps`, by depth-first enumeration.
pub fn exhaustive_best(scorer: &dyn Scorer, prompt: &[Frame], steps: usize) -> Result<(Vec<u32>, f64)> {
    fn go(
        scorer: &dyn Scorer,
        prompt: &[Frame],
        prefix: &mut Vec<Frame>,
        score: f64,
        steps: usize,
        best: &mut (Vec<u32>, f64),
    ) -> Result<()> {
        if prefix.len() == steps {
            if score > best.1 {
                *best = (prefix.iter().map(|f| f.get(0).0).collect(), score);
            }
            return Ok(());
        }
        let dist = scorer.score(&ScorerContext::new(prompt, prefix))?.remove(0);
        for (x, &lp) in dist.values().iter().enumerate() {
            prefix.push(Frame::single(x as u32));
            go(scorer, prompt, prefix, score + lp, steps, best)?;
            prefix.pop();
        }
        Ok(())
    }
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    go(scorer, prompt, &mut Vec::new(), 0.0, steps, &mut best)?;
    Ok(best)
}

/// Penalty rule under test: `(dist, temporal, beamwise, alpha, beta)`.
pub type PenaltyRule<'a> = &'a (dyn Fn(&LogProbVector, &dyn TokenSet, &dyn TokenSet, f64, f64) -> Vec<f64> + Sync);

fn check_trad_bs(inst: &Instance, penalty: PenaltyRule<'_>) -> Result<Option<String>> {
    let scorer = inst.scorer();
    let got = trad_bs_with_penalty(&scorer, &inst.prompt, &inst.cfg, penalty)?;
    let want = reference_trad_bs(&scorer, &inst.prompt, &inst.cfg)?;
    let mut msg = String::new();
    for (i, (g, w)) in got.beams.iter().zip(&want).enumerate() {
        let g_frames: Vec<Vec<u32>> = g.frames.iter().map(|f| f.tokens().iter().map(|t| t.0).collect()).collect();
        if g_frames != w.frames
            || (g.cum_original - w.original).abs() > 1e-9
            || (g.cum_modified - w.modified).abs() > 1e-9
            || g.finished != w.finished
        {
            let _ = write!(
                msg,
                "beam {i}: decoder {g_frames:?} (orig {:.12}, mod {:.12}) vs reference {:?} (orig {:.12}, mod {:.12}); ",
                g.cum_original, g.cum_modified, w.frames, w.original, w.modified
            );
        }
    }
    if got.beams.len() != want.len() {
        let _ = write!(msg, "beam count {} vs {}", got.beams.len(), want.len());
    }
    Ok((!msg.is_empty()).then(|| format!("{inst:?}: {msg}")))
}

fn check_vanilla(rng: &mut ChaCha8Rng, limits: &OracleLimits) -> Result<Option<(usize, String)>> {
    let v = rng.random_range(2..=limits.vocab);
    let steps = rng.random_range(1..=limits.steps);
    let scorer = SeededContextScorer::new(rng.random(), rng.random_range(0.5..6.0), Vocabulary::single(v as u32, None));
    let prompt: Vec<Frame> = (0..rng.random_range(0..=1)).map(|_| Frame::single(rng.random_range(0..v as u32))).collect();
    let width = v.pow(steps as u32 - 1);
    let cfg = PenaltyConfig { beam_width: width, max_steps: steps, ..Default::default() };
    let res = vanilla_beam_search(&scorer, &prompt, &cfg, &VanillaOptions::default())?;
    let (seq, score) = exhaustive_best(&scorer, &prompt, steps)?;
    let top = &res.beams[0];
    let top_seq: Vec<u32> = top.stream(0).map(|t| t.0).collect();
    let ok = (top.cum_original - score).abs() <= 1e-9 && top_seq == seq;
    Ok((!ok).then(|| {
        (
            v.pow(steps as u32),
            format!("V={v} T={steps} prompt={prompt:?}: beam search {top_seq:?} ({:.12}) vs enumeration {seq:?} ({score:.12})", top.cum_original),
        )
    }))
}

fn check_penalty(rng: &mut ChaCha8Rng, limits: &OracleLimits, penalty: PenaltyRule<'_>) -> Option<(usize, String)> {
    let v = rng.random_range(1..=limits.vocab.max(4));
    let logits: Vec<f64> = (0..v).map(|_| rng.random_range(-8.0..8.0)).collect();
    let dist = normalize_logits(&logits).expect("finite logits");
    let temporal: BTreeSet<TokenId> = (0..v as u32).filter(|_| rng.random_bool(0.4)).map(TokenId).collect();
    let beamwise: BTreeSet<TokenId> = (0..v as u32).filter(|_| rng.random_bool(0.4)).map(TokenId).collect();
    let (alpha, beta) = match rng.random_range(0..4) {
        0 => (10.0, 3.0),
        1 => (15.0, 10.0),
        _ => (coefficient(rng), coefficient(rng)),
    };
    let got = penalty(&dist, &temporal, &beamwise, alpha, beta);
    for (x, &lp) in dist.values().iter().enumerate() {
        let tok = TokenId(x as u32);
        let want = match (temporal.contains(&tok), beamwise.contains(&tok)) {
            (true, false) => alpha * lp,
            (false, true) => beta * lp,
            (true, true) => alpha * beta * lp,
            (false, false) => lp,
        };
        if got[x] != want {
            return Some((
                temporal.len() + beamwise.len(),
                format!(
                    "log p = {lp}, temporal = {temporal:?}, beamwise = {beamwise:?}, alpha = {alpha}, beta = {beta}: \
                     token {x} scored {} instead of {want}",
                    got[x]
                ),
            ));
        }
    }
    None
}

pub fn oracle_check(limits: &OracleLimits, instances: usize, seed: u64) -> Result<OracleReport> {
    oracle_check_with(limits, instances, seed, &|d, t, b, alpha, beta| apply_repetition_penalty(d, t, b, alpha, beta))
}

/// As [`oracle_check`], but with `penalty` in place of the real penalty rule
/// inside the decoder and the branch check.
pub fn oracle_check_with(
    limits: &OracleLimits,
    instances: usize,
    seed: u64,
    penalty: PenaltyRule<'_>,
) -> Result<OracleReport> {
    limits.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vanilla = CheckOutcome::new("vanilla_bs_exhaustive");
    let mut trad = CheckOutcome::new("trad_bs_reference");
    let mut branches = CheckOutcome::new("penalty_branches");
    let (mut worst_v, mut worst_t, mut worst_p) = (None, None, None);
    for _ in 0..instances {
        vanilla.record(check_vanilla(&mut rng, limits)?, &mut worst_v);
        let inst = random_instance(&mut rng, limits);
        let size = inst.size();
        trad.record(check_trad_bs(&inst, penalty)?.map(|m| (size, m)), &mut worst_t);
        branches.record(check_penalty(&mut rng, limits, penalty), &mut worst_p);
    }
    vanilla.counterexample = worst_v.map(|w| w.1);
    trad.counterexample = worst_t.map(|w| w.1);
    branches.counterexample = worst_p.map(|w| w.1);
    Ok(OracleReport { limits: *limits, instances, seed, checks: vec![vanilla, trad, branches] })
}
