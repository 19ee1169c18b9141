//! Baseline stochastic decoders: greedy, top-k and top-p (nucleus) sampling.
//!
//! Per codebook and step the pipeline is temperature, optional temporal
//! repetition penalty, truncation, then one categorical draw. Draws use
//! `ChaCha8Rng::seed_from_u64(seed)` and inverse-CDF: a uniform `u` in
//! `[0, 1)` picks the first token (in id order) whose cumulative probability
//! exceeds `u`. Codebooks of a frame are drawn in index order from the same
//! stream, so a `(seed, params)` pair fixes the output on every platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::beams::{apply_repetition_penalty, score_checked, check_prompt, NoTokens, RepetitionWindow, TokenSet};
use crate::error::{Error, Result};
use crate::scorer::Scorer;
use crate::types::{argmax, log_softmax, Beam, Frame, LogProbVector, PenaltyConfig, TokenId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum Strategy {
    Greedy,
    TopK { k: usize },
    TopP { p: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    #[serde(flatten)]
    pub strategy: Strategy,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// Temporal repetition coefficient applied over the decoder's window.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temporal_alpha: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn default_temperature() -> f64 {
    1.0
}

impl SamplingParams {
    pub fn greedy() -> Self {
        Self::new(Strategy::Greedy)
    }

    pub fn top_k(k: usize) -> Self {
        Self::new(Strategy::TopK { k })
    }

    pub fn top_p(p: f64) -> Self {
        Self::new(Strategy::TopP { p })
    }

    fn new(strategy: Strategy) -> Self {
        SamplingParams { strategy, temperature: 1.0, temporal_alpha: None, seed: 0 }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.strategy {
            Strategy::Greedy => {}
            Strategy::TopK { k: 0 } => return Err(Error::InvalidConfig("top_k needs k >= 1".into())),
            Strategy::TopP { p } if !(p > 0.0 && p <= 1.0) => {
                return Err(Error::InvalidConfig(format!("top_p needs 0 < p <= 1, got {p}")))
            }
            _ => {}
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidConfig(format!("temperature must be > 0, got {}", self.temperature)));
        }
        if let Some(a) = self.temporal_alpha {
            if !(a >= 1.0 && a.is_finite()) {
                return Err(Error::InvalidConfig(format!("temporal_alpha must be >= 1, got {a}")));
            }
        }
        Ok(())
    }
}

/// Token ids sorted by descending log-probability, ties by lowest id.
fn ranked(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

fn keep_only(values: &[f64], kept: &[usize]) -> LogProbVector {
    let mut masked = vec![f64::NEG_INFINITY; values.len()];
    for &i in kept {
        masked[i] = values[i];
    }
    LogProbVector::from_raw_unchecked(log_softmax(&masked))
}

/// Keeps the `k` most probable tokens and renormalises; the rest get `-inf`.
pub fn truncate_top_k(dist: &LogProbVector, k: usize) -> Result<LogProbVector> {
    if k == 0 || k > dist.len() {
        return Err(Error::InvalidConfig(format!("k = {k} outside 1..={}", dist.len())));
    }
    let order = ranked(dist.values());
    Ok(keep_only(dist.values(), &order[..k]))
}

/// Keeps the shortest probability-sorted prefix whose mass reaches `p`.
pub fn truncate_top_p(dist: &LogProbVector, p: f64) -> Result<LogProbVector> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidConfig(format!("p = {p} outside (0, 1]")));
    }
    let order = ranked(dist.values());
    let mut mass = 0.0;
    let mut keep = order.len();
    for (n, &i) in order.iter().enumerate() {
        mass += dist.values()[i].exp();
        if mass >= p {
            keep = n + 1;
            break;
        }
    }
    Ok(keep_only(dist.values(), &order[..keep]))
}

/// Inverse-CDF draw over a (possibly truncated) distribution.
pub fn draw<R: Rng + ?Sized>(dist: &LogProbVector, rng: &mut R) -> Result<TokenId> {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut last_live = None;
    for (i, p) in dist.probs().enumerate() {
        if p <= 0.0 {
            continue;
        }
        cum += p;
        last_live = Some(i);
        if u < cum {
            return Ok(TokenId(i as u32));
        }
    }
    // u fell into the rounding gap above the final cumulative sum
    last_live.map(|i| TokenId(i as u32)).ok_or(Error::EmptySupport)
}

/// The distribution a strategy draws from, after temperature, penalty and
/// truncation. Greedy returns the penalised distribution untruncated.
pub fn sampling_distribution<T: TokenSet + ?Sized>(
    dist: &LogProbVector,
    params: &SamplingParams,
    recent: &T,
) -> Result<LogProbVector> {
    let mut values = dist.values().to_vec();
    if params.temperature != 1.0 {
        values = log_softmax(&values.iter().map(|v| v / params.temperature).collect::<Vec<_>>());
    }
    if let Some(alpha) = params.temporal_alpha {
        let scaled = LogProbVector::from_raw_unchecked(values);
        values = log_softmax(&apply_repetition_penalty(&scaled, recent, &NoTokens, alpha, 1.0));
    }
    let tempered = LogProbVector::from_raw_unchecked(values);
    match params.strategy {
        Strategy::Greedy => Ok(tempered),
        Strategy::TopK { k } => truncate_top_k(&tempered, k),
        Strategy::TopP { p } => truncate_top_p(&tempered, p),
    }
}

/// Picks one token for one codebook.
pub fn sample_step<T, R>(dist: &LogProbVector, params: &SamplingParams, recent: &T, rng: &mut R) -> Result<TokenId>
where
    T: TokenSet + ?Sized,
    R: Rng + ?Sized,
{
    let d = sampling_distribution(dist, params, recent)?;
    match params.strategy {
        Strategy::Greedy => Ok(argmax(d.values())),
        _ => draw(&d, rng),
    }
}

/// Runs one sampling decode. Only `penalty.window` and `penalty.max_steps`
/// are read from `penalty`; the RNG seed comes from `params`.
///
/// `step_logps` hold the scorer's original log-probabilities of the chosen
/// tokens, before temperature, penalty or truncation.
pub fn sample_decode<S: Scorer + ?Sized>(
    scorer: &S,
    prompt: &[Frame],
    params: &SamplingParams,
    penalty: &PenaltyConfig,
) -> Result<Beam> {
    params.validate()?;
    if penalty.max_steps == 0 {
        return Err(Error::InvalidConfig("max_steps must be >= 1".into()));
    }
    let vocab = scorer.vocab();
    check_prompt(vocab, prompt)?;
    let cbs = vocab.num_codebooks();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut window = RepetitionWindow::new(cbs, penalty.window);
    let mut beam = Beam::new(prompt.len());

    for step in 0..penalty.max_steps {
        let dists = score_checked(scorer, prompt, &beam.frames).map_err(|e| e.at(step, 0))?;
        let mut tokens = Vec::with_capacity(cbs);
        let mut logps = Vec::with_capacity(cbs);
        let mut modified = 0.0;
        for (c, dist) in dists.iter().enumerate() {
            let recent = window.codebook(c);
            let tok = sample_step(dist, params, recent, &mut rng).map_err(|e| e.at(step, 0))?;
            let lp = dist.get(tok);
            modified += match params.temporal_alpha {
                Some(alpha) if recent.contains_token(tok) => alpha * lp,
                _ => lp,
            };
            tokens.push(tok);
            logps.push(lp);
        }
        let frame = Frame(tokens);
        window.advance(&frame);
        let finished = vocab.is_eos(&frame);
        beam.push(frame, logps, modified, finished);
        if finished {
            break;
        }
    }
    Ok(beam)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorer::{PeakedLoopScorer, TableScorer};
    use crate::types::Vocabulary;
    use proptest::prelude::*;

    fn dist(probs: &[f64]) -> LogProbVector {
        LogProbVector::from_log_probs(probs.iter().map(|p| p.ln()).collect()).unwrap()
    }

    fn probs(d: &LogProbVector) -> Vec<f64> {
        d.probs().collect()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
    }

    const BASE: [f64; 4] = [0.5, 0.3, 0.15, 0.05];

    #[test]
    fn top_k_renormalises() {
        let d = dist(&BASE);
        assert!(close(&probs(&truncate_top_k(&d, 2).unwrap()), &[0.625, 0.375, 0.0, 0.0], 1e-12));
        assert!(close(&probs(&truncate_top_k(&d, 4).unwrap()), &BASE, 1e-12));
        assert!(close(&probs(&truncate_top_k(&d, 1).unwrap()), &[1.0, 0.0, 0.0, 0.0], 1e-12));
        assert!(truncate_top_k(&d, 0).is_err());
        assert!(truncate_top_k(&d, 5).is_err());
    }

    #[test]
    fn top_k_boundary_tie_goes_low() {
        let d = dist(&[0.2, 0.4, 0.2, 0.2]);
        assert!(close(&probs(&truncate_top_k(&d, 2).unwrap()), &[1.0 / 3.0, 2.0 / 3.0, 0.0, 0.0], 1e-12));
    }

    #[test]
    fn top_p_prefix() {
        let d = dist(&BASE);
        let expect = [0.5 / 0.95, 0.3 / 0.95, 0.15 / 0.95, 0.0];
        assert!(close(&probs(&truncate_top_p(&d, 0.9).unwrap()), &expect, 1e-12));
        assert!(close(&probs(&truncate_top_p(&d, 1.0).unwrap()), &BASE, 1e-12));
        assert!(close(&probs(&truncate_top_p(&d, 0.4).unwrap()), &[1.0, 0.0, 0.0, 0.0], 1e-12));
        assert!(truncate_top_p(&d, 0.0).is_err());
        assert!(truncate_top_p(&d, 1.5).is_err());
    }

    #[test]
    fn greedy_and_k1_are_argmax() {
        let d = dist(&[0.1, 0.7, 0.2]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            assert_eq!(sample_step(&d, &SamplingParams::greedy(), &NoTokens, &mut rng).unwrap(), TokenId(1));
            assert_eq!(sample_step(&d, &SamplingParams::top_k(1), &NoTokens, &mut rng).unwrap(), TokenId(1));
        }
    }

    #[test]
    fn temporal_penalty_on_sampling_path() {
        let d = dist(&[0.6, 0.4]);
        let mut params = SamplingParams::greedy();
        params.temporal_alpha = Some(10.0);
        let recent = [TokenId(0)];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_step(&d, &params, &recent[..], &mut rng).unwrap(), TokenId(1));
    }

    #[test]
    fn temperature_sharpens() {
        let d = dist(&[0.6, 0.4]);
        let mut params = SamplingParams::top_k(2);
        params.temperature = 0.5;
        let t = sampling_distribution(&d, &params, &NoTokens).unwrap();
        let expected = 0.36 / (0.36 + 0.16);
        assert!((t.values()[0].exp() - expected).abs() < 1e-12);
    }

    #[test]
    fn greedy_collapses_on_peaked_loop() {
        let scorer = PeakedLoopScorer::new(5.0, 0.0, Vocabulary::single(4, None)).unwrap();
        let cfg = PenaltyConfig { max_steps: 20, ..Default::default() };
        let beam = sample_decode(&scorer, &[], &SamplingParams::greedy(), &cfg).unwrap();
        assert_eq!(beam.len(), 20);
        assert!(beam.stream(0).all(|t| t == TokenId(0)));
    }

    #[test]
    fn seeded_runs_repeat() {
        let scorer = crate::scorer::SeededContextScorer::new(11, 2.0, Vocabulary::uniform(2, 6));
        let cfg = PenaltyConfig { max_steps: 30, ..Default::default() };
        let params = SamplingParams::top_p(0.9).with_seed(42);
        let a = sample_decode(&scorer, &[], &params, &cfg).unwrap();
        let b = sample_decode(&scorer, &[], &params, &cfg).unwrap();
        assert_eq!(a, b);
        let c = sample_decode(&scorer, &[], &params.with_seed(43), &cfg).unwrap();
        assert_ne!(a.frames, c.frames);
    }

    #[test]
    fn step_logps_are_original() {
        let scorer = TableScorer::from_rows(vec![vec![0.0, 1.0, 2.0]; 4]).unwrap();
        let cfg = PenaltyConfig { max_steps: 4, window: 2, ..Default::default() };
        let mut params = SamplingParams::top_k(2).with_seed(5);
        params.temperature = 0.3;
        params.temporal_alpha = Some(5.0);
        let beam = sample_decode(&scorer, &[], &params, &cfg).unwrap();
        let row = crate::types::normalize_logits(&[0.0, 1.0, 2.0]).unwrap();
        for (f, lps) in beam.frames.iter().zip(&beam.step_logps) {
            assert_eq!(lps[0], row.get(f.get(0)));
        }
    }

    #[test]
    fn stops_at_eos() {
        let trace = crate::scorer::ReplayTrace { steps: vec![vec![vec![0.0, 9.0]]; 5] };
        let scorer = TableScorer::new(&trace, &[Some(1)]).unwrap();
        let beam = sample_decode(&scorer, &[], &SamplingParams::greedy(), &PenaltyConfig::default()).unwrap();
        assert_eq!(beam.len(), 1);
        assert!(beam.finished);
    }

    #[test]
    fn params_validation() {
        assert!(SamplingParams::top_k(0).validate().is_err());
        assert!(SamplingParams::top_p(0.0).validate().is_err());
        let mut p = SamplingParams::greedy();
        p.temperature = 0.0;
        assert!(p.validate().is_err());
        p.temperature = 1.0;
        p.temporal_alpha = Some(0.5);
        assert!(p.validate().is_err());
    }

    #[test]
    fn params_serde_shape() {
        let p: SamplingParams = serde_json::from_str(r#"{"strategy":"top_p","p":0.9,"seed":3}"#).unwrap();
        assert_eq!(p.strategy, super::Strategy::TopP { p: 0.9 });
        assert_eq!(p.temperature, 1.0);
        assert_eq!(p.seed, 3);
        assert!(serde_json::from_str::<SamplingParams>(r#"{"strategy":"top_p"}"#).is_err());
    }

    /// Chi-square goodness of fit, 3 degrees of freedom, alpha = 0.001.
    #[test]
    fn untruncated_draws_match_distribution() {
        const CRITICAL_DF3_P001: f64 = 16.266;
        let d = dist(&BASE);
        let params = SamplingParams::top_k(4);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[sample_step(&d, &params, &NoTokens, &mut rng).unwrap().index()] += 1;
        }
        let chi2: f64 = counts
            .iter()
            .zip(BASE)
            .map(|(&o, p)| {
                let e = p * n as f64;
                (o as f64 - e).powi(2) / e
            })
            .sum();
        assert!(chi2 < CRITICAL_DF3_P001, "chi2 = {chi2}, counts = {counts:?}");
    }

    proptest! {
        #[test]
        fn truncation_keeps_sub_distribution(
            logits in prop::collection::vec(-6.0f64..6.0, 1..10),
            k_frac in 0.0f64..1.0,
            p in 0.01f64..1.0,
        ) {
            let d = crate::types::normalize_logits(&logits).unwrap();
            let k = 1 + ((d.len() - 1) as f64 * k_frac) as usize;
            for t in [truncate_top_k(&d, k).unwrap(), truncate_top_p(&d, p).unwrap()] {
                prop_assert!((t.probs().sum::<f64>() - 1.0).abs() < 1e-9);
                let kept: Vec<usize> = (0..d.len()).filter(|&i| t.values()[i] > f64::NEG_INFINITY).collect();
                let mass: f64 = kept.iter().map(|&i| d.values()[i].exp()).sum();
                for &i in &kept {
                    prop_assert!((t.values()[i].exp() - d.values()[i].exp() / mass).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn identity_truncations(logits in prop::collection::vec(-6.0f64..6.0, 1..10)) {
            let d = crate::types::normalize_logits(&logits).unwrap();
            for t in [truncate_top_k(&d, d.len()).unwrap(), truncate_top_p(&d, 1.0).unwrap()] {
                for (a, b) in t.values().iter().zip(d.values()) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }
}
