use crate::error::Result;
use crate::types::{normalize_logits, LogProbVector, Vocabulary};

use super::{Scorer, ScorerContext};

/// Context-dependent pseudo-random scorer.
///
/// Logits are a pure function of `(seed, full history, codebook, token)`
/// drawn uniformly from `[-spread, spread]`. Different histories get
/// unrelated distributions, which makes it the workhorse for randomised
/// oracle checks where a position-indexed table would be too easy.
#[derive(Debug, Clone)]
pub struct SeededContextScorer {
    seed: u64,
    spread: f64,
    vocab: Vocabulary,
}

impl SeededContextScorer {
    pub fn new(seed: u64, spread: f64, vocab: Vocabulary) -> Self {
        SeededContextScorer { seed, spread, vocab }
    }
}

// splitmix64 finaliser
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Scorer for SeededContextScorer {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn score(&self, ctx: &ScorerContext<'_>) -> Result<Vec<LogProbVector>> {
        let cbs = self.vocab.num_codebooks();
        ctx.check_codebooks(cbs)?;
        let mut h = mix(self.seed);
        for frame in ctx.prompt.iter().chain(ctx.generated) {
            for tok in frame.tokens() {
                h = mix(h ^ (tok.0 as u64 + 1));
            }
            h = mix(h ^ 0xf00d);
        }
        (0..cbs)
            .map(|c| {
                let logits: Vec<f64> = (0..self.vocab.size(c) as u64)
                    .map(|x| {
                        let r = mix(h ^ ((c as u64) << 32 | x));
                        let u = (r >> 11) as f64 / (1u64 << 53) as f64;
                        self.spread * (2.0 * u - 1.0)
                    })
                    .collect();
                normalize_logits(&logits)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Frame;

    #[test]
    fn deterministic_and_context_sensitive() {
        let s = SeededContextScorer::new(7, 3.0, Vocabulary::uniform(2, 5));
        let a = [Frame::new([0, 1])];
        let b = [Frame::new([1, 0])];
        let da = s.score(&ScorerContext::new(&[], &a)).unwrap();
        let da2 = s.score(&ScorerContext::new(&[], &a)).unwrap();
        let db = s.score(&ScorerContext::new(&[], &b)).unwrap();
        assert_eq!(da, da2);
        assert_ne!(da, db);
        assert_eq!(da.len(), 2);
    }
}
