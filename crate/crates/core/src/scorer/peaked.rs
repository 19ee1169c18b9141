use crate::error::{Error, Result};
use crate::types::{normalize_logits, LogProbVector, Vocabulary};

use super::{uniform, Scorer, ScorerContext};

/// Adversarial scorer that strongly prefers repeating the previous token of
/// each codebook. Greedy and beam search lock onto a constant sequence
/// under it.
#[derive(Debug, Clone)]
pub struct PeakedLoopScorer {
    stay_logit: f64,
    move_logit: f64,
    vocab: Vocabulary,
}

impl PeakedLoopScorer {
    pub fn new(stay_logit: f64, move_logit: f64, vocab: Vocabulary) -> Result<Self> {
        if !(stay_logit.is_finite() && move_logit.is_finite()) {
            return Err(Error::InvalidConfig("peaked loop logits must be finite".into()));
        }
        if stay_logit <= move_logit {
            return Err(Error::InvalidConfig(format!(
                "stay_logit ({stay_logit}) must exceed move_logit ({move_logit})"
            )));
        }
        vocab.validate()?;
        Ok(PeakedLoopScorer { stay_logit, move_logit, vocab })
    }
}

pub fn peaked_loop_scorer(stay_logit: f64, move_logit: f64, vocab: Vocabulary) -> Result<PeakedLoopScorer> {
    PeakedLoopScorer::new(stay_logit, move_logit, vocab)
}

impl Scorer for PeakedLoopScorer {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn score(&self, ctx: &ScorerContext<'_>) -> Result<Vec<LogProbVector>> {
        ctx.check_codebooks(self.vocab.num_codebooks())?;
        (0..self.vocab.num_codebooks())
            .map(|c| {
                let size = self.vocab.size(c);
                match ctx.history(c).next_back() {
                    None => Ok(uniform(size)),
                    Some(prev) => {
                        let mut logits = vec![self.move_logit; size];
                        logits[prev.index()] = self.stay_logit;
                        normalize_logits(&logits)
                    }
                }
            })
            .collect()
    }
}
