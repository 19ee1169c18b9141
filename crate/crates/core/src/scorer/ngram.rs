use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Frame, LogProbVector, TokenId, Vocabulary};

use super::{uniform, Scorer, ScorerContext};

const SCHEMA: &str = "tradbs.ngram/v1";

/// Add-k smoothed n-gram model over each codebook stream independently.
///
/// `p(x | ctx) = (count(ctx, x) + k) / (count(ctx) + k * |V|)` where `ctx`
/// is the previous `order - 1` tokens of the same codebook (prompt
/// included). Histories shorter than `order - 1` are treated as unseen
/// contexts and score uniformly.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    order: usize,
    add_k: f64,
    vocab: Vocabulary,
    /// Per codebook: context tuple -> per-token counts.
    counts: Vec<BTreeMap<Vec<u32>, Vec<u64>>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ContextCounts {
    context: Vec<u32>,
    counts: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    schema: String,
    order: usize,
    add_k: f64,
    vocab: Vocabulary,
    counts: Vec<Vec<ContextCounts>>,
}

/// Counts every length-`order` window of every codebook stream of every
/// corpus sequence.
pub fn ngram_train(corpus: &[Vec<Frame>], order: usize, add_k: f64, vocab: Vocabulary) -> Result<NGramModel> {
    if order == 0 {
        return Err(Error::InvalidConfig("n-gram order must be >= 1".into()));
    }
    if !(add_k > 0.0 && add_k.is_finite()) {
        return Err(Error::InvalidConfig(format!("add_k must be > 0, got {add_k}")));
    }
    vocab.validate()?;
    let cbs = vocab.num_codebooks();
    let mut counts = vec![BTreeMap::<Vec<u32>, Vec<u64>>::new(); cbs];
    let mut windows = 0usize;
    for seq in corpus {
        for frame in seq {
            vocab.check_frame(frame)?;
        }
        if seq.len() < order {
            continue;
        }
        for (c, table) in counts.iter_mut().enumerate() {
            let stream: Vec<u32> = seq.iter().map(|f| f.get(c).0).collect();
            for w in stream.windows(order) {
                let (ctx, next) = w.split_at(order - 1);
                let row = table.entry(ctx.to_vec()).or_insert_with(|| vec![0; vocab.size(c)]);
                row[next[0] as usize] += 1;
                windows += 1;
            }
        }
    }
    if windows == 0 {
        log::warn!("n-gram corpus has no windows of length {order}; model scores uniformly");
    }
    Ok(NGramModel { order, add_k, vocab, counts })
}

impl NGramModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn add_k(&self) -> f64 {
        self.add_k
    }

    pub fn count(&self, codebook: usize, context: &[u32], token: u32) -> u64 {
        self.counts[codebook].get(context).map_or(0, |row| row[token as usize])
    }

    /// Smoothed log-probabilities for one codebook given its context tuple.
    pub fn distribution(&self, codebook: usize, context: &[u32]) -> LogProbVector {
        let size = self.vocab.size(codebook);
        match self.counts[codebook].get(context) {
            None => uniform(size),
            Some(row) => {
                let total: u64 = row.iter().sum();
                let denom = total as f64 + self.add_k * size as f64;
                LogProbVector::from_raw_unchecked(
                    row.iter().map(|&n| ((n as f64 + self.add_k) / denom).ln()).collect(),
                )
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ModelFile {
            schema: SCHEMA.to_string(),
            order: self.order,
            add_k: self.add_k,
            vocab: self.vocab.clone(),
            counts: self
                .counts
                .iter()
                .map(|t| {
                    t.iter()
                        .map(|(context, counts)| ContextCounts { context: context.clone(), counts: counts.clone() })
                        .collect()
                })
                .collect(),
        };
        let mut text = serde_json::to_string_pretty(&file)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ModelFile = serde_json::from_str(&text)
            .map_err(|e| Error::parse(path, e.line(), format!("malformed n-gram model: {e}")))?;
        if file.schema != SCHEMA {
            return Err(Error::parse(path, 1, format!("unsupported schema {:?}", file.schema)));
        }
        if file.order == 0 || !file.add_k.is_finite() || file.add_k <= 0.0 {
            return Err(Error::parse(path, 1, "order must be >= 1 and add_k > 0"));
        }
        file.vocab.validate()?;
        if file.counts.len() != file.vocab.num_codebooks() {
            return Err(Error::parse(path, 1, "counts do not match the codebook count"));
        }
        let mut counts = Vec::with_capacity(file.counts.len());
        for (c, table) in file.counts.into_iter().enumerate() {
            let mut map = BTreeMap::new();
            for entry in table {
                if entry.context.len() != file.order - 1 || entry.counts.len() != file.vocab.size(c) {
                    return Err(Error::parse(path, 1, format!("bad count row in codebook {c}")));
                }
                if entry.context.iter().any(|&t| t as usize >= file.vocab.size(c)) {
                    return Err(Error::parse(path, 1, format!("context token out of range in codebook {c}")));
                }
                map.insert(entry.context, entry.counts);
            }
            counts.push(map);
        }
        Ok(NGramModel { order: file.order, add_k: file.add_k, vocab: file.vocab, counts })
    }
}

impl Scorer for NGramModel {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn score(&self, ctx: &ScorerContext<'_>) -> Result<Vec<LogProbVector>> {
        ctx.check_codebooks(self.vocab.num_codebooks())?;
        let need = self.order - 1;
        Ok((0..self.vocab.num_codebooks())
            .map(|c| {
                let mut context: Vec<u32> = ctx.history(c).rev().take(need).map(|t| t.0).collect();
                if context.len() < need {
                    return uniform(self.vocab.size(c));
                }
                context.reverse();
                self.distribution(c, &context)
            })
            .collect())
    }
}

/// Parses a corpus: one sequence per line, either whitespace-separated
/// integers (single codebook) or a JSON list of frames such as
/// `[[1,2],[3,4]]`. Blank lines are skipped.
pub fn parse_corpus(text: &str, path: &Path) -> Result<Vec<Vec<Frame>>> {
    let mut out = Vec::new();
    let mut codebooks = None;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let seq: Vec<Frame> = if line.starts_with('[') {
            let frames: Vec<Vec<u32>> = serde_json::from_str(line)
                .map_err(|e| Error::parse(path, lineno, format!("malformed frame list: {e}")))?;
            frames.into_iter().map(|f| Frame(f.into_iter().map(TokenId).collect())).collect()
        } else {
            line.split_whitespace()
                .map(|w| {
                    w.parse::<u32>()
                        .map(Frame::single)
                        .map_err(|_| Error::parse(path, lineno, format!("not a token id: {w:?}")))
                })
                .collect::<Result<_>>()?
        };
        for f in &seq {
            if f.codebooks() == 0 {
                return Err(Error::parse(path, lineno, "empty frame"));
            }
            match codebooks {
                None => codebooks = Some(f.codebooks()),
                Some(c) if c != f.codebooks() => {
                    return Err(Error::parse(
                        path,
                        lineno,
                        format!("frame has {} codebooks, corpus uses {c}", f.codebooks()),
                    ))
                }
                _ => {}
            }
        }
        out.push(seq);
    }
    Ok(out)
}

pub fn read_corpus(path: &Path) -> Result<Vec<Vec<Frame>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(tokens: &[u32]) -> Vec<Frame> {
        tokens.iter().map(|&t| Frame::single(t)).collect()
    }

    #[test]
    fn bigram_hand_counts() {
        // a=0, b=1; windows (a,b) x2, (b,a) x1
        let m = ngram_train(&[seq(&[0, 1, 0, 1])], 2, 1.0, Vocabulary::single(2, None)).unwrap();
        assert_eq!(m.count(0, &[0], 1), 2);
        assert_eq!(m.count(0, &[1], 0), 1);
        let d = m.score(&ScorerContext::new(&seq(&[0]), &[])).unwrap();
        assert!((d[0].values()[1] - 0.75f64.ln()).abs() < 1e-12);
        assert!((d[0].values()[0] - 0.25f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn unseen_context_uniform() {
        let m = ngram_train(&[seq(&[0, 1])], 2, 0.5, Vocabulary::single(4, None)).unwrap();
        let d = m.score(&ScorerContext::new(&seq(&[3]), &[])).unwrap();
        assert!(d[0].values().iter().all(|v| (v + 4f64.ln()).abs() < 1e-12));
        // history shorter than order - 1
        let d = m.score(&ScorerContext::new(&[], &[])).unwrap();
        assert!(d[0].values().iter().all(|v| (v + 4f64.ln()).abs() < 1e-12));
    }

    #[test]
    fn empty_corpus_is_uniform() {
        let m = ngram_train(&[], 3, 1.0, Vocabulary::single(3, None)).unwrap();
        let d = m.score(&ScorerContext::new(&seq(&[0, 1]), &[])).unwrap();
        assert!(d[0].values().iter().all(|v| (v + 3f64.ln()).abs() < 1e-12));
    }

    #[test]
    fn unigram_ignores_context() {
        let m = ngram_train(&[seq(&[0, 0, 0, 1])], 1, 1.0, Vocabulary::single(2, None)).unwrap();
        let a = m.score(&ScorerContext::new(&seq(&[0]), &[])).unwrap();
        let b = m.score(&ScorerContext::new(&seq(&[1, 1]), &[])).unwrap();
        assert_eq!(a, b);
        assert!((a[0].values()[0] - (4.0f64 / 6.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn generated_frames_extend_context() {
        let m = ngram_train(&[seq(&[0, 1, 0, 1])], 2, 1.0, Vocabulary::single(2, None)).unwrap();
        let d = m.score(&ScorerContext::new(&seq(&[1]), &seq(&[0]))).unwrap();
        assert!((d[0].values()[1] - 0.75f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn per_codebook_streams() {
        let corpus = vec![vec![Frame::new([0, 2]), Frame::new([1, 2]), Frame::new([0, 2])]];
        let m = ngram_train(&corpus, 2, 1.0, Vocabulary::uniform(2, 3)).unwrap();
        assert_eq!(m.count(0, &[0], 1), 1);
        assert_eq!(m.count(1, &[2], 2), 2);
    }

    #[test]
    fn rejects_bad_tokens_and_params() {
        assert!(ngram_train(&[seq(&[5])], 2, 1.0, Vocabulary::single(2, None)).is_err());
        assert!(ngram_train(&[], 0, 1.0, Vocabulary::single(2, None)).is_err());
        assert!(ngram_train(&[], 2, 0.0, Vocabulary::single(2, None)).is_err());
    }

    #[test]
    fn save_load_scores_identically() {
        let dir = tempfile::tempdir().unwrap();
        let m = ngram_train(&[seq(&[0, 1, 2, 3])], 2, 0.1, Vocabulary::single(4, Some(3))).unwrap();
        let p = dir.path().join("m.json");
        m.save(&p).unwrap();
        let back = NGramModel::load(&p).unwrap();
        assert_eq!(back, m);
        for t in 0..4 {
            let prompt = seq(&[t]);
            let ctx = ScorerContext::new(&prompt, &[]);
            assert_eq!(m.score(&ctx).unwrap(), back.score(&ctx).unwrap());
        }
    }

    #[test]
    fn corpus_formats() {
        let p = Path::new("c.txt");
        let c = parse_corpus("1 2 3\n\n4 5\n", p).unwrap();
        assert_eq!(c, vec![seq(&[1, 2, 3]), seq(&[4, 5])]);
        let c = parse_corpus("[[1,2],[3,4]]\n", p).unwrap();
        assert_eq!(c[0][1], Frame::new([3, 4]));
        assert!(matches!(parse_corpus("1 2\n3 x\n", p), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_corpus("[[1,2]]\n[[1]]\n", p), Err(Error::Parse { line: 2, .. })));
    }

    proptest! {
        #[test]
        fn every_context_normalised(
            corpus in prop::collection::vec(prop::collection::vec(0u32..5, 0..12), 0..6),
            order in 1usize..4,
            add_k in 0.01f64..3.0,
            ctx in prop::collection::vec(0u32..5, 0..4),
        ) {
            let corpus: Vec<Vec<Frame>> = corpus.iter().map(|s| seq(s)).collect();
            let m = ngram_train(&corpus, order, add_k, Vocabulary::single(5, None)).unwrap();
            let d = m.score(&ScorerContext::new(&seq(&ctx), &[])).unwrap();
            let total: f64 = d[0].probs().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            prop_assert!(d[0].probs().all(|p| p > 0.0));
        }
    }
}
