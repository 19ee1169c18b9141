use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::scorer::{ngram_train, read_corpus, NGramModel};
use crate::types::{Codebook, TokenId, Vocabulary};

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub corpus: PathBuf,
    pub order: usize,
    pub add_k: f64,
    pub output: PathBuf,
    /// Size of every codebook; inferred as `max token + 1` when absent.
    pub vocab_size: Option<u32>,
    /// EOS token of codebook 0.
    pub eos: Option<u32>,
}

/// Trains an n-gram model from a corpus file and writes it as JSON.
pub fn train_ngram_cmd(opts: &TrainOptions) -> Result<NGramModel> {
    let corpus = read_corpus(&opts.corpus)?;
    let codebooks = corpus.iter().flatten().next().map_or(1, |f| f.codebooks());
    let mut sizes = vec![0u32; codebooks];
    for frame in corpus.iter().flatten() {
        for (c, t) in frame.tokens().iter().enumerate() {
            sizes[c] = sizes[c].max(t.0 + 1);
        }
    }
    if let Some(eos) = opts.eos {
        sizes[0] = sizes[0].max(eos + 1);
    }
    let vocab = Vocabulary::new(
        sizes
            .iter()
            .enumerate()
            .map(|(c, &inferred)| {
                let size = opts.vocab_size.unwrap_or(inferred.max(1));
                Codebook { size, eos: if c == 0 { opts.eos.map(TokenId) } else { None } }
            })
            .collect(),
    )?;
    if let Some(v) = opts.vocab_size {
        if let Some(&max) = sizes.iter().max().filter(|&&m| m > v) {
            return Err(Error::InvalidConfig(format!("corpus token {} exceeds vocab size {v}", max - 1)));
        }
    }
    let model = ngram_train(&corpus, opts.order, opts.add_k, vocab)?;
    model.save(&opts.output)?;
    Ok(model)
}
