//! Fixtures shared by the criterion benchmarks.

use tradbs_core::scorer::{ngram_train, NGramModel, SeededContextScorer};
use tradbs_core::{Frame, Vocabulary};

/// Codec-sized context scorer: `codebooks` codebooks of `size` tokens.
pub fn codec_scorer(codebooks: usize, size: u32) -> SeededContextScorer {
    SeededContextScorer::new(0x5eed, 3.0, Vocabulary::uniform(codebooks, size))
}

/// Trigram model over a pseudo-random corpus of `len` tokens.
pub fn trigram(size: u32, len: usize) -> NGramModel {
    let mut x: u64 = 0x2545_f491_4f6c_dd1d;
    let seq: Vec<Frame> = (0..len)
        .map(|_| {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            Frame::single((x % size as u64) as u32)
        })
        .collect();
    ngram_train(&[seq], 3, 0.1, Vocabulary::single(size, None)).expect("valid corpus")
}
