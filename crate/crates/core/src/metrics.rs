//! Collapse and diversity metrics.
//!
//! Temporal collapse shows up as a high repetition rate and long constant
//! runs; beam-wise collapse as small pairwise edit distances and duplicate
//! beams. Rates aggregate uniformly over codebooks and edit distances work
//! on whole frames.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Beam, Frame};

/// Fraction of `(step, codebook)` positions from the second step on whose
/// token already occurs among the previous `min(window, t - 1)` tokens of
/// the same codebook.
pub fn temporal_repetition_rate(frames: &[Frame], window: usize) -> Result<f64> {
    if window == 0 {
        return Err(Error::Undefined("repetition window must be >= 1".into()));
    }
    if frames.len() < 2 {
        return Err(Error::Undefined(format!("repetition rate needs >= 2 steps, got {}", frames.len())));
    }
    let cbs = frames[0].codebooks();
    let mut repeats = 0usize;
    let mut total = 0usize;
    for t in 1..frames.len() {
        let lo = t.saturating_sub(window);
        for c in 0..cbs {
            let tok = frames[t].get(c);
            if frames[lo..t].iter().any(|f| f.get(c) == tok) {
                repeats += 1;
            }
            total += 1;
        }
    }
    Ok(repeats as f64 / total as f64)
}

/// Length of the longest run of consecutive equal frames; 0 for an empty
/// sequence.
pub fn longest_constant_run(frames: &[Frame]) -> usize {
    let mut best = 0;
    let mut run = 0;
    for (i, f) in frames.iter().enumerate() {
        run = if i > 0 && frames[i - 1] == *f { run + 1 } else { 1 };
        best = best.max(run);
    }
    best
}

/// Unique n-grams of frames over total n-grams.
pub fn distinct_n(frames: &[Frame], n: usize) -> Result<f64> {
    if n == 0 || frames.len() < n {
        return Err(Error::Undefined(format!("distinct-{n} needs >= {n} frames, got {}", frames.len())));
    }
    let grams: Vec<&[Frame]> = frames.windows(n).collect();
    let unique: HashSet<&[Frame]> = grams.iter().copied().collect();
    Ok(unique.len() as f64 / grams.len() as f64)
}

/// Unit-cost Levenshtein distance over frames.
pub fn edit_distance(a: &[Frame], b: &[Frame]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, fa) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, fb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(fa != fb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Levenshtein distance over frames divided by the longer length.
pub fn normalized_edit_distance(a: &[Frame], b: &[Frame]) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 0.0;
    }
    edit_distance(a, b) as f64 / longest as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamDistances {
    /// Symmetric, zero diagonal, entries in `[0, 1]`.
    pub matrix: Vec<Vec<f64>>,
    /// Beams at distance 0 from some lower-indexed beam.
    pub duplicate_beam_count: usize,
}

pub fn pairwise_beam_distance(sequences: &[&[Frame]]) -> BeamDistances {
    let n = sequences.len();
    let mut matrix = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = normalized_edit_distance(sequences[i], sequences[j]);
            matrix[i][j] = d;
            matrix[j][i] = d;
        }
    }
    let duplicate_beam_count = (1..n).filter(|&j| (0..j).any(|i| matrix[i][j] == 0.0)).count();
    BeamDistances { matrix, duplicate_beam_count }
}

/// Metrics of one generated sequence. Rates that are undefined for short
/// sequences are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceMetrics {
    pub temporal_repetition_rate: Option<f64>,
    pub longest_constant_run: usize,
    pub distinct_1: Option<f64>,
    pub distinct_2: Option<f64>,
}

pub fn sequence_metrics(frames: &[Frame], window: usize) -> SequenceMetrics {
    SequenceMetrics {
        temporal_repetition_rate: temporal_repetition_rate(frames, window).ok(),
        longest_constant_run: longest_constant_run(frames),
        distinct_1: distinct_n(frames, 1).ok(),
        distinct_2: distinct_n(frames, 2).ok(),
    }
}

/// When a run counts as collapsed. `duplicate_beams = None` means `B - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollapseThresholds {
    pub window: usize,
    pub longest_run: usize,
    pub duplicate_beams: Option<usize>,
}

impl Default for CollapseThresholds {
    fn default() -> Self {
        CollapseThresholds { window: 50, longest_run: 20, duplicate_beams: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseReport {
    pub window: usize,
    pub beams: Vec<SequenceMetrics>,
    pub distances: Vec<Vec<f64>>,
    pub duplicate_beam_count: usize,
    pub cum_original: Vec<f64>,
    pub temporal_collapse: bool,
    pub diversity_collapse: bool,
}

pub fn collapse_report(beams: &[Beam], thresholds: &CollapseThresholds) -> CollapseReport {
    let window = thresholds.window.max(1);
    let per_beam: Vec<SequenceMetrics> = beams.iter().map(|b| sequence_metrics(&b.frames, window)).collect();
    let seqs: Vec<&[Frame]> = beams.iter().map(|b| b.frames.as_slice()).collect();
    let dist = pairwise_beam_distance(&seqs);
    let dup_limit = thresholds.duplicate_beams.unwrap_or(beams.len().saturating_sub(1));
    CollapseReport {
        window,
        temporal_collapse: per_beam.iter().any(|m| m.longest_constant_run >= thresholds.longest_run),
        diversity_collapse: beams.len() > 1 && dist.duplicate_beam_count >= dup_limit,
        beams: per_beam,
        distances: dist.matrix,
        duplicate_beam_count: dist.duplicate_beam_count,
        cum_original: beams.iter().map(|b| b.cum_original).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(tokens: &[u32]) -> Vec<Frame> {
        tokens.iter().map(|&t| Frame::single(t)).collect()
    }

    #[test]
    fn repetition_rate_examples() {
        assert_eq!(temporal_repetition_rate(&seq(&[0, 0, 0, 0]), 2).unwrap(), 1.0);
        assert_eq!(temporal_repetition_rate(&seq(&[0, 1, 2, 3]), 3).unwrap(), 0.0);
        assert_eq!(temporal_repetition_rate(&seq(&[0, 1, 0]), 1).unwrap(), 0.0);
        assert_eq!(temporal_repetition_rate(&seq(&[0, 1, 0]), 2).unwrap(), 0.5);
        assert!(temporal_repetition_rate(&seq(&[0]), 2).is_err());
        assert!(temporal_repetition_rate(&seq(&[0, 0]), 0).is_err());
    }

    #[test]
    fn repetition_rate_per_codebook() {
        let f = vec![Frame::new([0, 5]), Frame::new([0, 6])];
        assert_eq!(temporal_repetition_rate(&f, 1).unwrap(), 0.5);
    }

    #[test]
    fn constant_runs() {
        assert_eq!(longest_constant_run(&seq(&[0, 0, 0, 1])), 3);
        assert_eq!(longest_constant_run(&seq(&[0, 1, 2])), 1);
        assert_eq!(longest_constant_run(&seq(&[0, 1, 1, 1, 1, 2])), 4);
    }

    #[test]
    fn edit_distances() {
        let a = seq(&[0, 1, 2]);
        let b = seq(&[0, 1, 3]);
        let c = seq(&[0, 1]);
        assert!((normalized_edit_distance(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
        assert!((normalized_edit_distance(&c, &a) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(edit_distance(&seq(&[0, 1, 2, 3]), &seq(&[1, 2, 3, 4])), 2);
        assert_eq!(edit_distance(&[], &a), 3);
        let same = pairwise_beam_distance(&[&a, &a, &a]);
        assert_eq!(same.duplicate_beam_count, 2);
        assert!(same.matrix.iter().flatten().all(|&d| d == 0.0));
    }

    #[test]
    fn distinct_examples() {
        assert_eq!(distinct_n(&seq(&[0, 0, 0, 0]), 1).unwrap(), 0.25);
        assert_eq!(distinct_n(&seq(&[0, 1, 2, 3]), 1).unwrap(), 1.0);
        assert!((distinct_n(&seq(&[0, 1, 0, 1]), 2).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!(distinct_n(&seq(&[0]), 2).is_err());
    }

    #[test]
    fn report_flags() {
        let mk = |toks: &[u32]| {
            let mut b = Beam::new(0);
            for &t in toks {
                b.push(Frame::single(t), vec![-1.0], -1.0, false);
            }
            b
        };
        let beams = vec![mk(&[0; 25]), mk(&[0; 25]), mk(&[1; 25])];
        let r = collapse_report(&beams, &CollapseThresholds::default());
        assert!(r.temporal_collapse);
        assert_eq!(r.duplicate_beam_count, 1);
        assert!(!r.diversity_collapse);
        assert_eq!(r.cum_original, vec![-25.0; 3]);
    }

    proptest! {
        #[test]
        fn metric_ranges_and_relations(
            toks in prop::collection::vec(0u32..4, 2..30),
            other in prop::collection::vec(0u32..4, 0..30),
            l in 1usize..10,
        ) {
            let s = seq(&toks);
            let r = temporal_repetition_rate(&s, l).unwrap();
            let r_next = temporal_repetition_rate(&s, l + 1).unwrap();
            prop_assert!((0.0..=1.0).contains(&r));
            prop_assert!(r_next >= r);
            let d1 = distinct_n(&s, 1).unwrap();
            prop_assert!((0.0..=1.0).contains(&d1));
            prop_assert_eq!(longest_constant_run(&s) == s.len(), d1 == 1.0 / s.len() as f64);
            let o = seq(&other);
            let m = pairwise_beam_distance(&[&s, &o]);
            prop_assert_eq!(m.matrix[0][1], m.matrix[1][0]);
            prop_assert!((0.0..=1.0).contains(&m.matrix[0][1]));
            prop_assert_eq!(m.matrix[0][0], 0.0);
        }
    }
}
