//! Sense-maintained span selection from token saliency.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::Rng;

/// Nonnegative per-token relevance scores aligned to word tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SaliencyVector(Vec<f64>);

impl SaliencyVector {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if let Some(bad) = scores.iter().find(|s| !s.is_finite() || **s < 0.0) {
            return Err(Error::BackendContractViolation(format!(
                "saliency score {bad} is not a finite nonnegative number"
            )));
        }
        Ok(SaliencyVector(scores))
    }

    pub fn scores(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Inclusive token interval `start..=end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, index: usize) -> bool {
        (self.start..=self.end).contains(&index)
    }

    pub fn check(&self, sentence_len: usize) -> Result<()> {
        if self.start > self.end || self.end >= sentence_len {
            return Err(Error::SpanOutOfRange {
                start: self.start,
                end: self.end,
                len: sentence_len,
            });
        }
        Ok(())
    }
}

/// Span bounded by the most salient token on each side of the target.
///
/// Ties go to the index closest to the target. A side with no tokens
/// collapses to the target itself.
pub fn sense_maintained_span(saliency: &SaliencyVector, target_index: usize) -> Span {
    let s = saliency.scores();
    assert!(target_index < s.len(), "target index outside saliency vector");

    let mut start = target_index;
    let mut best = f64::NEG_INFINITY;
    for i in (0..target_index).rev() {
        if s[i] > best {
            best = s[i];
            start = i;
        }
    }

    let mut end = target_index;
    let mut best = f64::NEG_INFINITY;
    for (i, &v) in s.iter().enumerate().skip(target_index + 1) {
        if v > best {
            best = v;
            end = i;
        }
    }
    Span { start, end }
}

/// Random span with length uniform in `1..=max(1, floor(len * max_fraction))`
/// and a uniform start among the positions where it fits.
pub fn random_span(sentence_len: usize, rng: &mut Rng, max_fraction: f64) -> Span {
    assert!(sentence_len >= 1, "empty sentence");
    assert!(
        max_fraction > 0.0 && max_fraction <= 1.0,
        "max_fraction must be in (0, 1]"
    );
    let max_len = ((sentence_len as f64 * max_fraction).floor() as usize).clamp(1, sentence_len);
    let len = rng.gen_range(1..=max_len);
    let start = rng.gen_range(0..=sentence_len - len);
    Span {
        start,
        end: start + len - 1,
    }
}
