//! Error rates.

use alloc::vec;
use alloc::vec::Vec;

use crate::config::{BOS, EOS};

/// Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn strip(tokens: &[usize]) -> Vec<usize> {
    tokens.iter().copied().filter(|&t| t != BOS && t != EOS).collect()
}

/// Error counts of one reference/hypothesis pair (BOS and EOS ignored).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ErrorCount {
    pub errors: usize,
    pub ref_len: usize,
}

impl ErrorCount {
    pub fn of(reference: &[usize], hypothesis: &[usize]) -> Self {
        let (r, h) = (strip(reference), strip(hypothesis));
        ErrorCount {
            errors: edit_distance(&r, &h),
            ref_len: r.len(),
        }
    }

    pub fn add(self, other: ErrorCount) -> Self {
        ErrorCount {
            errors: self.errors + other.errors,
            ref_len: self.ref_len + other.ref_len,
        }
    }

    /// Errors over reference length; an empty reference counts the
    /// hypothesis length over 1.
    pub fn rate(self) -> f64 {
        self.errors as f64 / self.ref_len.max(1) as f64
    }
}

/// Character error rate of one pair.
pub fn cer(reference: &[usize], hypothesis: &[usize]) -> f64 {
    ErrorCount::of(reference, hypothesis).rate()
}
