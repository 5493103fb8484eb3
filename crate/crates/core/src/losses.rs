//! Training objectives.

use alloc::vec::Vec;

use crate::config::MinltMode;
use crate::error::{Error, Result};
use crate::numerics::{Real, Tape, Tensor, Var};

/// Mean negative log-likelihood of `targets` under row-wise `logits`.
pub fn cross_entropy<R: Real>(tape: &mut Tape<'_, R>, logits: Var, targets: &[usize], what: &'static str) -> Result<Var> {
    if targets.is_empty() {
        return Err(Error::EmptyInput(what));
    }
    let lp = tape.log_softmax(logits);
    let picked = tape.pick(lp, targets)?;
    let m = tape.mean(picked);
    Ok(tape.scale(m, -R::one()))
}

/// Language-model loss over the supervised positions.
pub fn loss_llm<R: Real>(tape: &mut Tape<'_, R>, logits: Var, targets: &[usize]) -> Result<Var> {
    cross_entropy(tape, logits, targets, "loss_llm")
}

/// Policy decoder loss over its `L-1` steps.
pub fn loss_mocha<R: Real>(tape: &mut Tape<'_, R>, logits: Var, targets: &[usize]) -> Result<Var> {
    cross_entropy(tape, logits, targets, "loss_mocha")
}

/// Latency loss from attend marginals `alpha` (one `1×N` row per step
/// `2..=L`) and gold boundaries `b_2..b_L` (1-based frames), normalized by `L`.
pub fn loss_minlt<R: Real>(tape: &mut Tape<'_, R>, alpha: &[Var], boundaries: &[usize], mode: MinltMode, l: usize) -> Result<Var> {
    if alpha.is_empty() || alpha.len() != boundaries.len() {
        return Err(Error::Shape {
            op: "loss_minlt",
            detail: alloc::format!("{} alpha rows for {} boundaries", alpha.len(), boundaries.len()),
        });
    }
    let a = tape.concat_rows(alpha)?;
    let (steps, n) = tape.value(a).dims2();
    if let Some(&bad) = boundaries.iter().find(|&&b| b == 0 || b > n) {
        return Err(Error::Bounds { index: bad, bound: n });
    }
    let terms = match mode {
        MinltMode::ExpectedBoundary => {
            let j = tape.constant(Tensor::matrix(n, 1, (1..=n).map(|j| R::of(j as f64)).collect())?);
            let m = tape.matmul(a, j)?;
            let b = tape.constant(Tensor::matrix(steps, 1, boundaries.iter().map(|&b| R::of(b as f64)).collect())?);
            tape.sub(m, b)?
        }
        MinltMode::Literal => {
            let mut jm = Vec::with_capacity(steps * n);
            let mut bm = Vec::with_capacity(steps * n);
            for &b in boundaries {
                for j in 1..=n {
                    jm.push(R::of(j as f64));
                    bm.push(R::of(b as f64));
                }
            }
            let j = tape.constant(Tensor::matrix(steps, n, jm)?);
            let b = tape.constant(Tensor::matrix(steps, n, bm)?);
            let ja = tape.mul(a, j)?;
            tape.sub(ja, b)?
        }
    };
    let abs = tape.abs(terms);
    let s = tape.sum(abs);
    Ok(tape.scale(s, R::of(1.0 / l as f64)))
}

/// Loss components and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBundle {
    pub l_llm: f64,
    pub l_mocha: f64,
    pub l_minlt: f64,
    pub l_total: f64,
    pub lambda: f64,
}

/// `l_total = l_llm + l_mocha + λ·l_minlt`.
pub fn loss_total(l_llm: f64, l_mocha: f64, l_minlt: f64, lambda: f64) -> LossBundle {
    LossBundle {
        l_llm,
        l_mocha,
        l_minlt,
        l_total: l_llm + l_mocha + lambda * l_minlt,
        lambda,
    }
}

impl LossBundle {
    pub fn is_finite(&self) -> bool {
        self.l_llm.is_finite() && self.l_mocha.is_finite() && self.l_minlt.is_finite() && self.l_total.is_finite()
    }
}
