use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamStore};
use super::real::Real;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Central difference stencil.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(x+h) − f(x−h)) / 2h`.
    ThreePoint,
    /// `(8(f(x+h) − f(x−h)) − (f(x+2h) − f(x−2h))) / 12h`.
    FivePoint,
}

/// Settings for [`finite_diff_check`].
#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    pub stencil: Stencil,
    pub tolerance: f64,
    /// Cap on checked elements per parameter (sampled with `seed`); `None` checks all.
    pub max_elems: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            stencil: Stencil::ThreePoint,
            tolerance: 1e-5,
            max_elems: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    pub fn worst(&self) -> f64 {
        self.entries.iter().fold(0.0, |a, e| a.max(e.max_rel_error))
    }
}

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn eval<R: Real, F>(loss: &F, store: &ParamStore<R>) -> Result<f64>
where
    F: Fn(&mut Tape<'_, R>) -> Result<Var>,
{
    let mut tape = Tape::inference(store);
    let root = loss(&mut tape)?;
    Ok(tape.value(root).data()[0].as_f64())
}

/// Compares reverse-mode gradients of a scalar loss against central differences.
///
/// `loss` builds the computation on the tape it is given; it must be
/// deterministic for a fixed parameter state.
pub fn finite_diff_check<R: Real, F>(
    loss: F,
    params: &ParamStore<R>,
    ids: &[ParamId],
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_, R>) -> Result<Var>,
{
    let mut store = params.clone();
    for &id in ids {
        store.set_trainable(id, true);
    }
    let analytic = {
        let mut tape = Tape::with_params(&store);
        let root = loss(&mut tape)?;
        tape.backward_scalar(root)?.into_param_grads(&store)
    };
    let base = eval(&loss, &store)?;
    if base.to_bits() != eval(&loss, &store)?.to_bits() {
        return Err(Error::Indeterminate {
            param: "<base evaluation>".to_string(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut entries = Vec::with_capacity(ids.len());
    for &id in ids {
        let len = store.tensor(id).len();
        let elems: Vec<usize> = match opts.max_elems {
            Some(cap) if cap < len => {
                let mut v = sample(&mut rng, len, cap).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..len).collect(),
        };
        let mut worst = 0.0f64;
        for &e in &elems {
            let orig = store.tensor(id).data()[e];
            let mut at = |offset: f64| -> Result<f64> {
                store.tensor_mut(id).data_mut()[e] = orig + R::of(offset);
                let v = eval(&loss, &store)?;
                store.tensor_mut(id).data_mut()[e] = orig;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::Indeterminate {
                        param: store.name(id).to_string(),
                    })
                }
            };
            let h = opts.step;
            let numeric = match opts.stencil {
                Stencil::ThreePoint => (at(h)? - at(-h)?) / (2.0 * h),
                Stencil::FivePoint => (8.0 * (at(h)? - at(-h)?) - (at(2.0 * h)? - at(-2.0 * h)?)) / (12.0 * h),
            };
            let a = analytic.get(id).data()[e].as_f64();
            worst = worst.max(relative_error(a, numeric));
        }
        entries.push(GradCheckEntry {
            name: store.name(id).to_string(),
            checked: elems.len(),
            max_rel_error: worst,
            pass: worst <= opts.tolerance,
        });
    }
    Ok(GradCheckReport {
        entries,
        tolerance: opts.tolerance,
    })
}
