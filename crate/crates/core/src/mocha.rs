//! Read/write policy: monotonic selection probabilities, the marginal attend
//! recurrence, chunkwise soft attention and the policy's own small decoder.
//!
//! Frame numbers are 1-based here (a boundary `t` means "frames `1..=t`
//! consumed"); row `j-1` of an encoder output holds frame `j`.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{MochaConfig, BOS};
use crate::error::{Error, Result};
use crate::layers::{inv_sqrt, Gru, Linear};
use crate::model::Model;
use crate::numerics::{alpha_row, beta_row, normal, ParamId, ParamStore, Real, Tape, Tensor, Var};

/// Energy `g·(v/‖v‖)ᵀ tanh(u·W_u + h·W_h + b) + r`. Without `g` and `r`
/// the plain `vᵀ tanh(…)` form is used.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyParams {
    pub wu: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub v: ParamId,
    pub g: Option<ParamId>,
    pub r: Option<ParamId>,
}

impl EnergyParams {
    fn init<R: Real>(store: &mut ParamStore<R>, rng: &mut impl Rng, name: &str, d_state: usize, d_h: usize, cfg: &MochaConfig, scaled: bool) -> Self {
        let da = cfg.d_attn;
        EnergyParams {
            wu: store.insert(&alloc::format!("{name}.wu"), normal(rng, &[d_state, da], inv_sqrt(d_state))),
            wh: store.insert(&alloc::format!("{name}.wh"), normal(rng, &[d_h, da], inv_sqrt(d_h))),
            b: store.insert(&alloc::format!("{name}.b"), Tensor::zeros(&[da])),
            v: store.insert(&alloc::format!("{name}.v"), normal(rng, &[da, 1], inv_sqrt(da))),
            g: scaled.then(|| store.insert(&alloc::format!("{name}.g"), Tensor::full(&[1], R::of(cfg.energy_gain)))),
            r: scaled.then(|| store.insert(&alloc::format!("{name}.r"), Tensor::full(&[1], R::of(cfg.energy_offset)))),
        }
    }

    fn param_ids(&self) -> Vec<ParamId> {
        let mut v = vec![self.wu, self.wh, self.b, self.v];
        v.extend(self.g);
        v.extend(self.r);
        v
    }

    /// `H·W_h` for a block of encoder rows; shared by every output step.
    pub fn project_frames<R: Real>(&self, tape: &mut Tape<'_, R>, h: Var) -> Result<Var> {
        let wh = tape.param(self.wh);
        tape.matmul(h, wh)
    }

    /// Energies (`1×n`) of state `u` against pre-projected rows `hw`.
    pub fn energies<R: Real>(&self, tape: &mut Tape<'_, R>, u: Var, hw: Var) -> Result<Var> {
        let n = tape.value(hw).rows();
        let wu = tape.param(self.wu);
        let b = tape.param(self.b);
        let uw = tape.matmul(u, wu)?;
        let uw = tape.add_row(uw, b)?;
        let t = tape.add_row(hw, uw)?;
        let t = tape.tanh(t);
        let v = tape.param(self.v);
        let v_norm = tape.value(v).data().iter().fold(R::zero(), |a, &x| a + x * x);
        let v = if self.g.is_some() && v_norm > R::zero() { tape.l2_normalize(v)? } else { v };
        let e = tape.matmul(t, v)?;
        let mut e = tape.reshape(e, &[1, n])?;
        if let Some(g) = self.g {
            let g = tape.param(g);
            e = tape.mul_scalar(e, g)?;
        }
        if let Some(r) = self.r {
            let r = tape.param(r);
            e = tape.add_scalar(e, r)?;
        }
        Ok(e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub embed: ParamId,
    pub gru: Gru,
    pub head: Linear,
    pub monotonic: EnergyParams,
    pub chunk: EnergyParams,
}

impl PolicyParams {
    pub fn init<R: Real>(store: &mut ParamStore<R>, rng: &mut impl Rng, cfg: &MochaConfig, d_h: usize, vocab: usize) -> Self {
        PolicyParams {
            embed: store.insert("policy.embed", normal(rng, &[vocab, cfg.d_embed], 1.0)),
            gru: Gru::init(store, rng, "policy.gru", cfg.d_embed + d_h, cfg.d_state),
            head: Linear::init(store, rng, "policy.head", cfg.d_state, vocab, true),
            monotonic: EnergyParams::init(store, rng, "policy.monotonic", cfg.d_state, d_h, cfg, true),
            chunk: EnergyParams::init(store, rng, "policy.chunk", cfg.d_state, d_h, cfg, false),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut v = vec![self.embed];
        v.extend(self.gru.param_ids());
        v.extend(self.head.param_ids());
        v.extend(self.monotonic.param_ids());
        v.extend(self.chunk.param_ids());
        v
    }

    /// One recurrent update on `[embed(prev); c]` and the vocabulary logits of
    /// the new state.
    pub fn step_on_tape<R: Real>(&self, tape: &mut Tape<'_, R>, u: Var, prev: usize, c: Var) -> Result<(Var, Var)> {
        let table = tape.param(self.embed);
        let e = tape.embedding(table, &[prev])?;
        let x = tape.concat_cols(&[e, c])?;
        let u = self.gru.forward(tape, u, x)?;
        let logits = self.head.forward(tape, u)?;
        Ok((u, logits))
    }
}

/// Recurrent state of the policy decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyState<R = f64> {
    /// `1×d_state`.
    pub u: Tensor<R>,
    /// `1×d_h`: context of the last step.
    pub last_context: Tensor<R>,
}

impl<R: Real> PolicyState<R> {
    pub fn initial(model: &Model<R>) -> Self {
        PolicyState {
            u: Tensor::zeros(&[1, model.config.mocha.d_state]),
            last_context: Tensor::zeros(&[1, model.config.lm.d_model]),
        }
    }
}

/// Training noise for one utterance: `(L-1)×N` draws from `Normal(0, σ²)`.
pub fn energy_noise<R: Real>(rng: &mut impl Rng, steps: usize, frames: usize, std: f64) -> Tensor<R> {
    let dist = Normal::new(0.0, std).expect("finite std");
    let data = (0..steps * frames).map(|_| R::of(dist.sample(rng))).collect();
    Tensor::matrix(steps, frames, data).expect("noise shape")
}

/// Selection energies and probabilities of one output step over all rows of
/// `h`. With `noise_seed` the energies are perturbed by seeded Gaussian noise
/// of the configured scale.
pub fn monotonic_energies<R: Real>(
    model: &Model<R>,
    state: &PolicyState<R>,
    h: &Tensor<R>,
    noise_seed: Option<u64>,
) -> Result<(Vec<R>, Vec<R>)> {
    if h.is_empty() {
        return Err(Error::EmptyInput("monotonic_energies"));
    }
    let mut tape = Tape::inference(&model.store);
    let hv = tape.constant(h.clone());
    let u = tape.constant(state.u.clone());
    let hw = model.policy.monotonic.project_frames(&mut tape, hv)?;
    let mut e = model.policy.monotonic.energies(&mut tape, u, hw)?;
    if let Some(seed) = noise_seed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps = tape.constant(energy_noise(&mut rng, 1, h.rows(), model.config.mocha.noise_std));
        e = tape.add(e, eps)?;
    }
    let p = tape.sigmoid(e);
    Ok((tape.value(e).data().to_vec(), tape.value(p).data().to_vec()))
}

fn check_probabilities<R: Real>(p: &Tensor<R>) -> Result<()> {
    if let Some(bad) = p.data().iter().find(|&&v| !(v >= R::zero() && v <= R::one())) {
        return Err(Error::Domain {
            op: "alpha_marginalize",
            detail: alloc::format!("selection probability {bad} outside [0, 1]"),
        });
    }
    Ok(())
}

/// Marginal attend probabilities of every output step (rows of `p`).
///
/// Step `i` must attend strictly after step `i-1`; the step before the first
/// row attends the virtual frame 0.
pub fn alpha_marginalize<R: Real>(p: &Tensor<R>) -> Result<Tensor<R>> {
    check_probabilities(p)?;
    let (steps, n) = p.dims2();
    let mut out: Vec<R> = Vec::with_capacity(steps * n);
    for i in 0..steps {
        let prev = (i > 0).then(|| &out[(i - 1) * n..i * n]);
        let (alpha, _) = alpha_row(p.row(i), prev);
        out.extend(alpha);
    }
    Tensor::matrix(steps, n, out)
}

/// Exhaustive path enumeration of the same marginals (test oracle). Paths
/// in which some step never selects a frame count toward the earlier steps.
pub fn alpha_bruteforce(p: &Tensor<f64>) -> Result<Tensor<f64>> {
    check_probabilities(p)?;
    let (steps, n) = p.dims2();
    if n > 8 || steps + 1 > 5 {
        return Err(Error::OracleSize(alloc::format!("{steps} steps over {n} frames")));
    }
    let mut alpha = vec![0.0; steps * n];
    let mut path = vec![0usize; steps];
    // A step that selects nothing up to frame N ends the path; later steps
    // then attend nowhere.
    fn record(path: &[usize], upto: usize, n: usize, prob: f64, alpha: &mut [f64]) {
        for (k, &t) in path[..upto].iter().enumerate() {
            alpha[k * n + t - 1] += prob;
        }
    }
    fn walk(p: &Tensor<f64>, i: usize, prev: usize, prob: f64, path: &mut Vec<usize>, alpha: &mut [f64]) {
        let (steps, n) = p.dims2();
        if i == steps {
            record(path, steps, n, prob, alpha);
            return;
        }
        let mut skip = 1.0;
        for t in prev + 1..=n {
            let pt = p.at(i, t - 1);
            path[i] = t;
            walk(p, i + 1, t, prob * skip * pt, path, alpha);
            skip *= 1.0 - pt;
        }
        record(path, i, n, prob * skip, alpha);
    }
    walk(p, 0, 0, 1.0, &mut path, &mut alpha);
    Tensor::matrix(steps, n, alpha)
}

/// Expected chunkwise attention of one step and the resulting context
/// `Σ_j β_j h_j`.
pub fn chunkwise_beta<R: Real>(alpha: &[R], energy: &[R], window: usize, h: &Tensor<R>) -> Result<(Vec<R>, Tensor<R>)> {
    if window == 0 {
        return Err(Error::Config("window must be at least 1".into()));
    }
    if alpha.len() != energy.len() || alpha.len() != h.rows() {
        return Err(Error::Shape {
            op: "chunkwise_beta",
            detail: alloc::format!("alpha {}, energy {}, rows {}", alpha.len(), energy.len(), h.rows()),
        });
    }
    let beta = beta_row(alpha, energy, window).beta;
    let c = Tensor::row_vector(beta.clone()).matmul(h)?;
    Ok((beta, c))
}

/// One policy decoder step: state update on `[embed(prev); c]` plus logits.
pub fn policy_decode_step<R: Real>(model: &Model<R>, state: &PolicyState<R>, prev: usize, c: &Tensor<R>) -> Result<(PolicyState<R>, Tensor<R>)> {
    let vocab = model.config.vocab_size();
    if prev >= vocab {
        return Err(Error::Vocabulary(prev));
    }
    let mut tape = Tape::inference(&model.store);
    let u = tape.constant(state.u.clone());
    let cv = tape.constant(c.clone().reshaped(&[1, c.len()])?);
    let (u, logits) = model.policy.step_on_tape(&mut tape, u, prev, cv)?;
    Ok((
        PolicyState {
            u: tape.value(u).clone(),
            last_context: c.clone(),
        },
        tape.value(logits).clone(),
    ))
}

/// First frame `j ≥ start` (1-based) among `1..=available` whose selection
/// probability reaches `threshold`.
pub fn scan_trigger<R: Real>(
    mut prob: impl FnMut(usize) -> Result<R>,
    available: usize,
    start: usize,
    threshold: f64,
) -> Result<Option<usize>> {
    let th = R::of(threshold);
    for j in start.max(1)..=available {
        if prob(j)? >= th {
            return Ok(Some(j));
        }
    }
    Ok(None)
}

/// Selection probability of a single encoder row (no noise).
pub fn selection_probability<R: Real>(model: &Model<R>, state: &PolicyState<R>, row: &[R]) -> Result<R> {
    let mut tape = Tape::inference(&model.store);
    let h = tape.constant(Tensor::row_vector(row.to_vec()));
    let u = tape.constant(state.u.clone());
    let hw = model.policy.monotonic.project_frames(&mut tape, h)?;
    let e = model.policy.monotonic.energies(&mut tape, u, hw)?;
    let p = tape.sigmoid(e);
    Ok(tape.value(p).data()[0])
}

/// Context vector for a hard attend at frame `t` (1-based): soft attention
/// over the window ending at `t`.
pub fn hard_context<R: Real>(model: &Model<R>, state: &PolicyState<R>, h: &Tensor<R>, t: usize) -> Result<Tensor<R>> {
    let w = model.config.mocha.window;
    let lo = t.saturating_sub(w);
    let rows = h.slice_rows(lo, t);
    let mut tape = Tape::inference(&model.store);
    let hv = tape.constant(rows.clone());
    let u = tape.constant(state.u.clone());
    let hw = model.policy.chunk.project_frames(&mut tape, hv)?;
    let e = model.policy.chunk.energies(&mut tape, u, hw)?;
    let mut alpha = vec![R::zero(); t - lo];
    alpha[t - lo - 1] = R::one();
    let (_, c) = chunkwise_beta(&alpha, tape.value(e).data(), w, &rows)?;
    Ok(c)
}

/// Outputs of a teacher-forced policy pass over one utterance.
pub struct PolicyTrace {
    /// One `1×N` row per output step `2..=L`.
    pub p: Vec<Var>,
    pub alpha: Vec<Var>,
    /// `(L-1)×V`.
    pub logits: Var,
}

/// Runs the policy over encoder rows `h` (`N×d`) for output tokens
/// `y_1..y_L`. `noise` (`(L-1)×N`) is added to the selection energies.
pub fn policy_forward<R: Real>(tape: &mut Tape<'_, R>, model: &Model<R>, h: Var, tokens: &[usize], noise: Option<&Tensor<R>>) -> Result<PolicyTrace> {
    let pol = &model.policy;
    let cfg = &model.config.mocha;
    if tokens.len() < 2 || tokens[0] != BOS {
        return Err(Error::Shape {
            op: "policy_forward",
            detail: "token sequence must start with BOS and have at least 2 entries".into(),
        });
    }
    let n = tape.value(h).rows();
    let steps = tokens.len() - 1;
    if let Some(eps) = noise {
        if eps.dims2() != (steps, n) {
            return Err(Error::Shape {
                op: "policy_forward",
                detail: alloc::format!("noise {:?} for {steps} steps over {n} frames", eps.shape()),
            });
        }
    }
    let hw_mono = pol.monotonic.project_frames(tape, h)?;
    let hw_chunk = pol.chunk.project_frames(tape, h)?;
    let mut u = tape.constant(Tensor::zeros(&[1, cfg.d_state]));
    let mut prev_alpha: Option<Var> = None;
    let (mut ps, mut alphas, mut logits) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..steps {
        let mut e = pol.monotonic.energies(tape, u, hw_mono)?;
        if let Some(eps) = noise {
            let row = tape.constant(Tensor::row_vector(eps.row(i).to_vec()));
            e = tape.add(e, row)?;
        }
        let p = tape.sigmoid(e);
        let alpha = tape.monotonic_alpha(p, prev_alpha)?;
        let ce = pol.chunk.energies(tape, u, hw_chunk)?;
        let beta = tape.chunkwise_beta(alpha, ce, cfg.window)?;
        let c = tape.matmul(beta, h)?;
        let (u_next, lg) = pol.step_on_tape(tape, u, tokens[i], c)?;
        u = u_next;
        ps.push(p);
        alphas.push(alpha);
        logits.push(lg);
        prev_alpha = Some(alpha);
    }
    let logits = tape.concat_rows(&logits)?;
    Ok(PolicyTrace { p: ps, alpha: alphas, logits })
}
