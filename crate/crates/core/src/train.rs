//! Optimizer, learning-rate schedule and the joint streaming/non-streaming
//! training step.

use alloc::format;
use alloc::vec::Vec;

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{JointMode, TrainConfig};
use crate::encoder::encode_on_tape;
use crate::error::{Error, Result};
use crate::lm::{interleave, lm_forward_on_tape, nonstream_arrange, InterleavedBatch};
use crate::losses::{loss_llm, loss_minlt, loss_mocha, loss_total, LossBundle};
use crate::mocha::{energy_noise, policy_forward};
use crate::model::Model;
use crate::numerics::{ParamGrads, ParamStore, Real, Tape, Tensor, Var};
use crate::synth::SynthUtterance;

/// Triangular cyclic schedule: `lr_min → lr_max` over the first half of each
/// cycle and back over the second.
pub fn lr_triangular(step: u64, lr_max: f64, lr_min: f64, cycle_steps: u64) -> f64 {
    let cycle = cycle_steps.max(2) as f64;
    let pos = (step % cycle_steps.max(2)) as f64;
    let half = cycle / 2.0;
    let frac = if pos <= half { pos / half } else { (cycle - pos) / half };
    lr_min + (lr_max - lr_min) * frac
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<R: Real = f64> {
    m: Vec<Tensor<R>>,
    v: Vec<Tensor<R>>,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
}

impl<R: Real> AdamW<R> {
    pub fn new(store: &ParamStore<R>, cfg: &TrainConfig) -> Self {
        let zeros: Vec<Tensor<R>> = store.ids().map(|id| Tensor::zeros(store.tensor(id).shape())).collect();
        AdamW {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Updates every trainable tensor of `store`; frozen tensors are untouched.
    pub fn update(&mut self, store: &mut ParamStore<R>, grads: &ParamGrads<R>, lr: f64) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - Float::powi(b1, self.t as i32);
        let c2 = 1.0 - Float::powi(b2, self.t as i32);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            if !store.is_trainable(id) {
                continue;
            }
            let g = grads.get(id).data();
            let k = id.index();
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            let p = store.tensor_mut(id).data_mut();
            for e in 0..p.len() {
                let ge = g[e].as_f64();
                let me = b1 * m[e].as_f64() + (1.0 - b1) * ge;
                let ve = b2 * v[e].as_f64() + (1.0 - b2) * ge * ge;
                m[e] = R::of(me);
                v[e] = R::of(ve);
                let step = (me / c1) / (Float::sqrt(ve / c2) + self.eps) + self.weight_decay * p[e].as_f64();
                p[e] = R::of(p[e].as_f64() - lr * step);
            }
        }
    }
}

/// Forward path taken by one batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchMode {
    Streaming,
    NonStreaming,
}

impl BatchMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BatchMode::Streaming => "stream",
            BatchMode::NonStreaming => "nonstream",
        }
    }
}

/// Picks a batch's mode from one uniform draw (always consumed so that runs
/// with different routing settings see the same random stream).
pub fn draw_mode(rng: &mut impl Rng, cfg: &TrainConfig) -> BatchMode {
    let u: f64 = rng.random();
    match cfg.joint_mode {
        JointMode::StreamOnly => BatchMode::Streaming,
        JointMode::NonstreamOnly => BatchMode::NonStreaming,
        JointMode::Joint if u < cfg.joint_stream_prob => BatchMode::Streaming,
        JointMode::Joint => BatchMode::NonStreaming,
    }
}

/// Scalar loss variables of one utterance.
#[derive(Debug, Clone, Copy)]
pub struct UtteranceLoss {
    pub total: Var,
    pub llm: Var,
    pub mocha: Option<Var>,
    pub minlt: Option<Var>,
    /// Supervised positions of the language-model arrangement.
    pub masked: usize,
}

/// Arrangement used for one utterance in `mode`.
pub fn arrangement<R: Real>(model: &Model<R>, utt: &SynthUtterance, mode: BatchMode) -> Result<InterleavedBatch> {
    match mode {
        BatchMode::Streaming => interleave(utt.n_frames(), &utt.tokens, &utt.gold_path(), model.config.lm.loss_at),
        BatchMode::NonStreaming => nonstream_arrange(utt.n_frames(), &utt.tokens),
    }
}

/// Builds the objective of one utterance on `tape`.
///
/// Streaming mode uses the gold boundaries for the language-model sequence
/// and adds the policy losses; `noise` perturbs the selection energies.
pub fn utterance_objective<R: Real>(
    tape: &mut Tape<'_, R>,
    model: &Model<R>,
    utt: &SynthUtterance,
    mode: BatchMode,
    noise: Option<&Tensor<R>>,
) -> Result<UtteranceLoss> {
    let h = encode_on_tape(tape, model, &utt.features.frames)?;
    let batch = arrangement(model, utt, mode)?;
    let logits = lm_forward_on_tape(tape, model, &batch, h)?;
    let llm = loss_llm(tape, logits, &batch.masked_targets())?;
    let masked = batch.masked_count();
    match mode {
        BatchMode::NonStreaming => Ok(UtteranceLoss {
            total: llm,
            llm,
            mocha: None,
            minlt: None,
            masked,
        }),
        BatchMode::Streaming => {
            let trace = policy_forward(tape, model, h, &utt.tokens, noise)?;
            let mocha = loss_mocha(tape, trace.logits, &utt.tokens[1..])?;
            let tc = &model.config.train;
            let minlt = loss_minlt(tape, &trace.alpha, &utt.boundaries, tc.minlt_mode, utt.tokens.len())?;
            let s = tape.add(llm, mocha)?;
            let w = tape.scale(minlt, R::of(tc.lambda));
            let total = tape.add(s, w)?;
            Ok(UtteranceLoss {
                total,
                llm,
                mocha: Some(mocha),
                minlt: Some(minlt),
                masked,
            })
        }
    }
}

/// Outcome of one optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub lr: f64,
    pub mode: BatchMode,
    pub bundle: LossBundle,
    pub grad_norm: f64,
    /// `(L-1, supervised positions)` per utterance.
    pub mask_checks: Vec<(usize, usize)>,
}

/// Mutable training state around a model.
#[derive(Debug, Clone)]
pub struct Trainer<R: Real = f64> {
    pub model: Model<R>,
    pub optimizer: AdamW<R>,
    rng: ChaCha8Rng,
    step: u64,
    order: Vec<usize>,
    cursor: usize,
}

impl<R: Real> Trainer<R> {
    pub fn new(model: Model<R>) -> Self {
        let optimizer = AdamW::new(&model.store, &model.config.train);
        let rng = ChaCha8Rng::seed_from_u64(model.config.train.seed);
        Trainer {
            model,
            optimizer,
            rng,
            step: 0,
            order: Vec::new(),
            cursor: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Indices of the next batch from a reshuffled pass over `n` utterances.
    pub fn next_batch(&mut self, n: usize) -> Vec<usize> {
        let bs = self.model.config.train.batch_size.min(n);
        let mut out = Vec::with_capacity(bs);
        while out.len() < bs {
            if self.cursor >= self.order.len() {
                self.order = (0..n).collect();
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }

    /// One update on `batch`, with the mode drawn from the routing settings.
    pub fn train_step(&mut self, batch: &[&SynthUtterance]) -> Result<StepReport> {
        let mode = draw_mode(&mut self.rng, &self.model.config.train);
        self.train_step_with_mode(batch, mode)
    }

    pub fn train_step_with_mode(&mut self, batch: &[&SynthUtterance], mode: BatchMode) -> Result<StepReport> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("train_step"));
        }
        let tc = self.model.config.train.clone();
        let lr = lr_triangular(self.step, tc.lr_max, tc.lr_min, tc.cycle_steps);
        let mut grads = ParamGrads::zeros_like(&self.model.store);
        let (mut llm, mut mocha, mut minlt) = (0.0, 0.0, 0.0);
        let mut mask_checks = Vec::with_capacity(batch.len());
        for utt in batch {
            let noise = match mode {
                BatchMode::Streaming => Some(energy_noise::<R>(&mut self.rng, utt.tokens.len() - 1, utt.n_frames(), self.model.config.mocha.noise_std)),
                BatchMode::NonStreaming => None,
            };
            let mut tape = Tape::with_params(&self.model.store);
            let out = utterance_objective(&mut tape, &self.model, utt, mode, noise.as_ref())?;
            llm += tape.value(out.llm).data()[0].as_f64();
            mocha += out.mocha.map_or(0.0, |v| tape.value(v).data()[0].as_f64());
            minlt += out.minlt.map_or(0.0, |v| tape.value(v).data()[0].as_f64());
            mask_checks.push((utt.tokens.len() - 1, out.masked));
            let g = tape.backward_scalar(out.total)?.into_param_grads(&self.model.store);
            grads.accumulate(&g);
        }
        let inv = 1.0 / batch.len() as f64;
        let bundle = loss_total(llm * inv, mocha * inv, minlt * inv, tc.lambda);
        grads.scale(R::of(inv));
        if !bundle.is_finite() || !grads.all_finite() {
            return Err(Error::Divergence {
                step: self.step,
                detail: format!("{} batch: {bundle:?}", mode.as_str()),
            });
        }
        let norm = grads.global_norm().as_f64();
        if tc.clip_norm > 0.0 && norm > tc.clip_norm {
            grads.scale(R::of(tc.clip_norm / norm));
        }
        self.optimizer.update(&mut self.model.store, &grads, lr);
        let report = StepReport {
            step: self.step,
            lr,
            mode,
            bundle,
            grad_norm: norm,
            mask_checks,
        };
        self.step += 1;
        Ok(report)
    }

    /// Runs `steps` updates over `data`, calling `log` after each.
    pub fn run(&mut self, data: &[SynthUtterance], steps: u64, mut log: impl FnMut(&StepReport)) -> Result<()> {
        for _ in 0..steps {
            let idx = self.next_batch(data.len());
            let batch: Vec<&SynthUtterance> = idx.iter().map(|&i| &data[i]).collect();
            let report = self.train_step(&batch)?;
            log(&report);
        }
        Ok(())
    }
}
