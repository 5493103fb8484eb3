//! Finite-difference suites over every differentiable op and over the
//! training objectives.
//!
//! Op checks use random inputs in `[-2, 2]` and the default three-point
//! stencil. Objective checks run on [`RunConfig::tiny`] with the energy offset
//! at zero and a five-point stencil; see [`objective_options`].

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{LossPlacement, MinltMode, RunConfig};
use crate::encoder::encode_on_tape;
use crate::error::Result;
use crate::lm::{interleave, lm_forward_on_tape, nonstream_arrange, InterleavedBatch};
use crate::losses::{loss_llm, loss_minlt, loss_mocha};
use crate::mocha::{energy_noise, policy_forward};
use crate::model::Model;
use crate::numerics::{finite_diff_check, AttnMask, GradCheckOptions, GradCheckReport, ParamId, ParamStore, Stencil, Tape, Tensor, Var};
use crate::synth::generate_split;
use crate::train::{utterance_objective, BatchMode};

/// One named check.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteCheck {
    pub name: String,
    pub report: GradCheckReport,
}

impl SuiteCheck {
    pub fn pass(&self) -> bool {
        self.report.all_pass()
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape")
}

type OpFn = fn(&mut Tape<'_>, &[Var]) -> Result<Var>;

/// Checks `sum(w ⊙ f(inputs))` for random `w`, so every output element counts.
fn check_op(name: &str, inputs: Vec<Tensor>, f: impl Fn(&mut Tape<'_>, &[Var]) -> Result<Var>, seed: u64) -> Result<SuiteCheck> {
    let mut store = ParamStore::new();
    let ids: Vec<ParamId> = inputs.into_iter().enumerate().map(|(i, t)| store.insert(&format!("{name}.in{i}"), t)).collect();
    let shape = {
        let mut tape = Tape::with_params(&store);
        let vars: Vec<Var> = ids.iter().map(|&id| tape.param(id)).collect();
        let out = f(&mut tape, &vars)?;
        tape.value(out).shape().to_vec()
    };
    let weights = uniform(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed), &shape, -1.0, 1.0);
    let report = finite_diff_check(
        |tape| {
            let vars: Vec<Var> = ids.iter().map(|&id| tape.param(id)).collect();
            let out = f(tape, &vars)?;
            let w = tape.constant(weights.clone());
            let prod = tape.mul(out, w)?;
            Ok(tape.sum(prod))
        },
        &store,
        &ids,
        GradCheckOptions::default(),
    )?;
    Ok(SuiteCheck { name: name.into(), report })
}

/// Every differentiable tape op.
pub fn op_gradient_suite(seed: u64) -> Result<Vec<SuiteCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = |r: usize, c: usize| uniform(&mut rng, &[r, c], -2.0, 2.0);
    let x = m(3, 4);
    let y = m(3, 4);
    let w45 = m(4, 5);
    let (g, b) = (m(1, 4), m(1, 4));
    let (q, k, v) = (m(3, 8), m(5, 8), m(5, 8));
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let pos = uniform(&mut rng, &[3, 4], 0.2, 2.0);
    let row = uniform(&mut rng, &[4], -2.0, 2.0);
    let scalar = uniform(&mut rng, &[1], -2.0, 2.0);
    let p1 = uniform(&mut rng, &[1, 6], 0.05, 0.95);
    let p2 = uniform(&mut rng, &[1, 6], 0.05, 0.95);
    let alpha = uniform(&mut rng, &[1, 6], 0.0, 0.3);
    let energy = uniform(&mut rng, &[1, 6], -2.0, 2.0);
    // Inputs kept away from the kinks of abs and clamp.
    let kinked = Tensor::from_f64(&[1, 4], &[-1.7, -0.4, 0.6, 1.9])?;
    let with_zero = Tensor::from_f64(&[1, 4], &[0.7, 0.0, -1.3, 0.4])?;
    let keep = [true, false, true, true, false, true, true, true, true, true, false, false];

    let unary: [(&str, OpFn); 20] = [
        ("sigmoid", |t, v| Ok(t.sigmoid(v[0]))),
        ("tanh", |t, v| Ok(t.tanh(v[0]))),
        ("exp", |t, v| Ok(t.exp(v[0]))),
        ("gelu", |t, v| Ok(t.gelu(v[0]))),
        ("scale", |t, v| Ok(t.scale(v[0], 1.7))),
        ("add_const", |t, v| Ok(t.add_const(v[0], -0.3))),
        ("softmax", |t, v| Ok(t.softmax(v[0]))),
        ("log_softmax", |t, v| Ok(t.log_softmax(v[0]))),
        ("cumsum", |t, v| Ok(t.cumsum(v[0]))),
        ("cumprod", |t, v| Ok(t.cumprod(v[0]))),
        ("gather_rows", |t, v| t.gather_rows(v[0], &[2, 0, 2])),
        ("embedding", |t, v| t.embedding(v[0], &[1, 1])),
        ("pick", |t, v| t.pick(v[0], &[3, 0, 1])),
        ("slice_rows", |t, v| t.slice_rows(v[0], 1, 3)),
        ("slice_cols", |t, v| t.slice_cols(v[0], 1, 3)),
        ("sum", |t, v| Ok(t.sum(v[0]))),
        ("mean", |t, v| Ok(t.mean(v[0]))),
        ("reshape", |t, v| t.reshape(v[0], &[2, 6])),
        ("l2_normalize", |t, v| t.l2_normalize(v[0])),
        ("cumprod_of_row_with_zero", |t, v| Ok(t.cumprod(v[0]))),
    ];
    let mut out = Vec::new();
    for (name, f) in unary {
        let input = if name == "cumprod_of_row_with_zero" { with_zero.clone() } else { x.clone() };
        out.push(check_op(name, vec![input], f, seed)?);
    }
    out.push(check_op("abs", vec![kinked.clone()], |t, v| Ok(t.abs(v[0])), seed)?);
    out.push(check_op("clamp", vec![kinked], |t, v| Ok(t.clamp(v[0], -1.0, 1.0)), seed)?);
    out.push(check_op("log", vec![pos], |t, v| t.log(v[0]), seed)?);
    out.push(check_op("softmax_masked", vec![x.clone()], move |t, v| t.softmax_masked(v[0], &keep), seed)?);
    let binary: [(&str, OpFn); 5] = [
        ("add", |t, v| t.add(v[0], v[1])),
        ("sub", |t, v| t.sub(v[0], v[1])),
        ("mul", |t, v| t.mul(v[0], v[1])),
        ("concat_rows", |t, v| t.concat_rows(&[v[0], v[1]])),
        ("concat_cols", |t, v| t.concat_cols(&[v[0], v[1]])),
    ];
    for (name, f) in binary {
        out.push(check_op(name, vec![x.clone(), y.clone()], f, seed)?);
    }
    out.push(check_op("matmul", vec![x.clone(), w45], |t, v| t.matmul(v[0], v[1]), seed)?);
    out.push(check_op("add_row", vec![x.clone(), row], |t, v| t.add_row(v[0], v[1]), seed)?);
    out.push(check_op("mul_scalar", vec![x.clone(), scalar.clone()], |t, v| t.mul_scalar(v[0], v[1]), seed)?);
    out.push(check_op("add_scalar", vec![x.clone(), scalar], |t, v| t.add_scalar(v[0], v[1]), seed)?);
    out.push(check_op(
        "layer_norm",
        vec![x, g, b],
        |t, v| {
            let g = t.reshape(v[1], &[4])?;
            let b = t.reshape(v[2], &[4])?;
            t.layer_norm(v[0], g, b, 1e-5)
        },
        seed,
    )?);
    out.push(check_op(
        "attention_full",
        vec![q.clone(), k.clone(), v.clone()],
        |t, x| t.attention(x[0], x[1], x[2], 2, AttnMask::Full),
        seed,
    )?);
    out.push(check_op(
        "attention_causal",
        vec![q, k, v],
        |t, x| t.attention(x[0], x[1], x[2], 4, AttnMask::Causal { offset: 2 }),
        seed,
    )?);
    out.push(check_op("monotonic_alpha_first", vec![p1.clone()], |t, v| t.monotonic_alpha(v[0], None), seed)?);
    out.push(check_op(
        "monotonic_alpha_chained",
        vec![p1, p2],
        |t, v| {
            let first = t.monotonic_alpha(v[0], None)?;
            t.monotonic_alpha(v[1], Some(first))
        },
        seed,
    )?);
    for w in [1, 2, 4, 7] {
        out.push(check_op(
            &format!("chunkwise_beta_w{w}"),
            vec![alpha.clone(), energy.clone()],
            move |t, v| t.chunkwise_beta(v[0], v[1], w),
            seed,
        )?);
    }
    Ok(out)
}

/// Stencil settings for the objective checks.
///
/// With the three-point stencil at `h = 1e-5`, cancellation noise is about
/// `ε·|L|/h ≈ 1e-11·|L|`, which already exceeds `1e-5` relative error on
/// gradient entries near `1e-7`. The five-point stencil has `O(h⁴)`
/// truncation, so `h = 3e-3` keeps it far below the tolerance while cutting
/// the noise by two orders of magnitude.
pub fn objective_options(seed: u64) -> GradCheckOptions {
    GradCheckOptions {
        step: 3e-3,
        stencil: Stencil::FivePoint,
        max_elems: Some(16),
        seed,
        ..GradCheckOptions::default()
    }
}

/// The toy configuration used by [`objective_gradient_suite`].
pub fn objective_config() -> RunConfig {
    let mut cfg = RunConfig::tiny();
    cfg.mocha.energy_offset = 0.0;
    cfg
}

/// End-to-end checks of `L_LLM` (both arrangements), `L_MoChA`, `L_minLT`
/// (both readings) and `L_total` on a toy batch with frozen noise.
pub fn objective_gradient_suite(seed: u64) -> Result<Vec<SuiteCheck>> {
    let cfg = objective_config();
    let model = Model::<f64>::new(cfg.clone(), seed)?;
    let opts = objective_options(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = cfg.lm.d_model;
    let h = uniform(&mut rng, &[6, d], -1.0, 1.0);
    let tokens = [0, 2, 4, 3, crate::config::EOS];
    let bounds = [1, 3, 4, 6];
    let noise: Tensor = energy_noise(&mut rng, tokens.len() - 1, 6, cfg.mocha.noise_std);
    let mut out = Vec::new();

    let llm_check = |name: &str, batch: InterleavedBatch| -> Result<SuiteCheck> {
        let report = finite_diff_check(
            |tape: &mut Tape<'_>| {
                let hv = tape.constant(h.clone());
                let logits = lm_forward_on_tape(tape, &model, &batch, hv)?;
                loss_llm(tape, logits, &batch.masked_targets())
            },
            &model.store,
            &model.lm.param_ids(),
            opts,
        )?;
        Ok(SuiteCheck { name: name.into(), report })
    };
    out.push(llm_check("l_llm_nonstream", nonstream_arrange(6, &tokens)?)?);
    out.push(llm_check("l_llm_interleaved", interleave(6, &tokens, &[0, 1, 3, 4, 6], LossPlacement::Token)?)?);

    let policy = model.policy.param_ids();
    let report = finite_diff_check(
        |tape: &mut Tape<'_>| {
            let hv = tape.constant(h.clone());
            let tr = policy_forward(tape, &model, hv, &tokens, Some(&noise))?;
            loss_mocha(tape, tr.logits, &tokens[1..])
        },
        &model.store,
        &policy,
        opts,
    )?;
    out.push(SuiteCheck { name: "l_mocha".into(), report });
    for mode in [MinltMode::ExpectedBoundary, MinltMode::Literal] {
        let report = finite_diff_check(
            |tape: &mut Tape<'_>| {
                let hv = tape.constant(h.clone());
                let tr = policy_forward(tape, &model, hv, &tokens, Some(&noise))?;
                loss_minlt(tape, &tr.alpha, &bounds, mode, tokens.len())
            },
            &model.store,
            &policy,
            opts,
        )?;
        out.push(SuiteCheck {
            name: format!("l_minlt_{}", mode.as_str()),
            report,
        });
    }

    let utt = generate_split(&cfg.synth, "gradcheck", 1)?.utterances.remove(0);
    let noise: Tensor = energy_noise(&mut rng, utt.tokens.len() - 1, utt.n_frames(), cfg.mocha.noise_std);
    let all: Vec<ParamId> = model.store.ids().collect();
    for mode in [BatchMode::Streaming, BatchMode::NonStreaming] {
        let report = finite_diff_check(
            |tape: &mut Tape<'_>| {
                let noise = (mode == BatchMode::Streaming).then_some(&noise);
                Ok(utterance_objective(tape, &model, &utt, mode, noise)?.total)
            },
            &model.store,
            &all,
            opts,
        )?;
        out.push(SuiteCheck {
            name: format!("l_total_{}", mode.as_str()),
            report,
        });
    }
    // The encoder path on its own, through the adaptor.
    let report = finite_diff_check(
        |tape: &mut Tape<'_>| {
            let hv = encode_on_tape(tape, &model, &utt.features.frames)?;
            let sq = tape.mul(hv, hv)?;
            Ok(tape.mean(sq))
        },
        &model.store,
        &model.encoder.param_ids(),
        opts,
    )?;
    out.push(SuiteCheck { name: "encoder".into(), report });
    Ok(out)
}

/// Both suites.
pub fn gradient_suite(seed: u64) -> Result<Vec<SuiteCheck>> {
    let mut all = op_gradient_suite(seed)?;
    all.extend(objective_gradient_suite(seed)?);
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_pass_for_default_seed() {
        let all = gradient_suite(0).unwrap();
        let failed: Vec<_> = all.iter().filter(|c| !c.pass()).map(|c| (&c.name, c.report.worst())).collect();
        assert!(failed.is_empty(), "{failed:?}");
        assert!(all.len() > 40);
    }

    #[test]
    fn every_tensor_appears_in_total() {
        let checks = objective_gradient_suite(0).unwrap();
        let total = checks.iter().find(|c| c.name == "l_total_stream").unwrap();
        let model = Model::<f64>::new(objective_config(), 0).unwrap();
        assert_eq!(total.report.entries.len(), model.store.len());
    }
}
