use alloc::vec;
use alloc::vec::Vec;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::Error;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

#[test]
fn sigmoid_of_zero_is_half() {
    let mut tape = Tape::<f64>::new();
    let x = tape.variable(Tensor::scalar(0.0));
    let y = tape.sigmoid(x);
    assert_eq!(tape.value(y).data(), &[0.5]);
    let g = tape.backward_scalar(y).unwrap();
    assert_eq!(g.wrt(x).unwrap().data(), &[0.25]);
}

#[test]
fn cumprod_of_halves() {
    let mut tape = Tape::<f64>::new();
    let x = tape.variable(Tensor::row_vector(vec![0.5, 0.5, 0.5]));
    let y = tape.cumprod(x);
    assert_eq!(tape.value(y).data(), &[0.5, 0.25, 0.125]);
}

#[test]
fn masked_softmax_single_survivor() {
    let mut tape = Tape::<f64>::new();
    let x = tape.variable(Tensor::row_vector(vec![1.0, 1.0]));
    let y = tape.softmax_masked(x, &[true, false]).unwrap();
    assert_eq!(tape.value(y).data(), &[1.0, 0.0]);
    assert!(matches!(tape.softmax_masked(x, &[false, false]), Err(Error::Domain { .. })));
}

#[test]
fn matmul_identity_gradient_is_all_ones() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::identity(2));
    let b = tape.variable(Tensor::from_f64(&[2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap());
    let prod = tape.matmul(a, b).unwrap();
    let root = tape.sum(prod);
    let g = tape.backward_scalar(root).unwrap();
    assert_eq!(g.wrt(b).unwrap().data(), &[1.0; 4]);
}

#[test]
fn quadratic_gradcheck() {
    let mut store = ParamStore::new();
    let x = store.insert("x", Tensor::scalar(3.0));
    let report = finite_diff_check(
        |tape| {
            let v = tape.param(x);
            tape.mul(v, v)
        },
        &store,
        &[x],
        GradCheckOptions {
            tolerance: 1e-6,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(report.all_pass());
    let mut tape = Tape::with_params(&store);
    let v = tape.param(x);
    let sq = tape.mul(v, v).unwrap();
    let g = tape.backward_scalar(sq).unwrap();
    assert_eq!(g.param(x).unwrap().data(), &[6.0]);
}

#[test]
fn shape_and_domain_errors() {
    let mut tape = Tape::<f64>::new();
    let a = tape.variable(Tensor::zeros(&[2, 3]));
    let b = tape.variable(Tensor::zeros(&[2, 2]));
    assert!(matches!(tape.matmul(a, a), Err(Error::Shape { .. })));
    assert!(matches!(tape.add(a, b), Err(Error::Shape { .. })));
    assert!(matches!(tape.log(a), Err(Error::Domain { .. })));
    let p = tape.constant(Tensor::row_vector(vec![0.5, 1.5]));
    assert!(matches!(tape.monotonic_alpha(p, None), Err(Error::Domain { .. })));
}

#[test]
fn stale_tape_is_rejected() {
    let mut tape = Tape::<f64>::new();
    let x = tape.variable(Tensor::scalar(1.0));
    let y = tape.exp(x);
    tape.reset();
    assert_eq!(tape.backward_scalar(y).err(), Some(Error::StaleTape));
    let other = Tape::<f64>::new();
    assert_eq!(other.backward_scalar(y).err(), Some(Error::StaleTape));
}

#[test]
fn seed_shape_must_match_root() {
    let mut tape = Tape::<f64>::new();
    let x = tape.variable(Tensor::zeros(&[2]));
    assert!(tape.backward(x, Tensor::zeros(&[3])).is_err());
}

#[test]
fn unreached_parameters_get_zero_gradients() {
    let mut store = ParamStore::<f64>::new();
    let a = store.insert("a", Tensor::scalar(2.0));
    let b = store.insert("b", Tensor::zeros(&[3]));
    let mut tape = Tape::with_params(&store);
    let va = tape.param(a);
    let root = tape.exp(va);
    let grads = tape.backward_scalar(root).unwrap().into_param_grads(&store);
    assert_eq!(grads.get(b).data(), &[0.0; 3]);
    assert!((grads.get(a).data()[0] - 2f64.exp()).abs() < 1e-12);
}

#[test]
fn frozen_parameters_receive_no_gradient() {
    let mut store = ParamStore::<f64>::new();
    let a = store.insert("a", Tensor::scalar(2.0));
    store.set_trainable(a, false);
    let mut tape = Tape::with_params(&store);
    let va = tape.param(a);
    let root = tape.exp(va);
    let grads = tape.backward_scalar(root).unwrap();
    assert!(grads.param(a).is_none());
}

#[test]
fn forward_is_reproducible() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let q = uniform(&mut rng, &[5, 8], -2.0, 2.0);
    let run = || {
        let mut tape = Tape::<f64>::new();
        let v = tape.constant(q.clone());
        let y = tape.attention(v, v, v, 2, AttnMask::Causal { offset: 0 }).unwrap();
        let (g, b) = (tape_ones(&mut tape, 8), tape_zeros(&mut tape, 8));
        let z = tape.layer_norm(y, g, b, 1e-5).unwrap();
        tape.value(z).clone()
    };
    let a = run();
    let b = run();
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
}

fn tape_ones(tape: &mut Tape<'_>, d: usize) -> Var {
    tape.constant(Tensor::full(&[d], 1.0))
}

fn tape_zeros(tape: &mut Tape<'_>, d: usize) -> Var {
    tape.constant(Tensor::zeros(&[d]))
}

#[test]
fn f32_tapes_work() {
    let mut tape = Tape::<f32>::new();
    let x = tape.variable(Tensor::<f32>::row_vector(vec![1.0, 2.0]));
    let y = tape.softmax(x);
    let s = tape.sum(y);
    assert!((tape.value(s).data()[0] - 1.0).abs() < 1e-6);
    assert_eq!(tape.value(s).dtype(), DType::F32);
}

#[test]
fn attention_causal_matches_prefix_recompute() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = uniform(&mut rng, &[6, 8], -1.0, 1.0);
    let mut tape = Tape::<f64>::new();
    let all = tape.constant(x.clone());
    let full = tape.attention(all, all, all, 2, AttnMask::Causal { offset: 0 }).unwrap();
    let last_q = tape.slice_rows(all, 5, 6).unwrap();
    let step = tape.attention(last_q, all, all, 2, AttnMask::Causal { offset: 5 }).unwrap();
    let diff = tape.value(full).row(5).iter().zip(tape.value(step).data()).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
    assert!(diff < 1e-12);
}

proptest! {
    #[test]
    fn masked_softmax_is_a_distribution(
        vals in proptest::collection::vec(-30.0f64..30.0, 1..12),
        mask_bits in proptest::collection::vec(any::<bool>(), 12),
    ) {
        let n = vals.len();
        let mut keep: Vec<bool> = mask_bits[..n].to_vec();
        keep[0] = true;
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::row_vector(vals));
        let y = tape.softmax_masked(x, &keep).unwrap();
        let out = tape.value(y).data();
        let total: f64 = out.iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        for (v, k) in out.iter().zip(&keep) {
            prop_assert!(*v >= 0.0);
            if !k { prop_assert_eq!(*v, 0.0); }
        }
    }

    #[test]
    fn beta_conserves_alpha_mass(
        alpha in proptest::collection::vec(0.0f64..1.0, 1..10),
        energy in proptest::collection::vec(-5.0f64..5.0, 10),
        window in 1usize..6,
    ) {
        let n = alpha.len();
        let out = beta_row(&alpha, &energy[..n], window);
        let sa: f64 = alpha.iter().sum();
        let sb: f64 = out.beta.iter().sum();
        prop_assert!((sa - sb).abs() <= 1e-9);
    }
}

#[test]
fn alpha_row_examples() {
    let (a2, _) = alpha_row(&[0.5, 0.5, 0.5], None);
    assert_eq!(a2, vec![0.5, 0.25, 0.125]);
    let (a3, _) = alpha_row(&[1.0, 1.0, 1.0], Some(&a2));
    assert_eq!(a3, vec![0.0, 0.5, 0.25]);
}
