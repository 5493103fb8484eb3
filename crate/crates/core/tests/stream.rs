mod common;

use common::{random_frames, seeded, tiny_model};
use mocha_asr_core::config::{RunConfig, BOS, EOS};
use mocha_asr_core::numerics::Tensor;
use mocha_asr_core::stream::{decode_stream, latency_report, summarize_latency, Emission, SessionStatus, StreamSession};
use mocha_asr_core::{Error, Model};

fn with_offset(seed: u64, r: f64) -> Model<f64> {
    let mut m = tiny_model(seed);
    let id = m.policy.monotonic.r.unwrap();
    m.store.set(id, Tensor::full(&[1], r));
    m
}

fn bias_token(m: &mut Model<f64>, token: usize, value: f64) {
    let b = m.lm.head.b.unwrap();
    m.store.tensor_mut(b).data_mut()[token] = value;
}

fn em(token: usize, trigger: usize) -> Emission {
    Emission {
        token,
        trigger,
        available: trigger,
        forced: false,
    }
}

#[test]
fn always_trigger_emits_one_token_per_frame() {
    let mut m = with_offset(1, 60.0);
    bias_token(&mut m, EOS, -1e3);
    let frames = random_frames(&mut seeded(1), 9, 4);
    let s = decode_stream(&m, &frames, 0).unwrap();
    let policy: Vec<_> = s.emissions().iter().filter(|e| !e.forced).collect();
    assert_eq!(policy.len(), 9);
    for (i, e) in policy.iter().enumerate() {
        assert_eq!(e.trigger, i + 1);
    }
}

#[test]
fn never_trigger_waits_for_finalize() {
    let m = with_offset(2, -60.0);
    let frames = random_frames(&mut seeded(2), 7, 4);
    let mut s = StreamSession::new(&m);
    assert!(s.feed_audio(&frames, false).unwrap().is_empty());
    assert!(s.feed_audio(&Tensor::zeros(&[0, 4]), true).unwrap().is_empty());
    let out = s.finalize().unwrap();
    assert!(!out.is_empty());
    assert!(out.iter().all(|e| e.forced && e.trigger == 7));
    assert_eq!(s.status(), SessionStatus::Closed);
}

#[test]
fn forced_eos_at_end_of_stream() {
    let mut m = with_offset(3, -60.0);
    bias_token(&mut m, EOS, 1e3);
    let s = decode_stream(&m, &random_frames(&mut seeded(3), 6, 4), 2).unwrap();
    assert_eq!(s.emissions(), &[Emission { token: EOS, trigger: 6, available: 6, forced: true }]);
    assert!(!s.truncated());
}

#[test]
fn finalize_cap_sets_truncation() {
    let mut m = with_offset(4, -60.0);
    bias_token(&mut m, EOS, -1e3);
    let s = decode_stream(&m, &random_frames(&mut seeded(4), 5, 4), 0).unwrap();
    assert!(s.truncated());
    assert_eq!(s.emissions().len(), 1 + m.config.stream.finalize_cap);
    assert!(s.transcript().iter().all(|&t| t != EOS));
    assert_eq!(s.status(), SessionStatus::Closed);
}

#[test]
fn closed_session_rejects_audio_and_finalize_is_empty() {
    let mut m = with_offset(5, 60.0);
    bias_token(&mut m, EOS, 1e3);
    let frames = random_frames(&mut seeded(5), 4, 4);
    let mut s = StreamSession::new(&m);
    let out = s.feed_audio(&frames, false).unwrap();
    assert_eq!(out, vec![Emission { available: 4, ..em(EOS, 1) }]);
    assert_eq!(s.status(), SessionStatus::Closed);
    assert!(matches!(s.feed_audio(&frames, false), Err(Error::ClosedStream)));
    assert!(s.finalize().unwrap().is_empty());
}

#[test]
fn emissions_do_not_depend_on_arrival_granularity() {
    for seed in 0..6 {
        let m = with_offset(seed, 0.5);
        let n = 5 + seed as usize * 3;
        let frames = random_frames(&mut seeded(10 + seed), n, 4);
        let whole = decode_stream(&m, &frames, 0).unwrap();
        for piece in [1, 2, 3, 7] {
            let s = decode_stream(&m, &frames, piece).unwrap();
            let strip = |e: &[Emission]| e.iter().map(|e| (e.token, e.trigger, e.forced)).collect::<Vec<_>>();
            assert_eq!(strip(s.emissions()), strip(whole.emissions()), "seed {seed} piece {piece}");
        }
    }
}

#[test]
fn session_invariants_hold() {
    for seed in 0..6 {
        let m = with_offset(seed, 1.0);
        let frames = random_frames(&mut seeded(20 + seed), 14, 4);
        let mut s = StreamSession::new(&m);
        let mut seen: Vec<Emission> = Vec::new();
        for start in (0..14).step_by(3) {
            let end = (start + 3).min(14);
            if s.status() != SessionStatus::Open {
                break;
            }
            s.feed_audio(&frames.slice_rows(start, end), end == 14).unwrap();
            assert_eq!(&s.emissions()[..seen.len()], seen.as_slice());
            seen = s.emissions().to_vec();
        }
        s.finalize().unwrap();
        let e = s.emissions();
        let policy: Vec<_> = e.iter().filter(|x| !x.forced).collect();
        assert!(policy.windows(2).all(|w| w[0].trigger < w[1].trigger));
        assert!(e.iter().all(|x| x.trigger <= x.available));
        let mut text = vec![BOS];
        text.extend(s.transcript());
        let fed = s.cache().text_tokens();
        assert_eq!(fed.as_slice(), &text[..fed.len()]);
        assert!(fed.len() == text.len() - 1 || s.truncated());
    }
}

#[test]
fn policy_head_does_not_affect_decoding() {
    let m = with_offset(7, 0.5);
    let frames = random_frames(&mut seeded(7), 12, 4);
    let a = decode_stream(&m, &frames, 0).unwrap().emissions().to_vec();
    let mut m2 = m.clone();
    let w = m2.policy.head.w;
    m2.store.tensor_mut(w).data_mut().iter_mut().for_each(|v| *v = *v * -3.0 + 1.0);
    let b = decode_stream(&m2, &frames, 0).unwrap().emissions().to_vec();
    assert_eq!(a, b);
}

#[test]
fn latency_examples() {
    let r = latency_report(&[em(4, 3), em(5, 7), em(EOS, 9)], &[2, 5], 40.0).unwrap().unwrap();
    assert_eq!(r.delays, vec![1, 2]);
    assert_eq!(r.avg, 1.5);
    assert_eq!((r.first, r.last), (1.0, 2.0));
    let exact = latency_report(&[em(4, 2), em(5, 5)], &[2, 5], 40.0).unwrap().unwrap();
    assert!(exact.delays.iter().all(|&d| d == 0));
    assert!(matches!(latency_report(&[em(4, 2)], &[2, 5], 40.0), Err(Error::Alignment { hyp: 1, gold: 2 })));
    assert_eq!(latency_report(&[em(EOS, 2)], &[], 40.0).unwrap(), None);
}

#[test]
fn mid_token_index() {
    // Five symbols: L - 1 = 6, mid token index ⌈6/2⌉ + 1 = 4, i.e. the third symbol.
    let e: Vec<_> = (0..5).map(|i| em(2 + i, 10 * (i + 1) + i)).collect();
    let gold: Vec<_> = (0..5).map(|i| 10 * (i + 1)).collect();
    let r = latency_report(&e, &gold, 40.0).unwrap().unwrap();
    assert_eq!(r.mid, 2.0);
}

#[test]
fn summary_pools_tokens_and_counts_misaligned() {
    let a = latency_report(&[em(4, 3), em(5, 7)], &[2, 5], 40.0);
    let b = latency_report(&[em(4, 6)], &[2], 40.0);
    let c = latency_report(&[em(4, 6)], &[2, 3], 40.0);
    let s = summarize_latency(&[a, b, c]);
    assert_eq!((s.utterances, s.tokens, s.misaligned), (2, 3, 1));
    assert!((s.avg - 7.0 / 3.0).abs() < 1e-15);
    assert!((s.first - 2.5).abs() < 1e-15);
}

#[test]
fn default_config_validates() {
    RunConfig::default().validate().unwrap();
}
