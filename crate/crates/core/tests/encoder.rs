mod common;

use common::{features, random_frames, seeded, tiny_model, zero_all};
use mocha_asr_core::config::RunConfig;
use mocha_asr_core::encoder::{
    adaptor_project, chunk_partition, encode_on_tape, encode_parallel, encode_streaming_step, Chunk, EncoderState, EncoderStream,
};
use mocha_asr_core::numerics::{finite_diff_check, GradCheckOptions, Tape, Tensor};
use mocha_asr_core::{Error, Model};

fn cores(n: usize, cs: usize, lc: usize) -> Vec<(usize, usize, usize)> {
    // 1-based inclusive cores and context start, as written in the spec tables.
    chunk_partition(n, cs, lc)
        .unwrap()
        .chunks
        .iter()
        .map(|c: &Chunk| (c.core_start + 1, c.core_end, c.context_start + 1))
        .collect()
}

#[test]
fn partition_examples() {
    assert_eq!(cores(10, 4, 8), vec![(1, 4, 1), (5, 8, 1), (9, 10, 1)]);
    assert_eq!(cores(4, 4, 8), vec![(1, 4, 1)]);
    assert_eq!(cores(5, 2, 2), vec![(1, 2, 1), (3, 4, 1), (5, 5, 3)]);
    assert!(matches!(chunk_partition(0, 4, 8), Err(Error::EmptyInput(_))));
}

#[test]
fn partition_covers_frames_in_order() {
    for n in 1..30 {
        for cs in 1..6 {
            for lc in 0..7 {
                let plan = chunk_partition(n, cs, lc).unwrap();
                assert_eq!(plan.chunks.len(), n.div_ceil(cs));
                let mut next = 0;
                for c in &plan.chunks {
                    assert_eq!(c.core_start, next);
                    assert!(c.core_end > c.core_start && c.core_end - c.core_start <= cs);
                    assert_eq!(c.context_start, c.core_start.saturating_sub(lc));
                    next = c.core_end;
                }
                assert_eq!(next, n);
            }
        }
    }
}

#[test]
fn row_count_matches_frames() {
    let m = tiny_model(3);
    let mut rng = seeded(1);
    for n in [1, 2, 5, 9] {
        let out = encode_parallel(&m, &features(random_frames(&mut rng, n, 4))).unwrap();
        assert_eq!(out.embeddings.dims2(), (n, m.config.lm.d_model));
    }
}

#[test]
fn single_chunk_equals_whole_span_encoding() {
    let m = tiny_model(4);
    let mut cfg = m.config.clone();
    cfg.encoder.chunk_size = 50;
    let big = Model::<f64>::from_tensors(cfg, m.store.ids().map(|id| (m.store.name(id).to_string(), m.store.tensor(id).clone())).collect()).unwrap();
    let frames = random_frames(&mut seeded(2), 7, 4);
    let a = encode_parallel(&big, &features(frames.clone())).unwrap().embeddings;
    let mut cfg2 = m.config.clone();
    cfg2.encoder.chunk_size = 7;
    let exact = Model::<f64>::from_tensors(cfg2, m.store.ids().map(|id| (m.store.name(id).to_string(), m.store.tensor(id).clone())).collect()).unwrap();
    let b = encode_parallel(&exact, &features(frames)).unwrap().embeddings;
    assert_eq!(a, b);
}

#[test]
fn streaming_replay_matches_parallel() {
    let mut cfg = RunConfig::tiny();
    cfg.encoder.chunk_size = 4;
    cfg.encoder.left_context = 8;
    let m = Model::<f64>::new(cfg, 5).unwrap();
    let frames = random_frames(&mut seeded(3), 10, 4);
    let par = encode_parallel(&m, &features(frames.clone())).unwrap().embeddings;
    let mut st = EncoderState::new(4);
    let mut rows = Vec::new();
    for (s, e, fin) in [(0, 4, false), (4, 8, false), (8, 10, true)] {
        let out = encode_streaming_step(&m, &mut st, &frames.slice_rows(s, e), fin).unwrap();
        assert_eq!(out.rows(), e - s);
        rows.push(out);
    }
    let inc = Tensor::vstack(&rows.iter().collect::<Vec<_>>()).unwrap();
    assert!(par.max_abs_diff(&inc) <= 1e-9);
    assert!(matches!(
        encode_streaming_step(&m, &mut st, &frames.slice_rows(0, 4), false),
        Err(Error::ClosedStream)
    ));
}

#[test]
fn empty_final_flush_emits_nothing() {
    let m = tiny_model(6);
    let frames = random_frames(&mut seeded(4), 4, 4);
    let mut st = EncoderState::new(4);
    encode_streaming_step(&m, &mut st, &frames.slice_rows(0, 2), false).unwrap();
    encode_streaming_step(&m, &mut st, &frames.slice_rows(2, 4), false).unwrap();
    let out = encode_streaming_step(&m, &mut st, &Tensor::zeros(&[0, 4]), true).unwrap();
    assert_eq!(out.rows(), 0);
    assert!(st.is_closed());
}

#[test]
fn wrong_chunk_size_rejected() {
    let m = tiny_model(6);
    let mut st = EncoderState::new(4);
    let frames = random_frames(&mut seeded(4), 3, 4);
    assert!(matches!(encode_streaming_step(&m, &mut st, &frames, false), Err(Error::Shape { .. })));
}

#[test]
fn encoder_stream_accepts_any_piece_size() {
    let m = tiny_model(7);
    let frames = random_frames(&mut seeded(5), 11, 4);
    let par = encode_parallel(&m, &features(frames.clone())).unwrap().embeddings;
    for piece in [1, 2, 3, 5, 11] {
        let mut s = EncoderStream::new(4);
        let mut rows = Vec::new();
        let mut start = 0;
        while start < 11 {
            let end = (start + piece).min(11);
            rows.extend(s.push(&m, &frames.slice_rows(start, end), end == 11).unwrap());
            start = end;
        }
        let inc = Tensor::vstack(&rows.iter().collect::<Vec<_>>()).unwrap();
        assert!(par.max_abs_diff(&inc) <= 1e-9, "piece {piece}");
    }
}

#[test]
fn rows_ignore_future_chunks() {
    let m = tiny_model(8);
    let mut rng = seeded(6);
    let frames = random_frames(&mut rng, 9, 4);
    let base = encode_parallel(&m, &features(frames.clone())).unwrap().embeddings;
    let plan = chunk_partition(9, m.config.encoder.chunk_size, m.config.encoder.left_context).unwrap();
    for c in &plan.chunks {
        let mut changed = frames.clone();
        for j in c.core_end..9 {
            changed.row_mut(j).iter_mut().for_each(|v| *v += 3.0);
        }
        let out = encode_parallel(&m, &features(changed)).unwrap().embeddings;
        for i in 0..c.core_end {
            assert_eq!(out.row(i), base.row(i));
        }
    }
}

#[test]
fn identity_configuration_passes_rows_through() {
    let mut cfg = RunConfig::tiny();
    cfg.encoder.blocks = 0;
    cfg.encoder.positional = false;
    cfg.encoder.adaptor_residual = true;
    cfg.encoder.input_dim = 8;
    cfg.synth.feature_dim = 8;
    cfg.encoder.d_model = 8;
    cfg.lm.d_model = 8;
    let mut m = Model::<f64>::new(cfg, 1).unwrap();
    zero_all(&mut m);
    let id = m.encoder.input.w;
    m.store.set(id, Tensor::identity(8));
    let frames = random_frames(&mut seeded(7), 6, 8);
    let out = encode_parallel(&m, &features(frames.clone())).unwrap().embeddings;
    assert_eq!(out, frames);
}

#[test]
fn zero_adaptor_gives_zero_rows() {
    let mut m = tiny_model(9);
    zero_all(&mut m);
    let rows = random_frames(&mut seeded(8), 5, 8);
    let out = adaptor_project(&m, &rows).unwrap();
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn adaptor_is_per_row() {
    let m = tiny_model(10);
    let rows = random_frames(&mut seeded(9), 5, 8);
    let all = adaptor_project(&m, &rows).unwrap();
    for i in 0..5 {
        let one = adaptor_project(&m, &rows.slice_rows(i, i + 1)).unwrap();
        assert_eq!(one.row(0), all.row(i));
    }
}

#[test]
fn encoder_gradients_match_finite_differences() {
    let m = tiny_model(11);
    let frames = random_frames(&mut seeded(10), 5, 4);
    let ids = m.encoder.param_ids();
    let report = finite_diff_check(
        |tape: &mut Tape<'_, f64>| {
            let h = encode_on_tape(tape, &m, &frames)?;
            let sq = tape.mul(h, h)?;
            let t = tape.tanh(h);
            let s = tape.add(sq, t)?;
            Ok(tape.sum(s))
        },
        &m.store,
        &ids,
        GradCheckOptions {
            max_elems: Some(12),
            ..GradCheckOptions::default()
        },
    )
    .unwrap();
    assert!(report.all_pass(), "{report:?}");
}
