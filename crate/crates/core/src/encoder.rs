//! Chunked encoder and adaptor.
//!
//! Frames are encoded in fixed chunks. Each chunk attends over its own core
//! frames plus up to `left_context` earlier frames and never sees later
//! frames, so a chunk's rows are final as soon as its last frame arrives.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::config::{EncoderConfig, LmConfig};
use crate::error::{Error, Result};
use crate::layers::{sinusoid_table, Block, LayerNorm, Linear};
use crate::model::Model;
use crate::numerics::{AttnMask, ParamId, ParamStore, Real, Tape, Tensor, Var};

/// Acoustic-like input frames of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    /// `N×d_f`.
    pub frames: Tensor<f64>,
    pub frame_ms: f64,
    pub id: String,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// One chunk; indices are 0-based and `core_start..core_end` is half-open.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Chunk {
    pub core_start: usize,
    pub core_end: usize,
    pub context_start: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkPlan {
    pub chunks: Vec<Chunk>,
}

pub fn chunk_partition(n_frames: usize, chunk_size: usize, left_context: usize) -> Result<ChunkPlan> {
    if n_frames == 0 {
        return Err(Error::EmptyInput("chunk_partition"));
    }
    if chunk_size == 0 {
        return Err(Error::Config("chunk size must be at least 1".into()));
    }
    let chunks = (0..n_frames)
        .step_by(chunk_size)
        .map(|start| Chunk {
            core_start: start,
            core_end: (start + chunk_size).min(n_frames),
            context_start: start.saturating_sub(left_context),
        })
        .collect();
    Ok(ChunkPlan { chunks })
}

/// Embeddings `h_1..h_N` in the language model's input space.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput<R = f64> {
    pub embeddings: Tensor<R>,
    pub plan: ChunkPlan,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub input: Linear,
    pub blocks: Vec<Block>,
    pub final_ln: Option<LayerNorm>,
    pub adaptor_up: Linear,
    pub adaptor_down: Linear,
}

impl EncoderParams {
    pub fn init<R: Real>(store: &mut ParamStore<R>, rng: &mut impl Rng, cfg: &EncoderConfig, lm: &LmConfig) -> Self {
        let d = cfg.d_model;
        let input = Linear::init(store, rng, "encoder.input", cfg.input_dim, d, true);
        let blocks = (0..cfg.blocks)
            .map(|i| Block::init(store, rng, &format!("encoder.block{i}"), d, cfg.heads, cfg.ffn))
            .collect();
        let final_ln = (cfg.blocks > 0).then(|| LayerNorm::init(store, "encoder.final_ln", d));
        let adaptor_up = Linear::init(store, rng, "adaptor.up", d, cfg.adaptor_hidden, true);
        let adaptor_down = Linear::init(store, rng, "adaptor.down", cfg.adaptor_hidden, lm.d_model, true);
        EncoderParams {
            input,
            blocks,
            final_ln,
            adaptor_up,
            adaptor_down,
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut v = self.input.param_ids();
        for b in &self.blocks {
            v.extend(b.param_ids());
        }
        if let Some(ln) = &self.final_ln {
            v.push(ln.gain);
            v.push(ln.bias);
        }
        v.extend(self.adaptor_up.param_ids());
        v.extend(self.adaptor_down.param_ids());
        v
    }
}

fn to_real<R: Real>(t: &Tensor<f64>) -> Tensor<R> {
    Tensor::new(t.shape(), t.data().iter().map(|&v| R::of(v)).collect()).expect("same shape")
}

/// Encodes one span (context followed by core) and returns the core rows
/// before the adaptor. `first_frame` is the absolute index of the span's
/// first row.
pub fn encode_span<R: Real>(tape: &mut Tape<'_, R>, model: &Model<R>, span: Var, first_frame: usize, core_offset: usize) -> Result<Var> {
    let cfg = &model.config.encoder;
    let enc = &model.encoder;
    let rows = tape.value(span).rows();
    let mut x = enc.input.forward(tape, span)?;
    if cfg.positional {
        let pos = tape.constant(sinusoid_table(first_frame, rows, cfg.d_model));
        x = tape.add(x, pos)?;
    }
    for b in &enc.blocks {
        x = b.forward(tape, x, AttnMask::Full)?;
    }
    if let Some(ln) = &enc.final_ln {
        x = ln.forward(tape, x)?;
    }
    tape.slice_rows(x, core_offset, rows)
}

/// Feed-forward adaptor applied row by row.
pub fn adaptor_on_tape<R: Real>(tape: &mut Tape<'_, R>, model: &Model<R>, x: Var) -> Result<Var> {
    let enc = &model.encoder;
    let h = enc.adaptor_up.forward(tape, x)?;
    let h = tape.gelu(h);
    let y = enc.adaptor_down.forward(tape, h)?;
    if model.config.encoder.adaptor_residual {
        tape.add(y, x)
    } else {
        Ok(y)
    }
}

/// All chunks of `frames` on one tape; returns `N×d_lm`.
pub fn encode_on_tape<R: Real>(tape: &mut Tape<'_, R>, model: &Model<R>, frames: &Tensor<f64>) -> Result<Var> {
    let cfg = &model.config.encoder;
    if frames.cols() != cfg.input_dim {
        return Err(Error::Shape {
            op: "encode",
            detail: format!("frames have width {}, encoder expects {}", frames.cols(), cfg.input_dim),
        });
    }
    let plan = chunk_partition(frames.rows(), cfg.chunk_size, cfg.left_context)?;
    let mut parts = Vec::with_capacity(plan.chunks.len());
    for c in &plan.chunks {
        let span = tape.constant(to_real(&frames.slice_rows(c.context_start, c.core_end)));
        let core = encode_span(tape, model, span, c.context_start, c.core_start - c.context_start)?;
        parts.push(adaptor_on_tape(tape, model, core)?);
    }
    tape.concat_rows(&parts)
}

/// Parallel (whole-utterance) encoding.
pub fn encode_parallel<R: Real>(model: &Model<R>, features: &FeatureSequence) -> Result<EncoderOutput<R>> {
    let cfg = &model.config.encoder;
    let plan = chunk_partition(features.len(), cfg.chunk_size, cfg.left_context)?;
    let mut tape = Tape::inference(&model.store);
    let h = encode_on_tape(&mut tape, model, &features.frames)?;
    Ok(EncoderOutput {
        embeddings: tape.value(h).clone(),
        plan,
    })
}

/// Adaptor on plain rows.
pub fn adaptor_project<R: Real>(model: &Model<R>, rows: &Tensor<R>) -> Result<Tensor<R>> {
    let mut tape = Tape::inference(&model.store);
    let x = tape.constant(rows.clone());
    let y = adaptor_on_tape(&mut tape, model, x)?;
    Ok(tape.value(y).clone())
}

/// Incremental encoder state: the trailing raw frames kept as history.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderState {
    history: Vec<f64>,
    history_rows: usize,
    next_frame: usize,
    closed: bool,
    width: usize,
}

impl EncoderState {
    pub fn new(input_dim: usize) -> Self {
        EncoderState {
            history: Vec::new(),
            history_rows: 0,
            next_frame: 0,
            closed: false,
            width: input_dim,
        }
    }

    /// Frames consumed so far.
    pub fn frames_seen(&self) -> usize {
        self.next_frame
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }
}

/// Encodes one chunk of new frames and returns its rows after the adaptor.
///
/// Every call except the one flagged `final_chunk` must bring exactly
/// `chunk_size` frames; the final call may bring fewer, including none.
pub fn encode_streaming_step<R: Real>(
    model: &Model<R>,
    state: &mut EncoderState,
    new_frames: &Tensor<f64>,
    final_chunk: bool,
) -> Result<Tensor<R>> {
    let cfg = &model.config.encoder;
    if state.closed {
        return Err(Error::ClosedStream);
    }
    let n = if new_frames.is_empty() { 0 } else { new_frames.rows() };
    if n > 0 && new_frames.cols() != state.width {
        return Err(Error::Shape {
            op: "encode_streaming_step",
            detail: format!("frames have width {}, encoder expects {}", new_frames.cols(), state.width),
        });
    }
    if (!final_chunk && n != cfg.chunk_size) || n > cfg.chunk_size {
        return Err(Error::Shape {
            op: "encode_streaming_step",
            detail: format!("chunk of {n} frames, chunk size {}", cfg.chunk_size),
        });
    }
    state.closed = final_chunk;
    if n == 0 {
        return Ok(Tensor::zeros(&[0, model.config.lm.d_model]));
    }
    let mut span = state.history.clone();
    span.extend_from_slice(new_frames.data());
    let span_rows = state.history_rows + n;
    let span_t = Tensor::matrix(span_rows, state.width, span)?;
    let first = state.next_frame - state.history_rows;
    let mut tape = Tape::inference(&model.store);
    let x = tape.constant(to_real(&span_t));
    let core = encode_span(&mut tape, model, x, first, state.history_rows)?;
    let out = adaptor_on_tape(&mut tape, model, core)?;
    let keep = span_rows.min(cfg.left_context);
    state.history = span_t.slice_rows(span_rows - keep, span_rows).into_data();
    state.history_rows = keep;
    state.next_frame += n;
    Ok(tape.value(out).clone())
}

/// Streaming encoder accepting any number of frames per call.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderStream {
    state: EncoderState,
    pending: Vec<f64>,
    pending_rows: usize,
}

impl EncoderStream {
    pub fn new(input_dim: usize) -> Self {
        EncoderStream {
            state: EncoderState::new(input_dim),
            pending: Vec::new(),
            pending_rows: 0,
        }
    }

    pub fn state(&self) -> &EncoderState {
        &self.state
    }

    /// Buffers `frames` and returns the rows of every chunk completed by them.
    /// With `final_chunk` the remainder is flushed and the stream closes.
    pub fn push<R: Real>(&mut self, model: &Model<R>, frames: &Tensor<f64>, final_chunk: bool) -> Result<Vec<Tensor<R>>> {
        if self.state.closed {
            return Err(Error::ClosedStream);
        }
        let width = self.state.width;
        if !frames.is_empty() {
            if frames.cols() != width {
                return Err(Error::Shape {
                    op: "encoder stream",
                    detail: format!("frames have width {}, encoder expects {width}", frames.cols()),
                });
            }
            self.pending.extend_from_slice(frames.data());
            self.pending_rows += frames.rows();
        }
        let cs = model.config.encoder.chunk_size;
        let mut out = Vec::new();
        while self.pending_rows >= cs && !(final_chunk && self.pending_rows == cs) {
            let chunk: Vec<f64> = self.pending.drain(..cs * width).collect();
            self.pending_rows -= cs;
            out.push(encode_streaming_step(model, &mut self.state, &Tensor::matrix(cs, width, chunk)?, false)?);
        }
        if final_chunk {
            let rest = Tensor::matrix(self.pending_rows, width, core::mem::take(&mut self.pending))?;
            self.pending_rows = 0;
            out.push(encode_streaming_step(model, &mut self.state, &rest, true)?);
        }
        Ok(out)
    }
}
