//! Decoder-only language model over mixed audio/text sequences.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::config::{LmConfig, LossPlacement, LoraPolicy, BOS, EOS};
use crate::error::{Error, Result};
use crate::layers::{sinusoid_table, Block, LayerCache, LayerNorm, Linear};
use crate::model::Model;
use crate::numerics::{normal, AttnMask, ParamId, ParamStore, Real, Tape, Tensor, Var};

/// Content of one sequence position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Payload {
    /// Encoder row (0-based).
    Audio(usize),
    Text(usize),
}

/// A mixed sequence with its loss mask and targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterleavedBatch {
    pub positions: Vec<Payload>,
    pub loss_mask: Vec<bool>,
    pub targets: Vec<Option<usize>>,
}

impl InterleavedBatch {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn masked_count(&self) -> usize {
        self.loss_mask.iter().filter(|&&m| m).count()
    }

    pub fn masked_positions(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.loss_mask[i]).collect()
    }

    pub fn masked_targets(&self) -> Vec<usize> {
        self.targets.iter().zip(&self.loss_mask).filter(|(_, &m)| m).map(|(t, _)| t.expect("masked position has a target")).collect()
    }

    /// Recovers the boundary path `t_1..t_L` and the tokens `y_1..y_L` of a
    /// streaming arrangement built with loss at the token positions.
    pub fn recover(&self) -> Result<(Vec<usize>, Vec<usize>)> {
        let mut path = vec![0];
        let mut tokens = Vec::new();
        let mut frames = 0;
        for (i, p) in self.positions.iter().enumerate() {
            match *p {
                Payload::Audio(_) => frames += 1,
                Payload::Text(tok) => {
                    path.push(frames);
                    tokens.push(tok);
                    if let Some(t) = self.targets[i] {
                        if i + 1 == self.len() {
                            tokens.push(t);
                        }
                    }
                }
            }
        }
        if tokens.len() != path.len() {
            return Err(Error::Shape {
                op: "recover",
                detail: "sequence does not end with a supervised text position".into(),
            });
        }
        Ok((path, tokens))
    }
}

fn check_tokens(tokens: &[usize]) -> Result<()> {
    let l = tokens.len();
    if l < 2 || tokens[0] != BOS || tokens[l - 1] != EOS || tokens[1..l - 1].iter().any(|&t| t == BOS || t == EOS) {
        return Err(Error::Shape {
            op: "token sequence",
            detail: format!("expected BOS … EOS with no inner specials, got {tokens:?}"),
        });
    }
    Ok(())
}

/// Streaming arrangement `[seg_2, y_1, seg_3, y_2, …, seg_L, y_{L-1}]` where
/// `seg_i` holds frames `t_{i-1}+1..=t_i`. `path` is `t_1..t_L` with `t_1 = 0`.
pub fn interleave(n_frames: usize, tokens: &[usize], path: &[usize], placement: LossPlacement) -> Result<InterleavedBatch> {
    check_tokens(tokens)?;
    let l = tokens.len();
    if path.len() != l || path[0] != 0 {
        return Err(Error::Path(format!("path {path:?} for {l} tokens")));
    }
    if path.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Path(format!("path {path:?} is not strictly increasing")));
    }
    if path[l - 1] > n_frames {
        return Err(Error::Bounds {
            index: path[l - 1],
            bound: n_frames,
        });
    }
    let mut b = InterleavedBatch {
        positions: Vec::new(),
        loss_mask: Vec::new(),
        targets: Vec::new(),
    };
    for i in 1..l {
        for j in path[i - 1]..path[i] {
            b.positions.push(Payload::Audio(j));
            b.loss_mask.push(false);
            b.targets.push(None);
        }
        if placement == LossPlacement::Frame {
            let last = b.len() - 1;
            b.loss_mask[last] = true;
            b.targets[last] = Some(tokens[i]);
        }
        b.positions.push(Payload::Text(tokens[i - 1]));
        let at_token = placement == LossPlacement::Token;
        b.loss_mask.push(at_token);
        b.targets.push(at_token.then_some(tokens[i]));
    }
    Ok(b)
}

/// Non-streaming arrangement `[h_1..h_N, y_1..y_{L-1}]`.
pub fn nonstream_arrange(n_frames: usize, tokens: &[usize]) -> Result<InterleavedBatch> {
    check_tokens(tokens)?;
    let l = tokens.len();
    let mut b = InterleavedBatch {
        positions: (0..n_frames).map(Payload::Audio).collect(),
        loss_mask: vec![false; n_frames],
        targets: vec![None; n_frames],
    };
    for i in 0..l - 1 {
        b.positions.push(Payload::Text(tokens[i]));
        b.loss_mask.push(true);
        b.targets.push(Some(tokens[i + 1]));
    }
    Ok(b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmParams {
    pub tok_embed: ParamId,
    pub pos_embed: ParamId,
    pub blocks: Vec<Block>,
    pub final_ln: LayerNorm,
    pub head: Linear,
}

impl LmParams {
    pub fn init<R: Real>(store: &mut ParamStore<R>, rng: &mut impl Rng, cfg: &LmConfig, vocab: usize) -> Result<Self> {
        let d = cfg.d_model;
        let tok_embed = store.insert("lm.tok_embed", normal(rng, &[vocab, d], 1.0));
        let pos_embed = store.insert("lm.pos_embed", sinusoid_table(0, cfg.max_len, d));
        let mut blocks = Vec::with_capacity(cfg.layers);
        for i in 0..cfg.layers {
            blocks.push(Block::init(store, rng, &format!("lm.block{i}"), d, cfg.heads, cfg.ffn));
        }
        if cfg.lora_policy != LoraPolicy::BaseOnly {
            for (i, b) in blocks.iter_mut().enumerate() {
                b.add_lora(store, rng, &format!("lm.block{i}"), cfg.lora_rank, cfg.lora_alpha)?;
            }
        }
        let final_ln = LayerNorm::init(store, "lm.final_ln", d);
        let head = Linear::init(store, rng, "lm.head", d, vocab, true);
        Ok(LmParams {
            tok_embed,
            pos_embed,
            blocks,
            final_ln,
            head,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut v = vec![self.tok_embed, self.pos_embed, self.final_ln.gain, self.final_ln.bias];
        for b in &self.blocks {
            v.extend(b.param_ids());
        }
        v.extend(self.head.param_ids());
        v
    }

    /// Adapter tensors only.
    pub fn adapter_ids(&self) -> Vec<ParamId> {
        let mut v = Vec::new();
        for b in &self.blocks {
            for l in [&b.q, &b.k, &b.v, &b.o] {
                if let Some(a) = &l.lora {
                    v.push(a.a);
                    v.push(a.b);
                }
            }
        }
        v
    }
}

/// Logits (`masked×V`, in position order) of `batch`, with audio payloads
/// taken from the rows of `h`.
pub fn lm_forward_on_tape<R: Real>(tape: &mut Tape<'_, R>, model: &Model<R>, batch: &InterleavedBatch, h: Var) -> Result<Var> {
    let cfg = &model.config.lm;
    let lm = &model.lm;
    let t = batch.len();
    if t > cfg.max_len {
        return Err(Error::Length { len: t, max: cfg.max_len });
    }
    let n = tape.value(h).rows();
    if tape.value(h).cols() != cfg.d_model {
        return Err(Error::Shape {
            op: "lm_forward",
            detail: format!("audio rows have width {}, model width {}", tape.value(h).cols(), cfg.d_model),
        });
    }
    let text: Vec<usize> = batch
        .positions
        .iter()
        .filter_map(|p| match p {
            Payload::Text(t) => Some(*t),
            Payload::Audio(_) => None,
        })
        .collect();
    let mut order = Vec::with_capacity(t);
    let mut k = 0;
    for p in &batch.positions {
        match *p {
            Payload::Audio(j) => {
                if j >= n {
                    return Err(Error::Bounds { index: j, bound: n });
                }
                order.push(j);
            }
            Payload::Text(_) => {
                order.push(n + k);
                k += 1;
            }
        }
    }
    let table = tape.param(lm.tok_embed);
    let emb = tape.embedding(table, &text)?;
    let pool = tape.concat_rows(&[h, emb])?;
    let x = tape.gather_rows(pool, &order)?;
    let pos = tape.param(lm.pos_embed);
    let pos = tape.slice_rows(pos, 0, t)?;
    let mut x = tape.add(x, pos)?;
    for b in &lm.blocks {
        x = b.forward(tape, x, AttnMask::Causal { offset: 0 })?;
    }
    let masked = batch.masked_positions();
    let x = tape.gather_rows(x, &masked)?;
    let x = lm.final_ln.forward(tape, x)?;
    lm.head.forward(tape, x)
}

/// Inference wrapper around [`lm_forward_on_tape`].
pub fn lm_forward<R: Real>(model: &Model<R>, batch: &InterleavedBatch, h: &Tensor<R>) -> Result<Tensor<R>> {
    let mut tape = Tape::inference(&model.store);
    let hv = tape.constant(h.clone());
    let out = lm_forward_on_tape(&mut tape, model, batch, hv)?;
    Ok(tape.value(out).clone())
}

/// One position fed to [`lm_step`].
#[derive(Debug, Clone, Copy)]
pub enum StepInput<'a, R> {
    Audio(&'a [R]),
    Text(usize),
}

/// Per-layer keys and values of every consumed position.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeCache<R = f64> {
    layers: Vec<LayerCache<R>>,
    /// `None` for audio positions, the token id for text positions.
    history: Vec<Option<usize>>,
}

impl<R: Real> DecodeCache<R> {
    pub fn new(model: &Model<R>) -> Self {
        let d = model.config.lm.d_model;
        DecodeCache {
            layers: (0..model.lm.blocks.len()).map(|_| LayerCache::new(d)).collect(),
            history: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    /// Token ids of the text positions consumed so far.
    pub fn text_tokens(&self) -> Vec<usize> {
        self.history.iter().flatten().copied().collect()
    }
}

/// Appends one position and returns the next-token logits there (`1×V`).
pub fn lm_step<R: Real>(model: &Model<R>, cache: &mut DecodeCache<R>, input: StepInput<'_, R>) -> Result<Tensor<R>> {
    let cfg = &model.config.lm;
    let lm = &model.lm;
    if cache.layers.len() != lm.blocks.len() {
        return Err(Error::Cache(format!("cache has {} layers, model {}", cache.layers.len(), lm.blocks.len())));
    }
    let pos = cache.len();
    if pos >= cfg.max_len {
        return Err(Error::Length {
            len: pos + 1,
            max: cfg.max_len,
        });
    }
    let mut tape = Tape::inference(&model.store);
    let (x, kind) = match input {
        StepInput::Audio(row) => {
            if row.len() != cfg.d_model {
                return Err(Error::Cache(format!("audio row width {}, model width {}", row.len(), cfg.d_model)));
            }
            (tape.constant(Tensor::row_vector(row.to_vec())), None)
        }
        StepInput::Text(tok) => {
            let table = tape.param(lm.tok_embed);
            (tape.embedding(table, &[tok])?, Some(tok))
        }
    };
    let pe = tape.param(lm.pos_embed);
    let pe = tape.slice_rows(pe, pos, pos + 1)?;
    let mut x = tape.add(x, pe)?;
    for (b, c) in lm.blocks.iter().zip(cache.layers.iter_mut()) {
        x = b.step(&mut tape, x, c)?;
    }
    let x = lm.final_ln.forward(&mut tape, x)?;
    let logits = lm.head.forward(&mut tape, x)?;
    cache.history.push(kind);
    Ok(tape.value(logits).clone())
}

/// Index of the largest logit, never choosing BOS. Ties go to the lower id.
pub fn greedy_token<R: Real>(logits: &[R]) -> usize {
    let mut best = usize::MAX;
    for (i, &v) in logits.iter().enumerate() {
        if i == BOS {
            continue;
        }
        if best == usize::MAX || v > logits[best] {
            best = i;
        }
    }
    best
}

fn log_softmax_f64<R: Real>(logits: &[R]) -> Vec<f64> {
    let xs: Vec<f64> = logits.iter().map(|v| v.as_f64()).collect();
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + num_traits::Float::ln(xs.iter().map(|&x| num_traits::Float::exp(x - m)).sum::<f64>());
    xs.iter().map(|&x| x - lse).collect()
}

/// A model that scores next tokens incrementally.
pub trait StepScorer {
    type State: Clone;
    /// Feeds `token` and returns next-token logits.
    fn step(&self, state: &mut Self::State, token: usize) -> Result<Vec<f64>>;
}

#[derive(Clone)]
struct Hyp<S> {
    tokens: Vec<usize>,
    logp: f64,
    state: S,
    logits: Vec<f64>,
    done: bool,
}

impl<S> Hyp<S> {
    fn score(&self) -> f64 {
        self.logp / self.tokens.len().max(1) as f64
    }
}

/// Length-normalized beam search. `first_logits` are the logits after the
/// prompt; returned tokens exclude BOS and end with EOS unless `max_len` cut
/// the search short.
pub fn beam_search<S: StepScorer>(scorer: &S, state: S::State, first_logits: Vec<f64>, beam: usize, max_len: usize) -> Result<Vec<usize>> {
    let beam = beam.max(1);
    let mut hyps = vec![Hyp {
        tokens: Vec::new(),
        logp: 0.0,
        state,
        logits: first_logits,
        done: false,
    }];
    for _ in 0..max_len {
        if hyps.iter().all(|h| h.done) {
            break;
        }
        let mut cands: Vec<(f64, usize, Option<usize>, f64)> = Vec::new();
        for (hi, h) in hyps.iter().enumerate() {
            if h.done {
                cands.push((h.score(), hi, None, h.logp));
                continue;
            }
            let lp = log_softmax_f64(&h.logits);
            let mut order: Vec<usize> = (0..lp.len()).filter(|&t| t != BOS).collect();
            order.sort_by(|&a, &b| lp[b].partial_cmp(&lp[a]).unwrap_or(core::cmp::Ordering::Equal).then(a.cmp(&b)));
            for &t in order.iter().take(beam) {
                let logp = h.logp + lp[t];
                cands.push((logp / (h.tokens.len() + 1) as f64, hi, Some(t), logp));
            }
        }
        cands.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(core::cmp::Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        let mut next = Vec::with_capacity(beam);
        for &(_, hi, tok, logp) in cands.iter().take(beam) {
            let h = &hyps[hi];
            match tok {
                None => next.push(h.clone()),
                Some(t) => {
                    let mut tokens = h.tokens.clone();
                    tokens.push(t);
                    let done = t == EOS;
                    let mut state = h.state.clone();
                    let logits = if done { Vec::new() } else { scorer.step(&mut state, t)? };
                    next.push(Hyp {
                        tokens,
                        logp,
                        state,
                        logits,
                        done,
                    });
                }
            }
        }
        hyps = next;
    }
    let best = hyps
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| {
            (a.done, a.score())
                .partial_cmp(&(b.done, b.score()))
                .unwrap_or(core::cmp::Ordering::Equal)
                .then(ib.cmp(ia))
        })
        .map(|(_, h)| h.tokens.clone())
        .unwrap_or_default();
    Ok(best)
}

struct LmScorer<'m, R: Real> {
    model: &'m Model<R>,
}

impl<'m, R: Real> StepScorer for LmScorer<'m, R> {
    type State = DecodeCache<R>;
    fn step(&self, state: &mut DecodeCache<R>, token: usize) -> Result<Vec<f64>> {
        let l = lm_step(self.model, state, StepInput::Text(token))?;
        Ok(l.data().iter().map(|v| v.as_f64()).collect())
    }
}

fn prompt<R: Real>(model: &Model<R>, h: &Tensor<R>) -> Result<(DecodeCache<R>, Vec<f64>)> {
    let mut cache = DecodeCache::new(model);
    for j in 0..h.rows() {
        lm_step(model, &mut cache, StepInput::Audio(h.row(j)))?;
    }
    let logits = lm_step(model, &mut cache, StepInput::Text(BOS))?;
    Ok((cache, logits.data().iter().map(|v| v.as_f64()).collect()))
}

/// Non-streaming beam search from `[h_1..h_N, BOS]`.
pub fn beam_search_nonstream<R: Real>(model: &Model<R>, h: &Tensor<R>, beam: usize, max_len: usize) -> Result<Vec<usize>> {
    let (cache, logits) = prompt(model, h)?;
    beam_search(&LmScorer { model }, cache, logits, beam, max_len)
}

/// Non-streaming greedy decoding from `[h_1..h_N, BOS]`.
pub fn greedy_nonstream<R: Real>(model: &Model<R>, h: &Tensor<R>, max_len: usize) -> Result<Vec<usize>> {
    let (mut cache, mut logits) = prompt(model, h)?;
    let mut out = Vec::new();
    while out.len() < max_len {
        let t = greedy_token(&logits);
        out.push(t);
        if t == EOS {
            break;
        }
        logits = lm_step(model, &mut cache, StepInput::Text(t))?.data().iter().map(|v| v.as_f64()).collect();
    }
    Ok(out)
}
