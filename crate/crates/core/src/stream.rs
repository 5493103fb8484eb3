//! Streaming inference: incremental encoding, policy scan, and greedy
//! decoding of each triggered segment.

use alloc::vec::Vec;

use crate::config::{BOS, EOS};
use crate::encoder::EncoderStream;
use crate::error::{Error, Result};
use crate::lm::{greedy_token, lm_step, DecodeCache, StepInput};
use crate::mocha::{hard_context, policy_decode_step, scan_trigger, selection_probability, PolicyState};
use crate::model::Model;
use crate::numerics::{Real, Tensor};

/// One emitted token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Emission {
    pub token: usize,
    /// Boundary `t_i` (1-based frame) of the segment that produced the token.
    pub trigger: usize,
    /// Encoded frames available when the token was emitted.
    pub available: usize,
    /// Emitted by end-of-stream forcing rather than a policy trigger.
    pub forced: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionStatus {
    Open,
    Finalizing,
    Closed,
}

/// Decoding state of one stream.
#[derive(Debug, Clone)]
pub struct StreamSession<'m, R: Real = f64> {
    model: &'m Model<R>,
    encoder: EncoderStream,
    rows: Vec<R>,
    policy: PolicyState<R>,
    cache: DecodeCache<R>,
    last_token: usize,
    t_prev: usize,
    emissions: Vec<Emission>,
    status: SessionStatus,
    truncated: bool,
}

impl<'m, R: Real> StreamSession<'m, R> {
    pub fn new(model: &'m Model<R>) -> Self {
        StreamSession {
            model,
            encoder: EncoderStream::new(model.config.encoder.input_dim),
            rows: Vec::new(),
            policy: PolicyState::initial(model),
            cache: DecodeCache::new(model),
            last_token: BOS,
            t_prev: 0,
            emissions: Vec::new(),
            status: SessionStatus::Open,
            truncated: false,
        }
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    pub fn emissions(&self) -> &[Emission] {
        &self.emissions
    }

    /// Emitted tokens, EOS included when reached.
    pub fn transcript(&self) -> Vec<usize> {
        self.emissions.iter().map(|e| e.token).collect()
    }

    /// Set when end-of-stream forcing hit its cap before EOS.
    pub fn truncated(&self) -> bool {
        self.truncated
    }

    pub fn cache(&self) -> &DecodeCache<R> {
        &self.cache
    }

    /// Encoded frames so far.
    pub fn available(&self) -> usize {
        self.rows.len() / self.model.config.lm.d_model
    }

    fn encoded(&self) -> Result<Tensor<R>> {
        Tensor::matrix(self.available(), self.model.config.lm.d_model, self.rows.clone())
    }

    fn row(&self, j: usize) -> &[R] {
        let d = self.model.config.lm.d_model;
        &self.rows[(j - 1) * d..j * d]
    }

    /// Appends `frames`; with `final_chunk` the encoder is flushed. Returns
    /// the tokens emitted on the way.
    pub fn feed_audio(&mut self, frames: &Tensor<f64>, final_chunk: bool) -> Result<Vec<Emission>> {
        if self.status != SessionStatus::Open {
            return Err(Error::ClosedStream);
        }
        for chunk in self.encoder.push(self.model, frames, final_chunk)? {
            self.rows.extend_from_slice(chunk.data());
        }
        if final_chunk {
            self.status = SessionStatus::Finalizing;
        }
        let start = self.emissions.len();
        self.decode_available()?;
        Ok(self.emissions[start..].to_vec())
    }

    fn decode_available(&mut self) -> Result<()> {
        let th = self.model.config.mocha.threshold;
        while self.status != SessionStatus::Closed {
            let available = self.available();
            let (model, policy) = (self.model, &self.policy);
            let rows = &self.rows;
            let d = model.config.lm.d_model;
            let hit = scan_trigger(|j| selection_probability(model, policy, &rows[(j - 1) * d..j * d]), available, self.t_prev + 1, th)?;
            match hit {
                Some(t) => self.emit(t, false)?,
                None => break,
            }
        }
        Ok(())
    }

    /// Feeds frames `t_prev+1..=t` and the previous token, emits the greedy
    /// next token and advances the policy.
    fn emit(&mut self, t: usize, forced: bool) -> Result<()> {
        for j in self.t_prev + 1..=t {
            let row = self.row(j).to_vec();
            lm_step(self.model, &mut self.cache, StepInput::Audio(&row))?;
        }
        let logits = lm_step(self.model, &mut self.cache, StepInput::Text(self.last_token))?;
        let token = greedy_token(logits.data());
        let h = self.encoded()?;
        let c = hard_context(self.model, &self.policy, &h, t)?;
        let (next, _) = policy_decode_step(self.model, &self.policy, self.last_token, &c)?;
        self.policy = next;
        self.emissions.push(Emission {
            token,
            trigger: t,
            available: self.available(),
            forced,
        });
        self.last_token = token;
        self.t_prev = t;
        if token == EOS {
            self.status = SessionStatus::Closed;
        }
        Ok(())
    }

    /// Ends the stream: consumes any remaining frames as one forced segment,
    /// then continues text-only until EOS or the configured cap.
    pub fn finalize(&mut self) -> Result<Vec<Emission>> {
        let start = self.emissions.len();
        if self.status == SessionStatus::Closed {
            return Ok(Vec::new());
        }
        if self.status == SessionStatus::Open {
            self.feed_audio(&Tensor::zeros(&[0, self.model.config.encoder.input_dim]), true)?;
            if self.status == SessionStatus::Closed {
                return Ok(self.emissions[start..].to_vec());
            }
        }
        let n = self.available();
        if self.t_prev < n {
            self.emit(n, true)?;
        }
        let mut extra = 0;
        while self.status != SessionStatus::Closed {
            if extra == self.model.config.stream.finalize_cap {
                self.truncated = true;
                break;
            }
            let logits = lm_step(self.model, &mut self.cache, StepInput::Text(self.last_token))?;
            let token = greedy_token(logits.data());
            self.emissions.push(Emission {
                token,
                trigger: n,
                available: n,
                forced: true,
            });
            self.last_token = token;
            extra += 1;
            if token == EOS {
                self.status = SessionStatus::Closed;
            }
        }
        self.status = SessionStatus::Closed;
        Ok(self.emissions[start..].to_vec())
    }
}

/// Streams a whole utterance split into pieces of `piece` frames (0 means
/// one call) and finalizes.
pub fn decode_stream<'m, R: Real>(model: &'m Model<R>, frames: &Tensor<f64>, piece: usize) -> Result<StreamSession<'m, R>> {
    let mut s = StreamSession::new(model);
    let n = frames.rows();
    let step = if piece == 0 { n.max(1) } else { piece };
    let mut start = 0;
    while start < n && s.status() == SessionStatus::Open {
        let end = (start + step).min(n);
        s.feed_audio(&frames.slice_rows(start, end), end == n)?;
        start = end;
    }
    if s.status() == SessionStatus::Open {
        s.feed_audio(&Tensor::zeros(&[0, frames.cols()]), true)?;
    }
    s.finalize()?;
    Ok(s)
}

/// Per-token delays `t_i − b_i` (frames) of one utterance, EOS excluded.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyReport {
    pub delays: Vec<i64>,
    pub first: f64,
    pub mid: f64,
    pub last: f64,
    pub avg: f64,
    pub frame_ms: f64,
}

/// Delays of the non-EOS emissions against gold boundaries `b_2..b_{L-1}`.
/// Returns `Ok(None)` when there is nothing to measure.
pub fn latency_report(emissions: &[Emission], gold: &[usize], frame_ms: f64) -> Result<Option<LatencyReport>> {
    let hyp: Vec<&Emission> = emissions.iter().filter(|e| e.token != EOS).collect();
    if hyp.len() != gold.len() {
        return Err(Error::Alignment {
            hyp: hyp.len(),
            gold: gold.len(),
        });
    }
    if hyp.is_empty() {
        return Ok(None);
    }
    let delays: Vec<i64> = hyp.iter().zip(gold).map(|(e, &b)| e.trigger as i64 - b as i64).collect();
    let n = delays.len();
    // Token index ⌈(L−1)/2⌉+1 with L−1 = n+1 supervised steps, counted from y_2.
    let mid = (n + 1).div_ceil(2) + 1 - 2;
    Ok(Some(LatencyReport {
        first: delays[0] as f64,
        mid: delays[mid.min(n - 1)] as f64,
        last: delays[n - 1] as f64,
        avg: delays.iter().sum::<i64>() as f64 / n as f64,
        delays,
        frame_ms,
    }))
}

/// Corpus-level latency: first/mid/last averaged over utterances, avg pooled
/// over every token.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LatencySummary {
    pub first: f64,
    pub mid: f64,
    pub last: f64,
    pub avg: f64,
    pub utterances: usize,
    pub tokens: usize,
    /// Utterances skipped because the hypothesis length differed from the reference.
    pub misaligned: usize,
}

pub fn summarize_latency(reports: &[Result<Option<LatencyReport>>]) -> LatencySummary {
    let mut s = LatencySummary::default();
    let mut total = 0i64;
    for r in reports {
        match r {
            Ok(Some(rep)) => {
                s.first += rep.first;
                s.mid += rep.mid;
                s.last += rep.last;
                total += rep.delays.iter().sum::<i64>();
                s.tokens += rep.delays.len();
                s.utterances += 1;
            }
            Ok(None) => {}
            Err(_) => s.misaligned += 1,
        }
    }
    if s.utterances > 0 {
        let u = s.utterances as f64;
        s.first /= u;
        s.mid /= u;
        s.last /= u;
        s.avg = total as f64 / s.tokens as f64;
    }
    s
}
