//! Run configuration with documented defaults, `key=value` access and the
//! ablation presets.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::DType;

/// Reserved token ids. Synthetic symbols start at [`FIRST_SYMBOL`].
pub const BOS: usize = 0;
pub const EOS: usize = 1;
pub const FIRST_SYMBOL: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub chunk_size: usize,
    pub left_context: usize,
    pub blocks: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ffn: usize,
    /// Add sinusoidal encodings of the absolute frame index.
    pub positional: bool,
    pub adaptor_hidden: usize,
    /// Add the adaptor input to its output (needs `d_model == lm.d_model`).
    pub adaptor_residual: bool,
    pub frame_ms: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            input_dim: 16,
            chunk_size: 4,
            left_context: 16,
            blocks: 2,
            d_model: 32,
            heads: 2,
            ffn: 64,
            positional: true,
            adaptor_hidden: 64,
            adaptor_residual: false,
            frame_ms: 40.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MochaConfig {
    pub window: usize,
    pub threshold: f64,
    pub noise_std: f64,
    pub energy_offset: f64,
    /// Initial value of the energy gain `g`.
    pub energy_gain: f64,
    pub d_state: usize,
    pub d_attn: usize,
    pub d_embed: usize,
}

impl Default for MochaConfig {
    fn default() -> Self {
        MochaConfig {
            window: 4,
            threshold: 0.5,
            noise_std: 1.0,
            energy_offset: -4.0,
            energy_gain: 1.0,
            d_state: 32,
            d_attn: 32,
            d_embed: 16,
        }
    }
}

/// Which language-model tensors are trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoraPolicy {
    /// Base matrices and low-rank adapters are both trained.
    BaseAndAdapters,
    /// Base language model frozen; only adapters (and the non-LM modules) train.
    AdaptersOnly,
    /// No adapters; every base tensor trains.
    BaseOnly,
}

/// Where the next-token loss of a streaming segment is placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossPlacement {
    /// At the previous-token position that follows each segment.
    Token,
    /// At the last audio frame of each segment.
    Frame,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmConfig {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn: usize,
    pub max_len: usize,
    pub lora_rank: usize,
    pub lora_alpha: f64,
    pub lora_policy: LoraPolicy,
    pub loss_at: LossPlacement,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            d_model: 64,
            heads: 4,
            layers: 2,
            ffn: 128,
            max_len: 512,
            lora_rank: 8,
            lora_alpha: 16.0,
            lora_policy: LoraPolicy::BaseAndAdapters,
            loss_at: LossPlacement::Token,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointMode {
    StreamOnly,
    NonstreamOnly,
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MinltMode {
    /// `|Σ_j j·α_ij − b_i|`: distance of the expected boundary from the gold one.
    ExpectedBoundary,
    /// `Σ_j |j·α_ij − b_i|`: the absolute value inside the frame sum.
    Literal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    pub lr_max: f64,
    pub lr_min: f64,
    pub cycle_steps: u64,
    pub total_steps: u64,
    pub batch_size: usize,
    pub joint_mode: JointMode,
    pub joint_stream_prob: f64,
    pub minlt_mode: MinltMode,
    pub seed: u64,
    pub clip_norm: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub dtype: DType,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.1,
            lr_max: 3e-3,
            lr_min: 0.0,
            cycle_steps: 2000,
            total_steps: 8000,
            batch_size: 8,
            joint_mode: JointMode::Joint,
            joint_stream_prob: 0.5,
            minlt_mode: MinltMode::ExpectedBoundary,
            seed: 1,
            clip_norm: 1.0,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            dtype: DType::F64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub vocab_size: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub feature_dim: usize,
    pub noise_std: f64,
    pub seed: u64,
    pub num_train: usize,
    pub num_test: usize,
    pub frame_ms: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            vocab_size: 16,
            min_tokens: 5,
            max_tokens: 20,
            min_frames: 3,
            max_frames: 8,
            feature_dim: 16,
            noise_std: 0.1,
            seed: 7,
            num_train: 2000,
            num_test: 200,
            frame_ms: 40.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamConfig {
    /// Token-only steps allowed after the audio is exhausted.
    pub finalize_cap: usize,
    pub beam_size: usize,
    pub max_decode_len: usize,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig {
            finalize_cap: 32,
            beam_size: 10,
            max_decode_len: 64,
        }
    }
}

/// Everything a run needs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub encoder: EncoderConfig,
    pub mocha: MochaConfig,
    pub lm: LmConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub stream: StreamConfig,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {value:?} for {key}"))),
    }
}

impl LoraPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            LoraPolicy::BaseAndAdapters => "base-and-adapters",
            LoraPolicy::AdaptersOnly => "adapters-only",
            LoraPolicy::BaseOnly => "base-only",
        }
    }
}

impl FromStr for LoraPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base-and-adapters" => Ok(LoraPolicy::BaseAndAdapters),
            "adapters-only" => Ok(LoraPolicy::AdaptersOnly),
            "base-only" => Ok(LoraPolicy::BaseOnly),
            _ => Err(Error::Config(format!("unknown lora policy {s:?}"))),
        }
    }
}

impl LossPlacement {
    pub fn as_str(self) -> &'static str {
        match self {
            LossPlacement::Token => "token",
            LossPlacement::Frame => "frame",
        }
    }
}

impl FromStr for LossPlacement {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "token" => Ok(LossPlacement::Token),
            "frame" => Ok(LossPlacement::Frame),
            _ => Err(Error::Config(format!("unknown loss placement {s:?}"))),
        }
    }
}

impl JointMode {
    pub fn as_str(self) -> &'static str {
        match self {
            JointMode::StreamOnly => "stream-only",
            JointMode::NonstreamOnly => "nonstream-only",
            JointMode::Joint => "joint",
        }
    }
}

impl FromStr for JointMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stream-only" => Ok(JointMode::StreamOnly),
            "nonstream-only" => Ok(JointMode::NonstreamOnly),
            "joint" => Ok(JointMode::Joint),
            _ => Err(Error::Config(format!("unknown joint mode {s:?}"))),
        }
    }
}

impl MinltMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MinltMode::ExpectedBoundary => "expected-boundary",
            MinltMode::Literal => "literal",
        }
    }
}

impl FromStr for MinltMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "expected-boundary" => Ok(MinltMode::ExpectedBoundary),
            "literal" => Ok(MinltMode::Literal),
            _ => Err(Error::Config(format!("unknown minLT mode {s:?}"))),
        }
    }
}

fn dtype_str(d: DType) -> &'static str {
    match d {
        DType::F32 => "f32",
        DType::F64 => "f64",
    }
}

impl RunConfig {
    /// Sets one documented key. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let e = &mut self.encoder;
        let m = &mut self.mocha;
        let l = &mut self.lm;
        let t = &mut self.train;
        let s = &mut self.synth;
        let st = &mut self.stream;
        match key {
            "encoder.input_dim" => e.input_dim = parse(key, value)?,
            "encoder.chunk_size" => e.chunk_size = parse(key, value)?,
            "encoder.left_context" => e.left_context = parse(key, value)?,
            "encoder.blocks" => e.blocks = parse(key, value)?,
            "encoder.d_model" => e.d_model = parse(key, value)?,
            "encoder.heads" => e.heads = parse(key, value)?,
            "encoder.ffn" => e.ffn = parse(key, value)?,
            "encoder.positional" => e.positional = parse_bool(key, value)?,
            "encoder.adaptor_hidden" => e.adaptor_hidden = parse(key, value)?,
            "encoder.adaptor_residual" => e.adaptor_residual = parse_bool(key, value)?,
            "encoder.frame_ms" => e.frame_ms = parse(key, value)?,
            "mocha.window" => m.window = parse(key, value)?,
            "mocha.threshold" => m.threshold = parse(key, value)?,
            "mocha.noise_std" => m.noise_std = parse(key, value)?,
            "mocha.energy_offset" => m.energy_offset = parse(key, value)?,
            "mocha.energy_gain" => m.energy_gain = parse(key, value)?,
            "mocha.d_state" => m.d_state = parse(key, value)?,
            "mocha.d_attn" => m.d_attn = parse(key, value)?,
            "mocha.d_embed" => m.d_embed = parse(key, value)?,
            "lm.d_model" => l.d_model = parse(key, value)?,
            "lm.heads" => l.heads = parse(key, value)?,
            "lm.layers" => l.layers = parse(key, value)?,
            "lm.ffn" => l.ffn = parse(key, value)?,
            "lm.max_len" => l.max_len = parse(key, value)?,
            "lm.lora_rank" => l.lora_rank = parse(key, value)?,
            "lm.lora_alpha" => l.lora_alpha = parse(key, value)?,
            "lm.lora_policy" => l.lora_policy = value.trim().parse()?,
            "lm.loss_at" => l.loss_at = value.trim().parse()?,
            "train.lambda" => t.lambda = parse(key, value)?,
            "train.lr_max" => t.lr_max = parse(key, value)?,
            "train.lr_min" => t.lr_min = parse(key, value)?,
            "train.cycle_steps" => t.cycle_steps = parse(key, value)?,
            "train.total_steps" => t.total_steps = parse(key, value)?,
            "train.batch_size" => t.batch_size = parse(key, value)?,
            "train.joint_mode" => t.joint_mode = value.trim().parse()?,
            "train.joint_stream_prob" => t.joint_stream_prob = parse(key, value)?,
            "train.minlt_mode" => t.minlt_mode = value.trim().parse()?,
            "train.seed" => t.seed = parse(key, value)?,
            "train.clip_norm" => t.clip_norm = parse(key, value)?,
            "train.weight_decay" => t.weight_decay = parse(key, value)?,
            "train.beta1" => t.beta1 = parse(key, value)?,
            "train.beta2" => t.beta2 = parse(key, value)?,
            "train.eps" => t.eps = parse(key, value)?,
            "train.dtype" => {
                t.dtype = match value.trim() {
                    "f32" => DType::F32,
                    "f64" => DType::F64,
                    other => return Err(Error::Config(format!("unknown dtype {other:?}"))),
                }
            }
            "synth.vocab_size" => s.vocab_size = parse(key, value)?,
            "synth.min_tokens" => s.min_tokens = parse(key, value)?,
            "synth.max_tokens" => s.max_tokens = parse(key, value)?,
            "synth.min_frames" => s.min_frames = parse(key, value)?,
            "synth.max_frames" => s.max_frames = parse(key, value)?,
            "synth.feature_dim" => s.feature_dim = parse(key, value)?,
            "synth.noise_std" => s.noise_std = parse(key, value)?,
            "synth.seed" => s.seed = parse(key, value)?,
            "synth.num_train" => s.num_train = parse(key, value)?,
            "synth.num_test" => s.num_test = parse(key, value)?,
            "synth.frame_ms" => s.frame_ms = parse(key, value)?,
            "stream.finalize_cap" => st.finalize_cap = parse(key, value)?,
            "stream.beam_size" => st.beam_size = parse(key, value)?,
            "stream.max_decode_len" => st.max_decode_len = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let e = &self.encoder;
        let m = &self.mocha;
        let l = &self.lm;
        let t = &self.train;
        let s = &self.synth;
        let st = &self.stream;
        vec![
            ("encoder.input_dim", e.input_dim.to_string()),
            ("encoder.chunk_size", e.chunk_size.to_string()),
            ("encoder.left_context", e.left_context.to_string()),
            ("encoder.blocks", e.blocks.to_string()),
            ("encoder.d_model", e.d_model.to_string()),
            ("encoder.heads", e.heads.to_string()),
            ("encoder.ffn", e.ffn.to_string()),
            ("encoder.positional", e.positional.to_string()),
            ("encoder.adaptor_hidden", e.adaptor_hidden.to_string()),
            ("encoder.adaptor_residual", e.adaptor_residual.to_string()),
            ("encoder.frame_ms", e.frame_ms.to_string()),
            ("mocha.window", m.window.to_string()),
            ("mocha.threshold", m.threshold.to_string()),
            ("mocha.noise_std", m.noise_std.to_string()),
            ("mocha.energy_offset", m.energy_offset.to_string()),
            ("mocha.energy_gain", m.energy_gain.to_string()),
            ("mocha.d_state", m.d_state.to_string()),
            ("mocha.d_attn", m.d_attn.to_string()),
            ("mocha.d_embed", m.d_embed.to_string()),
            ("lm.d_model", l.d_model.to_string()),
            ("lm.heads", l.heads.to_string()),
            ("lm.layers", l.layers.to_string()),
            ("lm.ffn", l.ffn.to_string()),
            ("lm.max_len", l.max_len.to_string()),
            ("lm.lora_rank", l.lora_rank.to_string()),
            ("lm.lora_alpha", l.lora_alpha.to_string()),
            ("lm.lora_policy", l.lora_policy.as_str().to_string()),
            ("lm.loss_at", l.loss_at.as_str().to_string()),
            ("train.lambda", t.lambda.to_string()),
            ("train.lr_max", t.lr_max.to_string()),
            ("train.lr_min", t.lr_min.to_string()),
            ("train.cycle_steps", t.cycle_steps.to_string()),
            ("train.total_steps", t.total_steps.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.joint_mode", t.joint_mode.as_str().to_string()),
            ("train.joint_stream_prob", t.joint_stream_prob.to_string()),
            ("train.minlt_mode", t.minlt_mode.as_str().to_string()),
            ("train.seed", t.seed.to_string()),
            ("train.clip_norm", t.clip_norm.to_string()),
            ("train.weight_decay", t.weight_decay.to_string()),
            ("train.beta1", t.beta1.to_string()),
            ("train.beta2", t.beta2.to_string()),
            ("train.eps", t.eps.to_string()),
            ("train.dtype", dtype_str(t.dtype).to_string()),
            ("synth.vocab_size", s.vocab_size.to_string()),
            ("synth.min_tokens", s.min_tokens.to_string()),
            ("synth.max_tokens", s.max_tokens.to_string()),
            ("synth.min_frames", s.min_frames.to_string()),
            ("synth.max_frames", s.max_frames.to_string()),
            ("synth.feature_dim", s.feature_dim.to_string()),
            ("synth.noise_std", s.noise_std.to_string()),
            ("synth.seed", s.seed.to_string()),
            ("synth.num_train", s.num_train.to_string()),
            ("synth.num_test", s.num_test.to_string()),
            ("synth.frame_ms", s.frame_ms.to_string()),
            ("stream.finalize_cap", st.finalize_cap.to_string()),
            ("stream.beam_size", st.beam_size.to_string()),
            ("stream.max_decode_len", st.max_decode_len.to_string()),
        ]
    }

    /// Parses `key=value` lines on top of the defaults. Blank lines and `#`
    /// comments are ignored; a repeated key is an error.
    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_kv_text(text)?;
        Ok(cfg)
    }

    pub fn apply_kv_text(&mut self, text: &str) -> Result<()> {
        let mut seen: Vec<String> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", lineno + 1)))?;
            let key = key.trim();
            if seen.iter().any(|k| k == key) {
                return Err(Error::Config(format!("line {}: duplicate key {key}", lineno + 1)));
            }
            seen.push(key.to_string());
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn to_kv_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    pub fn vocab_size(&self) -> usize {
        self.synth.vocab_size + FIRST_SYMBOL
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        let e = &self.encoder;
        if e.chunk_size == 0 {
            return bad("encoder.chunk_size must be at least 1");
        }
        if e.heads == 0 || e.d_model % e.heads != 0 {
            return bad("encoder.d_model must be divisible by encoder.heads");
        }
        if e.adaptor_residual && e.d_model != self.lm.d_model {
            return bad("encoder.adaptor_residual needs encoder.d_model == lm.d_model");
        }
        if self.lm.heads == 0 || self.lm.d_model % self.lm.heads != 0 {
            return bad("lm.d_model must be divisible by lm.heads");
        }
        if self.mocha.window == 0 {
            return bad("mocha.window must be at least 1");
        }
        if !(self.mocha.threshold > 0.0 && self.mocha.threshold < 1.0) {
            return bad("mocha.threshold must lie in (0, 1)");
        }
        let t = &self.train;
        if !(0.0..=1.0).contains(&t.joint_stream_prob) {
            return bad("train.joint_stream_prob must lie in [0, 1]");
        }
        if t.lr_min > t.lr_max {
            return bad("train.lr_min must not exceed train.lr_max");
        }
        if t.cycle_steps < 2 {
            return bad("train.cycle_steps must be at least 2");
        }
        if t.batch_size == 0 {
            return bad("train.batch_size must be at least 1");
        }
        let s = &self.synth;
        if s.vocab_size < 2 {
            return bad("synth.vocab_size must be at least 2");
        }
        if s.min_tokens == 0 || s.min_tokens > s.max_tokens || s.min_frames == 0 || s.min_frames > s.max_frames {
            return bad("synth ranges must be nonempty and positive");
        }
        if s.feature_dim != e.input_dim {
            return bad("synth.feature_dim must equal encoder.input_dim");
        }
        if self.stream.beam_size == 0 {
            return bad("stream.beam_size must be at least 1");
        }
        Ok(())
    }
}

impl RunConfig {
    /// A very small model and corpus for unit tests and gradient checks.
    pub fn tiny() -> Self {
        let mut c = RunConfig::default();
        c.encoder = EncoderConfig {
            input_dim: 4,
            chunk_size: 2,
            left_context: 3,
            blocks: 1,
            d_model: 8,
            heads: 2,
            ffn: 8,
            positional: true,
            adaptor_hidden: 8,
            adaptor_residual: false,
            frame_ms: 40.0,
        };
        c.mocha = MochaConfig {
            window: 2,
            d_state: 6,
            d_attn: 5,
            d_embed: 3,
            ..MochaConfig::default()
        };
        c.lm = LmConfig {
            d_model: 8,
            heads: 2,
            layers: 1,
            ffn: 8,
            max_len: 96,
            lora_rank: 2,
            lora_alpha: 4.0,
            ..LmConfig::default()
        };
        c.synth = SynthConfig {
            vocab_size: 3,
            min_tokens: 1,
            max_tokens: 3,
            min_frames: 1,
            max_frames: 3,
            feature_dim: 4,
            num_train: 16,
            num_test: 4,
            ..SynthConfig::default()
        };
        c
    }
}

/// Named experiment presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Full,
    NoMinlt,
    NoJoint,
    LoraFrozenBase,
    FullFinetune,
    /// Hyperparameters of the full-size system, for reference.
    Paper,
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Preset::Full),
            "no-minlt" => Ok(Preset::NoMinlt),
            "no-joint" => Ok(Preset::NoJoint),
            "lora-frozen-base" => Ok(Preset::LoraFrozenBase),
            "full-finetune" => Ok(Preset::FullFinetune),
            "paper" => Ok(Preset::Paper),
            _ => Err(Error::Config(format!("unknown preset {s:?}"))),
        }
    }
}

/// Configurations for a preset. `no-joint` yields two runs (streaming-only and
/// non-streaming-only); every other preset yields one.
pub fn ablation_presets(preset: Preset) -> Vec<RunConfig> {
    let base = RunConfig::default();
    match preset {
        Preset::Full => vec![base],
        Preset::NoMinlt => {
            let mut c = base;
            c.train.lambda = 0.0;
            vec![c]
        }
        Preset::NoJoint => {
            let mut stream = base.clone();
            stream.train.joint_mode = JointMode::StreamOnly;
            let mut nonstream = base;
            nonstream.train.joint_mode = JointMode::NonstreamOnly;
            vec![stream, nonstream]
        }
        Preset::LoraFrozenBase => {
            let mut c = base;
            c.lm.lora_policy = LoraPolicy::AdaptersOnly;
            vec![c]
        }
        Preset::FullFinetune => {
            let mut c = base;
            c.lm.lora_policy = LoraPolicy::BaseOnly;
            vec![c]
        }
        Preset::Paper => {
            let mut c = base;
            // 0.4 s chunks and 1.6 s of history at 40 ms per frame.
            c.encoder.chunk_size = 10;
            c.encoder.left_context = 40;
            c.encoder.blocks = 12;
            c.encoder.heads = 8;
            c.encoder.d_model = 512;
            c.encoder.ffn = 2048;
            c.encoder.adaptor_hidden = 1024;
            c.lm.layers = 28;
            c.lm.heads = 12;
            c.lm.d_model = 1536;
            c.lm.lora_rank = 32;
            c.lm.lora_alpha = 64.0;
            c.lm.lora_policy = LoraPolicy::BaseAndAdapters;
            c.train.lambda = 0.1;
            c.train.lr_max = 1.5e-4;
            c.train.lr_min = 0.0;
            c.train.cycle_steps = 25_000;
            c.train.total_steps = 100_000;
            c.stream.beam_size = 10;
            vec![c]
        }
    }
}
