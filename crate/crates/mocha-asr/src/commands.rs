//! Command implementations behind the CLI. Each command is also usable as a
//! library call.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use mocha_asr_core::config::{ablation_presets, Preset, RunConfig, EOS};
use mocha_asr_core::encoder::encode_parallel;
use mocha_asr_core::lm::{beam_search_nonstream, greedy_nonstream};
use mocha_asr_core::metrics::ErrorCount;
use mocha_asr_core::numerics::{DType, Real};
use mocha_asr_core::stream::{decode_stream, latency_report, summarize_latency, Emission, LatencySummary};
use mocha_asr_core::synth::{generate_split, SynthUtterance};
use mocha_asr_core::train::{StepReport, Trainer};
use mocha_asr_core::verify::{gradient_suite, SuiteCheck};
use mocha_asr_core::Model;

use crate::checkpoint::{save_model, Checkpoint};
use crate::dataset::Dataset;
use crate::error::{AppError, AppResult};
use crate::report::{
    emission_fields, hyp_fields, loss_fields, metrics_fields, read_hyps, to_csv, write_text, EmissionRow, HypRow, LossRow, MetricsRow,
    EMISSION_HEADER, HYP_HEADER, LOSS_HEADER, METRICS_HEADER,
};

/// Environment variable naming a default configuration file.
pub const CONFIG_ENV: &str = "MOCHA_ASR_CONFIG";

/// Preset, then configuration file, then `key=value` overrides.
pub fn resolve_config(preset: Option<&str>, file: Option<&Path>, sets: &[String]) -> AppResult<RunConfig> {
    let preset: Preset = preset.unwrap_or("full").parse()?;
    let mut runs = ablation_presets(preset);
    if runs.len() != 1 {
        return Err(AppError::Usage(format!(
            "preset {preset:?} describes {} runs; select one with --set train.joint_mode=…",
            runs.len()
        )));
    }
    let mut cfg = runs.remove(0);
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        cfg.apply_kv_text(&text)?;
    }
    for kv in sets {
        let (k, v) = kv.split_once('=').ok_or_else(|| AppError::Usage(format!("expected key=value, got {kv:?}")))?;
        cfg.set(k.trim(), v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Generates the train and test splits into `out_dir`.
pub fn gendata(cfg: &RunConfig, out_dir: &Path) -> AppResult<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(out_dir).map_err(|e| AppError::io(out_dir, e))?;
    let mut paths = Vec::new();
    for (split, count) in [("train", cfg.synth.num_train), ("test", cfg.synth.num_test)] {
        let ds = Dataset {
            config: cfg.clone(),
            split: split.into(),
            corpus: generate_split(&cfg.synth, split, count)?,
        };
        let path = out_dir.join(format!("{split}.mstd"));
        ds.save(&path)?;
        paths.push(path);
    }
    let test = paths.pop().expect("two splits");
    Ok((paths.pop().expect("two splits"), test))
}

/// Trains a fresh model (seeded with `train.seed`) for `train.total_steps`.
pub fn train_model<R: Real>(cfg: &RunConfig, data: &[SynthUtterance], mut on_step: impl FnMut(&StepReport)) -> AppResult<Model<R>> {
    let model = Model::<R>::new(cfg.clone(), cfg.train.seed)?;
    let mut trainer = Trainer::new(model);
    trainer.run(data, cfg.train.total_steps, |r| on_step(r))?;
    Ok(trainer.model)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub losses: Vec<LossRow>,
    pub seconds: f64,
}

/// Trains on the dataset at `data`, writes the checkpoint to `out` and the
/// per-step losses to `log`.
pub fn cmd_train(cfg: &RunConfig, data: &Path, out: &Path, log: Option<&Path>) -> AppResult<TrainOutcome> {
    let ds = Dataset::load(data)?;
    if ds.config.synth.feature_dim != cfg.encoder.input_dim {
        return Err(AppError::Usage(format!(
            "dataset feature dim {} but encoder.input_dim = {}",
            ds.config.synth.feature_dim, cfg.encoder.input_dim
        )));
    }
    let start = Instant::now();
    let mut losses = Vec::new();
    let on_step = |r: &StepReport| losses.push(LossRow::new(r.step, r.lr, &r.bundle));
    match cfg.train.dtype {
        DType::F64 => save_model(out, &train_model::<f64>(cfg, ds.utterances(), on_step)?, cfg.train.total_steps)?,
        DType::F32 => save_model(out, &train_model::<f32>(cfg, ds.utterances(), on_step)?, cfg.train.total_steps)?,
    }
    if let Some(log) = log {
        write_text(log, &to_csv(&LOSS_HEADER, &losses, loss_fields)?)?;
    }
    Ok(TrainOutcome {
        losses,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    StreamGreedy,
    NonstreamGreedy,
    NonstreamBeam,
}

impl DecodeMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DecodeMode::StreamGreedy => "stream-greedy",
            DecodeMode::NonstreamGreedy => "nonstream-greedy",
            DecodeMode::NonstreamBeam => "nonstream-beam",
        }
    }
}

impl FromStr for DecodeMode {
    type Err = AppError;
    fn from_str(s: &str) -> AppResult<Self> {
        match s {
            "stream-greedy" => Ok(DecodeMode::StreamGreedy),
            "nonstream-greedy" => Ok(DecodeMode::NonstreamGreedy),
            "nonstream-beam" => Ok(DecodeMode::NonstreamBeam),
            _ => Err(AppError::Usage(format!("unknown decode mode {s:?}"))),
        }
    }
}

fn pool(jobs: usize) -> AppResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| AppError::Usage(format!("thread pool: {e}")))
}

fn symbols(mut tokens: Vec<usize>) -> Vec<usize> {
    if tokens.last() == Some(&EOS) {
        tokens.pop();
    }
    tokens
}

/// Decodes every utterance; rows keep the corpus order.
pub fn decode_corpus<R: Real>(model: &Model<R>, utts: &[SynthUtterance], mode: DecodeMode, jobs: usize) -> AppResult<Vec<HypRow>> {
    let sc = &model.config.stream;
    let one = |u: &SynthUtterance| -> AppResult<HypRow> {
        let tokens = match mode {
            DecodeMode::StreamGreedy => decode_stream(model, &u.features.frames, 0)?.transcript(),
            DecodeMode::NonstreamGreedy => greedy_nonstream(model, &encode_parallel(model, &u.features)?.embeddings, sc.max_decode_len)?,
            DecodeMode::NonstreamBeam => {
                beam_search_nonstream(model, &encode_parallel(model, &u.features)?.embeddings, sc.beam_size, sc.max_decode_len)?
            }
        };
        Ok(HypRow {
            utt: u.id().to_string(),
            tokens: symbols(tokens),
        })
    };
    pool(jobs)?.install(|| utts.par_iter().map(one).collect())
}

macro_rules! with_model {
    ($ckpt:expr, $sets:expr, |$m:ident| $body:expr) => {{
        let mut ck = Checkpoint::load($ckpt)?;
        for kv in $sets {
            let (k, v) = kv.split_once('=').ok_or_else(|| AppError::Usage(format!("expected key=value, got {kv:?}")))?;
            ck.config.set(k.trim(), v)?;
        }
        match ck.config.train.dtype {
            DType::F64 => {
                let $m: Model<f64> = ck.into_model()?;
                $body
            }
            DType::F32 => {
                let $m: Model<f32> = ck.into_model()?;
                $body
            }
        }
    }};
}

/// Decodes `data` with the checkpoint and writes `utt,tokens` rows to `out`.
/// `sets` adjusts the stored configuration (for example `stream.beam_size`).
pub fn cmd_decode(ckpt: &Path, data: &Path, mode: DecodeMode, sets: &[String], jobs: usize, out: &Path) -> AppResult<Vec<HypRow>> {
    let ds = Dataset::load(data)?;
    let rows = with_model!(ckpt, sets, |m| decode_corpus(&m, ds.utterances(), mode, jobs)?);
    write_text(out, &to_csv(&HYP_HEADER, &rows, hyp_fields)?)?;
    Ok(rows)
}

/// Streaming emissions of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamResult {
    pub emissions: Vec<Emission>,
    pub truncated: bool,
}

pub fn stream_corpus<R: Real>(model: &Model<R>, utts: &[SynthUtterance], jobs: usize) -> AppResult<Vec<StreamResult>> {
    let one = |u: &SynthUtterance| -> AppResult<StreamResult> {
        let s = decode_stream(model, &u.features.frames, 0)?;
        Ok(StreamResult {
            emissions: s.emissions().to_vec(),
            truncated: s.truncated(),
        })
    };
    pool(jobs)?.install(|| utts.par_iter().map(one).collect())
}

/// Emission rows, latency summary and streaming error count.
pub fn latency_table(utts: &[SynthUtterance], streams: &[StreamResult]) -> (Vec<EmissionRow>, LatencySummary, ErrorCount) {
    let mut rows = Vec::new();
    let mut reports = Vec::with_capacity(utts.len());
    let mut errors = ErrorCount::default();
    for (u, s) in utts.iter().zip(streams) {
        let gold = &u.boundaries[..u.boundaries.len() - 1];
        let report = latency_report(&s.emissions, gold, u.features.frame_ms);
        let aligned = matches!(report, Ok(Some(_)));
        let hyp: Vec<usize> = s.emissions.iter().map(|e| e.token).collect();
        errors = errors.add(ErrorCount::of(&u.tokens, &hyp));
        let mut k = 0;
        for (idx, e) in s.emissions.iter().enumerate() {
            let b = (aligned && e.token != EOS).then(|| {
                k += 1;
                gold[k - 1]
            });
            rows.push(EmissionRow {
                utt: u.id().to_string(),
                idx,
                token: e.token,
                t: e.trigger,
                avail: e.available,
                b,
                delay: b.map(|b| e.trigger as i64 - b as i64),
            });
        }
        reports.push(report);
    }
    (rows, summarize_latency(&reports), errors)
}

pub fn metrics_row(system: &str, mode: &str, errors: ErrorCount, lat: Option<&LatencySummary>) -> MetricsRow {
    let l = lat.copied().unwrap_or_default();
    MetricsRow {
        system: system.to_string(),
        mode: mode.to_string(),
        cer: 100.0 * errors.rate(),
        first: l.first,
        mid: l.mid,
        last: l.last,
        avg: l.avg,
    }
}

/// Streams `data`, writes emission events to `out` and returns the
/// aggregate row (also written to `metrics` when given).
pub fn cmd_latency(ckpt: &Path, data: &Path, jobs: usize, out: &Path, metrics: Option<&Path>, system: &str) -> AppResult<MetricsRow> {
    let ds = Dataset::load(data)?;
    let streams = with_model!(ckpt, &[] as &[String], |m| stream_corpus(&m, ds.utterances(), jobs)?);
    let (rows, summary, errors) = latency_table(ds.utterances(), &streams);
    write_text(out, &to_csv(&EMISSION_HEADER, &rows, emission_fields)?)?;
    let row = metrics_row(system, DecodeMode::StreamGreedy.as_str(), errors, Some(&summary));
    if let Some(path) = metrics {
        write_text(path, &to_csv(&METRICS_HEADER, std::slice::from_ref(&row), metrics_fields)?)?;
    }
    Ok(row)
}

/// Corpus error count of hypotheses against references, matched by id.
pub fn score(utts: &[SynthUtterance], hyps: &[HypRow]) -> AppResult<ErrorCount> {
    let mut total = ErrorCount::default();
    for u in utts {
        let h = hyps
            .iter()
            .find(|h| h.utt == u.id())
            .ok_or_else(|| AppError::Usage(format!("no hypothesis for utterance {}", u.id())))?;
        total = total.add(ErrorCount::of(u.symbols(), &h.tokens));
    }
    Ok(total)
}

/// CER of the hypothesis file against the dataset references.
pub fn cmd_eval(reference: &Path, hyp: &Path, metrics: Option<&Path>, system: &str, mode: &str) -> AppResult<MetricsRow> {
    let ds = Dataset::load(reference)?;
    let errors = score(ds.utterances(), &read_hyps(hyp)?)?;
    let row = metrics_row(system, mode, errors, None);
    if let Some(path) = metrics {
        write_text(path, &to_csv(&METRICS_HEADER, std::slice::from_ref(&row), metrics_fields)?)?;
    }
    Ok(row)
}

/// Runs every finite-difference check; any failure is an error.
pub fn cmd_gradcheck(seed: u64) -> AppResult<Vec<SuiteCheck>> {
    let checks = gradient_suite(seed)?;
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.pass())
        .map(|c| format!("{} ({:.2e})", c.name, c.report.worst()))
        .collect();
    if failed.is_empty() {
        Ok(checks)
    } else {
        Err(AppError::GradCheck(failed.join(", ")))
    }
}
