//! CSV outputs with fixed headers.

use std::path::Path;

use mocha_asr_core::losses::LossBundle;

use crate::error::{AppError, AppResult};

pub const LOSS_HEADER: [&str; 6] = ["step", "lr", "l_llm", "l_mocha", "l_minlt", "l_total"];
pub const EMISSION_HEADER: [&str; 7] = ["utt", "idx", "token", "t", "avail", "b", "delay"];
pub const METRICS_HEADER: [&str; 7] = ["system", "mode", "cer", "first", "mid", "last", "avg"];
pub const HYP_HEADER: [&str; 2] = ["utt", "tokens"];

#[derive(Debug, Clone, PartialEq)]
pub struct LossRow {
    pub step: u64,
    pub lr: f64,
    pub l_llm: f64,
    pub l_mocha: f64,
    pub l_minlt: f64,
    pub l_total: f64,
}

impl LossRow {
    pub fn new(step: u64, lr: f64, b: &LossBundle) -> Self {
        LossRow {
            step,
            lr,
            l_llm: b.l_llm,
            l_mocha: b.l_mocha,
            l_minlt: b.l_minlt,
            l_total: b.l_total,
        }
    }
}

/// One emitted token; `b` and `delay` are empty for EOS and for
/// utterances whose hypothesis length differs from the reference.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionRow {
    pub utt: String,
    pub idx: usize,
    pub token: usize,
    pub t: usize,
    pub avail: usize,
    pub b: Option<usize>,
    pub delay: Option<i64>,
}

/// CER in percent and latency in frames.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub system: String,
    pub mode: String,
    pub cer: f64,
    pub first: f64,
    pub mid: f64,
    pub last: f64,
    pub avg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypRow {
    pub utt: String,
    /// Symbols without BOS/EOS.
    pub tokens: Vec<usize>,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Serializes rows into CSV text.
pub fn to_csv<T>(header: &[&str], rows: &[T], fields: impl Fn(&T) -> Vec<String>) -> AppResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(fields(r))?;
    }
    let bytes = w.into_inner().map_err(|e| AppError::Csv(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn loss_fields(r: &LossRow) -> Vec<String> {
    vec![
        r.step.to_string(),
        r.lr.to_string(),
        r.l_llm.to_string(),
        r.l_mocha.to_string(),
        r.l_minlt.to_string(),
        r.l_total.to_string(),
    ]
}

pub fn emission_fields(r: &EmissionRow) -> Vec<String> {
    vec![
        r.utt.clone(),
        r.idx.to_string(),
        r.token.to_string(),
        r.t.to_string(),
        r.avail.to_string(),
        opt(r.b),
        opt(r.delay),
    ]
}

pub fn metrics_fields(r: &MetricsRow) -> Vec<String> {
    vec![
        r.system.clone(),
        r.mode.clone(),
        r.cer.to_string(),
        r.first.to_string(),
        r.mid.to_string(),
        r.last.to_string(),
        r.avg.to_string(),
    ]
}

pub fn hyp_fields(r: &HypRow) -> Vec<String> {
    vec![r.utt.clone(), join_tokens(&r.tokens)]
}

pub fn join_tokens(t: &[usize]) -> String {
    t.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn records(path: &Path, header: &[&str]) -> AppResult<Vec<csv::StringRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => AppError::io(path, io),
        other => AppError::format(path, format!("{other:?}")),
    })?;
    if r.headers()?.iter().collect::<Vec<_>>() != header {
        return Err(AppError::format(path, format!("expected header {}", header.join(","))));
    }
    Ok(r.records().collect::<Result<Vec<_>, _>>()?)
}

fn field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, i: usize) -> AppResult<T> {
    rec.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| AppError::format(path, format!("bad field {i} in line {:?}", rec.position().map(|p| p.line()))))
}

pub fn read_losses(path: &Path) -> AppResult<Vec<LossRow>> {
    records(path, &LOSS_HEADER)?
        .iter()
        .map(|r| {
            Ok(LossRow {
                step: field(path, r, 0)?,
                lr: field(path, r, 1)?,
                l_llm: field(path, r, 2)?,
                l_mocha: field(path, r, 3)?,
                l_minlt: field(path, r, 4)?,
                l_total: field(path, r, 5)?,
            })
        })
        .collect()
}

pub fn read_hyps(path: &Path) -> AppResult<Vec<HypRow>> {
    records(path, &HYP_HEADER)?
        .iter()
        .map(|r| {
            let tokens = r
                .get(1)
                .unwrap_or("")
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| AppError::format(path, format!("bad token {t:?}"))))
                .collect::<AppResult<Vec<usize>>>()?;
            Ok(HypRow {
                utt: r.get(0).unwrap_or("").to_string(),
                tokens,
            })
        })
        .collect()
}

pub fn read_metrics(path: &Path) -> AppResult<Vec<MetricsRow>> {
    records(path, &METRICS_HEADER)?
        .iter()
        .map(|r| {
            Ok(MetricsRow {
                system: r.get(0).unwrap_or("").to_string(),
                mode: r.get(1).unwrap_or("").to_string(),
                cer: field(path, r, 2)?,
                first: field(path, r, 3)?,
                mid: field(path, r, 4)?,
                last: field(path, r, 5)?,
                avg: field(path, r, 6)?,
            })
        })
        .collect()
}

pub fn write_text(path: &Path, text: &str) -> AppResult<()> {
    crate::container::write_atomic(path, text.as_bytes())
}
