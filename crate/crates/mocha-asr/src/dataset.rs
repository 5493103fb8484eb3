//! Corpus files.
//!
//! Layout: magic `MSTD`, `u32` version, the generating configuration as
//! `key = value` text, the split name, an index block, then a tensor table
//! holding `prototypes` and one `frames` matrix per utterance. The index
//! block is `u32 count` and per utterance `id`, `u32 n_frames`,
//! `u32 L`, `L × u32 token`, `u32 L-1`, `(L-1) × u32 boundary`.
//!
//! A plain-text sidecar (`<file>.txt`) lists `id`, tokens and boundaries one
//! utterance per line.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mocha_asr_core::config::{RunConfig, BOS, EOS};
use mocha_asr_core::encoder::FeatureSequence;
use mocha_asr_core::synth::{Corpus, SynthUtterance};

use crate::container::{read_file, write_atomic, Decoder, Encoder, RawTensor};
use crate::error::{AppError, AppResult};

pub const MAGIC: &[u8; 4] = b"MSTD";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: RunConfig,
    pub split: String,
    pub corpus: Corpus,
}

struct IndexEntry {
    id: String,
    n_frames: usize,
    tokens: Vec<usize>,
    boundaries: Vec<usize>,
}

impl Dataset {
    pub fn utterances(&self) -> &[SynthUtterance] {
        &self.corpus.utterances
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::default();
        e.bytes(MAGIC);
        e.u32(VERSION);
        e.str(&self.config.to_kv_text());
        e.str(&self.split);
        let utts = &self.corpus.utterances;
        e.u32(utts.len() as u32);
        for u in utts {
            e.str(u.id());
            e.u32(u.n_frames() as u32);
            e.u32(u.tokens.len() as u32);
            u.tokens.iter().for_each(|&t| e.u32(t as u32));
            e.u32(u.boundaries.len() as u32);
            u.boundaries.iter().for_each(|&b| e.u32(b as u32));
        }
        let mut tensors = vec![RawTensor::from_tensor("prototypes", &self.corpus.prototypes)];
        tensors.extend(utts.iter().map(|u| RawTensor::from_tensor(u.id(), &u.features.frames)));
        e.table(&tensors);
        e.buf
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> AppResult<Self> {
        let mut d = Decoder::new(path, bytes);
        d.header(MAGIC, VERSION)?;
        let config = RunConfig::from_kv_text(&d.str("config")?).map_err(|e| AppError::format(path, e.to_string()))?;
        let split = d.str("split")?;
        let count = d.u32("utterance count")? as usize;
        let mut index = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let id = d.str("utterance id")?;
            let n_frames = d.u32("frame count")? as usize;
            let nt = d.u32("token count")? as usize;
            let tokens = (0..nt).map(|_| d.u32("token").map(|v| v as usize)).collect::<AppResult<Vec<_>>>()?;
            let nb = d.u32("boundary count")? as usize;
            let boundaries = (0..nb).map(|_| d.u32("boundary").map(|v| v as usize)).collect::<AppResult<Vec<_>>>()?;
            index.push(IndexEntry {
                id,
                n_frames,
                tokens,
                boundaries,
            });
        }
        let mut tensors = d.table()?.into_iter();
        let corrupt = |detail: String| AppError::format(path, format!("corrupt index: {detail}"));
        let protos = tensors.next().filter(|t| t.name == "prototypes").ok_or_else(|| corrupt("missing prototypes".into()))?;
        let prototypes = protos.to_tensor::<f64>()?;
        let vocab = config.vocab_size();
        let dim = config.synth.feature_dim;
        let mut utterances = Vec::with_capacity(index.len());
        for entry in index {
            let t = tensors.next().ok_or_else(|| corrupt(format!("no frames for {}", entry.id)))?;
            if t.name != entry.id {
                return Err(corrupt(format!("frames {} listed for utterance {}", t.name, entry.id)));
            }
            let frames = t.to_tensor::<f64>()?;
            if frames.shape() != [entry.n_frames, dim] {
                return Err(corrupt(format!("{}: frames {:?}, index says {}×{dim}", entry.id, frames.shape(), entry.n_frames)));
            }
            validate(&entry, vocab).map_err(corrupt)?;
            utterances.push(SynthUtterance {
                tokens: entry.tokens,
                features: FeatureSequence {
                    frames,
                    frame_ms: config.synth.frame_ms,
                    id: entry.id,
                },
                boundaries: entry.boundaries,
            });
        }
        if let Some(extra) = tensors.next() {
            return Err(corrupt(format!("tensor {} has no index entry", extra.name)));
        }
        Ok(Dataset {
            config,
            split,
            corpus: Corpus { prototypes, utterances },
        })
    }

    pub fn save(&self, path: &Path) -> AppResult<()> {
        write_atomic(path, &self.to_bytes())?;
        write_atomic(&sidecar_path(path), self.sidecar().as_bytes())
    }

    pub fn load(path: &Path) -> AppResult<Self> {
        Self::from_bytes(path, &read_file(path)?)
    }

    /// One line per utterance: `id<TAB>tokens<TAB>boundaries`.
    pub fn sidecar(&self) -> String {
        let mut s = String::new();
        for u in &self.corpus.utterances {
            let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
            let _ = writeln!(s, "{}\t{}\t{}", u.id(), join(&u.tokens), join(&u.boundaries));
        }
        s
    }
}

fn validate(e: &IndexEntry, vocab: usize) -> Result<(), String> {
    let id = &e.id;
    let l = e.tokens.len();
    if l < 2 || e.tokens[0] != BOS || e.tokens[l - 1] != EOS {
        return Err(format!("{id}: tokens must be BOS … EOS"));
    }
    if let Some(t) = e.tokens.iter().find(|&&t| t >= vocab) {
        return Err(format!("{id}: token {t} outside vocabulary of {vocab}"));
    }
    if e.boundaries.len() != l - 1 {
        return Err(format!("{id}: {} boundaries for {l} tokens", e.boundaries.len()));
    }
    let mut prev = 0;
    for &b in &e.boundaries {
        if b <= prev {
            return Err(format!("{id}: boundaries not strictly increasing"));
        }
        prev = b;
    }
    if prev != e.n_frames {
        return Err(format!("{id}: last boundary {prev} but {} frames", e.n_frames));
    }
    Ok(())
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".txt");
    PathBuf::from(s)
}
