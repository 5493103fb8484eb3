use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mocha_asr::commands::{resolve_config, score, CONFIG_ENV};
use mocha_asr::dataset::Dataset;
use mocha_asr::report::{read_hyps, read_losses, read_metrics, HypRow};
use mocha_asr_core::config::{JointMode, RunConfig};
use mocha_asr_core::synth::generate_split;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mocha-asr"));
    c.env_remove(CONFIG_ENV);
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

/// Writes a tiny configuration file and returns its path.
fn tiny_config(dir: &Path, steps: u64) -> PathBuf {
    let mut cfg = RunConfig::tiny();
    cfg.train.total_steps = steps;
    cfg.train.batch_size = 4;
    let path = dir.join("tiny.cfg");
    std::fs::write(&path, cfg.to_kv_text()).unwrap();
    path
}

/// gendata, train, every decode mode, latency and eval into `dir/name`.
fn pipeline(dir: &Path, name: &str) -> PathBuf {
    let out = dir.join(name);
    std::fs::create_dir_all(&out).unwrap();
    let cfg = tiny_config(dir, 30);
    let cfg = cfg.to_str().unwrap();
    ok(&out, &["--config", cfg, "gendata", "--out", "data"]);
    ok(&out, &["--config", cfg, "train", "--data", "data/train.mstd", "--out", "model.mstr", "--log", "loss.csv"]);
    for mode in ["stream-greedy", "nonstream-greedy", "nonstream-beam"] {
        let hyp = format!("{mode}.csv");
        ok(&out, &["decode", "--ckpt", "model.mstr", "--data", "data/test.mstd", "--mode", mode, "--out", &hyp, "--jobs", "2"]);
        ok(&out, &["eval", "--ref", "data/test.mstd", "--hyp", &hyp, "--metrics", &format!("{mode}.metrics.csv"), "--mode", mode]);
    }
    ok(&out, &["latency", "--ckpt", "model.mstr", "--data", "data/test.mstd", "--out", "emissions.csv", "--metrics", "latency.csv"]);
    out
}

const OUTPUTS: [&str; 9] = [
    "loss.csv",
    "stream-greedy.csv",
    "nonstream-greedy.csv",
    "nonstream-beam.csv",
    "stream-greedy.metrics.csv",
    "nonstream-greedy.metrics.csv",
    "nonstream-beam.metrics.csv",
    "emissions.csv",
    "latency.csv",
];

#[test]
fn pipeline_outputs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (pipeline(dir.path(), "a"), pipeline(dir.path(), "b"));
    for f in OUTPUTS {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    for f in ["data/train.mstd", "data/test.mstd", "model.mstr"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }

    let losses = read_losses(&a.join("loss.csv")).unwrap();
    assert_eq!(losses.len(), 30);
    for (i, r) in losses.iter().enumerate() {
        assert_eq!(r.step, i as u64);
        assert!((r.l_total - (r.l_llm + r.l_mocha + 0.1 * r.l_minlt)).abs() <= 1e-12);
    }
    let header = std::fs::read_to_string(a.join("emissions.csv")).unwrap();
    assert!(header.starts_with("utt,idx,token,t,avail,b,delay\n"));
    let metrics = read_metrics(&a.join("latency.csv")).unwrap();
    assert_eq!(metrics.len(), 1);
    assert_eq!(metrics[0].mode, "stream-greedy");
    assert!(metrics[0].cer >= 0.0);

    let hyps = read_hyps(&a.join("stream-greedy.csv")).unwrap();
    let ids: Vec<&str> = hyps.iter().map(|h| h.utt.as_str()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
}

#[test]
fn beam_of_one_equals_greedy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 20);
    let cfg = cfg.to_str().unwrap();
    let d = dir.path();
    ok(d, &["--config", cfg, "gendata", "--out", "data"]);
    ok(d, &["--config", cfg, "train", "--data", "data/train.mstd", "--out", "m.mstr"]);
    ok(d, &["decode", "--ckpt", "m.mstr", "--data", "data/test.mstd", "--mode", "nonstream-greedy", "--out", "g.csv"]);
    ok(d, &["decode", "--ckpt", "m.mstr", "--data", "data/test.mstd", "--mode", "nonstream-beam", "--beam", "1", "--out", "b.csv"]);
    assert_eq!(std::fs::read(d.join("g.csv")).unwrap(), std::fs::read(d.join("b.csv")).unwrap());
}

#[test]
fn config_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 5);
    let out = bin().current_dir(dir.path()).env(CONFIG_ENV, &cfg).args(["gendata", "--out", "data"]).output().unwrap();
    assert!(out.status.success());
    let ds = Dataset::load(&dir.path().join("data/test.mstd")).unwrap();
    assert_eq!(ds.config.synth, RunConfig::tiny().synth);
    assert_eq!(ds.utterances().len(), RunConfig::tiny().synth.num_test);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.cfg"), "encoder.nonexistent = 3\n").unwrap();
    assert_eq!(run(d, &["--config", "bad.cfg", "gendata", "--out", "x"]).status.code(), Some(2));
    assert_eq!(run(d, &["--preset", "bogus", "gendata", "--out", "x"]).status.code(), Some(2));
    assert_eq!(run(d, &["--set", "train.lambda", "gendata", "--out", "x"]).status.code(), Some(2));
    assert_eq!(run(d, &["train", "--data", "missing.mstd", "--out", "m.mstr"]).status.code(), Some(3));
    std::fs::write(d.join("junk.mstr"), b"MSTR\x01\x00").unwrap();
    let out = run(d, &["decode", "--ckpt", "junk.mstr", "--data", "missing.mstd", "--out", "h.csv"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(run(d, &["decode", "--ckpt", "junk.mstr", "--data", "x", "--mode", "beamish", "--out", "h.csv"]).status.code(), Some(2));
}

#[test]
fn diverged_training_exits_with_numeric_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 3);
    let cfg = cfg.to_str().unwrap();
    let d = dir.path();
    ok(d, &["--config", cfg, "gendata", "--out", "data"]);
    let out = run(d, &["--config", cfg, "--set", "train.lr_max=1e308", "--set", "train.lr_min=1e308", "train", "--data", "data/train.mstd", "--out", "m.mstr"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn presets_resolve() {
    assert_eq!(resolve_config(None, None, &[]).unwrap(), RunConfig::default());
    assert_eq!(resolve_config(Some("full"), None, &[]).unwrap(), RunConfig::default());
    assert_eq!(resolve_config(Some("no-minlt"), None, &[]).unwrap().train.lambda, 0.0);
    assert!(resolve_config(Some("no-joint"), None, &[]).is_err());
    let sets = ["train.lambda=0.5".to_string(), "train.joint_mode=stream-only".to_string()];
    let c = resolve_config(Some("full"), None, &sets).unwrap();
    assert_eq!((c.train.lambda, c.train.joint_mode), (0.5, JointMode::StreamOnly));
}

#[test]
fn file_then_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.cfg");
    std::fs::write(&path, "train.lambda = 0.3\n# comment\ntrain.total_steps = 10\n").unwrap();
    let c = resolve_config(None, Some(&path), &["train.total_steps=20".into()]).unwrap();
    assert_eq!((c.train.lambda, c.train.total_steps), (0.3, 20));
}

#[test]
fn cer_examples() {
    let mut cfg = RunConfig::tiny().synth;
    cfg.min_tokens = 3;
    cfg.max_tokens = 3;
    let utts = generate_split(&cfg, "test", 1).unwrap().utterances;
    let u = &utts[0];
    let abc = u.symbols().to_vec();
    let hyp = |tokens: Vec<usize>| vec![HypRow { utt: u.id().to_string(), tokens }];
    assert_eq!(score(&utts, &hyp(abc.clone())).unwrap().rate(), 0.0);
    let mut axc = abc.clone();
    axc[1] = 99;
    assert!((score(&utts, &hyp(axc)).unwrap().rate() - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(score(&utts, &hyp(vec![])).unwrap().rate(), 1.0);
    assert!(score(&utts, &[]).is_err());
}
