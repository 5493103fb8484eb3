use std::path::Path;

use mocha_asr::checkpoint::{load_model, save_model, Checkpoint, VERSION as CKPT_VERSION};
use mocha_asr::container::RawTensor;
use mocha_asr::dataset::{sidecar_path, Dataset};
use mocha_asr::AppError;
use mocha_asr_core::config::RunConfig;
use mocha_asr_core::numerics::{DType, Tensor};
use mocha_asr_core::synth::generate_split;
use mocha_asr_core::Model;

fn tiny_model(seed: u64) -> Model<f64> {
    Model::new(RunConfig::tiny(), seed).unwrap()
}

fn dataset(count: usize) -> Dataset {
    let mut config = RunConfig::tiny();
    config.synth.num_train = count;
    Dataset {
        corpus: generate_split(&config.synth, "train", count).unwrap(),
        config,
        split: "train".into(),
    }
}

#[test]
fn checkpoint_save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.mstr"), dir.path().join("b.mstr"));
    let model = tiny_model(3);
    save_model(&a, &model, 1234).unwrap();
    let (loaded, step) = load_model::<f64>(&a).unwrap();
    assert_eq!(step, 1234);
    assert_eq!(loaded.config, model.config);
    for id in model.store.ids() {
        let (x, y) = (model.store.tensor(id).data(), loaded.store.tensor(id).data());
        assert!(x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()), "{}", model.store.name(id));
    }
    save_model(&b, &loaded, step).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn checkpoint_layout_starts_with_magic_and_version() {
    let bytes = Checkpoint::of_model(&tiny_model(0), 7).to_bytes();
    assert_eq!(&bytes[..4], b"MSTR");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), CKPT_VERSION);
    assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 7);
}

#[test]
fn checkpoint_version_mismatch_is_rejected() {
    let mut bytes = Checkpoint::of_model(&tiny_model(0), 0).to_bytes();
    bytes[4..8].copy_from_slice(&(CKPT_VERSION + 1).to_le_bytes());
    let err = Checkpoint::from_bytes(Path::new("x"), &bytes).unwrap_err();
    assert!(matches!(err, AppError::Version { found, expected, .. } if found == CKPT_VERSION + 1 && expected == CKPT_VERSION));
}

#[test]
fn truncated_checkpoint_is_rejected_at_every_cut() {
    let bytes = Checkpoint::of_model(&tiny_model(0), 0).to_bytes();
    for cut in [0, 3, 6, 12, 40, bytes.len() / 2, bytes.len() - 1] {
        let err = Checkpoint::from_bytes(Path::new("x"), &bytes[..cut]).unwrap_err();
        assert!(matches!(err, AppError::Truncated { .. } | AppError::Format { .. }), "cut {cut}: {err}");
    }
    let mut long = bytes.clone();
    long.push(0);
    assert!(matches!(Checkpoint::from_bytes(Path::new("x"), &long), Err(AppError::Format { .. })));
}

#[test]
fn unknown_tensor_name_is_rejected() {
    let mut ck = Checkpoint::of_model(&tiny_model(0), 0);
    ck.tensors[0].name = "lm.nonexistent".into();
    let err = ck.into_model::<f64>().unwrap_err();
    assert!(err.to_string().contains("lm.nonexistent"), "{err}");
}

#[test]
fn mismatched_architecture_names_the_tensor() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.mstr");
    let mut ck = Checkpoint::of_model(&tiny_model(0), 0);
    let mut other = RunConfig::tiny();
    other.lm.d_model = 12;
    other.lm.ffn = 12;
    ck.config = other;
    ck.save(&path).unwrap();
    let err = load_model::<f64>(&path).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("tensor") && msg.contains("expected"), "{msg}");
}

#[test]
fn raw_tensor_converts_between_widths() {
    let t = Tensor::<f64>::new(&[2, 2], vec![0.5, -1.25, 3.0, 1e-3]).unwrap();
    let raw = RawTensor::from_tensor("t", &t);
    assert_eq!(raw.dtype, DType::F64);
    assert_eq!(raw.bytes.len(), 32);
    let narrow = raw.to_tensor::<f32>().unwrap();
    assert_eq!(narrow.data(), &[0.5f32, -1.25, 3.0, 1e-3]);
    let back = RawTensor::from_tensor("t", &narrow).to_tensor::<f64>().unwrap();
    assert_eq!(back.data()[..3], [0.5, -1.25, 3.0]);
}

#[test]
fn dataset_round_trip_preserves_every_utterance() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.mstd");
    let ds = dataset(100);
    ds.save(&path).unwrap();
    let back = Dataset::load(&path).unwrap();
    assert_eq!(back, ds);
    for u in back.utterances() {
        assert_eq!(u.boundaries.len(), u.tokens.len() - 1);
        assert_eq!(*u.boundaries.last().unwrap(), u.n_frames());
        assert!(u.boundaries.windows(2).all(|w| w[0] < w[1]));
    }
    let again = dir.path().join("again.mstd");
    back.save(&again).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn dataset_sidecar_lists_tokens_and_boundaries() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.mstd");
    let ds = dataset(5);
    ds.save(&path).unwrap();
    let text = std::fs::read_to_string(sidecar_path(&path)).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5);
    for (line, u) in lines.iter().zip(ds.utterances()) {
        let cols: Vec<&str> = line.split('\t').collect();
        assert_eq!(cols[0], u.id());
        let parse = |s: &str| s.split(' ').map(|x| x.parse::<usize>().unwrap()).collect::<Vec<_>>();
        assert_eq!(parse(cols[1]), u.tokens);
        assert_eq!(parse(cols[2]), u.boundaries);
    }
}

#[test]
fn partial_dataset_file_is_rejected() {
    let bytes = dataset(10).to_bytes();
    for cut in [2, 20, bytes.len() / 3, bytes.len() - 8] {
        let err = Dataset::from_bytes(Path::new("d"), &bytes[..cut]).unwrap_err();
        assert!(matches!(err, AppError::Truncated { .. } | AppError::Format { .. }), "cut {cut}: {err}");
    }
}

#[test]
fn corrupt_boundaries_are_rejected() {
    let mut ds = dataset(3);
    ds.corpus.utterances[1].boundaries.reverse();
    let err = Dataset::from_bytes(Path::new("d"), &ds.to_bytes()).unwrap_err();
    assert!(err.to_string().contains("corrupt index"), "{err}");
}

#[test]
fn missing_file_is_an_io_error() {
    let err = Dataset::load(Path::new("/nonexistent/x.mstd")).unwrap_err();
    assert!(matches!(err, AppError::Io { .. }));
    assert_eq!(err.exit_code(), 3);
}
