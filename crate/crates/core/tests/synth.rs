use mocha_asr_core::config::{SynthConfig, BOS, EOS};
use mocha_asr_core::metrics::{cer, edit_distance, ErrorCount};
use mocha_asr_core::synth::{generate_corpus, generate_split, nearest_prototype_decode, prototypes};

fn small(seed: u64) -> SynthConfig {
    SynthConfig {
        num_train: 40,
        num_test: 10,
        seed,
        ..SynthConfig::default()
    }
}

#[test]
fn same_seed_same_corpus() {
    assert_eq!(generate_corpus(&small(3)).unwrap(), generate_corpus(&small(3)).unwrap());
    assert_ne!(generate_corpus(&small(3)).unwrap().0, generate_corpus(&small(4)).unwrap().0);
}

#[test]
fn prototypes_have_unit_norm() {
    let p = prototypes(&SynthConfig::default());
    for k in 0..p.rows() {
        let n: f64 = p.row(k).iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() < 1e-12);
    }
}

#[test]
fn boundary_bookkeeping() {
    let cfg = small(5);
    let (train, test) = generate_corpus(&cfg).unwrap();
    for u in train.utterances.iter().chain(&test.utterances) {
        let l = u.tokens.len();
        assert_eq!(u.tokens[0], BOS);
        assert_eq!(u.tokens[l - 1], EOS);
        assert!((cfg.min_tokens..=cfg.max_tokens).contains(&(l - 2)));
        assert_eq!(u.boundaries.len(), l - 1);
        assert_eq!(*u.boundaries.last().unwrap(), u.n_frames());
        let mut prev = 0;
        for &b in &u.boundaries {
            let n = b - prev;
            assert!((cfg.min_frames..=cfg.max_frames).contains(&n));
            prev = b;
        }
        assert!(u.symbols().windows(2).all(|w| w[0] != w[1]));
    }
}

#[test]
fn noiseless_frames_equal_prototypes() {
    let cfg = SynthConfig {
        noise_std: 0.0,
        ..small(6)
    };
    let c = generate_split(&cfg, "train", 30).unwrap();
    for u in &c.utterances {
        let mut start = 0;
        for (i, &b) in u.boundaries.iter().enumerate() {
            let tok = u.tokens[i + 1];
            for j in start..b {
                let row = u.features.frames.row(j);
                if tok == EOS {
                    assert!(row.iter().all(|&v| v == 0.0));
                } else {
                    assert_eq!(row, c.prototypes.row(tok - 2));
                }
            }
            start = b;
        }
        assert_eq!(nearest_prototype_decode(&u.features.frames, &c.prototypes), u.symbols());
    }
}

#[test]
fn learnability_floor_at_default_noise() {
    let cfg = SynthConfig::default();
    let c = generate_split(&cfg, "test", cfg.num_test).unwrap();
    let total = c
        .utterances
        .iter()
        .fold(ErrorCount::default(), |acc, u| acc.add(ErrorCount::of(&u.tokens, &nearest_prototype_decode(&u.features.frames, &c.prototypes))));
    assert!(total.rate() <= 0.02, "{total:?}");
}

#[test]
fn edit_distance_examples() {
    assert_eq!(cer(&[2, 3, 4], &[2, 3, 4]), 0.0);
    assert!((cer(&[2, 3, 4], &[2, 9, 4]) - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(cer(&[2, 3], &[]), 1.0);
    assert_eq!(cer(&[BOS, 2, 3, EOS], &[2, 3, EOS]), 0.0);
    assert_eq!(edit_distance(&[1, 2, 3], &[2, 3, 4]), 2);
    assert_eq!(edit_distance::<u8>(&[], &[1, 2]), 2);
}

#[test]
fn empty_reference_counts_hypothesis() {
    let e = ErrorCount::of(&[BOS, EOS], &[3, 4, EOS]);
    assert_eq!(e, ErrorCount { errors: 2, ref_len: 0 });
    assert_eq!(e.rate(), 2.0);
}
