mod common;

use common::*;
use hyperhead::data::{self, GenerationParams};
use hyperhead::head::{classify, head_logits, HeadMode, PrototypeBank};
use hyperhead::lorentz::{exp_map_at, exp_map_origin, log_map_at, log_map_origin, TangentVector};
use hyperhead::train::{train, Checkpoint, DatasetSource, ExperimentConfig, TrainOptions};
use hyperhead::Error;
use rand::Rng;

fn quick(head: HeadMode, seed: u64, epochs: usize) -> ExperimentConfig {
    ExperimentConfig {
        dataset: DatasetSource::Generate(GenerationParams {
            num_samples: 2000,
            ..small_params(seed)
        }),
        head,
        epochs,
        eval_every: 2,
        seed,
        ..ExperimentConfig::default()
    }
}

#[test]
fn loss_decreases_for_every_head() {
    for head in [HeadMode::Hyperbolic, HeadMode::EuclideanLinear, HeadMode::EuclideanCosine] {
        let cfg = quick(head, 1, 4);
        let ds = cfg.prepare_dataset().unwrap();
        let out = train(&cfg, &ds, TrainOptions::default()).unwrap();
        assert!(out.report.final_train_loss() < out.report.initial_train_loss, "{head}");
        assert_eq!(out.report.epochs.len(), 4);
    }
}

#[test]
fn noiseless_data_is_learned_perfectly() {
    let cfg = ExperimentConfig {
        dataset: DatasetSource::Generate(GenerationParams {
            sigma_x: 0.0,
            ..GenerationParams::default()
        }),
        epochs: 20,
        ..ExperimentConfig::default()
    };
    let ds = cfg.prepare_dataset().unwrap();
    let out = train(&cfg, &ds, TrainOptions::default()).unwrap();
    assert_eq!(out.report.final_eval.accuracy, 1.0);
}

#[test]
fn same_seed_gives_identical_runs() {
    let cfg = quick(HeadMode::Hyperbolic, 4, 3);
    let ds = cfg.prepare_dataset().unwrap();
    let a = train(&cfg, &ds, TrainOptions::default()).unwrap();
    let b = train(&cfg, &ds, TrainOptions::default()).unwrap();
    assert_eq!(a.checkpoint.to_json().unwrap(), b.checkpoint.to_json().unwrap());
    assert_eq!(a.report.without_timing(), b.report.without_timing());
    assert_eq!(a.report.final_train_loss().to_bits(), b.report.final_train_loss().to_bits());
}

#[test]
fn resume_continues_the_same_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let full_cfg = quick(HeadMode::Hyperbolic, 5, 4);
    let ds = full_cfg.prepare_dataset().unwrap();
    let full = train(&full_cfg, &ds, TrainOptions::default()).unwrap();

    let half_cfg = ExperimentConfig {
        epochs: 2,
        ..full_cfg.clone()
    };
    let opts = TrainOptions {
        checkpoint_dir: Some(dir.path().to_path_buf()),
        resume: None,
    };
    let half = train(&half_cfg, &ds, opts).unwrap();
    assert_eq!(half.checkpoint_files.len(), 1);
    let saved = Checkpoint::load(&half.checkpoint_files[0]).unwrap();
    assert_eq!(saved, half.checkpoint);
    let resumed = train(
        &full_cfg,
        &ds,
        TrainOptions {
            checkpoint_dir: None,
            resume: Some(saved),
        },
    )
    .unwrap();
    let epochs: Vec<usize> = resumed.report.epochs.iter().map(|e| e.epoch).collect();
    assert_eq!(epochs, vec![1, 2, 3, 4]);
    assert_eq!(resumed.checkpoint.to_json().unwrap(), full.checkpoint.to_json().unwrap());
}

#[test]
fn checkpoint_round_trip_reproduces_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick(HeadMode::EuclideanLinear, 6, 2);
    let ds = cfg.prepare_dataset().unwrap();
    let out = train(&cfg, &ds, TrainOptions::default()).unwrap();
    let path = dir.path().join("ckpt.json");
    out.checkpoint.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, out.checkpoint);
    assert_eq!(back.evaluate(&ds).unwrap(), out.report.final_eval);
}

#[test]
fn resume_rejects_a_different_config() {
    let cfg = quick(HeadMode::Hyperbolic, 7, 1);
    let ds = cfg.prepare_dataset().unwrap();
    let out = train(&cfg, &ds, TrainOptions::default()).unwrap();
    let other = ExperimentConfig {
        delta: 2.0,
        epochs: 2,
        ..cfg
    };
    let err = train(
        &other,
        &ds,
        TrainOptions {
            checkpoint_dir: None,
            resume: Some(out.checkpoint),
        },
    )
    .unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn corrupted_inputs_abort_with_a_dump() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick(HeadMode::EuclideanLinear, 8, 2);
    let mut ds = cfg.prepare_dataset().unwrap();
    let i = ds.splits.train[0];
    ds.features[i][0] = f64::NAN;
    let opts = TrainOptions {
        checkpoint_dir: Some(dir.path().to_path_buf()),
        resume: None,
    };
    let err = train(&cfg, &ds, opts).unwrap_err();
    assert!(matches!(err, Error::Numerical(_)), "{err}");
    let dump = std::fs::read_to_string(dir.path().join("nan_dump.json")).unwrap();
    assert!(dump.contains("last_batch") && dump.contains("prototype_norms"));
}

#[test]
fn random_prototypes_score_near_chance() {
    let params = GenerationParams {
        background_fraction: 0.0,
        num_samples: 1600,
        ..small_params(9)
    };
    let ds = data::generate(&params).unwrap();
    let c = ds.num_classes();
    let mut rng = rng(10);
    let mut accs = Vec::new();
    for _ in 0..100 {
        let pts = (0..c).map(|_| exp_map_origin(&gaussian(&mut rng, ds.dim(), 2.0)).unwrap()).collect();
        let bank = PrototypeBank::hyperbolic(ds.tree.class_names(), pts, false, 1.4).unwrap();
        let hits = ds
            .splits
            .val
            .iter()
            .filter(|&&i| Some(classify(&ds.features[i], &bank, 1).unwrap().class) == ds.labels[i])
            .count();
        accs.push(hits as f64 / ds.splits.val.len() as f64);
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    let var = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (accs.len() - 1) as f64;
    let se = (var / accs.len() as f64).sqrt();
    let chance = 1.0 / c as f64;
    assert!((mean - chance).abs() < 4.0 * se + 1e-3, "mean {mean} chance {chance} se {se}");
}

#[test]
fn two_class_boundary_is_the_geodesic_bisector() {
    let mut rng = rng(12);
    for _ in 0..100 {
        let a = exp_map_origin(&gaussian(&mut rng, 2, 1.0)).unwrap();
        let b = exp_map_origin(&gaussian(&mut rng, 2, 1.0)).unwrap();
        let bank = PrototypeBank::hyperbolic(vec!["a".into(), "b".into()], vec![a.clone(), b.clone()], rng.random_bool(0.5), 1.4)
            .unwrap();
        let half = log_map_at(&a, &b).unwrap().scaled(0.5);
        let mid = exp_map_at(&a, &half).unwrap();
        // The bisector leaves the midpoint orthogonally to the a-b geodesic.
        let along = log_map_at(&mid, &b).unwrap();
        let m = mid.coords();
        let t = along.components();
        let normal = [m[1] * t[2] - m[2] * t[1], m[2] * t[0] - m[0] * t[2], m[0] * t[1] - m[1] * t[0]];
        // Lorentz-orthogonal to both m and t: flip the time sign of the Euclidean cross product.
        let normal = vec![-normal[0], normal[1], normal[2]];
        let len = mink(&normal, &normal).sqrt();
        for s in [-1.5, -0.3, 0.0, 0.7, 2.0] {
            let w: Vec<f64> = normal.iter().map(|v| s * v / len).collect();
            let probe = exp_map_at(&mid, &TangentVector::new(mid.clone(), w).unwrap()).unwrap();
            let logits = head_logits(&log_map_origin(&probe), &bank).unwrap();
            let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
            let (p, q) = (sig(logits.scores()[0]), sig(logits.scores()[1]));
            assert!((p / (p + q) - 0.5).abs() < 1e-9);
        }
    }
}
