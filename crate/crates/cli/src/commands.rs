use std::io::Write;
use std::path::{Path, PathBuf};

use hyperhead::data::{self, GenerationParams, SyntheticDataset};
use hyperhead::head::{classify, PrototypeBank};
use hyperhead::hubness::hubness_report;
use hyperhead::train::{self, Checkpoint, DatasetSource, ExperimentConfig, TrainOptions, TrainOutcome};
use serde::Serialize;

use crate::manifest::{sibling_manifest, ManifestWriter};
use crate::{prototypes, CliError, EvaluateArgs, ExportArgs, GenerateArgs, HubnessArgs, ImportArgs, TrainArgs, ZeroShotArgs};

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::input(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    write_file(path, text)
}

fn to_value<T: Serialize>(value: &T) -> serde_json::Value {
    serde_json::to_value(value).expect("config serializes")
}

/// Runs `body` between writing the manifest and finalizing it.
fn with_manifest(
    path: PathBuf,
    command: &str,
    config: serde_json::Value,
    inputs: &[PathBuf],
    seed: Option<u64>,
    body: impl FnOnce() -> Result<Vec<PathBuf>, CliError>,
) -> Result<(), CliError> {
    let writer = ManifestWriter::begin(path, command, config, inputs, seed)?;
    match body() {
        Ok(outputs) => writer.succeed(&outputs),
        Err(err) => {
            writer.fail(&err);
            Err(err)
        }
    }
}

pub fn generate(args: GenerateArgs) -> Result<(), CliError> {
    let mut params = match &args.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            serde_json::from_str::<GenerationParams>(&text).map_err(|e| io_err(path, e))?
        }
        None => GenerationParams::default(),
    };
    macro_rules! apply {
        ($($field:ident),*) => {$(
            if let Some(v) = args.$field {
                params.$field = v;
            }
        )*};
    }
    apply!(dim, num_super, num_classes, num_samples, sigma_super, sigma_leaf, sigma_x, background_fraction, val_fraction, seed);
    if args.background_sigma.is_some() {
        params.background_sigma = args.background_sigma;
    }
    let config = serde_json::json!({
        "params": params,
        "unseen": args.unseen,
        "imbalance_exponent": args.imbalance,
    });
    let inputs: Vec<PathBuf> = args.spec.iter().cloned().collect();
    let out = args.out.clone();
    with_manifest(sibling_manifest(&out), "generate", config, &inputs, Some(params.seed), || {
        let mut ds = data::generate(&params)?;
        if let Some(e) = args.imbalance {
            ds = data::imbalance_profile(&ds, e)?;
        }
        if !args.unseen.is_empty() {
            let idx = args
                .unseen
                .iter()
                .map(|n| ds.tree.class_index(n).ok_or_else(|| CliError::input(format!("unknown class '{n}'"))))
                .collect::<Result<Vec<_>, _>>()?;
            ds = data::holdout_unseen(&ds, &idx)?.dataset;
        }
        write_file(&out, ds.to_json()?)?;
        print_dataset_summary(&ds);
        Ok(vec![out.clone()])
    })
}

fn print_dataset_summary(ds: &SyntheticDataset) {
    println!(
        "{} samples, {} classes under {} supercategories, dim {}",
        ds.features.len(),
        ds.num_classes(),
        ds.tree.supercategories.len(),
        ds.dim()
    );
    println!(
        "train {} / val {}, background {}",
        ds.splits.train.len(),
        ds.splits.val.len(),
        ds.background_count()
    );
    let counts = ds.class_counts(&ds.splits.train);
    println!("class,train_count{}", if ds.imbalance.is_some() { ",bucket" } else { "" });
    for (c, name) in ds.tree.class_names().iter().enumerate() {
        let bucket = ds
            .imbalance
            .as_ref()
            .map(|info| format!(",{}", to_value(&info.buckets[c]).as_str().unwrap_or_default()))
            .unwrap_or_default();
        let unseen = if ds.unseen_classes.contains(&c) { " (unseen)" } else { "" };
        println!("{name},{}{bucket}{unseen}", counts[c]);
    }
}

/// Loads a config, resolving relative paths against the config file's directory.
fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(path)?;
    let base = path.parent().unwrap_or(Path::new(""));
    if let DatasetSource::Path(p) = &mut cfg.dataset {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    if let Some(p) = cfg.prototypes.as_mut() {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    Ok(cfg)
}

fn config_inputs(cfg: &ExperimentConfig) -> Vec<PathBuf> {
    let mut inputs = Vec::new();
    if let DatasetSource::Path(p) = &cfg.dataset {
        inputs.push(p.clone());
    }
    if let Some(p) = &cfg.prototypes {
        inputs.push(p.clone());
    }
    inputs
}

fn save_run(out_dir: &Path, outcome: &TrainOutcome) -> Result<Vec<PathBuf>, CliError> {
    let ckpt = out_dir.join("checkpoint.json");
    write_file(&ckpt, outcome.checkpoint.to_json()?)?;
    let metrics = out_dir.join("metrics.json");
    write_json(&metrics, &outcome.report)?;
    let csv = out_dir.join("metrics.csv");
    write_file(&csv, outcome.report.to_csv())?;
    let mut outputs = outcome.checkpoint_files.clone();
    outputs.extend([ckpt, metrics, csv]);
    Ok(outputs)
}

pub fn train(args: TrainArgs) -> Result<(), CliError> {
    let resume = args.resume.as_deref().map(Checkpoint::load).transpose()?;
    let mut cfg = match (&args.config, &resume) {
        (Some(path), _) => load_config(path)?,
        (None, Some(ckpt)) => ckpt.config.clone(),
        (None, None) => ExperimentConfig::default(),
    };
    if let Some(head) = args.head {
        cfg.head = head;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        cfg.epochs = epochs;
    }
    cfg.validate()?;
    let mut inputs: Vec<PathBuf> = args.config.iter().cloned().collect();
    inputs.extend(config_inputs(&cfg));
    inputs.extend(args.resume.iter().cloned());
    let out_dir = args.out_dir.clone();
    with_manifest(out_dir.join("manifest.json"), "train", to_value(&cfg), &inputs, Some(cfg.seed), || {
        let ds = cfg.prepare_dataset()?;
        let opts = TrainOptions {
            checkpoint_dir: Some(out_dir.join("checkpoints")),
            resume,
        };
        let outcome = train::train(&cfg, &ds, opts)?;
        let m = &outcome.report.final_eval;
        println!(
            "{} head, {} epochs: train loss {:.5} -> {:.5}, val accuracy {:.4}, supercategory accuracy {:.4}",
            cfg.head,
            cfg.epochs,
            outcome.report.initial_train_loss,
            outcome.report.final_train_loss(),
            m.accuracy,
            m.supercategory_accuracy
        );
        if let Some(r) = outcome.report.hierarchy_ratio {
            println!("intra/inter supercategory prototype distance ratio {r:.4}");
        }
        save_run(&out_dir, &outcome)
    })
}

pub fn zero_shot(args: ZeroShotArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let mut inputs = vec![args.config.clone()];
    inputs.extend(config_inputs(&cfg));
    let out_dir = args.out_dir.clone();
    with_manifest(out_dir.join("manifest.json"), "zero-shot", to_value(&cfg), &inputs, Some(cfg.seed), || {
        let ds = cfg.prepare_dataset()?;
        let opts = TrainOptions {
            checkpoint_dir: Some(out_dir.join("checkpoints")),
            resume: None,
        };
        let outcome = train::zero_shot_eval(&cfg, &ds, opts)?;
        let m = &outcome.report.final_eval;
        let show = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        println!(
            "accuracy {:.4}, seen {}, unseen {}, harmonic mean {}",
            m.accuracy,
            show(m.seen_accuracy),
            show(m.unseen_accuracy),
            show(m.harmonic_mean)
        );
        save_run(&out_dir, &outcome)
    })
}

#[derive(Serialize)]
struct TopK<'a> {
    index: usize,
    label: Option<&'a str>,
    top_k: Vec<(&'a str, f64)>,
}

pub fn evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let mut inputs = vec![args.checkpoint.clone()];
    match &args.dataset {
        Some(p) => inputs.push(p.clone()),
        None => inputs.extend(config_inputs(&ckpt.config)),
    }
    let config = serde_json::json!({
        "checkpoint": args.checkpoint,
        "dataset": args.dataset,
        "top_k": args.top_k_out.as_ref().map(|_| args.top_k),
    });
    let out = args.out.clone();
    with_manifest(sibling_manifest(&out), "evaluate", config, &inputs, Some(ckpt.config.seed), || {
        let ds = match &args.dataset {
            Some(p) => ckpt.config.prepare_from(SyntheticDataset::load(p)?)?,
            None => ckpt.config.prepare_dataset()?,
        };
        let metrics = ckpt.evaluate(&ds)?;
        write_json(&out, &metrics)?;
        println!(
            "{} samples: accuracy {:.4}, supercategory accuracy {:.4}",
            metrics.num_samples, metrics.accuracy, metrics.supercategory_accuracy
        );
        let mut outputs = vec![out.clone()];
        if let Some(path) = &args.top_k_out {
            let names = ckpt.bank.class_names();
            let mut lines = Vec::new();
            for &i in &ds.splits.val {
                let z = match &ckpt.encoder {
                    Some(enc) => enc.embed(&ds.features[i]),
                    None => ds.features[i].clone(),
                };
                let cls = classify(&z, &ckpt.bank, args.top_k)?;
                let row = TopK {
                    index: i,
                    label: ds.labels[i].map(|l| names[l].as_str()),
                    top_k: cls.top_k.iter().map(|&(c, p)| (names[c].as_str(), p)).collect(),
                };
                let mut line = serde_json::to_vec(&row).expect("row serializes");
                line.push(b'\n');
                lines.write_all(&line).expect("in-memory write");
            }
            write_file(path, lines)?;
            outputs.push(path.clone());
        }
        Ok(outputs)
    })
}

#[derive(Serialize)]
struct HubnessSummaryRow {
    source: String,
    mode: String,
    kind: String,
    k: usize,
    num_prototypes: usize,
    skewness: f64,
}

pub fn hubness(args: HubnessArgs) -> Result<(), CliError> {
    if args.checkpoints.is_empty() && args.banks.is_empty() {
        return Err(CliError::input("give at least one --checkpoint or --bank"));
    }
    let inputs: Vec<PathBuf> = args.checkpoints.iter().chain(&args.banks).cloned().collect();
    let config = serde_json::json!({
        "checkpoints": args.checkpoints,
        "banks": args.banks,
        "k": args.k,
        "bins": args.bins,
    });
    let out_dir = args.out_dir.clone();
    with_manifest(out_dir.join("manifest.json"), "hubness", config, &inputs, None, || {
        let mut sources: Vec<(PathBuf, PrototypeBank)> = Vec::new();
        for p in &args.checkpoints {
            sources.push((p.clone(), Checkpoint::load(p)?.bank));
        }
        for p in &args.banks {
            sources.push((p.clone(), PrototypeBank::load(p)?));
        }
        let mut outputs = Vec::new();
        let mut rows = Vec::new();
        let mut labels: Vec<String> = Vec::new();
        for (i, (path, bank)) in sources.iter().enumerate() {
            let mut label = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            if labels.contains(&label) || label.is_empty() {
                let parent = path
                    .parent()
                    .and_then(|d| d.file_name())
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                label = format!("{parent}_{label}");
            }
            if labels.contains(&label) {
                label = format!("{label}{i}");
            }
            labels.push(label.clone());
            for report in hubness_report(bank, args.k, args.bins)? {
                let kind = to_value(&report.kind).as_str().unwrap_or_default().to_string();
                let json = out_dir.join(format!("{label}_{kind}.json"));
                write_json(&json, &report)?;
                let csv = out_dir.join(format!("{label}_{kind}.csv"));
                write_file(&csv, report.histogram.to_csv())?;
                outputs.extend([json, csv]);
                rows.push(HubnessSummaryRow {
                    source: label.clone(),
                    mode: bank.mode().to_string(),
                    kind,
                    k: report.k,
                    num_prototypes: bank.num_classes(),
                    skewness: report.skewness,
                });
            }
        }
        let mut table = String::from("source,mode,kind,k,num_prototypes,skewness\n");
        for r in &rows {
            table.push_str(&format!("{},{},{},{},{},{}\n", r.source, r.mode, r.kind, r.k, r.num_prototypes, r.skewness));
        }
        print!("{table}");
        let csv = out_dir.join("summary.csv");
        write_file(&csv, &table)?;
        let json = out_dir.join("summary.json");
        write_json(&json, &rows)?;
        outputs.extend([csv, json]);
        Ok(outputs)
    })
}

pub fn import_prototypes(args: ImportArgs) -> Result<(), CliError> {
    let config = serde_json::json!({
        "input": args.input,
        "mode": args.mode,
        "already_hyperbolic": args.already_hyperbolic,
        "delta": args.delta,
    });
    let out = args.out.clone();
    let inputs = vec![args.input.clone()];
    with_manifest(sibling_manifest(&out), "import-prototypes", config, &inputs, None, || {
        let text = std::fs::read_to_string(&args.input).map_err(|e| io_err(&args.input, e))?;
        let parsed = prototypes::parse(&text).map_err(|e| CliError::input(format!("{}: {}", args.input.display(), e.message)))?;
        let bank = prototypes::to_bank(parsed, args.mode, args.already_hyperbolic, args.delta)?;
        write_json(&out, &bank)?;
        println!(
            "{} {} prototypes of dimension {}, d_min {}",
            bank.num_classes(),
            bank.mode(),
            bank.feature_dim(),
            bank.d_min()
        );
        Ok(vec![out.clone()])
    })
}

pub fn export_prototypes(args: ExportArgs) -> Result<(), CliError> {
    let source = args.bank.clone().or(args.checkpoint.clone()).expect("clap requires a source");
    let config = serde_json::json!({
        "bank": args.bank,
        "checkpoint": args.checkpoint,
        "tangent": args.tangent,
    });
    let out = args.out.clone();
    with_manifest(sibling_manifest(&out), "export-prototypes", config, &[source], None, || {
        let bank = match (&args.bank, &args.checkpoint) {
            (Some(p), _) => PrototypeBank::load(p)?,
            (None, Some(p)) => Checkpoint::load(p)?.bank,
            (None, None) => unreachable!("clap requires a source"),
        };
        write_file(&out, prototypes::render(&bank, args.tangent))?;
        Ok(vec![out.clone()])
    })
}
