//! End-to-end experiment driver: encoder -> head -> focal loss -> optimizer.
//!
//! Training is single-threaded with a fixed sample order per epoch, so the
//! same config and seed reproduce every parameter bit for bit. Checkpoints
//! carry the optimizer moments and the shuffling RNG so a resumed run follows
//! the exact trajectory of an uninterrupted one.

mod config;
mod encoder;
mod metrics;

pub use config::{DatasetSource, DminPolicy, EncoderConfig, ExperimentConfig, OptimizerConfig};
pub use encoder::{EncoderCache, EncoderGrads, EncoderParams};
pub use metrics::{
    evaluate, harmonic_mean, hierarchy_ratio, predict, BucketAccuracy, ClassMetrics, EpochRecord, EvalMetrics,
    MetricsReport,
};

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::SyntheticDataset;
use crate::error::{Error, Result};
use crate::head::{head_backward, HeadMode, PrototypeBank, Target};
use crate::optim::{clip_gradients, riemannian_step, OptimizerState};

/// Everything needed to resume or evaluate a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub epoch: usize,
    pub encoder: Option<EncoderParams>,
    pub bank: PrototypeBank,
    pub optimizer: OptimizerState,
    pub rng: ChaCha8Rng,
    pub initial_train_loss: f64,
    pub history: Vec<EpochRecord>,
}

impl Checkpoint {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ckpt: Self = serde_json::from_str(&text)?;
        if let Some(enc) = &ckpt.encoder {
            enc.validate()?;
        }
        Ok(ckpt)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// Evaluates the checkpointed model on the validation split.
    pub fn evaluate(&self, dataset: &SyntheticDataset) -> Result<EvalMetrics> {
        let mask = dataset.unseen_mask();
        evaluate(&self.bank, self.encoder.as_ref(), dataset, &dataset.splits.val, Some(&mask))
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Directory for periodic checkpoints and failure dumps.
    pub checkpoint_dir: Option<PathBuf>,
    pub resume: Option<Checkpoint>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub report: MetricsReport,
    pub checkpoint_files: Vec<PathBuf>,
}

pub fn checkpoint_file_name(epoch: usize) -> String {
    format!("checkpoint_epoch_{epoch:04}.json")
}

struct Model<'a> {
    bank: PrototypeBank,
    encoder: Option<EncoderParams>,
    focal: &'a crate::head::FocalLossConfig,
    active: Option<Vec<bool>>,
}

struct BatchGrads {
    loss: f64,
    encoder: Option<EncoderGrads>,
    rows: Vec<Vec<f64>>,
}

impl Model<'_> {
    fn sample_grads(&self, dataset: &SyntheticDataset, i: usize, acc: &mut BatchGrads) -> Result<()> {
        let x = &dataset.features[i];
        let target = Target::from_label(dataset.labels[i]);
        let active = self.active.as_deref();
        match &self.encoder {
            Some(enc) => {
                let (z, cache) = enc.forward(x);
                let hg = head_backward(&z, &self.bank, target, self.focal, active)?;
                enc.backward(x, &cache, &hg.feature, acc.encoder.as_mut().expect("encoder grads"));
                acc.loss += hg.loss;
                add_rows(&mut acc.rows, &hg.prototypes);
            }
            None => {
                let hg = head_backward(x, &self.bank, target, self.focal, active)?;
                acc.loss += hg.loss;
                add_rows(&mut acc.rows, &hg.prototypes);
            }
        }
        Ok(())
    }

    fn mean_loss(&self, dataset: &SyntheticDataset, indices: &[usize]) -> Result<f64> {
        let mut total = 0.0;
        for &i in indices {
            let x = &dataset.features[i];
            let z = match &self.encoder {
                Some(enc) => enc.embed(x),
                None => x.clone(),
            };
            let target = Target::from_label(dataset.labels[i]);
            total += head_backward(&z, &self.bank, target, self.focal, self.active.as_deref())?.loss;
        }
        Ok(total / indices.len().max(1) as f64)
    }

    fn zero_grads(&self) -> BatchGrads {
        BatchGrads {
            loss: 0.0,
            encoder: self.encoder.as_ref().map(EncoderGrads::zeros),
            rows: self.bank.rows().iter().map(|r| vec![0.0; r.len()]).collect(),
        }
    }

    fn diagnostics(&self, batch: &[usize]) -> serde_json::Value {
        let proto_norms: Vec<f64> = self
            .bank
            .rows()
            .iter()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        serde_json::json!({
            "last_batch": batch,
            "encoder_norm": self.encoder.as_ref().map(EncoderParams::parameter_norm),
            "prototype_norms": proto_norms,
        })
    }
}

fn add_rows(acc: &mut [Vec<f64>], rows: &[Vec<f64>]) {
    for (a, r) in acc.iter_mut().zip(rows) {
        for (x, y) in a.iter_mut().zip(r) {
            *x += y;
        }
    }
}

fn all_finite(grads: &BatchGrads) -> bool {
    grads.loss.is_finite()
        && grads.rows.iter().flatten().all(|v| v.is_finite())
        && grads
            .encoder
            .as_ref()
            .is_none_or(|g| g.tensors().iter().flat_map(|t| t.iter()).all(|v| v.is_finite()))
}

fn same_run(a: &ExperimentConfig, b: &ExperimentConfig) -> bool {
    let mut a = a.clone();
    a.epochs = b.epochs;
    a == *b
}

fn initial_state(config: &ExperimentConfig, dataset: &SyntheticDataset) -> Result<Checkpoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let emb_dim = config.embedding_dim(dataset);
    let encoder = if config.encoder.enabled {
        Some(EncoderParams::init(
            dataset.dim(),
            config.encoder.hidden,
            config.encoder.embedding_dim,
            &mut rng,
        )?)
    } else {
        None
    };
    let bank = match config.load_fixed_bank(dataset)? {
        Some(bank) => bank,
        None => PrototypeBank::init_learnable(
            config.head,
            dataset.tree.class_names(),
            emb_dim,
            config.delta,
            config.temperature,
            &mut rng,
        )?,
    };
    if bank.feature_dim() != emb_dim {
        return Err(Error::Config(format!(
            "prototypes expect {}-dimensional features, the model produces {emb_dim}",
            bank.feature_dim()
        )));
    }
    let opt = &config.optimizer;
    Ok(Checkpoint {
        config: config.clone(),
        epoch: 0,
        encoder,
        bank,
        optimizer: OptimizerState::new(opt.lr, opt.weight_decay, opt.clip_norm)?,
        rng,
        initial_train_loss: f64::NAN,
        history: Vec::new(),
    })
}

/// Trains on a prepared dataset (imbalance and holdout already applied).
pub fn train(config: &ExperimentConfig, dataset: &SyntheticDataset, opts: TrainOptions) -> Result<TrainOutcome> {
    config.validate()?;
    let start = Instant::now();
    let unseen_mask = dataset.unseen_mask();
    let has_unseen = unseen_mask.iter().any(|&m| m);
    if has_unseen && config.prototypes.is_none() {
        return Err(Error::Config("held-out classes need fixed prototypes".into()));
    }

    let mut state = match opts.resume {
        Some(ckpt) => {
            if !same_run(&ckpt.config, config) {
                return Err(Error::Config("checkpoint was produced by a different configuration".into()));
            }
            if ckpt.epoch > config.epochs {
                return Err(Error::Config(format!(
                    "checkpoint is at epoch {} but the run stops at {}",
                    ckpt.epoch, config.epochs
                )));
            }
            Checkpoint {
                config: config.clone(),
                ..ckpt
            }
        }
        None => initial_state(config, dataset)?,
    };

    let mut model = Model {
        bank: state.bank.clone(),
        encoder: state.encoder.clone(),
        focal: &config.focal,
        active: has_unseen.then(|| unseen_mask.iter().map(|&m| !m).collect()),
    };
    let train_idx = dataset.splits.train.clone();
    if train_idx.is_empty() {
        return Err(Error::Config("train split is empty".into()));
    }
    if state.epoch == 0 {
        // A non-finite start is reported by the first batch with its dump.
        state.initial_train_loss = model.mean_loss(dataset, &train_idx).unwrap_or(f64::NAN);
    }

    let learn_rows = !model.bank.is_frozen();
    let mut files = Vec::new();
    let mut order = train_idx.clone();
    for epoch in (state.epoch + 1)..=config.epochs {
        // Each epoch shuffles the sorted index list so a resumed run sees the same order.
        order.copy_from_slice(&train_idx);
        order.shuffle(&mut state.rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grads = model.zero_grads();
            let mut failed = None;
            for &i in batch {
                match model.sample_grads(dataset, i, &mut grads) {
                    Ok(()) => {}
                    Err(Error::Numerical(msg)) => {
                        failed = Some(msg);
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
            if failed.is_some() || !all_finite(&grads) {
                let diag = model.diagnostics(batch);
                if let Some(dir) = &opts.checkpoint_dir {
                    std::fs::create_dir_all(dir)?;
                    std::fs::write(dir.join("nan_dump.json"), serde_json::to_string_pretty(&diag)?)?;
                }
                let cause = failed.unwrap_or_else(|| "non-finite loss or gradient".into());
                return Err(Error::Numerical(format!("{cause} at epoch {epoch}: {diag}")));
            }
            epoch_loss += grads.loss;
            apply_update(&mut model, &mut state.optimizer, grads, batch.len(), learn_rows, config)?;
        }
        let train_loss = epoch_loss / train_idx.len() as f64;
        let eval_now = epoch % config.eval_every == 0 || epoch == config.epochs;
        let val = if eval_now {
            Some(evaluate(&model.bank, model.encoder.as_ref(), dataset, &dataset.splits.val, Some(&unseen_mask))?)
        } else {
            None
        };
        state.history.push(EpochRecord {
            epoch,
            train_loss,
            val,
        });
        state.epoch = epoch;
        if eval_now {
            if let Some(dir) = &opts.checkpoint_dir {
                state.bank = model.bank.clone();
                state.encoder = model.encoder.clone();
                std::fs::create_dir_all(dir)?;
                let path = dir.join(checkpoint_file_name(epoch));
                state.save(&path)?;
                files.push(path);
            }
        }
    }
    state.bank = model.bank;
    state.encoder = model.encoder;

    let final_eval = state.evaluate(dataset)?;
    let report = MetricsReport {
        head: config.head,
        seed: config.seed,
        initial_train_loss: state.initial_train_loss,
        epochs: state.history.clone(),
        final_eval,
        hierarchy_ratio: hierarchy_ratio(&state.bank, dataset).ok(),
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome {
        checkpoint: state,
        report,
        checkpoint_files: files,
    })
}

fn apply_update(
    model: &mut Model<'_>,
    opt: &mut OptimizerState,
    grads: BatchGrads,
    batch_len: usize,
    learn_rows: bool,
    config: &ExperimentConfig,
) -> Result<()> {
    let scale = 1.0 / batch_len as f64;
    let mut tensors: Vec<Vec<f64>> = Vec::new();
    let n_enc = if let Some(g) = grads.encoder {
        tensors.extend(g.into_tensors());
        4
    } else {
        0
    };
    if learn_rows {
        tensors.extend(grads.rows);
    }
    for v in tensors.iter_mut().flatten() {
        *v *= scale;
    }
    if let Some(max_norm) = config.optimizer.clip_norm {
        clip_gradients(&mut tensors, max_norm)?;
    }

    opt.begin_step();
    let mut slot = 0;
    if let Some(enc) = model.encoder.as_mut() {
        for (param, grad) in enc.tensors_mut().into_iter().zip(&tensors[..n_enc]) {
            opt.euclidean_step(slot, param, grad)?;
            slot += 1;
        }
    }
    if learn_rows {
        let row_grads = &tensors[n_enc..];
        match model.bank.mode() {
            HeadMode::Hyperbolic => {
                for (c, g) in row_grads.iter().enumerate() {
                    let point = model.bank.prototype(c).expect("hyperbolic row");
                    let next = riemannian_step(&point, g, config.optimizer.prototype_lr)?;
                    model.bank.set_hyperbolic_row(c, next);
                }
            }
            _ => {
                for (row, g) in model.bank.rows_mut().iter_mut().zip(row_grads) {
                    opt.euclidean_step(slot, row, g)?;
                    slot += 1;
                }
            }
        }
    }
    Ok(())
}

/// Trains against a frozen semantic prototype file and reports seen/unseen accuracy.
///
/// With no unseen classes configured the report matches a plain evaluation
/// and carries no harmonic mean.
pub fn zero_shot_eval(config: &ExperimentConfig, dataset: &SyntheticDataset, opts: TrainOptions) -> Result<TrainOutcome> {
    if config.prototypes.is_none() {
        return Err(Error::Config("zero-shot evaluation needs a fixed prototype file".into()));
    }
    let expected = config.unseen_indices(dataset)?;
    let mut held = dataset.unseen_classes.clone();
    held.sort_unstable();
    let mut wanted = expected;
    wanted.sort_unstable();
    if held != wanted {
        return Err(Error::Config(
            "dataset holdout does not match the configured unseen classes; prepare it with the same config".into(),
        ));
    }
    train(config, dataset, opts)
}
