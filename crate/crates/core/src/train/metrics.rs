use serde::{Deserialize, Serialize};

use super::EncoderParams;
use crate::data::{FrequencyBucket, SyntheticDataset};
use crate::error::Result;
use crate::head::{classify_logits, head_logits, HeadMode, PrototypeBank};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketAccuracy {
    pub frequent: f64,
    pub common: f64,
    pub rare: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub num_samples: usize,
    pub accuracy: f64,
    pub supercategory_accuracy: f64,
    /// Share of background samples left unclaimed by every class.
    pub background_accuracy: Option<f64>,
    pub per_class: Vec<ClassMetrics>,
    pub seen_accuracy: Option<f64>,
    pub unseen_accuracy: Option<f64>,
    pub harmonic_mean: Option<f64>,
    pub bucket_accuracy: Option<BucketAccuracy>,
}

/// `2ab / (a + b)`, zero when either side is zero.
pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a <= 0.0 || b <= 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Predicted label: the best class when its confidence exceeds 0.5, background otherwise.
pub fn predict(bank: &PrototypeBank, encoder: Option<&EncoderParams>, features: &[f64]) -> Result<Option<usize>> {
    let embedded;
    let feature = match encoder {
        Some(enc) => {
            embedded = enc.embed(features);
            embedded.as_slice()
        }
        None => features,
    };
    let logits = head_logits(feature, bank)?;
    let top = classify_logits(&logits, 1);
    Ok((top.confidence > 0.5).then_some(top.class))
}

/// Scores the samples at `indices`.
///
/// Accuracy counts exact label matches, background included. Supercategory
/// accuracy also accepts any class sharing the groundtruth's parent. Seen and
/// unseen accuracy are recalls over foreground samples of each group.
pub fn evaluate(
    bank: &PrototypeBank,
    encoder: Option<&EncoderParams>,
    dataset: &SyntheticDataset,
    indices: &[usize],
    unseen_mask: Option<&[bool]>,
) -> Result<EvalMetrics> {
    let c = dataset.num_classes();
    let tree = &dataset.tree;
    let mut correct = 0;
    let mut super_correct = 0;
    let mut tp = vec![0usize; c];
    let mut predicted = vec![0usize; c];
    let mut support = vec![0usize; c];
    let (mut bg_total, mut bg_correct) = (0, 0);

    for &i in indices {
        let truth = dataset.labels[i];
        let pred = predict(bank, encoder, &dataset.features[i])?;
        if let Some(p) = pred {
            predicted[p] += 1;
        }
        match truth {
            Some(t) => {
                support[t] += 1;
                if pred == Some(t) {
                    tp[t] += 1;
                }
                if pred.is_some_and(|p| tree.parent_of(p) == tree.parent_of(t)) {
                    super_correct += 1;
                }
            }
            None => {
                bg_total += 1;
                if pred.is_none() {
                    bg_correct += 1;
                    super_correct += 1;
                }
            }
        }
        if pred == truth {
            correct += 1;
        }
    }

    let per_class: Vec<ClassMetrics> = (0..c)
        .map(|k| ClassMetrics {
            precision: ratio(tp[k], predicted[k]),
            recall: ratio(tp[k], support[k]),
            support: support[k],
        })
        .collect();

    let group_recall = |include: &dyn Fn(usize) -> bool| {
        let hits: usize = (0..c).filter(|&k| include(k)).map(|k| tp[k]).sum();
        let total: usize = (0..c).filter(|&k| include(k)).map(|k| support[k]).sum();
        ratio(hits, total)
    };

    let (seen_accuracy, unseen_accuracy, hm) = match unseen_mask {
        Some(mask) if mask.iter().any(|&m| m) => {
            let seen = group_recall(&|k| !mask[k]);
            let unseen = group_recall(&|k| mask[k]);
            (Some(seen), Some(unseen), Some(harmonic_mean(seen, unseen)))
        }
        _ => (None, None, None),
    };

    let bucket_accuracy = dataset.imbalance.as_ref().map(|info| {
        let acc = |b: FrequencyBucket| group_recall(&|k| info.buckets[k] == b);
        BucketAccuracy {
            frequent: acc(FrequencyBucket::Frequent),
            common: acc(FrequencyBucket::Common),
            rare: acc(FrequencyBucket::Rare),
        }
    });

    Ok(EvalMetrics {
        num_samples: indices.len(),
        accuracy: ratio(correct, indices.len()),
        supercategory_accuracy: ratio(super_correct, indices.len()),
        background_accuracy: (bg_total > 0).then(|| ratio(bg_correct, bg_total)),
        per_class,
        seen_accuracy,
        unseen_accuracy,
        harmonic_mean: hm,
        bucket_accuracy,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    #[serde(default)]
    pub val: Option<EvalMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub head: HeadMode,
    pub seed: u64,
    /// Mean train loss of the initial parameters.
    pub initial_train_loss: f64,
    pub epochs: Vec<EpochRecord>,
    pub final_eval: EvalMetrics,
    /// Mean intra- over mean inter-supercategory prototype distance.
    pub hierarchy_ratio: Option<f64>,
    pub wall_clock_secs: f64,
}

impl MetricsReport {
    pub fn final_train_loss(&self) -> f64 {
        self.epochs.last().map_or(self.initial_train_loss, |e| e.train_loss)
    }

    /// Copy with the timing field zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_clock_secs: 0.0,
            ..self.clone()
        }
    }

    /// Flat `epoch,metric,value` rows. Epoch 0 carries the initial loss and
    /// the final evaluation is tagged with the last epoch.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,metric,value\n");
        out.push_str(&format!("0,train_loss,{}\n", self.initial_train_loss));
        for rec in &self.epochs {
            out.push_str(&format!("{},train_loss,{}\n", rec.epoch, rec.train_loss));
            if let Some(val) = &rec.val {
                push_eval(&mut out, rec.epoch, "val_", val);
            }
        }
        let last = self.epochs.last().map_or(0, |e| e.epoch);
        push_eval(&mut out, last, "final_", &self.final_eval);
        if let Some(r) = self.hierarchy_ratio {
            out.push_str(&format!("{last},hierarchy_ratio,{r}\n"));
        }
        out
    }
}

fn push_eval(out: &mut String, epoch: usize, prefix: &str, m: &EvalMetrics) {
    let mut row = |name: &str, v: f64| out.push_str(&format!("{epoch},{prefix}{name},{v}\n"));
    row("accuracy", m.accuracy);
    row("supercategory_accuracy", m.supercategory_accuracy);
    if let Some(v) = m.background_accuracy {
        row("background_accuracy", v);
    }
    if let (Some(s), Some(u), Some(h)) = (m.seen_accuracy, m.unseen_accuracy, m.harmonic_mean) {
        row("seen_accuracy", s);
        row("unseen_accuracy", u);
        row("harmonic_mean", h);
    }
    if let Some(b) = &m.bucket_accuracy {
        row("frequent_accuracy", b.frequent);
        row("common_accuracy", b.common);
        row("rare_accuracy", b.rare);
    }
}

/// Mean intra-supercategory over mean inter-supercategory prototype distance.
///
/// Hyperbolic banks use geodesic distance; Euclidean banks use `1 - cos`.
pub fn hierarchy_ratio(bank: &PrototypeBank, dataset: &SyntheticDataset) -> Result<f64> {
    use crate::hubness::{pairwise_distances, DistanceKind};
    let kind = match bank.mode() {
        HeadMode::Hyperbolic => DistanceKind::Hyperbolic,
        _ => DistanceKind::Cosine,
    };
    let d = pairwise_distances(bank.rows(), kind)?;
    let (mut intra, mut n_intra, mut inter, mut n_inter) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..d.len() {
        for j in (i + 1)..d.len() {
            if dataset.tree.parent_of(i) == dataset.tree.parent_of(j) {
                intra += d[i][j];
                n_intra += 1;
            } else {
                inter += d[i][j];
                n_inter += 1;
            }
        }
    }
    Ok((intra / n_intra.max(1) as f64) / (inter / n_inter.max(1) as f64))
}
