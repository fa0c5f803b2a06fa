//! Synthetic hierarchical datasets standing in for detector proposal features.
//!
//! Supercategory means are isotropic Gaussian draws, leaf means scatter around
//! their parent, and samples scatter around their leaf. Background samples are
//! drawn from one broad Gaussian. Everything is a pure function of the
//! parameters and the seed.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Minimum train samples per class for a freshly generated dataset.
pub const MIN_TRAIN_PER_CLASS: usize = 10;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeafClass {
    pub name: String,
    pub parent: usize,
}

/// Two-level class hierarchy: supercategories over leaf classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassTree {
    pub supercategories: Vec<String>,
    pub leaf_classes: Vec<LeafClass>,
}

impl ClassTree {
    /// `num_classes` leaves split into contiguous, near-equal groups under
    /// `num_super` parents.
    pub fn balanced(num_super: usize, num_classes: usize) -> Result<Self> {
        let tree = Self {
            supercategories: (0..num_super).map(|s| format!("super_{s}")).collect(),
            leaf_classes: (0..num_classes)
                .map(|c| LeafClass {
                    name: format!("leaf_{c}"),
                    parent: if num_classes == 0 { 0 } else { c * num_super / num_classes },
                })
                .collect(),
        };
        tree.validate()?;
        Ok(tree)
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.supercategories.len();
        let c = self.leaf_classes.len();
        if s < 2 {
            return Err(Error::Parameter(format!("need at least 2 supercategories, got {s}")));
        }
        if c < s {
            return Err(Error::Parameter(format!(
                "need at least as many classes as supercategories ({c} < {s})"
            )));
        }
        if let Some(leaf) = self.leaf_classes.iter().find(|l| l.parent >= s) {
            return Err(Error::Parameter(format!(
                "class '{}' has unknown parent {}",
                leaf.name, leaf.parent
            )));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.leaf_classes.len()
    }

    pub fn parent_of(&self, class: usize) -> usize {
        self.leaf_classes[class].parent
    }

    pub fn class_names(&self) -> Vec<String> {
        self.leaf_classes.iter().map(|l| l.name.clone()).collect()
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.leaf_classes.iter().position(|l| l.name == name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationParams {
    pub dim: usize,
    pub num_super: usize,
    pub num_classes: usize,
    pub num_samples: usize,
    pub sigma_super: f64,
    pub sigma_leaf: f64,
    pub sigma_x: f64,
    pub background_fraction: f64,
    /// Defaults to the overall spread of the class means plus sample noise.
    #[serde(default)]
    pub background_sigma: Option<f64>,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    pub seed: u64,
}

fn default_val_fraction() -> f64 {
    0.2
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            dim: 16,
            num_super: 4,
            num_classes: 16,
            num_samples: 8000,
            sigma_super: 4.0,
            sigma_leaf: 1.0,
            sigma_x: 0.5,
            background_fraction: 0.2,
            background_sigma: None,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

impl GenerationParams {
    pub fn background_sigma(&self) -> f64 {
        self.background_sigma.unwrap_or_else(|| {
            (self.sigma_super.powi(2) + self.sigma_leaf.powi(2) + self.sigma_x.powi(2)).sqrt()
        })
    }

    pub fn num_background(&self) -> usize {
        (self.background_fraction * self.num_samples as f64).round() as usize
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Parameter("feature dimension must be positive".into()));
        }
        for (name, v) in [
            ("sigma_super", self.sigma_super),
            ("sigma_leaf", self.sigma_leaf),
            ("sigma_x", self.sigma_x),
            ("background_sigma", self.background_sigma()),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!("{name} must be a finite non-negative value, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.background_fraction) {
            return Err(Error::Parameter(format!(
                "background fraction must lie in [0, 1), got {}",
                self.background_fraction
            )));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Parameter(format!(
                "validation fraction must lie in (0, 1), got {}",
                self.val_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrequencyBucket {
    Frequent,
    Common,
    Rare,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceInfo {
    pub exponent: f64,
    /// Train samples per class after subsampling.
    pub train_counts: Vec<usize>,
    pub buckets: Vec<FrequencyBucket>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticDataset {
    pub params: GenerationParams,
    pub tree: ClassTree,
    pub super_means: Vec<Vec<f64>>,
    pub leaf_means: Vec<Vec<f64>>,
    pub features: Vec<Vec<f64>>,
    /// `None` marks a background sample.
    pub labels: Vec<Option<usize>>,
    pub splits: Splits,
    #[serde(default)]
    pub unseen_classes: Vec<usize>,
    #[serde(default)]
    pub imbalance: Option<ImbalanceInfo>,
}

fn gaussian_vec(rng: &mut ChaCha8Rng, center: &[f64], sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return center.to_vec();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    center.iter().map(|c| c + normal.sample(rng)).collect()
}

/// Generates a dataset with a balanced two-level tree.
pub fn generate(params: &GenerationParams) -> Result<SyntheticDataset> {
    let tree = ClassTree::balanced(params.num_super, params.num_classes)?;
    generate_with_tree(params, tree)
}

pub fn generate_with_tree(params: &GenerationParams, tree: ClassTree) -> Result<SyntheticDataset> {
    params.validate()?;
    tree.validate()?;
    if tree.supercategories.len() != params.num_super || tree.num_classes() != params.num_classes {
        return Err(Error::Parameter("tree does not match the class counts in params".into()));
    }
    let c = params.num_classes;
    let n_bg = params.num_background();
    let n_fg = params.num_samples - n_bg;
    if n_fg < c {
        return Err(Error::Parameter(format!("{n_fg} foreground samples cannot cover {c} classes")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let origin = vec![0.0; params.dim];
    let super_means: Vec<Vec<f64>> = (0..params.num_super)
        .map(|_| gaussian_vec(&mut rng, &origin, params.sigma_super))
        .collect();
    let leaf_means: Vec<Vec<f64>> = tree
        .leaf_classes
        .iter()
        .map(|leaf| gaussian_vec(&mut rng, &super_means[leaf.parent], params.sigma_leaf))
        .collect();

    let mut features = Vec::with_capacity(params.num_samples);
    let mut labels = Vec::with_capacity(params.num_samples);
    for (class, mean) in leaf_means.iter().enumerate() {
        let count = n_fg / c + usize::from(class < n_fg % c);
        for _ in 0..count {
            features.push(gaussian_vec(&mut rng, mean, params.sigma_x));
            labels.push(Some(class));
        }
    }
    let bg_sigma = params.background_sigma();
    for _ in 0..n_bg {
        features.push(gaussian_vec(&mut rng, &origin, bg_sigma));
        labels.push(None);
    }

    let splits = stratified_split(&labels, c, params.val_fraction, &mut rng);
    let dataset = SyntheticDataset {
        params: params.clone(),
        tree,
        super_means,
        leaf_means,
        features,
        labels,
        splits,
        unseen_classes: Vec::new(),
        imbalance: None,
    };
    dataset.validate()?;
    Ok(dataset)
}

fn stratified_split(labels: &[Option<usize>], c: usize, val_fraction: f64, rng: &mut ChaCha8Rng) -> Splits {
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); c + 1];
    for (i, label) in labels.iter().enumerate() {
        groups[label.unwrap_or(c)].push(i);
    }
    let mut splits = Splits::default();
    for mut group in groups {
        group.shuffle(rng);
        let n_val = (val_fraction * group.len() as f64).round() as usize;
        splits.val.extend_from_slice(&group[..n_val]);
        splits.train.extend_from_slice(&group[n_val..]);
    }
    splits.train.sort_unstable();
    splits.val.sort_unstable();
    splits
}

impl SyntheticDataset {
    pub fn num_classes(&self) -> usize {
        self.tree.num_classes()
    }

    pub fn dim(&self) -> usize {
        self.params.dim
    }

    /// Per-class sample counts over the given indices (background excluded).
    pub fn class_counts(&self, indices: &[usize]) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &i in indices {
            if let Some(c) = self.labels[i] {
                counts[c] += 1;
            }
        }
        counts
    }

    pub fn background_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_none()).count()
    }

    pub fn unseen_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.num_classes()];
        for &u in &self.unseen_classes {
            mask[u] = true;
        }
        mask
    }

    pub fn validate(&self) -> Result<()> {
        self.tree.validate()?;
        let n = self.features.len();
        let c = self.num_classes();
        if self.labels.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: self.labels.len(),
            });
        }
        for row in &self.features {
            if row.len() != self.params.dim {
                return Err(Error::Dimension {
                    expected: self.params.dim,
                    got: row.len(),
                });
            }
            ensure_finite(row, "dataset features")?;
        }
        if let Some(bad) = self.labels.iter().flatten().find(|&&l| l >= c) {
            return Err(Error::Parameter(format!("label {bad} out of range for {c} classes")));
        }
        if let Some(&u) = self.unseen_classes.iter().find(|&&u| u >= c) {
            return Err(Error::Parameter(format!("unseen class {u} out of range")));
        }
        // Train is a subset after holdout or subsampling, val always keeps its rows.
        let mut seen = vec![0u8; n];
        for &i in self.splits.train.iter().chain(&self.splits.val) {
            if i >= n {
                return Err(Error::Parameter(format!("split index {i} out of range")));
            }
            seen[i] += 1;
        }
        if seen.iter().any(|&k| k > 1) {
            return Err(Error::Parameter("train and val splits overlap".into()));
        }
        let subsampled = self.imbalance.is_some() || !self.unseen_classes.is_empty();
        if !subsampled && seen.iter().any(|&k| k == 0) {
            return Err(Error::Parameter("splits do not cover the dataset".into()));
        }
        let counts = self.class_counts(&self.splits.train);
        let unseen = self.unseen_mask();
        let floor = if self.imbalance.is_some() { 1 } else { MIN_TRAIN_PER_CLASS };
        for (class, &count) in counts.iter().enumerate() {
            if !unseen[class] && count < floor {
                return Err(Error::Parameter(format!(
                    "class {class} has {count} train samples, need at least {floor}"
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let dataset: Self = serde_json::from_str(&text)?;
        dataset.validate()?;
        Ok(dataset)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// Subsamples the train split so class `c` keeps about `base * (c + 1)^-exponent`
/// samples, where `base` is the smallest original per-class train count.
///
/// Buckets are frequency terciles over the resulting counts.
pub fn imbalance_profile(dataset: &SyntheticDataset, exponent: f64) -> Result<SyntheticDataset> {
    if !(exponent > 0.0 && exponent.is_finite()) {
        return Err(Error::Parameter(format!("power-law exponent must be positive, got {exponent}")));
    }
    let c = dataset.num_classes();
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    let mut background = Vec::new();
    for &i in &dataset.splits.train {
        match dataset.labels[i] {
            Some(class) => per_class[class].push(i),
            None => background.push(i),
        }
    }
    let unseen = dataset.unseen_mask();
    let base = per_class
        .iter()
        .enumerate()
        .filter(|(k, _)| !unseen[*k])
        .map(|(_, v)| v.len())
        .min()
        .unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(dataset.params.seed ^ SUBSAMPLE_STREAM);
    let mut train = background;
    let mut train_counts = vec![0; c];
    for (class, mut indices) in per_class.into_iter().enumerate() {
        if unseen[class] {
            continue;
        }
        let target = (base as f64 * ((class + 1) as f64).powf(-exponent)).round() as usize;
        if target < 1 {
            return Err(Error::Parameter(format!(
                "power law with exponent {exponent} leaves class {class} without samples"
            )));
        }
        indices.shuffle(&mut rng);
        indices.truncate(target);
        train_counts[class] = indices.len();
        train.extend(indices);
    }
    train.sort_unstable();

    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| train_counts[b].cmp(&train_counts[a]).then(a.cmp(&b)));
    let mut buckets = vec![FrequencyBucket::Rare; c];
    for (rank, &class) in order.iter().enumerate() {
        buckets[class] = match rank * 3 / c {
            0 => FrequencyBucket::Frequent,
            1 => FrequencyBucket::Common,
            _ => FrequencyBucket::Rare,
        };
    }

    let mut out = dataset.clone();
    out.splits.train = train;
    out.imbalance = Some(ImbalanceInfo {
        exponent,
        train_counts,
        buckets,
    });
    out.validate()?;
    Ok(out)
}

// Keeps the subsampling stream distinct from the generation stream.
const SUBSAMPLE_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Clone, Debug, PartialEq)]
pub struct Holdout {
    /// Train split without unseen classes; val split untouched.
    pub dataset: SyntheticDataset,
    pub unseen_mask: Vec<bool>,
}

/// Removes the given classes from the train split for zero-shot evaluation.
pub fn holdout_unseen(dataset: &SyntheticDataset, unseen: &[usize]) -> Result<Holdout> {
    let c = dataset.num_classes();
    let mut mask = dataset.unseen_mask();
    for &u in unseen {
        if u >= c {
            return Err(Error::Parameter(format!("unseen class {u} out of range for {c} classes")));
        }
        mask[u] = true;
    }
    if mask.iter().all(|&m| m) {
        return Err(Error::Parameter("cannot hold out every class".into()));
    }
    let mut out = dataset.clone();
    out.splits.train.retain(|&i| dataset.labels[i].is_none_or(|l| !mask[l]));
    out.unseen_classes = (0..c).filter(|&k| mask[k]).collect();
    if let Some(info) = out.imbalance.as_mut() {
        for (k, count) in info.train_counts.iter_mut().enumerate() {
            if mask[k] {
                *count = 0;
            }
        }
    }
    out.validate()?;
    Ok(Holdout {
        dataset: out,
        unseen_mask: mask,
    })
}

/// Semantic class vectors derived from the leaf means, rescaled so their mean
/// norm equals `target_norm`. Stands in for word-embedding prototypes.
pub fn semantic_vectors(dataset: &SyntheticDataset, target_norm: f64) -> Vec<(String, Vec<f64>)> {
    let mean_norm = dataset
        .leaf_means
        .iter()
        .map(|m| m.iter().map(|x| x * x).sum::<f64>().sqrt())
        .sum::<f64>()
        / dataset.leaf_means.len() as f64;
    let scale = if mean_norm > 0.0 { target_norm / mean_norm } else { 0.0 };
    dataset
        .tree
        .leaf_classes
        .iter()
        .zip(&dataset.leaf_means)
        .map(|(leaf, mean)| (leaf.name.clone(), mean.iter().map(|x| x * scale).collect()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GenerationParams {
        GenerationParams {
            dim: 4,
            num_super: 2,
            num_classes: 4,
            num_samples: 400,
            seed: 9,
            ..Default::default()
        }
    }

    #[test]
    fn default_counts() {
        let ds = generate(&GenerationParams::default()).unwrap();
        assert_eq!(ds.features.len(), 8000);
        assert_eq!(ds.background_count(), 1600);
        assert_eq!(ds.num_classes(), 16);
        assert_eq!(ds.splits.train.len() + ds.splits.val.len(), 8000);
    }

    #[test]
    fn noiseless_samples_sit_on_leaf_means() {
        let ds = generate(&GenerationParams {
            sigma_x: 0.0,
            ..small()
        })
        .unwrap();
        for (row, label) in ds.features.iter().zip(&ds.labels) {
            if let Some(c) = label {
                assert_eq!(row, &ds.leaf_means[*c]);
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small()).unwrap().to_json().unwrap();
        let b = generate(&small()).unwrap().to_json().unwrap();
        assert_eq!(a, b);
        let c = generate(&GenerationParams { seed: 10, ..small() }).unwrap().to_json().unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn infeasible_specs_are_rejected() {
        assert!(generate(&GenerationParams {
            num_super: 4,
            num_classes: 3,
            ..small()
        })
        .is_err());
        assert!(generate(&GenerationParams {
            num_super: 1,
            ..small()
        })
        .is_err());
        assert!(generate(&GenerationParams {
            num_samples: 40,
            ..small()
        })
        .is_err());
    }

    #[test]
    fn json_round_trip_validates() {
        let ds = generate(&small()).unwrap();
        let back: SyntheticDataset = serde_json::from_str(&ds.to_json().unwrap()).unwrap();
        assert_eq!(back, ds);
        let mut broken = ds.clone();
        broken.splits.val.push(broken.splits.train[0]);
        assert!(broken.validate().is_err());
    }

    #[test]
    fn imbalance_is_power_law() {
        let ds = generate(&GenerationParams::default()).unwrap();
        let skewed = imbalance_profile(&ds, 1.0).unwrap();
        let info = skewed.imbalance.as_ref().unwrap();
        let counts = &info.train_counts;
        assert!(counts.windows(2).all(|w| w[0] >= w[1]));
        assert_eq!(counts[0], *counts.iter().max().unwrap());
        assert_eq!(counts, &skewed.class_counts(&skewed.splits.train));
        let f = info.buckets.iter().filter(|b| **b == FrequencyBucket::Frequent).count();
        let c = info.buckets.iter().filter(|b| **b == FrequencyBucket::Common).count();
        let r = info.buckets.iter().filter(|b| **b == FrequencyBucket::Rare).count();
        assert_eq!(f + c + r, 16);
        assert!(f > 0 && c > 0 && r > 0);
        // val untouched
        assert_eq!(skewed.splits.val, ds.splits.val);
    }

    #[test]
    fn tiny_exponent_is_near_uniform() {
        let ds = generate(&GenerationParams::default()).unwrap();
        let skewed = imbalance_profile(&ds, 1e-6).unwrap();
        let counts = &skewed.imbalance.unwrap().train_counts;
        let max = *counts.iter().max().unwrap();
        let min = *counts.iter().min().unwrap();
        assert!(max - min <= 1);
    }

    #[test]
    fn imbalance_rejects_empty_classes() {
        let ds = generate(&small()).unwrap();
        assert!(imbalance_profile(&ds, 20.0).is_err());
        assert!(imbalance_profile(&ds, 0.0).is_err());
    }

    #[test]
    fn holdout_examples() {
        let ds = generate(&small()).unwrap();
        let same = holdout_unseen(&ds, &[]).unwrap();
        assert_eq!(same.dataset, ds);

        let held = holdout_unseen(&ds, &[2]).unwrap();
        assert_eq!(held.dataset.class_counts(&held.dataset.splits.train)[2], 0);
        assert_eq!(held.dataset.splits.val, ds.splits.val);
        let unseen_val = ds.splits.val.iter().filter(|&&i| ds.labels[i] == Some(2)).count();
        let seen_val = ds.splits.val.len() - unseen_val;
        assert_eq!(seen_val + unseen_val, ds.splits.val.len());
        assert!(unseen_val > 0);
        assert_eq!(held.unseen_mask, vec![false, false, true, false]);

        assert!(holdout_unseen(&ds, &[0, 1, 2, 3]).is_err());
        assert!(holdout_unseen(&ds, &[7]).is_err());
    }

    #[test]
    fn leaf_means_respect_hierarchy() {
        let ds = generate(&GenerationParams::default()).unwrap();
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let (mut intra, mut inter) = (Vec::new(), Vec::new());
        for i in 0..16 {
            for j in (i + 1)..16 {
                let d = dist(&ds.leaf_means[i], &ds.leaf_means[j]);
                if ds.tree.parent_of(i) == ds.tree.parent_of(j) {
                    intra.push(d);
                } else {
                    inter.push(d);
                }
            }
        }
        let total = intra.len() * inter.len();
        let ordered = intra
            .iter()
            .map(|a| inter.iter().filter(|b| a < b).count())
            .sum::<usize>();
        assert!(ordered as f64 >= 0.95 * total as f64, "{ordered}/{total}");
    }
}
