use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DEFAULT_DELTA, DEFAULT_TEMPERATURE};
use crate::error::{ensure_finite, Error, Result};
use crate::lorentz::{distance_unchecked, exp_map_origin, HyperboloidPoint};

/// Prototype pairs closer than this are treated as the same point when
/// computing `d_min`.
const COINCIDENT: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadMode {
    Hyperbolic,
    EuclideanLinear,
    EuclideanCosine,
}

impl fmt::Display for HeadMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeadMode::Hyperbolic => "hyperbolic",
            HeadMode::EuclideanLinear => "euclidean-linear",
            HeadMode::EuclideanCosine => "euclidean-cosine",
        })
    }
}

impl FromStr for HeadMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hyperbolic" => Ok(HeadMode::Hyperbolic),
            "euclidean-linear" => Ok(HeadMode::EuclideanLinear),
            "euclidean-cosine" => Ok(HeadMode::EuclideanCosine),
            other => Err(Error::Parameter(format!("unknown head mode '{other}'"))),
        }
    }
}

/// One prototype per class plus the score conversion parameters.
///
/// Hyperbolic rows hold full `(n+1)`-coordinates on the hyperboloid. For the
/// linear baseline the rows are the columns of `W`; for the cosine baseline
/// they are the class directions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BankFile", into = "BankFile")]
pub struct PrototypeBank {
    mode: HeadMode,
    class_names: Vec<String>,
    rows: Vec<Vec<f64>>,
    frozen: bool,
    delta: f64,
    d_min: f64,
    temperature: f64,
}

/// On-disk layout of a prototype bank.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankFile {
    pub mode: HeadMode,
    pub class_names: Vec<String>,
    pub delta: f64,
    pub d_min: f64,
    pub frozen: bool,
    pub prototypes: Vec<Vec<f64>>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
}

fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}

/// Smallest geodesic distance between distinct prototypes.
///
/// Coincident pairs are skipped; `None` when every pair coincides.
pub fn min_pairwise_distance(points: &[Vec<f64>]) -> Option<f64> {
    let mut best: Option<f64> = None;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            let d = distance_unchecked(&points[i], &points[j]);
            if d > COINCIDENT && best.is_none_or(|b| d < b) {
                best = Some(d);
            }
        }
    }
    best
}

impl PrototypeBank {
    /// Hyperbolic bank; `d_min` is the minimum inter-class distance when
    /// frozen and `1` otherwise.
    pub fn hyperbolic(
        class_names: Vec<String>,
        prototypes: Vec<HyperboloidPoint>,
        frozen: bool,
        delta: f64,
    ) -> Result<Self> {
        let rows = prototypes.into_iter().map(HyperboloidPoint::into_coords).collect();
        Self::build(HeadMode::Hyperbolic, class_names, rows, frozen, delta, DEFAULT_TEMPERATURE)
    }

    pub fn euclidean(
        mode: HeadMode,
        class_names: Vec<String>,
        rows: Vec<Vec<f64>>,
        temperature: f64,
    ) -> Result<Self> {
        if mode == HeadMode::Hyperbolic {
            return Err(Error::Contract("use PrototypeBank::hyperbolic for hyperbolic banks".into()));
        }
        Self::build(mode, class_names, rows, false, DEFAULT_DELTA, temperature)
    }

    /// Learnable bank with small random initial prototypes.
    ///
    /// Hyperbolic prototypes start at `exp_0(u)` with `u ~ U[-0.01, 0.01]^n`.
    pub fn init_learnable<R: Rng + ?Sized>(
        mode: HeadMode,
        class_names: Vec<String>,
        dim: usize,
        delta: f64,
        temperature: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Parameter("prototype dimension must be positive".into()));
        }
        let c = class_names.len();
        let rows: Vec<Vec<f64>> = match mode {
            HeadMode::Hyperbolic => (0..c)
                .map(|_| {
                    let u: Vec<f64> = (0..dim).map(|_| rng.random_range(-0.01..=0.01)).collect();
                    exp_map_origin(&u).map(HyperboloidPoint::into_coords)
                })
                .collect::<Result<_>>()?,
            HeadMode::EuclideanLinear => (0..c)
                .map(|_| (0..dim).map(|_| rng.random_range(-0.01..=0.01)).collect())
                .collect(),
            HeadMode::EuclideanCosine => {
                let bound = (3.0 / dim as f64).sqrt();
                (0..c)
                    .map(|_| (0..dim).map(|_| rng.random_range(-bound..=bound)).collect())
                    .collect()
            }
        };
        Self::build(mode, class_names, rows, false, delta, temperature)
    }

    fn build(
        mode: HeadMode,
        class_names: Vec<String>,
        rows: Vec<Vec<f64>>,
        frozen: bool,
        delta: f64,
        temperature: f64,
    ) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::Parameter(format!("a bank needs at least 2 classes, got {}", rows.len())));
        }
        if class_names.len() != rows.len() {
            return Err(Error::Dimension {
                expected: rows.len(),
                got: class_names.len(),
            });
        }
        let mut seen = HashSet::new();
        for name in &class_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::Parameter(format!("duplicate class name '{name}'")));
            }
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::Parameter(format!("delta must be positive, got {delta}")));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::Parameter(format!("temperature must be positive, got {temperature}")));
        }
        let width = rows[0].len();
        for row in &rows {
            if row.len() != width {
                return Err(Error::Dimension {
                    expected: width,
                    got: row.len(),
                });
            }
            ensure_finite(row, "prototype")?;
        }
        if mode == HeadMode::Hyperbolic {
            for row in &rows {
                HyperboloidPoint::new(row.clone())?;
            }
        } else if frozen {
            return Err(Error::Contract("frozen banks must be hyperbolic".into()));
        }
        let d_min = if frozen {
            min_pairwise_distance(&rows)
                .ok_or_else(|| Error::Parameter("all frozen prototypes coincide".into()))?
        } else {
            1.0
        };
        Ok(Self {
            mode,
            class_names,
            rows,
            frozen,
            delta,
            d_min,
            temperature,
        })
    }

    pub fn mode(&self) -> HeadMode {
        self.mode
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.rows.len()
    }

    /// Length of the Euclidean feature the head consumes.
    pub fn feature_dim(&self) -> usize {
        match self.mode {
            HeadMode::Hyperbolic => self.rows[0].len() - 1,
            _ => self.rows[0].len(),
        }
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn prototype(&self, class: usize) -> Option<HyperboloidPoint> {
        match self.mode {
            HeadMode::Hyperbolic => self.rows.get(class).map(|r| HyperboloidPoint::new(r.clone()).expect("validated row")),
            _ => None,
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn d_min(&self) -> f64 {
        self.d_min
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub(crate) fn set_hyperbolic_row(&mut self, class: usize, point: HyperboloidPoint) {
        debug_assert_eq!(self.mode, HeadMode::Hyperbolic);
        self.rows[class] = point.into_coords();
    }

    pub(crate) fn rows_mut(&mut self) -> &mut [Vec<f64>] {
        debug_assert_ne!(self.mode, HeadMode::Hyperbolic);
        &mut self.rows
    }

    pub(crate) fn check_feature(&self, feature: &[f64]) -> Result<()> {
        if feature.len() != self.feature_dim() {
            return Err(Error::Dimension {
                expected: self.feature_dim(),
                got: feature.len(),
            });
        }
        ensure_finite(feature, "feature")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

impl TryFrom<BankFile> for PrototypeBank {
    type Error = Error;

    fn try_from(file: BankFile) -> Result<Self> {
        if !file.frozen && file.d_min != 1.0 {
            return Err(Error::Contract(format!(
                "learnable banks use d_min = 1, file has {}",
                file.d_min
            )));
        }
        Self::build(
            file.mode,
            file.class_names,
            file.prototypes,
            file.frozen,
            file.delta,
            file.temperature,
        )
    }
}

impl From<PrototypeBank> for BankFile {
    fn from(bank: PrototypeBank) -> Self {
        Self {
            mode: bank.mode,
            class_names: bank.class_names,
            delta: bank.delta,
            d_min: bank.d_min,
            frozen: bank.frozen,
            prototypes: bank.rows,
            temperature: bank.temperature,
        }
    }
}
