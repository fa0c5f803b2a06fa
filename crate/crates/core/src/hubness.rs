//! Hubness diagnostics over class prototypes.
//!
//! A hub is a point that shows up among the k nearest neighbours of many other
//! points. The k-occurrence count `N_k(i)` records how often point `i` is
//! chosen; a positively skewed distribution of those counts indicates hubs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head::{HeadMode, PrototypeBank};
use crate::lorentz::{distance_unchecked, log_map_origin, HyperboloidPoint};

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_BINS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceKind {
    Hyperbolic,
    /// `1 - cosine similarity`.
    Cosine,
}

impl std::fmt::Display for DistanceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DistanceKind::Hyperbolic => "hyperbolic",
            DistanceKind::Cosine => "cosine",
        })
    }
}

/// Symmetric matrix with zero diagonal.
pub fn pairwise_distances(points: &[Vec<f64>], kind: DistanceKind) -> Result<Vec<Vec<f64>>> {
    let n = points.len();
    if n < 2 {
        return Err(Error::Parameter(format!("need at least 2 points, got {n}")));
    }
    let width = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != width) {
        return Err(Error::Dimension {
            expected: width,
            got: p.len(),
        });
    }
    match kind {
        DistanceKind::Hyperbolic => {
            for p in points {
                HyperboloidPoint::new(p.clone())
                    .map_err(|e| Error::Contract(format!("hyperbolic distances need manifold points: {e}")))?;
            }
        }
        DistanceKind::Cosine => {
            if points.iter().any(|p| p.iter().all(|x| *x == 0.0)) {
                return Err(Error::Contract("cosine distance is undefined for zero vectors".into()));
            }
        }
    }
    let norms: Vec<f64> = points.iter().map(|p| p.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = match kind {
                DistanceKind::Hyperbolic => distance_unchecked(&points[i], &points[j]),
                DistanceKind::Cosine => {
                    let dot: f64 = points[i].iter().zip(&points[j]).map(|(a, b)| a * b).sum();
                    1.0 - dot / (norms[i] * norms[j])
                }
            };
            out[i][j] = d;
            out[j][i] = d;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KOccurrence {
    pub k: usize,
    pub counts: Vec<usize>,
    pub skewness: f64,
}

/// `(i - j) mod n`: equal distances prefer the nearest preceding index, wrapping.
fn tie_rank(i: usize, j: usize, n: usize) -> usize {
    (i + n - j) % n
}

/// The `k` nearest other points of `i`.
pub fn nearest_neighbors(dist: &[Vec<f64>], i: usize, k: usize) -> Vec<usize> {
    let n = dist.len();
    let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
    others.sort_by(|&a, &b| {
        dist[i][a]
            .total_cmp(&dist[i][b])
            .then(tie_rank(i, a, n).cmp(&tie_rank(i, b, n)))
    });
    others.truncate(k);
    others
}

/// In-degree of every point in the k-NN graph and the skewness of those counts.
///
/// Equal distances are broken by the nearest preceding index (cyclically), so a
/// perfectly symmetric configuration yields perfectly equal counts.
pub fn k_occurrence(dist: &[Vec<f64>], k: usize) -> Result<KOccurrence> {
    let n = dist.len();
    if let Some(row) = dist.iter().find(|r| r.len() != n) {
        return Err(Error::Dimension {
            expected: n,
            got: row.len(),
        });
    }
    if k == 0 || k >= n {
        return Err(Error::Parameter(format!("k must satisfy 1 <= k < N (k = {k}, N = {n})")));
    }
    let mut counts = vec![0usize; n];
    for i in 0..n {
        for j in nearest_neighbors(dist, i, k) {
            counts[j] += 1;
        }
    }
    let skewness = skewness(&counts);
    Ok(KOccurrence { k, counts, skewness })
}

/// Fisher-Pearson coefficient `m3 / m2^{3/2}`; zero when the variance is zero.
pub fn skewness(counts: &[usize]) -> f64 {
    let n = counts.len() as f64;
    if counts.is_empty() {
        return 0.0;
    }
    let mean = counts.iter().sum::<usize>() as f64 / n;
    let (mut m2, mut m3) = (0.0, 0.0);
    for &c in counts {
        let d = c as f64 - mean;
        m2 += d * d;
        m3 += d * d * d;
    }
    m2 /= n;
    m3 /= n;
    if m2 <= f64::EPSILON * mean.max(1.0).powi(2) {
        0.0
    } else {
        m3 / m2.powf(1.5)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceHistogram {
    pub kind: DistanceKind,
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl DistanceHistogram {
    /// Equal-width bins over `[0, max distance]` of the upper triangle.
    pub fn from_matrix(dist: &[Vec<f64>], kind: DistanceKind, bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::Parameter("histogram needs at least one bin".into()));
        }
        let n = dist.len();
        let values: Vec<f64> = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).map(|(i, j)| dist[i][j]).collect();
        let max = values.iter().cloned().fold(0.0, f64::max);
        let upper = if max > 0.0 { max } else { 1.0 };
        let width = upper / bins as f64;
        let edges: Vec<f64> = (0..=bins).map(|b| b as f64 * width).collect();
        let mut counts = vec![0usize; bins];
        for v in values {
            let b = ((v.max(0.0) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        Ok(Self { kind, edges, counts })
    }

    /// `bin_center,count` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_center,count\n");
        for (b, count) in self.counts.iter().enumerate() {
            let center = 0.5 * (self.edges[b] + self.edges[b + 1]);
            out.push_str(&format!("{center},{count}\n"));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HubnessReport {
    pub kind: DistanceKind,
    pub k: usize,
    pub histogram: DistanceHistogram,
    pub k_occurrence: Vec<usize>,
    pub skewness: f64,
    /// How cosine distances were derived, recorded for reproducibility.
    pub cosine_convention: String,
}

pub fn report_for_points(points: &[Vec<f64>], kind: DistanceKind, k: usize, bins: usize) -> Result<HubnessReport> {
    let dist = pairwise_distances(points, kind)?;
    let occ = k_occurrence(&dist, k)?;
    Ok(HubnessReport {
        kind,
        k,
        histogram: DistanceHistogram::from_matrix(&dist, kind, bins)?,
        k_occurrence: occ.counts,
        skewness: occ.skewness,
        cosine_convention: "1 - cosine similarity".into(),
    })
}

/// Reports for every distance kind that applies to the bank.
///
/// Hyperbolic banks get a hyperbolic report plus a cosine report over the
/// prototypes' tangent coordinates at the origin; Euclidean banks get a
/// cosine report over their rows.
pub fn hubness_report(bank: &PrototypeBank, k: usize, bins: usize) -> Result<Vec<HubnessReport>> {
    match bank.mode() {
        HeadMode::Hyperbolic => {
            let tangent: Vec<Vec<f64>> = bank
                .rows()
                .iter()
                .map(|r| log_map_origin(&HyperboloidPoint::new(r.clone()).expect("validated")))
                .collect();
            Ok(vec![
                report_for_points(bank.rows(), DistanceKind::Hyperbolic, k, bins)?,
                report_for_points(&tangent, DistanceKind::Cosine, k, bins)?,
            ])
        }
        _ => Ok(vec![report_for_points(bank.rows(), DistanceKind::Cosine, k, bins)?]),
    }
}
