//! Independent reference computations shared by the integration and
//! acceptance tests. Nothing here calls into the library's own geometry
//! helpers when checking them.

#![allow(dead_code)]

use hyperhead::data::{self, GenerationParams, SyntheticDataset};
use hyperhead::head::{head_backward, FocalLossConfig, PrototypeBank, Target};
use hyperhead::lorentz::{exp_map_at, exp_map_origin, log_map_at, log_map_origin, project_to_manifold, HyperboloidPoint, TangentVector};
use hyperhead::optim::riemannian_step;
use hyperhead::train::{self, predict, DminPolicy, ExperimentConfig, TrainOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

pub fn mink(x: &[f64], y: &[f64]) -> f64 {
    -x[0] * y[0] + x[1..].iter().zip(&y[1..]).map(|(a, b)| a * b).sum::<f64>()
}

pub fn violation(x: &[f64]) -> f64 {
    (mink(x, x) + 1.0).abs()
}

pub fn oracle_distance(x: &[f64], y: &[f64]) -> f64 {
    (-mink(x, y)).max(1.0).acosh()
}

/// `exp_0(v)` written out directly.
pub fn oracle_exp0(v: &[f64]) -> Vec<f64> {
    let r = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let mut out = vec![r.cosh()];
    if r == 0.0 {
        out.extend(v.iter().map(|_| 0.0));
    } else {
        out.extend(v.iter().map(|a| r.sinh() * a / r));
    }
    out
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn random_point(rng: &mut ChaCha8Rng, n: usize, max_radius: f64) -> HyperboloidPoint {
    let dir = gaussian(rng, n, 1.0);
    let r = rng.random_range(0.0..max_radius);
    let norm = l2(&dir).max(1e-12);
    exp_map_origin(&dir.iter().map(|a| a * r / norm).collect::<Vec<_>>()).unwrap()
}

fn random_tangent(rng: &mut ChaCha8Rng, x: &HyperboloidPoint, max_norm: f64) -> TangentVector {
    let g = gaussian(rng, x.coords().len(), 1.0);
    let ip = mink(x.coords(), &g);
    let u: Vec<f64> = g.iter().zip(x.coords()).map(|(a, b)| a + ip * b).collect();
    let norm = mink(&u, &u).max(0.0).sqrt().max(1e-12);
    let r = rng.random_range(0.0..max_norm);
    TangentVector::new(x.clone(), u.iter().map(|a| a * r / norm).collect()).unwrap()
}

#[derive(Debug, Default)]
pub struct GeometryReport {
    pub max_op_violation: f64,
    pub max_optimizer_violation: f64,
    pub max_round_trip: f64,
    pub max_arc_error: f64,
    pub triangle_failures: usize,
    pub triples: usize,
    pub steps: usize,
}

/// Manifold drift after geometry ops, exp/log round trips and the triangle inequality.
pub fn geometry_suite(seed: u64, ops: usize, steps: usize, triples: usize) -> GeometryReport {
    let mut rng = rng(seed);
    let mut rep = GeometryReport {
        triples,
        steps,
        ..Default::default()
    };
    for _ in 0..ops {
        let n = rng.random_range(1..=16);
        let x = random_point(&mut rng, n, 5.0);
        let u = random_tangent(&mut rng, &x, 3.0);
        let y = exp_map_at(&x, &u).unwrap();
        let back = log_map_at(&x, &y).unwrap();
        let err = back.components().iter().zip(u.components()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        rep.max_round_trip = rep.max_round_trip.max(err);

        let v = log_map_origin(&x);
        let x2 = exp_map_origin(&v).unwrap();
        let err0 = x2.coords().iter().zip(x.coords()).map(|(a, b)| (a - b).abs() / a.abs().max(1.0)).fold(0.0, f64::max);
        rep.max_round_trip = rep.max_round_trip.max(err0);

        let mut raw = gaussian(&mut rng, n + 1, 2.0);
        raw[0] = rng.random_range(-3.0..3.0);
        let p = project_to_manifold(&raw).unwrap();
        // Scale the gradient so the geodesic step has unit length.
        let g = gaussian(&mut rng, n + 1, 1.0);
        let mut scaled = g.clone();
        scaled[0] = -scaled[0];
        let ip = mink(x.coords(), &scaled);
        let u: Vec<f64> = scaled.iter().zip(x.coords()).map(|(a, b)| a + ip * b).collect();
        let len = mink(&u, &u).max(1e-24).sqrt();
        let g: Vec<f64> = g.iter().map(|a| a / len).collect();
        let stepped = riemannian_step(&x, &g, 1.0).unwrap();
        let walked = oracle_distance(x.coords(), stepped.coords());
        rep.max_arc_error = rep.max_arc_error.max((walked - 1.0).abs());
        for pt in [&x, &y, &x2, &p, &stepped] {
            rep.max_op_violation = rep.max_op_violation.max(violation(pt.coords()));
        }
    }

    // A prototype chasing a rotating set of targets with noisy gradients.
    let n = 8;
    let targets: Vec<HyperboloidPoint> = (0..5).map(|_| random_point(&mut rng, n, 3.0)).collect();
    let mut x = HyperboloidPoint::origin(n);
    for step in 0..steps {
        let t = targets[step % targets.len()].coords();
        let d = oracle_distance(x.coords(), t);
        let noise = gaussian(&mut rng, n + 1, 0.05);
        let grad: Vec<f64> = if d > 1e-9 {
            let s = d.sinh();
            std::iter::once(t[0] / s).chain(t[1..].iter().map(|a| -a / s)).zip(&noise).map(|(a, b)| a + b).collect()
        } else {
            noise
        };
        x = riemannian_step(&x, &grad, 0.05).unwrap();
        rep.max_optimizer_violation = rep.max_optimizer_violation.max(violation(x.coords()));
    }

    for _ in 0..triples {
        let n = rng.random_range(1..=16);
        let a = random_point(&mut rng, n, 4.0);
        let b = random_point(&mut rng, n, 4.0);
        let c = random_point(&mut rng, n, 4.0);
        let d = |p: &HyperboloidPoint, q: &HyperboloidPoint| hyperhead::lorentz::hyperbolic_distance(p, q).unwrap();
        if d(&a, &c) > d(&a, &b) + d(&b, &c) + 1e-9 {
            rep.triangle_failures += 1;
        }
    }
    rep
}

#[derive(Debug)]
pub struct GradientReport {
    pub configs: usize,
    pub worst_relative_error: f64,
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    l2(&diff) / l2(a).max(l2(b)).max(1e-6)
}

/// Central finite differences of the full hyperbolic head loss, against
/// the analytic gradient, for the feature and every prototype.
pub fn gradient_suite(seed: u64, configs: usize) -> GradientReport {
    let h = 1e-5;
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..configs {
        let n = rng.random_range(1..=16);
        let c = rng.random_range(2..=16);
        let frozen = rng.random_bool(0.3);
        let delta = rng.random_range(0.5..3.0);
        let focal = FocalLossConfig {
            gamma: rng.random_range(0.0..3.0),
            alpha: rng.random_range(0.1..0.9),
            ..FocalLossConfig::default()
        };
        let names: Vec<String> = (0..c).map(|i| format!("c{i}")).collect();
        let points: Vec<HyperboloidPoint> = (0..c).map(|_| random_point(&mut rng, n, 2.5)).collect();
        let bank = PrototypeBank::hyperbolic(names.clone(), points.clone(), frozen, delta).unwrap();
        let feature = gaussian(&mut rng, n, 0.8);
        let target = if rng.random_bool(0.2) {
            Target::Background
        } else {
            Target::Class(rng.random_range(0..c))
        };
        let analytic = head_backward(&feature, &bank, target, &focal, None).unwrap();
        let loss_at = |f: &[f64], b: &PrototypeBank| head_backward(f, b, target, &focal, None).unwrap().loss;

        let mut fd = Vec::with_capacity(n);
        for i in 0..n {
            let mut plus = feature.clone();
            let mut minus = feature.clone();
            plus[i] += h;
            minus[i] -= h;
            fd.push((loss_at(&plus, &bank) - loss_at(&minus, &bank)) / (2.0 * h));
        }
        worst = worst.max(rel_err(&analytic.feature, &fd));

        // Prototype gradients need a fixed d_min, so only learnable banks are perturbed.
        if !frozen {
            let mut an = Vec::with_capacity(c);
            let mut fd = Vec::with_capacity(c);
            for k in 0..c {
                let t = points[k].coords();
                let v = random_tangent(&mut rng, &points[k], 1.0);
                let v = v.components();
                let vn = mink(v, v).max(0.0).sqrt();
                if vn < 1e-6 {
                    continue;
                }
                let moved = |eps: f64| -> Vec<f64> {
                    t.iter().zip(v).map(|(a, b)| (eps * vn).cosh() * a + (eps * vn).sinh() * b / vn).collect()
                };
                let with_row = |row: Vec<f64>| {
                    let mut pts = points.clone();
                    pts[k] = HyperboloidPoint::new(row).unwrap();
                    PrototypeBank::hyperbolic(names.clone(), pts, false, delta).unwrap()
                };
                let lp = loss_at(&feature, &with_row(moved(h)));
                let lm = loss_at(&feature, &with_row(moved(-h)));
                fd.push((lp - lm) / (2.0 * h));
                an.push(analytic.prototypes[k].iter().zip(v).map(|(a, b)| a * b).sum::<f64>());
            }
            worst = worst.max(rel_err(&an, &fd));
        }
    }
    GradientReport {
        configs,
        worst_relative_error: worst,
    }
}

/// Brute-force k-occurrence counts with the library's documented tie rule:
/// among equal distances the point with the smallest `(i - j) mod n` wins.
pub fn brute_force_k_occurrence(dist: &[Vec<f64>], k: usize) -> Vec<usize> {
    let n = dist.len();
    let mut counts = vec![0; n];
    for i in 0..n {
        let mut chosen: Vec<usize> = Vec::new();
        for _ in 0..k {
            let mut best: Option<usize> = None;
            for j in 0..n {
                if j == i || chosen.contains(&j) {
                    continue;
                }
                best = match best {
                    None => Some(j),
                    Some(b) => {
                        let key = |x: usize| (i + n - x) % n;
                        if dist[i][j] < dist[i][b] || (dist[i][j] == dist[i][b] && key(j) < key(b)) {
                            Some(j)
                        } else {
                            Some(b)
                        }
                    }
                };
            }
            chosen.push(best.unwrap());
        }
        for j in chosen {
            counts[j] += 1;
        }
    }
    counts
}

pub fn small_params(seed: u64) -> GenerationParams {
    GenerationParams {
        num_samples: 4000,
        seed,
        ..GenerationParams::default()
    }
}

#[derive(Debug)]
pub struct AliasingReport {
    pub unseen_accuracy: f64,
    pub aliased_seen_accuracy: f64,
    pub seen_accuracy: f64,
    /// Unseen accuracy of the run's own validation split.
    pub report_unseen_accuracy: f64,
    pub harmonic_mean: Option<f64>,
}

/// Gives unseen class `u` the semantic prototype of seen class `c` (`u < c`,
/// so ties go to `u`), trains on seen classes, relabels `c`'s validation
/// samples as `u` and compares the unseen accuracy to `c`'s accuracy under
/// the bank without `u`.
pub fn aliasing_oracle(dir: &std::path::Path, seed: u64, epochs: usize, semantic_norm: f64) -> AliasingReport {
    let (u, c) = (2usize, 9usize);
    let params = GenerationParams {
        seed,
        ..GenerationParams::default()
    };
    let base = data::generate(&params).unwrap();
    let semantic = data::semantic_vectors(&base, semantic_norm);
    let names: Vec<String> = semantic.iter().map(|(n, _)| n.clone()).collect();
    let mut points: Vec<HyperboloidPoint> = semantic.iter().map(|(_, v)| exp_map_origin(v).unwrap()).collect();
    points[u] = points[c].clone();
    let bank = PrototypeBank::hyperbolic(names.clone(), points.clone(), true, 1.4).unwrap();
    let bank_path = dir.join("aliased_bank.json");
    bank.save(&bank_path).unwrap();

    let cfg = ExperimentConfig {
        dataset: hyperhead::train::DatasetSource::Generate(params),
        d_min_policy: DminPolicy::MinInterClass,
        prototypes: Some(bank_path),
        unseen_classes: vec![names[u].clone()],
        epochs,
        seed,
        ..ExperimentConfig::default()
    };
    let prepared = cfg.prepare_from(base).unwrap();
    let out = train::zero_shot_eval(&cfg, &prepared, TrainOptions::default()).unwrap();
    let enc = out.checkpoint.encoder.clone();

    let mut relabeled: SyntheticDataset = prepared.clone();
    let idx: Vec<usize> = prepared.splits.val.iter().copied().filter(|&i| prepared.labels[i] == Some(c)).collect();
    for &i in &idx {
        relabeled.labels[i] = Some(u);
    }
    let mask = prepared.unseen_mask();
    let aliased = train::evaluate(&out.checkpoint.bank, enc.as_ref(), &relabeled, &idx, Some(&mask)).unwrap();

    let mut reduced_names = names.clone();
    reduced_names.remove(u);
    let mut reduced_points = points;
    reduced_points.remove(u);
    let reduced = PrototypeBank::hyperbolic(reduced_names, reduced_points, true, 1.4).unwrap();
    let reduced_c = c - 1;
    let hits = idx
        .iter()
        .filter(|&&i| predict(&reduced, enc.as_ref(), &prepared.features[i]).unwrap() == Some(reduced_c))
        .count();
    AliasingReport {
        unseen_accuracy: aliased.unseen_accuracy.unwrap(),
        aliased_seen_accuracy: hits as f64 / idx.len() as f64,
        seen_accuracy: out.report.final_eval.seen_accuracy.unwrap(),
        report_unseen_accuracy: out.report.final_eval.unseen_accuracy.unwrap(),
        harmonic_mean: out.report.final_eval.harmonic_mean,
    }
}
