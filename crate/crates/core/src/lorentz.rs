//! Hyperboloid (Lorentz) model of hyperbolic space with curvature -1.
//!
//! Points live in `R^{n+1}` on the upper sheet `{x : <x,x>_l = -1, x_0 > 0}` where
//! `<x,y>_l = -x_0 y_0 + sum_i x_i y_i`. Index 0 is the time-like coordinate.
//!
//! Everything here is a pure function over `f64` slices; the two newtypes
//! [`HyperboloidPoint`] and [`TangentVector`] carry the manifold and tangency
//! invariants so downstream code does not have to re-check them.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Allowed violation of `<x,x>_l = -1`, scaled by `max(1, x_0^2)` for far points.
pub const MANIFOLD_TOL: f64 = 1e-9;
/// Allowed violation of `<x,u>_l = 0`.
pub const TANGENT_TOL: f64 = 1e-8;
/// Below this norm `sinh(t)/t` is replaced by its series.
const SMALL_NORM: f64 = 1e-6;
/// Distance gradients are zeroed below this distance.
pub const GRAD_ZERO_DIST: f64 = 1e-7;

/// `-x_0 y_0 + sum_{i>=1} x_i y_i`, without length checks.
#[inline]
pub(crate) fn minkowski(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let spatial: f64 = x[1..].iter().zip(&y[1..]).map(|(a, b)| a * b).sum();
    spatial - x[0] * y[0]
}

/// Lorentzian scalar product.
pub fn lorentz_inner(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Dimension {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::Dimension {
            expected: 2,
            got: x.len(),
        });
    }
    ensure_finite(x, "lorentz_inner lhs")?;
    ensure_finite(y, "lorentz_inner rhs")?;
    Ok(minkowski(x, y))
}

/// `|<x,x>_l + 1|`.
pub fn manifold_violation(coords: &[f64]) -> f64 {
    (minkowski(coords, coords) + 1.0).abs()
}

/// `sinh(t)/t` with the removable singularity filled in.
#[inline]
fn sinhc(t: f64) -> f64 {
    if t.abs() < SMALL_NORM {
        1.0 + t * t / 6.0
    } else {
        t.sinh() / t
    }
}

fn euclidean_norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// A point on the upper sheet of the unit hyperboloid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct HyperboloidPoint(Vec<f64>);

impl HyperboloidPoint {
    /// Validates ambient coordinates against the manifold invariants.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::Dimension {
                expected: 2,
                got: coords.len(),
            });
        }
        ensure_finite(&coords, "hyperboloid point")?;
        if coords[0] <= 0.0 {
            return Err(Error::Contract(format!(
                "time coordinate must be positive (got {})",
                coords[0]
            )));
        }
        let scale = coords[0].powi(2).max(1.0);
        let violation = manifold_violation(&coords);
        if violation > MANIFOLD_TOL * scale {
            return Err(Error::Contract(format!(
                "point is off the hyperboloid: |<x,x>_l + 1| = {violation:e}"
            )));
        }
        Ok(Self(coords))
    }

    /// `(1, 0, ..., 0)` in `H^n`.
    pub fn origin(n: usize) -> Self {
        let mut coords = vec![0.0; n + 1];
        coords[0] = 1.0;
        Self(coords)
    }

    /// Trusted constructor for coordinates produced by `project_to_manifold`.
    fn from_projected(coords: Vec<f64>) -> Self {
        Self(coords)
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn time(&self) -> f64 {
        self.0[0]
    }

    pub fn spatial(&self) -> &[f64] {
        &self.0[1..]
    }

    /// Intrinsic dimension `n` (ambient length minus one).
    pub fn dim(&self) -> usize {
        self.0.len() - 1
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for HyperboloidPoint {
    type Error = Error;

    fn try_from(coords: Vec<f64>) -> Result<Self> {
        Self::new(coords)
    }
}

impl From<HyperboloidPoint> for Vec<f64> {
    fn from(p: HyperboloidPoint) -> Self {
        p.0
    }
}

/// An ambient vector in the tangent space at `base`.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentVector {
    base: HyperboloidPoint,
    components: Vec<f64>,
}

impl TangentVector {
    pub fn new(base: HyperboloidPoint, components: Vec<f64>) -> Result<Self> {
        if components.len() != base.coords().len() {
            return Err(Error::Dimension {
                expected: base.coords().len(),
                got: components.len(),
            });
        }
        ensure_finite(&components, "tangent vector")?;
        let inner = minkowski(base.coords(), &components);
        let scale = (base.time() * euclidean_norm(&components)).max(1.0);
        if inner.abs() > TANGENT_TOL * scale {
            return Err(Error::Contract(format!(
                "vector is not tangent at base: <x,u>_l = {inner:e}"
            )));
        }
        Ok(Self { base, components })
    }

    pub fn zero(base: HyperboloidPoint) -> Self {
        let components = vec![0.0; base.coords().len()];
        Self { base, components }
    }

    pub fn base(&self) -> &HyperboloidPoint {
        &self.base
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    /// `sqrt(<u,u>_l)`; tangent vectors are space-like so this is real.
    pub fn lorentz_norm(&self) -> f64 {
        minkowski(&self.components, &self.components).max(0.0).sqrt()
    }

    /// Scales the components, keeping the base point.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            base: self.base.clone(),
            components: self.components.iter().map(|c| c * factor).collect(),
        }
    }

    pub fn into_components(self) -> Vec<f64> {
        self.components
    }
}

/// Keeps the spatial coordinates and recomputes `x_0 = sqrt(1 + |spatial|^2)`.
pub fn project_to_manifold(raw: &[f64]) -> Result<HyperboloidPoint> {
    if raw.len() < 2 {
        return Err(Error::Dimension {
            expected: 2,
            got: raw.len(),
        });
    }
    ensure_finite(&raw[1..], "spatial coordinates")?;
    Ok(lift_spatial(&raw[1..]))
}

/// Lifts spatial coordinates onto the hyperboloid.
pub fn lift_spatial(spatial: &[f64]) -> HyperboloidPoint {
    let sq: f64 = spatial.iter().map(|a| a * a).sum();
    let mut coords = Vec::with_capacity(spatial.len() + 1);
    coords.push((1.0 + sq).sqrt());
    coords.extend_from_slice(spatial);
    HyperboloidPoint::from_projected(coords)
}

/// Exponential map at the origin of an `n`-vector of spatial tangent coordinates.
///
/// The spatial part is `sinh(|v|) v/|v|` and the time coordinate is `cosh(|v|)`.
pub fn exp_map_origin(v: &[f64]) -> Result<HyperboloidPoint> {
    if v.is_empty() {
        return Err(Error::Dimension {
            expected: 1,
            got: 0,
        });
    }
    ensure_finite(v, "exp_map_origin input")?;
    let r = euclidean_norm(v);
    let scale = sinhc(r);
    let spatial: Vec<f64> = v.iter().map(|a| a * scale).collect();
    let point = lift_spatial(&spatial);
    ensure_finite(point.coords(), "exp_map_origin output")?;
    Ok(point)
}

/// Inverse of [`exp_map_origin`]: spatial tangent coordinates at the origin.
pub fn log_map_origin(x: &HyperboloidPoint) -> Vec<f64> {
    let s = euclidean_norm(x.spatial());
    if s == 0.0 {
        return vec![0.0; x.dim()];
    }
    // |v| = asinh(|spatial|), direction unchanged.
    let r = s.asinh();
    let factor = r / s;
    x.spatial().iter().map(|a| a * factor).collect()
}

/// Exponential map at `x`: `cosh(|u|) x + sinh(|u|) u/|u|`, re-projected.
pub fn exp_map_at(x: &HyperboloidPoint, u: &TangentVector) -> Result<HyperboloidPoint> {
    if u.base().coords().len() != x.coords().len() {
        return Err(Error::Dimension {
            expected: x.coords().len(),
            got: u.base().coords().len(),
        });
    }
    if u.base() != x {
        // Re-validate tangency against the requested base.
        TangentVector::new(x.clone(), u.components().to_vec())?;
    }
    Ok(exp_unchecked(x.coords(), u.components()))
}

pub(crate) fn exp_unchecked(x: &[f64], u: &[f64]) -> HyperboloidPoint {
    let norm = minkowski(u, u).max(0.0).sqrt();
    if norm == 0.0 {
        return lift_spatial(&x[1..]);
    }
    let c = norm.cosh();
    let s = sinhc(norm);
    let spatial: Vec<f64> = x[1..]
        .iter()
        .zip(&u[1..])
        .map(|(xi, ui)| c * xi + s * ui)
        .collect();
    lift_spatial(&spatial)
}

/// Logarithmic map: the tangent vector at `x` whose exponential reaches `y`.
pub fn log_map_at(x: &HyperboloidPoint, y: &HyperboloidPoint) -> Result<TangentVector> {
    if x.coords().len() != y.coords().len() {
        return Err(Error::Dimension {
            expected: x.coords().len(),
            got: y.coords().len(),
        });
    }
    let d = hyperbolic_distance(x, y)?;
    if d == 0.0 {
        return Ok(TangentVector::zero(x.clone()));
    }
    let inner = minkowski(x.coords(), y.coords());
    let raw: Vec<f64> = x
        .coords()
        .iter()
        .zip(y.coords())
        .map(|(xi, yi)| yi + inner * xi)
        .collect();
    let factor = 1.0 / sinhc(d);
    let scaled: Vec<f64> = raw.iter().map(|a| a * factor).collect();
    Ok(project_tangent_unchecked(x, &scaled))
}

/// Geodesic distance `arccosh(-<x,y>_l)`.
///
/// Near-coincident points use the equivalent `2 asinh(|x - y|_l / 2)`, which
/// avoids the cancellation in `arccosh(1 + eps)`; both branches clamp the
/// argument so rounding cannot produce a NaN.
pub fn hyperbolic_distance(x: &HyperboloidPoint, y: &HyperboloidPoint) -> Result<f64> {
    if x.coords().len() != y.coords().len() {
        return Err(Error::Dimension {
            expected: x.coords().len(),
            got: y.coords().len(),
        });
    }
    Ok(distance_unchecked(x.coords(), y.coords()))
}

pub(crate) fn distance_unchecked(x: &[f64], y: &[f64]) -> f64 {
    let arg = -minkowski(x, y);
    if arg > 2.0 {
        return arg.acosh();
    }
    let mut sq = -(x[0] - y[0]).powi(2);
    for (a, b) in x[1..].iter().zip(&y[1..]) {
        sq += (a - b).powi(2);
    }
    2.0 * (sq.max(0.0).sqrt() / 2.0).asinh()
}

/// Partial derivatives of `d(x, y)` with respect to the ambient coordinates of `x`.
///
/// Zero when `d < GRAD_ZERO_DIST` (the distance is not differentiable at coincidence).
pub(crate) fn distance_grad_x(x: &[f64], y: &[f64], d: f64) -> Vec<f64> {
    if d < GRAD_ZERO_DIST {
        return vec![0.0; x.len()];
    }
    let inv = 1.0 / d.sinh();
    let mut g: Vec<f64> = y.iter().map(|yi| -yi * inv).collect();
    g[0] = y[0] * inv;
    g
}

/// Orthogonal projection onto the tangent space at `x`: `g + <x,g>_l x`.
pub fn tangent_project(x: &HyperboloidPoint, g: &[f64]) -> Result<TangentVector> {
    if g.len() != x.coords().len() {
        return Err(Error::Dimension {
            expected: x.coords().len(),
            got: g.len(),
        });
    }
    ensure_finite(g, "ambient gradient")?;
    Ok(project_tangent_unchecked(x, g))
}

fn project_tangent_unchecked(x: &HyperboloidPoint, g: &[f64]) -> TangentVector {
    let inner = minkowski(x.coords(), g);
    let components = g
        .iter()
        .zip(x.coords())
        .map(|(gi, xi)| gi + inner * xi)
        .collect();
    TangentVector {
        base: x.clone(),
        components,
    }
}

/// Pulls an ambient gradient at `exp_map_origin(v)` back to a gradient on `v`.
pub(crate) fn exp_map_origin_vjp(v: &[f64], grad_point: &[f64]) -> Vec<f64> {
    let r = euclidean_norm(v);
    let f = sinhc(r);
    // f'(r)/r where f(r) = sinh(r)/r
    let fprime_over_r = if r < 1e-4 {
        1.0 / 3.0 + r * r / 30.0
    } else {
        (r * r.cosh() - r.sinh()) / (r * r * r)
    };
    let g_time = grad_point[0];
    let g_spatial = &grad_point[1..];
    let dot: f64 = v.iter().zip(g_spatial).map(|(a, b)| a * b).sum();
    v.iter()
        .zip(g_spatial)
        .map(|(vi, gi)| g_time * f * vi + f * gi + fprime_over_r * dot * vi)
        .collect()
}
