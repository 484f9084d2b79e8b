//! Proximable convex functions and the resolvent calculus.
//!
//! A [`Proximable`] is a convex function that knows its own proximal map. Via
//! the resolvent identity it doubles as a maximally monotone operator: the
//! prox of `gamma*f` is the resolvent of `gamma * (subdifferential of f)`, and
//! the resolvent of the *inverse* operator comes out of the same data through
//! [`resolvent_of_inverse`]. Conjugate proxes follow from Moreau's
//! decomposition, but every concrete type below also carries an independent
//! closed form for its conjugate prox so the decomposition stays a testable
//! identity rather than a definition.

use std::sync::Arc;

use crate::error::{check_len, check_positive, Error, Result};
use crate::vecmath;

/// A proper convex l.s.c. function with an exact proximal map.
///
/// `evaluate` is extended-real: indicator-type functions return
/// `f64::INFINITY` outside their domain instead of erroring.
///
/// The `smoothed_*` hooks expose a Huber-style smoothing used only by the
/// reference oracle; smooth functions keep their exact values there.
pub trait Proximable: Send + Sync {
    fn dim(&self) -> usize;

    /// Function value, possibly `+inf`.
    fn evaluate(&self, x: &[f64]) -> Result<f64>;

    /// `argmin_y gamma*f(y) + 0.5*||y - x||^2` for `gamma > 0`.
    fn prox(&self, gamma: f64, x: &[f64]) -> Result<Vec<f64>>;

    /// Prox of the Fenchel conjugate at step `gamma`.
    ///
    /// The default goes through Moreau's decomposition; implementations
    /// override it with an independent formula when one exists.
    fn prox_conjugate(&self, gamma: f64, x: &[f64]) -> Result<Vec<f64>> {
        moreau_conjugate_prox(self_as_dyn(self), gamma, x)
    }

    /// Conjugate value where a closed form exists.
    fn conjugate(&self, _p: &[f64]) -> Result<f64> {
        Err(Error::Unsupported(
            "conjugate value not available for this function".into(),
        ))
    }

    /// One subgradient at `x` (any element of the subdifferential).
    fn subgradient(&self, _x: &[f64]) -> Result<Vec<f64>> {
        Err(Error::Unsupported(
            "subgradient not available for this function".into(),
        ))
    }

    /// Value of an `eps`-smoothed surrogate; exact for smooth functions.
    fn smoothed_evaluate(&self, _eps: f64, x: &[f64]) -> Result<f64> {
        self.evaluate(x)
    }

    /// Gradient of the `eps`-smoothed surrogate.
    fn smoothed_gradient(&self, _eps: f64, x: &[f64]) -> Result<Vec<f64>> {
        self.subgradient(x)
    }

    /// Lipschitz constant of the smoothed gradient.
    fn smoothed_lipschitz(&self, _eps: f64) -> f64 {
        0.0
    }

    /// True only for the identically-zero function (used by dual evaluators).
    fn is_zero_function(&self) -> bool {
        false
    }
}

fn self_as_dyn<T: Proximable + ?Sized>(f: &T) -> &T {
    f
}

/// `Prox_{gamma f*}(x) = x - gamma * Prox_{f/gamma}(x/gamma)`, Moreau's
/// decomposition rearranged. Fails for `gamma <= 0`.
pub fn prox_conjugate<F: Proximable + ?Sized>(f: &F, gamma: f64, x: &[f64]) -> Result<Vec<f64>> {
    moreau_conjugate_prox(f, gamma, x)
}

fn moreau_conjugate_prox<F: Proximable + ?Sized>(
    f: &F,
    gamma: f64,
    x: &[f64],
) -> Result<Vec<f64>> {
    check_positive("prox step gamma", gamma)?;
    check_len("prox_conjugate", f.dim(), x)?;
    let scaled: Vec<f64> = x.iter().map(|v| v / gamma).collect();
    let inner = f.prox(1.0 / gamma, &scaled)?;
    Ok(x.iter().zip(&inner).map(|(xi, pi)| xi - gamma * pi).collect())
}

/// Resolvent of the inverse operator: `J_{theta B^{-1}}(x)` where `B` is the
/// subdifferential of the given function. For `B = subdiff(g)` this equals
/// `Prox_{theta g*}(x)`; the two primal-dual sweeps use it for their dual
/// backward steps.
pub fn resolvent_of_inverse<F: Proximable + ?Sized>(
    b: &F,
    theta: f64,
    x: &[f64],
) -> Result<Vec<f64>> {
    check_positive("resolvent step theta", theta)?;
    b.prox_conjugate(theta, x)
}

/// The zero function; its prox is the identity and its conjugate is the
/// indicator of the origin.
#[derive(Debug, Clone)]
pub struct ZeroFunction {
    dim: usize,
}

impl ZeroFunction {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0);
        ZeroFunction { dim }
    }
}

impl Proximable for ZeroFunction {
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        check_len("ZeroFunction::evaluate", self.dim, x)?;
        Ok(0.0)
    }

    fn prox(&self, gamma: f64, x: &[f64]) -> Result<Vec<f64>> {
        check_positive("prox step gamma", gamma)?;
        check_len("ZeroFunction::prox", self.dim, x)?;
        Ok(x.to_vec())
    }

    fn prox_conjugate(&self, gamma: f64, x: &[f64]) -> Result<Vec<f64>> {
        check_positive("prox step gamma", gamma)?;
        check_len("ZeroFunction::prox_conjugate", self.dim, x)?;
        Ok(vec![0.0; self.dim])
    }

    fn conjugate(&self, p: &[f64]) -> Result<f64> {
        check_len("ZeroFunction::conjugate", self.dim, p)?;
        let scale = 1.0 + vecmath::norm2(p);
        if vecmath::norm2(p) <= 1e-9 * scale {
            Ok(0.0)
        } else {
            Ok(f64::INFINITY)
        }
    }

    fn subgradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("ZeroFunction::subgradient", self.dim, x)?;
        Ok(vec![0.0; self.dim])
    }

    fn is_zero_function(&self) -> bool {
        true
    }
}

/// `alpha * ||x||_1` with component-wise soft-threshold prox.
#[derive(Debug, Clone)]
pub struct ScaledL1 {
    dim: usize,
    alpha: f64,
}

impl ScaledL1 {
    pub fn new(dim: usize, alpha: f64) -> Result<Self> {
        check_positive("l1 scale alpha", alpha)?;
        Ok(ScaledL1 { dim, alpha })
    }
}

impl Proximable for ScaledL1 {
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        check_len("ScaledL1::evaluate", self.dim, x)?;
        Ok(self.alpha * x.iter().map(|v| v.abs()).sum::<f64>())
    }

    fn prox(&self, gamma: f64, x: &[f64]) -> Result<Vec<f64>> {
        check_positive("prox step gamma", gamma)?;
        check_len("ScaledL1::prox", self.dim, x)?;
        let t = gamma * self.alpha;
        Ok(x.iter()
            .map(|&v| {
                if v > t {
                    v - t
                } else if v < -t {
                    v + t
                } else {
                    0.0
                }
            })
            .collect())
    }

    // conjugate is the indicator of the alpha-box; its prox clips
    fn prox_conjugate(&self, gamma: f64, x: &[f64]) -> Result<Vec<f64>> {
        check_positive("prox step gamma", gamma)?;
        check_len("ScaledL1::prox_conjugate", self.dim, x)?;
        Ok(x.iter().map(|&v| v.clamp(-self.alpha, self.alpha)).collect())
    }

    fn conjugate(&self, p: &[f64]) -> Result<f64> {
        check_len("ScaledL1::conjugate", self.dim, p)?;
        let max = p.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if max <= self.alpha * (1.0 + 1e-9) + 1e-12 {
            Ok(0.0)
        } else {
            Ok(f64::INFINITY)
        }
    }

    fn subgradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("ScaledL1::subgradient", self.dim, x)?;
        Ok(x.iter().map(|&v| self.alpha * sign(v)).collect())
    }

    fn smoothed_evaluate(&self, eps: f64, x: &[f64]) -> Result<f64> {
        check_len("ScaledL1::smoothed_evaluate", self.dim, x)?;
        Ok(self.alpha * x.iter().map(|&v| huber(eps, v.abs())).sum::<f64>())
    }

    fn smoothed_gradient(&self, eps: f64, x: &[f64]) -> Result<Vec<f64>> {
        check_len("ScaledL1::smoothed_gradient", self.dim, x)?;
        Ok(x.iter()
            .map(|&v| self.alpha * v / eps.max(v.abs()))
            .collect())
    }

    fn smoothed_lipschitz(&self, eps: f64) -> f64 {
        self.alpha / eps
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn huber(eps: f64, r: f64) -> f64 {
    if r >= eps {
        r - 0.5 * eps
    } else {
        0.5 * r * r / eps
    }
}

/// `0.5 * ||x - center||^2`; prox `(x + gamma*center) / (1 + gamma)`.
#[derive(Debug, Clone)]
pub struct QuadraticFidelity {
    center: Vec<f64>,
}

impl QuadraticFidelity {
    pub fn new(center: Vec<f64>) -> Self {
        assert!(!center.is_empty());
        QuadraticFidelity { center }
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }
}

impl Proximable for QuadraticFidelity {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        check_len("QuadraticFidelity::evaluate", self.dim(), x)?;
        Ok(0.5 * vecmath::dist2(x, &self.center).powi(2))
    }

    fn prox(&self, gamma: f64, x: &[f64]) -> Result<Vec<f64>> {
        check_positive("prox step gamma", gamma)?;
        check_len("QuadraticFidelity::prox", self.dim(), x)?;
        Ok(x.iter()
            .zip(&self.center)
            .map(|(xi, bi)| (xi + gamma * bi) / (1.0 + gamma))
            .collect())
    }

    // f*(p) = 0.5||p||^2 + <p, center>, so the conjugate prox is affine too
    fn prox_conjugate(&self, gamma: f64, x: &[f64]) -> Result<Vec<f64>> {
        check_positive("prox step gamma", gamma)?;
        check_len("QuadraticFidelity::prox_conjugate", self.dim(), x)?;
        Ok(x.iter()
            .zip(&self.center)
            .map(|(xi, bi)| (xi - gamma * bi) / (1.0 + gamma))
            .collect())
    }

    fn conjugate(&self, p: &[f64]) -> Result<f64> {
        check_len("QuadraticFidelity::conjugate", self.dim(), p)?;
        Ok(0.5 * vecmath::norm2_sq(p) + vecmath::dot(p, &self.center))
    }

    fn subgradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("QuadraticFidelity::subgradient", self.dim(), x)?;
        Ok(vecmath::sub(x, &self.center))
    }

    fn smoothed_lipschitz(&self, _eps: f64) -> f64 {
        1.0
    }
}

/// Parameters of the weighted group norm: block size `k`, strictly positive
/// weights, and a positive overall scale.
#[derive(Debug, Clone)]
pub struct GroupNormParams {
    pub weights: Vec<f64>,
    pub alpha: f64,
}

impl GroupNormParams {
    pub fn new(weights: Vec<f64>, alpha: f64) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Parameter("group norm needs at least one weight".into()));
        }
        for (i, w) in weights.iter().enumerate() {
            if !(*w > 0.0) || !w.is_finite() {
                return Err(Error::Parameter(format!(
                    "group norm weight {i} must be strictly positive, got {w}"
                )));
            }
        }
        check_positive("group norm scale alpha", alpha)?;
        Ok(GroupNormParams { weights, alpha })
    }

    pub fn block_size(&self) -> usize {
        self.weights.len()
    }
}

/// Weighted anisotropic group norm on `k` stacked planes of length `pixels`:
///
/// `alpha * sum_j sqrt( sum_k w_k * y[k*pixels + j]^2 )`.
///
/// The layout matches stacked difference fields: component `k` of pixel `j`
/// sits at `k*pixels + j`. With uniform weights the prox is block
/// soft-thresholding; general weights go through Moreau and a projection onto
/// the dual ellipsoid `{ p : sum_k p_k^2 / w_k <= alpha^2 }`, solved per block
/// by a safeguarded Newton iteration on the scalar multiplier (tolerance
/// 1e-12, at most 100 steps).
#[derive(Debug, Clone)]
pub struct GroupNorm {
    params: GroupNormParams,
    pixels: usize,
    uniform: bool,
}

impl GroupNorm {
    pub fn new(params: GroupNormParams, pixels: usize) -> Result<Self> {
        if pixels == 0 {
            return Err(Error::Parameter("group norm needs at least one pixel".into()));
        }
        let w0 = params.weights[0];
        let uniform = params.weights.iter().all(|w| *w == w0);
        Ok(GroupNorm {
            params,
            pixels,
            uniform,
        })
    }

    pub fn params(&self) -> &GroupNormParams {
        &self.params
    }

    fn block(&self, x: &[f64], j: usize) -> Vec<f64> {
        (0..self.params.block_size())
            .map(|k| x[k * self.pixels + j])
            .collect()
    }

    fn weighted_norm(&self, block: &[f64]) -> f64 {
        block
            .iter()
            .zip(&self.params.weights)
            .map(|(v, w)| w * v * v)
            .sum::<f64>()
            .sqrt()
    }
}

impl Proximable for GroupNorm {
    fn dim(&self) -> usize {
        self.params.block_size() * self.pixels
    }

    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        check_len("GroupNorm::evaluate", self.dim(), x)?;
        let mut total = 0.0;
        for j in 0..self.pixels {
            total += self.weighted_norm(&self.block(x, j));
        }
        Ok(self.params.alpha * total)
    }

    fn prox(&self, gamma: f64, x: &[f64]) -> Result<Vec<f64>> {
        check_positive("prox step gamma", gamma)?;
        check_len("GroupNorm::prox", self.dim(), x)?;
        let k = self.params.block_size();
        let mut out = vec![0.0; x.len()];
        let threshold = gamma * self.params.alpha;
        for j in 0..self.pixels {
            let v = self.block(x, j);
            if self.uniform {
                // f(v) = alpha*sqrt(w0)*||v||, plain block shrinkage
                let w0 = self.params.weights[0].sqrt();
                let norm = vecmath::norm2(&v);
                let shrink = if norm > 0.0 {
                    (1.0 - threshold * w0 / norm).max(0.0)
                } else {
                    0.0
                };
                for kk in 0..k {
                    out[kk * self.pixels + j] = shrink * v[kk];
                }
            } else {
                let proj = project_dual_ellipsoid(&v, &self.params.weights, threshold);
                for kk in 0..k {
                    out[kk * self.pixels + j] = v[kk] - proj[kk];
                }
            }
        }
        Ok(out)
    }

    fn prox_conjugate(&self, gamma: f64, x: &[f64]) -> Result<Vec<f64>> {
        check_positive("prox step gamma", gamma)?;
        check_len("GroupNorm::prox_conjugate", self.dim(), x)?;
        // conjugate is the indicator of the dual ellipsoid; its prox is the
        // projection, independent of the step
        let k = self.params.block_size();
        let mut out = vec![0.0; x.len()];
        for j in 0..self.pixels {
            let v = self.block(x, j);
            let proj = project_dual_ellipsoid(&v, &self.params.weights, self.params.alpha);
            for kk in 0..k {
                out[kk * self.pixels + j] = proj[kk];
            }
        }
        Ok(out)
    }

    fn conjugate(&self, p: &[f64]) -> Result<f64> {
        check_len("GroupNorm::conjugate", self.dim(), p)?;
        let bound = self.params.alpha * self.params.alpha;
        for j in 0..self.pixels {
            let v = self.block(p, j);
            let q: f64 = v
                .iter()
                .zip(&self.params.weights)
                .map(|(x, w)| x * x / w)
                .sum();
            if q > bound * (1.0 + 1e-9) + 1e-12 {
                return Ok(f64::INFINITY);
            }
        }
        Ok(0.0)
    }

    fn subgradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("GroupNorm::subgradient", self.dim(), x)?;
        let k = self.params.block_size();
        let mut out = vec![0.0; x.len()];
        for j in 0..self.pixels {
            let v = self.block(x, j);
            let norm = self.weighted_norm(&v);
            if norm > 0.0 {
                for kk in 0..k {
                    out[kk * self.pixels + j] =
                        self.params.alpha * self.params.weights[kk] * v[kk] / norm;
                }
            }
        }
        Ok(out)
    }

    fn smoothed_evaluate(&self, eps: f64, x: &[f64]) -> Result<f64> {
        check_len("GroupNorm::smoothed_evaluate", self.dim(), x)?;
        let mut total = 0.0;
        for j in 0..self.pixels {
            total += huber(eps, self.weighted_norm(&self.block(x, j)));
        }
        Ok(self.params.alpha * total)
    }

    fn smoothed_gradient(&self, eps: f64, x: &[f64]) -> Result<Vec<f64>> {
        check_len("GroupNorm::smoothed_gradient", self.dim(), x)?;
        let k = self.params.block_size();
        let mut out = vec![0.0; x.len()];
        for j in 0..self.pixels {
            let v = self.block(x, j);
            let denom = eps.max(self.weighted_norm(&v));
            for kk in 0..k {
                out[kk * self.pixels + j] =
                    self.params.alpha * self.params.weights[kk] * v[kk] / denom;
            }
        }
        Ok(out)
    }

    fn smoothed_lipschitz(&self, eps: f64) -> f64 {
        let wmax = self.params.weights.iter().fold(0.0f64, |m, w| m.max(*w));
        2.0 * self.params.alpha * wmax / eps
    }
}

/// Projection onto `{ p : sum_k p_k^2 / w_k <= r^2 }`.
///
/// Interior points are returned unchanged; otherwise the KKT multiplier
/// solves `sum_k w_k x_k^2 / (w_k + lam)^2 = r^2` by Newton steps safeguarded
/// with bisection on a bracketing interval.
pub fn project_dual_ellipsoid(x: &[f64], weights: &[f64], radius: f64) -> Vec<f64> {
    debug_assert_eq!(x.len(), weights.len());
    let r2 = radius * radius;
    let q: f64 = x.iter().zip(weights).map(|(v, w)| v * v / w).sum();
    if q <= r2 {
        return x.to_vec();
    }
    // phi(lam) = sum w x^2/(w+lam)^2 - r^2, strictly decreasing, phi(0) > 0
    let weighted_sq: f64 = x.iter().zip(weights).map(|(v, w)| w * v * v).sum();
    let mut lo = 0.0;
    let mut hi = (weighted_sq.sqrt() / radius).max(1e-300); // phi(hi) <= 0
    let phi = |lam: f64| -> (f64, f64) {
        let mut val = -r2;
        let mut slope = 0.0;
        for (v, w) in x.iter().zip(weights) {
            let d = w + lam;
            val += w * v * v / (d * d);
            slope -= 2.0 * w * v * v / (d * d * d);
        }
        (val, slope)
    };
    let mut lam = hi.min(1.0);
    for _ in 0..100 {
        let (val, slope) = phi(lam);
        if val > 0.0 {
            lo = lam;
        } else {
            hi = lam;
        }
        if val.abs() <= 1e-12 * r2 {
            break;
        }
        let newton = lam - val / slope;
        lam = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 1e-12 * (1.0 + lam.abs()) {
            break;
        }
    }
    x.iter().zip(weights).map(|(v, w)| w * v / (w + lam)).collect()
}

/// Convenience for building `Arc<dyn Proximable>` values.
pub type ProxFn = Arc<dyn Proximable>;
