//! Outer approximations of the minimal robust positively invariant set.
//!
//! For `x+ = A x + w`, `w in W`, the minimal RPI set is `sum_i A^i W`. We
//! truncate at `s` terms once `A^s W ⊆ alpha W` and inflate the partial sum
//! by `1 / (1 - alpha)`, which gives an RPI outer approximation that is
//! within `epsilon` of the true set.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::convexsets::{SetError, Zonotope};
use crate::matlin::{matmul, power_norm_certificate, LinalgError, Matrix, Vector};
use crate::scalar::Scalar;

/// Horizon used when certifying that the closed-loop matrix decays.
pub const CERTIFICATE_HORIZON: usize = 500;
pub const DEFAULT_S_MAX: usize = 200;
const NET_SEED: u64 = 0x5eed_0f_d1ec;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InvarianceError {
    #[error("closed-loop matrix has no power-norm decay certificate")]
    NotDecaying,
    #[error("disturbance set must contain the origin in its interior")]
    OriginNotInterior,
    #[error("no truncation order up to {s_max} met the tolerance (best alpha {best_alpha:e})")]
    NotConverged { s_max: usize, best_alpha: f64 },
    #[error("epsilon must be positive")]
    BadEpsilon,
    #[error(transparent)]
    Set(#[from] SetError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Clone, Debug)]
pub struct RpiResult<S> {
    /// RPI outer approximation `(1 - alpha)^-1 F_s`.
    pub p: Zonotope<S>,
    /// The partial sum `F_s = sum_{i<s} A^i W`, an inner approximation.
    pub inner: Zonotope<S>,
    pub s: usize,
    pub alpha: S,
    /// Hausdorff slack of `p` over the partial sum.
    pub epsilon_bound: S,
}

/// Default epsilon, `1e-4 * radius(w_bar)`.
pub fn default_epsilon<S: Scalar>(w_bar: &Zonotope<S>) -> S {
    S::lit(1e-4) * w_bar.radius()
}

pub fn mrpi_outer<S: Scalar>(
    a_k: &Matrix<S>,
    w_bar: &Zonotope<S>,
    epsilon: S,
    s_max: usize,
) -> Result<RpiResult<S>, InvarianceError> {
    if !(epsilon > S::zero()) {
        return Err(InvarianceError::BadEpsilon);
    }
    if power_norm_certificate(a_k, CERTIFICATE_HORIZON)?.is_none() {
        return Err(InvarianceError::NotDecaying);
    }
    let n = w_bar.dim();
    if w_bar.is_point() {
        if w_bar.center().iter().any(|&v| v != S::zero()) {
            return Err(InvarianceError::OriginNotInterior);
        }
        return Ok(RpiResult {
            p: Zonotope::origin(n),
            inner: Zonotope::origin(n),
            s: 1,
            alpha: S::zero(),
            epsilon_bound: S::zero(),
        });
    }
    if !w_bar.contains_origin_interior() {
        return Err(InvarianceError::OriginNotInterior);
    }
    let normals = w_bar.facet_normals().ok_or(InvarianceError::OriginNotInterior)?;
    let mut dirs = Vec::with_capacity(2 * normals.len());
    for d in normals {
        dirs.push(d.scaled(-S::one()));
        dirs.push(d);
    }
    let w_support: Vec<S> = dirs.iter().map(|d| w_bar.support(d)).collect::<Result<_, _>>()?;

    let mut partial = w_bar.clone();
    let mut power = a_k.clone();
    let mut best_alpha = S::infinity();
    for s in 1..=s_max {
        let image = w_bar.linear_image(&power)?;
        let mut alpha = S::zero();
        for (d, &h) in dirs.iter().zip(&w_support) {
            alpha = alpha.max(image.support(d)? / h);
        }
        best_alpha = best_alpha.min(alpha);
        let radius = partial.radius();
        if alpha < S::one() && alpha <= epsilon / (epsilon + radius) {
            let inflate = S::one() / (S::one() - alpha);
            let p = partial.scaled(inflate);
            return Ok(RpiResult {
                p,
                inner: partial,
                s,
                alpha,
                epsilon_bound: alpha * inflate * radius,
            });
        }
        partial = partial.minkowski_sum(&image)?;
        power = matmul(&power, a_k)?;
    }
    Err(InvarianceError::NotConverged {
        s_max,
        best_alpha: best_alpha.as_f64(),
    })
}

/// `A^mu p`, an outer approximation of the tail set `sum_{i>=mu} A^i W`.
pub fn tail_set<S: Scalar>(
    a_k: &Matrix<S>,
    mu: usize,
    mrpi: &RpiResult<S>,
) -> Result<Zonotope<S>, InvarianceError> {
    let power = crate::matlin::matrix_power(a_k, mu)?;
    Ok(mrpi.p.linear_image(&power)?)
}

/// `A^mu F_s`, the matching inner approximation of the tail set.
pub fn tail_inner<S: Scalar>(
    a_k: &Matrix<S>,
    mu: usize,
    mrpi: &RpiResult<S>,
) -> Result<Zonotope<S>, InvarianceError> {
    let power = crate::matlin::matrix_power(a_k, mu)?;
    Ok(mrpi.inner.linear_image(&power)?)
}

/// Fixed unit directions: `max(64, 4^dim)` of them. Evenly spaced angles in
/// the plane, seeded Gaussian samples above that.
pub fn direction_net<S: Scalar>(dim: usize) -> Vec<Vector<S>> {
    match dim {
        0 => Vec::new(),
        1 => vec![Vector::from_slice(&[S::one()]), Vector::from_slice(&[-S::one()])],
        _ => {
            let count = 64usize.max(1usize << (2 * dim).min(20));
            if dim == 2 {
                return (0..count)
                    .map(|k| {
                        let angle = std::f64::consts::TAU * k as f64 / count as f64;
                        Vector::from_f64(&[angle.cos(), angle.sin()])
                    })
                    .collect();
            }
            let mut rng = ChaCha8Rng::seed_from_u64(NET_SEED);
            let mut out = Vec::with_capacity(count);
            while out.len() < count {
                let v: Vec<f64> = (0..dim).map(|_| gaussian(&mut rng)).collect();
                let len = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if len > 1e-6 {
                    out.push(Vector::from_f64(&v.iter().map(|x| x / len).collect::<Vec<_>>()));
                }
            }
            out
        }
    }
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Checks `support(A p ⊕ W, d) <= support(p, d) + tol` over the facet
/// normals of `p` (both signs) and the direction net. For a full-dimensional
/// `p` the facet normals alone already make the test exact.
pub fn certify_rpi<S: Scalar>(p: &Zonotope<S>, a_k: &Matrix<S>, w_bar: &Zonotope<S>, tol: S) -> bool {
    let Ok(image) = p.linear_image(a_k) else {
        return false;
    };
    let Ok(successor) = image.minkowski_sum(w_bar) else {
        return false;
    };
    let mut dirs = direction_net::<S>(p.dim());
    if let Some(normals) = p.facet_normals() {
        for d in normals {
            dirs.push(d.scaled(-S::one()));
            dirs.push(d);
        }
    }
    dirs.iter().all(|d| match (successor.support(d), p.support(d)) {
        (Ok(lhs), Ok(rhs)) => lhs <= rhs + tol,
        _ => false,
    })
}
