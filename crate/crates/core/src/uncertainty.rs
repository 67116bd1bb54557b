//! First-order propagation of polar measurement noise into Cartesian
//! covariances, and the heteroscedastic Gaussian negative log-likelihood.
//!
//! A detection at `(r, alpha, beta)` with independent Gaussian errors of
//! standard deviations `(sigma_r, sigma_alpha, sigma_beta)` has Cartesian
//! covariance `J D J^T` with `D = diag(sigma_r^2, sigma_alpha^2, sigma_beta^2)`
//! and `J` the Jacobian of the polar-to-Cartesian map. Angular errors scale
//! with range, which yields tangentially elongated ellipsoids.
//!
//! No matrix is ever inverted explicitly: Mahalanobis terms use triangular
//! solves against the Cholesky factor and log-determinants come from its
//! diagonal.

use nalgebra::{Cholesky, Matrix3, Vector3, U3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::radar::{polar_to_cartesian, CartesianPoint, PolarCoord};

/// Below this range the Jacobian is treated as singular and jitter is added.
pub const DEGENERATE_RANGE: f64 = 1e-6;
pub const JITTER: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolarSigmas {
    pub sigma_r: f64,
    pub sigma_alpha: f64,
    pub sigma_beta: f64,
}

impl Default for PolarSigmas {
    fn default() -> Self {
        Self { sigma_r: 0.1, sigma_alpha: 0.02, sigma_beta: 0.02 }
    }
}

impl PolarSigmas {
    pub fn new(sigma_r: f64, sigma_alpha: f64, sigma_beta: f64) -> Result<Self> {
        let s = Self { sigma_r, sigma_alpha, sigma_beta };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.sigma_r, self.sigma_alpha, self.sigma_beta].iter().all(|s| *s > 0.0 && s.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config("polar sigmas must be strictly positive".into()))
        }
    }

    pub fn variances(&self) -> Vector3<f64> {
        Vector3::new(self.sigma_r.powi(2), self.sigma_alpha.powi(2), self.sigma_beta.powi(2))
    }

    /// `ln sigma^2` per axis.
    pub fn log_variances(&self) -> Vector3<f64> {
        self.variances().map(f64::ln)
    }

    pub fn from_log_variances(lv: &Vector3<f64>) -> Self {
        Self { sigma_r: (0.5 * lv[0]).exp(), sigma_alpha: (0.5 * lv[1]).exp(), sigma_beta: (0.5 * lv[2]).exp() }
    }
}

/// Symmetric positive-definite 3x3 covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Covariance3(Matrix3<f64>);

impl Covariance3 {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Checks symmetry (1e-12 relative to the largest entry) and positive
    /// definiteness; the stored matrix is exactly symmetrised.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let scale = m.amax().max(1.0);
        if !m.iter().all(|v| v.is_finite()) || (m - m.transpose()).amax() > 1e-12 * scale {
            return Err(Error::NotPositiveDefinite { index: 0 });
        }
        let c = Self(symmetrize(&m));
        c.cholesky(0)?;
        Ok(c)
    }

    pub fn from_diagonal(d: [f64; 3]) -> Result<Self> {
        Self::new(Matrix3::from_diagonal(&Vector3::from(d)))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Upper triangle `(xx, xy, xz, yy, yz, zz)`.
    pub fn upper(&self) -> [f64; 6] {
        let m = &self.0;
        [m[(0, 0)], m[(0, 1)], m[(0, 2)], m[(1, 1)], m[(1, 2)], m[(2, 2)]]
    }

    pub fn from_upper(u: [f64; 6]) -> Result<Self> {
        Self::new(Matrix3::new(u[0], u[1], u[2], u[1], u[3], u[4], u[2], u[4], u[5]))
    }

    pub(crate) fn cholesky(&self, index: usize) -> Result<Cholesky<f64, U3>> {
        Cholesky::new(self.0).ok_or(Error::NotPositiveDefinite { index })
    }

    /// Congruence `R C R^T`, e.g. rotating into another frame.
    pub fn rotated(&self, r: &Matrix3<f64>) -> Self {
        Self(symmetrize(&(r * self.0 * r.transpose())))
    }

    /// Sum of two covariances (PD is preserved).
    pub fn plus(&self, other: &Covariance3) -> Self {
        Self(symmetrize(&(self.0 + other.0)))
    }

    pub fn log_det(&self) -> Result<f64> {
        let l = self.cholesky(0)?;
        Ok(2.0 * l.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
    }
}

fn symmetrize(m: &Matrix3<f64>) -> Matrix3<f64> {
    (m + m.transpose()) * 0.5
}

/// Cartesian position with its covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertainPoint {
    pub mean: CartesianPoint,
    pub cov: Covariance3,
    /// Set when the source range was too small for a well-conditioned
    /// Jacobian and jitter had to be added.
    pub jittered: bool,
}

/// Jacobian of `(r, alpha, beta) -> (x, y, z)`.
pub fn propagation_jacobian(c: PolarCoord) -> Matrix3<f64> {
    let (sa, ca) = c.alpha.sin_cos();
    let (sb, cb) = c.beta.sin_cos();
    let r = c.r;
    Matrix3::new(ca * cb, -r * sa * cb, -r * ca * sb, sa * cb, r * ca * cb, -r * sa * sb, sb, 0.0, r * cb)
}

fn jdjt(j: &Matrix3<f64>, variances: &Vector3<f64>) -> Matrix3<f64> {
    let jd = j * Matrix3::from_diagonal(variances);
    symmetrize(&(jd * j.transpose()))
}

/// `Sigma = J diag(sigma^2) J^T`. For `r < 1e-6` the Jacobian is near
/// singular and `1e-12 I` is added; use [`propagate_point`] to see the flag.
pub fn propagate_covariance(c: PolarCoord, s: &PolarSigmas) -> Covariance3 {
    propagate_point(c, s).cov
}

pub fn propagate_point(c: PolarCoord, s: &PolarSigmas) -> UncertainPoint {
    let mut m = jdjt(&propagation_jacobian(c), &s.variances());
    let jittered = c.r < DEGENERATE_RANGE;
    if jittered {
        m += Matrix3::identity() * JITTER;
    }
    UncertainPoint { mean: polar_to_cartesian(c), cov: Covariance3(m), jittered }
}

/// `eps^T Sigma^-1 eps` via a Cholesky triangular solve.
pub fn mahalanobis_sq(eps: &Vector3<f64>, cov: &Covariance3) -> Result<f64> {
    let chol = cov.cholesky(0)?;
    Ok(whitened(&chol, eps).norm_squared())
}

fn whitened(chol: &Cholesky<f64, U3>, eps: &Vector3<f64>) -> Vector3<f64> {
    chol.l_dirty().solve_lower_triangular(eps).expect("Cholesky factor has a positive diagonal")
}

fn term_value(eps: &Vector3<f64>, cov: &Covariance3, index: usize) -> Result<f64> {
    let chol = cov.cholesky(index)?;
    let maha = whitened(&chol, eps).norm_squared();
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Ok(maha + log_det)
}

/// `sum_i ( eps_i^T Sigma_i^-1 eps_i + log det Sigma_i )`.
///
/// Terms are evaluated independently and summed pairwise in input order, so
/// the value does not depend on thread count.
pub fn nll_loss(terms: &[(Vector3<f64>, Covariance3)]) -> Result<f64> {
    let indexed: Vec<(usize, &(Vector3<f64>, Covariance3))> = terms.iter().enumerate().collect();
    let values = par::map(&indexed, |(i, (eps, cov))| term_value(eps, cov, *i));
    let values = values.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok(par::pairwise_sum(&values))
}

/// One likelihood term with the covariance parameterised by polar
/// log-variances at a fixed Jacobian: `Sigma = J exp(diag(lv)) J^T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NllTerm {
    pub residual: Vector3<f64>,
    pub log_variances: Vector3<f64>,
    pub jacobian: Matrix3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NllGradient {
    pub d_residual: Vector3<f64>,
    pub d_log_variances: Vector3<f64>,
    /// Contribution of the log-determinant alone to `d_log_variances`.
    /// `det Sigma = det(J)^2 prod sigma_k^2`, so this is exactly one per axis.
    pub d_log_det: Vector3<f64>,
}

impl NllTerm {
    pub fn new(residual: Vector3<f64>, coord: PolarCoord, sigmas: &PolarSigmas) -> Self {
        Self { residual, log_variances: sigmas.log_variances(), jacobian: propagation_jacobian(coord) }
    }

    pub fn covariance(&self) -> Covariance3 {
        Covariance3(jdjt(&self.jacobian, &self.log_variances.map(f64::exp)))
    }

    pub fn loss(&self) -> Result<f64> {
        term_value(&self.residual, &self.covariance(), 0)
    }

    /// Analytic gradient of `eps^T Sigma^-1 eps + log det Sigma`.
    ///
    /// With `w = Sigma^-1 eps` and `j_k` the k-th Jacobian column:
    /// `d/d eps = 2 w` and `d/d lv_k = 1 - exp(lv_k) (j_k . w)^2`.
    pub fn gradients(&self) -> Result<NllGradient> {
        let cov = self.covariance();
        let chol = cov.cholesky(0)?;
        let w = chol.solve(&self.residual);
        let d_log_det = Vector3::repeat(1.0);
        let d_maha = Vector3::from_fn(|k, _| {
            let proj = self.jacobian.column(k).dot(&w);
            -self.log_variances[k].exp() * proj * proj
        });
        Ok(NllGradient { d_residual: w * 2.0, d_log_variances: d_maha + d_log_det, d_log_det })
    }
}

pub fn nll_gradients(term: &NllTerm) -> Result<NllGradient> {
    term.gradients()
}
