//! Rigid registration of point clouds that carry per-point covariances.
//!
//! Each iteration pairs every transformed source mean with its nearest target
//! mean and takes one Gauss-Newton step on se(3) for
//! `sum_i r_i^T C_i^-1 r_i`, where `r_i = T(p_i) - q_i` and
//! `C_i = R Sigma_src,i R^T + Sigma_tgt,i`. With identity covariances this
//! reduces to plain point-to-point ICP.

use nalgebra::{Matrix3, Matrix6, Rotation3, SMatrix, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::NearestIndex;
use crate::par;
use crate::radar::CartesianPoint;
use crate::uncertainty::{Covariance3, UncertainPoint};

pub type PointJacobian = SMatrix<f64, 3, 6>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self { rotation: Rotation3::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    /// Exponential map of a twist `(omega, v)`.
    pub fn exp(xi: &Vector6<f64>) -> Self {
        let omega = Vector3::new(xi[0], xi[1], xi[2]);
        let v = Vector3::new(xi[3], xi[4], xi[5]);
        let theta = omega.norm();
        let w = omega.cross_matrix();
        let (a, b) = if theta < 1e-6 {
            // Taylor expansions of (1 - cos t)/t^2 and (t - sin t)/t^3.
            let t2 = theta * theta;
            (0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
        } else {
            ((1.0 - theta.cos()) / (theta * theta), (theta - theta.sin()) / theta.powi(3))
        };
        let jl = Matrix3::identity() + w * a + w * w * b;
        Self { rotation: Rotation3::new(omega), translation: jl * v }
    }

    pub fn apply(&self, p: &CartesianPoint) -> CartesianPoint {
        self.rotation * p + self.translation
    }

    /// `self * other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Self {
        let r = self.rotation.inverse();
        Self { rotation: r, translation: -(r * self.translation) }
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&self.rotation)
    }

    /// Rotation angle of `self^-1 * other` in radians.
    pub fn rotation_error(&self, other: &RigidTransform) -> f64 {
        rotation_angle(&(self.rotation.inverse() * other.rotation))
    }

    pub fn translation_error(&self, other: &RigidTransform) -> f64 {
        (self.translation - other.translation).norm()
    }

    /// Max deviation of `R^T R` from identity.
    pub fn orthonormality_error(&self) -> f64 {
        let m = self.rotation.matrix();
        (m.transpose() * m - Matrix3::identity()).amax()
    }
}

/// Rotation angle via `atan2`, accurate near the identity where `acos` is not.
pub fn rotation_angle(r: &Rotation3<f64>) -> f64 {
    let q = UnitQuaternion::from_rotation_matrix(r);
    2.0 * q.imag().norm().atan2(q.w.abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Per-point covariances from the measurement model.
    #[default]
    Anisotropic,
    /// Every covariance replaced by the identity.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationConfig {
    pub max_iterations: usize,
    /// Stop once the twist update norm falls below this.
    pub convergence_tol: f64,
    pub max_correspondence_dist: f64,
    /// Huber scale on the Mahalanobis norm; `None` disables robust weighting.
    pub robust_loss_scale: Option<f64>,
    pub weighting: Weighting,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            convergence_tol: 1e-10,
            max_correspondence_dist: 2.0,
            robust_loss_scale: None,
            weighting: Weighting::Anisotropic,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be positive".into()));
        }
        if !(self.convergence_tol > 0.0) || !(self.max_correspondence_dist > 0.0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if let Some(k) = self.robust_loss_scale {
            if !(k > 0.0) {
                return Err(Error::Config("robust_loss_scale must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Registration {
    pub transform: RigidTransform,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Cost before each Gauss-Newton step.
    pub cost_history: Vec<f64>,
}

/// `d r / d (omega, v)` for a left perturbation at transformed point `tp`.
pub fn point_jacobian(tp: &CartesianPoint) -> PointJacobian {
    let mut j = PointJacobian::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-tp.coords.cross_matrix()));
    j.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
    j
}

/// One Gauss-Newton update from stacked residuals, their covariances and
/// point Jacobians, solved by Cholesky on the 6x6 normal equations.
pub fn se3_step(
    residuals: &[Vector3<f64>],
    covariances: &[Covariance3],
    jacobians: &[PointJacobian],
) -> Result<Vector6<f64>> {
    if residuals.len() != covariances.len() || residuals.len() != jacobians.len() {
        return Err(Error::Shape("residuals, covariances and jacobians differ in length".into()));
    }
    if residuals.len() < 3 {
        return Err(Error::TooFewCorrespondences { found: residuals.len() });
    }
    let mut h = Matrix6::zeros();
    let mut g = Vector6::zeros();
    for (i, ((r, c), j)) in residuals.iter().zip(covariances).zip(jacobians).enumerate() {
        let chol = c.cholesky(i)?;
        let wj = chol.solve(j);
        let wr = chol.solve(r);
        h += j.transpose() * wj;
        g += j.transpose() * wr;
    }
    let h = (h + h.transpose()) * 0.5;
    match h.cholesky() {
        Some(chol) => Ok(-chol.solve(&g)),
        None => {
            let eig = h.symmetric_eigenvalues();
            let max = eig.amax();
            let min = eig.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
            Err(Error::SingularSystem { condition: if max > 0.0 { min / max } else { 0.0 } })
        }
    }
}

struct Linearization {
    residuals: Vec<Vector3<f64>>,
    covariances: Vec<Covariance3>,
    jacobians: Vec<PointJacobian>,
    cost: f64,
}

fn linearize(
    src: &[UncertainPoint],
    tgt: &[UncertainPoint],
    index: &NearestIndex<'_>,
    t: &RigidTransform,
    cfg: &RegistrationConfig,
) -> Result<Linearization> {
    let r = *t.rotation.matrix();
    let pairs = par::map(src, |s| {
        let tp = t.apply(&s.mean);
        let (j, d) = index.nearest(&tp)?;
        (d <= cfg.max_correspondence_dist).then_some((tp, j))
    });
    let mut lin = Linearization { residuals: Vec::new(), covariances: Vec::new(), jacobians: Vec::new(), cost: 0.0 };
    for (s, (tp, j)) in src.iter().zip(pairs).filter_map(|(s, m)| m.map(|m| (s, m))) {
        let residual = tp - tgt[j].mean;
        let mut cov = match cfg.weighting {
            Weighting::Anisotropic => s.cov.rotated(&r).plus(&tgt[j].cov),
            Weighting::Identity => Covariance3::identity(),
        };
        let chol = cov.cholesky(lin.residuals.len())?;
        let m2 = chol.l_dirty().solve_lower_triangular(&residual).map_or(f64::INFINITY, |y| y.norm_squared());
        if let Some(k) = cfg.robust_loss_scale {
            // Huber weight applied by inflating the covariance.
            let m = m2.sqrt();
            if m > k {
                cov = Covariance3::new(cov.matrix() * (m / k))?;
            }
        }
        lin.cost += m2;
        lin.residuals.push(residual);
        lin.covariances.push(cov);
        lin.jacobians.push(point_jacobian(&tp));
    }
    if lin.residuals.len() < 3 {
        return Err(Error::TooFewCorrespondences { found: lin.residuals.len() });
    }
    Ok(lin)
}

/// Registers `src` onto `tgt` starting from the identity.
pub fn register_uncertain(
    src: &[UncertainPoint],
    tgt: &[UncertainPoint],
    cfg: &RegistrationConfig,
) -> Result<Registration> {
    cfg.validate()?;
    if src.len() < 3 || tgt.len() < 3 {
        return Err(Error::TooFewCorrespondences { found: src.len().min(tgt.len()) });
    }
    let means: Vec<CartesianPoint> = tgt.iter().map(|p| p.mean).collect();
    let index = NearestIndex::new(&means, cfg.max_correspondence_dist);

    let mut t = RigidTransform::identity();
    let mut cost_history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        iterations += 1;
        let lin = linearize(src, tgt, &index, &t, cfg)?;
        cost_history.push(lin.cost);
        let xi = se3_step(&lin.residuals, &lin.covariances, &lin.jacobians)?;
        t = RigidTransform::exp(&xi).compose(&t);
        t.rotation.renormalize();
        if xi.norm() < cfg.convergence_tol {
            converged = true;
            break;
        }
    }
    let cost = linearize(src, tgt, &index, &t, cfg)?.cost;
    Ok(Registration { transform: t, cost, iterations, converged, cost_history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Point3;

    fn cloud() -> Vec<UncertainPoint> {
        [
            [1.0, 0.0, 0.0],
            [0.0, 2.0, 0.0],
            [0.0, 0.0, 3.0],
            [2.0, 1.0, -1.0],
            [-1.0, 3.0, 0.5],
            [4.0, -2.0, 1.0],
            [3.0, 3.0, 3.0],
            [-2.0, -1.0, 2.0],
            [5.0, 0.5, -0.5],
            [1.5, -3.0, -2.0],
            [-3.0, 2.5, -1.5],
            [0.5, 4.5, 2.5],
        ]
        .iter()
        .map(|a| UncertainPoint { mean: Point3::new(a[0], a[1], a[2]), cov: Covariance3::identity(), jittered: false })
        .collect()
    }

    #[test]
    fn identical_clouds_converge_immediately() {
        let c = cloud();
        let reg = register_uncertain(&c, &c, &RegistrationConfig::default()).unwrap();
        assert_eq!(reg.iterations, 1);
        assert_eq!(reg.cost, 0.0);
        assert_eq!(reg.transform.rotation_error(&RigidTransform::identity()), 0.0);
        assert_eq!(reg.transform.translation, Vector3::zeros());
    }

    #[test]
    fn zero_residuals_zero_update() {
        let r = vec![Vector3::zeros(); 4];
        let c = vec![Covariance3::identity(); 4];
        let j: Vec<_> = cloud().iter().take(4).map(|p| point_jacobian(&p.mean)).collect();
        assert_eq!(se3_step(&r, &c, &j).unwrap(), Vector6::zeros());
    }

    #[test]
    fn pure_translation_in_one_step() {
        let offset = Vector3::new(0.3, -0.2, 0.1);
        let pts = cloud();
        let residuals: Vec<_> = pts.iter().map(|_| -offset).collect();
        let covs = vec![Covariance3::identity(); pts.len()];
        let jac: Vec<_> = pts.iter().map(|p| point_jacobian(&p.mean)).collect();
        let xi = se3_step(&residuals, &covs, &jac).unwrap();
        assert!(xi.fixed_rows::<3>(0).norm() < 1e-12);
        assert!((xi.fixed_rows::<3>(3) - offset).norm() < 1e-12);
    }

    #[test]
    fn collinear_points_are_singular() {
        let pts: Vec<CartesianPoint> = (0..5).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        let r = vec![Vector3::new(0.1, 0.0, 0.0); 5];
        let c = vec![Covariance3::identity(); 5];
        let j: Vec<_> = pts.iter().map(point_jacobian).collect();
        assert!(matches!(se3_step(&r, &c, &j), Err(Error::SingularSystem { .. })));
    }

    #[test]
    fn too_few_points() {
        let c = cloud();
        assert!(matches!(
            register_uncertain(&c[..2], &c, &RegistrationConfig::default()),
            Err(Error::TooFewCorrespondences { .. })
        ));
    }

    #[test]
    fn exp_of_zero_is_identity_and_inverse_composes() {
        assert_eq!(RigidTransform::exp(&Vector6::zeros()), RigidTransform::identity());
        let t = RigidTransform::exp(&Vector6::new(0.1, -0.2, 0.3, 1.0, 2.0, -0.5));
        let id = t.compose(&t.inverse());
        assert!(id.translation.norm() < 1e-12);
        assert!(rotation_angle(&id.rotation) < 1e-12);
        assert!(t.orthonormality_error() < 1e-12);
    }
}
