//! Doppler kinematics of stationary scatterers.
//!
//! For a radar moving with velocity `v` through a static world, a scatterer in
//! direction `u(alpha, beta)` shows radial velocity `-<v, u>` (positive
//! Doppler means receding). Detections that violate this are either moving
//! targets or spurious returns such as multipath ghosts.

use nalgebra::{DMatrix, DVector, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detect::PolarDetection;
use crate::error::{Error, Result};
use crate::par;
use crate::radar::direction_vector;

pub const DEFAULT_V_MAX: f64 = 50.0;

/// Smallest singular value of the stacked direction matrix below which the
/// geometry does not determine a 3-D velocity.
pub const MIN_SINGULAR_VALUE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoVelocity(pub Vector3<f64>);

impl EgoVelocity {
    pub fn new(vx: f64, vy: f64, vz: f64) -> Self {
        Self(Vector3::new(vx, vy, vz))
    }

    pub fn zero() -> Self {
        Self(Vector3::zeros())
    }

    pub fn check(&self, v_max: f64) -> Result<()> {
        if self.0.iter().all(|c| c.is_finite()) && self.0.norm() <= v_max {
            Ok(())
        } else {
            Err(Error::Config(format!("ego-velocity {:?} exceeds v_max = {v_max}", self.0)))
        }
    }
}

pub fn expected_doppler(v: &EgoVelocity, alpha: f64, beta: f64) -> f64 {
    -v.0.dot(&direction_vector(alpha, beta))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencyVerdict {
    pub index: usize,
    pub predicted_doppler: f64,
    pub residual: f64,
    pub inlier: bool,
}

/// Compares every detection's Doppler against the stationary-world prediction.
pub fn consistency_filter(dets: &[PolarDetection], v: &EgoVelocity, threshold: f64) -> Vec<ConsistencyVerdict> {
    dets.iter()
        .enumerate()
        .map(|(index, d)| {
            let predicted_doppler = expected_doppler(v, d.coord.alpha, d.coord.beta);
            let residual = d.doppler - predicted_doppler;
            ConsistencyVerdict { index, predicted_doppler, residual, inlier: residual.abs() <= threshold }
        })
        .collect()
}

/// Least-squares ego-velocity from `d_i = -<v, u_i>` via SVD.
pub fn estimate_ego_velocity_ls(dets: &[PolarDetection]) -> Result<EgoVelocity> {
    let refs: Vec<&PolarDetection> = dets.iter().collect();
    solve_ls(&refs)
}

fn solve_ls(dets: &[&PolarDetection]) -> Result<EgoVelocity> {
    if dets.len() < 3 {
        return Err(Error::DegenerateGeometry { smallest_singular_value: 0.0 });
    }
    let a = DMatrix::from_fn(dets.len(), 3, |i, j| -direction_vector(dets[i].coord.alpha, dets[i].coord.beta)[j]);
    let b = DVector::from_iterator(dets.len(), dets.iter().map(|d| d.doppler));
    let svd = a.svd(true, true);
    let smallest = svd.singular_values.min();
    if !(smallest > MIN_SINGULAR_VALUE) {
        return Err(Error::DegenerateGeometry { smallest_singular_value: smallest });
    }
    let x = svd.solve(&b, 0.0).map_err(|e| Error::Shape(e.to_string()))?;
    Ok(EgoVelocity::new(x[0], x[1], x[2]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Absolute Doppler residual (m/s) for a detection to count as inlier.
    pub inlier_threshold: f64,
    pub min_sample: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self { iterations: 200, inlier_threshold: 0.2, min_sample: 3, seed: 0 }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::Config("RANSAC needs at least one iteration".into()));
        }
        if !(self.inlier_threshold > 0.0) {
            return Err(Error::Config("inlier threshold must be positive".into()));
        }
        if self.min_sample < 3 {
            return Err(Error::Config("a 3-D velocity needs samples of at least 3".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacEstimate {
    pub velocity: EgoVelocity,
    pub inliers: Vec<bool>,
}

impl RansacEstimate {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone)]
struct Hypothesis {
    iteration: usize,
    inliers: Vec<bool>,
    count: usize,
    rms: f64,
}

/// Ranking: more inliers, then lower inlier RMS, then earlier iteration.
fn better(a: &Hypothesis, b: &Hypothesis) -> bool {
    b.count.cmp(&a.count).then(a.rms.total_cmp(&b.rms)).then(a.iteration.cmp(&b.iteration)).is_lt()
}

fn pick(a: Option<Hypothesis>, b: Option<Hypothesis>) -> Option<Hypothesis> {
    match (a, b) {
        (Some(a), Some(b)) => Some(if better(&a, &b) { a } else { b }),
        (a, b) => a.or(b),
    }
}

/// RANSAC over minimal samples, refit by least squares on the winning
/// consensus set.
///
/// Each iteration draws from its own ChaCha stream derived from the master
/// seed, so iterations can run in parallel and the result is bit-identical
/// for a given seed. A minimal sample always fits itself exactly, so a
/// hypothesis is only accepted when its consensus extends beyond the sample.
pub fn estimate_ego_velocity_ransac(dets: &[PolarDetection], cfg: &RansacConfig) -> Result<RansacEstimate> {
    cfg.validate()?;
    if dets.len() < cfg.min_sample {
        return Err(Error::Config(format!(
            "{} detections is fewer than the minimal sample of {}",
            dets.len(),
            cfg.min_sample
        )));
    }
    let hypotheses = par::map_range(cfg.iterations, |iteration| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(iteration as u64);
        let picked: Vec<&PolarDetection> =
            sample(&mut rng, dets.len(), cfg.min_sample).into_iter().map(|i| &dets[i]).collect();
        let v = solve_ls(&picked).ok()?;
        let verdicts = consistency_filter(dets, &v, cfg.inlier_threshold);
        let inliers: Vec<bool> = verdicts.iter().map(|c| c.inlier).collect();
        let count = inliers.iter().filter(|&&b| b).count();
        let sq: f64 = verdicts.iter().filter(|c| c.inlier).map(|c| c.residual * c.residual).sum();
        Some(Hypothesis { iteration, inliers, count, rms: (sq / count.max(1) as f64).sqrt() })
    });
    let best =
        hypotheses.into_iter().fold(None, pick).ok_or(Error::DegenerateGeometry { smallest_singular_value: 0.0 })?;
    if best.count <= cfg.min_sample {
        return Err(Error::NoConsensus { best_inliers: best.count, min_sample: cfg.min_sample });
    }
    let support: Vec<&PolarDetection> =
        dets.iter().zip(&best.inliers).filter_map(|(d, &keep)| keep.then_some(d)).collect();
    let velocity = solve_ls(&support)?;
    Ok(RansacEstimate { velocity, inliers: best.inliers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radar::PolarCoord;
    use std::f64::consts::FRAC_PI_2;

    fn det(alpha: f64, beta: f64, doppler: f64) -> PolarDetection {
        PolarDetection { coord: PolarCoord::new(10.0, alpha, beta), intensity: 1.0, doppler, source_bins: None }
    }

    #[test]
    fn expected_doppler_examples() {
        assert_eq!(expected_doppler(&EgoVelocity::zero(), 0.3, 0.1), 0.0);
        assert_eq!(expected_doppler(&EgoVelocity::new(1.0, 0.0, 0.0), 0.0, 0.0), -1.0);
        assert!(expected_doppler(&EgoVelocity::new(1.0, 0.0, 0.0), FRAC_PI_2, 0.0).abs() < 1e-15);
    }

    #[test]
    fn filter_examples() {
        let v = EgoVelocity::new(2.0, 0.5, 0.0);
        let exact = expected_doppler(&v, 0.2, 0.1);
        let dets = [det(0.2, 0.1, exact), det(0.2, 0.1, exact + 1.0)];
        let verdicts = consistency_filter(&dets, &v, 0.25);
        assert!(verdicts[0].inlier && verdicts[0].residual == 0.0);
        assert!(!verdicts[1].inlier);
        assert_eq!(verdicts[1].index, 1);
        assert!(consistency_filter(&dets, &v, f64::INFINITY).iter().all(|c| c.inlier));
    }

    #[test]
    fn ls_axis_decoupling() {
        let dets = [det(0.0, 0.0, -1.0), det(FRAC_PI_2, 0.0, 0.0), det(0.0, FRAC_PI_2, 0.0)];
        let v = estimate_ego_velocity_ls(&dets).unwrap();
        assert!((v.0 - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn coplanar_directions_are_degenerate() {
        let dets: Vec<_> = (0..6).map(|i| det(-0.5 + 0.2 * i as f64, 0.0, -1.0)).collect();
        assert!(matches!(estimate_ego_velocity_ls(&dets), Err(Error::DegenerateGeometry { .. })));
    }

    #[test]
    fn ransac_validates_config() {
        let dets = [det(0.0, 0.0, -1.0)];
        assert!(estimate_ego_velocity_ransac(&dets, &RansacConfig::default()).is_err());
        let cfg = RansacConfig { inlier_threshold: 0.0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn ego_velocity_bound() {
        assert!(EgoVelocity::new(10.0, 0.0, 0.0).check(DEFAULT_V_MAX).is_ok());
        assert!(EgoVelocity::new(60.0, 0.0, 0.0).check(DEFAULT_V_MAX).is_err());
    }
}
