//! End-to-end run on a simulated scene: render, detect, Doppler-filter,
//! propagate uncertainty, and score both the raw and the filtered cloud
//! against frustum-voxelized ground truth.

use serde::{Deserialize, Serialize};

use crate::detect::{detect_cube, CfarConfig, PolarDetection};
use crate::doppler::{consistency_filter, estimate_ego_velocity_ransac, ConsistencyVerdict, EgoVelocity, RansacConfig};
use crate::error::{Error, Result};
use crate::groundtruth::{grid_to_pointcloud, voxelize_frustum};
use crate::metrics::{evaluate, MetricReport, NearestIndex, DEFAULT_TAU, DEFAULT_ZETA};
use crate::radar::{polar_to_cartesian, CartesianPoint, RadarCube, RadarIntrinsics};
use crate::registration::RegistrationConfig;
use crate::sim::{demo_intrinsics, generate_scene, render_cube, CubeLabels, NoiseSpec, Scene, SceneConfig};
use crate::uncertainty::{nll_loss, propagate_point, PolarSigmas, UncertainPoint};

/// Which ego velocity the Doppler filter uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EgoSource {
    /// RANSAC estimate from the detections themselves.
    #[default]
    Ransac,
    /// The simulator's true ego velocity.
    Truth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub doppler: f64,
    pub tau: f64,
    pub zeta: f64,
    /// Cells below this intensity are never reported as detections.
    pub min_intensity: f64,
    pub occupancy: u32,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { doppler: 0.25, tau: DEFAULT_TAU, zeta: DEFAULT_ZETA, min_intensity: 0.0, occupancy: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct PipelineConfig {
    /// Overrides the scene and RANSAC seeds when present.
    pub seed: Option<u64>,
    pub ego_source: EgoSource,
    pub radar: Option<RadarIntrinsics>,
    pub scene: SceneConfig,
    pub noise: NoiseSpec,
    pub cfar: CfarConfig,
    pub sigmas: PolarSigmas,
    pub thresholds: Thresholds,
    pub ransac: RansacConfig,
    pub registration: RegistrationConfig,
}

impl PipelineConfig {
    pub fn intrinsics(&self) -> RadarIntrinsics {
        self.radar.unwrap_or_else(demo_intrinsics)
    }

    pub fn scene_config(&self) -> SceneConfig {
        SceneConfig { seed: self.seed.unwrap_or(self.scene.seed), ..self.scene }
    }

    pub fn ransac_config(&self) -> RansacConfig {
        RansacConfig { seed: self.seed.unwrap_or(self.ransac.seed), ..self.ransac }
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics().validate()?;
        self.noise.validate()?;
        self.cfar.validate()?;
        self.sigmas.validate()?;
        self.ransac.validate()?;
        self.registration.validate()?;
        let t = &self.thresholds;
        if !(t.doppler > 0.0 && t.tau > 0.0 && t.zeta > 0.0 && t.min_intensity >= 0.0) {
            return Err(Error::Config("thresholds must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineReport {
    pub seed: u64,
    pub scatterers: usize,
    pub ghosts: usize,
    pub truth_points: usize,
    pub detections: usize,
    pub inliers: usize,
    pub ego_true: EgoVelocity,
    pub ego_used: EgoVelocity,
    pub ransac_inliers: Option<usize>,
    pub unfiltered: MetricReport,
    pub filtered: MetricReport,
    /// Mean NLL of filtered detections matched within `tau` to ground truth,
    /// using their propagated covariances.
    pub matched_nll: Option<f64>,
}

impl PipelineReport {
    /// Machine-readable `key=value` lines in a fixed order.
    pub fn key_values(&self) -> Vec<(String, String)> {
        use crate::io::fmt_num;
        let v = |x: &EgoVelocity| format!("{},{},{}", fmt_num(x.0.x), fmt_num(x.0.y), fmt_num(x.0.z));
        let mut out = vec![
            ("seed".to_string(), self.seed.to_string()),
            ("scatterers".into(), self.scatterers.to_string()),
            ("ghosts".into(), self.ghosts.to_string()),
            ("truth_points".into(), self.truth_points.to_string()),
            ("detections".into(), self.detections.to_string()),
            ("doppler_inliers".into(), self.inliers.to_string()),
            ("ego_true".into(), v(&self.ego_true)),
            ("ego_used".into(), v(&self.ego_used)),
            ("ego_error".into(), fmt_num((self.ego_used.0 - self.ego_true.0).norm())),
            ("ransac_inliers".into(), self.ransac_inliers.map_or("none".into(), |n| n.to_string())),
        ];
        for (prefix, m) in [("unfiltered", &self.unfiltered), ("filtered", &self.filtered)] {
            for (k, x) in
                [("cd", m.chamfer), ("f", m.f_score), ("precision", m.precision), ("recall", m.recall), ("cpr", m.cpr)]
            {
                out.push((format!("{prefix}.{k}"), fmt_num(x)));
            }
        }
        out.push(("tau".into(), fmt_num(self.filtered.tau)));
        out.push(("zeta".into(), fmt_num(self.filtered.zeta)));
        out.push(("matched_nll".into(), self.matched_nll.map_or("none".into(), fmt_num)));
        out
    }
}

/// Everything a run produced, for callers that want to write artifacts.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub scene: Scene,
    pub cube: RadarCube,
    pub labels: CubeLabels,
    pub truth: Vec<CartesianPoint>,
    pub detections: Vec<PolarDetection>,
    pub verdicts: Vec<ConsistencyVerdict>,
    pub uncertain: Vec<UncertainPoint>,
    pub report: PipelineReport,
}

impl PipelineRun {
    pub fn inlier_detections(&self) -> Vec<PolarDetection> {
        self.verdicts.iter().filter(|v| v.inlier).map(|v| self.detections[v.index]).collect()
    }
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineRun> {
    cfg.validate()?;
    let intr = cfg.intrinsics();
    let scene_cfg = cfg.scene_config();
    let scene = generate_scene(&scene_cfg, &intr)?;
    let (cube, labels) = render_cube(&scene, &intr, &cfg.noise)?;
    let truth =
        grid_to_pointcloud(&voxelize_frustum(&scene.ground_truth_cloud(), &intr).grid, cfg.thresholds.occupancy);

    let detections = detect_cube(&cube, &cfg.cfar, cfg.thresholds.min_intensity)?;
    if detections.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let (ego_used, ransac_inliers) = match cfg.ego_source {
        EgoSource::Truth => (scene.ego_velocity, None),
        EgoSource::Ransac => {
            let est = estimate_ego_velocity_ransac(&detections, &cfg.ransac_config())?;
            let n = est.inlier_count();
            (est.velocity, Some(n))
        }
    };
    let verdicts = consistency_filter(&detections, &ego_used, cfg.thresholds.doppler);
    let kept: Vec<PolarDetection> = verdicts.iter().filter(|v| v.inlier).map(|v| detections[v.index]).collect();
    let uncertain: Vec<UncertainPoint> = kept.iter().map(|d| propagate_point(d.coord, &cfg.sigmas)).collect();

    let raw_cloud: Vec<CartesianPoint> = detections.iter().map(|d| polar_to_cartesian(d.coord)).collect();
    let kept_cloud: Vec<CartesianPoint> = uncertain.iter().map(|p| p.mean).collect();
    let (tau, zeta) = (cfg.thresholds.tau, cfg.thresholds.zeta);
    if kept_cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let unfiltered = evaluate(&raw_cloud, &truth, tau, zeta)?;
    let filtered = evaluate(&kept_cloud, &truth, tau, zeta)?;

    let matched_nll = if truth.is_empty() {
        None
    } else {
        let index = NearestIndex::new(&truth, tau);
        let terms: Vec<_> = uncertain
            .iter()
            .filter_map(|p| {
                let (j, d) = index.nearest(&p.mean)?;
                (d <= tau).then(|| (p.mean - truth[j], p.cov))
            })
            .collect();
        if terms.is_empty() {
            None
        } else {
            Some(nll_loss(&terms)? / terms.len() as f64)
        }
    };

    let report = PipelineReport {
        seed: scene_cfg.seed,
        scatterers: scene.scatterers.len(),
        ghosts: scene.ghosts.len(),
        truth_points: truth.len(),
        detections: detections.len(),
        inliers: kept.len(),
        ego_true: scene.ego_velocity,
        ego_used,
        ransac_inliers,
        unfiltered,
        filtered,
        matched_nll,
    };
    Ok(PipelineRun { scene, cube, labels, truth, detections, verdicts, uncertain, report })
}
