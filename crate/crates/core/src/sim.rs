//! Seeded synthetic radar scenes.
//!
//! Stationary scatterers are spread uniformly through the sensing frustum and
//! carry the Doppler of a static world seen from the moving radar. Ghosts
//! imitate multipath: they sit at an azimuth-mirrored direction of a real
//! scatterer with extra path length, and their Doppler is offset by
//! 0.5..3 m/s so they always violate the stationary-world model.
//!
//! All randomness derives from the scene seed through separate ChaCha
//! streams, so identical seeds reproduce bit-identical output.

use nalgebra::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::detect::PolarDetection;
use crate::doppler::{expected_doppler, EgoVelocity};
use crate::error::{Error, Result};
use crate::par;
use crate::radar::{cartesian_to_polar, polar_to_cartesian, CartesianPoint, PolarCoord, RadarCube, RadarIntrinsics};
use crate::uncertainty::PolarSigmas;

const STREAM_SCENE: u64 = 0;
const STREAM_NOISE: u64 = 1;
const STREAM_SAMPLES: u64 = 2;
const STREAM_SPREAD: u64 = 1 << 32;

/// Magnitude bounds of a ghost's Doppler offset (m/s).
pub const GHOST_OFFSET_RANGE: (f64, f64) = (0.5, 3.0);
/// Closest range at which scatterers are placed (m).
pub const MIN_SCATTERER_RANGE: f64 = 1.0;

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    pub position: CartesianPoint,
    pub reflectivity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ghost {
    pub position: CartesianPoint,
    pub doppler_offset: f64,
    pub reflectivity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scatterers: Vec<Scatterer>,
    pub ego_velocity: EgoVelocity,
    pub ghosts: Vec<Ghost>,
    pub seed: u64,
}

impl Scene {
    pub fn ground_truth_cloud(&self) -> Vec<CartesianPoint> {
        self.scatterers.iter().map(|s| s.position).collect()
    }

    /// Doppler a stationary scatterer at `p` shows to the moving radar.
    pub fn stationary_doppler(&self, p: &CartesianPoint) -> f64 {
        match cartesian_to_polar(p) {
            Ok(c) => expected_doppler(&self.ego_velocity, c.alpha, c.beta),
            Err(_) => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub n_scatterers: usize,
    pub n_ghosts: usize,
    /// Ego speed bound; the velocity is uniform in the ball of this radius.
    pub v_max: f64,
    /// Scatterer reflectivity is log-uniform on this interval (linear power).
    pub reflectivity: (f64, f64),
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self { n_scatterers: 40, n_ghosts: 12, v_max: 5.0, reflectivity: (100.0, 1000.0), seed: 7 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    /// Polar spread used when sampling point detections.
    pub sigmas: PolarSigmas,
    /// Mean of the exponentially distributed noise power per cell.
    pub noise_floor: f64,
    /// Gaussian footprint widths in bins along (range, azimuth, elevation).
    pub point_spread_bins: [f64; 3],
    /// Noise-only cells draw a Doppler uniformly from +-this (m/s).
    pub clutter_doppler: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            sigmas: PolarSigmas::default(),
            noise_floor: 1.0,
            point_spread_bins: [0.5, 0.4, 0.4],
            clutter_doppler: 5.0,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        self.sigmas.validate()?;
        if !(self.noise_floor >= 0.0)
            || self.point_spread_bins.iter().any(|s| !(*s >= 0.0))
            || !(self.clutter_doppler >= 0.0)
        {
            return Err(Error::Config("noise parameters must be non-negative".into()));
        }
        Ok(())
    }
}

/// Uniform sample from the frustum volume of `intr`, restricted to
/// `r >= min_range`.
pub fn sample_in_frustum(rng: &mut impl Rng, intr: &RadarIntrinsics, min_range: f64) -> PolarCoord {
    let r_max = intr.max_range();
    let r_min = min_range.min(r_max);
    let (s_lo, s_hi) = (intr.elevation_min.sin(), intr.elevation_max.sin());
    loop {
        let r3 = rng.random_range(r_min.powi(3)..r_max.powi(3));
        let c = PolarCoord {
            r: r3.cbrt(),
            alpha: rng.random_range(intr.azimuth_min..intr.azimuth_max),
            beta: rng.random_range(s_lo..s_hi).asin(),
        };
        if intr.contains(c) {
            return c;
        }
    }
}

pub fn generate_scene(cfg: &SceneConfig, intr: &RadarIntrinsics) -> Result<Scene> {
    intr.validate()?;
    let (lo, hi) = cfg.reflectivity;
    if !(lo > 0.0 && hi >= lo) || !(cfg.v_max >= 0.0) {
        return Err(Error::Config("reflectivity must be positive and v_max non-negative".into()));
    }
    let mut rng = rng(cfg.seed, STREAM_SCENE);
    let log_refl = |rng: &mut ChaCha8Rng| {
        if hi > lo {
            rng.random_range(lo.ln()..hi.ln()).exp()
        } else {
            lo
        }
    };

    let ego_velocity = {
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let dir = nalgebra::Vector3::from_fn(|_, _| normal.sample(&mut rng));
        let speed = cfg.v_max * rng.random::<f64>().cbrt();
        let n = dir.norm();
        EgoVelocity(if n > 0.0 { dir * (speed / n) } else { dir })
    };

    let polar: Vec<PolarCoord> =
        (0..cfg.n_scatterers).map(|_| sample_in_frustum(&mut rng, intr, MIN_SCATTERER_RANGE)).collect();
    let scatterers: Vec<Scatterer> = polar
        .iter()
        .map(|c| Scatterer { position: polar_to_cartesian(*c), reflectivity: log_refl(&mut rng) })
        .collect();

    let r_max = intr.max_range();
    let ghosts = (0..cfg.n_ghosts)
        .map(|_| {
            let coord = if polar.is_empty() {
                sample_in_frustum(&mut rng, intr, MIN_SCATTERER_RANGE)
            } else {
                let parent = polar[rng.random_range(0..polar.len())];
                let mut r = parent.r + rng.random_range(2.0..(0.5 * r_max).max(2.5));
                if r >= r_max {
                    r = 2.0 * r_max - r;
                }
                let mirrored = PolarCoord {
                    r: r.clamp(MIN_SCATTERER_RANGE.min(r_max * 0.5), r_max * (1.0 - 1e-9)),
                    alpha: intr.azimuth_min + intr.azimuth_max - parent.alpha,
                    beta: parent.beta,
                };
                if intr.contains(mirrored) {
                    mirrored
                } else {
                    sample_in_frustum(&mut rng, intr, MIN_SCATTERER_RANGE)
                }
            };
            let magnitude = rng.random_range(GHOST_OFFSET_RANGE.0..=GHOST_OFFSET_RANGE.1);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            Ghost {
                position: polar_to_cartesian(coord),
                doppler_offset: sign * magnitude,
                reflectivity: log_refl(&mut rng) * rng.random_range(0.3..1.0),
            }
        })
        .collect();

    Ok(Scene { scatterers, ego_velocity, ghosts, seed: cfg.seed })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellLabel {
    Background,
    Noise,
    True(usize),
    Ghost(usize),
}

impl CellLabel {
    pub fn tag(&self) -> &'static str {
        match self {
            CellLabel::Background => "BACKGROUND",
            CellLabel::Noise => "NOISE",
            CellLabel::True(_) => "TRUE",
            CellLabel::Ghost(_) => "GHOST",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CubeLabels {
    /// Per-cell label in cube order. A cell belongs to a source when that
    /// source's deposit dominates both other sources and the noise sample.
    pub cells: Vec<CellLabel>,
    /// Center cell of each scatterer (None when outside the field of view).
    pub scatterer_bins: Vec<Option<[usize; 3]>>,
    pub ghost_bins: Vec<Option<[usize; 3]>>,
}

struct Source {
    coord: PolarCoord,
    reflectivity: f64,
    doppler: f64,
    label: CellLabel,
}

fn footprint_weights(sigma: f64, center: usize, len: usize) -> Vec<(usize, f64)> {
    if sigma <= 0.0 {
        return vec![(center, 1.0)];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    (-radius..=radius)
        .filter_map(|d| {
            let i = center as i64 + d;
            (i >= 0 && (i as usize) < len).then(|| (i as usize, (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()))
        })
        .collect()
}

/// Sum of a full (unclipped) footprint kernel, per unit reflectivity.
pub fn footprint_mass(point_spread_bins: [f64; 3]) -> f64 {
    point_spread_bins
        .iter()
        .map(|&s| footprint_weights(s, 1 << 20, 1 << 21).iter().map(|(_, w)| w).sum::<f64>())
        .product()
}

/// Renders a scene into an intensity/Doppler cube plus per-cell labels.
pub fn render_cube(scene: &Scene, intr: &RadarIntrinsics, noise: &NoiseSpec) -> Result<(RadarCube, CubeLabels)> {
    intr.validate()?;
    noise.validate()?;
    let mut sources = Vec::new();
    let mut scatterer_bins = Vec::new();
    let mut ghost_bins = Vec::new();
    for (i, s) in scene.scatterers.iter().enumerate() {
        let c = cartesian_to_polar(&s.position).ok();
        scatterer_bins.push(c.and_then(|c| intr.polar_to_bin(c).ok()));
        if let Some(coord) = c {
            let doppler = expected_doppler(&scene.ego_velocity, coord.alpha, coord.beta);
            sources.push(Source { coord, reflectivity: s.reflectivity, doppler, label: CellLabel::True(i) });
        }
    }
    for (i, g) in scene.ghosts.iter().enumerate() {
        let c = cartesian_to_polar(&g.position).ok();
        ghost_bins.push(c.and_then(|c| intr.polar_to_bin(c).ok()));
        if let Some(coord) = c {
            let doppler = expected_doppler(&scene.ego_velocity, coord.alpha, coord.beta) + g.doppler_offset;
            sources.push(Source { coord, reflectivity: g.reflectivity, doppler, label: CellLabel::Ghost(i) });
        }
    }

    let deposits = par::map(&sources, |src| -> Vec<(usize, f64)> {
        let Ok(center) = intr.polar_to_bin(src.coord) else {
            return Vec::new();
        };
        let wr = footprint_weights(noise.point_spread_bins[0], center[0], intr.range_bins);
        let wa = footprint_weights(noise.point_spread_bins[1], center[1], intr.azimuth_bins);
        let we = footprint_weights(noise.point_spread_bins[2], center[2], intr.elevation_bins);
        let mut out = Vec::with_capacity(wr.len() * wa.len() * we.len());
        for &(ir, a) in &wr {
            for &(ia, b) in &wa {
                for &(ie, c) in &we {
                    out.push((intr.flat_index([ir, ia, ie]), src.reflectivity * a * b * c));
                }
            }
        }
        out
    });

    let n = intr.cell_count();
    let mut intensity = vec![0.0f64; n];
    let mut dominant: Vec<Option<(f64, usize)>> = vec![None; n];
    for (si, dep) in deposits.iter().enumerate() {
        for &(cell, amount) in dep {
            intensity[cell] += amount;
            if dominant[cell].is_none_or(|(best, _)| amount > best) {
                dominant[cell] = Some((amount, si));
            }
        }
    }

    let mut rng = rng(scene.seed, STREAM_NOISE);
    let exp = (noise.noise_floor > 0.0).then(|| Exp::new(1.0 / noise.noise_floor).expect("positive rate"));
    let mut doppler = vec![0.0f32; n];
    let mut cells = vec![CellLabel::Background; n];
    for cell in 0..n {
        let noise_power = exp.as_ref().map_or(0.0, |e| e.sample(&mut rng));
        let clutter_doppler = if noise.clutter_doppler > 0.0 {
            rng.random_range(-noise.clutter_doppler..=noise.clutter_doppler)
        } else {
            0.0
        };
        intensity[cell] += noise_power;
        match dominant[cell] {
            Some((amount, si)) if amount > noise_power => {
                doppler[cell] = sources[si].doppler as f32;
                cells[cell] = sources[si].label;
            }
            _ => {
                if noise_power > 0.0 {
                    doppler[cell] = clutter_doppler as f32;
                }
                if intensity[cell] > noise.noise_floor && noise_power > 0.0 {
                    cells[cell] = CellLabel::Noise;
                }
            }
        }
    }
    let cube = RadarCube::from_parts(*intr, intensity.iter().map(|&v| v as f32).collect(), doppler)?;
    Ok((cube, CubeLabels { cells, scatterer_bins, ghost_bins }))
}

/// Standard deviations for point-detection sampling; zeros are allowed and
/// give exact measurements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingNoise {
    pub sigma_r: f64,
    pub sigma_alpha: f64,
    pub sigma_beta: f64,
    pub sigma_doppler: f64,
}

impl SamplingNoise {
    pub fn from_sigmas(s: &PolarSigmas, sigma_doppler: f64) -> Self {
        Self { sigma_r: s.sigma_r, sigma_alpha: s.sigma_alpha, sigma_beta: s.sigma_beta, sigma_doppler }
    }

    fn validate(&self) -> Result<()> {
        if [self.sigma_r, self.sigma_alpha, self.sigma_beta, self.sigma_doppler]
            .iter()
            .all(|s| *s >= 0.0 && s.is_finite())
        {
            Ok(())
        } else {
            Err(Error::Config("sampling sigmas must be non-negative".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectionLabel {
    True(usize),
    Ghost(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledDetection {
    pub detection: PolarDetection,
    pub label: DetectionLabel,
}

fn gaussian(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma > 0.0 {
        Normal::new(0.0, sigma).expect("positive sigma").sample(rng)
    } else {
        0.0
    }
}

/// One point detection per scatterer and ghost, with Gaussian polar noise
/// around the true coordinates. Doppler is the true radial velocity (plus
/// the ghost offset) with optional Gaussian noise.
pub fn sample_detections(scene: &Scene, noise: &SamplingNoise, seed: u64) -> Result<Vec<LabeledDetection>> {
    noise.validate()?;
    let mut rng = rng(seed, STREAM_SAMPLES);
    let sources = scene
        .scatterers
        .iter()
        .enumerate()
        .map(|(i, s)| (s.position, s.reflectivity, 0.0, DetectionLabel::True(i)))
        .chain(
            scene
                .ghosts
                .iter()
                .enumerate()
                .map(|(i, g)| (g.position, g.reflectivity, g.doppler_offset, DetectionLabel::Ghost(i))),
        );
    let mut out = Vec::new();
    for (position, reflectivity, offset, label) in sources {
        let Ok(truth) = cartesian_to_polar(&position) else { continue };
        let coord = PolarCoord {
            r: (truth.r + gaussian(&mut rng, noise.sigma_r)).max(0.0),
            alpha: truth.alpha + gaussian(&mut rng, noise.sigma_alpha),
            beta: truth.beta + gaussian(&mut rng, noise.sigma_beta),
        };
        let doppler = expected_doppler(&scene.ego_velocity, truth.alpha, truth.beta)
            + offset
            + gaussian(&mut rng, noise.sigma_doppler);
        out.push(LabeledDetection {
            detection: PolarDetection { coord, intensity: reflectivity, doppler, source_bins: None },
            label,
        });
    }
    Ok(out)
}

/// Cartesian positions of `n` polar-perturbed copies of `coord`. Work is
/// split into fixed chunks with their own RNG streams, so the output does
/// not depend on the thread count.
pub fn sample_polar_spread(coord: PolarCoord, sigmas: &PolarSigmas, n: usize, seed: u64) -> Vec<CartesianPoint> {
    const CHUNK: usize = 1 << 14;
    let chunks = n.div_ceil(CHUNK);
    let parts = par::map_range(chunks, |k| {
        let mut rng = rng(seed, STREAM_SPREAD + k as u64);
        let nr = Normal::new(0.0, sigmas.sigma_r).expect("positive sigma");
        let na = Normal::new(0.0, sigmas.sigma_alpha).expect("positive sigma");
        let nb = Normal::new(0.0, sigmas.sigma_beta).expect("positive sigma");
        let len = CHUNK.min(n - k * CHUNK);
        (0..len)
            .map(|_| {
                polar_to_cartesian(PolarCoord {
                    r: coord.r + nr.sample(&mut rng),
                    alpha: coord.alpha + na.sample(&mut rng),
                    beta: coord.beta + nb.sample(&mut rng),
                })
            })
            .collect::<Vec<_>>()
    });
    parts.into_iter().flatten().collect()
}

/// Intrinsics of the bundled demo sensor: 32 m in 0.25 m bins, +-60 deg
/// azimuth in 32 bins, +-15 deg elevation in 8 bins.
pub fn demo_intrinsics() -> RadarIntrinsics {
    RadarIntrinsics::new(
        128,
        32,
        8,
        0.25,
        (-60f64.to_radians(), 60f64.to_radians()),
        (-15f64.to_radians(), 15f64.to_radians()),
    )
    .expect("demo intrinsics are valid")
}

pub fn origin() -> CartesianPoint {
    Point3::origin()
}
