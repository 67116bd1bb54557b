//! Radar frame geometry, intrinsics and the two-channel measurement cube.
//!
//! Frame convention: x along boresight, y to the left, z up. Azimuth is
//! measured counter-clockwise from boresight (positive to the left) and
//! elevation upward from the x-y plane.

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type CartesianPoint = Point3<f64>;

/// Ranges below this are treated as the origin, where angles are undefined.
pub const MIN_POLAR_RANGE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarCoord {
    pub r: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl PolarCoord {
    pub fn new(r: f64, alpha: f64, beta: f64) -> Self {
        Self { r, alpha, beta }
    }
}

pub fn polar_to_cartesian(c: PolarCoord) -> CartesianPoint {
    Point3::from(direction_vector(c.alpha, c.beta) * c.r)
}

pub fn cartesian_to_polar(p: &CartesianPoint) -> Result<PolarCoord> {
    let r = p.coords.norm();
    if !(r >= MIN_POLAR_RANGE) {
        return Err(Error::DegenerateOrigin(r));
    }
    Ok(PolarCoord { r, alpha: p.y.atan2(p.x), beta: (p.z / r).clamp(-1.0, 1.0).asin() })
}

pub fn direction_vector(alpha: f64, beta: f64) -> Vector3<f64> {
    let (sa, ca) = alpha.sin_cos();
    let (sb, cb) = beta.sin_cos();
    Vector3::new(ca * cb, sa * cb, sb)
}

/// Sensor grid description. `max_range` is derived as
/// `range_bins * range_resolution` so the two can never disagree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadarIntrinsics {
    pub range_bins: usize,
    pub azimuth_bins: usize,
    pub elevation_bins: usize,
    pub range_resolution: f64,
    pub azimuth_min: f64,
    pub azimuth_max: f64,
    pub elevation_min: f64,
    pub elevation_max: f64,
}

/// Uniform partition of `[min, max)` into `bins` half-open cells.
#[derive(Debug, Clone, Copy)]
struct Axis {
    min: f64,
    width: f64,
    bins: usize,
}

impl Axis {
    fn edge(&self, i: usize) -> f64 {
        self.min + i as f64 * self.width
    }

    fn center(&self, i: usize) -> f64 {
        self.min + (i as f64 + 0.5) * self.width
    }

    /// Bin containing `v`, consistent with `edge` to the last ulp.
    fn locate(&self, v: f64) -> Option<usize> {
        if !v.is_finite() || v < self.edge(0) || v >= self.edge(self.bins) {
            return None;
        }
        let mut i = (((v - self.min) / self.width).floor().max(0.0) as usize).min(self.bins - 1);
        while i > 0 && v < self.edge(i) {
            i -= 1;
        }
        while i + 1 < self.bins && v >= self.edge(i + 1) {
            i += 1;
        }
        Some(i)
    }
}

impl RadarIntrinsics {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        range_bins: usize,
        azimuth_bins: usize,
        elevation_bins: usize,
        range_resolution: f64,
        azimuth: (f64, f64),
        elevation: (f64, f64),
    ) -> Result<Self> {
        let intr = Self {
            range_bins,
            azimuth_bins,
            elevation_bins,
            range_resolution,
            azimuth_min: azimuth.0,
            azimuth_max: azimuth.1,
            elevation_min: elevation.0,
            elevation_max: elevation.1,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        if self.range_bins == 0 || self.azimuth_bins == 0 || self.elevation_bins == 0 {
            return Err(Error::Config("bin counts must be at least 1".into()));
        }
        if !(self.range_resolution > 0.0 && self.range_resolution.is_finite()) {
            return Err(Error::Config("range resolution must be positive".into()));
        }
        if !(self.azimuth_min < self.azimuth_max) || !(self.elevation_min < self.elevation_max) {
            return Err(Error::Config("angle spans must satisfy min < max".into()));
        }
        Ok(())
    }

    pub fn max_range(&self) -> f64 {
        self.range_bins as f64 * self.range_resolution
    }

    pub fn cell_count(&self) -> usize {
        self.range_bins * self.azimuth_bins * self.elevation_bins
    }

    pub fn azimuth_resolution(&self) -> f64 {
        (self.azimuth_max - self.azimuth_min) / self.azimuth_bins as f64
    }

    pub fn elevation_resolution(&self) -> f64 {
        (self.elevation_max - self.elevation_min) / self.elevation_bins as f64
    }

    fn range_axis(&self) -> Axis {
        Axis { min: 0.0, width: self.range_resolution, bins: self.range_bins }
    }

    fn azimuth_axis(&self) -> Axis {
        Axis { min: self.azimuth_min, width: self.azimuth_resolution(), bins: self.azimuth_bins }
    }

    fn elevation_axis(&self) -> Axis {
        Axis { min: self.elevation_min, width: self.elevation_resolution(), bins: self.elevation_bins }
    }

    /// Flat index of a cell, range-major then azimuth then elevation.
    pub fn flat_index(&self, bins: [usize; 3]) -> usize {
        (bins[0] * self.azimuth_bins + bins[1]) * self.elevation_bins + bins[2]
    }

    pub fn unflatten(&self, idx: usize) -> [usize; 3] {
        let ie = idx % self.elevation_bins;
        let rest = idx / self.elevation_bins;
        [rest / self.azimuth_bins, rest % self.azimuth_bins, ie]
    }

    fn check_bins(&self, bins: [usize; 3]) -> Result<()> {
        let lens = [self.range_bins, self.azimuth_bins, self.elevation_bins];
        for ((axis, &index), &len) in ["range", "azimuth", "elevation"].iter().zip(&bins).zip(&lens) {
            if index >= len {
                return Err(Error::BinIndex { axis, index, len });
            }
        }
        Ok(())
    }

    /// Polar coordinate of a cell center.
    pub fn bin_to_polar(&self, bins: [usize; 3]) -> Result<PolarCoord> {
        self.check_bins(bins)?;
        Ok(PolarCoord {
            r: self.range_axis().center(bins[0]),
            alpha: self.azimuth_axis().center(bins[1]),
            beta: self.elevation_axis().center(bins[2]),
        })
    }

    /// Cell containing `c`; every axis is half-open `[low, high)`.
    pub fn polar_to_bin(&self, c: PolarCoord) -> Result<[usize; 3]> {
        match (self.range_axis().locate(c.r), self.azimuth_axis().locate(c.alpha), self.elevation_axis().locate(c.beta))
        {
            (Some(ir), Some(ia), Some(ie)) => Ok([ir, ia, ie]),
            _ => Err(Error::OutsideFov),
        }
    }

    /// Lower and upper edges of a cell along (range, azimuth, elevation).
    pub fn cell_bounds(&self, bins: [usize; 3]) -> Result<[(f64, f64); 3]> {
        self.check_bins(bins)?;
        let axes = [self.range_axis(), self.azimuth_axis(), self.elevation_axis()];
        Ok(std::array::from_fn(|k| (axes[k].edge(bins[k]), axes[k].edge(bins[k] + 1))))
    }

    pub fn contains(&self, c: PolarCoord) -> bool {
        self.polar_to_bin(c).is_ok()
    }
}

/// Range x azimuth x elevation cube holding linear power and radial velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct RadarCube {
    intrinsics: RadarIntrinsics,
    intensity: Vec<f32>,
    doppler: Vec<f32>,
}

impl RadarCube {
    pub fn zeros(intrinsics: RadarIntrinsics) -> Self {
        let n = intrinsics.cell_count();
        Self { intrinsics, intensity: vec![0.0; n], doppler: vec![0.0; n] }
    }

    pub fn from_parts(intrinsics: RadarIntrinsics, intensity: Vec<f32>, doppler: Vec<f32>) -> Result<Self> {
        intrinsics.validate()?;
        let n = intrinsics.cell_count();
        if intensity.len() != n || doppler.len() != n {
            return Err(Error::Shape(format!(
                "cube needs {n} cells per channel, got {} intensity and {} doppler",
                intensity.len(),
                doppler.len()
            )));
        }
        if intensity.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config("intensity must be non-negative".into()));
        }
        Ok(Self { intrinsics, intensity, doppler })
    }

    pub fn intrinsics(&self) -> &RadarIntrinsics {
        &self.intrinsics
    }

    pub fn intensity(&self) -> &[f32] {
        &self.intensity
    }

    pub fn doppler(&self) -> &[f32] {
        &self.doppler
    }

    pub fn intensity_at(&self, bins: [usize; 3]) -> f32 {
        self.intensity[self.intrinsics.flat_index(bins)]
    }

    pub fn doppler_at(&self, bins: [usize; 3]) -> f32 {
        self.doppler[self.intrinsics.flat_index(bins)]
    }

    pub fn set(&mut self, bins: [usize; 3], intensity: f32, doppler: f32) {
        assert!(intensity >= 0.0, "intensity must be non-negative");
        let i = self.intrinsics.flat_index(bins);
        self.intensity[i] = intensity;
        self.doppler[i] = doppler;
    }

    /// Intensity along range for one angular column.
    pub fn range_profile(&self, ia: usize, ie: usize) -> Vec<f64> {
        (0..self.intrinsics.range_bins).map(|ir| self.intensity_at([ir, ia, ie]) as f64).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, SQRT_2};

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn polar_to_cartesian_axes() {
        let o = polar_to_cartesian(PolarCoord::new(0.0, 1.3, -0.4));
        assert_eq!(o.coords.norm(), 0.0);
        let p = polar_to_cartesian(PolarCoord::new(1.0, 0.0, 0.0));
        assert_eq!((p.x, p.y, p.z), (1.0, 0.0, 0.0));
        let p = polar_to_cartesian(PolarCoord::new(2.0, FRAC_PI_2, 0.0));
        assert!(close(p.x, 0.0) && close(p.y, 2.0) && close(p.z, 0.0));
    }

    #[test]
    fn cartesian_to_polar_examples() {
        let c = cartesian_to_polar(&Point3::new(1.0, 0.0, 0.0)).unwrap();
        assert_eq!((c.r, c.alpha, c.beta), (1.0, 0.0, 0.0));
        let c = cartesian_to_polar(&Point3::new(0.0, 0.0, 1.0)).unwrap();
        assert!(close(c.r, 1.0) && close(c.alpha, 0.0) && close(c.beta, FRAC_PI_2));
        let c = cartesian_to_polar(&Point3::new(1.0, 1.0, 0.0)).unwrap();
        assert!(close(c.r, SQRT_2) && close(c.alpha, FRAC_PI_4) && close(c.beta, 0.0));
    }

    #[test]
    fn origin_is_degenerate() {
        assert!(matches!(cartesian_to_polar(&Point3::new(0.0, 1e-10, 0.0)), Err(Error::DegenerateOrigin(_))));
    }

    #[test]
    fn direction_vector_axes() {
        let d = direction_vector(0.0, 0.0);
        assert_eq!(d, Vector3::new(1.0, 0.0, 0.0));
        let d = direction_vector(FRAC_PI_2, 0.0);
        assert!(close(d.x, 0.0) && close(d.y, 1.0));
        let d = direction_vector(0.0, FRAC_PI_2);
        assert!(close(d.x, 0.0) && close(d.z, 1.0));
    }

    #[test]
    fn bin_centers() {
        let intr = RadarIntrinsics::new(10, 2, 1, 0.1, (-1.0, 1.0), (-0.1, 0.1)).unwrap();
        let c = intr.bin_to_polar([0, 0, 0]).unwrap();
        assert!(close(c.r, 0.05));
        assert!(close(c.alpha, -0.5));
        assert!(close(c.beta, 0.0));
        assert!(matches!(intr.bin_to_polar([0, 2, 0]), Err(Error::BinIndex { axis: "azimuth", index: 2, len: 2 })));
    }

    #[test]
    fn bin_round_trip_exhaustive() {
        let intr = RadarIntrinsics::new(4, 4, 2, 0.25, (-0.7, 0.9), (-0.3, 0.2)).unwrap();
        for ir in 0..4 {
            for ia in 0..4 {
                for ie in 0..2 {
                    let c = intr.bin_to_polar([ir, ia, ie]).unwrap();
                    assert_eq!(intr.polar_to_bin(c).unwrap(), [ir, ia, ie]);
                }
            }
        }
    }

    #[test]
    fn half_open_boundaries() {
        let intr = RadarIntrinsics::new(4, 4, 2, 0.25, (-1.0, 1.0), (-0.5, 0.5)).unwrap();
        assert_eq!(intr.max_range(), 1.0);
        assert!(intr.polar_to_bin(PolarCoord::new(1.0, 0.0, 0.0)).is_err());
        assert!(intr.polar_to_bin(PolarCoord::new(0.5, 1.0, 0.0)).is_err());
        assert_eq!(intr.polar_to_bin(PolarCoord::new(0.25, -1.0, -0.5)).unwrap(), [1, 0, 0]);
        assert_eq!(intr.polar_to_bin(PolarCoord::new(0.0, 0.0, 0.0)).unwrap(), [0, 2, 1]);
    }

    #[test]
    fn flat_index_round_trip() {
        let intr = RadarIntrinsics::new(3, 5, 2, 1.0, (-1.0, 1.0), (-0.5, 0.5)).unwrap();
        for i in 0..intr.cell_count() {
            assert_eq!(intr.flat_index(intr.unflatten(i)), i);
        }
        assert_eq!(intr.flat_index([1, 0, 0]), 10);
    }

    #[test]
    fn invalid_intrinsics_rejected() {
        assert!(RadarIntrinsics::new(0, 1, 1, 1.0, (0.0, 1.0), (0.0, 1.0)).is_err());
        assert!(RadarIntrinsics::new(1, 1, 1, 1.0, (1.0, 1.0), (0.0, 1.0)).is_err());
        assert!(RadarIntrinsics::new(1, 1, 1, -1.0, (0.0, 1.0), (0.0, 1.0)).is_err());
    }

    #[test]
    fn cube_shape_checked() {
        let intr = RadarIntrinsics::new(2, 2, 1, 1.0, (-1.0, 1.0), (-0.5, 0.5)).unwrap();
        assert!(RadarCube::from_parts(intr, vec![0.0; 3], vec![0.0; 4]).is_err());
        assert!(RadarCube::from_parts(intr, vec![-1.0; 4], vec![0.0; 4]).is_err());
        let cube = RadarCube::from_parts(intr, vec![1.0; 4], vec![0.5; 4]).unwrap();
        assert_eq!(cube.doppler_at([1, 1, 0]), 0.5);
    }
}
