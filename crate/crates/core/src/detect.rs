//! Ordered-statistics CFAR along the range axis of each angular column.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::radar::{PolarCoord, RadarCube};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CfarConfig {
    /// Guard cells on each side of the cell under test.
    pub guard_cells: usize,
    /// Training cells on each side, beyond the guard cells.
    pub train_cells: usize,
    /// Rank of the ordered statistic as a fraction of the training window.
    pub os_rank_fraction: f64,
    pub scale_factor: f64,
}

impl Default for CfarConfig {
    fn default() -> Self {
        Self { guard_cells: 2, train_cells: 8, os_rank_fraction: 0.75, scale_factor: 3.0 }
    }
}

impl CfarConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_cells < 1 {
            return Err(Error::Config("CFAR needs at least one training cell".into()));
        }
        if !(self.os_rank_fraction > 0.0 && self.os_rank_fraction <= 1.0) {
            return Err(Error::Config("os_rank_fraction must lie in (0, 1]".into()));
        }
        if !(self.scale_factor > 0.0 && self.scale_factor.is_finite()) {
            return Err(Error::Config("scale_factor must be positive".into()));
        }
        Ok(())
    }

    /// Shortest profile the detector accepts.
    pub fn min_profile_len(&self) -> usize {
        2 * (self.guard_cells + self.train_cells) + 1
    }
}

/// A detected cell with its measured intensity and radial velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarDetection {
    pub coord: PolarCoord,
    pub intensity: f64,
    pub doppler: f64,
    /// Originating cube cell, when the detection came from a cube.
    pub source_bins: Option<[usize; 3]>,
}

/// OS-CFAR over a power profile.
///
/// Cell `i` is declared when `profile[i] > scale * x_(k)`, where `x_(k)` is
/// the k-th smallest training value and `k = ceil(rank_fraction * n)` for the
/// `n` training cells actually available. Near the edges the window is
/// truncated rather than padded.
pub fn os_cfar_1d(profile: &[f64], cfg: &CfarConfig) -> Result<Vec<bool>> {
    cfg.validate()?;
    let n = profile.len();
    if n < cfg.min_profile_len() {
        return Err(Error::Config(format!(
            "profile of {n} cells is too short for guard={} train={}",
            cfg.guard_cells, cfg.train_cells
        )));
    }
    let g = cfg.guard_cells;
    let t = cfg.train_cells;
    let mut window = Vec::with_capacity(2 * t);
    let mask = (0..n)
        .map(|i| {
            window.clear();
            let left_hi = i.saturating_sub(g);
            let left_lo = i.saturating_sub(g + t);
            if i > g {
                window.extend_from_slice(&profile[left_lo..left_hi]);
            }
            let right_lo = (i + g + 1).min(n);
            let right_hi = (i + g + t + 1).min(n);
            window.extend_from_slice(&profile[right_lo..right_hi]);
            if window.is_empty() {
                return false;
            }
            window.sort_by(f64::total_cmp);
            let k = ((cfg.os_rank_fraction * window.len() as f64).ceil() as usize).clamp(1, window.len());
            profile[i] > cfg.scale_factor * window[k - 1]
        })
        .collect();
    Ok(mask)
}

/// Runs [`os_cfar_1d`] along range in every (azimuth, elevation) column and
/// reads the Doppler channel at each detected cell. Output is ordered by
/// `(i_a, i_e, i_r)`.
pub fn detect_cube(cube: &RadarCube, cfg: &CfarConfig, min_intensity: f64) -> Result<Vec<PolarDetection>> {
    cfg.validate()?;
    let intr = *cube.intrinsics();
    if intr.range_bins < cfg.min_profile_len() {
        return Err(Error::Config(format!("{} range bins is too few for the CFAR window", intr.range_bins)));
    }
    let columns: Vec<(usize, usize)> =
        (0..intr.azimuth_bins).flat_map(|ia| (0..intr.elevation_bins).map(move |ie| (ia, ie))).collect();
    let per_column = par::map(&columns, |&(ia, ie)| -> Result<Vec<PolarDetection>> {
        let profile = cube.range_profile(ia, ie);
        let mask = os_cfar_1d(&profile, cfg)?;
        mask.iter()
            .enumerate()
            .filter(|&(ir, &hit)| hit && profile[ir] > 0.0 && profile[ir] >= min_intensity)
            .map(|(ir, _)| {
                let bins = [ir, ia, ie];
                Ok(PolarDetection {
                    coord: intr.bin_to_polar(bins)?,
                    intensity: profile[ir],
                    doppler: cube.doppler_at(bins) as f64,
                    source_bins: Some(bins),
                })
            })
            .collect()
    });
    let mut out = Vec::new();
    for column in per_column {
        out.extend(column?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radar::RadarIntrinsics;

    fn cfg(guard: usize, train: usize, frac: f64, scale: f64) -> CfarConfig {
        CfarConfig { guard_cells: guard, train_cells: train, os_rank_fraction: frac, scale_factor: scale }
    }

    #[test]
    fn constant_profile_never_fires() {
        let mask = os_cfar_1d(&[1.0; 40], &cfg(2, 4, 0.75, 2.0)).unwrap();
        assert!(mask.iter().all(|&m| !m));
    }

    #[test]
    fn single_spike() {
        let mut p = vec![1.0; 30];
        p[12] = 100.0;
        let mask = os_cfar_1d(&p, &cfg(1, 4, 0.75, 3.0)).unwrap();
        let hits: Vec<usize> = (0..30).filter(|&i| mask[i]).collect();
        assert_eq!(hits, vec![12]);
    }

    #[test]
    fn adjacent_spikes_shielded_by_guard() {
        let mut p = vec![1.0; 30];
        p[14] = 50.0;
        p[15] = 50.0;
        let mask = os_cfar_1d(&p, &cfg(2, 4, 0.75, 3.0)).unwrap();
        let hits: Vec<usize> = (0..30).filter(|&i| mask[i]).collect();
        assert_eq!(hits, vec![14, 15]);
    }

    #[test]
    fn spike_at_edge_uses_truncated_window() {
        let mut p = vec![1.0; 30];
        p[0] = 100.0;
        p[29] = 100.0;
        let mask = os_cfar_1d(&p, &cfg(2, 4, 0.75, 3.0)).unwrap();
        assert!(mask[0] && mask[29]);
        assert_eq!(mask.iter().filter(|&&m| m).count(), 2);
    }

    #[test]
    fn short_profile_is_config_error() {
        let err = os_cfar_1d(&[1.0; 12], &cfg(2, 4, 0.75, 3.0)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(os_cfar_1d(&[1.0; 13], &cfg(2, 4, 0.75, 3.0)).is_ok());
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(cfg(1, 0, 0.5, 1.0).validate().is_err());
        assert!(cfg(1, 2, 0.0, 1.0).validate().is_err());
        assert!(cfg(1, 2, 1.5, 1.0).validate().is_err());
        assert!(cfg(1, 2, 0.5, 0.0).validate().is_err());
    }

    fn intr() -> RadarIntrinsics {
        RadarIntrinsics::new(32, 4, 3, 0.5, (-0.6, 0.6), (-0.2, 0.2)).unwrap()
    }

    #[test]
    fn zero_cube_has_no_detections() {
        let cube = RadarCube::zeros(intr());
        assert!(detect_cube(&cube, &CfarConfig::default(), 0.0).unwrap().is_empty());
    }

    #[test]
    fn detections_sorted_and_carry_doppler() {
        let mut cube = RadarCube::zeros(intr());
        cube.set([20, 3, 0], 10.0, -0.5);
        cube.set([5, 0, 2], 10.0, 1.5);
        cube.set([25, 0, 2], 10.0, 2.5);
        let dets = detect_cube(&cube, &CfarConfig::default(), 0.0).unwrap();
        let bins: Vec<[usize; 3]> = dets.iter().map(|d| d.source_bins.unwrap()).collect();
        assert_eq!(bins, vec![[5, 0, 2], [25, 0, 2], [20, 3, 0]]);
        assert_eq!(dets[0].doppler, 1.5);
        assert_eq!(dets[2].doppler, -0.5);
        let c = intr().bin_to_polar([20, 3, 0]).unwrap();
        assert_eq!(dets[2].coord, c);
    }

    #[test]
    fn min_intensity_drops_weak_cells() {
        let mut cube = RadarCube::zeros(intr());
        cube.set([10, 1, 1], 10.0, 0.0);
        cube.set([20, 1, 1], 0.5, 0.0);
        let dets = detect_cube(&cube, &CfarConfig::default(), 1.0).unwrap();
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].source_bins, Some([10, 1, 1]));
    }
}
