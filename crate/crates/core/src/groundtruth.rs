//! Occupancy ground truth on the radar's own polar grid.
//!
//! Reference points are binned into range/azimuth/elevation frustum cells
//! using the same half-open bin edges as the radar cube, so every cube cell
//! has a matching label.

use crate::radar::{cartesian_to_polar, polar_to_cartesian, CartesianPoint, RadarIntrinsics};

/// Per-cell point counts over the radar grid. Binary occupancy is
/// `count >= 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    intrinsics: RadarIntrinsics,
    counts: Vec<u32>,
}

impl OccupancyGrid {
    pub fn empty(intrinsics: RadarIntrinsics) -> Self {
        Self { counts: vec![0; intrinsics.cell_count()], intrinsics }
    }

    pub fn from_counts(intrinsics: RadarIntrinsics, counts: Vec<u32>) -> Option<Self> {
        (counts.len() == intrinsics.cell_count()).then_some(Self { intrinsics, counts })
    }

    pub fn intrinsics(&self) -> &RadarIntrinsics {
        &self.intrinsics
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn count_at(&self, bins: [usize; 3]) -> u32 {
        self.counts[self.intrinsics.flat_index(bins)]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    /// Same grid with every count clamped to `{0, 1}`.
    pub fn binary(&self) -> Self {
        Self { intrinsics: self.intrinsics, counts: self.counts.iter().map(|&c| c.min(1)).collect() }
    }

    pub fn occupied_cells(&self) -> Vec<[usize; 3]> {
        self.counts.iter().enumerate().filter(|(_, &c)| c > 0).map(|(i, _)| self.intrinsics.unflatten(i)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Voxelization {
    pub grid: OccupancyGrid,
    /// Points beyond `max_range`, outside the angular field of view, or at
    /// the origin.
    pub outside_fov: usize,
}

pub fn voxelize_frustum(cloud: &[CartesianPoint], intr: &RadarIntrinsics) -> Voxelization {
    let mut grid = OccupancyGrid::empty(*intr);
    let mut outside_fov = 0;
    for p in cloud {
        let bins = cartesian_to_polar(p).and_then(|c| intr.polar_to_bin(c));
        match bins {
            Ok(b) => grid.counts[intr.flat_index(b)] += 1,
            Err(_) => outside_fov += 1,
        }
    }
    Voxelization { grid, outside_fov }
}

/// Cell centers of every cell whose count reaches `threshold`, in flat index
/// order.
pub fn grid_to_pointcloud(g: &OccupancyGrid, threshold: u32) -> Vec<CartesianPoint> {
    g.counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0 && c >= threshold)
        .map(|(i, _)| {
            let c = g.intrinsics.bin_to_polar(g.intrinsics.unflatten(i)).expect("flat index within grid");
            polar_to_cartesian(c)
        })
        .collect()
}

/// Drops points at or below `z_cutoff` (a flat-ground approximation).
pub fn remove_ground(cloud: &[CartesianPoint], z_cutoff: f64) -> Vec<CartesianPoint> {
    cloud.iter().filter(|p| p.z > z_cutoff).copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Point3;

    fn intr() -> RadarIntrinsics {
        RadarIntrinsics::new(8, 6, 4, 0.5, (-0.9, 0.9), (-0.3, 0.3)).unwrap()
    }

    #[test]
    fn empty_cloud_gives_empty_grid() {
        let v = voxelize_frustum(&[], &intr());
        assert_eq!(v.grid.total(), 0);
        assert_eq!(v.outside_fov, 0);
        assert!(grid_to_pointcloud(&v.grid, 1).is_empty());
    }

    #[test]
    fn cell_center_occupies_one_cell() {
        let i = intr();
        let c = i.bin_to_polar([3, 4, 1]).unwrap();
        let v = voxelize_frustum(&[polar_to_cartesian(c)], &i);
        assert_eq!(v.grid.occupied_cells(), vec![[3, 4, 1]]);
        let back = grid_to_pointcloud(&v.grid, 1);
        assert_eq!(back.len(), 1);
        assert!((back[0] - polar_to_cartesian(c)).norm() < 1e-12);
    }

    #[test]
    fn out_of_fov_points_are_counted() {
        let i = intr();
        let cloud = [
            Point3::new(4.0, 0.0, 0.0),  // max range exactly: excluded
            Point3::new(-1.0, 0.0, 0.0), // behind the sensor
            Point3::new(0.0, 0.0, 0.0),  // origin
            Point3::new(1.0, 0.0, 2.0),  // too high
            Point3::new(1.0, 0.1, 0.05),
        ];
        let v = voxelize_frustum(&cloud, &i);
        assert_eq!(v.outside_fov, 4);
        assert_eq!(v.grid.total(), 1);
    }

    #[test]
    fn binary_and_thresholds() {
        let i = intr();
        let p = polar_to_cartesian(i.bin_to_polar([1, 1, 1]).unwrap());
        let q = polar_to_cartesian(i.bin_to_polar([5, 2, 0]).unwrap());
        let v = voxelize_frustum(&[p, p, p, q], &i);
        assert_eq!(v.grid.count_at([1, 1, 1]), 3);
        assert_eq!(v.grid.binary().count_at([1, 1, 1]), 1);
        assert_eq!(grid_to_pointcloud(&v.grid, 1).len(), 2);
        assert_eq!(grid_to_pointcloud(&v.grid, 2).len(), 1);
        assert_eq!(grid_to_pointcloud(&v.grid, 4).len(), 0);
    }

    #[test]
    fn ground_removal() {
        let cloud = [Point3::new(1.0, 0.0, -1.5), Point3::new(1.0, 0.0, 0.2)];
        assert_eq!(remove_ground(&cloud, -1.0), vec![cloud[1]]);
    }
}
