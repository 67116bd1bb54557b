use proptest::prelude::*;

use radar_uq::groundtruth::{grid_to_pointcloud, voxelize_frustum};
use radar_uq::radar::{cartesian_to_polar, direction_vector, polar_to_cartesian, PolarCoord, RadarIntrinsics};

fn intr() -> RadarIntrinsics {
    RadarIntrinsics::new(40, 16, 6, 0.4, (-1.0, 1.0), (-0.3, 0.3)).unwrap()
}

proptest! {
    #[test]
    fn polar_round_trip(r in 1e-3..200.0f64, alpha in -3.1..3.1f64, beta in -1.5..1.5f64) {
        let c = PolarCoord::new(r, alpha, beta);
        let back = cartesian_to_polar(&polar_to_cartesian(c)).unwrap();
        prop_assert!((back.r - r).abs() <= 1e-12 * r.max(1.0));
        prop_assert!((back.alpha - alpha).abs() < 1e-9);
        prop_assert!((back.beta - beta).abs() < 1e-9);
    }

    #[test]
    fn direction_is_unit_range_point(alpha in -3.1..3.1f64, beta in -1.5..1.5f64) {
        let u = direction_vector(alpha, beta);
        prop_assert!((u.norm() - 1.0).abs() < 1e-15);
        let p = polar_to_cartesian(PolarCoord::new(1.0, alpha, beta));
        prop_assert_eq!(u, p.coords);
    }

    #[test]
    fn bin_center_round_trip(ir in 0usize..40, ia in 0usize..16, ie in 0usize..6) {
        let i = intr();
        let c = i.bin_to_polar([ir, ia, ie]).unwrap();
        prop_assert_eq!(i.polar_to_bin(c).unwrap(), [ir, ia, ie]);
        let bounds = i.cell_bounds([ir, ia, ie]).unwrap();
        for (v, (lo, hi)) in [c.r, c.alpha, c.beta].into_iter().zip(bounds) {
            prop_assert!(lo <= v && v < hi);
        }
    }

    #[test]
    fn voxelize_is_idempotent(
        pts in prop::collection::vec((-2.0..18.0f64, -15.0..15.0f64, -5.0..5.0f64), 0..300)
    ) {
        let i = intr();
        let cloud: Vec<_> = pts.iter().map(|&(x, y, z)| nalgebra::Point3::new(x, y, z)).collect();
        let first = voxelize_frustum(&cloud, &i);
        let centers = grid_to_pointcloud(&first.grid, 1);
        let second = voxelize_frustum(&centers, &i);
        prop_assert_eq!(second.outside_fov, 0);
        prop_assert_eq!(second.grid.binary(), first.grid.binary());
    }

    #[test]
    fn raising_threshold_never_adds_points(
        pts in prop::collection::vec((0.5..15.0f64, -3.0..3.0f64, -1.0..1.0f64), 0..200),
        t in 1u32..5
    ) {
        let i = intr();
        let cloud: Vec<_> = pts.iter().map(|&(x, y, z)| nalgebra::Point3::new(x, y, z)).collect();
        let g = voxelize_frustum(&cloud, &i).grid;
        let lower = grid_to_pointcloud(&g, t);
        let higher = grid_to_pointcloud(&g, t + 1);
        prop_assert!(higher.len() <= lower.len());
        prop_assert!(higher.iter().all(|p| lower.contains(p)));
    }
}

/// A cell-center point comes back within half the cell's polar diagonal.
#[test]
fn inverse_mapping_within_half_cell_diagonal() {
    let i = intr();
    for ir in 0..i.range_bins {
        for ia in 0..i.azimuth_bins {
            for ie in 0..i.elevation_bins {
                let p = polar_to_cartesian(i.bin_to_polar([ir, ia, ie]).unwrap());
                let back = grid_to_pointcloud(&voxelize_frustum(&[p], &i).grid, 1);
                let [(r0, r1), (a0, a1), (b0, b1)] = i.cell_bounds([ir, ia, ie]).unwrap();
                let half_diag = 0.5 * ((r1 - r0).powi(2) + (r1 * (a1 - a0)).powi(2) + (r1 * (b1 - b0)).powi(2)).sqrt();
                assert_eq!(back.len(), 1);
                assert!((back[0] - p).norm() <= half_diag);
            }
        }
    }
}
