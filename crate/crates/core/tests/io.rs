use proptest::prelude::*;

use radar_uq::detect::PolarDetection;
use radar_uq::groundtruth::voxelize_frustum;
use radar_uq::io::{
    fmt_num, format_cloud, format_detections, read_cloud, read_cube, read_detections, read_occupancy, write_cube,
    write_occupancy,
};
use radar_uq::radar::{PolarCoord, RadarCube, RadarIntrinsics};
use radar_uq::sim::{generate_scene, render_cube, NoiseSpec, SceneConfig};

fn close9(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 5e-9 * a.abs().max(b.abs())
}

proptest! {
    #[test]
    fn number_text_keeps_nine_digits(x in prop::num::f64::NORMAL) {
        let back: f64 = fmt_num(x).parse().unwrap();
        prop_assert!(close9(x, back), "{} -> {}", x, fmt_num(x));
    }

    #[test]
    fn rendered_cubes_round_trip(
        r in 8usize..40, a in 1usize..6, e in 1usize..4,
        seed in any::<u64>(),
    ) {
        let intr = RadarIntrinsics::new(r, a, e, 0.3, (-0.6, 0.5), (-0.2, 0.3)).unwrap();
        let cfg = SceneConfig { n_scatterers: 6, n_ghosts: 2, seed, ..Default::default() };
        let scene = generate_scene(&cfg, &intr).unwrap();
        let (cube, _) = render_cube(&scene, &intr, &NoiseSpec::default()).unwrap();
        let mut buf = Vec::new();
        write_cube(&mut buf, &cube).unwrap();
        let back: RadarCube = read_cube(&buf[..]).unwrap();
        prop_assert_eq!(&back, &cube);

        let grid = voxelize_frustum(&scene.ground_truth_cloud(), &intr).grid;
        let mut occ = Vec::new();
        write_occupancy(&mut occ, &grid).unwrap();
        prop_assert_eq!(read_occupancy(&occ[..]).unwrap(), grid);
    }

    #[test]
    fn detection_text_round_trip(rows in prop::collection::vec(prop::array::uniform5(-100.0..100.0f64), 0..30)) {
        let dets: Vec<PolarDetection> = rows
            .iter()
            .map(|v| PolarDetection { coord: PolarCoord::new(v[0].abs(), v[1], v[2]), intensity: v[3].abs(), doppler: v[4], source_bins: None })
            .collect();
        let back = read_detections(format_detections(&dets, None).as_bytes()).unwrap();
        prop_assert_eq!(back.len(), dets.len());
        for (a, b) in dets.iter().zip(&back) {
            for (x, y) in [(a.coord.r, b.coord.r), (a.coord.alpha, b.coord.alpha), (a.coord.beta, b.coord.beta), (a.intensity, b.intensity), (a.doppler, b.doppler)] {
                prop_assert!(close9(x, y));
            }
        }
    }

    #[test]
    fn cloud_text_round_trip(pts in prop::collection::vec(prop::array::uniform3(-1e3..1e3f64), 0..30)) {
        let cloud: Vec<_> = pts.iter().map(|p| nalgebra::Point3::new(p[0], p[1], p[2])).collect();
        let back = read_cloud(format_cloud(&cloud).as_bytes()).unwrap();
        prop_assert_eq!(back.len(), cloud.len());
        for (a, b) in cloud.iter().zip(&back) {
            prop_assert!(close9(a.x, b.x) && close9(a.y, b.y) && close9(a.z, b.z));
        }
    }
}
