use proptest::prelude::*;

use radar_uq::detect::{detect_cube, os_cfar_1d, CfarConfig};
use radar_uq::doppler::EgoVelocity;
use radar_uq::radar::{polar_to_cartesian, RadarCube, RadarIntrinsics};
use radar_uq::sim::{
    demo_intrinsics, generate_scene, render_cube, CellLabel, NoiseSpec, Scatterer, Scene, SceneConfig,
};

proptest! {
    #[test]
    fn cfar_mask_is_scale_invariant(
        profile in prop::collection::vec(0.0..100.0f64, 21..80),
        c in 1e-3..1e3f64,
        k in -30i32..30,
    ) {
        let cfg = CfarConfig::default();
        let mask = os_cfar_1d(&profile, &cfg).unwrap();
        // Power-of-two scaling is exact, so the masks must match bit for bit.
        let exact: Vec<f64> = profile.iter().map(|v| v * 2f64.powi(k)).collect();
        prop_assert_eq!(&os_cfar_1d(&exact, &cfg).unwrap(), &mask);
        let general: Vec<f64> = profile.iter().map(|v| v * c).collect();
        prop_assert_eq!(&os_cfar_1d(&general, &cfg).unwrap(), &mask);
    }

    #[test]
    fn permuting_columns_permutes_detections(seed in 0u64..50) {
        let i = RadarIntrinsics::new(32, 4, 3, 0.5, (-0.8, 0.8), (-0.3, 0.3)).unwrap();
        let cfg = SceneConfig { n_scatterers: 8, n_ghosts: 2, seed, ..Default::default() };
        let scene = generate_scene(&cfg, &i).unwrap();
        let (cube, _) = render_cube(&scene, &i, &NoiseSpec::default()).unwrap();
        // Swap azimuth columns 0 <-> 3 and elevation columns 0 <-> 2.
        let map = |ia: usize, ie: usize| ([3, 1, 2, 0][ia], [2, 1, 0][ie]);
        let mut swapped = RadarCube::zeros(i);
        for ir in 0..32 {
            for ia in 0..4 {
                for ie in 0..3 {
                    let (ja, je) = map(ia, ie);
                    swapped.set([ir, ja, je], cube.intensity_at([ir, ia, ie]), cube.doppler_at([ir, ia, ie]));
                }
            }
        }
        let cfar = CfarConfig::default();
        let mut a: Vec<_> = detect_cube(&cube, &cfar, 0.0).unwrap().iter()
            .map(|d| { let b = d.source_bins.unwrap(); let (ja, je) = map(b[1], b[2]); ([b[0], ja, je], d.intensity, d.doppler) })
            .collect();
        let mut b: Vec<_> = detect_cube(&swapped, &cfar, 0.0).unwrap().iter()
            .map(|d| (d.source_bins.unwrap(), d.intensity, d.doppler))
            .collect();
        a.sort_by_key(|x| x.0);
        b.sort_by_key(|x| x.0);
        prop_assert_eq!(a, b);
    }
}

#[test]
fn single_rendered_scatterer_gives_one_detection() {
    let i = demo_intrinsics();
    let c = i.bin_to_polar([60, 10, 3]).unwrap();
    let scene = Scene {
        scatterers: vec![Scatterer { position: polar_to_cartesian(c), reflectivity: 500.0 }],
        ego_velocity: EgoVelocity::new(2.0, 0.5, 0.0),
        ghosts: vec![],
        seed: 1,
    };
    let noise = NoiseSpec { noise_floor: 0.0, point_spread_bins: [0.0; 3], ..Default::default() };
    let (cube, labels) = render_cube(&scene, &i, &noise).unwrap();
    let dets = detect_cube(&cube, &CfarConfig::default(), 0.0).unwrap();
    assert_eq!(dets.len(), 1);
    assert_eq!(dets[0].source_bins, labels.scatterer_bins[0]);
    assert_eq!(dets[0].intensity, 500.0);
}

#[test]
fn cfar_recovers_true_bins_at_20_db() {
    let i = demo_intrinsics();
    let (mut found, mut total) = (0, 0);
    for seed in 0..20 {
        let cfg =
            SceneConfig { n_scatterers: 20, n_ghosts: 0, reflectivity: (100.0, 100.0), seed, ..Default::default() };
        let scene = generate_scene(&cfg, &i).unwrap();
        let (cube, labels) = render_cube(&scene, &i, &NoiseSpec::default()).unwrap();
        let dets = detect_cube(&cube, &CfarConfig::default(), 0.0).unwrap();
        let hits: std::collections::HashSet<_> = dets.iter().map(|d| d.source_bins.unwrap()).collect();
        for (k, b) in labels.scatterer_bins.iter().enumerate() {
            let b = b.unwrap();
            // Two scatterers sharing a cell only count once.
            if labels.cells[i.flat_index(b)] == CellLabel::True(k) {
                total += 1;
                found += usize::from(hits.contains(&b));
            }
        }
    }
    let recall = found as f64 / total as f64;
    assert!(recall >= 0.99, "recall {recall} over {total} bins");
}

#[test]
fn footprint_mass_is_conserved() {
    let i = demo_intrinsics();
    let noise = NoiseSpec { noise_floor: 0.0, ..Default::default() };
    let scene = Scene {
        scatterers: [[40, 10, 4], [80, 20, 3], [20, 16, 4]]
            .iter()
            .zip([150.0, 40.0, 900.0])
            .map(|(b, refl)| Scatterer {
                position: polar_to_cartesian(i.bin_to_polar(*b).unwrap()),
                reflectivity: refl,
            })
            .collect(),
        ego_velocity: EgoVelocity::zero(),
        ghosts: vec![],
        seed: 0,
    };
    let (cube, _) = render_cube(&scene, &i, &noise).unwrap();
    let total: f64 = cube.intensity().iter().map(|&v| v as f64).sum();
    let expected = 1090.0 * radar_uq::sim::footprint_mass(noise.point_spread_bins);
    assert!((total - expected).abs() < 0.01 * expected, "{total} vs {expected}");
}
