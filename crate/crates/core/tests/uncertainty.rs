use nalgebra::{SymmetricEigen, Vector3};
use proptest::prelude::*;

use radar_uq::radar::{direction_vector, polar_to_cartesian, PolarCoord};
use radar_uq::sim::sample_polar_spread;
use radar_uq::uncertainty::{nll_loss, propagate_covariance, Covariance3, PolarSigmas};

fn term_strategy() -> impl Strategy<Value = (Vector3<f64>, Covariance3)> {
    (
        1.0..40.0f64,
        -1.0..1.0f64,
        -0.5..0.5f64,
        0.01..0.5f64,
        0.002..0.05f64,
        0.002..0.05f64,
        prop::array::uniform3(-2.0..2.0f64),
    )
        .prop_map(|(r, a, b, sr, sa, sb, e)| {
            let cov = propagate_covariance(PolarCoord::new(r, a, b), &PolarSigmas::new(sr, sa, sb).unwrap());
            (Vector3::from(e), cov)
        })
}

proptest! {
    #[test]
    fn largest_axis_is_tangential(
        r in 1.0..100.0f64,
        alpha in -1.5..1.5f64,
        sigma_r in 0.01..0.5f64,
        sigma_a in 0.005..0.1f64,
        sigma_b in 0.001..0.1f64,
    ) {
        prop_assume!(sigma_a * r > 1.5 * sigma_r && sigma_a > 1.5 * sigma_b);
        let cov = propagate_covariance(PolarCoord::new(r, alpha, 0.0), &PolarSigmas::new(sigma_r, sigma_a, sigma_b).unwrap());
        let eig = SymmetricEigen::new(*cov.matrix());
        let k = eig.eigenvalues.imax();
        let v = eig.eigenvectors.column(k);
        let cos = v.dot(&direction_vector(alpha, 0.0)).abs();
        prop_assert!(cos.asin() < 1e-9, "angle from perpendicular {}", cos.asin());
    }

    #[test]
    fn nll_is_permutation_invariant(mut terms in prop::collection::vec(term_strategy(), 1..40), seed in any::<u64>()) {
        let total = nll_loss(&terms).unwrap();
        let n = terms.len();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            terms.swap(i, (s >> 33) as usize % (i + 1));
        }
        let shuffled = nll_loss(&terms).unwrap();
        prop_assert!((total - shuffled).abs() <= 1e-9 * total.abs().max(1.0));
    }

    #[test]
    fn nll_is_additive(a in prop::collection::vec(term_strategy(), 1..20), b in prop::collection::vec(term_strategy(), 1..20)) {
        let joined: Vec<_> = a.iter().chain(&b).copied().collect();
        let lhs = nll_loss(&joined).unwrap();
        let rhs = nll_loss(&a).unwrap() + nll_loss(&b).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1.0));
    }
}

/// Tangential-to-radial spread of the sampled crescent follows r * sigma_a / sigma_r.
#[test]
fn crescent_aspect_ratio() {
    let s = PolarSigmas::new(0.1, 0.05, 0.001).unwrap();
    let c = PolarCoord::new(10.0, 0.3, 0.0);
    let samples = sample_polar_spread(c, &s, 200_000, 5);
    let radial = direction_vector(c.alpha, 0.0);
    let tangential = Vector3::new(-c.alpha.sin(), c.alpha.cos(), 0.0);
    let center = polar_to_cartesian(c).coords;
    let spread = |axis: &Vector3<f64>| {
        let v: Vec<f64> = samples.iter().map(|p| (p.coords - center).dot(axis)).collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
    };
    let ratio = spread(&tangential) / spread(&radial);
    assert!((ratio - 5.0).abs() < 0.5, "ratio {ratio}");
}
