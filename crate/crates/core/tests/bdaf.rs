use proptest::prelude::*;

use radar_uq::bdaf::{
    bdaf_attention_maps, bdaf_forward, patchify, unpatchify, AttentionWeights, FeatureMap, Matrix, TokenSequence,
};

fn tokens(l: usize, c: usize, values: &[f64]) -> TokenSequence {
    TokenSequence(Matrix::from_fn(l, c, |i, j| values[(i * c + j) % values.len()] * (1.0 + 0.1 * i as f64)))
}

fn permute_rows(m: &Matrix, perm: &[usize]) -> Matrix {
    Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(perm[i], j)])
}

proptest! {
    /// Without positional encoding, permuting the token order of both
    /// domains permutes the outputs the same way.
    #[test]
    fn permutation_equivariance(
        l in 1usize..7, c in 1usize..9, d in 1usize..5,
        values in prop::collection::vec(-1.0..1.0f64, 8..64),
        seed in any::<u64>(),
        perm_seed in any::<u64>(),
    ) {
        let s = tokens(l, c, &values);
        let dt = tokens(l, c, &values[3..]);
        let w = AttentionWeights::random(c, d, 0.6, seed);
        let mut perm: Vec<usize> = (0..l).collect();
        let mut x = perm_seed;
        for i in (1..l).rev() {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1);
            perm.swap(i, (x >> 33) as usize % (i + 1));
        }
        let out = bdaf_forward(&s, &dt, &w).unwrap();
        let permuted = bdaf_forward(
            &TokenSequence(permute_rows(&s.0, &perm)),
            &TokenSequence(permute_rows(&dt.0, &perm)),
            &w,
        ).unwrap();
        prop_assert!((permute_rows(&out.spatial.0, &perm) - &permuted.spatial.0).amax() < 1e-12);
        prop_assert!((permute_rows(&out.doppler.0, &perm) - &permuted.doppler.0).amax() < 1e-12);
    }

    #[test]
    fn attention_rows_are_distributions(
        l in 1usize..9, c in 1usize..17, d in 1usize..9,
        values in prop::collection::vec(-5.0..5.0f64, 8..64),
        seed in any::<u64>(),
    ) {
        let w = AttentionWeights::random(c, d, 2.0, seed);
        let (a1, a2) = bdaf_attention_maps(&tokens(l, c, &values), &tokens(l, c, &values[1..]), &w).unwrap();
        for a in [a1, a2] {
            prop_assert!(a.iter().all(|&x| (0.0..=1.0).contains(&x)));
            for row in a.row_iter() {
                prop_assert!((row.sum() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn patchify_round_trip(
        hp in 1usize..4, wp in 1usize..4, p in 1usize..4, ch in 1usize..4,
        positional in any::<bool>(),
        values in prop::collection::vec(-3.0..3.0f64, 1..20),
    ) {
        let (h, w) = (hp * p, wp * p);
        let data: Vec<f64> = (0..h * w * ch).map(|i| values[i % values.len()]).collect();
        let f = FeatureMap::new(h, w, ch, data).unwrap();
        let t = patchify(&f, p, positional).unwrap();
        prop_assert_eq!(t.len(), hp * wp);
        prop_assert_eq!(t.channels(), ch * p * p);
        let back = unpatchify(&t, h, w, p, positional).unwrap();
        let worst = back.data.iter().zip(&f.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(worst < 1e-12);
    }
}
