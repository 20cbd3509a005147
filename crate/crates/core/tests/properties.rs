//! Property tests for the algebraic laws the numerical core guarantees.

use fedalign::al::emd;
use fedalign::fed::aggregate;
use fedalign::model::{flatten, init_params, unflatten, ModelConfig};
use fedalign::numcore::{
    gaussian_kl_diag, logsumexp, softmax_nll, Matrix, ParamVector, Rng,
};
use proptest::prelude::*;

fn finite_vec(len: usize, bound: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-bound..bound, len)
}

proptest! {
    #[test]
    fn logsumexp_shift_invariance(v in finite_vec(5, 20.0), c in -15.0f64..15.0) {
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        let lhs = logsumexp(&shifted).unwrap();
        let rhs = logsumexp(&v).unwrap() + c;
        prop_assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn nll_is_positive_for_finite_logits(v in finite_vec(4, 30.0), label in 0usize..4) {
        let (loss, _) = softmax_nll(&v, label).unwrap();
        prop_assert!(loss > 0.0);
    }

    #[test]
    fn kl_nonnegative_and_zero_iff_identical(
        mu_p in finite_vec(3, 4.0),
        lv_p in finite_vec(3, 2.0),
        mu_r in finite_vec(3, 4.0),
        lv_r in finite_vec(3, 2.0),
    ) {
        let out = gaussian_kl_diag(&mu_p, &lv_p, &mu_r, &lv_r).unwrap();
        prop_assert!(out.kl >= -1e-12);
        let self_kl = gaussian_kl_diag(&mu_p, &lv_p, &mu_p, &lv_p).unwrap();
        prop_assert!(self_kl.kl.abs() < 1e-12);
        if out.kl.abs() < 1e-15 {
            for i in 0..3 {
                prop_assert!((mu_p[i] - mu_r[i]).abs() < 1e-6);
                prop_assert!((lv_p[i] - lv_r[i]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn aggregation_is_affine_equivariant(
        alpha in -3.0f64..3.0,
        beta in -2.0f64..2.0,
        sizes in prop::collection::vec(1usize..200, 2..5),
        seeds in prop::collection::vec(0u64..1000, 2..5),
    ) {
        prop_assume!(sizes.len() == seeds.len());
        let vectors: Vec<ParamVector> = seeds
            .iter()
            .map(|&s| {
                let mut rng = Rng::new(s);
                ParamVector::from_vec((0..6).map(|_| rng.uniform_in(-2.0, 2.0)).collect())
            })
            .collect();
        let base = aggregate(&vectors, &sizes).unwrap();
        let transformed: Vec<ParamVector> = vectors
            .iter()
            .map(|v| {
                let mut out = v.clone();
                out.scale(alpha);
                for x in out.values_mut() {
                    *x += beta;
                }
                out
            })
            .collect();
        let lhs = aggregate(&transformed, &sizes).unwrap();
        for i in 0..6 {
            prop_assert!((lhs[i] - (alpha * base[i] + beta)).abs() < 1e-10);
        }
    }

    #[test]
    fn flatten_roundtrip(seed in 0u64..5000) {
        let cfg = ModelConfig {
            input_dim: 3,
            hidden_dims: vec![4],
            latent_dim: 2,
            num_classes: 3,
        };
        let params = init_params(&cfg, &mut Rng::new(seed)).unwrap();
        let flat = flatten(&params);
        let back = unflatten(&cfg, &flat).unwrap();
        let reflat = flatten(&back);
        prop_assert_eq!(reflat.values(), flat.values());
    }

    #[test]
    fn emd_symmetry_and_identity(seed in 0u64..5000, n in 2usize..5) {
        let mut rng = Rng::new(seed);
        let mut mk = || {
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| vec![rng.uniform_in(-3.0, 3.0), rng.uniform_in(-3.0, 3.0)])
                .collect();
            Matrix::from_rows(&rows).unwrap()
        };
        let a = mk();
        let b = mk();
        prop_assert!(emd(&a, &a).unwrap().abs() < 1e-12);
        let ab = emd(&a, &b).unwrap();
        let ba = emd(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-9);
        prop_assert!(ab >= 0.0);
    }
}
