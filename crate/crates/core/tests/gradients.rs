//! Analytic gradients against central finite differences.

use techscape::gradcheck::{classifier_case, recommender_case, TOLERANCE};
use techscape::recommender::Variant;

#[test]
fn classifier_head_gradients() {
    for seed in 0..20 {
        let (err, vec_err) = classifier_case(seed);
        assert!(err < TOLERANCE, "seed {seed}: relative error {err}");
        assert!(vec_err < TOLERANCE, "seed {seed}: vector relative error {vec_err}");
    }
}

#[test]
fn recommender_hinge_gradients_all_variants() {
    for variant in Variant::ALL {
        for seed in 0..20 {
            let (err, vec_err) = recommender_case(variant, seed);
            assert!(err < TOLERANCE, "{variant} seed {seed}: relative error {err}");
            assert!(
                vec_err < TOLERANCE,
                "{variant} seed {seed}: vector relative error {vec_err}"
            );
        }
    }
}
