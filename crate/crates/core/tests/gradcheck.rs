//! Finite-difference gradient checks for every differentiable op.

// `CASES` and `all` serve the acceptance target.
#[allow(dead_code)]
#[path = "support/gradcheck.rs"]
mod gradcheck;

use gradcheck::{Errors, TOL};

fn assert_all(f: fn(&mut Errors)) {
    let mut out = Vec::new();
    f(&mut out);
    assert!(!out.is_empty());
    for (case, e) in out {
        assert!(e < TOL, "{case}: relative error {e:.2e}");
    }
}

#[test]
fn conv2d_mse_1x2x4x4() {
    assert_all(gradcheck::conv2d_mse_1x2x4x4);
}

#[test]
fn conv2d_random_geometries() {
    assert_all(gradcheck::conv2d_random_geometries);
}

#[test]
fn group_norm_four_groups() {
    assert_all(gradcheck::group_norm_four_groups);
}

#[test]
fn silu_elementwise() {
    assert_all(gradcheck::silu_elementwise);
}

#[test]
fn resampling_ops() {
    assert_all(gradcheck::resampling_ops);
}

#[test]
fn add_broadcast_concat_slice_sum() {
    assert_all(gradcheck::add_broadcast_concat_slice_sum);
}

#[test]
fn small_resblock_chain() {
    assert_all(gradcheck::small_resblock_chain);
}
