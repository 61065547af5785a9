//! Analytic gradients against central finite differences.

mod common;

use cardiaq::segnet::sample_gradient;
use common::{finite_difference_errors, tiny_case};

const TOLERANCE: f64 = 1e-4;

fn check_all_tensors(lambda: f64) {
    for (i, (dims, err)) in finite_difference_errors(11, lambda).into_iter().enumerate() {
        eprintln!("λ={lambda} tensor {i} dims {dims:?}: rel err {err:.2e}");
        assert!(err <= TOLERANCE, "tensor {i}: relative error {err:e}");
    }
}

#[test]
fn unet_gradients_match_finite_differences() {
    check_all_tensors(0.0);
}

#[test]
fn gradients_with_shape_prior_match_finite_differences() {
    check_all_tensors(0.5);
}

#[test]
fn prior_tensors_get_zero_gradient_when_prior_is_off() {
    let (params, image, labels, config) = tiny_case(3, 0.0);
    let (_, grads) = sample_gradient(&params, &image, (8, 8), &labels, &config, 0).unwrap();
    assert!(grads.vae.iter().all(|t| t.values().iter().all(|&v| v == 0.0)));
}

#[test]
fn gradients_are_bit_identical_across_runs() {
    let (params, image, labels, config) = tiny_case(5, 0.3);
    let a = sample_gradient(&params, &image, (8, 8), &labels, &config, 0).unwrap();
    let b = sample_gradient(&params, &image, (8, 8), &labels, &config, 0).unwrap();
    assert_eq!(a.0.to_bits(), b.0.to_bits());
    assert_eq!(a.1, b.1);
}
