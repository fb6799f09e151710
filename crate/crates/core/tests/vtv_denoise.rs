mod common;

use common::{denoise_unaccelerated, random_image, rng, smooth_image};
use sirf_core::vtv::{next_momentum, vtv_denoise, vtv_objective};
use sirf_core::MultiBandImage;

fn blocks(seed: u64, sigma: f64) -> (MultiBandImage, MultiBandImage) {
    let mut g = rng(seed);
    let clean = MultiBandImage::from_fn(32, 32, 1, |i, j, _| {
        let a = if i < 14 { 1.0 } else { 0.0 };
        let b = if (8..24).contains(&j) { 0.6 } else { 0.0 };
        a + b
    })
    .unwrap();
    // Uniform noise with standard deviation sigma.
    let noise = random_image(&mut g, 32, 32, 1, -sigma * 3f64.sqrt(), sigma * 3f64.sqrt());
    let noisy = clean.add(&noise).unwrap();
    (clean, noisy)
}

#[test]
fn reference_equal_to_data_is_a_fixed_point() {
    let y = random_image(&mut rng(1), 20, 20, 3, 0.0, 255.0);
    for lambda in [0.1, 1.0, 10.0] {
        let (x, _) = vtv_denoise(&y, &y, lambda, 25, None).unwrap();
        let worst = x.sub(&y).unwrap().data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(worst <= 1e-8, "lambda {lambda}: {worst}");
    }
}

#[test]
fn denoises_piecewise_constant_image() {
    let (_, y) = blocks(2, 0.1);
    let zero = MultiBandImage::zeros(32, 32, 1).unwrap();
    let lambda = 0.2;
    let (x, _) = vtv_denoise(&y, &zero, lambda, 200, None).unwrap();
    let obj = vtv_objective(&x, &y, &zero, lambda).unwrap();
    assert!(obj < vtv_objective(&y, &y, &zero, lambda).unwrap());
    let plain = denoise_unaccelerated(&y, &zero, lambda, 200);
    let plain_obj = common::vtv_objective(&plain, &y, &zero, lambda);
    assert!(obj <= plain_obj + 1e-6, "accelerated {obj} vs plain {plain_obj}");
}

#[test]
fn unaccelerated_oracle_agrees_in_the_limit() {
    let (_, y) = blocks(3, 0.1);
    let zero = MultiBandImage::zeros(32, 32, 1).unwrap();
    let (x, _) = vtv_denoise(&y, &zero, 0.2, 3000, None).unwrap();
    let plain = denoise_unaccelerated(&y, &zero, 0.2, 3000);
    let a = vtv_objective(&x, &y, &zero, 0.2).unwrap();
    let b = common::vtv_objective(&plain, &y, &zero, 0.2);
    assert!((a - b).abs() <= 1e-3 * a, "{a} vs {b}");
}

#[test]
fn shifting_data_and_reference_shifts_solution() {
    let mut g = rng(4);
    let y = random_image(&mut g, 18, 18, 2, 0.0, 10.0);
    let pw = random_image(&mut g, 18, 18, 1, 0.0, 10.0);
    let z = random_image(&mut g, 18, 18, 2, -5.0, 5.0);
    let ref2 = MultiBandImage::from_fn(18, 18, 2, |i, j, d| pw.get(i, j, 0) + z.get(i, j, d)).unwrap();
    let ref1 = MultiBandImage::from_fn(18, 18, 2, |i, j, _| pw.get(i, j, 0)).unwrap();
    let (x1, _) = vtv_denoise(&y, &ref1, 0.7, 40, None).unwrap();
    let (x2, _) = vtv_denoise(&y.add(&z).unwrap(), &ref2, 0.7, 40, None).unwrap();
    let diff = x2.sub(&x1).unwrap().sub(&z).unwrap();
    let worst = diff.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(worst <= 1e-10, "{worst}");
}

#[test]
fn never_worse_than_returning_the_data() {
    let mut g = rng(5);
    let y = smooth_image(&mut g, 24, 24, 3).add(&random_image(&mut g, 24, 24, 3, -5.0, 5.0)).unwrap();
    let pw = smooth_image(&mut g, 24, 24, 1);
    for lambda in [1e-3, 1e-2, 0.1, 1.0, 10.0] {
        let (x, _) = vtv_denoise(&y, &pw, lambda, 50, None).unwrap();
        let got = vtv_objective(&x, &y, &pw, lambda).unwrap();
        let noop = vtv_objective(&y, &y, &pw, lambda).unwrap();
        assert!(got <= noop + 1e-9 * noop, "lambda {lambda}: {got} > {noop}");
    }
}

#[test]
fn objective_matches_loops() {
    let mut g = rng(6);
    let x = random_image(&mut g, 14, 11, 3, 0.0, 9.0);
    let y = random_image(&mut g, 14, 11, 3, 0.0, 9.0);
    let pw = random_image(&mut g, 14, 11, 1, 0.0, 9.0);
    let got = vtv_objective(&x, &y, &pw, 0.37).unwrap();
    let expect = common::vtv_objective(&x, &y, &pw, 0.37);
    assert!((got - expect).abs() <= 1e-12 * expect);
}

#[test]
fn momentum_sequence() {
    let t2 = next_momentum(1.0);
    let t3 = next_momentum(t2);
    assert!((t2 - (1.0 + 5f64.sqrt()) / 2.0).abs() < 1e-15);
    assert!((t3 - 2.194).abs() < 1e-3);
}

#[test]
fn rejects_bad_parameters() {
    let y = MultiBandImage::zeros(4, 4, 2).unwrap();
    assert!(vtv_denoise(&y, &y, 0.0, 3, None).is_err());
    assert!(vtv_denoise(&y, &y, 1.0, 0, None).is_err());
    let wrong = MultiBandImage::zeros(4, 4, 3).unwrap();
    assert!(vtv_denoise(&y, &wrong, 1.0, 3, None).is_err());
}
