mod common;

use common::{grad_at, l21_residual, l_transpose, project, random_image, rng};
use proptest::prelude::*;
use sirf_core::registration::dgs_energy;
use sirf_core::resample::TransformParams;
use sirf_core::tensor::{
    forward_gradient, group_l21_norm, gradient_residual_norm, l_adjoint, l_op, project_dual, DualPair, GradientField,
};
use sirf_core::MultiBandImage;

fn from_seed(seed: u64, h: usize, w: usize, s: usize, lo: f64, hi: f64) -> MultiBandImage {
    random_image(&mut rng(seed), h, w, s, lo, hi)
}

fn dual(seed: u64, h: usize, w: usize, s: usize, scale: f64) -> DualPair {
    let mut g = rng(seed);
    DualPair::new(
        random_image(&mut g, h, w, s, -scale, scale),
        random_image(&mut g, h, w, s, -scale, scale),
    )
    .unwrap()
}

#[test]
fn forward_gradient_matches_loops() {
    let x = from_seed(1, 13, 17, 3, -5.0, 5.0);
    let g = forward_gradient(&x);
    for d in 0..3 {
        for i in 0..13 {
            for j in 0..17 {
                let (v, h) = grad_at(&x, i, j, d);
                assert_eq!(g.vertical.get(i, j, d), v);
                assert_eq!(g.horizontal.get(i, j, d), h);
            }
        }
    }
}

#[test]
fn l_op_matches_dense_matrix() {
    let (h, w, s) = (8, 8, 3);
    let n = h * w * s;
    // Column k of the dense operator is L applied to the k-th unit dual.
    let mut dense = vec![vec![0.0; 2 * n]; n];
    for k in 0..2 * n {
        let mut r = vec![0.0; n];
        let mut sv = vec![0.0; n];
        if k < n {
            r[k] = 1.0;
        } else {
            sv[k - n] = 1.0;
        }
        let r = MultiBandImage::from_vec(h, w, s, r).unwrap();
        let sv = MultiBandImage::from_vec(h, w, s, sv).unwrap();
        let col = common::l_op(&r, &sv);
        for (row, v) in col.data().iter().enumerate() {
            dense[row][k] = *v;
        }
    }
    let p = dual(2, h, w, s, 3.0);
    let got = l_op(&p).unwrap();
    for (row, coeffs) in dense.iter().enumerate() {
        let expect: f64 = coeffs[..n]
            .iter()
            .zip(p.r.data())
            .chain(coeffs[n..].iter().zip(p.s.data()))
            .map(|(a, b)| a * b)
            .sum();
        assert!((got.data()[row] - expect).abs() < 1e-12);
    }
    // The transpose of the dense matrix is the adjoint.
    let x = from_seed(3, h, w, s, -1.0, 1.0);
    let adj = l_adjoint(&x);
    for k in 0..2 * n {
        let expect: f64 = dense.iter().zip(x.data()).map(|(row, xv)| row[k] * xv).sum();
        let got = if k < n { adj.r.data()[k] } else { adj.s.data()[k - n] };
        assert!((got - expect).abs() < 1e-12);
    }
}

#[test]
fn adjoint_identity_on_random_instances() {
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let p = dual(1000 + seed, 32, 32, 4, 1.0);
        let x = from_seed(5000 + seed, 32, 32, 4, -1.0, 1.0);
        let lhs = l_op(&p).unwrap().dot(&x).unwrap();
        let rhs = p.dot(&l_adjoint(&x)).unwrap();
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-300));
    }
    assert!(worst <= 1e-10, "worst relative mismatch {worst}");
}

#[test]
fn l_adjoint_matches_loops() {
    let x = from_seed(4, 9, 11, 2, -3.0, 3.0);
    let (r, s) = l_transpose(&x);
    let adj = l_adjoint(&x);
    assert_eq!(adj.r.data(), r.data());
    assert_eq!(adj.s.data(), s.data());
}

#[test]
fn project_dual_matches_loops() {
    let p = dual(6, 10, 7, 3, 2.0);
    let (r, s) = project(&p.r, &p.s);
    let q = project_dual(&p);
    for k in 0..r.len() {
        assert!((q.r.data()[k] - r.data()[k]).abs() < 1e-15);
        assert!((q.s.data()[k] - s.data()[k]).abs() < 1e-15);
    }
}

#[test]
fn group_l21_matches_loops() {
    let x = from_seed(7, 15, 12, 4, -10.0, 10.0);
    let zero = MultiBandImage::zeros(15, 12, 4).unwrap();
    let got = group_l21_norm(&forward_gradient(&x));
    let expect = l21_residual(&x, &zero);
    assert!((got - expect).abs() <= 1e-12 * expect);
}

#[test]
fn residual_norm_broadcasts_single_band_reference() {
    let x = from_seed(8, 12, 12, 3, 0.0, 1.0);
    let p = from_seed(9, 12, 12, 1, 0.0, 1.0);
    let got = gradient_residual_norm(&x, &p).unwrap();
    let expect = l21_residual(&x, &p);
    assert!((got - expect).abs() <= 1e-12 * expect);
}

#[test]
fn zero_pan_energy_is_smoothed_gradient_norm() {
    let x = from_seed(10, 20, 20, 3, 0.0, 50.0);
    let pan = MultiBandImage::zeros(20, 20, 1).unwrap();
    let eps = 1e-3;
    let e = dgs_energy(&x, &pan, &TransformParams::identity(sirf_core::TransformKind::Translation), eps).unwrap();
    let mut expect = 0.0;
    for i in 0..20 {
        for j in 0..20 {
            let mut sq = eps;
            for d in 0..3 {
                let (v, h) = grad_at(&x, i, j, d);
                sq += v * v + h * h;
            }
            expect += sq.sqrt();
        }
    }
    assert_eq!(e.overlap, 400);
    assert!((e.energy - expect).abs() <= 1e-12 * expect);
}

fn field(seed: u64) -> GradientField {
    let mut g = rng(seed);
    GradientField {
        vertical: random_image(&mut g, 6, 5, 2, -4.0, 4.0),
        horizontal: random_image(&mut g, 6, 5, 2, -4.0, 4.0),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_is_idempotent(seed in any::<u64>(), scale in 0.01f64..10.0) {
        let p = dual(seed, 7, 9, 3, scale);
        let once = project_dual(&p);
        let twice = project_dual(&once);
        for (a, b) in once.r.data().iter().chain(once.s.data()).zip(twice.r.data().iter().chain(twice.s.data())) {
            prop_assert!((a - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn projection_is_non_expansive(a in any::<u64>(), b in any::<u64>(), scale in 0.01f64..10.0) {
        let p = dual(a, 7, 9, 3, scale);
        let q = dual(b, 7, 9, 3, scale);
        let (pp, pq) = (project_dual(&p), project_dual(&q));
        let before = DualPair::new(p.r.sub(&q.r).unwrap(), p.s.sub(&q.s).unwrap()).unwrap().norm();
        let after = DualPair::new(pp.r.sub(&pq.r).unwrap(), pp.s.sub(&pq.s).unwrap()).unwrap().norm();
        prop_assert!(after <= before + 1e-12);
    }

    #[test]
    fn projection_lands_in_feasible_set(seed in any::<u64>(), scale in 0.01f64..10.0) {
        let q = project_dual(&dual(seed, 6, 8, 2, scale));
        for i in 0..6 {
            for j in 0..8 {
                let mut n = 0.0;
                for d in 0..2 {
                    let (r, s) = (q.r.get(i, j, d), q.s.get(i, j, d));
                    prop_assert!(r.abs() <= 1.0 + 1e-12 && s.abs() <= 1.0 + 1e-12);
                    n += r * r + s * s;
                }
                if i < 5 && j < 7 {
                    prop_assert!(n.sqrt() <= 1.0 + 1e-12);
                }
            }
        }
    }

    #[test]
    fn l21_is_absolutely_homogeneous(seed in any::<u64>(), k in -20.0f64..20.0) {
        let g = field(seed);
        let lhs = group_l21_norm(&g.scale(k));
        let rhs = k.abs() * group_l21_norm(&g);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1.0));
    }

    #[test]
    fn l21_satisfies_triangle_inequality(a in any::<u64>(), b in any::<u64>()) {
        let (f, g) = (field(a), field(b));
        let sum = group_l21_norm(&f.add(&g).unwrap());
        prop_assert!(sum <= group_l21_norm(&f) + group_l21_norm(&g) + 1e-12);
    }

    #[test]
    fn adjoint_identity_holds(a in any::<u64>(), b in any::<u64>(), h in 2usize..12, w in 2usize..12, s in 1usize..4) {
        let p = dual(a, h, w, s, 1.0);
        let x = from_seed(b, h, w, s, -1.0, 1.0);
        let lhs = l_op(&p).unwrap().dot(&x).unwrap();
        let rhs = p.dot(&l_adjoint(&x)).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()).max(1.0));
    }
}
