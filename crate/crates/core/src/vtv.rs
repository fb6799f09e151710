//! Vectorial total-variation denoising relative to a reference image, solved by
//! accelerated projected ascent on the dual pair `(R, S)`.
//!
//! The proximal subproblem
//! `min_X ½‖X − Y‖² + λ‖∇X − ∇Pw‖₂,₁`
//! is shifted to `Z = X − Pw`, which turns it into plain VTV denoising of
//! `B = Y − Pw`; the primal solution is recovered as `X = B − λL(R,S) + Pw`.

use crate::error::{Result, SirfError};
use crate::tensor::{
    broadcast_reference, gradient_residual_norm, l_adjoint, l_op, project_dual_in_place, DualPair,
    MultiBandImage,
};

/// Next term of the accelerated momentum sequence, `(1 + √(1 + 4t²)) / 2`.
#[inline]
pub fn next_momentum(t: f64) -> f64 {
    (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0
}

/// Dual iterate of the denoiser, reusable as a warm start.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseState {
    /// Current projected dual pair `(R, S)`.
    pub dual: DualPair,
    /// Extrapolated point `(U, V)` the next iteration would start from.
    pub momentum: DualPair,
    /// Momentum scalar, `t¹ = 1`.
    pub t: f64,
    /// Iterations performed so far.
    pub k: usize,
}

impl DenoiseState {
    fn cold(dual: DualPair) -> Self {
        Self {
            momentum: dual.clone(),
            dual,
            t: 1.0,
            k: 0,
        }
    }
}

/// Runs `iters` accelerated dual-projection steps and returns the primal
/// image with the final dual state.
///
/// `reference` may have one band (duplicated across bands) or as many bands
/// as `y`. A warm state seeds `(R⁰, S⁰)`; the momentum sequence restarts at
/// `t = 1` on every call because `B` changes between calls.
pub fn vtv_denoise(
    y: &MultiBandImage,
    reference: &MultiBandImage,
    lambda: f64,
    iters: usize,
    warm: Option<&DenoiseState>,
) -> Result<(MultiBandImage, DenoiseState)> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(SirfError::InvalidParameter(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    if iters == 0 {
        return Err(SirfError::InvalidParameter(
            "denoising needs at least one iteration".into(),
        ));
    }
    let reference = broadcast_reference(reference, y.bands())?;
    let b = y.sub(&reference)?;

    let mut state = match warm {
        Some(w) => {
            b.ensure_same_shape(&w.dual.r)?;
            DenoiseState::cold(w.dual.clone())
        }
        None => DenoiseState::cold(DualPair::zeros(y.shape())?),
    };

    let step = 1.0 / (8.0 * lambda);
    for _ in 0..iters {
        let mut residual = l_op(&state.momentum)?;
        residual
            .data_mut()
            .iter_mut()
            .zip(b.data())
            .for_each(|(l, &bv)| *l = bv - lambda * *l);
        let ascent = l_adjoint(&residual);

        let mut next = state.momentum.clone();
        next.r.axpy(step, &ascent.r)?;
        next.s.axpy(step, &ascent.s)?;
        project_dual_in_place(&mut next);

        let t_next = next_momentum(state.t);
        state.momentum = next.extrapolate((state.t - 1.0) / t_next, &state.dual)?;
        state.dual = next;
        state.t = t_next;
        state.k += 1;
    }

    let mut x = l_op(&state.dual)?;
    x.data_mut()
        .iter_mut()
        .zip(b.data().iter().zip(reference.data()))
        .for_each(|(l, (&bv, &pv))| *l = bv - lambda * *l + pv);
    Ok((x, state))
}

/// `½‖X − Y‖²_F + λ‖∇X − ∇Pw‖₂,₁`.
pub fn vtv_objective(
    x: &MultiBandImage,
    y: &MultiBandImage,
    reference: &MultiBandImage,
    lambda: f64,
) -> Result<f64> {
    let fidelity = 0.5 * x.sub(y)?.norm().powi(2);
    Ok(fidelity + lambda * gradient_residual_norm(x, reference)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noisy_steps(seed: u64) -> MultiBandImage {
        let mut s = seed;
        MultiBandImage::from_fn(24, 24, 2, |i, j, d| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let n = ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5;
            let base = if i < 12 { 1.0 } else { 0.0 } + if j > 8 { 0.5 } else { 0.0 };
            base * (1.0 + d as f64) + 0.2 * n
        })
        .unwrap()
    }

    #[test]
    fn momentum_sequence() {
        let t2 = next_momentum(1.0);
        assert!((t2 - (1.0 + 5f64.sqrt()) / 2.0).abs() < 1e-15);
        let t3 = (1.0 + (1.0 + 4.0 * t2 * t2).sqrt()) / 2.0;
        assert_eq!(next_momentum(t2), t3);
        assert!((t3 - 2.194).abs() < 1e-3);
    }

    #[test]
    fn rejects_bad_arguments() {
        let y = noisy_steps(1);
        let p = MultiBandImage::zeros(24, 24, 1).unwrap();
        assert!(vtv_denoise(&y, &p, 0.0, 3, None).is_err());
        assert!(vtv_denoise(&y, &p, -1.0, 3, None).is_err());
        assert!(vtv_denoise(&y, &p, 1.0, 0, None).is_err());
        let wrong = MultiBandImage::zeros(20, 24, 1).unwrap();
        assert!(vtv_denoise(&y, &wrong, 1.0, 3, None).is_err());
    }

    #[test]
    fn tiny_lambda_is_identity() {
        let y = noisy_steps(2);
        let p = MultiBandImage::zeros(24, 24, 1).unwrap();
        let (x, _) = vtv_denoise(&y, &p, 1e-12, 10, None).unwrap();
        let err = x.sub(&y).unwrap().data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-6);
    }

    #[test]
    fn reference_equal_to_input_is_fixed_point() {
        let y = noisy_steps(3);
        let (x, _) = vtv_denoise(&y, &y, 0.7, 25, None).unwrap();
        assert!(x.sub(&y).unwrap().norm() <= 1e-8);
    }

    #[test]
    fn denoising_lowers_objective_and_keeps_dual_feasible() {
        let y = noisy_steps(4);
        let p = MultiBandImage::zeros(24, 24, 1).unwrap();
        for lambda in [1e-3, 1e-2, 0.1, 1.0, 10.0] {
            let (x, state) = vtv_denoise(&y, &p, lambda, 3, None).unwrap();
            let before = vtv_objective(&y, &y, &p, lambda).unwrap();
            let after = vtv_objective(&x, &y, &p, lambda).unwrap();
            assert!(after <= before, "lambda {lambda}: {after} > {before}");
            let (r, s) = (&state.dual.r, &state.dual.s);
            for i in 0..24 {
                for j in 0..24 {
                    if i < 23 && j < 23 {
                        let sq: f64 = (0..2).map(|d| r.get(i, j, d).powi(2) + s.get(i, j, d).powi(2)).sum();
                        assert!(sq <= 1.0 + 1e-12);
                    } else {
                        assert!((0..2).all(|d| r.get(i, j, d).abs() <= 1.0 && s.get(i, j, d).abs() <= 1.0));
                    }
                }
            }
        }
    }

    #[test]
    fn warm_start_continues_from_dual() {
        let y = noisy_steps(5);
        let p = MultiBandImage::zeros(24, 24, 1).unwrap();
        let (_, s1) = vtv_denoise(&y, &p, 0.3, 3, None).unwrap();
        let (x2, s2) = vtv_denoise(&y, &p, 0.3, 3, Some(&s1)).unwrap();
        assert_eq!(s2.k, 3);
        let (x_cold, _) = vtv_denoise(&y, &p, 0.3, 3, None).unwrap();
        let obj_warm = vtv_objective(&x2, &y, &p, 0.3).unwrap();
        let obj_cold = vtv_objective(&x_cold, &y, &p, 0.3).unwrap();
        assert!(obj_warm <= obj_cold + 1e-9);
    }

    #[test]
    fn objective_identities() {
        let y = noisy_steps(6);
        assert_eq!(vtv_objective(&y, &y, &y, 0.4).unwrap(), 0.0);
        let p = MultiBandImage::zeros(24, 24, 1).unwrap();
        let expected = 0.4 * gradient_residual_norm(&y, &p).unwrap();
        assert_eq!(vtv_objective(&y, &y, &p, 0.4).unwrap(), expected);
    }
}
