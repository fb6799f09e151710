//! The outer accelerated proximal-gradient loop that alternates the fused
//! image update with Pan registration.
//!
//! Each outer iteration takes a gradient step on `½‖ψX − M‖²` at the
//! extrapolated point, applies the gradient-sparsity prox through
//! [`vtv_denoise`], optionally re-registers the Pan image against the new
//! iterate, and updates the momentum.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SirfError};
use crate::registration::{register, CompareGrid, RegistrationConfig, RegistrationTrace};
use crate::resample::{upsample, warp_with_border, Border, Decimator, TransformParams};
use crate::tensor::{gradient_residual_norm, MultiBandImage};
use crate::vtv::{next_momentum, vtv_denoise, DenoiseState};

/// How the data-term residual is carried back to the fine grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackProjection {
    /// Bicubic interpolation `ψᵀ`; `ψψᵀ ≈ I` on smooth content.
    #[default]
    Bicubic,
    /// The exact transpose `ψ*`, making each step a true gradient step.
    Adjoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Weight of the gradient-sparsity term.
    pub lambda: f64,
    pub max_outer: usize,
    /// Stop once `‖Xᵏ − Xᵏ⁻¹‖ / ‖Xᵏ⁻¹‖` falls below this.
    pub tol: f64,
    pub inner_denoise_iters: usize,
    pub reg_enabled: bool,
    /// Registration runs only during the first `reg_first_k` outer iterations.
    pub reg_first_k: usize,
    /// Step constant `L`; the gradient step is `1/L`.
    pub lipschitz: f64,
    /// Seed each prox with the previous dual. Off by default: with three
    /// inner iterations the warm-started scheme can settle into a cycle just
    /// above the default tolerance.
    pub warm_start_dual: bool,
    pub back_projection: BackProjection,
    /// Accelerated extrapolation; `false` gives plain proximal gradient.
    pub momentum: bool,
    pub registration: RegistrationConfig,
    /// Compare gradients on the MS grid during registration, overriding
    /// `registration.grid` with a decimation by the resolution ratio. Early
    /// estimates carry no detail finer than the MS grid, and matching them
    /// against the full-resolution Pan biases the warp.
    pub register_on_ms_grid: bool,
    /// Starting warp; identity of `registration.kind` when absent.
    pub initial_theta: Option<TransformParams>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            max_outer: 300,
            tol: 1e-3,
            inner_denoise_iters: 3,
            reg_enabled: true,
            reg_first_k: 3,
            lipschitz: 1.0,
            warm_start_dual: false,
            back_projection: BackProjection::default(),
            momentum: true,
            registration: RegistrationConfig::default(),
            register_on_ms_grid: true,
            initial_theta: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(SirfError::InvalidParameter(msg.into()));
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be positive");
        }
        if !(self.tol > 0.0) {
            return bad("tolerance must be positive");
        }
        if self.max_outer == 0 {
            return bad("max_outer must be at least 1");
        }
        if self.inner_denoise_iters == 0 {
            return bad("inner_denoise_iters must be at least 1");
        }
        if self.reg_first_k > self.max_outer {
            return bad("reg_first_k cannot exceed max_outer");
        }
        if !(self.lipschitz > 0.0 && self.lipschitz.is_finite()) {
            return bad("step constant must be positive");
        }
        self.registration.validate()
    }
}

/// Diagnostics recorded after every outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    /// `½‖ψX − M‖²`.
    pub data_term: f64,
    /// `λ‖∇X − ∇T(D(P))‖₂,₁`.
    pub regularizer: f64,
    pub relative_change: f64,
    pub theta: Vec<f64>,
    pub elapsed_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    pub records: Vec<IterationRecord>,
    /// Objective at the initialization `Y⁰`.
    pub initial_objective: f64,
    /// Whether the relative-change tolerance was met.
    pub converged: bool,
    /// Step constant actually used (doubled while `‖ψ*ψ‖` exceeded it).
    pub lipschitz: f64,
    pub registrations: Vec<RegistrationTrace>,
}

impl ConvergenceTrace {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn final_objective(&self) -> Option<f64> {
        self.records.last().map(|r| r.objective)
    }

    /// Fixed-column CSV:
    /// `iteration,objective,data_term,regularizer,relative_change,elapsed_seconds,theta...`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "iteration,objective,data_term,regularizer,relative_change,elapsed_seconds,theta\n",
        );
        for r in &self.records {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }
}

impl IterationRecord {
    pub fn csv_row(&self) -> String {
        let theta: Vec<String> = self.theta.iter().map(|v| format!("{v:.9}")).collect();
        format!(
            "{},{:.12e},{:.12e},{:.12e},{:.6e},{:.6},{}",
            self.iteration,
            self.objective,
            self.data_term,
            self.regularizer,
            self.relative_change,
            self.elapsed_seconds,
            theta.join(";")
        )
    }
}

#[derive(Debug, Clone)]
pub struct FusionResult {
    pub fused: MultiBandImage,
    pub theta: TransformParams,
    pub trace: ConvergenceTrace,
}

/// Integer resolution ratio between the Pan and MS grids.
pub fn resolution_ratio(ms: &MultiBandImage, pan: &MultiBandImage) -> Result<usize> {
    let mismatch = || SirfError::ShapeMismatch {
        left: ms.shape(),
        right: pan.shape(),
    };
    if pan.bands() != 1 {
        return Err(SirfError::InvalidParameter(format!(
            "pan image must have one band, got {}",
            pan.bands()
        )));
    }
    if !pan.height().is_multiple_of(ms.height()) || !pan.width().is_multiple_of(ms.width()) {
        return Err(mismatch());
    }
    let c = pan.height() / ms.height();
    if pan.width() / ms.width() != c {
        return Err(mismatch());
    }
    Ok(c)
}

/// The reference image `T(D(P))` seen by the prox: the warped Pan with edge
/// replication outside the overlap, so the border carries no artificial edge.
pub fn fusion_reference(pan: &MultiBandImage, theta: &TransformParams) -> Result<MultiBandImage> {
    Ok(warp_with_border(pan, theta, Border::Replicate)?.0)
}

/// Data and regularization terms of the fusion energy.
pub fn sirf_energy_terms(
    x: &MultiBandImage,
    theta: &TransformParams,
    ms: &MultiBandImage,
    pan: &MultiBandImage,
    lambda: f64,
) -> Result<(f64, f64)> {
    let c = resolution_ratio(ms, pan)?;
    if x.height() != pan.height() || x.width() != pan.width() || x.bands() != ms.bands() {
        return Err(SirfError::ShapeMismatch {
            left: x.shape(),
            right: pan.shape(),
        });
    }
    let dec = Decimator::new(x.height(), x.width(), c)?;
    let data = 0.5 * dec.apply(x)?.sub(ms)?.norm().powi(2);
    let reference = fusion_reference(pan, theta)?;
    let reg = if lambda == 0.0 {
        0.0
    } else {
        lambda * gradient_residual_norm(x, &reference)?
    };
    Ok((data, reg))
}

/// `½‖ψX − M‖²_F + λ‖∇X − ∇T(D(P))‖₂,₁`.
pub fn sirf_objective(
    x: &MultiBandImage,
    theta: &TransformParams,
    ms: &MultiBandImage,
    pan: &MultiBandImage,
    lambda: f64,
) -> Result<f64> {
    let (d, r) = sirf_energy_terms(x, theta, ms, pan, lambda)?;
    Ok(d + r)
}

/// Fuses `ms` (`h/c x w/c x s`) with `pan` (`h x w x 1`).
pub fn sirf_fuse(
    ms: &MultiBandImage,
    pan: &MultiBandImage,
    cfg: &SolverConfig,
) -> Result<FusionResult> {
    sirf_fuse_observed(ms, pan, cfg, |_| {})
}

/// [`sirf_fuse`], calling `observer` with each iteration record as soon as it
/// is produced.
pub fn sirf_fuse_observed(
    ms: &MultiBandImage,
    pan: &MultiBandImage,
    cfg: &SolverConfig,
    mut observer: impl FnMut(&IterationRecord),
) -> Result<FusionResult> {
    cfg.validate()?;
    let c = resolution_ratio(ms, pan)?;
    let dec = Decimator::new(pan.height(), pan.width(), c)?;
    let start = Instant::now();

    let mut lipschitz = cfg.lipschitz;
    let norm = match cfg.back_projection {
        BackProjection::Bicubic => dec.back_projection_radius(),
        BackProjection::Adjoint => dec.normal_norm(),
    };
    while norm > lipschitz * (1.0 + 1e-9) {
        lipschitz *= 2.0;
    }

    let mut theta = match cfg.initial_theta {
        Some(t) => {
            if t.kind() != cfg.registration.kind {
                return Err(SirfError::InvalidParameter(
                    "initial warp kind differs from the registration kind".into(),
                ));
            }
            t.validate()?;
            t
        }
        None => TransformParams::identity(cfg.registration.kind),
    };
    let mut reference = fusion_reference(pan, &theta)?;

    let reg_cfg = RegistrationConfig {
        grid: if cfg.register_on_ms_grid {
            CompareGrid::Decimated(c)
        } else {
            cfg.registration.grid
        },
        ..cfg.registration.clone()
    };

    let y0 = upsample(ms, c)?;
    let mut trace = ConvergenceTrace {
        initial_objective: sirf_objective(&y0, &theta, ms, pan, cfg.lambda)?,
        lipschitz,
        ..Default::default()
    };
    let mut x_prev = y0.clone();
    let mut y = y0;
    let mut t = 1.0;
    let mut dual: Option<DenoiseState> = None;
    let prox_lambda = cfg.lambda / lipschitz;

    for k in 1..=cfg.max_outer {
        let residual = dec.apply(&y)?.sub(ms)?;
        let mut g = y;
        let back = match cfg.back_projection {
            BackProjection::Bicubic => dec.back_project(&residual)?,
            BackProjection::Adjoint => dec.adjoint(&residual)?,
        };
        g.axpy(-1.0 / lipschitz, &back)?;

        let warm = if cfg.warm_start_dual { dual.as_ref() } else { None };
        let (x, state) = vtv_denoise(&g, &reference, prox_lambda, cfg.inner_denoise_iters, warm)?;
        dual = Some(state);

        let registering = cfg.reg_enabled && k <= cfg.reg_first_k;
        if registering {
            let (next, reg_trace) = register(&x, pan, &theta, &reg_cfg)?;
            theta = next;
            reference = fusion_reference(pan, &theta)?;
            trace.registrations.push(reg_trace);
        }

        y = if cfg.momentum {
            let t_next = next_momentum(t);
            let beta = (t - 1.0) / t_next;
            t = t_next;
            x.zip_map(&x_prev, |a, b| a + beta * (a - b))?
        } else {
            x.clone()
        };

        let change = x.sub(&x_prev)?.norm();
        let base = x_prev.norm();
        let relative_change = if base > 0.0 { change / base } else { change };
        let (data_term, regularizer) = sirf_energy_terms(&x, &theta, ms, pan, cfg.lambda)?;
        let record = IterationRecord {
            iteration: k,
            objective: data_term + regularizer,
            data_term,
            regularizer,
            relative_change,
            theta: theta.params(),
            elapsed_seconds: start.elapsed().as_secs_f64(),
        };
        observer(&record);
        let finite = record.objective.is_finite();
        trace.records.push(record);
        if !finite {
            return Err(SirfError::NonFiniteObjective {
                iteration: k,
                trace: Box::new(trace),
            });
        }

        x_prev = x;
        if relative_change < cfg.tol && !registering {
            trace.converged = true;
            break;
        }
    }

    Ok(FusionResult {
        fused: x_prev,
        theta,
        trace,
    })
}

/// Affine intensity map applied to both inputs before solving, so that their
/// joint range becomes `[0, 255]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityScaling {
    pub offset: f64,
    pub scale: f64,
}

impl IntensityScaling {
    pub fn identity() -> Self {
        Self {
            offset: 0.0,
            scale: 1.0,
        }
    }

    /// Maps the joint `[min, max]` of the images onto `[0, 255]`; identity
    /// when the images are constant.
    pub fn fit(images: &[&MultiBandImage]) -> Self {
        let (lo, hi) = images.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), im| {
            let (a, b) = im.min_max();
            (lo.min(a), hi.max(b))
        });
        if !(hi > lo) {
            return Self::identity();
        }
        Self {
            offset: lo,
            scale: 255.0 / (hi - lo),
        }
    }

    pub fn forward(&self, x: &MultiBandImage) -> MultiBandImage {
        x.map(|v| (v - self.offset) * self.scale)
    }

    pub fn inverse(&self, x: &MultiBandImage) -> MultiBandImage {
        x.map(|v| v / self.scale + self.offset)
    }
}
