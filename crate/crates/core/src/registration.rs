//! Intensity-based registration of the Pan image against the current fused
//! estimate, using the ε-smoothed gradient-residual energy as similarity.
//!
//! The energy of a warp `θ` is
//! `E(θ) = Σ_{p ∈ Ω(θ)} sqrt(Σ_d Σ_q (∇_q X_d(p) − ∇_q W_θ(p))² + ε)`
//! where `W_θ` is the bilinearly warped Pan image and `Ω(θ)` holds the pixels
//! whose warped sample, and the forward neighbours it is differenced with,
//! land inside the Pan image. Comparisons always use the normalized value
//! `E / |Ω|`, which is `+∞` when the overlap is empty.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SirfError};
use crate::resample::{
    build_pyramid, max_pyramid_levels, warp_sample, warp_sample_with_border, Border, Decimator, TransformKind,
    TransformParams, WarpSample,
};
use crate::tensor::{forward_gradient, l_op, DualPair, GradientField, MultiBandImage};

/// Where `∇X` and `∇W_θ` are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompareGrid {
    /// The Pan grid, coarse-to-fine over an image pyramid.
    #[default]
    Full,
    /// Both `X` and the warped Pan are decimated by the factor before their
    /// gradients are compared. The warp itself stays on the Pan grid, so the
    /// estimate keeps sub-pixel precision while detail that `X` cannot yet
    /// resolve is ignored. Single level, no pyramid.
    Decimated(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationConfig {
    /// Smoothing constant inside the square root.
    pub epsilon: f64,
    /// Initial step size `t⁰` at every pyramid level.
    pub initial_step: f64,
    /// Backtracking factor `η ∈ (0, 1)`.
    pub backtrack: f64,
    /// Accepted descent steps per pyramid level.
    pub inner_iters: usize,
    /// Step shrinks allowed before a step is abandoned and the level ends.
    pub max_backtracks: usize,
    /// Pyramid depth; `None` picks the deepest pyramid with a coarsest side of
    /// at least 32 pixels, capped at 4 levels.
    pub pyramid_levels: Option<usize>,
    pub kind: TransformKind,
    /// Half-width, in coarsest-level pixels, of the offset grid searched
    /// before descent starts. Zero disables the search.
    pub search_radius: f64,
    /// Spacing of the offset grid in coarsest-level pixels.
    pub search_step: f64,
    /// Grid the gradients are compared on.
    pub grid: CompareGrid,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-10,
            initial_step: 1.0,
            backtrack: 0.8,
            inner_iters: 3,
            max_backtracks: 30,
            pyramid_levels: None,
            kind: TransformKind::Translation,
            search_radius: 2.0,
            search_step: 0.25,
            grid: CompareGrid::Full,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(SirfError::InvalidParameter(msg.into()));
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return bad("backtracking factor must lie in (0, 1)");
        }
        if !(self.initial_step > 0.0) {
            return bad("initial step must be positive");
        }
        if self.inner_iters == 0 {
            return bad("registration needs at least one inner iteration");
        }
        if self.pyramid_levels == Some(0) {
            return bad("pyramid needs at least one level");
        }
        if !(self.search_radius >= 0.0 && self.search_radius.is_finite()) {
            return bad("search radius must be finite and nonnegative");
        }
        if self.grid == CompareGrid::Decimated(0) {
            return bad("decimation factor must be positive");
        }
        if self.search_radius > 0.0 && !(self.search_step > 0.0) {
            return bad("search step must be positive");
        }
        Ok(())
    }
}

/// Default pyramid depth for an image: coarsest side ≥ 32 px, at most 4 levels.
pub fn default_pyramid_levels(height: usize, width: usize) -> usize {
    max_pyramid_levels(height, width, 32, 4)
}

/// One accepted state of the descent (the first record of each level is its
/// starting point, with `step = 0`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationStep {
    /// Pyramid level, 0 = full resolution.
    pub level: usize,
    pub theta: Vec<f64>,
    pub normalized_energy: f64,
    pub step: f64,
    pub overlap: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegistrationTrace {
    pub steps: Vec<RegistrationStep>,
}

/// Energy value and the number of pixels it sums over.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DgsEnergy {
    pub energy: f64,
    pub overlap: usize,
}

impl DgsEnergy {
    /// `E / M`, or `+∞` when nothing overlaps.
    pub fn normalized(&self) -> f64 {
        if self.overlap == 0 {
            f64::INFINITY
        } else {
            self.energy / self.overlap as f64
        }
    }
}

/// The registration energy for a fixed `X` and Pan image.
#[derive(Debug, Clone)]
pub struct DgsObjective<'a> {
    pan: &'a MultiBandImage,
    grad_x: GradientField,
    epsilon: f64,
}

struct Residual {
    energy: DgsEnergy,
    /// `Σ_d r_{q,d} / g` per pixel, zero outside the support.
    weight_v: Vec<f64>,
    weight_h: Vec<f64>,
}

fn check_pan(x: &MultiBandImage, pan: &MultiBandImage) -> Result<()> {
    if pan.bands() != 1 {
        return Err(SirfError::InvalidParameter(format!(
            "pan image must have one band, got {}",
            pan.bands()
        )));
    }
    if x.height() != pan.height() || x.width() != pan.width() {
        return Err(SirfError::ShapeMismatch {
            left: x.shape(),
            right: pan.shape(),
        });
    }
    Ok(())
}

/// Sums the per-pixel residual norms of `∇X − ∇W`. With a mask, a pixel
/// counts only when it and the forward neighbours it is differenced with are
/// inside.
fn residual(grad_x: &GradientField, wimg: &[f64], mask: Option<&[bool]>, epsilon: f64, with_weights: bool) -> Residual {
    let shape = grad_x.shape();
    let (h, w, bands) = (shape.height, shape.width, shape.bands);
    let plane = h * w;
    let (gv, gh) = (grad_x.vertical.data(), grad_x.horizontal.data());
    let inside = |k: usize| mask.is_none_or(|m| m[k]);
    let mut weight_v = if with_weights { vec![0.0; plane] } else { Vec::new() };
    let mut weight_h = if with_weights { vec![0.0; plane] } else { Vec::new() };
    let mut energy = 0.0;
    let mut overlap = 0;
    for i in 0..h {
        for j in 0..w {
            let k = i * w + j;
            let has_down = i + 1 < h;
            let has_right = j + 1 < w;
            if !inside(k) || (has_down && !inside(k + w)) || (has_right && !inside(k + 1)) {
                continue;
            }
            let wv = if has_down { wimg[k + w] - wimg[k] } else { 0.0 };
            let wh = if has_right { wimg[k + 1] - wimg[k] } else { 0.0 };
            let mut sq = epsilon;
            let (mut sv, mut sh) = (0.0, 0.0);
            for d in 0..bands {
                let rv = gv[d * plane + k] - wv;
                let rh = gh[d * plane + k] - wh;
                sq += rv * rv + rh * rh;
                sv += rv;
                sh += rh;
            }
            let g = sq.sqrt();
            energy += g;
            overlap += 1;
            if with_weights {
                weight_v[k] = sv / g;
                weight_h[k] = sh / g;
            }
        }
    }
    Residual {
        energy: DgsEnergy { energy, overlap },
        weight_v,
        weight_h,
    }
}

/// `∂E/∂W = L(u)` where `u` holds the per-pixel residual weights.
fn residual_adjoint(res: Residual, h: usize, w: usize) -> Result<MultiBandImage> {
    let weights = DualPair {
        r: MultiBandImage::from_vec(h, w, 1, res.weight_v)?,
        s: MultiBandImage::from_vec(h, w, 1, res.weight_h)?,
    };
    l_op(&weights)
}

/// Chains `∂E/∂W` through the bilinear sample slopes and the warp Jacobian.
fn warp_chain(dw: &[f64], warped: &WarpSample, theta: &TransformParams, scale: f64) -> Vec<f64> {
    let (h, w) = (warped.image.height(), warped.image.width());
    let n = theta.kind().param_count();
    let mut grad = [0.0; 6];
    for i in 0..h {
        for j in 0..w {
            let k = i * w + j;
            let (sx, sy) = (warped.dsx[k], warped.dsy[k]);
            if dw[k] == 0.0 || (sx == 0.0 && sy == 0.0) {
                continue;
            }
            let (jx, jy) = theta.jacobian(j as f64, i as f64);
            let (cx, cy) = (dw[k] * sx, dw[k] * sy);
            for p in 0..n {
                grad[p] += cx * jx[p] + cy * jy[p];
            }
        }
    }
    grad[..n].iter().map(|g| g * scale).collect()
}

impl<'a> DgsObjective<'a> {
    pub fn new(x: &MultiBandImage, pan: &'a MultiBandImage, epsilon: f64) -> Result<Self> {
        check_pan(x, pan)?;
        Ok(Self {
            pan,
            grad_x: forward_gradient(x),
            epsilon,
        })
    }

    pub fn energy(&self, theta: &TransformParams) -> Result<DgsEnergy> {
        let warped = warp_sample(self.pan, theta)?;
        Ok(residual(&self.grad_x, warped.image.data(), Some(warped.mask.as_slice()), self.epsilon, false).energy)
    }

    /// Energy and the gradient of the normalized energy `E/M` w.r.t. `θ`.
    pub fn energy_and_gradient(&self, theta: &TransformParams) -> Result<(DgsEnergy, Vec<f64>)> {
        let warped = warp_sample(self.pan, theta)?;
        let res = residual(&self.grad_x, warped.image.data(), Some(warped.mask.as_slice()), self.epsilon, true);
        let energy = res.energy;
        if energy.overlap == 0 {
            return Err(SirfError::NoOverlap);
        }
        let mut dw = residual_adjoint(res, self.pan.height(), self.pan.width())?;
        // Pixels outside the footprint carry no sample.
        for (v, &ok) in dw.data_mut().iter_mut().zip(warped.mask.as_slice()) {
            if !ok {
                *v = 0.0;
            }
        }
        Ok((energy, warp_chain(dw.data(), &warped, theta, 1.0 / energy.overlap as f64)))
    }
}

/// The energy on a decimated grid: `E(θ) = Σ_p ‖∇ψX(p) − ∇ψW_θ(p)‖` over
/// every coarse pixel, where `W_θ` is the Pan warped on its own grid with
/// replicated edges. It is `+∞` when the warp leaves the Pan entirely.
#[derive(Debug, Clone)]
pub struct DecimatedDgsObjective<'a> {
    pan: &'a MultiBandImage,
    dec: Decimator,
    grad_x: GradientField,
    epsilon: f64,
}

impl<'a> DecimatedDgsObjective<'a> {
    pub fn new(x: &MultiBandImage, pan: &'a MultiBandImage, factor: usize, epsilon: f64) -> Result<Self> {
        check_pan(x, pan)?;
        let dec = Decimator::new(x.height(), x.width(), factor)?;
        let grad_x = forward_gradient(&dec.apply(x)?);
        Ok(Self {
            pan,
            dec,
            grad_x,
            epsilon,
        })
    }

    fn sample(&self, theta: &TransformParams) -> Result<Option<(WarpSample, MultiBandImage)>> {
        let warped = warp_sample_with_border(self.pan, theta, Border::Replicate)?;
        if warped.mask.count() == 0 {
            return Ok(None);
        }
        let coarse = self.dec.apply(&warped.image)?;
        Ok(Some((warped, coarse)))
    }

    pub fn energy(&self, theta: &TransformParams) -> Result<DgsEnergy> {
        Ok(match self.sample(theta)? {
            Some((_, coarse)) => residual(&self.grad_x, coarse.data(), None, self.epsilon, false).energy,
            None => DgsEnergy { energy: 0.0, overlap: 0 },
        })
    }

    /// Energy and the gradient of `E/M` w.r.t. `θ`, `M` being the coarse
    /// pixel count.
    pub fn energy_and_gradient(&self, theta: &TransformParams) -> Result<(DgsEnergy, Vec<f64>)> {
        let (warped, coarse) = self.sample(theta)?.ok_or(SirfError::NoOverlap)?;
        let res = residual(&self.grad_x, coarse.data(), None, self.epsilon, true);
        let energy = res.energy;
        let (ch, cw) = self.dec.coarse_dims();
        let dw = self.dec.adjoint(&residual_adjoint(res, ch, cw)?)?;
        Ok((energy, warp_chain(dw.data(), &warped, theta, 1.0 / energy.overlap as f64)))
    }
}

enum Objective<'a> {
    Full(DgsObjective<'a>),
    Decimated(DecimatedDgsObjective<'a>),
}

impl Objective<'_> {
    fn energy(&self, theta: &TransformParams) -> Result<DgsEnergy> {
        match self {
            Self::Full(o) => o.energy(theta),
            Self::Decimated(o) => o.energy(theta),
        }
    }

    fn energy_and_gradient(&self, theta: &TransformParams) -> Result<(DgsEnergy, Vec<f64>)> {
        match self {
            Self::Full(o) => o.energy_and_gradient(theta),
            Self::Decimated(o) => o.energy_and_gradient(theta),
        }
    }
}

/// Registration energy `E` and the overlap count it is normalized by.
pub fn dgs_energy(
    x: &MultiBandImage,
    pan: &MultiBandImage,
    theta: &TransformParams,
    epsilon: f64,
) -> Result<DgsEnergy> {
    DgsObjective::new(x, pan, epsilon)?.energy(theta)
}

/// Gradient of the normalized energy `E/M` with respect to `θ`
/// (length 2 for translations, 6 for affine warps).
pub fn dgs_gradient(
    x: &MultiBandImage,
    pan: &MultiBandImage,
    theta: &TransformParams,
    epsilon: f64,
) -> Result<Vec<f64>> {
    Ok(DgsObjective::new(x, pan, epsilon)?
        .energy_and_gradient(theta)?
        .1)
}


fn normalized_at(obj: &Objective<'_>, theta: &TransformParams) -> Result<DgsEnergy> {
    match obj.energy(theta) {
        Ok(e) => Ok(e),
        Err(SirfError::SingularTransform { .. }) => Ok(DgsEnergy {
            energy: f64::INFINITY,
            overlap: 0,
        }),
        Err(e) => Err(e),
    }
}

/// Backtracking gradient descent on the normalized energy, coarse-to-fine on
/// the full grid or in one pass on a decimated grid.
///
/// Descent at the first level starts from the best point of an offset grid
/// search when that beats `theta0`. At every later level it starts from
/// whichever of the propagated estimate and the (rescaled) initial warp has
/// the lower energy, so the returned warp never scores worse than `theta0`.
pub fn register(
    x: &MultiBandImage,
    pan: &MultiBandImage,
    theta0: &TransformParams,
    cfg: &RegistrationConfig,
) -> Result<(TransformParams, RegistrationTrace)> {
    cfg.validate()?;
    theta0.validate()?;
    if theta0.kind() != cfg.kind {
        return Err(SirfError::InvalidParameter(format!(
            "initial warp is {:?} but the configuration asks for {:?}",
            theta0.kind(),
            cfg.kind
        )));
    }
    check_pan(x, pan)?;
    let (objectives, search_unit) = match cfg.grid {
        CompareGrid::Full => {
            let levels = cfg
                .pyramid_levels
                .unwrap_or_else(|| default_pyramid_levels(x.height(), x.width()));
            let x_pyr = build_pyramid(x, levels)?;
            let p_pyr = build_pyramid(pan, levels)?;
            (Some((x_pyr, p_pyr)), 1.0)
        }
        CompareGrid::Decimated(f) => (None, f as f64),
    };
    let decimated = match cfg.grid {
        CompareGrid::Decimated(f) => Some(DecimatedDgsObjective::new(x, pan, f, cfg.epsilon)?),
        CompareGrid::Full => None,
    };
    let levels = objectives.as_ref().map_or(1, |(xp, _)| xp.len());

    let mut initial_per_level = vec![*theta0];
    for _ in 1..levels {
        let next = initial_per_level.last().expect("non-empty").to_coarser();
        initial_per_level.push(next);
    }

    let mut trace = RegistrationTrace::default();
    let mut theta = initial_per_level[levels - 1];
    for level in (0..levels).rev() {
        let obj = match (&objectives, &decimated) {
            (Some((xp, pp)), _) => Objective::Full(DgsObjective::new(&xp[level], &pp[level], cfg.epsilon)?),
            (None, Some(d)) => Objective::Decimated(d.clone()),
            (None, None) => unreachable!("one objective is always built"),
        };
        let mut current = normalized_at(&obj, &theta)?;
        let fallback = initial_per_level[level];
        if fallback != theta {
            let alt = normalized_at(&obj, &fallback)?;
            if alt.normalized() < current.normalized() {
                theta = fallback;
                current = alt;
            }
        }
        if level == levels - 1 && cfg.search_radius > 0.0 {
            let (best, e) = offset_search(&obj, &theta, cfg, search_unit)?;
            if e.normalized() < current.normalized() {
                theta = best;
                current = e;
            }
        }
        if current.overlap == 0 {
            return Err(SirfError::NoOverlap);
        }
        if !current.energy.is_finite() {
            return Err(SirfError::InvalidParameter(
                "registration energy is not finite at the initial warp".into(),
            ));
        }
        trace.steps.push(RegistrationStep {
            level,
            theta: theta.params(),
            normalized_energy: current.normalized(),
            step: 0.0,
            overlap: current.overlap,
        });

        let mut t = cfg.initial_step;
        let mut accepted = 0;
        'descent: while accepted < cfg.inner_iters {
            let (_, grad) = obj.energy_and_gradient(&theta)?;
            if grad.iter().all(|g| *g == 0.0) {
                break;
            }
            let params = theta.params();
            let mut retries = 0;
            loop {
                let candidate: Vec<f64> = params.iter().zip(&grad).map(|(p, g)| p - t * g).collect();
                let next = TransformParams::from_params(cfg.kind, &candidate)?;
                let e = normalized_at(&obj, &next)?;
                if e.normalized() > current.normalized() || !e.normalized().is_finite() {
                    t *= cfg.backtrack;
                    retries += 1;
                    if retries > cfg.max_backtracks {
                        break 'descent;
                    }
                    continue;
                }
                theta = next;
                current = e;
                accepted += 1;
                trace.steps.push(RegistrationStep {
                    level,
                    theta: theta.params(),
                    normalized_energy: current.normalized(),
                    step: t,
                    overlap: current.overlap,
                });
                break;
            }
        }
        if level > 0 {
            theta = theta.to_finer();
        }
    }
    Ok((theta, trace))
}

/// Best offset on a square grid around `theta`, spaced `search_step · unit`
/// Pan pixels. The grid is displaced by an eighth of its spacing so no
/// candidate sits on a whole or half pixel, where bilinear kinks and overlap
/// changes line up for every pixel at once.
fn offset_search(
    obj: &Objective<'_>,
    theta: &TransformParams,
    cfg: &RegistrationConfig,
    unit: f64,
) -> Result<(TransformParams, DgsEnergy)> {
    let n = (cfg.search_radius / cfg.search_step).floor() as i64;
    let spacing = cfg.search_step * unit;
    let jitter = spacing / 8.0;
    let mut best = (*theta, normalized_at(obj, theta)?);
    for i in -n..=n {
        for j in -n..=n {
            let candidate = theta.shifted(j as f64 * spacing + jitter, i as f64 * spacing + jitter);
            let e = normalized_at(obj, &candidate)?;
            if e.normalized() < best.1.normalized() {
                best = (candidate, e);
            }
        }
    }
    Ok(best)
}

/// Normalized energy at each integer shift along one axis.
pub fn translation_sweep(
    x: &MultiBandImage,
    pan: &MultiBandImage,
    shifts: impl IntoIterator<Item = i32>,
    horizontal: bool,
    epsilon: f64,
) -> Result<Vec<(i32, f64)>> {
    let obj = DgsObjective::new(x, pan, epsilon)?;
    shifts
        .into_iter()
        .map(|s| {
            let theta = if horizontal {
                TransformParams::translation(s as f64, 0.0)
            } else {
                TransformParams::translation(0.0, s as f64)
            };
            Ok((s, obj.energy(&theta)?.normalized()))
        })
        .collect()
}
