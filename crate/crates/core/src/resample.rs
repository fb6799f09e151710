//! Bicubic decimation `ψ`, its exact adjoint, bicubic interpolation, parametric
//! warps and image pyramids.
//!
//! Resampling uses the Catmull-Rom kernel (`a = -0.5`) with pixel-centre
//! alignment: output sample `o` of a factor-`c` decimation sits at source
//! coordinate `(o + 0.5)·c − 0.5`. Edge taps replicate the border sample.
//! No low-pass prefilter is applied before decimation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, Shape, SirfError};
use crate::tensor::{GradientField, MultiBandImage};

const CUBIC_A: f64 = -0.5;

/// Catmull-Rom cubic convolution kernel.
pub fn cubic_kernel(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((CUBIC_A + 2.0) * x - (CUBIC_A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((CUBIC_A * x - 5.0 * CUBIC_A) * x + 8.0 * CUBIC_A) * x - 4.0 * CUBIC_A
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy)]
struct Taps {
    index: [usize; 4],
    weight: [f64; 4],
}

/// One axis of a separable cubic resampling, stored as four taps per output.
#[derive(Debug, Clone)]
struct Axis {
    src_len: usize,
    taps: Vec<Taps>,
}

impl Axis {
    fn new(src_len: usize, dst_len: usize, position: impl Fn(usize) -> f64) -> Self {
        let last = src_len as isize - 1;
        let taps = (0..dst_len)
            .map(|o| {
                let pos = position(o);
                let base = pos.floor() as isize - 1;
                let mut t = Taps {
                    index: [0; 4],
                    weight: [0.0; 4],
                };
                for k in 0..4 {
                    let src = base + k as isize;
                    t.index[k] = src.clamp(0, last) as usize;
                    t.weight[k] = cubic_kernel(pos - src as f64);
                }
                t
            })
            .collect();
        Self { src_len, taps }
    }

    fn decimate(src_len: usize, factor: usize) -> Self {
        let c = factor as f64;
        Self::new(src_len, src_len / factor, |o| (o as f64 + 0.5) * c - 0.5)
    }

    fn interpolate(src_len: usize, factor: usize) -> Self {
        let c = factor as f64;
        Self::new(src_len, src_len * factor, |o| (o as f64 + 0.5) / c - 0.5)
    }

    fn dst_len(&self) -> usize {
        self.taps.len()
    }

    /// Applies the axis to a strided line: `dst[o] = Σ w·src[idx]`.
    #[inline]
    fn apply_line(&self, src: &[f64], src_stride: usize, dst: &mut [f64], dst_stride: usize) {
        for (o, t) in self.taps.iter().enumerate() {
            let mut acc = 0.0;
            for k in 0..4 {
                acc += t.weight[k] * src[t.index[k] * src_stride];
            }
            dst[o * dst_stride] = acc;
        }
    }

    /// Transposed application: scatters `src` (length `dst_len`) back onto the
    /// source grid, accumulating into `dst`.
    #[inline]
    fn adjoint_line(&self, src: &[f64], src_stride: usize, dst: &mut [f64], dst_stride: usize) {
        for (o, t) in self.taps.iter().enumerate() {
            let v = src[o * src_stride];
            for k in 0..4 {
                dst[t.index[k] * dst_stride] += t.weight[k] * v;
            }
        }
    }

    /// Largest eigenvalue of `AᵀA`.
    fn normal_norm(&self) -> f64 {
        let mut tmp = vec![0.0; self.dst_len()];
        power_iteration(self.src_len, |v, out| {
            self.apply_line(v, 1, &mut tmp, 1);
            out.iter_mut().for_each(|x| *x = 0.0);
            self.adjoint_line(&tmp, 1, out, 1);
        })
    }

    /// Spectral radius of `A∘B` where `back` maps this axis' output grid
    /// onto its source grid, by power iteration on the output grid.
    fn round_trip_radius(&self, back: &Axis) -> f64 {
        let n = self.dst_len();
        let mut v: Vec<f64> = (0..n).map(|k| 1.0 + 0.5 * (k as f64 * 0.7).cos()).collect();
        let mut up = vec![0.0; self.src_len];
        let mut next = vec![0.0; n];
        let mut rho = 0.0;
        for _ in 0..2000 {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
            back.apply_line(&v, 1, &mut up, 1);
            self.apply_line(&up, 1, &mut next, 1);
            let est = next.iter().map(|x| x * x).sum::<f64>().sqrt();
            std::mem::swap(&mut v, &mut next);
            let done = (est - rho).abs() <= 1e-14 * est;
            rho = est;
            if done {
                break;
            }
        }
        rho
    }
}

/// Dominant eigenvalue of a symmetric positive semi-definite operator.
fn power_iteration(n: usize, mut apply: impl FnMut(&[f64], &mut [f64])) -> f64 {
    let mut v: Vec<f64> = (0..n).map(|k| 1.0 + 0.5 * (k as f64 * 0.7).cos()).collect();
    let mut next = vec![0.0; n];
    let mut lambda = 0.0;
    for _ in 0..2000 {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        apply(&v, &mut next);
        let est: f64 = next.iter().zip(&v).map(|(a, b)| a * b).sum();
        std::mem::swap(&mut v, &mut next);
        let done = (est - lambda).abs() <= 1e-14 * est.abs();
        lambda = est;
        if done {
            break;
        }
    }
    lambda
}

/// A separable linear resampling between two grid sizes.
#[derive(Debug, Clone)]
pub struct Resampler {
    rows: Axis,
    cols: Axis,
    src: (usize, usize),
}

impl Resampler {
    fn out_dims(&self) -> (usize, usize) {
        (self.rows.dst_len(), self.cols.dst_len())
    }

    fn apply_plane(&self, src: &[f64], dst: &mut [f64]) {
        let (h, w) = self.src;
        let (oh, ow) = self.out_dims();
        let mut tmp = vec![0.0; h * ow];
        for i in 0..h {
            self.cols
                .apply_line(&src[i * w..(i + 1) * w], 1, &mut tmp[i * ow..(i + 1) * ow], 1);
        }
        for j in 0..ow {
            self.rows.apply_line(&tmp[j..], ow, &mut dst[j..], ow);
        }
        debug_assert_eq!(dst.len(), oh * ow);
    }

    fn adjoint_plane(&self, src: &[f64], dst: &mut [f64]) {
        let (h, w) = self.src;
        let (_, ow) = self.out_dims();
        let mut tmp = vec![0.0; h * ow];
        for j in 0..ow {
            self.rows.adjoint_line(&src[j..], ow, &mut tmp[j..], ow);
        }
        dst.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..h {
            self.cols
                .adjoint_line(&tmp[i * ow..(i + 1) * ow], 1, &mut dst[i * w..(i + 1) * w], 1);
        }
    }

    fn apply(&self, x: &MultiBandImage) -> Result<MultiBandImage> {
        let (h, w) = self.src;
        if x.height() != h || x.width() != w {
            return Err(SirfError::ShapeMismatch {
                left: Shape::new(h, w, x.bands()),
                right: x.shape(),
            });
        }
        let (oh, ow) = self.out_dims();
        let mut out = MultiBandImage::zeros(oh, ow, x.bands())?;
        out.data_mut()
            .par_chunks_mut(oh * ow)
            .zip(x.data().par_chunks(h * w))
            .for_each(|(dst, src)| self.apply_plane(src, dst));
        Ok(out)
    }

    fn adjoint(&self, y: &MultiBandImage) -> Result<MultiBandImage> {
        let (h, w) = self.src;
        let (oh, ow) = self.out_dims();
        if y.height() != oh || y.width() != ow {
            return Err(SirfError::ShapeMismatch {
                left: Shape::new(oh, ow, y.bands()),
                right: y.shape(),
            });
        }
        let mut out = MultiBandImage::zeros(h, w, y.bands())?;
        out.data_mut()
            .par_chunks_mut(h * w)
            .zip(y.data().par_chunks(oh * ow))
            .for_each(|(dst, src)| self.adjoint_plane(src, dst));
        Ok(out)
    }
}

/// The decimation operator `ψ` for a fixed fine grid and factor, with its
/// exact transpose `ψ*` and the bicubic back-projection `ψᵀ`.
#[derive(Debug, Clone)]
pub struct Decimator {
    factor: usize,
    inner: Resampler,
    up: Resampler,
}

impl Decimator {
    pub fn new(height: usize, width: usize, factor: usize) -> Result<Self> {
        let shape = Shape::new(height, width, 1);
        if factor == 0 || !height.is_multiple_of(factor) || !width.is_multiple_of(factor) {
            return Err(SirfError::NotDivisible { shape, factor });
        }
        if height / factor < 2 || width / factor < 2 {
            return Err(SirfError::InvalidShape {
                shape,
                reason: "decimated image would be smaller than 2x2",
            });
        }
        Ok(Self {
            factor,
            inner: Resampler {
                rows: Axis::decimate(height, factor),
                cols: Axis::decimate(width, factor),
                src: (height, width),
            },
            up: Resampler {
                rows: Axis::interpolate(height / factor, factor),
                cols: Axis::interpolate(width / factor, factor),
                src: (height / factor, width / factor),
            },
        })
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    pub fn fine_dims(&self) -> (usize, usize) {
        self.inner.src
    }

    pub fn coarse_dims(&self) -> (usize, usize) {
        self.inner.out_dims()
    }

    /// `ψX`.
    pub fn apply(&self, x: &MultiBandImage) -> Result<MultiBandImage> {
        self.inner.apply(x)
    }

    /// `ψ*Y`, the exact transpose of [`Decimator::apply`].
    pub fn adjoint(&self, y: &MultiBandImage) -> Result<MultiBandImage> {
        self.inner.adjoint(y)
    }

    /// `ψᵀY`: bicubic interpolation back onto the fine grid. Constants are
    /// preserved, so `ψψᵀ ≈ I` on smooth images.
    pub fn back_project(&self, y: &MultiBandImage) -> Result<MultiBandImage> {
        self.up.apply(y)
    }

    /// `‖ψ*ψ‖₂`, by power iteration on each separable axis.
    pub fn normal_norm(&self) -> f64 {
        self.inner.rows.normal_norm() * self.inner.cols.normal_norm()
    }

    /// Spectral radius of `ψψᵀ` (equivalently of `ψᵀψ`) for the bicubic
    /// back-projection.
    pub fn back_projection_radius(&self) -> f64 {
        self.inner.rows.round_trip_radius(&self.up.rows) * self.inner.cols.round_trip_radius(&self.up.cols)
    }
}

/// Bicubic decimation of every band by `factor` (ψ).
pub fn downsample(x: &MultiBandImage, factor: usize) -> Result<MultiBandImage> {
    Decimator::new(x.height(), x.width(), factor)?.apply(x)
}

/// Exact transpose of [`downsample`] onto a `height x width` grid.
pub fn downsample_adjoint(
    y: &MultiBandImage,
    factor: usize,
    height: usize,
    width: usize,
) -> Result<MultiBandImage> {
    Decimator::new(height, width, factor)?.adjoint(y)
}

/// Bicubic interpolation of every band by `factor`.
pub fn upsample(m: &MultiBandImage, factor: usize) -> Result<MultiBandImage> {
    if factor == 0 {
        return Err(SirfError::NotDivisible {
            shape: m.shape(),
            factor,
        });
    }
    Resampler {
        rows: Axis::interpolate(m.height(), factor),
        cols: Axis::interpolate(m.width(), factor),
        src: (m.height(), m.width()),
    }
    .apply(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    Translation,
    Affine,
}

impl TransformKind {
    pub fn param_count(self) -> usize {
        match self {
            TransformKind::Translation => 2,
            TransformKind::Affine => 6,
        }
    }
}

impl std::str::FromStr for TransformKind {
    type Err = SirfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "translation" => Ok(Self::Translation),
            "affine" => Ok(Self::Affine),
            other => Err(SirfError::InvalidParameter(format!(
                "unknown transform kind `{other}` (expected translation or affine)"
            ))),
        }
    }
}

/// Warp parameters, in pixel units, mapping an output pixel `(x, y)` (column,
/// row) to the source location it samples.
///
/// * translation `(tx, ty)`: source = `(x + tx, y + ty)`
/// * affine `[a0..a5]`: source = `(a0·x + a1·y + a2, a3·x + a4·y + a5)`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TransformParams {
    Translation { tx: f64, ty: f64 },
    Affine { a: [f64; 6] },
}

impl TransformParams {
    pub fn identity(kind: TransformKind) -> Self {
        match kind {
            TransformKind::Translation => Self::Translation { tx: 0.0, ty: 0.0 },
            TransformKind::Affine => Self::Affine {
                a: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
            },
        }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self::Translation { tx, ty }
    }

    pub fn affine(a: [f64; 6]) -> Result<Self> {
        let t = Self::Affine { a };
        t.validate()?;
        Ok(t)
    }

    pub fn kind(&self) -> TransformKind {
        match self {
            Self::Translation { .. } => TransformKind::Translation,
            Self::Affine { .. } => TransformKind::Affine,
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match *self {
            Self::Translation { tx, ty } => vec![tx, ty],
            Self::Affine { a } => a.to_vec(),
        }
    }

    pub fn from_params(kind: TransformKind, p: &[f64]) -> Result<Self> {
        if p.len() != kind.param_count() {
            return Err(SirfError::InvalidParameter(format!(
                "{kind:?} transform takes {} parameters, got {}",
                kind.param_count(),
                p.len()
            )));
        }
        Ok(match kind {
            TransformKind::Translation => Self::Translation { tx: p[0], ty: p[1] },
            TransformKind::Affine => Self::Affine {
                a: [p[0], p[1], p[2], p[3], p[4], p[5]],
            },
        })
    }

    /// The same warp with its offset terms moved by `(dx, dy)`.
    pub fn shifted(&self, dx: f64, dy: f64) -> Self {
        match *self {
            Self::Translation { tx, ty } => Self::Translation { tx: tx + dx, ty: ty + dy },
            Self::Affine { a } => Self::Affine {
                a: [a[0], a[1], a[2] + dx, a[3], a[4], a[5] + dy],
            },
        }
    }

    /// The equivalent `[a0..a5]` affine coefficients.
    pub fn as_affine(&self) -> [f64; 6] {
        match *self {
            Self::Translation { tx, ty } => [1.0, 0.0, tx, 0.0, 1.0, ty],
            Self::Affine { a } => a,
        }
    }

    /// Horizontal and vertical offset terms.
    pub fn offset(&self) -> (f64, f64) {
        let a = self.as_affine();
        (a[2], a[5])
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.as_affine();
        if a.iter().any(|v| !v.is_finite()) {
            return Err(SirfError::InvalidParameter(
                "transform parameters must be finite".into(),
            ));
        }
        let det = a[0] * a[4] - a[1] * a[3];
        if det.abs() < 1e-12 {
            return Err(SirfError::SingularTransform { det });
        }
        Ok(())
    }

    #[inline]
    pub fn source(&self, x: f64, y: f64) -> (f64, f64) {
        match *self {
            Self::Translation { tx, ty } => (x + tx, y + ty),
            Self::Affine { a } => (a[0] * x + a[1] * y + a[2], a[3] * x + a[4] * y + a[5]),
        }
    }

    /// The warp that undoes this one.
    pub fn inverse(&self) -> Result<Self> {
        self.validate()?;
        Ok(match *self {
            Self::Translation { tx, ty } => Self::Translation { tx: -tx, ty: -ty },
            Self::Affine { a } => {
                let det = a[0] * a[4] - a[1] * a[3];
                let (i0, i1, i3, i4) = (a[4] / det, -a[1] / det, -a[3] / det, a[0] / det);
                Self::Affine {
                    a: [i0, i1, -(i0 * a[2] + i1 * a[5]), i3, i4, -(i3 * a[2] + i4 * a[5])],
                }
            }
        })
    }

    /// Re-expresses the warp on a grid decimated by 2 (see [`build_pyramid`]).
    /// Fine coordinate `x_f` corresponds to coarse `x_c = (x_f − 0.5)/2`.
    pub fn to_coarser(&self) -> Self {
        match *self {
            Self::Translation { tx, ty } => Self::Translation {
                tx: tx / 2.0,
                ty: ty / 2.0,
            },
            Self::Affine { a } => {
                let (bx, by) = Self::centre_correction(&a);
                Self::Affine {
                    a: [a[0], a[1], (a[2] + bx) / 2.0, a[3], a[4], (a[5] + by) / 2.0],
                }
            }
        }
    }

    /// Inverse of [`TransformParams::to_coarser`]. For translations this is
    /// a plain doubling.
    pub fn to_finer(&self) -> Self {
        match *self {
            Self::Translation { tx, ty } => Self::Translation {
                tx: 2.0 * tx,
                ty: 2.0 * ty,
            },
            Self::Affine { a } => {
                let (bx, by) = Self::centre_correction(&a);
                Self::Affine {
                    a: [a[0], a[1], 2.0 * a[2] - bx, a[3], a[4], 2.0 * a[5] - by],
                }
            }
        }
    }

    fn centre_correction(a: &[f64; 6]) -> (f64, f64) {
        (
            0.5 * (a[0] - 1.0 + a[1]),
            0.5 * (a[3] + a[4] - 1.0),
        )
    }

    /// Rows of `∂source/∂θ` at output pixel `(x, y)`:
    /// `(∂sx/∂θ, ∂sy/∂θ)`, each of length `param_count`.
    #[inline]
    pub fn jacobian(&self, x: f64, y: f64) -> ([f64; 6], [f64; 6]) {
        match self {
            Self::Translation { .. } => (
                [1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
                [0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
            ),
            Self::Affine { .. } => (
                [x, y, 1.0, 0.0, 0.0, 0.0],
                [0.0, 0.0, 0.0, x, y, 1.0],
            ),
        }
    }
}

/// Pixels whose warped source location falls inside the source image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverlapMask {
    height: usize,
    width: usize,
    valid: Vec<bool>,
    count: usize,
}

impl OverlapMask {
    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            valid: vec![true; height * width],
            count: height * width,
        }
    }

    pub fn from_valid(height: usize, width: usize, valid: Vec<bool>) -> Self {
        assert_eq!(valid.len(), height * width);
        let count = valid.iter().filter(|&&v| v).count();
        Self {
            height,
            width,
            valid,
            count,
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn is_valid(&self, i: usize, j: usize) -> bool {
        self.valid[i * self.width + j]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.valid
    }
}

/// What a warp writes where the source location falls outside the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Border {
    /// Zero, as reported by the overlap mask.
    #[default]
    Zero,
    /// Clamp the source location to the image, replicating edge pixels.
    Replicate,
}

#[derive(Debug, Clone, Copy)]
struct Bilinear {
    x0: usize,
    y0: usize,
    fx: f64,
    fy: f64,
}

impl Bilinear {
    #[inline]
    fn locate(sx: f64, sy: f64, h: usize, w: usize) -> Self {
        let x0 = (sx.floor().max(0.0) as usize).min(w - 2);
        let y0 = (sy.floor().max(0.0) as usize).min(h - 2);
        Self {
            x0,
            y0,
            fx: sx - x0 as f64,
            fy: sy - y0 as f64,
        }
    }

    #[inline]
    fn corners(&self, plane: &[f64], w: usize) -> [f64; 4] {
        let k = self.y0 * w + self.x0;
        [plane[k], plane[k + 1], plane[k + w], plane[k + w + 1]]
    }

    #[inline]
    fn value(&self, c: [f64; 4]) -> f64 {
        (1.0 - self.fy) * ((1.0 - self.fx) * c[0] + self.fx * c[1])
            + self.fy * ((1.0 - self.fx) * c[2] + self.fx * c[3])
    }

    /// Derivatives of the bilinear interpolant w.r.t. source x and y.
    #[inline]
    fn slope(&self, c: [f64; 4]) -> (f64, f64) {
        (
            (1.0 - self.fy) * (c[1] - c[0]) + self.fy * (c[3] - c[2]),
            (1.0 - self.fx) * (c[2] - c[0]) + self.fx * (c[3] - c[1]),
        )
    }
}

/// A source location covers the image when it falls within the pixel
/// footprint `[-0.5, n - 0.5]`; the outer half-pixel reads the edge pixel.
#[inline]
fn inside(sx: f64, sy: f64, h: usize, w: usize) -> bool {
    sx >= -0.5 && sy >= -0.5 && sx <= w as f64 - 0.5 && sy <= h as f64 - 0.5
}

#[inline]
fn clamp_source(sx: f64, sy: f64, h: usize, w: usize) -> (f64, f64) {
    (sx.clamp(0.0, (w - 1) as f64), sy.clamp(0.0, (h - 1) as f64))
}

/// Inverse-mapping bilinear warp. Pixels sampling outside `p` are zero and
/// flagged false in the mask.
pub fn warp(p: &MultiBandImage, theta: &TransformParams) -> Result<(MultiBandImage, OverlapMask)> {
    warp_with_border(p, theta, Border::Zero)
}

pub fn warp_with_border(
    p: &MultiBandImage,
    theta: &TransformParams,
    border: Border,
) -> Result<(MultiBandImage, OverlapMask)> {
    theta.validate()?;
    let (h, w) = (p.height(), p.width());
    let plane = h * w;
    let mut valid = vec![false; plane];
    let mut locs = Vec::with_capacity(plane);
    for i in 0..h {
        for j in 0..w {
            let (sx, sy) = theta.source(j as f64, i as f64);
            let ok = inside(sx, sy, h, w);
            valid[i * w + j] = ok;
            locs.push((ok || border == Border::Replicate).then(|| {
                let (cx, cy) = clamp_source(sx, sy, h, w);
                Bilinear::locate(cx, cy, h, w)
            }));
        }
    }
    let mut out = p.zeros_like();
    out.data_mut()
        .par_chunks_mut(plane)
        .zip(p.data().par_chunks(plane))
        .for_each(|(dst, src)| {
            for (k, loc) in locs.iter().enumerate() {
                if let Some(b) = loc {
                    dst[k] = b.value(b.corners(src, w));
                }
            }
        });
    Ok((out, OverlapMask::from_valid(h, w, valid)))
}

/// A warped single-band image together with the derivatives of every output
/// sample with respect to its source coordinates.
#[derive(Debug, Clone)]
pub struct WarpSample {
    pub image: MultiBandImage,
    pub mask: OverlapMask,
    /// `∂W/∂sx` at each output pixel (zero where nothing is sampled).
    pub dsx: Vec<f64>,
    /// `∂W/∂sy` at each output pixel (zero where nothing is sampled).
    pub dsy: Vec<f64>,
}

/// Warps a single-band image and records the bilinear interpolant slopes.
pub fn warp_sample(p: &MultiBandImage, theta: &TransformParams) -> Result<WarpSample> {
    warp_sample_with_border(p, theta, Border::Zero)
}

/// [`warp_sample`] with a choice of border. With [`Border::Replicate`] every
/// pixel carries a value and slope while the mask still marks the footprint.
pub fn warp_sample_with_border(p: &MultiBandImage, theta: &TransformParams, border: Border) -> Result<WarpSample> {
    if p.bands() != 1 {
        return Err(SirfError::InvalidParameter(format!(
            "expected a single-band image, got {} bands",
            p.bands()
        )));
    }
    theta.validate()?;
    let (h, w) = (p.height(), p.width());
    let plane = h * w;
    let src = p.data();
    let mut image = p.zeros_like();
    let mut valid = vec![false; plane];
    let mut dsx = vec![0.0; plane];
    let mut dsy = vec![0.0; plane];
    let out = image.data_mut();
    for i in 0..h {
        for j in 0..w {
            let (sx, sy) = theta.source(j as f64, i as f64);
            let ok = inside(sx, sy, h, w);
            if !ok && border == Border::Zero {
                continue;
            }
            let k = i * w + j;
            let (cx, cy) = clamp_source(sx, sy, h, w);
            let b = Bilinear::locate(cx, cy, h, w);
            let c = b.corners(src, w);
            valid[k] = ok;
            out[k] = b.value(c);
            let (gx, gy) = b.slope(c);
            dsx[k] = if cx == sx { gx } else { 0.0 };
            dsy[k] = if cy == sy { gy } else { 0.0 };
        }
    }
    Ok(WarpSample {
        image,
        mask: OverlapMask::from_valid(h, w, valid),
        dsx,
        dsy,
    })
}

/// Central-difference intensity gradient of the warped image, restricted to
/// the overlap. Falls back to one-sided differences where a neighbour lies
/// outside the overlap or the image.
pub fn image_gradient_at_warp(
    p: &MultiBandImage,
    theta: &TransformParams,
) -> Result<GradientField> {
    let (warped, mask) = warp(p, theta)?;
    let (h, w) = (p.height(), p.width());
    let mut g = GradientField {
        vertical: warped.zeros_like(),
        horizontal: warped.zeros_like(),
    };
    let diff = |a: Option<f64>, c: f64, b: Option<f64>| match (a, b) {
        (Some(a), Some(b)) => 0.5 * (b - a),
        (None, Some(b)) => b - c,
        (Some(a), None) => c - a,
        (None, None) => 0.0,
    };
    for d in 0..p.bands() {
        for i in 0..h {
            for j in 0..w {
                if !mask.is_valid(i, j) {
                    continue;
                }
                let c = warped.get(i, j, d);
                let at = |ii: usize, jj: usize| mask.is_valid(ii, jj).then(|| warped.get(ii, jj, d));
                let up = (i > 0).then(|| at(i - 1, j)).flatten();
                let down = (i + 1 < h).then(|| at(i + 1, j)).flatten();
                let left = (j > 0).then(|| at(i, j - 1)).flatten();
                let right = (j + 1 < w).then(|| at(i, j + 1)).flatten();
                g.vertical.set(i, j, d, diff(up, c, down));
                g.horizontal.set(i, j, d, diff(left, c, right));
            }
        }
    }
    Ok(g)
}

/// `[I, ψ₂I, ψ₂ψ₂I, …]` with `levels` entries, halving each side per level.
pub fn build_pyramid(image: &MultiBandImage, levels: usize) -> Result<Vec<MultiBandImage>> {
    if levels == 0 {
        return Err(SirfError::InvalidParameter(
            "pyramid needs at least one level".into(),
        ));
    }
    let scale = 1usize << (levels - 1);
    let (h, w) = (image.height(), image.width());
    if h % scale != 0 || w % scale != 0 || h / scale < 16 || w / scale < 16 {
        return Err(SirfError::InvalidParameter(format!(
            "{levels} pyramid levels do not fit a {h}x{w} image (coarsest level must be at least 16x16)"
        )));
    }
    let mut out = Vec::with_capacity(levels);
    out.push(image.clone());
    for _ in 1..levels {
        let next = downsample(out.last().expect("non-empty"), 2)?;
        out.push(next);
    }
    Ok(out)
}

/// Deepest pyramid not exceeding `max_levels` whose coarsest level keeps at
/// least `min_side` pixels per side and divides evenly.
pub fn max_pyramid_levels(height: usize, width: usize, min_side: usize, max_levels: usize) -> usize {
    let mut levels = 1;
    let (mut h, mut w) = (height, width);
    while levels < max_levels && h % 2 == 0 && w % 2 == 0 && h / 2 >= min_side && w / 2 >= min_side {
        h /= 2;
        w /= 2;
        levels += 1;
    }
    levels
}
