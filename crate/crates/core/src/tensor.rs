//! Dense multi-band images and the discrete operators shared by the solvers.
//!
//! Images are stored band-major: band `d` occupies
//! `data[d * h * w .. (d + 1) * h * w]`, rows contiguous inside a band.
//! Every difference operator uses forward differences with a zero beyond the
//! last row/column, and [`l_op`] is the exact adjoint of [`l_adjoint`] under
//! that convention.

use rayon::prelude::*;

use crate::error::{Result, Shape, SirfError};

/// An `height x width x bands` tensor of finite intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiBandImage {
    shape: Shape,
    data: Vec<f64>,
}

fn check_shape(shape: Shape) -> Result<()> {
    if shape.height < 2 || shape.width < 2 {
        return Err(SirfError::InvalidShape {
            shape,
            reason: "height and width must be at least 2",
        });
    }
    if shape.bands < 1 {
        return Err(SirfError::InvalidShape {
            shape,
            reason: "at least one band is required",
        });
    }
    Ok(())
}

impl MultiBandImage {
    pub fn zeros(height: usize, width: usize, bands: usize) -> Result<Self> {
        Self::filled(height, width, bands, 0.0)
    }

    pub fn filled(height: usize, width: usize, bands: usize, value: f64) -> Result<Self> {
        let shape = Shape::new(height, width, bands);
        check_shape(shape)?;
        if !value.is_finite() {
            return Err(SirfError::NonFinite { index: 0 });
        }
        Ok(Self {
            shape,
            data: vec![value; shape.len()],
        })
    }

    /// Wraps band-major planar `data`, validating length and finiteness.
    pub fn from_vec(height: usize, width: usize, bands: usize, data: Vec<f64>) -> Result<Self> {
        let shape = Shape::new(height, width, bands);
        check_shape(shape)?;
        if data.len() != shape.len() {
            return Err(SirfError::LengthMismatch {
                shape,
                found: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(SirfError::NonFinite { index });
        }
        Ok(Self { shape, data })
    }

    /// Builds an image by evaluating `f(row, col, band)` at every sample.
    pub fn from_fn(
        height: usize,
        width: usize,
        bands: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * bands);
        for d in 0..bands {
            for i in 0..height {
                for j in 0..width {
                    data.push(f(i, j, d));
                }
            }
        }
        Self::from_vec(height, width, bands, data)
    }

    /// Stacks single-band planes of equal size into one image.
    pub fn from_bands(bands: &[MultiBandImage]) -> Result<Self> {
        let first = bands
            .first()
            .ok_or_else(|| SirfError::InvalidParameter("no bands to stack".into()))?;
        let mut data = Vec::with_capacity(first.len() * bands.len());
        for b in bands {
            if b.height() != first.height() || b.width() != first.width() {
                return Err(SirfError::ShapeMismatch {
                    left: first.shape,
                    right: b.shape,
                });
            }
            data.extend_from_slice(&b.data);
        }
        let count = data.len() / first.shape.plane();
        Self::from_vec(first.height(), first.width(), count, data)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn bands(&self) -> usize {
        self.shape.bands
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the raw samples. Callers must keep them finite.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, d: usize) -> usize {
        (d * self.shape.height + i) * self.shape.width + j
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, d: usize) -> f64 {
        self.data[self.index(i, j, d)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, d: usize, value: f64) {
        let k = self.index(i, j, d);
        self.data[k] = value;
    }

    pub fn band(&self, d: usize) -> &[f64] {
        let p = self.shape.plane();
        &self.data[d * p..(d + 1) * p]
    }

    pub fn band_mut(&mut self, d: usize) -> &mut [f64] {
        let p = self.shape.plane();
        &mut self.data[d * p..(d + 1) * p]
    }

    /// Copies band `d` out as a single-band image.
    pub fn band_image(&self, d: usize) -> MultiBandImage {
        MultiBandImage {
            shape: Shape::new(self.height(), self.width(), 1),
            data: self.band(d).to_vec(),
        }
    }

    pub fn band_planes(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.shape.plane())
    }

    pub fn ensure_same_shape(&self, other: &MultiBandImage) -> Result<()> {
        if self.shape != other.shape {
            return Err(SirfError::ShapeMismatch {
                left: self.shape,
                right: other.shape,
            });
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> MultiBandImage {
        MultiBandImage {
            shape: self.shape,
            data: vec![0.0; self.data.len()],
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> MultiBandImage {
        MultiBandImage {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise `f(self, other)`; shapes must match.
    pub fn zip_map(&self, other: &MultiBandImage, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.ensure_same_shape(other)?;
        Ok(MultiBandImage {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &MultiBandImage) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &MultiBandImage) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, k: f64) -> MultiBandImage {
        self.map(|v| k * v)
    }

    /// `self += k * other`.
    pub fn axpy(&mut self, k: f64, other: &MultiBandImage) -> Result<()> {
        self.ensure_same_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += k * b;
        }
        Ok(())
    }

    pub fn dot(&self, other: &MultiBandImage) -> Result<f64> {
        self.ensure_same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Forward differences of every band: `vertical` along rows (`∇₁`),
/// `horizontal` along columns (`∇₂`). The last row of `vertical` and the last
/// column of `horizontal` are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub vertical: MultiBandImage,
    pub horizontal: MultiBandImage,
}

impl GradientField {
    pub fn zeros(shape: Shape) -> Result<Self> {
        let z = MultiBandImage::zeros(shape.height, shape.width, shape.bands)?;
        Ok(Self {
            vertical: z.clone(),
            horizontal: z,
        })
    }

    pub fn shape(&self) -> Shape {
        self.vertical.shape()
    }

    pub fn sub(&self, other: &GradientField) -> Result<GradientField> {
        Ok(GradientField {
            vertical: self.vertical.sub(&other.vertical)?,
            horizontal: self.horizontal.sub(&other.horizontal)?,
        })
    }

    pub fn add(&self, other: &GradientField) -> Result<GradientField> {
        Ok(GradientField {
            vertical: self.vertical.add(&other.vertical)?,
            horizontal: self.horizontal.add(&other.horizontal)?,
        })
    }

    pub fn scale(&self, k: f64) -> GradientField {
        GradientField {
            vertical: self.vertical.scale(k),
            horizontal: self.horizontal.scale(k),
        }
    }
}

/// Dual variables `(R, S)` of the vectorial TV denoiser.
///
/// Only `R` rows `0..h-1` and `S` columns `0..w-1` enter [`l_op`]; the last
/// row of `R` and last column of `S` are structural zeros that
/// [`project_dual`] resets.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPair {
    pub r: MultiBandImage,
    pub s: MultiBandImage,
}

impl DualPair {
    pub fn zeros(shape: Shape) -> Result<Self> {
        let z = MultiBandImage::zeros(shape.height, shape.width, shape.bands)?;
        Ok(Self { r: z.clone(), s: z })
    }

    pub fn new(r: MultiBandImage, s: MultiBandImage) -> Result<Self> {
        r.ensure_same_shape(&s)?;
        Ok(Self { r, s })
    }

    pub fn shape(&self) -> Shape {
        self.r.shape()
    }

    pub fn dot(&self, other: &DualPair) -> Result<f64> {
        Ok(self.r.dot(&other.r)? + self.s.dot(&other.s)?)
    }

    pub fn norm(&self) -> f64 {
        (self.r.norm().powi(2) + self.s.norm().powi(2)).sqrt()
    }

    /// `self + k * (a - b)`, used by the momentum step.
    pub fn extrapolate(&self, k: f64, previous: &DualPair) -> Result<DualPair> {
        Ok(DualPair {
            r: self.r.zip_map(&previous.r, |a, b| a + k * (a - b))?,
            s: self.s.zip_map(&previous.s, |a, b| a + k * (a - b))?,
        })
    }
}

/// `∇₁X` and `∇₂X` with zero beyond the last row/column.
pub fn forward_gradient(x: &MultiBandImage) -> GradientField {
    let (h, w) = (x.height(), x.width());
    let plane = h * w;
    let mut vertical = x.zeros_like();
    let mut horizontal = x.zeros_like();
    vertical
        .data_mut()
        .par_chunks_mut(plane)
        .zip(horizontal.data_mut().par_chunks_mut(plane))
        .zip(x.data().par_chunks(plane))
        .for_each(|((gv, gh), src)| {
            for i in 0..h {
                let row = &src[i * w..(i + 1) * w];
                if i + 1 < h {
                    let below = &src[(i + 1) * w..(i + 2) * w];
                    for j in 0..w {
                        gv[i * w + j] = below[j] - row[j];
                    }
                }
                for j in 0..w - 1 {
                    gh[i * w + j] = row[j + 1] - row[j];
                }
            }
        });
    GradientField {
        vertical,
        horizontal,
    }
}

/// `L(R,S)[i,j] = R[i,j] - R[i-1,j] + S[i,j] - S[i,j-1]`, with out-of-range
/// terms (and the structural zeros of `R`/`S`) taken as zero.
pub fn l_op(dual: &DualPair) -> Result<MultiBandImage> {
    dual.r.ensure_same_shape(&dual.s)?;
    let (h, w) = (dual.r.height(), dual.r.width());
    let plane = h * w;
    let mut out = dual.r.zeros_like();
    out.data_mut()
        .par_chunks_mut(plane)
        .zip(dual.r.data().par_chunks(plane))
        .zip(dual.s.data().par_chunks(plane))
        .for_each(|((o, r), s)| {
            for i in 0..h {
                for j in 0..w {
                    let k = i * w + j;
                    let mut v = 0.0;
                    if i + 1 < h {
                        v += r[k];
                    }
                    if i > 0 {
                        v -= r[k - w];
                    }
                    if j + 1 < w {
                        v += s[k];
                    }
                    if j > 0 {
                        v -= s[k - 1];
                    }
                    o[k] = v;
                }
            }
        });
    Ok(out)
}

/// `R[i,j] = X[i,j] - X[i+1,j]`, `S[i,j] = X[i,j] - X[i,j+1]`; the adjoint of
/// [`l_op`]. Equals the negated forward gradient.
pub fn l_adjoint(x: &MultiBandImage) -> DualPair {
    let g = forward_gradient(x);
    DualPair {
        r: g.vertical.map(|v| -v),
        s: g.horizontal.map(|v| -v),
    }
}

/// Projects onto the dual feasible set.
///
/// Interior pixels (`i < h-1`, `j < w-1`) have their `2·bands` vector scaled
/// into the unit ball; `R` in the last column and `S` in the last row are
/// clamped to `[-1, 1]` per band; the structural zeros are reset to zero.
pub fn project_dual(dual: &DualPair) -> DualPair {
    let mut out = dual.clone();
    project_dual_in_place(&mut out);
    out
}

pub fn project_dual_in_place(dual: &mut DualPair) {
    let Shape {
        height: h,
        width: w,
        bands,
    } = dual.shape();
    let plane = h * w;
    let r = dual.r.data_mut();
    let s = dual.s.data_mut();
    for i in 0..h {
        for j in 0..w {
            let k = i * w + j;
            let last_row = i + 1 == h;
            let last_col = j + 1 == w;
            match (last_row, last_col) {
                (false, false) => {
                    let mut sq = 0.0;
                    for d in 0..bands {
                        let (a, b) = (r[d * plane + k], s[d * plane + k]);
                        sq += a * a + b * b;
                    }
                    if sq > 1.0 {
                        let inv = 1.0 / sq.sqrt();
                        for d in 0..bands {
                            r[d * plane + k] *= inv;
                            s[d * plane + k] *= inv;
                        }
                    }
                }
                (false, true) => {
                    for d in 0..bands {
                        r[d * plane + k] = r[d * plane + k].clamp(-1.0, 1.0);
                        s[d * plane + k] = 0.0;
                    }
                }
                (true, false) => {
                    for d in 0..bands {
                        r[d * plane + k] = 0.0;
                        s[d * plane + k] = s[d * plane + k].clamp(-1.0, 1.0);
                    }
                }
                (true, true) => {
                    for d in 0..bands {
                        r[d * plane + k] = 0.0;
                        s[d * plane + k] = 0.0;
                    }
                }
            }
        }
    }
}

/// `Σ_i Σ_j sqrt(Σ_d Σ_q G_q[i,j,d]²)`.
pub fn group_l21_norm(g: &GradientField) -> f64 {
    let shape = g.shape();
    let plane = shape.plane();
    let (v, hz) = (g.vertical.data(), g.horizontal.data());
    let mut total = 0.0;
    for k in 0..plane {
        let mut sq = 0.0;
        for d in 0..shape.bands {
            let (a, b) = (v[d * plane + k], hz[d * plane + k]);
            sq += a * a + b * b;
        }
        total += sq.sqrt();
    }
    total
}

/// `‖∇X − ∇Ref‖₂,₁` where `reference` has either one band (broadcast to
/// every band of `x`) or the same band count as `x`.
pub fn gradient_residual_norm(x: &MultiBandImage, reference: &MultiBandImage) -> Result<f64> {
    let reference = broadcast_reference(reference, x.bands())?;
    let diff = x.sub(&reference)?;
    Ok(group_l21_norm(&forward_gradient(&diff)))
}

pub(crate) fn broadcast_reference(
    reference: &MultiBandImage,
    bands: usize,
) -> Result<MultiBandImage> {
    if reference.bands() == bands {
        Ok(reference.clone())
    } else if reference.bands() == 1 {
        replicate_pan(reference, bands)
    } else {
        Err(SirfError::InvalidParameter(format!(
            "reference has {} bands, expected 1 or {}",
            reference.bands(),
            bands
        )))
    }
}

/// Duplicates a single-band image into `bands` identical bands.
pub fn replicate_pan(pan: &MultiBandImage, bands: usize) -> Result<MultiBandImage> {
    if pan.bands() != 1 {
        return Err(SirfError::InvalidParameter(format!(
            "pan image must have one band, got {}",
            pan.bands()
        )));
    }
    if bands < 1 {
        return Err(SirfError::InvalidParameter(
            "band count must be at least 1".into(),
        ));
    }
    let mut data = Vec::with_capacity(pan.len() * bands);
    for _ in 0..bands {
        data.extend_from_slice(pan.data());
    }
    MultiBandImage::from_vec(pan.height(), pan.width(), bands, data)
}
