//! Full-reference fusion quality scores.
//!
//! Conventions, fixed so reports are comparable between runs:
//!
//! | metric | definition |
//! |--------|-----------|
//! | RMSE   | over all pixels and bands |
//! | PSNR   | `20·log10(peak / RMSE)` over all bands jointly, `+∞` at zero error |
//! | SAM    | mean per-pixel spectral angle in degrees, zero vectors skipped |
//! | ERGAS  | `100/c · sqrt(mean_d RMSE_d² / μ_d²)` |
//! | RASE   | `100/μ̄ · sqrt(mean_d RMSE_d²)` |
//! | QAVE   | universal quality index on 8×8 sliding windows, per band then averaged |
//! | MSSIM  | SSIM with an 11×11 Gaussian window (σ = 1.5), `C1 = (0.01·peak)²`, `C2 = (0.03·peak)²` |
//! | FCC    | Pearson correlation of Laplacian-filtered bands against the filtered Pan |
//!
//! Windowed statistics use "valid" windows only (no padding) and population
//! moments computed in two passes.

use serde::{Serialize, Serializer};

use crate::error::{Result, SirfError};
use crate::tensor::MultiBandImage;

pub const QAVE_WINDOW: usize = 8;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const DEFAULT_PEAK: f64 = 255.0;

fn same_shape(x: &MultiBandImage, g: &MultiBandImage) -> Result<()> {
    x.ensure_same_shape(g)
}

/// Root-mean-square error of each band.
pub fn rmse_per_band(x: &MultiBandImage, g: &MultiBandImage) -> Result<Vec<f64>> {
    same_shape(x, g)?;
    Ok(x.band_planes()
        .zip(g.band_planes())
        .map(|(a, b)| {
            let sq: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
            (sq / a.len() as f64).sqrt()
        })
        .collect())
}

pub fn rmse(x: &MultiBandImage, g: &MultiBandImage) -> Result<f64> {
    same_shape(x, g)?;
    let sq: f64 = x.data().iter().zip(g.data()).map(|(p, q)| (p - q) * (p - q)).sum();
    Ok((sq / x.len() as f64).sqrt())
}

pub fn psnr(x: &MultiBandImage, g: &MultiBandImage, peak: f64) -> Result<f64> {
    let e = rmse(x, g)?;
    Ok(if e == 0.0 {
        f64::INFINITY
    } else {
        20.0 * (peak / e).log10()
    })
}

/// Mean spectral angle in degrees.
pub fn sam(x: &MultiBandImage, g: &MultiBandImage) -> Result<f64> {
    same_shape(x, g)?;
    if x.bands() < 2 {
        return Err(SirfError::InvalidParameter(
            "spectral angle needs at least two bands".into(),
        ));
    }
    let plane = x.shape().plane();
    let (xd, gd) = (x.data(), g.data());
    let mut total = 0.0;
    let mut count = 0usize;
    for k in 0..plane {
        let (mut xg, mut xx, mut gg) = (0.0, 0.0, 0.0);
        for d in 0..x.bands() {
            let (a, b) = (xd[d * plane + k], gd[d * plane + k]);
            xg += a * b;
            xx += a * a;
            gg += b * b;
        }
        if xx == 0.0 || gg == 0.0 {
            continue;
        }
        let cos = (xg / (xx * gg).sqrt()).clamp(-1.0, 1.0);
        total += cos.acos();
        count += 1;
    }
    if count == 0 {
        return Err(SirfError::DegenerateMetric("every pixel has a zero spectral vector"));
    }
    Ok((total / count as f64).to_degrees())
}

fn band_means(g: &MultiBandImage) -> Result<Vec<f64>> {
    let means: Vec<f64> = g
        .band_planes()
        .map(|b| b.iter().sum::<f64>() / b.len() as f64)
        .collect();
    if means.contains(&0.0) {
        return Err(SirfError::DegenerateMetric("reference band has zero mean"));
    }
    Ok(means)
}

/// Relative dimensionless global error in synthesis, for resolution ratio `c`.
pub fn ergas(x: &MultiBandImage, g: &MultiBandImage, c: f64) -> Result<f64> {
    let r = rmse_per_band(x, g)?;
    let mu = band_means(g)?;
    let mean_sq: f64 = r.iter().zip(&mu).map(|(e, m)| (e / m).powi(2)).sum::<f64>() / r.len() as f64;
    Ok(100.0 / c * mean_sq.sqrt())
}

/// Relative average spectral error.
pub fn rase(x: &MultiBandImage, g: &MultiBandImage) -> Result<f64> {
    let r = rmse_per_band(x, g)?;
    let mu = band_means(g)?;
    let mu_bar = mu.iter().sum::<f64>() / mu.len() as f64;
    if mu_bar == 0.0 {
        return Err(SirfError::DegenerateMetric("reference has zero mean"));
    }
    let mean_sq = r.iter().map(|e| e * e).sum::<f64>() / r.len() as f64;
    Ok(100.0 / mu_bar * mean_sq.sqrt())
}

/// Weighted first and second moments of two windows.
struct WindowStats {
    mx: f64,
    my: f64,
    vx: f64,
    vy: f64,
    cxy: f64,
}

fn window_stats(
    x: &[f64],
    y: &[f64],
    width: usize,
    top: usize,
    left: usize,
    weights: &[f64],
    size: usize,
) -> WindowStats {
    let (mut mx, mut my) = (0.0, 0.0);
    for a in 0..size {
        for b in 0..size {
            let k = (top + a) * width + left + b;
            let wgt = weights[a * size + b];
            mx += wgt * x[k];
            my += wgt * y[k];
        }
    }
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    for a in 0..size {
        for b in 0..size {
            let k = (top + a) * width + left + b;
            let wgt = weights[a * size + b];
            let (dx, dy) = (x[k] - mx, y[k] - my);
            vx += wgt * dx * dx;
            vy += wgt * dy * dy;
            cxy += wgt * dx * dy;
        }
    }
    WindowStats { mx, my, vx, vy, cxy }
}

fn check_window(x: &MultiBandImage, size: usize) -> Result<()> {
    if x.height() < size || x.width() < size {
        return Err(SirfError::InvalidParameter(format!(
            "image {} is smaller than the {size}x{size} window",
            x.shape()
        )));
    }
    Ok(())
}

/// Universal image quality index of each band (8×8 sliding windows,
/// degenerate windows skipped).
pub fn q_index_per_band(x: &MultiBandImage, g: &MultiBandImage) -> Result<Vec<f64>> {
    same_shape(x, g)?;
    check_window(x, QAVE_WINDOW)?;
    let n = QAVE_WINDOW;
    let weights = vec![1.0 / (n * n) as f64; n * n];
    let (h, w) = (x.height(), x.width());
    x.band_planes()
        .zip(g.band_planes())
        .map(|(a, b)| {
            let (mut total, mut count) = (0.0, 0usize);
            for top in 0..=h - n {
                for left in 0..=w - n {
                    let s = window_stats(a, b, w, top, left, &weights, n);
                    let var_sum = s.vx + s.vy;
                    let mean_sq = s.mx * s.mx + s.my * s.my;
                    if var_sum == 0.0 || mean_sq == 0.0 {
                        continue;
                    }
                    total += (2.0 * s.cxy / var_sum) * (2.0 * s.mx * s.my / mean_sq);
                    count += 1;
                }
            }
            if count == 0 {
                Err(SirfError::DegenerateMetric("every Q-index window is degenerate"))
            } else {
                Ok(total / count as f64)
            }
        })
        .collect()
}

pub fn qave(x: &MultiBandImage, g: &MultiBandImage) -> Result<f64> {
    let q = q_index_per_band(x, g)?;
    Ok(q.iter().sum::<f64>() / q.len() as f64)
}

fn gaussian_window() -> Vec<f64> {
    let n = SSIM_WINDOW;
    let c = (n / 2) as f64;
    let mut w: Vec<f64> = (0..n * n)
        .map(|k| {
            let (a, b) = ((k / n) as f64 - c, (k % n) as f64 - c);
            (-(a * a + b * b) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Mean SSIM of each band.
pub fn ssim_per_band(x: &MultiBandImage, g: &MultiBandImage, peak: f64) -> Result<Vec<f64>> {
    same_shape(x, g)?;
    check_window(x, SSIM_WINDOW)?;
    let n = SSIM_WINDOW;
    let weights = gaussian_window();
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let (h, w) = (x.height(), x.width());
    Ok(x.band_planes()
        .zip(g.band_planes())
        .map(|(a, b)| {
            let mut total = 0.0;
            let mut count = 0usize;
            for top in 0..=h - n {
                for left in 0..=w - n {
                    let s = window_stats(a, b, w, top, left, &weights, n);
                    let num = (2.0 * s.mx * s.my + c1) * (2.0 * s.cxy + c2);
                    let den = (s.mx * s.mx + s.my * s.my + c1) * (s.vx + s.vy + c2);
                    total += num / den;
                    count += 1;
                }
            }
            total / count as f64
        })
        .collect())
}

pub fn mssim(x: &MultiBandImage, g: &MultiBandImage, peak: f64) -> Result<f64> {
    let s = ssim_per_band(x, g, peak)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

/// 3×3 Laplacian high-pass `8·c − Σ neighbours` over the valid interior.
fn laplacian(plane: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity((h - 2) * (w - 2));
    for i in 1..h - 1 {
        for j in 1..w - 1 {
            let mut neigh = 0.0;
            for di in 0..3 {
                for dj in 0..3 {
                    if di != 1 || dj != 1 {
                        neigh += plane[(i + di - 1) * w + j + dj - 1];
                    }
                }
            }
            out.push(8.0 * plane[i * w + j] - neigh);
        }
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut va, mut vb, mut cab) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        va += dx * dx;
        vb += dy * dy;
        cab += dx * dy;
    }
    if va == 0.0 || vb == 0.0 {
        None
    } else {
        Some(cab / (va * vb).sqrt())
    }
}

/// Correlation of each Laplacian-filtered band with the filtered Pan.
pub fn fcc_per_band(x: &MultiBandImage, pan: &MultiBandImage) -> Result<Vec<f64>> {
    if pan.bands() != 1 || pan.height() != x.height() || pan.width() != x.width() {
        return Err(SirfError::ShapeMismatch {
            left: x.shape(),
            right: pan.shape(),
        });
    }
    let (h, w) = (x.height(), x.width());
    if h < 3 || w < 3 {
        return Err(SirfError::InvalidParameter(
            "filtered correlation needs at least 3x3 pixels".into(),
        ));
    }
    let fp = laplacian(pan.data(), h, w);
    x.band_planes()
        .map(|b| {
            pearson(&laplacian(b, h, w), &fp)
                .ok_or(SirfError::DegenerateMetric("high-pass filtered image is constant"))
        })
        .collect()
}

pub fn fcc(x: &MultiBandImage, pan: &MultiBandImage) -> Result<f64> {
    let f = fcc_per_band(x, pan)?;
    Ok(f.iter().sum::<f64>() / f.len() as f64)
}

fn finite_or_null<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

/// All scores for one fused image against its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub ergas: f64,
    pub qave: f64,
    pub rase: f64,
    pub sam_degrees: f64,
    /// Absent when no Pan image was supplied.
    pub fcc: Option<f64>,
    /// `null` in JSON when infinite; see `psnr_infinite`.
    #[serde(serialize_with = "finite_or_null")]
    pub psnr_db: f64,
    pub psnr_infinite: bool,
    pub mssim: f64,
    pub rmse: f64,
    pub rmse_per_band: Vec<f64>,
    pub q_per_band: Vec<f64>,
    pub ssim_per_band: Vec<f64>,
    pub fcc_per_band: Option<Vec<f64>>,
}

impl MetricsReport {
    /// Scores `x` against `truth`; `c` is the resolution ratio used by ERGAS.
    pub fn evaluate(
        x: &MultiBandImage,
        truth: &MultiBandImage,
        pan: Option<&MultiBandImage>,
        c: f64,
        peak: f64,
    ) -> Result<Self> {
        let q_per_band = q_index_per_band(x, truth)?;
        let ssim_per_band = ssim_per_band(x, truth, peak)?;
        let fcc_per_band = pan.map(|p| fcc_per_band(x, p)).transpose()?;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let psnr_db = psnr(x, truth, peak)?;
        Ok(Self {
            ergas: ergas(x, truth, c)?,
            qave: mean(&q_per_band),
            rase: rase(x, truth)?,
            sam_degrees: sam(x, truth)?,
            fcc: fcc_per_band.as_deref().map(mean),
            psnr_db,
            psnr_infinite: psnr_db.is_infinite(),
            mssim: mean(&ssim_per_band),
            rmse: rmse(x, truth)?,
            rmse_per_band: rmse_per_band(x, truth)?,
            q_per_band,
            ssim_per_band,
            fcc_per_band,
        })
    }

    pub const CSV_HEADER: &'static str = "ergas,qave,rase,sam_degrees,fcc,psnr_db,mssim,rmse";

    pub fn csv_row(&self) -> String {
        let fcc = self.fcc.map(|v| format!("{v:.9}")).unwrap_or_default();
        let psnr = if self.psnr_infinite {
            "inf".to_string()
        } else {
            format!("{:.9}", self.psnr_db)
        };
        format!(
            "{:.9},{:.9},{:.9},{:.9},{},{},{:.9},{:.9}",
            self.ergas, self.qave, self.rase, self.sam_degrees, fcc, psnr, self.mssim, self.rmse
        )
    }
}
