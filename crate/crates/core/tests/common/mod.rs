//! Brute-force reference implementations shared by the integration tests.
//! Everything here is written as plain index loops, independent of the
//! library's vectorised kernels.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sirf_core::MultiBandImage;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize, s: usize, lo: f64, hi: f64) -> MultiBandImage {
    let data = (0..h * w * s).map(|_| rng.random_range(lo..hi)).collect();
    MultiBandImage::from_vec(h, w, s, data).unwrap()
}

/// Sum of a few random low-frequency sinusoids per band.
pub fn smooth_image(rng: &mut ChaCha8Rng, h: usize, w: usize, s: usize) -> MultiBandImage {
    let mut waves = Vec::new();
    for _ in 0..s {
        let band: Vec<(f64, f64, f64, f64)> = (0..4)
            .map(|_| {
                (
                    rng.random_range(5.0..30.0),
                    rng.random_range(0.05..0.3),
                    rng.random_range(0.05..0.3),
                    rng.random_range(0.0..std::f64::consts::TAU),
                )
            })
            .collect();
        waves.push(band);
    }
    MultiBandImage::from_fn(h, w, s, |i, j, d| {
        100.0
            + waves[d]
                .iter()
                .map(|(a, fy, fx, ph)| a * (fy * i as f64 + fx * j as f64 + ph).sin())
                .sum::<f64>()
    })
    .unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// Forward differences `(x[i+1,j]-x[i,j], x[i,j+1]-x[i,j])`, zero past the edge.
pub fn grad_at(x: &MultiBandImage, i: usize, j: usize, d: usize) -> (f64, f64) {
    let v = if i + 1 < x.height() { x.get(i + 1, j, d) - x.get(i, j, d) } else { 0.0 };
    let h = if j + 1 < x.width() { x.get(i, j + 1, d) - x.get(i, j, d) } else { 0.0 };
    (v, h)
}

/// `L(R,S)[i,j] = R[i,j] - R[i-1,j] + S[i,j] - S[i,j-1]` with the last row of
/// R and last column of S treated as absent.
pub fn l_op(r: &MultiBandImage, s: &MultiBandImage) -> MultiBandImage {
    let (h, w) = (r.height(), r.width());
    MultiBandImage::from_fn(h, w, r.bands(), |i, j, d| {
        let mut v = 0.0;
        if i + 1 < h {
            v += r.get(i, j, d);
        }
        if i > 0 {
            v -= r.get(i - 1, j, d);
        }
        if j + 1 < w {
            v += s.get(i, j, d);
        }
        if j > 0 {
            v -= s.get(i, j - 1, d);
        }
        v
    })
    .unwrap()
}

/// `Σ_{i,j} sqrt(Σ_d |∇X − ∇ref|²)`, reference broadcast when single-band.
pub fn l21_residual(x: &MultiBandImage, reference: &MultiBandImage) -> f64 {
    let mut total = 0.0;
    for i in 0..x.height() {
        for j in 0..x.width() {
            let mut sq = 0.0;
            for d in 0..x.bands() {
                let (xv, xh) = grad_at(x, i, j, d);
                let (pv, ph) = grad_at(reference, i, j, if reference.bands() == 1 { 0 } else { d });
                sq += (xv - pv).powi(2) + (xh - ph).powi(2);
            }
            total += sq.sqrt();
        }
    }
    total
}

pub fn vtv_objective(x: &MultiBandImage, y: &MultiBandImage, reference: &MultiBandImage, lambda: f64) -> f64 {
    let mut fid = 0.0;
    for k in 0..x.len() {
        fid += (x.data()[k] - y.data()[k]).powi(2);
    }
    0.5 * fid + lambda * l21_residual(x, reference)
}

pub fn catmull_rom(t: f64) -> f64 {
    let t = t.abs();
    if t < 1.0 {
        1.5 * t.powi(3) - 2.5 * t * t + 1.0
    } else if t < 2.0 {
        -0.5 * t.powi(3) + 2.5 * t * t - 4.0 * t + 2.0
    } else {
        0.0
    }
}

fn taps(out: usize, c: usize, n: usize) -> Vec<(usize, f64)> {
    let pos = (out as f64 + 0.5) * c as f64 - 0.5;
    let base = pos.floor() as i64;
    (base - 1..=base + 2)
        .map(|t| (t.clamp(0, n as i64 - 1) as usize, catmull_rom(pos - t as f64)))
        .collect()
}

/// Bicubic decimation by `c` with pixel-centre alignment and replicated edges.
pub fn decimate(x: &MultiBandImage, c: usize) -> MultiBandImage {
    let (h, w) = (x.height(), x.width());
    MultiBandImage::from_fn(h / c, w / c, x.bands(), |oi, oj, d| {
        let mut v = 0.0;
        for (ti, ki) in taps(oi, c, h) {
            for (tj, kj) in taps(oj, c, w) {
                v += ki * kj * x.get(ti, tj, d);
            }
        }
        v
    })
    .unwrap()
}

/// Bilinear sample at `(sx, sy)`; the cell is clamped so the far edge is reachable.
pub fn bilinear(p: &MultiBandImage, sx: f64, sy: f64) -> f64 {
    let (h, w) = (p.height(), p.width());
    let x0 = (sx.floor() as usize).min(w - 2);
    let y0 = (sy.floor() as usize).min(h - 2);
    let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
    let at = |i: usize, j: usize| p.get(i, j, 0);
    (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) + fy * ((1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1))
}

/// Pan resampled at `(j+tx, i+ty)` with the location clamped into the image.
pub fn shift_replicate(p: &MultiBandImage, tx: f64, ty: f64) -> MultiBandImage {
    let (h, w) = (p.height(), p.width());
    MultiBandImage::from_fn(h, w, 1, |i, j, _| {
        let sx = (j as f64 + tx).clamp(0.0, (w - 1) as f64);
        let sy = (i as f64 + ty).clamp(0.0, (h - 1) as f64);
        bilinear(p, sx, sy)
    })
    .unwrap()
}

pub fn sirf_objective(x: &MultiBandImage, ms: &MultiBandImage, pan: &MultiBandImage, tx: f64, ty: f64, lambda: f64) -> f64 {
    let c = pan.height() / ms.height();
    let dx = decimate(x, c);
    let mut data = 0.0;
    for k in 0..dx.len() {
        data += (dx.data()[k] - ms.data()[k]).powi(2);
    }
    0.5 * data + lambda * l21_residual(x, &shift_replicate(pan, tx, ty))
}

/// Registration energy for a general affine warp `(a0 x + a1 y + a2, a3 x + a4 y + a5)`:
/// sum over pixels whose sample and forward neighbours' samples land within the
/// Pan's pixel footprint, plus the count of such pixels.
pub fn dgs_energy(x: &MultiBandImage, p: &MultiBandImage, a: [f64; 6], eps: f64) -> (f64, usize) {
    let (h, w) = (p.height(), p.width());
    let sample = |i: usize, j: usize| -> Option<f64> {
        let (xf, yf) = (j as f64, i as f64);
        let sx = a[0] * xf + a[1] * yf + a[2];
        let sy = a[3] * xf + a[4] * yf + a[5];
        if sx < -0.5 || sy < -0.5 || sx > w as f64 - 0.5 || sy > h as f64 - 0.5 {
            None
        } else {
            Some(bilinear(p, sx.clamp(0.0, (w - 1) as f64), sy.clamp(0.0, (h - 1) as f64)))
        }
    };
    let mut energy = 0.0;
    let mut count = 0;
    for i in 0..h {
        for j in 0..w {
            let Some(c) = sample(i, j) else { continue };
            let down = if i + 1 < h { sample(i + 1, j).map(|v| v - c) } else { Some(0.0) };
            let right = if j + 1 < w { sample(i, j + 1).map(|v| v - c) } else { Some(0.0) };
            let (Some(pv), Some(ph)) = (down, right) else { continue };
            let mut sq = eps;
            for d in 0..x.bands() {
                let (xv, xh) = grad_at(x, i, j, d);
                sq += (xv - pv).powi(2) + (xh - ph).powi(2);
            }
            energy += sq.sqrt();
            count += 1;
        }
    }
    (energy, count)
}

pub fn translation(tx: f64, ty: f64) -> [f64; 6] {
    [1.0, 0.0, tx, 0.0, 1.0, ty]
}

/// `(R, S)` with `R = x[i] − x[i+1]`, `S = x[j] − x[j+1]`, zero on the last row / column.
pub fn l_transpose(x: &MultiBandImage) -> (MultiBandImage, MultiBandImage) {
    let r = MultiBandImage::from_fn(x.height(), x.width(), x.bands(), |i, j, d| -grad_at(x, i, j, d).0).unwrap();
    let s = MultiBandImage::from_fn(x.height(), x.width(), x.bands(), |i, j, d| -grad_at(x, i, j, d).1).unwrap();
    (r, s)
}

/// Group projection at interior pixels; on the last column `R` is clamped and
/// `S` zeroed, on the last row `S` is clamped and `R` zeroed, both zero at the corner.
pub fn project(r: &MultiBandImage, s: &MultiBandImage) -> (MultiBandImage, MultiBandImage) {
    let (h, w, b) = (r.height(), r.width(), r.bands());
    let mut pr = r.clone();
    let mut ps = s.clone();
    for i in 0..h {
        for j in 0..w {
            let (last_row, last_col) = (i == h - 1, j == w - 1);
            if !last_row && !last_col {
                let mut n = 0.0;
                for d in 0..b {
                    n += r.get(i, j, d).powi(2) + s.get(i, j, d).powi(2);
                }
                let k = 1.0 / n.sqrt().max(1.0);
                for d in 0..b {
                    pr.set(i, j, d, r.get(i, j, d) * k);
                    ps.set(i, j, d, s.get(i, j, d) * k);
                }
                continue;
            }
            for d in 0..b {
                let rv = if last_row { 0.0 } else { r.get(i, j, d).clamp(-1.0, 1.0) };
                let sv = if last_col { 0.0 } else { s.get(i, j, d).clamp(-1.0, 1.0) };
                pr.set(i, j, d, rv);
                ps.set(i, j, d, sv);
            }
        }
    }
    (pr, ps)
}

fn up_taps(out: usize, c: usize, n: usize) -> Vec<(usize, f64)> {
    let pos = (out as f64 + 0.5) / c as f64 - 0.5;
    let base = pos.floor() as i64;
    (base - 1..=base + 2)
        .map(|t| (t.clamp(0, n as i64 - 1) as usize, catmull_rom(pos - t as f64)))
        .collect()
}

/// Bicubic interpolation by `c` with pixel-centre alignment and replicated edges.
pub fn interpolate(m: &MultiBandImage, c: usize) -> MultiBandImage {
    let (h, w) = (m.height(), m.width());
    MultiBandImage::from_fn(h * c, w * c, m.bands(), |oi, oj, d| {
        let mut v = 0.0;
        for (ti, ki) in up_taps(oi, c, h) {
            for (tj, kj) in up_taps(oj, c, w) {
                v += ki * kj * m.get(ti, tj, d);
            }
        }
        v
    })
    .unwrap()
}

/// Plain projected gradient on the dual of the denoising problem, no momentum.
pub fn denoise_unaccelerated(y: &MultiBandImage, reference: &MultiBandImage, lambda: f64, iters: usize) -> MultiBandImage {
    let (h, w, b) = (y.height(), y.width(), y.bands());
    let pw = MultiBandImage::from_fn(h, w, b, |i, j, d| reference.get(i, j, if reference.bands() == 1 { 0 } else { d })).unwrap();
    let bimg = MultiBandImage::from_fn(h, w, b, |i, j, d| y.get(i, j, d) - pw.get(i, j, d)).unwrap();
    let mut r = MultiBandImage::zeros(h, w, b).unwrap();
    let mut s = MultiBandImage::zeros(h, w, b).unwrap();
    let step = 1.0 / (8.0 * lambda);
    for _ in 0..iters {
        let l = l_op(&r, &s);
        let inner = MultiBandImage::from_fn(h, w, b, |i, j, d| bimg.get(i, j, d) - lambda * l.get(i, j, d)).unwrap();
        let (tr, ts) = l_transpose(&inner);
        let nr = MultiBandImage::from_fn(h, w, b, |i, j, d| r.get(i, j, d) + step * tr.get(i, j, d)).unwrap();
        let ns = MultiBandImage::from_fn(h, w, b, |i, j, d| s.get(i, j, d) + step * ts.get(i, j, d)).unwrap();
        (r, s) = project(&nr, &ns);
    }
    let l = l_op(&r, &s);
    MultiBandImage::from_fn(h, w, b, |i, j, d| bimg.get(i, j, d) - lambda * l.get(i, j, d) + pw.get(i, j, d)).unwrap()
}

/// Q index from one-pass sums over every 8×8 window; degenerate windows skipped.
pub fn q_index(x: &MultiBandImage, g: &MultiBandImage, d: usize) -> f64 {
    let n = 8;
    let (mut total, mut count) = (0.0, 0);
    for top in 0..=x.height() - n {
        for left in 0..=x.width() - n {
            let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in top..top + n {
                for j in left..left + n {
                    let (a, b) = (x.get(i, j, d), g.get(i, j, d));
                    sx += a;
                    sy += b;
                    sxx += a * a;
                    syy += b * b;
                    sxy += a * b;
                }
            }
            let k = (n * n) as f64;
            let (mx, my) = (sx / k, sy / k);
            let vx = sxx / k - mx * mx;
            let vy = syy / k - my * my;
            let cxy = sxy / k - mx * my;
            let den = (vx + vy) * (mx * mx + my * my);
            if den.abs() < 1e-12 {
                continue;
            }
            total += 4.0 * cxy * mx * my / den;
            count += 1;
        }
    }
    total / count as f64
}

/// Pearson correlation of 3×3-Laplacian-filtered band `d` with the filtered Pan.
pub fn fcc_band(x: &MultiBandImage, pan: &MultiBandImage, d: usize) -> f64 {
    const K: [[f64; 3]; 3] = [[-1.0, -1.0, -1.0], [-1.0, 8.0, -1.0], [-1.0, -1.0, -1.0]];
    let filt = |im: &MultiBandImage, band: usize| -> Vec<f64> {
        let mut out = Vec::new();
        for i in 1..im.height() - 1 {
            for j in 1..im.width() - 1 {
                let mut v = 0.0;
                for (a, row) in K.iter().enumerate() {
                    for (b, k) in row.iter().enumerate() {
                        v += k * im.get(i + a - 1, j + b - 1, band);
                    }
                }
                out.push(v);
            }
        }
        out
    };
    let (fx, fp) = (filt(x, d), filt(pan, 0));
    let n = fx.len() as f64;
    let (mx, mp) = (fx.iter().sum::<f64>() / n, fp.iter().sum::<f64>() / n);
    let cov: f64 = fx.iter().zip(&fp).map(|(a, b)| (a - mx) * (b - mp)).sum();
    let vx: f64 = fx.iter().map(|a| (a - mx).powi(2)).sum();
    let vp: f64 = fp.iter().map(|b| (b - mp).powi(2)).sum();
    cov / (vx * vp).sqrt()
}

/// Mean SSIM of band `d` over every 11×11 window, Gaussian weights σ = 1.5.
pub fn ssim_band(x: &MultiBandImage, g: &MultiBandImage, d: usize, peak: f64) -> f64 {
    let n = 11;
    let mut wts = [[0.0; 11]; 11];
    let mut norm = 0.0;
    for (a, row) in wts.iter_mut().enumerate() {
        for (b, v) in row.iter_mut().enumerate() {
            let (da, db) = (a as f64 - 5.0, b as f64 - 5.0);
            *v = (-(da * da + db * db) / 4.5).exp();
            norm += *v;
        }
    }
    let (c1, c2) = ((0.01 * peak).powi(2), (0.03 * peak).powi(2));
    let (mut total, mut count) = (0.0, 0);
    for top in 0..=x.height() - n {
        for left in 0..=x.width() - n {
            let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (a, row) in wts.iter().enumerate() {
                for (b, v) in row.iter().enumerate() {
                    let k = v / norm;
                    let (p, q) = (x.get(top + a, left + b, d), g.get(top + a, left + b, d));
                    sx += k * p;
                    sy += k * q;
                    sxx += k * p * p;
                    syy += k * q * q;
                    sxy += k * p * q;
                }
            }
            let (vx, vy, cxy) = (sxx - sx * sx, syy - sy * sy, sxy - sx * sy);
            total += (2.0 * sx * sy + c1) * (2.0 * cxy + c2) / ((sx * sx + sy * sy + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    total / count as f64
}
