//! Synthetic inputs: Wald-protocol simulation from a ground-truth image, a
//! seeded piecewise-constant scene generator and the size-scaling benchmark.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SirfError};
use crate::resample::{downsample, warp_with_border, Border, TransformParams};
use crate::solver::{sirf_fuse, SolverConfig};
use crate::tensor::MultiBandImage;

/// Low-resolution MS and high-resolution Pan derived from a ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub ms: MultiBandImage,
    pub pan: MultiBandImage,
    /// Pan before any misalignment was applied.
    pub aligned_pan: MultiBandImage,
}

/// Uniform weights `1/s`.
pub fn uniform_weights(bands: usize) -> Vec<f64> {
    vec![1.0 / bands as f64; bands]
}

fn check_weights(weights: &[f64], bands: usize) -> Result<()> {
    if weights.len() != bands {
        return Err(SirfError::InvalidParameter(format!(
            "{} pan weights for {bands} bands",
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(SirfError::InvalidParameter("pan weights must be nonnegative".into()));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(SirfError::InvalidParameter(format!("pan weights sum to {sum}, not 1")));
    }
    Ok(())
}

/// `Σ_d w_d · GT_d`.
pub fn synthesize_pan(gt: &MultiBandImage, weights: &[f64]) -> Result<MultiBandImage> {
    check_weights(weights, gt.bands())?;
    let mut pan = vec![0.0; gt.shape().plane()];
    for (band, &w) in gt.band_planes().zip(weights) {
        pan.iter_mut().zip(band).for_each(|(p, v)| *p += w * v);
    }
    MultiBandImage::from_vec(gt.height(), gt.width(), 1, pan)
}

/// `M = ψ(GT)` and `P = Σ w_d GT_d`, the Pan optionally resampled at
/// `θ(x)` (edges replicated).
pub fn simulate(
    gt: &MultiBandImage,
    factor: usize,
    weights: &[f64],
    theta: Option<&TransformParams>,
) -> Result<Simulation> {
    let aligned_pan = synthesize_pan(gt, weights)?;
    let ms = downsample(gt, factor)?;
    let pan = match theta {
        Some(t) => warp_with_border(&aligned_pan, t, Border::Replicate)?.0,
        None => aligned_pan.clone(),
    };
    Ok(Simulation {
        ms,
        pan,
        aligned_pan,
    })
}

/// Default per-region spectral jitter of [`piecewise_constant_scene`].
pub const DEFAULT_SPECTRAL_JITTER: f64 = 10.0;

/// Random axis-aligned rectangles and ellipses over a random background.
///
/// Each region has a brightness `b` in `[30, 200]`; band `d` takes the value
/// `b + o_d + e_{d}` where `o_d ∈ [−20, 20]` is a scene-wide band offset and
/// `e_d ∈ [−jitter, jitter]` varies per region. Band edges therefore share
/// most of their contrast with the band-mean Pan. Same seed, same scene.
pub fn piecewise_constant_scene(height: usize, width: usize, bands: usize, seed: u64) -> Result<MultiBandImage> {
    scene_with_jitter(height, width, bands, seed, DEFAULT_SPECTRAL_JITTER)
}

pub fn scene_with_jitter(
    height: usize,
    width: usize,
    bands: usize,
    seed: u64,
    jitter: f64,
) -> Result<MultiBandImage> {
    if !(jitter >= 0.0 && jitter.is_finite()) {
        return Err(SirfError::InvalidParameter(format!("jitter must be nonnegative, got {jitter}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offsets: Vec<f64> = (0..bands).map(|_| rng.random_range(-20.0..20.0)).collect();
    let spectrum = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let b = rng.random_range(30.0..200.0);
        offsets
            .iter()
            .map(|o| b + o + rng.random_range(-jitter..=jitter))
            .collect()
    };
    let background = spectrum(&mut rng);
    let mut data = vec![0.0; height * width * bands];
    let plane = height * width;
    for (d, &v) in background.iter().enumerate() {
        data[d * plane..(d + 1) * plane].fill(v);
    }

    let (hf, wf) = (height as f64, width as f64);
    let shapes = 6 + (height * width) / 2048;
    for _ in 0..shapes {
        let color = spectrum(&mut rng);
        let cy = rng.random_range(0.0..hf);
        let cx = rng.random_range(0.0..wf);
        let ry = rng.random_range(0.05..0.25) * hf;
        let rx = rng.random_range(0.05..0.25) * wf;
        let ellipse = rng.random_bool(0.5);
        for i in 0..height {
            for j in 0..width {
                let (dy, dx) = ((i as f64 + 0.5 - cy) / ry, (j as f64 + 0.5 - cx) / rx);
                let inside = if ellipse {
                    dy * dy + dx * dx <= 1.0
                } else {
                    dy.abs() <= 1.0 && dx.abs() <= 1.0
                };
                if inside {
                    for (d, &v) in color.iter().enumerate() {
                        data[d * plane + i * width + j] = v;
                    }
                }
            }
        }
    }
    MultiBandImage::from_vec(height, width, bands, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub size: usize,
    pub iterations: usize,
    pub total_seconds: f64,
    pub seconds_per_iteration: f64,
}

impl BenchRow {
    pub const CSV_HEADER: &'static str = "size,iterations,total_seconds,seconds_per_iteration";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.6},{:.6}",
            self.size, self.iterations, self.total_seconds, self.seconds_per_iteration
        )
    }
}

/// Times a fixed number of outer iterations on square 4-band scenes of each
/// size with `c = 4`. The tolerance is disabled so every size runs exactly
/// `iterations` steps.
pub fn bench_scaling(sizes: &[usize], iterations: usize, base: &SolverConfig, seed: u64) -> Result<Vec<BenchRow>> {
    let cfg = SolverConfig {
        max_outer: iterations,
        tol: f64::MIN_POSITIVE,
        reg_first_k: base.reg_first_k.min(iterations),
        ..base.clone()
    };
    sizes
        .iter()
        .map(|&n| {
            let gt = piecewise_constant_scene(n, n, 4, seed)?;
            let sim = simulate(&gt, 4, &uniform_weights(4), None)?;
            let start = Instant::now();
            let out = sirf_fuse(&sim.ms, &sim.pan, &cfg)?;
            let total = start.elapsed().as_secs_f64();
            let iters = out.trace.iterations();
            Ok(BenchRow {
                size: n,
                iterations: iters,
                total_seconds: total,
                seconds_per_iteration: total / iters as f64,
            })
        })
        .collect()
}
