use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, SyncSender};
use std::thread::{self, JoinHandle};

use serde_json::json;
use sirf_core::io::{export_rgb, load_image, save_image, BitDepth, ImageFormat};
use sirf_core::metrics::MetricsReport;
use sirf_core::registration::{register, translation_sweep};
use sirf_core::simulate::{piecewise_constant_scene, simulate, uniform_weights};
use sirf_core::solver::{resolution_ratio, sirf_fuse_observed, ConvergenceTrace, IntensityScaling, IterationRecord};
use sirf_core::vtv::vtv_denoise;
use sirf_core::{FusionResult, MultiBandImage, SolverConfig, TransformParams};

use crate::args::{
    Axis, BenchArgs, Cli, Command, DenoiseArgs, FuseArgs, LambdaSweepArgs, MetricsArgs, RegisterArgs,
    ShiftSweepArgs, SimulateArgs, SweepCommand,
};
use crate::config::{sidecar, unix_now, CliError, CliResult, FileConfig, RunManifest};

/// Records buffered between the solver and the trace writer. The solver
/// blocks when the writer falls behind; nothing is dropped.
const TRACE_BUFFER: usize = 64;

pub struct Context {
    pub config: FileConfig,
    pub seed: u64,
    pub reference_mode: bool,
    pub threads: usize,
}

/// What a command read, wrote and found, for the manifest.
#[derive(Default)]
struct Outcome {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    scale: Option<usize>,
    lambda: Option<f64>,
    results: serde_json::Value,
    manifest: Option<PathBuf>,
}

pub fn run(cli: Cli, argv: Vec<String>) -> CliResult<()> {
    let started = unix_now();
    let mut config = FileConfig::load(cli.global.config.as_deref())?;
    let reference_mode = cli.global.reference_mode || config.reference_mode;
    let threads = if reference_mode {
        1
    } else {
        cli.global
            .threads
            .or(config.threads)
            .or_else(|| std::env::var("SIRF_THREADS").ok().and_then(|v| v.parse().ok()))
            .unwrap_or(0)
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Runtime(format!("cannot start worker threads: {e}")))?;
    let seed = cli.global.seed.or(config.seed).unwrap_or(0);
    config.seed = Some(seed);
    config.reference_mode = reference_mode;
    let ctx = Context {
        config,
        seed,
        reference_mode,
        threads: rayon::current_num_threads(),
    };

    let (name, outcome) = match &cli.command {
        Command::Fuse(a) => ("fuse", fuse(&ctx, a)?),
        Command::Register(a) => ("register", register_cmd(&ctx, a)?),
        Command::Denoise(a) => ("denoise", denoise(&ctx, a)?),
        Command::Metrics(a) => ("metrics", metrics(a)?),
        Command::Simulate(a) => ("simulate", simulate_cmd(&ctx, a)?),
        Command::Sweep(SweepCommand::Shift(a)) => ("sweep shift", sweep_shift(&ctx, a)?),
        Command::Sweep(SweepCommand::Lambda(a)) => ("sweep lambda", sweep_lambda(&ctx, a)?),
        Command::Bench(a) => ("bench", bench(&ctx, a)?),
    };

    let Some(path) = cli.global.manifest.clone().or(outcome.manifest.clone()) else {
        return Ok(());
    };
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: name.to_string(),
        argv,
        inputs: outcome.inputs,
        outputs: outcome.outputs,
        scale: outcome.scale,
        lambda: outcome.lambda,
        seed: Some(ctx.seed),
        reference_mode: ctx.reference_mode,
        threads: ctx.threads,
        config: ctx.config,
        started_unix: started,
        finished_unix: unix_now(),
        results: outcome.results,
    };
    write_json(&path, &manifest)
}

fn load(path: &Path) -> CliResult<MultiBandImage> {
    load_image(path).map_err(|e| match CliError::from(e) {
        CliError::Usage(m) | CliError::Runtime(m) => CliError::Runtime(format!("{}: {m}", path.display())),
    })
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn write_text(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => print_stdout(text)?,
    }
    Ok(())
}

/// Writes to stdout; a reader that went away early is not an error.
fn print_stdout(text: &str) -> CliResult<()> {
    let mut out = io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

/// Saves `x`, keeping only `rgb` bands when the format cannot hold them all.
fn save_output(x: &MultiBandImage, path: &Path, rgb: &[usize]) -> CliResult<()> {
    let format = ImageFormat::from_path(path)?;
    if format != ImageFormat::Mbf && x.bands() > 3 {
        let bands: [usize; 3] = rgb
            .try_into()
            .map_err(|_| CliError::Usage(format!("--rgb-bands needs exactly 3 bands, got {}", rgb.len())))?;
        export_rgb(x, bands, path, BitDepth::Eight)?;
    } else {
        save_image(x, path)?;
    }
    Ok(())
}

/// Resolution ratio of an MS/Pan pair, as a usage error naming both shapes.
fn check_pair(ms: &MultiBandImage, pan: &MultiBandImage, scale: Option<usize>) -> CliResult<usize> {
    let shapes = format!("MS image is {} and Pan image is {}", ms.shape(), pan.shape());
    if pan.bands() != 1 {
        return Err(CliError::Usage(format!("Pan image must have one band; {shapes}")));
    }
    let c = resolution_ratio(ms, pan)
        .ok()
        .filter(|&c| c >= 2)
        .ok_or_else(|| CliError::Usage(format!("Pan size must be an integer multiple (at least 2) of the MS size; {shapes}")))?;
    if let Some(s) = scale {
        if s != c {
            return Err(CliError::Usage(format!("--scale {s} does not match the inputs (ratio {c}); {shapes}")));
        }
    }
    Ok(c)
}

fn spawn_trace_writer(path: &Path) -> CliResult<(SyncSender<IterationRecord>, JoinHandle<io::Result<()>>)> {
    let file = File::create(path)?;
    let (tx, rx) = sync_channel::<IterationRecord>(TRACE_BUFFER);
    let header = ConvergenceTrace::default().to_csv();
    let handle = thread::spawn(move || {
        let mut w = BufWriter::new(file);
        w.write_all(header.as_bytes())?;
        w.flush()?;
        for record in rx {
            writeln!(w, "{}", record.csv_row())?;
            w.flush()?;
        }
        w.flush()
    });
    Ok((tx, handle))
}

/// Fuses with optional joint rescaling; the result is mapped back to input units.
fn run_fusion(
    ms: &MultiBandImage,
    pan: &MultiBandImage,
    cfg: &SolverConfig,
    rescale: bool,
    trace: Option<&Path>,
) -> CliResult<(FusionResult, IntensityScaling)> {
    let scaling = if rescale {
        IntensityScaling::fit(&[ms, pan])
    } else {
        IntensityScaling::identity()
    };
    let (ms, pan) = (scaling.forward(ms), scaling.forward(pan));
    let writer = trace.map(spawn_trace_writer).transpose()?;
    let (tx, handle) = match writer {
        Some((tx, h)) => (Some(tx), Some(h)),
        None => (None, None),
    };
    let result = sirf_fuse_observed(&ms, &pan, cfg, |r| {
        if let Some(tx) = &tx {
            // A closed channel means the writer failed; its error surfaces on join.
            let _ = tx.send(r.clone());
        }
    });
    drop(tx);
    if let Some(h) = handle {
        h.join()
            .map_err(|_| CliError::Runtime("trace writer panicked".into()))?
            .map_err(|e| CliError::Runtime(format!("writing trace: {e}")))?;
    }
    let mut result = result?;
    result.fused = scaling.inverse(&result.fused);
    Ok((result, scaling))
}

fn fusion_config(ctx: &Context, a: &FuseArgs) -> CliResult<SolverConfig> {
    let mut cfg = ctx.config.solver.clone();
    if let Some(l) = a.lambda {
        cfg.lambda = l;
    }
    if a.register {
        cfg.reg_enabled = true;
    }
    if a.no_register {
        cfg.reg_enabled = false;
    }
    if let Some(t) = a.transform {
        cfg.registration.kind = t.into();
    }
    if let Some(m) = a.max_outer {
        cfg.max_outer = m;
        cfg.reg_first_k = cfg.reg_first_k.min(m);
    }
    if let Some(t) = a.tol {
        cfg.tol = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn fuse(ctx: &Context, a: &FuseArgs) -> CliResult<Outcome> {
    let ms = load(&a.ms)?;
    let pan = load(&a.pan)?;
    let c = check_pair(&ms, &pan, a.scale)?;
    let cfg = fusion_config(ctx, a)?;
    let rescale = !a.no_rescale && ctx.config.rescale.unwrap_or(true);
    let (result, scaling) = run_fusion(&ms, &pan, &cfg, rescale, a.trace.as_deref())?;
    save_output(&result.fused, &a.out, &a.rgb_bands)?;

    let summary = json!({
        "theta": result.theta,
        "iterations": result.trace.iterations(),
        "converged": result.trace.converged,
        "initial_objective": result.trace.initial_objective,
        "final_objective": result.trace.final_objective(),
        "lipschitz": result.trace.lipschitz,
        "intensity_scaling": scaling,
        "solver": cfg,
    });
    print_stdout(&(serde_json::to_string_pretty(&summary).unwrap_or_default() + "\n"))?;
    let mut outputs = vec![a.out.clone()];
    outputs.extend(a.trace.clone());
    Ok(Outcome {
        inputs: vec![a.ms.clone(), a.pan.clone()],
        outputs,
        scale: Some(c),
        lambda: Some(cfg.lambda),
        results: summary,
        manifest: Some(sidecar(&a.out)),
    })
}

fn register_cmd(ctx: &Context, a: &RegisterArgs) -> CliResult<Outcome> {
    let x = load(&a.image)?;
    let pan = load(&a.pan)?;
    let mut cfg = ctx.config.solver.registration.clone();
    if let Some(t) = a.transform {
        cfg.kind = t.into();
    }
    if a.levels.is_some() {
        cfg.pyramid_levels = a.levels;
    }
    let (theta, trace) = register(&x, &pan, &TransformParams::identity(cfg.kind), &cfg)?;
    let out = json!({ "theta": theta, "trace": trace, "registration": cfg });
    write_json(&a.out, &out)?;
    Ok(Outcome {
        inputs: vec![a.image.clone(), a.pan.clone()],
        outputs: vec![a.out.clone()],
        results: json!({ "theta": theta }),
        manifest: Some(sidecar(&a.out)),
        ..Outcome::default()
    })
}

fn denoise(ctx: &Context, a: &DenoiseArgs) -> CliResult<Outcome> {
    let y = load(&a.input)?;
    let reference = load(&a.reference)?;
    let lambda = a.lambda.unwrap_or(ctx.config.solver.lambda);
    let (x, _) = vtv_denoise(&y, &reference, lambda, a.iters, None)?;
    save_output(&x, &a.out, &[0, 1, 2])?;
    Ok(Outcome {
        inputs: vec![a.input.clone(), a.reference.clone()],
        outputs: vec![a.out.clone()],
        lambda: Some(lambda),
        results: json!({ "iterations": a.iters }),
        manifest: Some(sidecar(&a.out)),
        ..Outcome::default()
    })
}

fn metrics(a: &MetricsArgs) -> CliResult<Outcome> {
    let fused = load(&a.fused)?;
    let truth = load(&a.truth)?;
    let pan = a.pan.as_deref().map(load).transpose()?;
    let report = MetricsReport::evaluate(&fused, &truth, pan.as_ref(), a.scale as f64, a.peak)?;
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Runtime(e.to_string()))?;
    print_stdout(&format!("{text}\n"))?;
    let mut outputs = Vec::new();
    if let Some(p) = &a.json {
        std::fs::write(p, text + "\n")?;
        outputs.push(p.clone());
    }
    if let Some(p) = &a.csv {
        std::fs::write(p, format!("{}\n{}\n", MetricsReport::CSV_HEADER, report.csv_row()))?;
        outputs.push(p.clone());
    }
    let mut inputs = vec![a.fused.clone(), a.truth.clone()];
    inputs.extend(a.pan.clone());
    Ok(Outcome {
        inputs,
        outputs,
        scale: Some(a.scale),
        results: serde_json::to_value(&report).unwrap_or_default(),
        ..Outcome::default()
    })
}

fn parse_size(s: &str) -> CliResult<(usize, usize)> {
    let bad = || CliError::Usage(format!("--size expects HEIGHTxWIDTH, got `{s}`"));
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((h.trim().parse().map_err(|_| bad())?, w.trim().parse().map_err(|_| bad())?))
}

fn simulate_cmd(ctx: &Context, a: &SimulateArgs) -> CliResult<Outcome> {
    let gt = match &a.gt {
        Some(p) => load(p)?,
        None => {
            let (h, w) = parse_size(&a.size)?;
            piecewise_constant_scene(h, w, a.bands, ctx.seed)?
        }
    };
    let weights = a.weights.clone().unwrap_or_else(|| uniform_weights(gt.bands()));
    let theta = match a.shift.as_deref() {
        None => None,
        Some([tx, ty]) => Some(TransformParams::translation(*tx, *ty)),
        Some(other) => return Err(CliError::Usage(format!("--shift expects TX,TY, got {} values", other.len()))),
    };
    let sim = simulate(&gt, a.scale, &weights, theta.as_ref())?;
    std::fs::create_dir_all(&a.out_dir)?;
    let path = |name: &str| a.out_dir.join(name);
    save_image(&gt, &path("gt.mbf"))?;
    save_image(&sim.ms, &path("ms.mbf"))?;
    save_image(&sim.pan, &path("pan.mbf"))?;
    let target = theta.as_ref().map(TransformParams::inverse).transpose()?;
    Ok(Outcome {
        inputs: a.gt.clone().into_iter().collect(),
        outputs: vec![path("gt.mbf"), path("ms.mbf"), path("pan.mbf")],
        scale: Some(a.scale),
        results: json!({
            "theta_true": theta,
            "registration_target": target,
            "weights": weights,
            "gt_shape": gt.shape().to_string(),
        }),
        manifest: Some(path("manifest.json")),
        ..Outcome::default()
    })
}

fn sweep_shift(ctx: &Context, a: &ShiftSweepArgs) -> CliResult<Outcome> {
    let x = load(&a.image)?;
    let pan = load(&a.pan)?;
    if a.from > a.to {
        return Err(CliError::Usage(format!("empty shift range {}..{}", a.from, a.to)));
    }
    let eps = ctx.config.solver.registration.epsilon;
    let rows = translation_sweep(&x, &pan, a.from..=a.to, a.axis == Axis::X, eps)?;
    let mut csv = String::from("shift,normalized_energy\n");
    for (s, e) in &rows {
        csv.push_str(&format!("{s},{e:.12e}\n"));
    }
    write_text(a.out.as_deref(), &csv)?;
    let best = rows.iter().min_by(|p, q| p.1.total_cmp(&q.1)).map(|p| p.0);
    Ok(Outcome {
        inputs: vec![a.image.clone(), a.pan.clone()],
        outputs: a.out.clone().into_iter().collect(),
        results: json!({ "best_shift": best }),
        manifest: a.out.as_deref().map(sidecar),
        ..Outcome::default()
    })
}

fn sweep_lambda(ctx: &Context, a: &LambdaSweepArgs) -> CliResult<Outcome> {
    let ms = load(&a.ms)?;
    let pan = load(&a.pan)?;
    let truth = load(&a.truth)?;
    let c = check_pair(&ms, &pan, None)?;
    let rescale = ctx.config.rescale.unwrap_or(true);
    let mut csv = format!("lambda,iterations,converged,{}\n", MetricsReport::CSV_HEADER);
    for &lambda in &a.grid {
        let mut cfg = SolverConfig {
            lambda,
            ..ctx.config.solver.clone()
        };
        if a.no_register {
            cfg.reg_enabled = false;
        }
        cfg.validate()?;
        let (result, _) = run_fusion(&ms, &pan, &cfg, rescale, None)?;
        let report = MetricsReport::evaluate(&result.fused, &truth, Some(&pan), c as f64, 255.0)?;
        csv.push_str(&format!(
            "{lambda},{},{},{}\n",
            result.trace.iterations(),
            result.trace.converged,
            report.csv_row()
        ));
    }
    write_text(a.out.as_deref(), &csv)?;
    Ok(Outcome {
        inputs: vec![a.ms.clone(), a.pan.clone(), a.truth.clone()],
        outputs: a.out.clone().into_iter().collect(),
        scale: Some(c),
        results: json!({ "grid": a.grid }),
        manifest: a.out.as_deref().map(sidecar),
        ..Outcome::default()
    })
}

fn bench(ctx: &Context, a: &BenchArgs) -> CliResult<Outcome> {
    if a.sizes.is_empty() || a.iterations == 0 {
        return Err(CliError::Usage("bench needs at least one size and one iteration".into()));
    }
    let rows = sirf_core::simulate::bench_scaling(&a.sizes, a.iterations, &ctx.config.solver, ctx.seed)?;
    let mut csv = format!("{}\n", sirf_core::simulate::BenchRow::CSV_HEADER);
    for r in &rows {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    write_text(a.out.as_deref(), &csv)?;
    Ok(Outcome {
        outputs: a.out.clone().into_iter().collect(),
        results: json!({ "rows": rows }),
        manifest: a.out.as_deref().map(sidecar),
        ..Outcome::default()
    })
}
