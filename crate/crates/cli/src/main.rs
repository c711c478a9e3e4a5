#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::{json, Value};

use lqg_mc::brownian::{sample_bessel_excursion, ExcursionTruncation};
use lqg_mc::config::{RunConfig, Threads};
use lqg_mc::io::{manifest, ArtifactSet};
use lqg_mc::quadrant::{sample_quadrant_loop, QuadrantBridgeSpec};
use lqg_mc::sphere::{
    assemble_levy_sphere, sample_quantum_disk, sample_sphere_bessel_batch, sample_sphere_bottleneck_batch, DiskAreaCalibration, DiskConfig,
    DiskConstraint, DiskOrientation, GridConfig, Materialize, SphereConfig, SphereSample,
};
use lqg_mc::stable::{sample_stable_excursion, ExcursionConfig, StableSpec, StableTruncation};
use lqg_mc::verify;
use lqg_mc::{make_params, GammaParams, ModuleId, StreamKey};

#[derive(Parser, Debug)]
#[command(name = "lqg-mc", version, about = "Monte Carlo samplers for sqrt(8/3)-LQG surfaces")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Flags mirror the config keys; each one overrides the config file.
#[derive(Args, Debug, Default)]
struct Overrides {
    /// JSON config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    gamma: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    n_samples: Option<u64>,
    /// Cells per 2π of x.
    #[arg(long, global = true)]
    n_x: Option<usize>,
    #[arg(long, global = true)]
    n_theta: Option<usize>,
    #[arg(long, global = true)]
    n_modes: Option<usize>,
    #[arg(long, global = true)]
    n_steps: Option<usize>,
    /// JSON object merged into the truncation map, e.g. '{"loop":{"delta":0.2}}'.
    #[arg(long, global = true)]
    truncations: Option<String>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// "auto" or a thread count.
    #[arg(long, global = true)]
    threads: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Relaxed quadrant loops and the law of their midpoint Z_{1/2}.
    Loop {
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
    },
    /// Bessel excursions (truncations.bessel: tagged, default min_max 1).
    Bessel {
        #[arg(long, default_value_t = 1.0)]
        delta: f64,
    },
    /// Excursions of the 3/2-stable process above its infimum.
    Stable,
    /// Spheres from the Bessel excursion measure with area in a window.
    SphereBessel,
    /// Spheres from the bottleneck construction with area in [1, 1 + epsilon].
    SphereBottleneck,
    /// Quantum disks under a boundary or area constraint.
    Disk,
    /// Spheres assembled from a stable excursion with a disk in every jump.
    LevySphere,
    /// Run a verification suite; exits 0 iff every criterion passes.
    Verify { suite: String },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Loop { .. } => "loop",
            Command::Bessel { .. } => "bessel",
            Command::Stable => "stable",
            Command::SphereBessel => "sphere-bessel",
            Command::SphereBottleneck => "sphere-bottleneck",
            Command::Disk => "disk",
            Command::LevySphere => "levy-sphere",
            Command::Verify { .. } => "verify",
        }
    }
}

fn load_config(o: &Overrides) -> Result<RunConfig> {
    let mut cfg = match &o.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            RunConfig::from_json(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(v) = o.gamma {
        cfg.gamma = v;
    }
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    if let Some(v) = o.n_samples {
        cfg.n_samples = v;
    }
    if let Some(v) = o.n_x {
        cfg.grid.n_x = v;
    }
    if let Some(v) = o.n_theta {
        cfg.grid.n_theta = v;
    }
    if let Some(v) = o.n_modes {
        cfg.grid.n_modes = v;
    }
    if let Some(v) = o.n_steps {
        cfg.grid.n_steps = v;
    }
    if let Some(t) = &o.truncations {
        let patch: Value = serde_json::from_str(t).context("--truncations is not valid JSON")?;
        cfg.merge_truncations(&patch)?;
    }
    if let Some(d) = &o.output_dir {
        cfg.output_dir = Some(d.clone());
    }
    if let Some(t) = &o.threads {
        cfg.threads = t.parse()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Outcome {
    artifacts: ArtifactSet,
    results: Value,
    timings: Value,
    passed: bool,
}

impl Outcome {
    fn sampled(artifacts: ArtifactSet, results: Value) -> Self {
        Self {
            artifacts,
            results,
            timings: json!({}),
            passed: true,
        }
    }
}

fn sphere_grid(cfg: &RunConfig) -> GridConfig {
    GridConfig {
        n_theta: cfg.grid.n_theta,
        n_modes: cfg.grid.n_modes,
        dx: 2.0 * std::f64::consts::PI / cfg.grid.n_x as f64,
        ..GridConfig::sphere()
    }
}

/// Same spacing as the sphere grid on a strip of width π.
fn disk_config(cfg: &RunConfig, p: &GammaParams, key: &StreamKey) -> Result<DiskConfig> {
    let grid = GridConfig {
        n_theta: (cfg.grid.n_theta / 2).max(2),
        ..sphere_grid(cfg)
    };
    if grid == DiskConfig::default().grid {
        Ok(DiskConfig::default())
    } else {
        Ok(DiskConfig::calibrated(p, grid, 2_000, &key.child(&[ModuleId::Sphere as u64, 0]))?)
    }
}

fn push_field(out: &mut ArtifactSet, name: &str, field: &lqg_mc::field::CylinderField, eps: f64, gamma: f64) -> Result<()> {
    let mut buf = Vec::new();
    field.write_csv(&mut buf)?;
    out.push(format!("{name}.csv"), buf);
    out.push_json(format!("{name}.json"), &field.metadata(Some(eps), Some(gamma)))?;
    Ok(())
}

fn acceptance_stats(attempts: impl Iterator<Item = u64>, n: u64) -> Value {
    let total: u64 = attempts.sum();
    json!({"samples": n, "attempts": total, "acceptance_rate": n as f64 / total.max(1) as f64})
}

fn run_loop(cfg: &RunConfig, alpha: f64, key: &StreamKey) -> Result<Outcome> {
    let delta = cfg.truncation_f64("loop", "delta", 0.1)?;
    let spec = QuadrantBridgeSpec::relaxed_loop(alpha, delta, cfg.grid.n_steps);
    let loops = (0..cfg.n_samples)
        .into_par_iter()
        .map(|i| sample_quadrant_loop(&spec, key, i))
        .collect::<lqg_mc::Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let mut mid = Vec::with_capacity(loops.len());
    for (i, s) in loops.iter().enumerate() {
        for (k, &t) in s.path.times().iter().enumerate() {
            let (x, y) = s.path.point(k);
            rows.push(vec![i.to_string(), k.to_string(), t.to_string(), x.to_string(), y.to_string()]);
        }
        mid.push(s.path.point(s.path.index_near(0.5)));
    }
    let mut out = ArtifactSet::new();
    out.push_csv("loops.csv", &["loop", "step", "t", "x", "y"], rows);
    out.push_csv(
        "z_half.csv",
        &["loop", "x", "y"],
        mid.iter().enumerate().map(|(i, (x, y))| vec![i as f64, *x, *y]),
    );
    let mut hist = Vec::new();
    for (name, values) in [("x", mid.iter().map(|p| p.0).collect::<Vec<_>>()), ("y", mid.iter().map(|p| p.1).collect())] {
        hist.extend(histogram(&values, 40).into_iter().map(|(lo, hi, c)| vec![name.to_string(), lo.to_string(), hi.to_string(), c.to_string()]));
    }
    out.push_csv("z_half_histogram.csv", &["coordinate", "bin_lo", "bin_hi", "count"], hist);
    let results = json!({
        "alpha": alpha,
        "delta": delta,
        "acceptance": acceptance_stats(loops.iter().map(|s| s.attempts), cfg.n_samples),
    });
    Ok(Outcome::sampled(out, results))
}

fn histogram(values: &[f64], n_bins: usize) -> Vec<(f64, f64, u64)> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / n_bins as f64 } else { 1.0 };
    let mut counts = vec![0u64; n_bins];
    for &v in values {
        counts[(((v - lo) / width) as usize).min(n_bins - 1)] += 1;
    }
    (0..n_bins)
        .map(|b| (lo + b as f64 * width, lo + (b + 1) as f64 * width, counts[b]))
        .collect()
}

fn run_bessel(cfg: &RunConfig, delta: f64, key: &StreamKey) -> Result<Outcome> {
    let trunc = cfg.truncation_as("bessel", ExcursionTruncation::MinMax { min_max: 1.0 })?;
    let ex = (0..cfg.n_samples)
        .into_par_iter()
        .map(|i| sample_bessel_excursion(delta, trunc, cfg.grid.n_steps, &mut key.rng(ModuleId::Bessel, i)))
        .collect::<lqg_mc::Result<Vec<_>>>()?;
    let mut out = ArtifactSet::new();
    out.push_csv(
        "excursions.csv",
        &["excursion", "duration", "max", "n_points"],
        ex.iter().enumerate().map(|(i, e)| vec![i as f64, e.duration, e.max, e.path.len() as f64]),
    );
    Ok(Outcome::sampled(out, json!({"delta": delta, "truncation": trunc, "samples": ex.len()})))
}

fn run_stable(cfg: &RunConfig, key: &StreamKey) -> Result<Outcome> {
    let spec = StableSpec::three_halves();
    let trunc = cfg.truncation_as("stable", StableTruncation::MinHeight { min_height: 1.0 })?;
    let ecfg = ExcursionConfig::default();
    let ex = (0..cfg.n_samples)
        .into_par_iter()
        .map(|i| sample_stable_excursion(&spec, trunc, cfg.grid.n_steps, &ecfg, &mut key.rng(ModuleId::Stable, i)))
        .collect::<lqg_mc::Result<Vec<_>>>()?;
    let mut out = ArtifactSet::new();
    out.push_csv(
        "excursions.csv",
        &["excursion", "duration", "height", "max_jump", "n_jumps", "attempts"],
        ex.iter()
            .enumerate()
            .map(|(i, e)| vec![i as f64, e.duration, e.height(), e.max_jump(), e.jumps.len() as f64, e.attempts as f64]),
    );
    out.push_csv(
        "jumps.csv",
        &["excursion", "time", "size"],
        ex.iter()
            .enumerate()
            .flat_map(|(i, e)| e.jumps.iter().map(move |j| vec![i as f64, j.time, j.size])),
    );
    Ok(Outcome::sampled(out, json!({"truncation": trunc, "samples": ex.len()})))
}

fn sphere_outputs(samples: &[SphereSample], p: &GammaParams) -> Result<ArtifactSet> {
    let widths = samples
        .iter()
        .map(|s| s.measure(p).map(|m| m.interquartile_width()))
        .collect::<lqg_mc::Result<Vec<_>>>()?;
    let mut out = ArtifactSet::new();
    out.push_csv(
        "spheres.csv",
        &["sphere", "area", "profile_max", "attempts", "iqr_width", "x_min", "x_max"],
        samples.iter().zip(&widths).enumerate().map(|(i, (s, w))| {
            vec![
                i as f64,
                s.area,
                s.profile_max,
                s.acceptance.attempts as f64,
                *w,
                s.field.grid.x_min,
                s.field.grid.x_max(),
            ]
        }),
    );
    if let Some(s) = samples.first() {
        push_field(&mut out, "field_0", &s.field, s.epsilon_reg, s.gamma)?;
    }
    Ok(out)
}

fn run_sphere_bessel(cfg: &RunConfig, p: &GammaParams, key: &StreamKey) -> Result<Outcome> {
    let window = (cfg.truncation_f64("sphere-bessel", "area_lo", 1.0)?, cfg.truncation_f64("sphere-bessel", "area_hi", 100.0)?);
    let sc = SphereConfig {
        grid: sphere_grid(cfg),
        ..SphereConfig::default()
    };
    let samples = sample_sphere_bessel_batch(p, window, &sc, key, 0, cfg.n_samples)?;
    let out = sphere_outputs(&samples, p)?;
    let results = json!({
        "area_window": [window.0, window.1],
        "acceptance": acceptance_stats(samples.iter().map(|s| s.acceptance.attempts), cfg.n_samples),
    });
    Ok(Outcome::sampled(out, results))
}

fn run_sphere_bottleneck(cfg: &RunConfig, p: &GammaParams, key: &StreamKey) -> Result<Outcome> {
    let r = cfg.truncation_f64("sphere-bottleneck", "r", -8.0 / p.gamma)?;
    let eps = cfg.truncation_f64("sphere-bottleneck", "epsilon", 0.05)?;
    let samples = sample_sphere_bottleneck_batch(p, r, eps, &sphere_grid(cfg), key, 0, cfg.n_samples)?;
    let out = sphere_outputs(&samples, p)?;
    let results = json!({
        "r": r,
        "epsilon": eps,
        "acceptance": acceptance_stats(samples.iter().map(|s| s.acceptance.attempts), cfg.n_samples),
    });
    Ok(Outcome::sampled(out, results))
}

fn run_disk(cfg: &RunConfig, p: &GammaParams, key: &StreamKey) -> Result<Outcome> {
    let constraint = cfg.truncation_as("disk", DiskConstraint::UnitBoundary)?;
    let dc = disk_config(cfg, p, key)?;
    let disks = (0..cfg.n_samples)
        .into_par_iter()
        .map(|i| sample_quantum_disk(p, constraint, &dc, key, i))
        .collect::<lqg_mc::Result<Vec<_>>>()?;
    let mut out = ArtifactSet::new();
    out.push_csv(
        "disks.csv",
        &["disk", "boundary_length", "area", "marked_x", "marked_edge", "attempts"],
        disks.iter().enumerate().map(|(i, d)| {
            let edge = match d.marked_boundary_point.1 {
                lqg_mc::field::StripEdge::Lower => "lower",
                lqg_mc::field::StripEdge::Upper => "upper",
            };
            vec![
                i.to_string(),
                d.boundary_length.to_string(),
                d.area.to_string(),
                d.marked_boundary_point.0.to_string(),
                edge.to_string(),
                d.acceptance.attempts.to_string(),
            ]
        }),
    );
    if let Some(d) = disks.first() {
        push_field(&mut out, "field_0", &d.field, d.epsilon_reg, p.gamma)?;
    }
    let results = json!({
        "constraint": constraint,
        "caps": {"boundary": dc.boundary_cap, "area": dc.area_cap},
        "acceptance": acceptance_stats(disks.iter().map(|d| d.acceptance.attempts), cfg.n_samples),
    });
    Ok(Outcome::sampled(out, results))
}

fn run_levy_sphere(cfg: &RunConfig, p: &GammaParams, key: &StreamKey) -> Result<Outcome> {
    let trunc = cfg.truncation_as("levy-sphere", StableTruncation::MinMaxJump { min_jump: 1.0 })?;
    let dc = disk_config(cfg, p, key)?;
    let n_cal = cfg.truncation_f64("levy-sphere-calibration", "size", DiskAreaCalibration::DEFAULT_SIZE as f64)?;
    if !(n_cal >= 1.0) {
        bail!("truncations.levy-sphere-calibration.size must be at least 1");
    }
    let cal = DiskAreaCalibration::build(p, &dc, n_cal as u64, &key.child(&[ModuleId::Sphere as u64, 1]))?;
    let materialize = match cfg.truncation_f64("levy-sphere-disks", "materialize_above", f64::INFINITY)? {
        s if s.is_finite() => Materialize::AllAbove { s },
        _ => Materialize::None,
    };
    let spheres = (0..cfg.n_samples)
        .into_par_iter()
        .map(|i| assemble_levy_sphere(p, trunc, cfg.grid.n_steps, materialize, &cal, &dc, key, i))
        .collect::<lqg_mc::Result<Vec<_>>>()?;
    let mut out = ArtifactSet::new();
    out.push_csv(
        "spheres.csv",
        &["sphere", "total_area", "unresolved_area_estimate", "duration", "n_disks", "jump_threshold"],
        spheres.iter().enumerate().map(|(i, s)| {
            vec![
                i as f64,
                s.total_area,
                s.unresolved_area_estimate,
                s.excursion.duration,
                s.decorations.len() as f64,
                s.jump_threshold,
            ]
        }),
    );
    out.push_csv(
        "disks.csv",
        &["sphere", "boundary_length", "orientation", "marked_point", "area", "materialized"],
        spheres.iter().enumerate().flat_map(|(i, s)| {
            s.decorations.iter().map(move |d| {
                let o = match d.orientation {
                    DiskOrientation::Clockwise => "cw",
                    DiskOrientation::CounterClockwise => "ccw",
                };
                vec![
                    i.to_string(),
                    d.boundary_length.to_string(),
                    o.to_string(),
                    d.marked_point.to_string(),
                    d.area.to_string(),
                    d.disk.is_some().to_string(),
                ]
            })
        }),
    );
    let results = json!({"truncation": trunc, "calibration": {"size": cal.unit_boundary_areas.len(), "mean_unit_boundary_area": cal.mean()}, "samples": spheres.len()});
    Ok(Outcome::sampled(out, results))
}

fn run_verify(cfg: &RunConfig, suite: &str) -> Result<Outcome> {
    let run = verify::run_suite(suite, cfg.seed)?;
    for c in &run.report.criteria {
        println!("{}", c.line());
    }
    println!("{}: {}", suite, if run.report.passed { "PASS" } else { "FAIL" });
    Ok(Outcome {
        passed: run.report.passed,
        results: serde_json::to_value(&run.report)?,
        timings: serde_json::to_value(&run.timings)?,
        artifacts: run.artifacts,
    })
}

fn run(cli: Cli) -> Result<bool> {
    let cfg = load_config(&cli.overrides)?;
    if let Threads::Fixed(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let dir = cfg.resolved_output_dir();
    std::fs::create_dir_all(&dir).with_context(|| format!("cannot create output_dir {}", dir.display()))?;
    let start = Instant::now();
    let key = StreamKey::new(cfg.seed);
    let params = || make_params(cfg.gamma);
    let outcome = match &cli.command {
        Command::Loop { alpha } => run_loop(&cfg, *alpha, &key)?,
        Command::Bessel { delta } => run_bessel(&cfg, *delta, &key)?,
        Command::Stable => run_stable(&cfg, &key)?,
        Command::SphereBessel => run_sphere_bessel(&cfg, &params()?, &key)?,
        Command::SphereBottleneck => run_sphere_bottleneck(&cfg, &params()?, &key)?,
        Command::Disk => run_disk(&cfg, &params()?, &key)?,
        Command::LevySphere => run_levy_sphere(&cfg, &params()?, &key)?,
        Command::Verify { suite } => run_verify(&cfg, suite)?,
    };
    let mut timings = outcome.timings;
    timings["wall_s"] = json!(start.elapsed().as_secs_f64());
    let args = match &cli.command {
        Command::Loop { alpha } => json!({"alpha": alpha}),
        Command::Bessel { delta } => json!({"delta": delta}),
        Command::Verify { suite } => json!({"suite": suite}),
        _ => json!({}),
    };
    let echo = json!({"subcommand": cli.command.name(), "args": args, "run": cfg, "output_dir": dir});
    let m = manifest(echo, cfg.seed, &outcome.artifacts, timings, outcome.results);
    outcome
        .artifacts
        .write_to(&dir)
        .with_context(|| format!("cannot write artifacts to {}", dir.display()))?;
    let mut text = serde_json::to_string_pretty(&m)?;
    text.push('\n');
    std::fs::write(dir.join("manifest.json"), text).with_context(|| format!("cannot write manifest to {}", dir.display()))?;
    Ok(outcome.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
