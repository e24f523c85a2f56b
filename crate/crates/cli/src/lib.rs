//! Command-line driver: simulated localization runs, association and
//! optimization timing, and the Jacobian check.

pub mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use hmloc::assoc::{associate_projection_baseline, associate_raycast};
use hmloc::estimator::mean_std;
use hmloc::factors::check_jacobians;
use hmloc::gmm::{build_voxel_index, load_map};
use hmloc::sim::{generate_trajectory, generate_world, stream, write_tum, TumPose};
use hmloc::{
    evaluate, run_localization, AssocConfig, CameraPose, Extrinsics, Feature, Mode, RunStats, Scenario, TimingRecord,
};
use nalgebra::Vector2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{parse_config, BenchConfig, ConfigError, RunConfig};

/// Rng stream id of the benchmark features; the simulator uses the low ids.
const STREAM_BENCH_FEATURES: u64 = 100;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Runtime(#[from] hmloc::Error),
    #[error("io: {path}: {msg}")]
    Io { path: PathBuf, msg: String },
    #[error("cli: {0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 3,
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io { path: path.to_path_buf(), msg: e.to_string() }
}

pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError::Syntax(format!("{}: {e}", path.display())))?;
    Ok(parse_config(&text)?)
}

/// Simulated sequence for `cfg`, over the external map when one is given.
pub fn scenario(cfg: &RunConfig) -> Result<Scenario, CliError> {
    let scn = match &cfg.map {
        Some(p) => Scenario::generate_on_map(&cfg.sim, load_map(p).map_err(hmloc::Error::from)?),
        None => Scenario::generate(&cfg.sim),
    };
    Ok(scn.map_err(hmloc::Error::from)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mode: String,
    pub seed: u64,
    pub mape_m: f64,
    pub recall_pct: f64,
    pub frames: usize,
    pub localized: usize,
    pub seeds_created: usize,
    pub landmarks_activated: usize,
    pub landmarks_demoted: usize,
    pub temporal_factors: usize,
    pub per_stage_timing: Vec<TimingRecord>,
}

impl Metrics {
    fn new(cfg: &RunConfig, mape_m: f64, recall_pct: f64, s: RunStats, per_stage_timing: Vec<TimingRecord>) -> Self {
        Metrics {
            mode: cfg.mode.name().to_string(),
            seed: cfg.sim.rng_seed,
            mape_m,
            recall_pct,
            frames: s.frames,
            localized: s.localized,
            seeds_created: s.seeds_created,
            landmarks_activated: s.landmarks_activated,
            landmarks_demoted: s.landmarks_demoted,
            temporal_factors: s.temporal_factors,
            per_stage_timing,
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::File::create(path).and_then(|mut f| f.write_all(bytes)).map_err(|e| io_err(path, e))
}

fn tum_bytes(poses: impl Iterator<Item = TumPose>) -> Vec<u8> {
    let poses: Vec<_> = poses.collect();
    let mut buf = Vec::new();
    write_tum(&mut buf, &poses).expect("writing to memory");
    buf
}

/// Simulate, localize and evaluate; writes `metrics.json`, `est.tum` and
/// `gt.tum` into `out`.
pub fn cmd_run(cfg: &RunConfig, out: &Path) -> Result<Metrics, CliError> {
    let scn = scenario(cfg)?;
    let res = run_localization(&scn, &cfg.localizer)?;
    let ev = evaluate(&res.estimates, &scn.gt.frames).map_err(hmloc::Error::from)?;
    let metrics = Metrics::new(cfg, ev.mape_m, ev.recall_pct, res.stats, res.timer.summary());
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let json = serde_json::to_string_pretty(&metrics).map_err(|e| CliError::Other(e.to_string()))?;
    write_file(&out.join("metrics.json"), json.as_bytes())?;
    write_file(&out.join("est.tum"), &tum_bytes(res.estimates.iter().map(|e| TumPose::from(&e.state))))?;
    write_file(&out.join("gt.tum"), &tum_bytes(scn.gt.frames.iter().map(TumPose::from)))?;
    Ok(metrics)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssocRow {
    pub method: String,
    pub components: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
}

/// Uniform pixels with random scores, shared by every method and map size.
pub fn bench_features(cfg: &RunConfig) -> Result<Vec<Feature>, CliError> {
    let cam = cfg.sim.camera().map_err(hmloc::Error::from)?;
    let mut rng = stream(cfg.sim.rng_seed, STREAM_BENCH_FEATURES);
    Ok((0..cfg.bench.features as u64)
        .map(|track_id| Feature {
            u: Vector2::new(rng.random_range(0.0..cam.width as f64), rng.random_range(0.0..cam.height as f64)),
            score: rng.random(),
            track_id,
        })
        .collect())
}

fn time_ms(f: impl FnOnce()) -> f64 {
    let t = Instant::now();
    f();
    t.elapsed().as_secs_f64() * 1e3
}

/// Per-frame association time of both methods over `bench.frames` ground
/// truth poses, one warm-up pass then `bench.repetitions` timed passes.
pub fn cmd_bench_assoc(cfg: &RunConfig) -> Result<Vec<AssocRow>, CliError> {
    let features = bench_features(cfg)?;
    let cam = cfg.sim.camera().map_err(hmloc::Error::from)?;
    let gt = generate_trajectory(&cfg.sim).map_err(hmloc::Error::from)?;
    let extr = Extrinsics::forward_looking();
    let step = (gt.frames.len() / cfg.bench.frames).max(1);
    let poses: Vec<CameraPose> = gt.frames.iter().step_by(step).take(cfg.bench.frames).map(|x| CameraPose::from_state(x, &extr)).collect();
    let assoc = AssocConfig { top_k: cfg.bench.features.max(cfg.localizer.assoc.top_k), ..cfg.localizer.assoc };
    let mut rows = Vec::new();
    for &n in &cfg.bench.components {
        let sim = hmloc::SimConfig { n_components: n, ..cfg.sim };
        let mixture = match &cfg.map {
            Some(p) => load_map(p).map_err(hmloc::Error::from)?,
            None => generate_world(&sim).map_err(hmloc::Error::from)?.mixture,
        };
        let grid = build_voxel_index(&mixture, cfg.localizer.voxel_size, cfg.localizer.mass_threshold).map_err(hmloc::Error::from)?;
        let raycast = |p: &CameraPose| associate_raycast(p, &features, &cam, &grid, &mixture, &assoc);
        let projection = |p: &CameraPose| associate_projection_baseline(p, &features, &cam, &mixture, &assoc);
        let methods: [(&str, &dyn Fn(&CameraPose) -> Vec<hmloc::Association>); 2] = [("raycast", &raycast), ("projection", &projection)];
        for (name, f) in methods {
            for p in &poses {
                std::hint::black_box(f(p));
            }
            let samples: Vec<f64> = (0..cfg.bench.repetitions)
                .map(|_| {
                    let total = time_ms(|| {
                        for p in &poses {
                            std::hint::black_box(f(p));
                        }
                    });
                    total / poses.len() as f64
                })
                .collect();
            let (mean_ms, std_ms) = mean_std(&samples);
            rows.push(AssocRow { method: name.to_string(), components: mixture.len(), mean_ms, std_ms });
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptRow {
    pub backend: String,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub final_rmse_m: f64,
}

/// Window optimization time with visual factors (a, the V+I run) against
/// pose priors (b, the V+I+L run) on the same sequence. Runs repeat until
/// `bench.repetitions` window samples are collected; the first run of each
/// backend is a discarded warm-up.
pub fn cmd_bench_opt(cfg: &RunConfig) -> Result<Vec<OptRow>, CliError> {
    let scn = scenario(cfg)?;
    let mut rows = Vec::new();
    for (backend, mode) in [("reprojection", Mode::VI), ("pose_prior", Mode::VIL)] {
        let lc = hmloc::LocalizerConfig { mode, ..cfg.localizer };
        run_localization(&scn, &lc)?;
        let mut samples = Vec::new();
        let mut rmse = 0.0;
        while samples.len() < cfg.bench.repetitions {
            let res = run_localization(&scn, &lc)?;
            if res.opt_ms.is_empty() {
                return Err(CliError::Other(format!("{backend}: no window was optimized")));
            }
            samples.extend_from_slice(&res.opt_ms);
            let ev = evaluate(&res.estimates, &scn.gt.frames).map_err(hmloc::Error::from)?;
            let sq: Vec<f64> = ev.ape.iter().flatten().map(|e| e * e).collect();
            rmse = (sq.iter().sum::<f64>() / sq.len() as f64).sqrt();
        }
        let (mean_ms, std_ms) = mean_std(&samples);
        rows.push(OptRow { backend: backend.to_string(), mean_ms, std_ms, final_rmse_m: rmse });
    }
    Ok(rows)
}

pub fn csv_string<T: Serialize>(rows: &[T]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Other(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Other(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Debug, Parser)]
#[command(name = "hmloc", about = "Localization in a Gaussian-mixture prior map")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration (TOML with dotted keys).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output` in the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides `sim.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; benchmarks default to one.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate, localize and write metrics.json, est.tum and gt.tum.
    Run,
    /// Time ray-cast against projection association; writes assoc_bench.csv.
    BenchAssoc,
    /// Time window optimization per backend; writes opt_bench.csv.
    BenchOpt,
    /// Compare analytic Jacobians with central differences.
    CheckJacobians {
        #[arg(long, default_value_t = 100)]
        configs: usize,
        #[arg(long, hide = true)]
        flip_sign: Option<String>,
    },
}

fn config_for(cli: &Cli, required: bool) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => load_config(p)?,
        None if required => return Err(ConfigError::Missing("--config".into()).into()),
        None => RunConfig::standard(Mode::VIL),
    };
    if let Some(s) = cli.seed {
        cfg.sim.rng_seed = s;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: &RunConfig) -> PathBuf {
    cli.out.clone().or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("out"))
}

fn pool(workers: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(1))
        .build()
        .map_err(|e| CliError::Other(e.to_string()))
}

fn write_csv<T: Serialize>(dir: &Path, name: &str, rows: &[T]) -> Result<(), CliError> {
    let text = csv_string(rows)?;
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_file(&dir.join(name), text.as_bytes())?;
    print!("{text}");
    Ok(())
}

/// Executes a parsed command line, printing results to stdout.
pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Run => {
            let cfg = config_for(cli, true)?;
            let out = out_dir(cli, &cfg);
            let m = match cli.workers {
                Some(w) => pool(Some(w))?.install(|| cmd_run(&cfg, &out))?,
                None => cmd_run(&cfg, &out)?,
            };
            println!("mode {}  mAPE {:.6} m  recall {:.1} %  -> {}", m.mode, m.mape_m, m.recall_pct, out.display());
        }
        Command::BenchAssoc => {
            let cfg = config_for(cli, false)?;
            let rows = pool(cli.workers)?.install(|| cmd_bench_assoc(&cfg))?;
            write_csv(&out_dir(cli, &cfg), "assoc_bench.csv", &rows)?;
        }
        Command::BenchOpt => {
            let cfg = config_for(cli, false)?;
            let rows = pool(cli.workers)?.install(|| cmd_bench_opt(&cfg))?;
            write_csv(&out_dir(cli, &cfg), "opt_bench.csv", &rows)?;
        }
        Command::CheckJacobians { configs, flip_sign } => {
            let opts = hmloc::factors::CheckOptions {
                configs: *configs,
                seed: cli.seed.unwrap_or(hmloc::factors::CheckOptions::default().seed),
                flip_sign: flip_sign.clone(),
            };
            let report = check_jacobians(&opts);
            print!("{report}");
            let failed = report.failures().count();
            if failed > 0 {
                return Err(CliError::Other(format!("factors: {failed} Jacobian block(s) out of tolerance")));
            }
        }
    }
    Ok(())
}

/// Entry point shared by the binary and tests; returns the exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
