//! Run configuration: TOML text read as a flat set of dotted keys.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use hmloc::lie::Vec3;
use hmloc::sim::{TrajectoryKind, WorldLayout};
use hmloc::{ImuBias, ImuNoiseParams, LocalizerConfig, Mode, RobustKernel, SimConfig};
use thiserror::Error;
use toml::Value;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("config: {0}")]
    Syntax(String),
    #[error("config: missing required key `{0}`")]
    Missing(String),
    #[error("config: unknown key `{0}`")]
    Unknown(String),
    #[error("config: key `{key}` must be {expected}")]
    Type { key: String, expected: &'static str },
    #[error("config: key `{key}`: {msg}")]
    Invalid { key: String, msg: String },
}

fn invalid(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.to_string(), msg: msg.into() }
}

/// Settings of the timing commands.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub repetitions: usize,
    pub features: usize,
    pub components: Vec<usize>,
    /// Camera poses per association repetition.
    pub frames: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { repetitions: 30, features: 100, components: vec![100, 1000], frames: 10 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub sim: SimConfig,
    pub localizer: LocalizerConfig,
    pub map: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub bench: BenchConfig,
}

impl RunConfig {
    /// Standard sequence in the given mode; what a minimal config produces.
    pub fn standard(mode: Mode) -> Self {
        RunConfig {
            mode,
            sim: SimConfig::default(),
            localizer: LocalizerConfig { mode, ..Default::default() },
            map: None,
            output: None,
            bench: BenchConfig::default(),
        }
    }
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

struct Keys {
    map: BTreeMap<String, Value>,
    used: BTreeSet<String>,
}

impl Keys {
    fn take(&mut self, key: &str) -> Option<&Value> {
        self.used.insert(key.to_string());
        self.map.get(key)
    }

    fn f64(&mut self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Float(x)) => Ok(Some(*x)),
            Some(Value::Integer(i)) => Ok(Some(*i as f64)),
            Some(_) => Err(ConfigError::Type { key: key.into(), expected: "a number" }),
        }
    }

    fn set_f64(&mut self, key: &str, dst: &mut f64) -> Result<(), ConfigError> {
        if let Some(x) = self.f64(key)? {
            if !x.is_finite() {
                return Err(invalid(key, "must be finite"));
            }
            *dst = x;
        }
        Ok(())
    }

    fn u64(&mut self, key: &str) -> Result<Option<u64>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Integer(i)) if *i >= 0 => Ok(Some(*i as u64)),
            Some(_) => Err(ConfigError::Type { key: key.into(), expected: "a non-negative integer" }),
        }
    }

    fn set_usize(&mut self, key: &str, dst: &mut usize) -> Result<(), ConfigError> {
        if let Some(x) = self.u64(key)? {
            *dst = x as usize;
        }
        Ok(())
    }

    fn bool(&mut self, key: &str) -> Result<Option<bool>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Boolean(b)) => Ok(Some(*b)),
            Some(_) => Err(ConfigError::Type { key: key.into(), expected: "true or false" }),
        }
    }

    fn str(&mut self, key: &str) -> Result<Option<String>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(ConfigError::Type { key: key.into(), expected: "a string" }),
        }
    }

    fn numbers(&mut self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        let bad = || ConfigError::Type { key: key.into(), expected: "an array of numbers" };
        match self.take(key) {
            None => Ok(None),
            Some(Value::Array(a)) => a
                .iter()
                .map(|v| match v {
                    Value::Float(x) => Ok(*x),
                    Value::Integer(i) => Ok(*i as f64),
                    _ => Err(bad()),
                })
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
            Some(_) => Err(bad()),
        }
    }

    fn set_vec3(&mut self, key: &str, dst: &mut Vec3) -> Result<(), ConfigError> {
        if let Some(v) = self.numbers(key)? {
            if v.len() != 3 {
                return Err(invalid(key, format!("expected 3 entries, got {}", v.len())));
            }
            *dst = Vec3::new(v[0], v[1], v[2]);
        }
        Ok(())
    }

    fn leftover(&self) -> Option<&String> {
        self.map.keys().find(|k| !self.used.contains(*k))
    }
}

fn positive(key: &str, x: f64) -> Result<(), ConfigError> {
    if x > 0.0 {
        Ok(())
    } else {
        Err(invalid(key, format!("must be positive, got {x}")))
    }
}

fn non_negative(key: &str, x: f64) -> Result<(), ConfigError> {
    if x >= 0.0 {
        Ok(())
    } else {
        Err(invalid(key, format!("must be non-negative, got {x}")))
    }
}

fn read_noise(k: &mut Keys, prefix: &str, n: &mut ImuNoiseParams) -> Result<(), ConfigError> {
    for (name, dst) in [("sigma_g", &mut n.sigma_g), ("sigma_a", &mut n.sigma_a), ("sigma_bg", &mut n.sigma_bg), ("sigma_ba", &mut n.sigma_ba)] {
        let key = format!("{prefix}.{name}");
        k.set_f64(&key, dst)?;
        non_negative(&key, *dst)?;
    }
    Ok(())
}

fn read_trajectory(k: &mut Keys) -> Result<TrajectoryKind, ConfigError> {
    let kind = k.str("sim.trajectory.kind")?.ok_or_else(|| ConfigError::Missing("sim.trajectory.kind".into()))?;
    match kind.as_str() {
        "circle" => {
            let (mut radius, mut period, mut height) = (2.0, 10.0, 1.5);
            k.set_f64("sim.trajectory.radius", &mut radius)?;
            k.set_f64("sim.trajectory.period", &mut period)?;
            k.set_f64("sim.trajectory.height", &mut height)?;
            non_negative("sim.trajectory.radius", radius)?;
            positive("sim.trajectory.period", period)?;
            Ok(TrajectoryKind::Circle { radius, period, height })
        }
        "lissajous" => {
            let mut center = Vec3::new(0.0, 0.0, 1.5);
            let mut amplitude = Vec3::new(2.0, 1.5, 0.3);
            let mut omega = Vec3::new(0.6, 0.9, 1.1);
            let (mut yaw_amplitude, mut yaw_omega) = (0.8, 0.5);
            k.set_vec3("sim.trajectory.center", &mut center)?;
            k.set_vec3("sim.trajectory.amplitude", &mut amplitude)?;
            k.set_vec3("sim.trajectory.omega", &mut omega)?;
            k.set_f64("sim.trajectory.yaw_amplitude", &mut yaw_amplitude)?;
            k.set_f64("sim.trajectory.yaw_omega", &mut yaw_omega)?;
            Ok(TrajectoryKind::Lissajous { center, amplitude, omega, yaw_amplitude, yaw_omega })
        }
        other => Err(invalid("sim.trajectory.kind", format!("unknown trajectory `{other}`, expected circle or lissajous"))),
    }
}

fn read_sim(k: &mut Keys) -> Result<SimConfig, ConfigError> {
    let mut s = match k.str("sim.preset")?.as_deref() {
        None | Some("standard") => SimConfig::default(),
        Some("noiseless") => SimConfig::noiseless(),
        Some(other) => return Err(invalid("sim.preset", format!("unknown preset `{other}`, expected standard or noiseless"))),
    };
    s.trajectory = read_trajectory(k)?;
    if let Some(seed) = k.u64("sim.seed")? {
        s.rng_seed = seed;
    }
    k.set_f64("sim.duration", &mut s.duration)?;
    k.set_f64("sim.imu_rate", &mut s.imu_rate)?;
    k.set_f64("sim.cam_rate", &mut s.cam_rate)?;
    k.set_f64("sim.pixel_sigma", &mut s.pixel_sigma)?;
    k.set_f64("sim.dropout", &mut s.dropout)?;
    k.set_f64("sim.init_sigma_t", &mut s.init_sigma_t)?;
    k.set_f64("sim.init_sigma_phi", &mut s.init_sigma_phi)?;
    k.set_usize("sim.n_components", &mut s.n_components)?;
    k.set_usize("sim.n_landmarks", &mut s.n_prior_landmarks)?;
    read_noise(k, "sim.imu_noise", &mut s.imu_noise)?;
    let mut bias = s.bias_truth;
    k.set_vec3("sim.bias.gyro", &mut bias.gyro)?;
    k.set_vec3("sim.bias.accel", &mut bias.accel)?;
    s.bias_truth = ImuBias::new(bias.gyro, bias.accel);
    if let Some(l) = k.str("sim.layout")? {
        s.layout = match l.as_str() {
            "room" => WorldLayout::Room,
            "single_wall" => WorldLayout::SingleWall,
            other => return Err(invalid("sim.layout", format!("unknown layout `{other}`, expected room or single_wall"))),
        };
    }
    let c = &mut s.camera;
    k.set_f64("sim.camera.fx", &mut c.fx)?;
    k.set_f64("sim.camera.fy", &mut c.fy)?;
    k.set_f64("sim.camera.cx", &mut c.cx)?;
    k.set_f64("sim.camera.cy", &mut c.cy)?;
    if let Some(w) = k.u64("sim.camera.width")? {
        c.width = w as u32;
    }
    if let Some(h) = k.u64("sim.camera.height")? {
        c.height = h as u32;
    }
    positive("sim.duration", s.duration)?;
    positive("sim.imu_rate", s.imu_rate)?;
    positive("sim.cam_rate", s.cam_rate)?;
    non_negative("sim.pixel_sigma", s.pixel_sigma)?;
    non_negative("sim.init_sigma_t", s.init_sigma_t)?;
    non_negative("sim.init_sigma_phi", s.init_sigma_phi)?;
    if !(0.0..1.0).contains(&s.dropout) {
        return Err(invalid("sim.dropout", "must lie in [0, 1)"));
    }
    if s.n_components == 0 {
        return Err(invalid("sim.n_components", "must be positive"));
    }
    s.imu_per_frame().map_err(|e| invalid("sim.imu_rate", e.to_string()))?;
    s.camera().map_err(|e| invalid("sim.camera", e.to_string()))?;
    Ok(s)
}

fn read_localizer(k: &mut Keys, mode: Mode) -> Result<LocalizerConfig, ConfigError> {
    let mut l = LocalizerConfig { mode, ..Default::default() };
    k.set_f64("thresholds.voxel_size", &mut l.voxel_size)?;
    k.set_f64("thresholds.mass_threshold", &mut l.mass_threshold)?;
    k.set_f64("thresholds.ray_gate", &mut l.assoc.gate)?;
    k.set_f64("thresholds.max_range", &mut l.assoc.max_range)?;
    k.set_usize("thresholds.top_k", &mut l.assoc.top_k)?;
    k.set_f64("thresholds.parallax_px", &mut l.seed.min_parallax_px)?;
    k.set_usize("thresholds.min_obs", &mut l.seed.min_obs)?;
    k.set_usize("thresholds.window", &mut l.window.size)?;
    positive("thresholds.voxel_size", l.voxel_size)?;
    positive("thresholds.mass_threshold", l.mass_threshold)?;
    if l.mass_threshold > 1.0 {
        return Err(invalid("thresholds.mass_threshold", "must not exceed 1"));
    }
    positive("thresholds.ray_gate", l.assoc.gate)?;
    positive("thresholds.max_range", l.assoc.max_range)?;
    positive("thresholds.parallax_px", l.seed.min_parallax_px)?;
    positive("thresholds.top_k", l.assoc.top_k as f64)?;
    positive("thresholds.min_obs", l.seed.min_obs as f64)?;
    if l.window.size < 2 {
        return Err(invalid("thresholds.window", "must be at least 2"));
    }

    k.set_f64("estimator.pixel_sigma", &mut l.pixel_sigma)?;
    positive("estimator.pixel_sigma", l.pixel_sigma)?;
    if let Some(d) = k.f64("estimator.huber_delta")? {
        l.kernel = if d > 0.0 { RobustKernel::huber(d) } else { RobustKernel::NONE };
    }
    k.set_usize("estimator.instant_iters", &mut l.instant.max_iters)?;
    k.set_usize("estimator.window_iters", &mut l.window.max_iters)?;
    k.set_f64("estimator.convergence_tol", &mut l.window.convergence_tol)?;
    l.instant.rel_tol = l.window.convergence_tol;
    if let Some(b) = k.bool("estimator.temporal_landmarks")? {
        l.temporal_landmarks = b;
    }
    if let Some(b) = k.bool("estimator.fix_oldest")? {
        l.window.fix_oldest = b;
    }
    read_noise(k, "estimator.imu_noise", &mut l.imu_noise)?;
    if !l.imu_noise.is_valid() {
        return Err(invalid("estimator.imu_noise", "every density must be positive"));
    }
    Ok(l)
}

fn read_bench(k: &mut Keys) -> Result<BenchConfig, ConfigError> {
    let mut b = BenchConfig::default();
    k.set_usize("bench.repetitions", &mut b.repetitions)?;
    k.set_usize("bench.features", &mut b.features)?;
    k.set_usize("bench.frames", &mut b.frames)?;
    if let Some(c) = k.numbers("bench.components")? {
        if c.iter().any(|x| *x < 1.0 || x.fract() != 0.0) {
            return Err(invalid("bench.components", "entries must be positive integers"));
        }
        b.components = c.into_iter().map(|x| x as usize).collect();
    }
    if b.repetitions < 2 {
        return Err(invalid("bench.repetitions", "must be at least 2"));
    }
    positive("bench.features", b.features as f64)?;
    positive("bench.frames", b.frames as f64)?;
    if b.components.is_empty() {
        return Err(invalid("bench.components", "must not be empty"));
    }
    Ok(b)
}

/// Parses a configuration document. Every key must be known.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax(e.message().to_string()))?;
    let mut map = BTreeMap::new();
    flatten("", &table, &mut map);
    let mut k = Keys { map, used: BTreeSet::new() };
    let mode_s = k.str("mode")?.ok_or_else(|| ConfigError::Missing("mode".into()))?;
    let mode: Mode = mode_s.parse().map_err(|e: String| invalid("mode", e))?;
    let sim = read_sim(&mut k)?;
    let localizer = read_localizer(&mut k, mode)?;
    let bench = read_bench(&mut k)?;
    let map = k.str("map.path")?.map(PathBuf::from);
    let output = k.str("output")?.map(PathBuf::from);
    if let Some(key) = k.leftover() {
        return Err(ConfigError::Unknown(key.clone()));
    }
    Ok(RunConfig { mode, sim, localizer, map, output, bench })
}
