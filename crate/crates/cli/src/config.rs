//! Run configuration: flat `section.key = value` text with `#` comments, or
//! the `config` object of a previously written `manifest.json`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use qfilter_core::C64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error("key `{key}` = `{value}`: {reason}")]
    Invalid { key: String, value: String, reason: String },
    #[error("{0}")]
    Inconsistent(String),
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("manifest is not valid: {0}")]
    Manifest(String),
}

type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Linear,
    Normalized,
    Kalman,
    Compare,
    Dilation,
    MgfCheck,
    NoiseSelftest,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SystemKind {
    Oscillator,
    Qubit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CouplingKind {
    /// Oscillator position, or `sigma_x` for a qubit.
    Position,
    /// Ladder operator `a`, or `sigma_-` for a qubit.
    Lowering,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SignalCoupling {
    None,
    Identity,
    /// `f` at the grid nodes; derivatives by finite differences.
    Table(Vec<f64>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecordSource {
    /// Pure-noise record `dy = de`.
    Reference,
    /// Record simulated from the model itself.
    Model,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

macro_rules! keyword_enum {
    ($ty:ident { $($v:ident => $s:literal),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($s => Ok(Self::$v),)+
                    _ => Err(format!("expected one of: {}", [$($s),+].join(", "))),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(Self::$v => $s,)+ })
            }
        }
    };
}

keyword_enum!(Mode {
    Linear => "linear",
    Normalized => "normalized",
    Kalman => "kalman",
    Compare => "compare",
    Dilation => "dilation",
    MgfCheck => "mgf-check",
    NoiseSelftest => "noise-selftest",
});
keyword_enum!(SystemKind { Oscillator => "oscillator", Qubit => "qubit" });
keyword_enum!(CouplingKind { Position => "position", Lowering => "lowering" });
keyword_enum!(RecordSource { Reference => "reference", Model => "model" });
keyword_enum!(OutputFormat { Csv => "csv", Json => "json" });

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,

    pub system_kind: SystemKind,
    pub dim: usize,
    pub hbar: f64,
    pub omega: f64,
    /// One coupling operator per noise channel.
    pub coupling: Vec<CouplingKind>,
    pub coupling_scale: Vec<f64>,

    /// Row-major `m x m` intensity matrix.
    pub kappa: Vec<C64>,
    pub observed: usize,

    pub upsilon: f64,
    pub sigma: f64,
    pub f: SignalCoupling,
    pub grid_min: f64,
    pub grid_max: f64,
    pub grid_points: usize,
    pub prior_mean: f64,
    pub prior_var: f64,

    pub dt: f64,
    pub t_final: f64,
    pub trajectories: usize,
    pub seed: u64,
    /// Worker threads; 0 lets the pool decide.
    pub workers: usize,
    pub source: RecordSource,
    pub record_every: usize,

    pub out_dir: PathBuf,
    pub format: OutputFormat,

    pub printed_drift: bool,
    pub dilation_steps: usize,
    pub ancilla_dim: usize,
    pub beta: Vec<f64>,
}

const KEYS: &[&str] = &[
    "mode",
    "system.kind",
    "system.dim",
    "system.hbar",
    "system.omega",
    "system.coupling",
    "system.coupling_scale",
    "noise.kappa",
    "noise.observed_channels",
    "signal.upsilon",
    "signal.sigma",
    "signal.f",
    "signal.grid.min",
    "signal.grid.max",
    "signal.grid.points",
    "signal.prior_mean",
    "signal.prior_var",
    "sim.dt",
    "sim.t_final",
    "sim.trajectories",
    "sim.seed",
    "sim.workers",
    "sim.source",
    "sim.record_every",
    "output.dir",
    "output.format",
    "example.printed_drift",
    "dilation.steps",
    "dilation.ancilla_dim",
    "mgf.beta",
];

/// Splits flat text into key/value pairs. Values may be wrapped in double quotes.
pub fn parse_flat(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError::Syntax { line: i + 1, reason: format!("expected `key = value`, got `{line}`") });
        };
        let key = k.trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(ConfigError::Syntax { line: i + 1, reason: format!("bad key `{key}`") });
        }
        let mut value = v.trim();
        if value.len() >= 2 && value.starts_with('"') && value.ends_with('"') {
            value = &value[1..value.len() - 1];
        }
        if out.insert(key.to_string(), value.to_string()).is_some() {
            return Err(ConfigError::Syntax { line: i + 1, reason: format!("duplicate key `{key}`") });
        }
    }
    Ok(out)
}

/// Reads a flat config file, or the `config` object of a JSON manifest.
pub fn load(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    if text.trim_start().starts_with('{') {
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| ConfigError::Manifest(e.to_string()))?;
        let obj = v
            .get("config")
            .and_then(|c| c.as_object())
            .ok_or_else(|| ConfigError::Manifest("no `config` object".into()))?;
        let mut out = BTreeMap::new();
        for (k, v) in obj {
            let s = v.as_str().ok_or_else(|| ConfigError::Manifest(format!("`{k}` is not a string")))?;
            out.insert(k.clone(), s.to_string());
        }
        return Ok(out);
    }
    parse_flat(&text)
}

fn invalid(key: &str, value: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.into(), value: value.into(), reason: reason.into() }
}

fn scalar<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value.trim().parse::<T>().map_err(|e| invalid(key, value, e.to_string()))
}

fn finite(key: &str, value: &str) -> Result<f64> {
    let x: f64 = scalar(key, value)?;
    if !x.is_finite() {
        return Err(invalid(key, value, "not finite"));
    }
    Ok(x)
}

fn list<T>(key: &str, value: &str, item: impl Fn(&str, &str) -> Result<T>) -> Result<Vec<T>> {
    value.split(',').map(|s| item(key, s.trim())).collect()
}

/// `(re,im)` pairs separated by commas; a bare number is a real entry.
pub fn parse_complex_list(key: &str, value: &str) -> Result<Vec<C64>> {
    let mut out = Vec::new();
    let mut rest = value.trim();
    while !rest.is_empty() {
        if let Some(body) = rest.strip_prefix('(') {
            let end = body.find(')').ok_or_else(|| invalid(key, value, "unclosed `(`"))?;
            let (re, im) = body[..end].split_once(',').ok_or_else(|| invalid(key, value, "expected `(re,im)`"))?;
            out.push(C64::new(finite(key, re.trim())?, finite(key, im.trim())?));
            rest = body[end + 1..].trim_start();
        } else {
            let end = rest.find(',').unwrap_or(rest.len());
            out.push(C64::new(finite(key, rest[..end].trim())?, 0.0));
            rest = &rest[end..];
        }
        rest = rest.strip_prefix(',').unwrap_or(rest).trim_start();
    }
    if out.is_empty() {
        return Err(invalid(key, value, "empty list"));
    }
    Ok(out)
}

fn format_complex(z: &[C64]) -> String {
    z.iter().map(|c| format!("({},{})", c.re, c.im)).collect::<Vec<_>>().join(",")
}

fn join<T: fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl Default for RunConfig {
    /// Linear-Gaussian oscillator example.
    fn default() -> Self {
        Self {
            mode: Mode::Normalized,
            system_kind: SystemKind::Oscillator,
            dim: 16,
            hbar: 2.0,
            omega: 1.0,
            coupling: vec![CouplingKind::Position],
            coupling_scale: vec![0.5],
            kappa: vec![C64::new(1.0, 0.0)],
            observed: 1,
            upsilon: 0.5,
            sigma: 0.5,
            f: SignalCoupling::Identity,
            grid_min: -4.0,
            grid_max: 4.0,
            grid_points: 129,
            prior_mean: 0.0,
            prior_var: 0.25,
            dt: 2.5e-3,
            t_final: 1.0,
            trajectories: 4,
            seed: 1,
            workers: 0,
            source: RecordSource::Model,
            record_every: 1,
            out_dir: PathBuf::from("out"),
            format: OutputFormat::Csv,
            printed_drift: false,
            dilation_steps: 3,
            ancilla_dim: 2,
            beta: vec![0.5],
        }
    }
}

impl RunConfig {
    /// Validates every key, then the cross-key constraints.
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        if let Some(k) = map.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(ConfigError::UnknownKey(k.clone()));
        }
        let mut c = Self::default();
        let mode = map.get("mode").ok_or(ConfigError::Missing("mode"))?;
        c.mode = scalar("mode", mode)?;
        for (k, v) in map {
            let (k, v) = (k.as_str(), v.as_str());
            match k {
                "mode" => {}
                "system.kind" => c.system_kind = scalar(k, v)?,
                "system.dim" => c.dim = scalar(k, v)?,
                "system.hbar" => c.hbar = finite(k, v)?,
                "system.omega" => c.omega = finite(k, v)?,
                "system.coupling" => c.coupling = list(k, v, |k, s| scalar(k, s))?,
                "system.coupling_scale" => c.coupling_scale = list(k, v, finite)?,
                "noise.kappa" => c.kappa = parse_complex_list(k, v)?,
                "noise.observed_channels" => c.observed = scalar(k, v)?,
                "signal.upsilon" => c.upsilon = finite(k, v)?,
                "signal.sigma" => c.sigma = finite(k, v)?,
                "signal.f" => {
                    c.f = match v {
                        "identity" => SignalCoupling::Identity,
                        "none" => SignalCoupling::None,
                        _ => SignalCoupling::Table(list(k, v, finite)?),
                    }
                }
                "signal.grid.min" => c.grid_min = finite(k, v)?,
                "signal.grid.max" => c.grid_max = finite(k, v)?,
                "signal.grid.points" => c.grid_points = scalar(k, v)?,
                "signal.prior_mean" => c.prior_mean = finite(k, v)?,
                "signal.prior_var" => c.prior_var = finite(k, v)?,
                "sim.dt" => c.dt = finite(k, v)?,
                "sim.t_final" => c.t_final = finite(k, v)?,
                "sim.trajectories" => c.trajectories = scalar(k, v)?,
                "sim.seed" => c.seed = scalar(k, v)?,
                "sim.workers" => c.workers = scalar(k, v)?,
                "sim.source" => c.source = scalar(k, v)?,
                "sim.record_every" => c.record_every = scalar(k, v)?,
                "output.dir" => c.out_dir = PathBuf::from(v),
                "output.format" => c.format = scalar(k, v)?,
                "example.printed_drift" => c.printed_drift = scalar(k, v)?,
                "dilation.steps" => c.dilation_steps = scalar(k, v)?,
                "dilation.ancilla_dim" => c.ancilla_dim = scalar(k, v)?,
                "mgf.beta" => c.beta = list(k, v, finite)?,
                _ => unreachable!("checked against KEYS"),
            }
        }
        if c.system_kind == SystemKind::Qubit && !map.contains_key("system.dim") {
            c.dim = 2;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn channels(&self) -> usize {
        (self.kappa.len() as f64).sqrt().round() as usize
    }

    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    pub fn has_signal(&self) -> bool {
        !(self.f == SignalCoupling::None && self.sigma == 0.0 && self.upsilon == 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |s: String| Err(ConfigError::Inconsistent(s));
        if self.system_kind == SystemKind::Qubit && self.dim != 2 {
            return bad(format!("a qubit has dim 2, got system.dim = {}", self.dim));
        }
        if self.dim < 2 {
            return bad(format!("system.dim must be at least 2, got {}", self.dim));
        }
        if self.hbar <= 0.0 || self.omega <= 0.0 {
            return bad("system.hbar and system.omega must be positive".into());
        }
        let m = self.channels();
        if m * m != self.kappa.len() {
            return bad(format!("noise.kappa has {} entries, not a square count", self.kappa.len()));
        }
        if self.coupling.len() != m || self.coupling_scale.len() != m {
            return bad(format!(
                "system.coupling and system.coupling_scale need one entry per channel ({m}), got {} and {}",
                self.coupling.len(),
                self.coupling_scale.len()
            ));
        }
        if self.observed == 0 || self.observed > m {
            return bad(format!("noise.observed_channels must lie in 1..={m}, got {}", self.observed));
        }
        if self.sigma < 0.0 {
            return bad("signal.sigma must be non-negative".into());
        }
        if self.grid_points < 3 || self.grid_min >= self.grid_max {
            return bad("signal.grid needs min < max and at least 3 points".into());
        }
        if let SignalCoupling::Table(v) = &self.f {
            if v.len() != self.grid_points {
                return bad(format!("signal.f table has {} values for {} grid points", v.len(), self.grid_points));
            }
        }
        if self.prior_var < 0.0 {
            return bad("signal.prior_var must be non-negative".into());
        }
        if !(self.dt > 0.0) || self.t_final < self.dt {
            return bad(format!("need 0 < sim.dt <= sim.t_final, got dt = {}, t_final = {}", self.dt, self.t_final));
        }
        if self.trajectories == 0 || self.record_every == 0 {
            return bad("sim.trajectories and sim.record_every must be positive".into());
        }
        if self.ancilla_dim < 2 || self.dilation_steps == 0 || self.dilation_steps > 6 {
            return bad("dilation needs ancilla_dim >= 2 and 1..=6 steps".into());
        }
        if self.beta.len() != self.observed {
            return bad(format!("mgf.beta needs {} entries, got {}", self.observed, self.beta.len()));
        }
        Ok(())
    }

    /// Every key with its resolved value; feeding this back reproduces the config.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let f = match &self.f {
            SignalCoupling::None => "none".to_string(),
            SignalCoupling::Identity => "identity".to_string(),
            SignalCoupling::Table(v) => join(v),
        };
        let pairs = [
            ("mode", self.mode.to_string()),
            ("system.kind", self.system_kind.to_string()),
            ("system.dim", self.dim.to_string()),
            ("system.hbar", self.hbar.to_string()),
            ("system.omega", self.omega.to_string()),
            ("system.coupling", join(&self.coupling)),
            ("system.coupling_scale", join(&self.coupling_scale)),
            ("noise.kappa", format_complex(&self.kappa)),
            ("noise.observed_channels", self.observed.to_string()),
            ("signal.upsilon", self.upsilon.to_string()),
            ("signal.sigma", self.sigma.to_string()),
            ("signal.f", f),
            ("signal.grid.min", self.grid_min.to_string()),
            ("signal.grid.max", self.grid_max.to_string()),
            ("signal.grid.points", self.grid_points.to_string()),
            ("signal.prior_mean", self.prior_mean.to_string()),
            ("signal.prior_var", self.prior_var.to_string()),
            ("sim.dt", self.dt.to_string()),
            ("sim.t_final", self.t_final.to_string()),
            ("sim.trajectories", self.trajectories.to_string()),
            ("sim.seed", self.seed.to_string()),
            ("sim.workers", self.workers.to_string()),
            ("sim.source", self.source.to_string()),
            ("sim.record_every", self.record_every.to_string()),
            ("output.dir", self.out_dir.display().to_string()),
            ("output.format", self.format.to_string()),
            ("example.printed_drift", self.printed_drift.to_string()),
            ("dilation.steps", self.dilation_steps.to_string()),
            ("dilation.ancilla_dim", self.ancilla_dim.to_string()),
            ("mgf.beta", join(&self.beta)),
        ];
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }
}
