//! Run configuration shared by all subcommands, with a canonical TOML form.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use confbound::model::{ToyKind, BUILTIN_MODELS};
use confbound::{ConfidenceLevel, Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommandKind {
    Fit,
    Region,
    Bands,
    Geodesics,
    Bench,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Fit => "fit",
            CommandKind::Region => "region",
            CommandKind::Bands => "bands",
            CommandKind::Geodesics => "geodesics",
            CommandKind::Bench => "bench",
        }
    }
}

/// A confidence level as written by the user: `2sigma` or a raw `q`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Level {
    Sigma(f64),
    Q(f64),
}

impl Level {
    pub fn confidence(self) -> Result<ConfidenceLevel> {
        match self {
            Level::Sigma(s) => ConfidenceLevel::from_sigma(s),
            Level::Q(q) => ConfidenceLevel::new(q),
        }
    }

    /// File-name fragment, e.g. `1sigma` or `q0.95`.
    pub fn label(self) -> String {
        match self {
            Level::Sigma(s) => format!("{s}sigma"),
            Level::Q(q) => format!("q{q}"),
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Level::Sigma(s) => write!(f, "{s}sigma"),
            Level::Q(q) => write!(f, "{q}"),
        }
    }
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let c: ConfidenceLevel = s.parse()?;
        let t = s.trim();
        let is_sigma = t.ends_with("sigma") || t.ends_with('σ') || t.ends_with("sig");
        Ok(if is_sigma { Level::Sigma(c.sigma()) } else { Level::Q(c.q()) })
    }
}

impl From<Level> for String {
    fn from(l: Level) -> String {
        l.to_string()
    }
}

impl TryFrom<String> for Level {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Parses a comma-separated level list such as `1sigma,2sigma` or `0.9,0.95`.
pub fn parse_levels(s: &str) -> Result<Vec<Level>> {
    let levels = s
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(str::parse)
        .collect::<Result<Vec<Level>>>()?;
    if levels.is_empty() {
        return Err(Error::Input("no confidence level given".into()));
    }
    Ok(levels)
}

/// Parses `1e-7`, a comma list, or a decade range `1e-5:1e-14`.
pub fn parse_rtols(s: &str) -> Result<Vec<f64>> {
    let num = |p: &str| -> Result<f64> {
        let v: f64 = p.trim().parse().map_err(|_| Error::Parse(format!("bad tolerance '{p}'")))?;
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::Input(format!("tolerance {v} not in (0, 1)")));
        }
        Ok(v)
    };
    let mut out = Vec::new();
    for part in s.split(',').filter(|p| !p.trim().is_empty()) {
        match part.split_once(':') {
            Some((a, b)) => {
                let (a, b) = (num(a)?, num(b)?);
                let decades = (b / a).log10();
                let steps = decades.abs().round() as usize;
                if (decades.abs() - steps as f64).abs() > 1e-9 || steps == 0 {
                    return Err(Error::Input(format!("range {part} does not span a whole number of decades")));
                }
                let dir = decades.signum();
                out.extend((0..=steps).map(|i| {
                    let v = a * 10f64.powf(dir * i as f64);
                    format!("{v:.12e}").parse::<f64>().unwrap_or(v)
                }));
            }
            None => out.push(num(part)?),
        }
    }
    if out.is_empty() {
        return Err(Error::Input("no tolerance given".into()));
    }
    Ok(out)
}

/// Everything that determines one invocation's output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: CommandKind,
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<String>,
    pub levels: Vec<Level>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dof: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rtol: Vec<f64>,
    pub out: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slices: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ring_points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xmin: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xmax: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub grids: Vec<usize>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub assume_injective: bool,
}

pub const DEFAULT_RTOL: f64 = 1e-8;
pub const DEFAULT_BAND_POINTS: usize = 200;
pub const DEFAULT_GEODESICS: usize = 100;
pub const DEFAULT_SLICES: usize = 24;
pub const DEFAULT_RING_POINTS: usize = 64;

fn default_data(model: &str) -> Option<&'static str> {
    if ToyKind::from_name(model).is_some() {
        Some("builtin:toy")
    } else if model == "sir" {
        Some("builtin:boarding-school")
    } else {
        None
    }
}

impl RunConfig {
    pub fn new(command: CommandKind, model: impl Into<String>) -> Self {
        RunConfig {
            command,
            model: model.into(),
            data: None,
            levels: vec![Level::Sigma(1.0)],
            dof: None,
            rtol: Vec::new(),
            out: PathBuf::from("."),
            theta0: None,
            slices: None,
            ring_points: None,
            xmin: None,
            xmax: None,
            points: None,
            count: None,
            length: None,
            grids: Vec::new(),
            assume_injective: false,
        }
    }

    /// Rejects option combinations the command does not accept, then fills
    /// in defaults so that equal runs have equal canonical forms.
    pub fn normalize(mut self) -> Result<Self> {
        use CommandKind::*;
        let cmd = self.command;
        let reject = |set: bool, flag: &str, allowed: &[CommandKind]| -> Result<()> {
            if set && !allowed.contains(&cmd) {
                return Err(Error::Input(format!("--{flag} is not accepted by '{}'", cmd.name())));
            }
            Ok(())
        };
        reject(!self.rtol.is_empty(), "rtol", &[Region, Bands, Geodesics, Bench])?;
        reject(self.slices.is_some(), "slices", &[Region, Bands])?;
        reject(self.ring_points.is_some(), "ring-points", &[Region, Bands])?;
        reject(self.xmin.is_some(), "xmin", &[Bands])?;
        reject(self.xmax.is_some(), "xmax", &[Bands])?;
        reject(self.points.is_some(), "points", &[Bands])?;
        reject(self.count.is_some(), "count", &[Geodesics])?;
        reject(self.length.is_some(), "length", &[Geodesics])?;
        reject(!self.grids.is_empty(), "grid", &[Bench])?;
        reject(self.assume_injective, "assume-injective", &[Bands])?;

        if self.model.trim().is_empty() {
            return Err(Error::Input("--model is required".into()));
        }
        let is_file = std::path::Path::new(&self.model).exists();
        if !is_file && !BUILTIN_MODELS.contains(&self.model.as_str()) {
            return Err(Error::Input(format!(
                "unknown model '{}' (built-ins: {}; or a model file path)",
                self.model,
                BUILTIN_MODELS.join(", ")
            )));
        }
        if self.data.is_none() {
            match default_data(&self.model) {
                Some(d) => self.data = Some(d.to_string()),
                None => {
                    return Err(Error::Input(format!("model '{}' has no built-in dataset; pass --data", self.model)))
                }
            }
        }
        if self.levels.is_empty() {
            return Err(Error::Input("no confidence level given".into()));
        }
        for l in &self.levels {
            l.confidence()?;
        }
        if matches!(cmd, Geodesics | Bench) && self.levels.len() > 1 {
            return Err(Error::Input(format!("'{}' takes a single level", cmd.name())));
        }
        if self.dof == Some(0) {
            return Err(Error::Input("--dof must be at least 1".into()));
        }
        if let Some(t) = &self.theta0 {
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::Input("--theta0 must be finite".into()));
            }
        }
        if self.rtol.iter().any(|r| !(*r > 0.0 && *r < 1.0)) {
            return Err(Error::Input("tolerances must lie in (0, 1)".into()));
        }
        match cmd {
            Fit => {}
            Bench => {
                if self.rtol.is_empty() && self.grids.is_empty() {
                    self.rtol = parse_rtols("1e-5:1e-14")?;
                }
                if self.grids.iter().any(|&h| h < 2) {
                    return Err(Error::Input("grid resolutions must be at least 2".into()));
                }
            }
            _ => {
                if self.rtol.len() > 1 {
                    return Err(Error::Input(format!("'{}' takes a single --rtol; ranges are for 'bench'", cmd.name())));
                }
                if self.rtol.is_empty() {
                    self.rtol.push(DEFAULT_RTOL);
                }
            }
        }
        if matches!(cmd, Region | Bands) {
            let slices = *self.slices.get_or_insert(DEFAULT_SLICES);
            let ring = *self.ring_points.get_or_insert(DEFAULT_RING_POINTS);
            if slices < 3 || ring < 8 {
                return Err(Error::Input("need at least 3 slices and 8 ring points".into()));
            }
        }
        if cmd == Bands {
            let n = *self.points.get_or_insert(DEFAULT_BAND_POINTS);
            if n < 2 {
                return Err(Error::Input("--points must be at least 2".into()));
            }
            if let (Some(a), Some(b)) = (self.xmin, self.xmax) {
                if !(a < b) {
                    return Err(Error::Input(format!("--xmin {a} must be below --xmax {b}")));
                }
            }
            if [self.xmin, self.xmax].iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::Input("--xmin/--xmax must be finite".into()));
            }
        }
        if cmd == Geodesics {
            if *self.count.get_or_insert(DEFAULT_GEODESICS) == 0 {
                return Err(Error::Input("--count must be positive".into()));
            }
            if self.length.is_some_and(|l| !(l > 0.0 && l.is_finite())) {
                return Err(Error::Input("--length must be positive".into()));
            }
        }
        Ok(self)
    }

    pub fn to_canonical(&self) -> String {
        toml::to_string(self).expect("run configuration serializes")
    }

    /// Parses and normalizes a configuration file.
    pub fn from_canonical(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        c.normalize()
    }

    pub fn rtol(&self) -> f64 {
        self.rtol.first().copied().unwrap_or(DEFAULT_RTOL)
    }
}
