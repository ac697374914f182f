//! Run configuration and its flat `key = value` file format.
//!
//! ```text
//! # comments start with '#'
//! system = Linear
//! mode = pixel            # pixel | latent (default follows the system)
//! seeds = 0..9            # list `0,1,2` or inclusive range `a..b`
//! noise = 0, 0.1
//! locator = oracle:1      # oracle:<sigma_px> | advisor
//! advisor = auto          # auto | live | replay:<file> | record:<file>
//! out = results/linear
//! ```
//!
//! Every other key mirrors a field below; `RunConfig::to_kv` writes the
//! complete list.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dynamics::{SystemKind, SystemName, SystemSpec};
use crate::error::{Error, Result};
use crate::latent::Activation;
use crate::reason::DiscoveryConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Pixel,
    Latent,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pixel" => Ok(Mode::Pixel),
            "latent" => Ok(Mode::Latent),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Pixel => "pixel",
            Mode::Latent => "latent",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum LocatorChoice {
    Oracle { sigma_px: f64 },
    Advisor,
}

impl FromStr for LocatorChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "advisor" {
            return Ok(LocatorChoice::Advisor);
        }
        let sigma = match s.strip_prefix("oracle") {
            Some("") => 0.0,
            Some(rest) => rest
                .strip_prefix(':')
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::Config(format!("bad locator `{s}`, expected oracle:<sigma_px>")))?,
            None => return Err(Error::Config(format!("unknown locator `{s}`"))),
        };
        Ok(LocatorChoice::Oracle { sigma_px: sigma })
    }
}

impl fmt::Display for LocatorChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LocatorChoice::Oracle { sigma_px } => write!(f, "oracle:{sigma_px}"),
            LocatorChoice::Advisor => f.write_str("advisor"),
        }
    }
}

/// Where advisor answers come from. `Auto` uses the deterministic stack
/// and never contacts a model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "path")]
pub enum AdvisorMode {
    Auto,
    Live,
    Replay(PathBuf),
    Record(PathBuf),
}

impl FromStr for AdvisorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let path = |rest: &str| -> Result<PathBuf> {
            if rest.trim().is_empty() {
                return Err(Error::Config(format!("advisor mode `{s}` needs a file")));
            }
            Ok(PathBuf::from(rest.trim()))
        };
        match s {
            "auto" | "deterministic" => Ok(AdvisorMode::Auto),
            "live" => Ok(AdvisorMode::Live),
            _ => {
                if let Some(rest) = s.strip_prefix("replay:") {
                    Ok(AdvisorMode::Replay(path(rest)?))
                } else if let Some(rest) = s.strip_prefix("record:") {
                    Ok(AdvisorMode::Record(path(rest)?))
                } else {
                    Err(Error::Config(format!("unknown advisor mode `{s}`")))
                }
            }
        }
    }
}

impl fmt::Display for AdvisorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AdvisorMode::Auto => f.write_str("auto"),
            AdvisorMode::Live => f.write_str("live"),
            AdvisorMode::Replay(p) => write!(f, "replay:{}", p.display()),
            AdvisorMode::Record(p) => write!(f, "record:{}", p.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelOptions {
    pub resolution: usize,
    pub radius: f64,
    /// Frames to render; `None` keeps the system default.
    pub frames: Option<usize>,
    pub smoothing_iters: usize,
}

impl Default for PixelOptions {
    fn default() -> Self {
        Self {
            resolution: 500,
            radius: 10.0,
            frames: None,
            smoothing_iters: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentOptions {
    pub downscale: usize,
    pub frames: usize,
    /// Fixed latent dimension; `None` runs the dimension search.
    pub dim: Option<usize>,
    pub d_max: usize,
    pub max_trials: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub ae_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub finetune_epochs: usize,
    pub threshold_every: usize,
}

impl Default for LatentOptions {
    fn default() -> Self {
        Self {
            downscale: 32,
            frames: 300,
            dim: None,
            d_max: 6,
            max_trials: 6,
            hidden: vec![128, 64],
            activation: Activation::Tanh,
            ae_epochs: 500,
            batch_size: 64,
            lr: 1e-3,
            finetune_epochs: 100,
            threshold_every: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub system: SystemName,
    pub mode: Mode,
    pub seeds: Vec<u64>,
    pub noise: Vec<f64>,
    pub discovery: DiscoveryConfig,
    pub locator: LocatorChoice,
    pub advisor: AdvisorMode,
    pub out: Option<PathBuf>,
    pub pixel: PixelOptions,
    pub latent: LatentOptions,
}

fn default_mode(system: SystemName) -> Mode {
    match SystemSpec::new(system).kind {
        SystemKind::Ode => Mode::Pixel,
        SystemKind::Pde => Mode::Latent,
    }
}

impl RunConfig {
    pub fn new(system: SystemName) -> Self {
        Self {
            system,
            mode: default_mode(system),
            seeds: (0..10).collect(),
            noise: vec![0.0],
            discovery: DiscoveryConfig::default(),
            locator: LocatorChoice::Oracle { sigma_px: 1.0 },
            advisor: AdvisorMode::Auto,
            out: None,
            pixel: PixelOptions::default(),
            latent: LatentOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let spec = SystemSpec::new(self.system);
        if self.mode == Mode::Pixel && spec.kind != SystemKind::Ode {
            return bad(format!("{} is a field system; pixel mode needs a single-object system", self.system));
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.noise.is_empty() || self.noise.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("noise levels must be a non-empty list of finite values >= 0".into());
        }
        self.discovery.validate().map_err(|e| Error::Config(e.to_string()))?;
        if let LocatorChoice::Oracle { sigma_px } = self.locator {
            if !(sigma_px.is_finite() && sigma_px >= 0.0) {
                return bad(format!("oracle sigma must be >= 0, got {sigma_px}"));
            }
        }
        if self.locator == LocatorChoice::Advisor && self.advisor == AdvisorMode::Auto {
            return bad("the advisor locator needs advisor = live, replay:<file> or record:<file>".into());
        }
        let p = &self.pixel;
        if p.resolution < 16 || !(p.radius > 0.0) || p.smoothing_iters == 0 {
            return bad("pixel resolution must be >= 16, radius > 0 and smoothing_iters >= 1".into());
        }
        if p.frames.is_some_and(|f| f < 20) {
            return bad("at least 20 pixel frames are needed".into());
        }
        let l = &self.latent;
        if l.downscale < 2 || l.frames < 10 {
            return bad("latent downscale must be >= 2 and frames >= 10".into());
        }
        if l.dim == Some(0) || l.d_max == 0 || l.max_trials == 0 {
            return bad("latent dimensions and trial budget must be at least 1".into());
        }
        if l.hidden.iter().any(|w| *w == 0) || l.ae_epochs == 0 || l.batch_size == 0 || !(l.lr > 0.0) {
            return bad("latent network widths, epochs, batch size and learning rate must be positive".into());
        }
        if l.threshold_every == 0 {
            return bad("threshold_every must be at least 1".into());
        }
        Ok(())
    }

    /// Parses a config file; keys not given keep their defaults. `system`
    /// is required.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let system = pairs
            .iter()
            .find(|(k, _)| k == "system")
            .ok_or_else(|| Error::Config("missing `system`".into()))?
            .1
            .parse::<SystemName>()
            .map_err(|e| Error::Config(e.to_string()))?;
        let mut cfg = RunConfig::new(system);
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
        }
        fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
            v.split(',').filter(|s| !s.trim().is_empty()).map(|s| num(key, s)).collect()
        }
        fn optional<T: FromStr>(key: &str, v: &str) -> Result<Option<T>> {
            match v.trim() {
                "" | "auto" | "none" => Ok(None),
                s => num(key, s).map(Some),
            }
        }
        let v = value.trim();
        match key {
            "system" => {
                self.system = v.parse().map_err(|e: Error| Error::Config(e.to_string()))?;
            }
            "mode" => {
                self.mode = if v == "auto" { default_mode(self.system) } else { v.parse()? };
            }
            "seeds" => {
                self.seeds = match v.split_once("..") {
                    Some((a, b)) => {
                        let (a, b): (u64, u64) = (num(key, a)?, num(key, b)?);
                        if a > b {
                            return Err(Error::Config(format!("empty seed range `{v}`")));
                        }
                        (a..=b).collect()
                    }
                    None => list(key, v)?,
                }
            }
            "noise" => self.noise = list(key, v)?,
            "max_iters" => self.discovery.max_iters = num(key, v)?,
            "m" => self.discovery.m = num(key, v)?,
            "r_stop" => self.discovery.r_stop = num(key, v)?,
            "eta" => self.discovery.eta = num(key, v)?,
            "gamma" => self.discovery.gamma = num(key, v)?,
            "threshold" => self.discovery.threshold = num(key, v)?,
            "adaptive_eta" => self.discovery.adaptive_eta = num(key, v)?,
            "k_max" => self.discovery.caps.k_max = num(key, v)?,
            "max_power" => self.discovery.caps.max_power = num(key, v)?,
            "locator" => self.locator = v.parse()?,
            "advisor" => self.advisor = v.parse()?,
            "out" => self.out = (!v.is_empty()).then(|| PathBuf::from(v)),
            "resolution" => self.pixel.resolution = num(key, v)?,
            "radius" => self.pixel.radius = num(key, v)?,
            "frames" => self.pixel.frames = optional(key, v)?,
            "smoothing_iters" => self.pixel.smoothing_iters = num(key, v)?,
            "downscale" => self.latent.downscale = num(key, v)?,
            "latent_frames" => self.latent.frames = num(key, v)?,
            "latent_dim" => self.latent.dim = optional(key, v)?,
            "d_max" => self.latent.d_max = num(key, v)?,
            "max_trials" => self.latent.max_trials = num(key, v)?,
            "hidden" => self.latent.hidden = list(key, v)?,
            "activation" => {
                self.latent.activation = match v {
                    "tanh" => Activation::Tanh,
                    "sigmoid" => Activation::Sigmoid,
                    other => return Err(Error::Config(format!("unknown activation `{other}`"))),
                }
            }
            "ae_epochs" => self.latent.ae_epochs = num(key, v)?,
            "batch_size" => self.latent.batch_size = num(key, v)?,
            "lr" => self.latent.lr = num(key, v)?,
            "finetune_epochs" => self.latent.finetune_epochs = num(key, v)?,
            "threshold_every" => self.latent.threshold_every = num(key, v)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        let join = |xs: Vec<String>| xs.join(", ");
        let opt = |x: Option<usize>| x.map_or("auto".to_string(), |v| v.to_string());
        let d = &self.discovery;
        let activation = match self.latent.activation {
            Activation::Sigmoid => "sigmoid",
            _ => "tanh",
        };
        let lines = [
            ("system", self.system.to_string()),
            ("mode", self.mode.to_string()),
            ("seeds", join(self.seeds.iter().map(u64::to_string).collect())),
            ("noise", join(self.noise.iter().map(f64::to_string).collect())),
            ("max_iters", d.max_iters.to_string()),
            ("m", d.m.to_string()),
            ("r_stop", d.r_stop.to_string()),
            ("eta", d.eta.to_string()),
            ("gamma", d.gamma.to_string()),
            ("threshold", d.threshold.to_string()),
            ("adaptive_eta", d.adaptive_eta.to_string()),
            ("k_max", d.caps.k_max.to_string()),
            ("max_power", d.caps.max_power.to_string()),
            ("locator", self.locator.to_string()),
            ("advisor", self.advisor.to_string()),
            ("out", self.out.as_ref().map_or(String::new(), |p| p.display().to_string())),
            ("resolution", self.pixel.resolution.to_string()),
            ("radius", self.pixel.radius.to_string()),
            ("frames", opt(self.pixel.frames)),
            ("smoothing_iters", self.pixel.smoothing_iters.to_string()),
            ("downscale", self.latent.downscale.to_string()),
            ("latent_frames", self.latent.frames.to_string()),
            ("latent_dim", opt(self.latent.dim)),
            ("d_max", self.latent.d_max.to_string()),
            ("max_trials", self.latent.max_trials.to_string()),
            ("hidden", join(self.latent.hidden.iter().map(usize::to_string).collect())),
            ("activation", activation.to_string()),
            ("ae_epochs", self.latent.ae_epochs.to_string()),
            ("batch_size", self.latent.batch_size.to_string()),
            ("lr", self.latent.lr.to_string()),
            ("finetune_epochs", self.latent.finetune_epochs.to_string()),
            ("threshold_every", self.latent.threshold_every.to_string()),
        ];
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
