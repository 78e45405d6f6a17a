//! Run configuration: an optional config file overlaid by command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use dduio::microgrid::{self, DguParams};
use dduio::Tolerance;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Keys accepted in a config file. Every key is optional; flags win.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    #[serde(rename = "T")]
    pub t: Option<usize>,
    #[serde(rename = "Ts")]
    pub ts: Option<f64>,
    #[serde(rename = "tol-rank", alias = "tol_rank")]
    pub tol_rank: Option<f64>,
    #[serde(rename = "tol-schur", alias = "tol_schur")]
    pub tol_schur: Option<f64>,
    pub out: Option<PathBuf>,
    #[serde(flatten)]
    pub dgu: DguOverrides,
}

/// Microgrid parameters; the controller gains follow from `poles`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DguOverrides {
    #[serde(rename = "R_t")]
    pub r_t: Option<f64>,
    #[serde(rename = "L_t")]
    pub l_t: Option<f64>,
    #[serde(rename = "C_t")]
    pub c_t: Option<f64>,
    #[serde(rename = "V_ref")]
    pub v_ref: Option<f64>,
    #[serde(rename = "I_L0")]
    pub i_l0: Option<f64>,
    pub poles: Option<[f64; 3]>,
    pub disturbance_rel: Option<f64>,
}

impl DguOverrides {
    pub fn params(&self, ts: f64) -> dduio::Result<DguParams> {
        let base = DguParams::default();
        let mut params = DguParams::with_poles(
            self.r_t.unwrap_or(base.r_t),
            self.l_t.unwrap_or(base.l_t),
            self.c_t.unwrap_or(base.c_t),
            self.poles.unwrap_or(microgrid::DEFAULT_POLES),
            self.v_ref.unwrap_or(base.v_ref),
            self.i_l0.unwrap_or(base.i_l0),
            ts,
        )?;
        params.disturbance_rel = self.disturbance_rel.unwrap_or(base.disturbance_rel);
        params.validate()?;
        Ok(params)
    }
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// JSON object, or `key = value` lines with `#` comments.
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        if text.trim_start().starts_with('{') {
            return Ok(serde_json::from_str(text)?);
        }
        let mut map = Map::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("line {}: expected key = value", lineno + 1);
            };
            let (key, value) = (key.trim(), value.trim());
            let value = match serde_json::from_str::<Value>(value) {
                Ok(v @ Value::Number(_)) => v,
                _ if value.contains(',') => Value::Array(
                    value
                        .split(',')
                        .map(|v| serde_json::from_str::<Value>(v.trim()))
                        .collect::<Result<_, _>>()
                        .with_context(|| format!("line {}: expected a list of numbers", lineno + 1))?,
                ),
                _ => Value::String(value.trim_matches('"').to_string()),
            };
            if map.insert(key.to_string(), value).is_some() {
                bail!("line {}: duplicate key {key}", lineno + 1);
            }
        }
        Ok(serde_json::from_value(Value::Object(map))?)
    }
}

/// Flags shared by every command.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct CommonFlags {
    /// Random seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Trajectory length (number of samples).
    #[arg(long = "T", global = true)]
    pub t: Option<usize>,
    /// Sampling period of the microgrid model, in seconds.
    #[arg(long = "Ts", global = true)]
    pub ts: Option<f64>,
    /// Relative singular value cutoff, per matrix dimension.
    #[arg(long = "tol-rank", global = true)]
    pub tol_rank: Option<f64>,
    /// Margin below 1 required of the observer spectral radius.
    #[arg(long = "tol-schur", global = true)]
    pub tol_schur: Option<f64>,
    /// Output path (file or directory, depending on the command).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Config file, JSON or flat `key = value`.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

/// Shared settings after merging flags, config file and defaults.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub seed: u64,
    #[serde(rename = "T")]
    pub t: Option<usize>,
    #[serde(rename = "Ts")]
    pub ts: f64,
    pub tolerance: Tolerance,
    pub out: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub dgu: DguOverrides,
}

pub const DEFAULT_SEED: u64 = 0;

impl Resolved {
    pub fn new(flags: &CommonFlags, default_ts: f64) -> anyhow::Result<Self> {
        let file = match &flags.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        let base = Tolerance::default();
        let tolerance = Tolerance::new(
            flags.tol_rank.or(file.tol_rank).unwrap_or(base.rank_rel),
            base.abs_floor,
            flags.tol_schur.or(file.tol_schur).unwrap_or(base.schur_margin),
        )?;
        Ok(Self {
            seed: flags.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
            t: flags.t.or(file.t),
            ts: flags.ts.or(file.ts).unwrap_or(default_ts),
            tolerance,
            out: flags.out.clone().or(file.out),
            config: flags.config.clone(),
            dgu: file.dgu,
        })
    }

    pub fn microgrid(&self) -> dduio::Result<DguParams> {
        self.dgu.params(self.ts)
    }

    pub fn out_or_fail(&self) -> anyhow::Result<&Path> {
        match &self.out {
            Some(p) => Ok(p),
            None => bail!("--out is required for this command"),
        }
    }
}
