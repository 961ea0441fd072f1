//! Experiment configuration: a TOML document with one section per block.
//!
//! ```toml
//! name = "invariance"
//! [model]
//! n = 64
//! rate = "constant"
//! gamma = 1.0
//! beta = 0.5
//! t_end = 0.1
//! [measure]
//! rho = 1.0
//! [ensemble]
//! replicas = 2000
//! seed = 7
//! workers = 4
//! ```

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::envelope::TargetProfile;
use crate::measures::{build_measure, solve_fugacity, MeasureError, ProductMeasure, DEFAULT_K_BUDGET};
use crate::params::{ModelParams, ParamsError};
use crate::rate::{RateError, RateFunction};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Rate(#[from] RateError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub n: usize,
    /// Rate-function label, e.g. `constant`, `linear`, `capped:3`, `table:0;1;1.5`.
    #[serde(default = "default_rate")]
    pub rate: String,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Macroscopic time horizon.
    #[serde(default)]
    pub t_end: f64,
}

fn default_rate() -> String {
    "constant".into()
}

fn default_beta() -> f64 {
    0.5
}

/// Exactly one of `rho` and `alpha`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureBlock {
    pub rho: Option<f64>,
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleBlock {
    pub replicas: usize,
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvelopeBlock {
    pub epsilon: f64,
    pub kappa: f64,
    /// `flat`, `sine:<amplitude>` or `file:<path to profile csv>`.
    pub target: String,
    /// Lattice sizes of an entropy scan.
    pub sizes: Vec<usize>,
    /// Tube widths of an entropy scan.
    pub epsilons: Vec<f64>,
    /// Product-measure draws per scan cell.
    pub samples: u64,
    pub max_attempts: u64,
}

impl Default for EnvelopeBlock {
    fn default() -> Self {
        Self {
            epsilon: 0.5,
            kappa: 1.0,
            target: "flat".into(),
            sizes: vec![32, 64, 128],
            epsilons: vec![0.5],
            samples: 100_000,
            max_attempts: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrossoverBlock {
    pub betas: Vec<f64>,
    /// Spacing of field samples in macroscopic time.
    pub sample_every: f64,
    /// Lag of the autocorrelation estimate.
    pub lag: f64,
    /// Starting points per run for height increments.
    pub points: usize,
    pub cutoff: usize,
    pub solver_runs: usize,
}

impl Default for CrossoverBlock {
    fn default() -> Self {
        Self {
            betas: vec![0.5, 1.0],
            sample_every: 0.02,
            lag: 0.1,
            points: 32,
            cutoff: 64,
            solver_runs: 4000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpdeBlock {
    pub grid: usize,
    pub lambda: f64,
    pub a: f64,
    pub t_end: f64,
    pub epsilons: Vec<f64>,
    pub runs: usize,
    pub cutoff: usize,
    /// Grid sizes of the deterministic convergence study.
    pub convergence_grids: Vec<usize>,
    /// Coefficients and horizon of the shared-noise spectral check.
    pub ashe_a: f64,
    pub ashe_b: f64,
    pub ashe_time: f64,
}

impl Default for SpdeBlock {
    fn default() -> Self {
        Self {
            grid: 128,
            lambda: 1.0,
            a: 0.25,
            t_end: 0.05,
            epsilons: vec![0.2, 0.1, 0.05],
            runs: 200,
            cutoff: 64,
            convergence_grids: vec![16, 32, 64],
            ashe_a: 0.125,
            ashe_b: 1.0,
            ashe_time: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputBlock {
    pub dir: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub model: ModelBlock,
    #[serde(default)]
    pub measure: MeasureBlock,
    pub ensemble: EnsembleBlock,
    #[serde(default)]
    pub envelope: EnvelopeBlock,
    #[serde(default)]
    pub crossover: CrossoverBlock,
    #[serde(default)]
    pub spde: SpdeBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

fn positive(name: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be positive and finite, got {v}")))
    }
}

impl ExperimentConfig {
    /// Parses and validates.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serialisable")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let rate = self.rate()?;
        match (self.measure.rho, self.measure.alpha) {
            (Some(rho), None) => {
                if !(rho.is_finite() && rho >= 0.0) {
                    return Err(invalid(format!("rho must be finite and non-negative, got {rho}")));
                }
            }
            (None, Some(alpha)) => {
                if !(alpha.is_finite() && alpha >= 0.0) {
                    return Err(invalid(format!("alpha must be finite and non-negative, got {alpha}")));
                }
            }
            _ => return Err(invalid("measure needs exactly one of rho and alpha")),
        }
        ModelParams::new(self.model.n, self.model.gamma, self.model.beta, 0.0, rate)?;
        if !(self.model.t_end.is_finite() && self.model.t_end >= 0.0) {
            return Err(invalid(format!("t_end must be finite and non-negative, got {}", self.model.t_end)));
        }
        if self.model.n > 1 << 20 {
            return Err(invalid("n is larger than 2^20"));
        }
        let e = &self.ensemble;
        if e.replicas == 0 || e.replicas > 100_000_000 {
            return Err(invalid(format!("replicas must be in 1..=1e8, got {}", e.replicas)));
        }
        if e.workers == 0 || e.workers > 1024 {
            return Err(invalid(format!("workers must be in 1..=1024, got {}", e.workers)));
        }
        let env = &self.envelope;
        positive("envelope.epsilon", env.epsilon)?;
        if !(env.kappa.is_finite() && env.kappa >= 0.0) {
            return Err(invalid("envelope.kappa must be finite and non-negative"));
        }
        for &eps in &env.epsilons {
            positive("envelope.epsilons", eps)?;
        }
        if env.sizes.iter().any(|&n| !(2..=1 << 16).contains(&n)) {
            return Err(invalid("envelope.sizes must lie in 2..=65536"));
        }
        if env.max_attempts == 0 {
            return Err(invalid("envelope.max_attempts must be positive"));
        }
        parse_target(&env.target)?;
        let c = &self.crossover;
        if c.betas.iter().any(|b| !(0.5..=1.0).contains(b)) {
            return Err(invalid("crossover.betas must lie in [1/2, 1]"));
        }
        positive("crossover.sample_every", c.sample_every)?;
        positive("crossover.lag", c.lag)?;
        if c.lag_steps() == 0 {
            return Err(invalid("crossover.lag is shorter than crossover.sample_every"));
        }
        if c.cutoff == 0 || c.cutoff > 4096 || c.points == 0 || c.points > 1 << 16 {
            return Err(invalid("crossover.cutoff and crossover.points must be in range"));
        }
        if c.solver_runs < 2 || c.solver_runs > 10_000_000 {
            return Err(invalid("crossover.solver_runs must be in 2..=1e7"));
        }
        let s = &self.spde;
        if !(4..=1 << 14).contains(&s.grid) || s.convergence_grids.iter().any(|m| !(4..=1 << 12).contains(m)) {
            return Err(invalid("spde grids must lie in 4..=16384"));
        }
        positive("spde.a", s.a)?;
        positive("spde.t_end", s.t_end)?;
        positive("spde.ashe_a", s.ashe_a)?;
        positive("spde.ashe_time", s.ashe_time)?;
        if !(s.lambda.is_finite() && s.ashe_b.is_finite() && s.ashe_b >= 0.0) {
            return Err(invalid("spde.lambda and spde.ashe_b must be finite"));
        }
        for &eps in &s.epsilons {
            if !(eps.is_finite() && eps.abs() < 1.0) {
                return Err(invalid("spde.epsilons must lie in (-1, 1)"));
            }
        }
        if s.runs < 2 || s.cutoff == 0 || s.cutoff > 4096 {
            return Err(invalid("spde.runs must be at least 2 and spde.cutoff in 1..=4096"));
        }
        Ok(())
    }

    pub fn rate(&self) -> Result<RateFunction, ConfigError> {
        Ok(RateFunction::parse_label(&self.model.rate)?)
    }

    /// The single-site marginal of the invariant measure.
    pub fn measure(&self) -> Result<ProductMeasure, ConfigError> {
        let rate = self.rate()?;
        Ok(match (self.measure.rho, self.measure.alpha) {
            (Some(rho), _) => solve_fugacity(&rate, rho, 1e-13)?,
            (None, Some(alpha)) => build_measure(&rate, alpha, DEFAULT_K_BUDGET)?,
            (None, None) => return Err(invalid("measure needs exactly one of rho and alpha")),
        })
    }

    /// Model parameters with the density of the configured measure.
    pub fn params(&self) -> Result<ModelParams, ConfigError> {
        let rho = match self.measure.rho {
            Some(rho) => rho,
            None => self.measure()?.mean_rho,
        };
        Ok(ModelParams::new(
            self.model.n,
            self.model.gamma,
            self.model.beta,
            rho,
            self.rate()?,
        )?)
    }

    pub fn target(&self) -> Result<TargetProfile, ConfigError> {
        match parse_target(&self.envelope.target)? {
            Target::Flat => Ok(TargetProfile::flat()),
            Target::Sine(amp) => TargetProfile::from_fn(256, |x| amp * (std::f64::consts::TAU * x).sin())
                .map_err(|e| invalid(e.to_string())),
            Target::File(path) => {
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| invalid(format!("cannot read target profile {path}: {e}")))?;
                crate::io::parse_profile(&text)
                    .map(|(_, p)| p)
                    .map_err(|e| invalid(format!("target profile {path}: {e}")))
            }
        }
    }

    /// SHA-256 of the canonical JSON form, ignoring the worker count and
    /// output location (neither affects results).
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.ensemble.workers = 0;
        canonical.output.dir = None;
        let json = serde_json::to_string(&canonical).expect("config is always serialisable");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

impl CrossoverBlock {
    pub fn lag_steps(&self) -> usize {
        (self.lag / self.sample_every).round() as usize
    }
}

enum Target {
    Flat,
    Sine(f64),
    File(String),
}

fn parse_target(s: &str) -> Result<Target, ConfigError> {
    let s = s.trim();
    if s == "flat" {
        return Ok(Target::Flat);
    }
    if let Some(amp) = s.strip_prefix("sine:") {
        let amp: f64 = amp
            .trim()
            .parse()
            .map_err(|_| invalid(format!("bad sine amplitude in target '{s}'")))?;
        if !amp.is_finite() {
            return Err(invalid("sine amplitude must be finite"));
        }
        return Ok(Target::Sine(amp));
    }
    if let Some(path) = s.strip_prefix("file:") {
        return Ok(Target::File(path.trim().to_string()));
    }
    Err(invalid(format!("unknown target '{s}'")))
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
name = "invariance"
[model]
n = 64
gamma = 1.0
t_end = 0.1
[measure]
rho = 1.0
[ensemble]
replicas = 10
seed = 3
"#;

    #[test]
    fn parses_with_defaults() {
        let c = ExperimentConfig::from_toml(BASE).unwrap();
        assert_eq!(c.model.rate, "constant");
        assert_eq!(c.model.beta, 0.5);
        assert_eq!(c.ensemble.workers, 1);
        assert_eq!(c.envelope, EnvelopeBlock::default());
        assert!((c.measure().unwrap().alpha - 0.5).abs() < 1e-12);
        assert_eq!(c.params().unwrap().n, 64);
        let again = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn hash_ignores_workers_only() {
        let c = ExperimentConfig::from_toml(BASE).unwrap();
        let mut w = c.clone();
        w.ensemble.workers = 4;
        w.output.dir = Some("elsewhere".into());
        assert_eq!(c.hash(), w.hash());
        let mut s = c.clone();
        s.ensemble.seed = 4;
        assert_ne!(c.hash(), s.hash());
        assert_eq!(c.hash().len(), 64);
    }

    #[test]
    fn rejects_invalid_configs() {
        for bad in [
            BASE.replace("rho = 1.0", "rho = 1.0\nalpha = 0.5"),
            BASE.replace("rho = 1.0", ""),
            BASE.replace("n = 64", "n = 1"),
            BASE.replace("gamma = 1.0", "gamma = -1.0"),
            BASE.replace("replicas = 10", "replicas = 0"),
            BASE.replace("seed = 3", "seed = 3\nworkers = 0"),
            BASE.replace("t_end = 0.1", "t_end = 0.1\nrate = \"bogus\""),
            BASE.replace("[model]", "[model]\ncolour = 1"),
            format!("{BASE}\n[envelope]\ntarget = \"wiggly\""),
            format!("{BASE}\n[crossover]\nbetas = [0.3]"),
            "not toml at all [".to_string(),
        ] {
            assert!(ExperimentConfig::from_toml(&bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn alpha_block_sets_density() {
        let c = ExperimentConfig::from_toml(&BASE.replace("rho = 1.0", "alpha = 0.5")).unwrap();
        assert!((c.params().unwrap().rho - 1.0).abs() < 1e-9);
        let t = ExperimentConfig::from_toml(&format!("{BASE}\n[envelope]\ntarget = \"sine:0.25\""))
            .unwrap()
            .target()
            .unwrap();
        assert!((t.eval(0.25) - 0.25).abs() < 1e-12);
    }
}
