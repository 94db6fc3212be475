//! Flat `key = value` experiment configuration.
//!
//! Lines are `key = value`; blank lines and lines starting with `#` are ignored. List values are
//! comma separated. Unknown keys are rejected so typos cannot silently fall back to defaults.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::Serialize;
use sha2::{Digest, Sha256};
use tslab_core::bandit::{BanditConfig, GaussianPrior};
use tslab_core::linalg::{random_rotation, spd_from_eigenvalues};
use tslab_core::rng::{stream, StreamRole};
use tslab_core::{DVector, SpdMatrix};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    Gauss,
    SmoothedLaplace,
}

impl FromStr for NoiseKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "gauss" | "gaussian" => Ok(NoiseKind::Gauss),
            "smoothed-laplace" => Ok(NoiseKind::SmoothedLaplace),
            other => Err(format!("unknown noise model `{other}` (expected gauss or smoothed-laplace)")),
        }
    }
}

impl NoiseKind {
    fn as_str(self) -> &'static str {
        match self {
            NoiseKind::Gauss => "gauss",
            NoiseKind::SmoothedLaplace => "smoothed-laplace",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub d: usize,
    pub r: f64,
    pub sigma: f64,
    /// Eigenvalues of `Σ0`; a single value is broadcast to all `d` coordinates.
    pub prior_eigenvalues: Vec<f64>,
    /// Seed of a random eigenbasis for `Σ0`; the standard basis when absent.
    pub prior_rotation_seed: Option<u64>,
    /// `μ0`; zero when empty.
    pub prior_mean: Vec<f64>,
    pub horizon: usize,
    pub replicates: usize,
    pub seed: u64,
    pub instances: usize,
    pub mala_steps: Option<usize>,
    pub mala_step_size: Option<f64>,
    pub noise: NoiseKind,
    pub noise_weight: f64,
    pub noise_eps: f64,
    pub scales: Vec<f64>,
    pub theorem3_c: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            d: 2,
            r: 1.0,
            sigma: 1.0,
            prior_eigenvalues: vec![1.0],
            prior_rotation_seed: None,
            prior_mean: Vec::new(),
            horizon: 256,
            replicates: 200,
            seed: 0,
            instances: 1000,
            mala_steps: None,
            mala_step_size: None,
            noise: NoiseKind::Gauss,
            noise_weight: 1.0,
            noise_eps: 0.1,
            scales: vec![1.0, 16.0],
            theorem3_c: tslab_core::bounds::DEFAULT_THEOREM3_C,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, raw: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    raw.parse::<T>().map_err(|e| CliError::Config(format!("`{key}`: cannot parse `{raw}`: {e}")))
}

fn parse_list(key: &str, raw: &str) -> Result<Vec<f64>, CliError> {
    if raw.is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',').map(|v| parse_value::<f64>(key, v.trim())).collect()
}

fn parse_optional<T: FromStr>(key: &str, raw: &str) -> Result<Option<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    if raw.is_empty() || raw == "auto" || raw == "none" {
        Ok(None)
    } else {
        parse_value(key, raw).map(Some)
    }
}

fn fmt_list(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

fn fmt_optional<T: std::fmt::Debug>(x: &Option<T>) -> String {
    x.as_ref().map_or_else(|| "none".to_owned(), |v| format!("{v:?}"))
}

impl ExperimentConfig {
    /// Applies `key = value` pairs from `text` on top of `self`.
    pub fn merge_text(mut self, text: &str) -> Result<Self, CliError> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`, got `{line}`", lineno + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(self)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        Self::default().merge_text(text)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), CliError> {
        match key {
            "d" => self.d = parse_value(key, v)?,
            "r" => self.r = parse_value(key, v)?,
            "sigma" => self.sigma = parse_value(key, v)?,
            "prior_eigenvalues" => self.prior_eigenvalues = parse_list(key, v)?,
            "prior_rotation_seed" => self.prior_rotation_seed = parse_optional(key, v)?,
            "prior_mean" => self.prior_mean = parse_list(key, v)?,
            "horizon" => self.horizon = parse_value(key, v)?,
            "replicates" => self.replicates = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            "instances" => self.instances = parse_value(key, v)?,
            "mala_steps" => self.mala_steps = parse_optional(key, v)?,
            "mala_step_size" => self.mala_step_size = parse_optional(key, v)?,
            "noise" => self.noise = v.parse().map_err(CliError::Config)?,
            "noise_weight" => self.noise_weight = parse_value(key, v)?,
            "noise_eps" => self.noise_eps = parse_value(key, v)?,
            "scales" => self.scales = parse_list(key, v)?,
            "theorem3_c" => self.theorem3_c = parse_value(key, v)?,
            other => return Err(CliError::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Canonical text form: every key, fixed order, shortest round-trip float formatting.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        line("d", self.d.to_string());
        line("r", format!("{:?}", self.r));
        line("sigma", format!("{:?}", self.sigma));
        line("prior_eigenvalues", fmt_list(&self.prior_eigenvalues));
        line("prior_rotation_seed", fmt_optional(&self.prior_rotation_seed));
        line("prior_mean", fmt_list(&self.prior_mean));
        line("horizon", self.horizon.to_string());
        line("replicates", self.replicates.to_string());
        line("seed", self.seed.to_string());
        line("instances", self.instances.to_string());
        line("mala_steps", fmt_optional(&self.mala_steps));
        line("mala_step_size", fmt_optional(&self.mala_step_size));
        line("noise", self.noise.as_str().to_owned());
        line("noise_weight", format!("{:?}", self.noise_weight));
        line("noise_eps", format!("{:?}", self.noise_eps));
        line("scales", fmt_list(&self.scales));
        line("theorem3_c", format!("{:?}", self.theorem3_c));
        out
    }

    /// SHA-256 of the canonical form, truncated to 16 hex digits.
    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(self.serialize().as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn eigenvalues(&self) -> Result<Vec<f64>, CliError> {
        match self.prior_eigenvalues.len() {
            1 => Ok(vec![self.prior_eigenvalues[0]; self.d]),
            n if n == self.d => Ok(self.prior_eigenvalues.clone()),
            n => Err(CliError::Config(format!("prior_eigenvalues has {n} entries, expected 1 or d = {}", self.d))),
        }
    }

    pub fn prior_cov(&self) -> Result<SpdMatrix, CliError> {
        if self.d == 0 {
            return Err(CliError::Config("d must be at least 1".into()));
        }
        let evals = self.eigenvalues()?;
        let rotation = self
            .prior_rotation_seed
            .map(|s| random_rotation(self.d, &mut stream(s, 0, StreamRole::Instance)));
        Ok(spd_from_eigenvalues(&evals, rotation.as_ref())?)
    }

    pub fn mean_vector(&self) -> Result<DVector<f64>, CliError> {
        match self.prior_mean.len() {
            0 => Ok(DVector::zeros(self.d)),
            n if n == self.d => Ok(DVector::from_column_slice(&self.prior_mean)),
            n => Err(CliError::Config(format!("prior_mean has {n} entries, expected d = {}", self.d))),
        }
    }

    pub fn has_prior_mean(&self) -> bool {
        self.prior_mean.iter().any(|&m| m != 0.0)
    }

    pub fn bandit(&self) -> Result<BanditConfig, CliError> {
        let prior = GaussianPrior::new(self.mean_vector()?, self.prior_cov()?)?;
        Ok(BanditConfig::new(self.r, self.sigma, prior)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_default() {
        let c = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::parse(&c.serialize()).unwrap(), c);
    }

    #[test]
    fn round_trip_custom() {
        let c = ExperimentConfig {
            d: 3,
            sigma: 0.1 + 0.2,
            prior_eigenvalues: vec![1e-8, 2.5, 1.0 / 3.0],
            prior_rotation_seed: Some(42),
            prior_mean: vec![0.1, -0.2, 0.0],
            mala_step_size: Some(0.05),
            noise: NoiseKind::SmoothedLaplace,
            scales: vec![0.25, 4.0],
            ..ExperimentConfig::default()
        };
        let back = ExperimentConfig::parse(&c.serialize()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.config_hash(), c.config_hash());
    }

    #[test]
    fn comments_and_whitespace() {
        let c = ExperimentConfig::parse("# note\n\n  d = 4 \nsigma=0.5\n").unwrap();
        assert_eq!(c.d, 4);
        assert_eq!(c.sigma, 0.5);
    }

    #[test]
    fn malformed_input() {
        assert!(ExperimentConfig::parse("d 4").is_err());
        assert!(ExperimentConfig::parse("dimension = 4").is_err());
        assert!(ExperimentConfig::parse("d = four").is_err());
        assert!(ExperimentConfig::parse("noise = cauchy").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.seed = 1;
        assert_ne!(a.config_hash(), b.config_hash());
        assert_eq!(a.config_hash().len(), 16);
    }

    #[test]
    fn prior_shapes() {
        let mut c = ExperimentConfig {
            d: 3,
            ..ExperimentConfig::default()
        };
        assert_eq!(c.prior_cov().unwrap().trace(), 3.0);
        c.prior_eigenvalues = vec![1.0, 2.0];
        assert!(c.prior_cov().is_err());
        c.prior_eigenvalues = vec![3.0, 2.0, 1.0];
        c.prior_rotation_seed = Some(7);
        assert!((c.prior_cov().unwrap().trace() - 6.0).abs() < 1e-12);
    }
}
