//! Experiment configuration: one JSON document per run, no environment
//! variables. Unknown fields are rejected so typos surface as config errors.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::Value;

use chapball_core::ball_model::{BallModel, InertiaOperator};
use chapball_core::sde_engine::{IntegratorConfig, NoiseConfig, Scheme};

#[derive(Debug)]
pub enum ConfigError {
    Io(String),
    Parse(String),
    Invalid(String),
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Io(msg) => write!(f, "config i/o error: {msg}"),
            ConfigError::Parse(msg) => write!(f, "config parse error: {msg}"),
            ConfigError::Invalid(msg) => write!(f, "invalid config: {msg}"),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InertiaSpec {
    Identity,
    Masses { masses: Vec<f64> },
    Matrix { path: PathBuf },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    #[serde(default = "default_true")]
    pub angular: bool,
    #[serde(default = "default_true")]
    pub translational: bool,
    #[serde(default = "default_true")]
    pub include_h0_drift: bool,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            angular: true,
            translational: true,
            include_h0_drift: true,
        }
    }
}

fn default_true() -> bool {
    true
}

fn default_reorth() -> usize {
    100
}

fn default_paths() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSpec {
    pub h: f64,
    #[serde(default = "default_scheme")]
    pub scheme: String,
    #[serde(default = "default_reorth")]
    pub reorth_interval: usize,
    pub master_seed: u64,
    #[serde(default = "default_paths")]
    pub path_count: usize,
}

fn default_scheme() -> String {
    "heun_exp".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    pub inertia: InertiaSpec,
    #[serde(default)]
    pub noise: NoiseSpec,
    pub integrator: IntegratorSpec,
    #[serde(default)]
    pub experiment: Option<Value>,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<(Self, Vec<u8>), ConfigError> {
        let bytes = std::fs::read(path)
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        let config: ExperimentConfig = serde_json::from_slice(&bytes).map_err(|e| {
            ConfigError::Parse(format!("{} at line {}, column {}", e, e.line(), e.column()))
        })?;
        config.validate()?;
        Ok((config, bytes))
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.n < 3 {
            return Err(ConfigError::Invalid(format!(
                "field `n`: must be at least 3, got {}",
                self.n
            )));
        }
        if !(self.integrator.h > 0.0) {
            return Err(ConfigError::Invalid(
                "field `integrator.h`: must be positive".into(),
            ));
        }
        if self.integrator.path_count == 0 {
            return Err(ConfigError::Invalid(
                "field `integrator.path_count`: must be at least 1".into(),
            ));
        }
        match self.integrator.scheme.as_str() {
            "heun_exp" | "euler_exp" => {}
            other => {
                return Err(ConfigError::Invalid(format!(
                    "field `integrator.scheme`: unknown scheme `{other}` (expected heun_exp or euler_exp)"
                )))
            }
        }
        if let InertiaSpec::Masses { masses } = &self.inertia {
            if masses.len() != self.n {
                return Err(ConfigError::Invalid(format!(
                    "field `inertia.masses`: expected {} entries, got {}",
                    self.n,
                    masses.len()
                )));
            }
        }
        if let InertiaSpec::Matrix { path } = &self.inertia {
            if !path.exists() {
                return Err(ConfigError::Invalid(format!(
                    "field `inertia.path`: file {} does not exist",
                    path.display()
                )));
            }
        }
        Ok(())
    }

    pub fn build_model(&self) -> Result<BallModel, ConfigError> {
        let inertia = match &self.inertia {
            InertiaSpec::Identity => InertiaOperator::identity(self.n),
            InertiaSpec::Masses { masses } => InertiaOperator::physical(self.n, masses)
                .map_err(|e| ConfigError::Invalid(e.to_string()))?,
            InertiaSpec::Matrix { path } => {
                let bytes = std::fs::read(path)
                    .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
                let rows: Vec<Vec<f64>> = serde_json::from_slice(&bytes)
                    .map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))?;
                let m = self.n * (self.n - 1) / 2;
                if rows.len() != m || rows.iter().any(|r| r.len() != m) {
                    return Err(ConfigError::Invalid(format!(
                        "inertia matrix must be {m}×{m}"
                    )));
                }
                let gram = nalgebra::DMatrix::from_fn(m, m, |i, j| rows[i][j]);
                InertiaOperator::from_gram(gram)
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?
            }
        };
        BallModel::new(self.n, inertia).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn noise_config(&self) -> NoiseConfig {
        NoiseConfig {
            angular: self.noise.angular,
            translational: self.noise.translational,
            include_h0_drift: self.noise.include_h0_drift,
        }
    }

    pub fn integrator_config(&self, seed_override: Option<u64>) -> IntegratorConfig {
        IntegratorConfig {
            h: self.integrator.h,
            scheme: if self.integrator.scheme == "euler_exp" {
                Scheme::EulerExp
            } else {
                Scheme::HeunExp
            },
            reorth_interval: self.integrator.reorth_interval,
            master_seed: seed_override.unwrap_or(self.integrator.master_seed),
            path_count: self.integrator.path_count,
        }
    }

    /// Parses the subcommand-specific experiment block.
    pub fn experiment_params<T: for<'de> Deserialize<'de> + Default>(
        &self,
    ) -> Result<T, ConfigError> {
        match &self.experiment {
            None => Ok(T::default()),
            Some(value) => serde_json::from_value(value.clone())
                .map_err(|e| ConfigError::Parse(format!("field `experiment`: {e}"))),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct VerifyParams {
    /// Group dimensions to sweep; defaults to the configured n only.
    pub dims: Option<Vec<usize>>,
    /// Random inertias per dimension; 0 means use the configured inertia.
    #[serde(default)]
    pub inertia_samples: usize,
    #[serde(default = "default_point_samples")]
    pub point_samples: usize,
}

fn default_point_samples() -> usize {
    50
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateParams {
    pub t_final: f64,
    #[serde(default)]
    pub snapshot_stride: usize,
    #[serde(default = "default_initial")]
    pub initial: String,
}

fn default_initial() -> String {
    "identity".into()
}

impl Default for SimulateParams {
    fn default() -> Self {
        Self {
            t_final: 1.0,
            snapshot_stride: 0,
            initial: default_initial(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorParams {
    #[serde(default = "default_functions")]
    pub functions: usize,
    #[serde(default = "default_points")]
    pub points: usize,
    /// Fractional bias budget on top of 3·stderr.
    #[serde(default = "default_bias")]
    pub bias_budget: f64,
}

fn default_functions() -> usize {
    5
}

fn default_points() -> usize {
    3
}

fn default_bias() -> f64 {
    0.1
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self {
            functions: default_functions(),
            points: default_points(),
            bias_budget: default_bias(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphereParams {
    #[serde(default = "default_t_final")]
    pub t_final: f64,
    #[serde(default = "default_grid")]
    pub grid: usize,
    /// Optional direction; defaults to the vertical axis e_n.
    pub direction: Option<Vec<f64>>,
    #[serde(default = "default_bias")]
    pub bias_budget: f64,
}

fn default_t_final() -> f64 {
    2.0
}

fn default_grid() -> usize {
    20
}

impl Default for SphereParams {
    fn default() -> Self {
        Self {
            t_final: default_t_final(),
            grid: default_grid(),
            direction: None,
            bias_budget: default_bias(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct HamParams {
    #[serde(default = "default_ham_samples")]
    pub inertia_samples: usize,
}

fn default_ham_samples() -> usize {
    10
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftParams {
    #[serde(default = "default_point_samples")]
    pub samples: usize,
}

impl Default for DriftParams {
    fn default() -> Self {
        Self {
            samples: default_point_samples(),
        }
    }
}
