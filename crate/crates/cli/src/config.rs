//! JSON run configuration: the true system, how to sample it, and the
//! identification, surface-fit and evaluation settings.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use switchid_core::bilevel::{BilevelConfig, InitStrategy};
use switchid_core::convex::DEFAULT_TOL;
use switchid_core::{
    LambdaMode, ModeBook, ModeDynamics, MonomialBasis, Relaxation, SamplingScheme, SamplingSpec, SurfaceFitConfig,
    SurfaceSet, SwitchingSystemModel,
};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub system: SystemConfig,
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub identify: IdentifyConfig,
    #[serde(default)]
    pub surface: SurfaceConfig,
    #[serde(default)]
    pub evaluate: EvaluateConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    /// Degree of the monomial basis the mode matrices are written in.
    pub degree: usize,
    /// One `n × P` coefficient matrix per mode, row per state coordinate.
    pub modes: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    pub surfaces: Option<SurfacesConfig>,
    /// Sign code per mode; the canonical binary code when absent.
    #[serde(default)]
    pub modebook: Option<Vec<Vec<i8>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfacesConfig {
    pub degree: usize,
    pub coefficients: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    UniformBox,
    Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    pub scheme: SchemeKind,
    pub num_samples: usize,
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub lower: Option<Vec<f64>>,
    #[serde(default)]
    pub upper: Option<Vec<f64>>,
    #[serde(default)]
    pub initial_conditions: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub horizon: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitConfig {
    Identity,
    Random { seed: u64, scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdentifyConfig {
    pub modes: usize,
    pub degree: usize,
    pub eta: f64,
    pub relaxation: String,
    pub max_iters: usize,
    pub cost_tol: f64,
    pub init: InitConfig,
    pub lambda_mode: String,
    pub solver_tol: f64,
}

impl Default for IdentifyConfig {
    fn default() -> Self {
        let d = BilevelConfig::default();
        Self {
            modes: d.modes,
            degree: d.degree,
            eta: d.eta,
            relaxation: d.relaxation.as_str().to_string(),
            max_iters: d.max_iters,
            cost_tol: d.cost_tol,
            init: InitConfig::Identity,
            lambda_mode: d.lambda_mode.as_str().to_string(),
            solver_tol: d.solver_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurfaceConfig {
    pub degree: usize,
    pub epsilon: f64,
    pub beta: f64,
    pub eta: f64,
}

impl Default for SurfaceConfig {
    fn default() -> Self {
        let d = SurfaceFitConfig::default();
        Self {
            degree: d.degree,
            epsilon: d.epsilon,
            beta: d.beta,
            eta: d.eta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateConfig {
    pub test_samples: usize,
    /// Test-set seed; the sampling seed plus one when absent.
    pub test_seed: Option<u64>,
    pub rollouts: usize,
    /// Seed for rollout initial conditions; the sampling seed plus two when absent.
    pub rollout_seed: Option<u64>,
    pub dt: f64,
    pub horizon: f64,
    /// Box for rollout initial conditions; the sampling box when absent.
    pub rollout_lower: Option<Vec<f64>>,
    pub rollout_upper: Option<Vec<f64>>,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            test_samples: 2000,
            test_seed: None,
            rollouts: 12,
            rollout_seed: None,
            dt: 0.01,
            horizon: 10.0,
            rollout_lower: None,
            rollout_upper: None,
        }
    }
}

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub relaxation: Option<Relaxation>,
}

/// A parsed config together with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub config: Config,
    /// Hex SHA-256 of the config file bytes.
    pub sha256: String,
    pub seed: u64,
    /// `true` when neither the file nor the command line gave a seed.
    pub seed_defaulted: bool,
    pub relaxation: Relaxation,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl LoadedConfig {
    pub fn load(path: &Path, overrides: Overrides) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes, overrides).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn from_bytes(bytes: &[u8], overrides: Overrides) -> Result<Self> {
        let config: Config = serde_json::from_slice(bytes).map_err(|e| CliError::Config(e.to_string()))?;
        let seed = overrides.seed.or(config.sampling.seed);
        let relaxation = match overrides.relaxation {
            Some(r) => r,
            None => config
                .identify
                .relaxation
                .parse()
                .map_err(|_| field_error("identify.relaxation", "expected one of lp, sdp, exact"))?,
        };
        let loaded = Self {
            sha256: sha256_hex(bytes),
            seed: seed.unwrap_or(0),
            seed_defaulted: seed.is_none(),
            relaxation,
            config,
        };
        loaded.validate()?;
        Ok(loaded)
    }

    fn validate(&self) -> Result<()> {
        let model = self.true_model()?;
        self.sampling_spec(self.seed, self.config.sampling.num_samples)?
            .validate(model.n())
            .map_err(|e| field_error("sampling", e))?;
        self.bilevel()?;
        self.surface_fit()
            .validate()
            .map_err(|e| field_error("surface", e))?;
        let ev = &self.config.evaluate;
        if !(ev.dt > 0.0) || !(ev.horizon > 0.0) {
            return Err(field_error("evaluate", "dt and horizon must be positive"));
        }
        if ev.rollouts > 0 {
            self.rollout_box()?;
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.config.system.modes.first().map_or(0, Vec::len)
    }

    /// Ground-truth model, with surfaces when the config declares them.
    pub fn true_model(&self) -> Result<SwitchingSystemModel> {
        let sys = &self.config.system;
        if sys.modes.is_empty() {
            return Err(field_error("system.modes", "at least one mode is required"));
        }
        let n = self.n();
        let basis = MonomialBasis::new(n, sys.degree).map_err(|e| field_error("system.degree", e))?;
        let modes = sys
            .modes
            .iter()
            .enumerate()
            .map(|(j, rows)| {
                let mode = ModeDynamics::from_rows(rows).map_err(|e| field_error(&format!("system.modes[{j}]"), e))?;
                mode.check_basis(&basis)
                    .map_err(|e| field_error(&format!("system.modes[{j}]"), e))?;
                Ok(mode)
            })
            .collect::<Result<Vec<_>>>()?;
        let m = modes.len();
        let model = SwitchingSystemModel::new(basis, modes)?;
        let Some(surfaces) = &sys.surfaces else {
            if sys.modebook.is_some() {
                return Err(field_error("system.modebook", "a modebook needs system.surfaces"));
            }
            return Ok(model);
        };
        let sbasis = MonomialBasis::new(n, surfaces.degree).map_err(|e| field_error("system.surfaces.degree", e))?;
        let set = SurfaceSet::new(sbasis, surfaces.coefficients.clone())
            .map_err(|e| field_error("system.surfaces.coefficients", e))?;
        let book = match &sys.modebook {
            Some(codes) => ModeBook::new(codes.clone()).map_err(|e| field_error("system.modebook", e))?,
            None => ModeBook::canonical(m).map_err(|e| field_error("system.modes", e))?,
        };
        if book.num_modes() != m {
            return Err(field_error(
                "system.modebook",
                format!("{} codes for {m} modes", book.num_modes()),
            ));
        }
        model
            .with_surfaces(set, book)
            .map_err(|e| field_error("system.surfaces", e))
    }

    pub fn sampling_spec(&self, seed: u64, num_samples: usize) -> Result<SamplingSpec> {
        let s = &self.config.sampling;
        let scheme = match s.scheme {
            SchemeKind::UniformBox => SamplingScheme::UniformBox {
                lower: s.lower.clone().ok_or_else(|| field_error("sampling.lower", "required for uniform_box"))?,
                upper: s.upper.clone().ok_or_else(|| field_error("sampling.upper", "required for uniform_box"))?,
            },
            SchemeKind::Trajectory => SamplingScheme::Trajectory {
                initial_conditions: s
                    .initial_conditions
                    .clone()
                    .ok_or_else(|| field_error("sampling.initial_conditions", "required for trajectory"))?,
                dt: s.dt.ok_or_else(|| field_error("sampling.dt", "required for trajectory"))?,
                horizon: s.horizon.ok_or_else(|| field_error("sampling.horizon", "required for trajectory"))?,
            },
        };
        Ok(SamplingSpec {
            scheme,
            num_samples,
            noise_std: s.noise_std,
            seed,
        })
    }

    pub fn test_seed(&self) -> u64 {
        self.config.evaluate.test_seed.unwrap_or(self.seed.wrapping_add(1))
    }

    pub fn rollout_seed(&self) -> u64 {
        self.config.evaluate.rollout_seed.unwrap_or(self.seed.wrapping_add(2))
    }

    /// Box that rollout initial conditions are drawn from.
    pub fn rollout_box(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let ev = &self.config.evaluate;
        let s = &self.config.sampling;
        let lower = ev.rollout_lower.clone().or_else(|| s.lower.clone());
        let upper = ev.rollout_upper.clone().or_else(|| s.upper.clone());
        match (lower, upper) {
            (Some(lo), Some(hi)) if lo.len() == self.n() && hi.len() == self.n() => {
                if lo.iter().zip(&hi).any(|(a, b)| !(a <= b)) {
                    return Err(field_error("evaluate.rollout_lower", "lower bound above upper bound"));
                }
                Ok((lo, hi))
            }
            (Some(_), Some(_)) => Err(field_error("evaluate.rollout_lower", "box dimension differs from the state")),
            _ => Err(field_error(
                "evaluate.rollout_lower",
                "rollout box required when sampling has no box",
            )),
        }
    }

    pub fn bilevel(&self) -> Result<BilevelConfig> {
        let id = &self.config.identify;
        let lambda_mode: LambdaMode = id
            .lambda_mode
            .parse()
            .map_err(|_| field_error("identify.lambda_mode", "expected soft or hardened"))?;
        let init = match id.init {
            InitConfig::Identity => InitStrategy::Identity,
            InitConfig::Random { seed, scale } => InitStrategy::Random { seed, scale },
        };
        let cfg = BilevelConfig {
            modes: id.modes,
            degree: id.degree,
            eta: id.eta,
            relaxation: self.relaxation,
            max_iters: id.max_iters,
            cost_tol: id.cost_tol,
            init,
            lambda_mode,
            solver_tol: id.solver_tol,
            ..BilevelConfig::default()
        };
        cfg.validate().map_err(|e| field_error("identify", e))?;
        if init == InitStrategy::Identity && id.degree == 0 {
            return Err(field_error("identify.init", "identity initialisation needs degree ≥ 1"));
        }
        Ok(cfg)
    }

    pub fn surface_fit(&self) -> SurfaceFitConfig {
        let s = &self.config.surface;
        SurfaceFitConfig {
            degree: s.degree,
            epsilon: s.epsilon,
            beta: s.beta,
            eta: s.eta,
            solver_tol: DEFAULT_TOL,
        }
    }
}

fn field_error(field: &str, message: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("field `{field}`: {message}"))
}
