//! JSON experiment configuration: parsing, validation and the canonical
//! echo written next to every result.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use spinglass_core::cascades::CascadeSampler;
use spinglass_core::free_energy_mc::{DisorderSampler, McConfig};
use spinglass_core::variational::OptimizerConfig;
use spinglass_core::{BaseMeasure, DiscreteMeasure, MixtureFunction, PdeConfig};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: String, source: serde_json::Error },
    #[error("{location}{field}: {message}")]
    Invalid {
        location: String,
        field: String,
        message: String,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomsSpec {
    pub atoms: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<(f64, f64)>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerSpec {
    #[default]
    Monomial,
    Cholesky,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CascadeSpec {
    #[default]
    StickBreaking,
    PoissonProduct,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloSpec {
    /// System sizes; `compare` and `fe-mc` run one estimate per entry.
    #[serde(rename = "N")]
    pub n: Vec<usize>,
    pub replications: usize,
    pub branching: usize,
    pub sampler: SamplerSpec,
    pub cascade: CascadeSpec,
    /// Samples per identity in `cascade-check`.
    pub cascade_samples: usize,
}

impl Default for MonteCarloSpec {
    fn default() -> Self {
        Self {
            n: vec![4, 8, 12],
            replications: 200,
            branching: 100,
            sampler: SamplerSpec::Monomial,
            cascade: CascadeSpec::StickBreaking,
            cascade_samples: 2000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSpec {
    pub start: f64,
    pub step: f64,
    pub count: usize,
}

impl AxisSpec {
    pub fn values(&self) -> Vec<f64> {
        (0..self.count)
            .map(|i| self.start + self.step * i as f64)
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub s: AxisSpec,
    pub h: AxisSpec,
    /// Residuals above this are flagged; defaults to five grid steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
}

fn one() -> f64 {
    1.0
}

fn dirac_zero() -> AtomsSpec {
    AtomsSpec {
        atoms: vec![(0.0, 1.0)],
    }
}

/// The configuration file as written by the user.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    /// Pairs [p, β_p²].
    pub mixture: Vec<(u32, f64)>,
    pub base_measure: BaseSpec,
    #[serde(default = "dirac_zero")]
    pub mu: AtomsSpec,
    /// Measure and λ for `parisi-eval`; μ is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<AtomsSpec>,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default = "one")]
    pub t: f64,
    #[serde(default)]
    pub s: f64,
    #[serde(default)]
    pub h: f64,
    #[serde(default)]
    pub solver: PdeConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub monte_carlo: MonteCarloSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub seed: u64,
}

/// A validated configuration.
#[derive(Debug, Clone)]
pub struct Model {
    pub raw: RawConfig,
    pub xi: MixtureFunction,
    pub base: BaseMeasure,
    pub mu: DiscreteMeasure,
    pub nu: DiscreteMeasure,
    path: String,
    source: String,
}

/// 1-based line of the first occurrence of `"key"` in the source.
fn line_of(source: &str, key: &str) -> Option<usize> {
    let needle = format!("\"{key}\"");
    source
        .lines()
        .position(|line| line.contains(&needle))
        .map(|i| i + 1)
}

struct Validator<'a> {
    path: &'a str,
    source: &'a str,
}

impl Validator<'_> {
    fn invalid(&self, field: &str, message: impl Into<String>) -> ConfigError {
        let key = field.split('.').next().unwrap_or(field);
        let location = match line_of(self.source, key) {
            Some(line) => format!("{}:{line}: ", self.path),
            None => format!("{}: ", self.path),
        };
        ConfigError::Invalid {
            location,
            field: field.to_string(),
            message: message.into(),
        }
    }

    fn measure(&self, field: &str, atoms: &[(f64, f64)]) -> Result<DiscreteMeasure, ConfigError> {
        if atoms.is_empty() {
            return Err(self.invalid(field, "needs at least one atom"));
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(self.invalid(field, format!("weights sum to {total}, expected 1")));
        }
        DiscreteMeasure::new(atoms).map_err(|e| self.invalid(field, e.to_string()))
    }

    fn base(&self, spec: &BaseSpec) -> Result<BaseMeasure, ConfigError> {
        match (spec.preset.as_deref(), &spec.points) {
            (Some("ising"), None) => Ok(BaseMeasure::ising()),
            (Some(other), None) => Err(self.invalid(
                "base_measure.preset",
                format!("unknown preset {other:?}, expected \"ising\""),
            )),
            (None, Some(points)) => {
                let total: f64 = points.iter().map(|p| p.1).sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(self.invalid(
                        "base_measure.points",
                        format!("probabilities sum to {total}, expected 1"),
                    ));
                }
                BaseMeasure::new(points).map_err(|e| self.invalid("base_measure.points", e.to_string()))
            }
            _ => Err(self.invalid("base_measure", "give exactly one of \"preset\" and \"points\"")),
        }
    }
}

impl RawConfig {
    pub fn load(path: &Path) -> Result<(Self, String), ConfigError> {
        let display = path.display().to_string();
        let source = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: display.clone(),
            source,
        })?;
        let raw = serde_json::from_str(&source).map_err(|source| ConfigError::Parse {
            path: display,
            source,
        })?;
        Ok((raw, source))
    }

    pub fn validate(self, path: &str, source: &str) -> Result<Model, ConfigError> {
        let v = Validator { path, source };
        let xi = MixtureFunction::new(&self.mixture).map_err(|e| v.invalid("mixture", e.to_string()))?;
        let base = v.base(&self.base_measure)?;
        let mu = v.measure("mu.atoms", &self.mu.atoms)?;
        let nu = match &self.nu {
            Some(spec) => v.measure("nu.atoms", &spec.atoms)?,
            None => mu.clone(),
        };
        for (name, value) in [("t", self.t), ("s", self.s)] {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(v.invalid(name, format!("must be finite and >= 0, got {value}")));
            }
        }
        for (name, value) in [("h", self.h), ("lambda", self.lambda)] {
            if !value.is_finite() {
                return Err(v.invalid(name, format!("must be finite, got {value}")));
            }
        }
        self.solver
            .validate()
            .map_err(|e| v.invalid("solver", e.to_string()))?;
        self.optimizer
            .validate()
            .map_err(|e| v.invalid("optimizer", e.to_string()))?;
        let mc = &self.monte_carlo;
        if mc.n.is_empty() || mc.n.contains(&0) {
            return Err(v.invalid("monte_carlo.N", "needs at least one positive system size"));
        }
        if mc.replications < 2 {
            return Err(v.invalid("monte_carlo.replications", "must be at least 2"));
        }
        if mc.branching == 0 || mc.cascade_samples < 2 {
            return Err(v.invalid(
                "monte_carlo",
                "branching must be positive and cascade_samples at least 2",
            ));
        }
        if let Some(grid) = &self.grid {
            for (name, axis) in [("grid.s", &grid.s), ("grid.h", &grid.h)] {
                if axis.count < 3 || !(axis.step > 0.0) || axis.step > 0.05 {
                    return Err(v.invalid(name, "needs at least 3 points and a step in (0, 0.05]"));
                }
            }
            if !(grid.s.start > 0.0) {
                return Err(v.invalid("grid.s", "s values must be positive"));
            }
        }
        Ok(Model {
            raw: self,
            xi,
            base,
            mu,
            nu,
            path: path.to_string(),
            source: source.to_string(),
        })
    }
}

impl Model {
    /// An error about `field`, located in the source file.
    pub fn invalid(&self, field: &str, message: impl Into<String>) -> ConfigError {
        Validator {
            path: &self.path,
            source: &self.source,
        }
        .invalid(field, message)
    }

    pub fn mc_config(&self) -> McConfig {
        let mc = &self.raw.monte_carlo;
        McConfig {
            replications: mc.replications,
            branching: mc.branching,
            seed: self.raw.seed,
            cascade: self.cascade_sampler(),
        }
    }

    pub fn cascade_sampler(&self) -> CascadeSampler {
        match self.raw.monte_carlo.cascade {
            CascadeSpec::StickBreaking => CascadeSampler::StickBreaking,
            CascadeSpec::PoissonProduct => CascadeSampler::PoissonProduct,
        }
    }

    pub fn disorder_sampler(&self) -> DisorderSampler {
        match self.raw.monte_carlo.sampler {
            SamplerSpec::Monomial => DisorderSampler::Monomial,
            SamplerSpec::Cholesky => DisorderSampler::Cholesky,
        }
    }

    /// Compact JSON of the effective configuration and its SHA-256.
    pub fn echo(&self) -> (String, String) {
        let json = serde_json::to_string(&self.raw).expect("configuration serializes");
        let hash = hex::encode(Sha256::digest(json.as_bytes()));
        (json, hash)
    }
}
