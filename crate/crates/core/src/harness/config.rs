//! Structured-text experiment files and the rule mapping `n` to model
//! dimensions.

use crate::basis::UnivariateBasis;
use crate::error::{Error, Result};
use crate::estimator::{CenteringMode, EstimatorConfig, Truncation};
use crate::linalg::RANK_TOLERANCE;
use crate::sim::ScenarioConfig;
use crate::sumspace::{Centering, ComponentSpace, IntegrationSpec, SumspaceModel};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Reads a structured-text file into any config type; unknown keys fail.
pub fn parse_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text)
}

pub fn parse_config_str<T: DeserializeOwned>(text: &str) -> Result<T> {
    Ok(toml::from_str(text)?)
}

pub fn parse_estimator_config(path: &Path) -> Result<EstimatorConfig> {
    let config: EstimatorConfig = parse_config(path)?;
    config.validate()?;
    Ok(config)
}

pub fn parse_experiment_config(path: &Path) -> Result<ExperimentConfig> {
    let config: ExperimentConfig = parse_config(path)?;
    config.validate()?;
    Ok(config)
}

/// Basis family the model rule builds all spaces from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RuleBasis {
    #[default]
    Trigonometric,
    Piecewise { degree: usize },
}

impl RuleBasis {
    /// Functions contributed per unit of resolution `m`.
    fn per_unit(&self) -> usize {
        match self {
            RuleBasis::Trigonometric => 2,
            RuleBasis::Piecewise { degree } => degree + 1,
        }
    }

    /// `φ²` for the system with the constant under the uniform law.
    fn phi_sq(&self) -> f64 {
        match self {
            RuleBasis::Trigonometric => 1.0,
            RuleBasis::Piecewise { degree } => (degree + 1) as f64,
        }
    }

    fn basis(&self, m: usize) -> Result<UnivariateBasis> {
        match self {
            RuleBasis::Trigonometric => Ok(UnivariateBasis::trigonometric(m, true)),
            RuleBasis::Piecewise { degree } => UnivariateBasis::piecewise(*degree, m, true),
        }
    }
}

fn default_true() -> bool {
    true
}

/// Maps a sample size to `(V1, V2j, W1)` resolutions.
///
/// Defaults: `dim W1 ≈ (K1² n/σ²)^{1/(2α1+1)}`, each `V2j` sized like the
/// analogous nuisance rate `(K2² n/σ²)^{1/(2α2+1)}`, and all `d_j` at
/// least `n / (4 φ² L(n))` with `L(n) = max(log⁴ n, 16)`. `V1` is never
/// smaller than `W1`. Explicit resolutions override the rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelRule {
    #[serde(default)]
    pub basis: RuleBasis,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v1_m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v2_m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w1_m: Option<usize>,
    /// Whether the first `V2` block carries the constant.
    #[serde(default = "default_true")]
    pub v2_constant: bool,
}

impl Default for ModelRule {
    fn default() -> Self {
        Self {
            basis: RuleBasis::Trigonometric,
            v1_m: None,
            v2_m: None,
            w1_m: None,
            v2_constant: true,
        }
    }
}

/// Resolutions and dimensions chosen for one sample size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    pub n: usize,
    pub m_v1: usize,
    pub m_v2: usize,
    pub m_w1: usize,
    pub d1: usize,
    pub d2: usize,
    pub d: usize,
    pub dim_w1: usize,
    /// `L(n) = max(log⁴ n, 16)`.
    pub log_factor: f64,
}

pub fn log_factor(n: usize) -> f64 {
    (n as f64).ln().powi(4).max(16.0)
}

impl ModelRule {
    pub fn dims(&self, scenario: &ScenarioConfig, n: usize) -> Result<ModelDims> {
        let per = self.basis.per_unit();
        let lf = log_factor(n);
        let floor_units = (n as f64 / (4.0 * self.basis.phi_sq() * lf) / per as f64).ceil() as usize;
        let rate_target = |k: f64, alpha: f64| -> Result<f64> {
            if scenario.sigma <= 0.0 {
                return Err(Error::Config(
                    "the default model rule needs sigma > 0; give explicit resolutions".into(),
                ));
            }
            Ok((k * k * n as f64 / (scenario.sigma * scenario.sigma)).powf(1.0 / (2.0 * alpha + 1.0)))
        };
        let m_w1 = match self.w1_m {
            Some(m) => m,
            None => ((rate_target(scenario.k1, scenario.alpha1)? / per as f64).round() as usize).max(1),
        };
        let m_v1 = match self.v1_m {
            Some(m) => m,
            None => match self.basis {
                RuleBasis::Trigonometric => m_w1.max(floor_units),
                // nested partitions keep W1 inside V1
                RuleBasis::Piecewise { .. } => m_w1 * floor_units.div_ceil(m_w1).max(1),
            },
        };
        let m_v2 = match self.v2_m {
            Some(m) => m,
            None => ((rate_target(scenario.k2, scenario.alpha2)? / per as f64).round() as usize)
                .max(floor_units)
                .max(1),
        };
        let model = self.build(scenario.q, m_v1, m_v2, m_w1)?;
        Ok(ModelDims {
            n,
            m_v1,
            m_v2,
            m_w1,
            d1: model.d1(),
            d2: model.d2(),
            d: model.d(),
            dim_w1: model.dim_w1(),
            log_factor: lf,
        })
    }

    /// `V1`, `W1` on covariate 0 (population-centered); one `V2` block per
    /// remaining covariate, the first carrying the constant when requested.
    pub fn build(&self, q: usize, m_v1: usize, m_v2: usize, m_w1: usize) -> Result<SumspaceModel> {
        let v1 = ComponentSpace::univariate(0, self.basis.basis(m_v1)?, Centering::Population);
        let w1 = ComponentSpace::univariate(0, self.basis.basis(m_w1)?, Centering::Population);
        let v2 = (1..q)
            .map(|j| {
                let centering = if j == 1 && self.v2_constant {
                    Centering::None
                } else {
                    Centering::Population
                };
                Ok(ComponentSpace::univariate(j, self.basis.basis(m_v2)?, centering))
            })
            .collect::<Result<Vec<_>>>()?;
        SumspaceModel::new(v1, v2, w1)
    }

    pub fn model(&self, scenario: &ScenarioConfig, n: usize) -> Result<(SumspaceModel, ModelDims)> {
        let dims = self.dims(scenario, n)?;
        Ok((self.build(scenario.q, dims.m_v1, dims.m_v2, dims.m_w1)?, dims))
    }
}

/// Truncation level rule for simulations.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum TruncationRule {
    /// `‖f1‖ · n^{1/4}`.
    #[default]
    Auto,
    Fixed(Truncation),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum TruncationRuleRepr {
    Text(String),
    Value(f64),
}

impl Serialize for TruncationRule {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            TruncationRule::Auto => TruncationRuleRepr::Text("auto".into()),
            TruncationRule::Fixed(Truncation::None) => TruncationRuleRepr::Text("none".into()),
            TruncationRule::Fixed(Truncation::Level(k)) => TruncationRuleRepr::Value(*k),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for TruncationRule {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        match TruncationRuleRepr::deserialize(d)? {
            TruncationRuleRepr::Text(t) if t == "auto" => Ok(TruncationRule::Auto),
            TruncationRuleRepr::Text(t) if t == "none" => Ok(TruncationRule::Fixed(Truncation::None)),
            TruncationRuleRepr::Text(t) => Err(D::Error::custom(format!(
                "k_n must be \"auto\", \"none\" or a positive number, got {t:?}"
            ))),
            TruncationRuleRepr::Value(k) if k > 0.0 && k.is_finite() => {
                Ok(TruncationRule::Fixed(Truncation::Level(k)))
            }
            TruncationRuleRepr::Value(k) => Err(D::Error::custom(format!("k_n must be positive, got {k}"))),
        }
    }
}

impl TruncationRule {
    pub fn resolve(&self, f1_norm: f64, n: usize) -> Truncation {
        match self {
            TruncationRule::Auto => Truncation::polynomial(f1_norm, n),
            TruncationRule::Fixed(t) => *t,
        }
    }
}

fn default_replications() -> usize {
    200
}

fn default_edelta_replications() -> usize {
    500
}

fn default_delta() -> f64 {
    0.5
}

fn default_tolerance() -> f64 {
    RANK_TOLERANCE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub n_grid: Vec<usize>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_edelta_replications")]
    pub edelta_replications: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub k_n: TruncationRule,
    #[serde(default)]
    pub centering_mode: CenteringMode,
    #[serde(default = "default_tolerance")]
    pub pseudoinverse_tolerance: f64,
    #[serde(default = "default_true")]
    pub oracle: bool,
}

impl ExperimentSpec {
    pub fn new(n_grid: Vec<usize>, replications: usize) -> Self {
        Self {
            n_grid,
            replications,
            edelta_replications: default_edelta_replications(),
            delta: default_delta(),
            k_n: TruncationRule::Auto,
            centering_mode: CenteringMode::Population,
            pseudoinverse_tolerance: default_tolerance(),
            oracle: true,
        }
    }
}

/// Everything a simulation run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub model_rule: ModelRule,
    pub experiment: ExperimentSpec,
    #[serde(default)]
    pub integration: IntegrationSpec,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        let grid = &self.experiment.n_grid;
        if grid.is_empty() {
            return Err(Error::Config("n_grid is empty".into()));
        }
        if grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("n_grid must be strictly increasing".into()));
        }
        if grid[0] == 0 {
            return Err(Error::Config("sample sizes must be positive".into()));
        }
        let delta = self.experiment.delta;
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Config(format!("delta must lie in (0, 1), got {delta}")));
        }
        Ok(())
    }

    /// Estimator configuration used at sample size `n`.
    pub fn estimator(&self, n: usize, f1_norm: f64) -> Result<(EstimatorConfig, ModelDims)> {
        let (model, dims) = self.model_rule.model(&self.scenario, n)?;
        Ok((
            EstimatorConfig {
                model,
                delta: self.experiment.delta,
                k_n: self.experiment.k_n.resolve(f1_norm, n),
                centering_mode: self.experiment.centering_mode,
                pseudoinverse_tolerance: self.experiment.pseudoinverse_tolerance,
                design_law: self.scenario.design.clone(),
                integration: self.integration,
            },
            dims,
        ))
    }
}
