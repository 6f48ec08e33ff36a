//! Monte Carlo experiments: risk curves, rate fits, `E_δ` frequency studies
//! and oracle comparisons, with CSV and structured-text reports.

pub mod config;
pub mod report;

pub use config::{
    log_factor, parse_config, parse_config_str, parse_estimator_config, parse_experiment_config,
    ExperimentConfig, ExperimentSpec, ModelDims, ModelRule, RuleBasis, TruncationRule,
};
pub use report::{
    fit_rate, fit_rate_points, read_risk_csv, write_edelta_csv, write_risk_csv, EdeltaRow,
    RateFit, RiskAggregate, RiskReport, RiskRow,
};

use crate::basis::sup_norm_constant;
use crate::error::{Error, Result};
use crate::estimator::PreparedEstimator;
use crate::quadrature::risk_rule;
use crate::sim::{generate, TruthFunctions};
use crate::sumspace::ComponentSpace;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Short content hash identifying a scenario, model rule and experiment.
pub fn scenario_hash(config: &ExperimentConfig) -> String {
    let text = toml::to_string(config).unwrap_or_default();
    let digest = Sha256::digest(text.as_bytes());
    hex::encode(&digest[..8])
}

/// Everything fixed across replications at one sample size.
struct Stage {
    n: usize,
    dims: ModelDims,
    estimator: PreparedEstimator,
    oracle: Option<PreparedEstimator>,
}

/// Truth on the risk quadrature nodes, shared by all fits.
struct RiskGrid {
    points: DMatrix<f64>,
    f1: Vec<f64>,
}

impl RiskGrid {
    fn new(truth: &TruthFunctions) -> Self {
        let rule = risk_rule();
        Self {
            points: DMatrix::from_column_slice(rule.len(), 1, &rule.nodes),
            f1: rule.nodes.iter().map(|&x| truth.f1.eval(x)).collect(),
        }
    }

    /// `∫ (f1 - f̂)² dx` by the 2048-node Gauss-Legendre rule.
    fn risk(&self, beta: &[f64], w1: &ComponentSpace, offsets: &[f64]) -> f64 {
        let fitted = crate::estimator::evaluate_estimate(beta, w1, offsets, &self.points);
        risk_rule()
            .weights
            .iter()
            .zip(&self.f1)
            .zip(&fitted)
            .map(|((w, f), g)| w * (f - g).powi(2))
            .sum()
    }
}

/// Prepared state of a risk experiment, reusable for single replications.
pub struct RiskExperiment {
    config: ExperimentConfig,
    truth: TruthFunctions,
    hash: String,
    grid: RiskGrid,
    stages: Vec<Stage>,
}

impl RiskExperiment {
    /// Builds models for every `n`; fails before any simulation when a
    /// model has more than `n/2` parameters.
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let truth = config.scenario.truth()?;
        let f1_norm = truth.f1.l2_norm_sq().sqrt();
        let mut stages = Vec::new();
        for &n in &config.experiment.n_grid {
            let (est, dims) = config.estimator(n, f1_norm)?;
            if 2 * dims.d > n {
                return Err(Error::Config(format!(
                    "model rule gives d = {} parameters at n = {n}; at most n/2 are allowed",
                    dims.d
                )));
            }
            let estimator = PreparedEstimator::new(est)?;
            let oracle = if config.experiment.oracle {
                Some(estimator.oracle()?)
            } else {
                None
            };
            stages.push(Stage {
                n,
                dims,
                estimator,
                oracle,
            });
        }
        Ok(Self {
            config: config.clone(),
            grid: RiskGrid::new(&truth),
            truth,
            hash: scenario_hash(config),
            stages,
        })
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn truth(&self) -> &TruthFunctions {
        &self.truth
    }

    pub fn dims(&self) -> Vec<ModelDims> {
        self.stages.iter().map(|s| s.dims).collect()
    }

    fn stage(&self, n: usize) -> Result<&Stage> {
        self.stages
            .iter()
            .find(|s| s.n == n)
            .ok_or_else(|| Error::Config(format!("n = {n} is not on the grid")))
    }

    /// One replication at one sample size, computed on its own.
    pub fn replication(&self, n: usize, replication: u64) -> Result<RiskRow> {
        let stage = self.stage(n)?;
        let rep = generate(&self.config.scenario, &self.truth, n, replication)?;
        let fit = stage.estimator.fit(&rep.data)?;
        let risk = self.grid.risk(&fit.beta_w1, &fit.w1, &fit.w1_offsets);
        let oracle_risk = match &stage.oracle {
            Some(oracle) => {
                let ofit = oracle.fit(&rep.without_nuisance()?)?;
                self.grid.risk(&ofit.beta_w1, &ofit.w1, &ofit.w1_offsets)
            }
            None => f64::NAN,
        };
        Ok(RiskRow {
            scenario_hash: self.hash.clone(),
            base_seed: self.config.scenario.base_seed,
            n,
            replication,
            risk,
            oracle_risk,
            edelta: fit.edelta_holds,
            truncated: fit.truncated,
            rho_hat: fit.empirical_rho,
        })
    }

    pub fn run_n(&self, n: usize, replications: usize) -> Result<Vec<RiskRow>> {
        let mut rows = (0..replications as u64)
            .into_par_iter()
            .map(|r| self.replication(n, r))
            .collect::<Result<Vec<_>>>()?;
        rows.sort_by_key(|r| r.replication);
        Ok(rows)
    }

    pub fn run(&self) -> Result<RiskReport> {
        let mut rows = Vec::new();
        for stage in &self.stages {
            log::info!("n = {}: d = {}, dim W1 = {}", stage.n, stage.dims.d, stage.dims.dim_w1);
            rows.extend(self.run_n(stage.n, self.config.experiment.replications)?);
        }
        Ok(RiskReport::from_rows(self.hash.clone(), rows, self.dims()))
    }
}

/// Generate, fit and score every `(n, replication)` of the experiment.
pub fn run_risk_experiment(config: &ExperimentConfig) -> Result<RiskReport> {
    RiskExperiment::new(config)?.run()
}

/// `E_δ` failure frequencies over the experiment's `n` grid, using the
/// model rule's dimensions at each `n` (no `d ≤ n/2` restriction).
pub fn run_edelta_study(config: &ExperimentConfig) -> Result<Vec<EdeltaRow>> {
    config.validate()?;
    let reps = config.experiment.edelta_replications;
    let delta = config.experiment.delta;
    let mut rows = Vec::new();
    for &n in &config.experiment.n_grid {
        let (est, dims) = config.estimator(n, 1.0)?;
        let law = est.design_law.clone();
        let phi = phi_of(&est.model);
        let estimator = PreparedEstimator::new(est)?;
        let failures = (0..reps as u64)
            .into_par_iter()
            .map(|r| {
                let mut rng = ChaCha8Rng::seed_from_u64(config.scenario.base_seed.wrapping_add(r));
                rng.set_stream(n as u64);
                let x = law.sample(n, config.scenario.q, &mut rng)?;
                let design = estimator.design(&x)?;
                let (holds, _) = estimator.edelta(&design)?;
                Ok(usize::from(!holds))
            })
            .collect::<Result<Vec<usize>>>()?
            .into_iter()
            .sum();
        rows.push(EdeltaRow::new(n, dims.d, reps, failures, delta, phi));
    }
    Ok(rows)
}

/// Largest block sup-norm constant of the model, with `c = 1`.
fn phi_of(model: &crate::sumspace::SumspaceModel) -> f64 {
    std::iter::once(model.v1())
        .chain(model.v2())
        .map(|b| sup_norm_constant(&b.system(), 1.0))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleComparison {
    pub n: usize,
    pub replications: usize,
    pub mean_risk: f64,
    pub mean_oracle_risk: f64,
    /// Ratio of mean risks.
    pub ratio: f64,
    /// Mean of replication-level ratios with a 95% normal interval.
    pub mean_replication_ratio: f64,
    pub ratio_ci_low: f64,
    pub ratio_ci_high: f64,
    pub standard_error: f64,
    pub oracle_standard_error: f64,
}

pub fn run_oracle_comparison(config: &ExperimentConfig, n: usize, replications: usize) -> Result<OracleComparison> {
    let mut config = config.clone();
    config.experiment.n_grid = vec![n];
    config.experiment.oracle = true;
    let rows = RiskExperiment::new(&config)?.run_n(n, replications)?;
    Ok(oracle_comparison_from_rows(n, &rows))
}

pub fn oracle_comparison_from_rows(n: usize, rows: &[RiskRow]) -> OracleComparison {
    let risks: Vec<f64> = rows.iter().map(|r| r.risk).collect();
    let oracle: Vec<f64> = rows.iter().map(|r| r.oracle_risk).collect();
    let ratios: Vec<f64> = rows.iter().map(|r| r.risk / r.oracle_risk).collect();
    let (m, se) = report::mean_se(&risks);
    let (mo, seo) = report::mean_se(&oracle);
    let (mr, ser) = report::mean_se(&ratios);
    OracleComparison {
        n,
        replications: rows.len(),
        mean_risk: m,
        mean_oracle_risk: mo,
        ratio: m / mo,
        mean_replication_ratio: mr,
        ratio_ci_low: mr - 1.96 * ser,
        ratio_ci_high: mr + 1.96 * ser,
        standard_error: se,
        oracle_standard_error: seo,
    }
}
