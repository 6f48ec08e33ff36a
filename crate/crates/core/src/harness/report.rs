//! Per-replication rows, aggregates, the log-log rate fit and CSV output.

use super::config::ModelDims;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// One `(n, replication)` outcome. `oracle_risk` is NaN when the oracle
/// was not run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskRow {
    pub scenario_hash: String,
    pub base_seed: u64,
    pub n: usize,
    pub replication: u64,
    pub risk: f64,
    pub oracle_risk: f64,
    pub edelta: bool,
    pub truncated: bool,
    pub rho_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskAggregate {
    pub n: usize,
    pub replications: usize,
    pub mean_risk: f64,
    pub standard_error: f64,
    pub oracle_mean_risk: f64,
    pub oracle_standard_error: f64,
    pub truncated: usize,
    pub edelta_failures: usize,
    pub mean_rho_hat: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RiskReport {
    pub scenario_hash: String,
    pub rows: Vec<RiskRow>,
    pub aggregates: Vec<RiskAggregate>,
    pub dims: Vec<ModelDims>,
}

/// Sample mean and `sd/√m`.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let m = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / m;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

impl RiskReport {
    pub fn from_rows(scenario_hash: String, mut rows: Vec<RiskRow>, dims: Vec<ModelDims>) -> Self {
        rows.sort_by(|a, b| (a.n, a.replication).cmp(&(b.n, b.replication)));
        let aggregates = aggregate(&rows);
        Self {
            scenario_hash,
            rows,
            aggregates,
            dims,
        }
    }

    pub fn aggregate(&self, n: usize) -> Option<&RiskAggregate> {
        self.aggregates.iter().find(|a| a.n == n)
    }
}

pub fn aggregate(rows: &[RiskRow]) -> Vec<RiskAggregate> {
    let mut by_n: BTreeMap<usize, Vec<&RiskRow>> = BTreeMap::new();
    for r in rows {
        by_n.entry(r.n).or_default().push(r);
    }
    by_n.into_iter()
        .map(|(n, group)| {
            let risks: Vec<f64> = group.iter().map(|r| r.risk).collect();
            let oracle: Vec<f64> = group.iter().map(|r| r.oracle_risk).collect();
            let (mean_risk, standard_error) = mean_se(&risks);
            let (oracle_mean_risk, oracle_standard_error) = mean_se(&oracle);
            RiskAggregate {
                n,
                replications: group.len(),
                mean_risk,
                standard_error,
                oracle_mean_risk,
                oracle_standard_error,
                truncated: group.iter().filter(|r| r.truncated).count(),
                edelta_failures: group.iter().filter(|r| !r.edelta).count(),
                mean_rho_hat: group.iter().map(|r| r.rho_hat).sum::<f64>() / group.len() as f64,
            }
        })
        .collect()
}

pub fn write_risk_csv(rows: &[RiskRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_risk_csv(path: &Path) -> Result<Vec<RiskRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Least-squares line through `(log n, log mean risk)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theoretical_slope: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deviation: Option<f64>,
}

/// Fits the rate from `(n, mean risk)` pairs; `alpha1` adds the
/// theoretical slope `-2α1/(2α1+1)`.
pub fn fit_rate_points(points: &[(usize, f64)], alpha1: Option<f64>) -> Result<RateFit> {
    if points.len() < 4 {
        return Err(Error::Config(format!(
            "rate fit needs at least 4 sample sizes, got {}",
            points.len()
        )));
    }
    if let Some(&(n, value)) = points.iter().find(|(_, r)| !(*r > 0.0)) {
        return Err(Error::NonPositiveRisk { n, value });
    }
    let xs: Vec<f64> = points.iter().map(|(n, _)| (*n as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, r)| r.ln()).collect();
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    let theoretical_slope = alpha1.map(|a| -2.0 * a / (2.0 * a + 1.0));
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
        points: points.len(),
        theoretical_slope,
        deviation: theoretical_slope.map(|t| slope - t),
    })
}

pub fn fit_rate(report: &RiskReport, alpha1: Option<f64>) -> Result<RateFit> {
    let points: Vec<(usize, f64)> = report.aggregates.iter().map(|a| (a.n, a.mean_risk)).collect();
    fit_rate_points(&points, alpha1)
}

/// `E_δ` failure frequency at one `(n, d)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdeltaRow {
    pub n: usize,
    pub d: usize,
    pub replications: usize,
    pub failures: usize,
    pub frequency: f64,
    /// Wilson 95% interval for the failure probability.
    pub band_low: f64,
    pub band_high: f64,
    pub delta: f64,
    pub phi: f64,
    /// `n δ² / (φ² d)`, the exponent shape in the concentration bound.
    pub shape: f64,
}

impl EdeltaRow {
    pub fn new(n: usize, d: usize, replications: usize, failures: usize, delta: f64, phi: f64) -> Self {
        let (band_low, band_high) = wilson_interval(failures, replications, 1.96);
        Self {
            n,
            d,
            replications,
            failures,
            frequency: failures as f64 / replications as f64,
            band_low,
            band_high,
            delta,
            phi,
            shape: n as f64 * delta * delta / (phi * phi * d as f64),
        }
    }
}

pub fn wilson_interval(successes: usize, trials: usize, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let m = trials as f64;
    let p = successes as f64 / m;
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * m)) / (1.0 + z2 / m);
    let half = z * (p * (1.0 - p) / m + z2 / (4.0 * m * m)).sqrt() / (1.0 + z2 / m);
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// True when each frequency is no larger than the previous one up to
/// overlapping Wilson bands.
pub fn frequencies_non_increasing(rows: &[EdeltaRow]) -> bool {
    rows.windows(2).all(|w| w[1].band_low <= w[0].band_high)
}

pub fn write_edelta_csv(rows: &[EdeltaRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
