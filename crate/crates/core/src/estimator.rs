//! The two-stage least-squares estimator of the target component, its
//! truncated version, the oracle benchmark and the `E_δ` diagnostic.

use crate::backfit;
use crate::basis::{BasisKind, Domain, SUP_GRID_POINTS};
use crate::error::{Error, Result};
use crate::linalg::{self, pinv_solve, Whitening, RANK_TOLERANCE};
use crate::sumspace::{
    population_moments, BlockEvaluator, Centering, ComponentSpace, DesignLaw, IntegrationSpec,
    PopulationMoments, SumspaceModel,
};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Observations `(Y^i, X^i)`, one row of `x` per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Dimension(format!(
                "{} design rows but {} responses",
                x.nrows(),
                y.len()
            )));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Config("dataset contains missing or non-finite values".into()));
        }
        Ok(Self { x, y })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn q(&self) -> usize {
        self.x.ncols()
    }

    /// Same design, new responses.
    pub fn with_response(&self, y: DVector<f64>) -> Result<Self> {
        Self::new(self.x.clone(), y)
    }

    /// Reads a headed CSV whose last column is the response.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let width = reader.headers()?.len();
        if width < 2 {
            return Err(Error::Config("data needs at least one covariate and a response".into()));
        }
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            if record.len() != width {
                return Err(Error::Config(format!("row {} has {} fields", line + 1, record.len())));
            }
            for (j, field) in record.iter().enumerate() {
                let value: f64 = field.trim().parse().map_err(|_| {
                    Error::Config(format!("row {}, column {}: cannot parse {field:?}", line + 1, j + 1))
                })?;
                if j + 1 == width {
                    ys.push(value);
                } else {
                    xs.push(value);
                }
            }
        }
        let n = ys.len();
        Self::new(DMatrix::from_row_slice(n, width - 1, &xs), DVector::from_vec(ys))
    }

    pub fn to_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (1..=self.q()).map(|j| format!("x{j}")).collect();
        header.push("y".into());
        writer.write_record(&header)?;
        for i in 0..self.n() {
            let mut row: Vec<String> = (0..self.q()).map(|j| self.x[(i, j)].to_string()).collect();
            row.push(self.y[i].to_string());
            writer.write_record(&row)?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Truncation level `k_n`: either `"none"` or a positive number.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Truncation {
    #[default]
    None,
    Level(f64),
}

impl Truncation {
    pub fn level(&self) -> f64 {
        match self {
            Truncation::None => f64::INFINITY,
            Truncation::Level(k) => *k,
        }
    }

    /// `‖f1‖ · n^{1/4}`, the simulation default.
    pub fn polynomial(f1_norm: f64, n: usize) -> Self {
        Truncation::Level(f1_norm * (n as f64).powf(0.25))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum TruncationRepr {
    Text(String),
    Value(f64),
}

impl Serialize for Truncation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Truncation::None => TruncationRepr::Text("none".into()),
            Truncation::Level(k) => TruncationRepr::Value(*k),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Truncation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        match TruncationRepr::deserialize(d)? {
            TruncationRepr::Text(t) if t == "none" => Ok(Truncation::None),
            TruncationRepr::Text(t) => Err(D::Error::custom(format!(
                "k_n must be a positive number or \"none\", got {t:?}"
            ))),
            TruncationRepr::Value(k) if k > 0.0 && k.is_finite() => Ok(Truncation::Level(k)),
            TruncationRepr::Value(k) => Err(D::Error::custom(format!("k_n must be positive, got {k}"))),
        }
    }
}

/// How centered blocks are centered when fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CenteringMode {
    /// Subtract population means computed under the design law.
    #[default]
    Population,
    /// Subtract sample means of the design columns.
    Empirical,
}

fn default_delta() -> f64 {
    0.5
}

fn default_tolerance() -> f64 {
    RANK_TOLERANCE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    pub model: SumspaceModel,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub k_n: Truncation,
    #[serde(default)]
    pub centering_mode: CenteringMode,
    #[serde(default = "default_tolerance")]
    pub pseudoinverse_tolerance: f64,
    /// Law used for population means and the population Gram.
    #[serde(default)]
    pub design_law: DesignLaw,
    #[serde(default)]
    pub integration: IntegrationSpec,
}

impl EstimatorConfig {
    pub fn new(model: SumspaceModel) -> Self {
        Self {
            model,
            delta: default_delta(),
            k_n: Truncation::None,
            centering_mode: CenteringMode::Population,
            pseudoinverse_tolerance: default_tolerance(),
            design_law: DesignLaw::IndependentUniform,
            integration: IntegrationSpec::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if let Truncation::Level(k) = self.k_n {
            if !(k > 0.0) {
                return Err(Error::Config(format!("k_n must be positive, got {k}")));
            }
        }
        if !(self.pseudoinverse_tolerance >= 0.0) {
            return Err(Error::Config("pseudoinverse tolerance must be non-negative".into()));
        }
        if self.centering_mode == CenteringMode::Empirical
            && self.model.v1().is_centered()
            && !self.model.v2_has_constant()
        {
            return Err(Error::Config(
                "empirical centering needs a V2 block carrying the constant".into(),
            ));
        }
        Ok(())
    }
}

/// Output of one fit. Offsets are the constants subtracted from each raw
/// basis function, so the estimate can be evaluated anywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub beta_v1: Vec<f64>,
    pub beta_v2: Vec<f64>,
    /// Coefficients of the returned estimate; all zero when truncated.
    pub beta_w1: Vec<f64>,
    pub truncated: bool,
    pub edelta_holds: bool,
    /// `‖B_n - I‖_op`.
    pub gram_deviation: f64,
    /// Empirical minimal-angle cosine between the `V1` and `V2` columns
    /// (1 when either block is rank deficient, 0 when `V2` is empty).
    pub empirical_rho: f64,
    /// Grid estimate of `‖f̂_1‖_∞` before truncation.
    pub sup_estimate: f64,
    pub v1_offsets: Vec<f64>,
    pub w1_offsets: Vec<f64>,
    pub w1: ComponentSpace,
}

impl FitResult {
    /// `f̂_1*` at the given points (rows hold the `W1` block's covariates).
    pub fn evaluate(&self, points: &DMatrix<f64>) -> Vec<f64> {
        evaluate_estimate(&self.beta_w1, &self.w1, &self.w1_offsets, points)
    }

    /// `f̂_1*` on a univariate target at scalar points.
    pub fn evaluate_at(&self, xs: &[f64]) -> Vec<f64> {
        self.evaluate(&DMatrix::from_column_slice(xs.len(), 1, xs))
    }

    pub fn to_text(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

/// Linear combination of the (offset) `W1` system at each row of `points`.
pub fn evaluate_estimate(beta: &[f64], w1: &ComponentSpace, offsets: &[f64], points: &DMatrix<f64>) -> Vec<f64> {
    let local = ComponentSpace {
        covariates: (0..w1.covariates.len()).collect(),
        ..w1.clone()
    };
    let mut ev = BlockEvaluator::new(&local);
    let mut values = vec![0.0; ev.dim()];
    let mut row = vec![0.0; points.ncols()];
    (0..points.nrows())
        .map(|i| {
            for (j, r) in row.iter_mut().enumerate() {
                *r = points[(i, j)];
            }
            ev.eval_row(&row, &mut values);
            values
                .iter()
                .zip(offsets)
                .zip(beta)
                .map(|((v, a), b)| (v - a) * b)
                .sum()
        })
        .collect()
}

fn check_domain(space: &ComponentSpace, x: &DMatrix<f64>) -> Result<()> {
    if let Some(&c) = space.covariates.iter().find(|&&c| c >= x.ncols()) {
        return Err(Error::Dimension(format!(
            "model uses covariate {c} but the data have {} columns",
            x.ncols()
        )));
    }
    if matches!(space.basis.kind(), BasisKind::PiecewisePolynomial { .. }) {
        for &c in &space.covariates {
            if let Some(&value) = x.column(c).iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::OutOfDomain { covariate: c, value });
            }
        }
    }
    Ok(())
}

/// Raw (uncentered) design columns of one block.
pub fn raw_block(space: &ComponentSpace, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_domain(space, x)?;
    let mut ev = BlockEvaluator::new(space);
    let d = ev.dim();
    let n = x.nrows();
    let mut z = DMatrix::zeros(n, d);
    let mut row = vec![0.0; x.ncols()];
    let mut values = vec![0.0; d];
    for i in 0..n {
        for (j, r) in row.iter_mut().enumerate() {
            *r = x[(i, j)];
        }
        ev.eval_row(&row, &mut values);
        for (j, v) in values.iter().enumerate() {
            z[(i, j)] = *v;
        }
    }
    Ok(z)
}

fn column_means(z: &DMatrix<f64>) -> Vec<f64> {
    let n = z.nrows().max(1) as f64;
    z.column_iter().map(|c| c.sum() / n).collect()
}

fn subtract_offsets(z: &mut DMatrix<f64>, offsets: &[f64]) {
    for (mut col, &a) in z.column_iter_mut().zip(offsets) {
        col.add_scalar_mut(-a);
    }
}

/// Design matrix `[V1 | V2 blocks]` with every centered block centered
/// according to `mode` (population means from `law`).
pub fn design_matrix(model: &SumspaceModel, x: &DMatrix<f64>, mode: CenteringMode, law: &DesignLaw, spec: &IntegrationSpec) -> Result<DMatrix<f64>> {
    let prepared = PreparedEstimator::new(EstimatorConfig {
        centering_mode: mode,
        design_law: law.clone(),
        integration: *spec,
        ..EstimatorConfig::new(model.clone())
    })?;
    Ok(prepared.design(x)?.z)
}

/// Minimum-norm least-squares coefficients of `y` on the columns of `z`.
pub fn fit_sumspace(z: &DMatrix<f64>, y: &DVector<f64>, tolerance: f64) -> DVector<f64> {
    pinv_solve(z, y, tolerance)
}

/// Regresses the fitted `V1` values onto the (centered) `W1` columns.
pub fn second_stage(fitted_v1: &DVector<f64>, zw: &DMatrix<f64>, tolerance: f64) -> DVector<f64> {
    pinv_solve(zw, fitted_v1, tolerance)
}

/// Points at which `‖f̂_1‖_∞` is estimated: an equispaced grid over each
/// covariate of the block (over `[-8, 8]` for real-line bases), with about
/// [`SUP_GRID_POINTS`] points in total.
pub fn sup_grid(space: &ComponentSpace) -> DMatrix<f64> {
    let k = space.covariates.len();
    let per_axis = if k == 1 {
        SUP_GRID_POINTS
    } else {
        (SUP_GRID_POINTS as f64).powf(1.0 / k as f64).ceil() as usize
    };
    let (lo, hi) = match space.basis.domain() {
        Domain::UnitInterval => (0.0, 1.0),
        Domain::RealLine => (-8.0, 8.0),
    };
    let axis: Vec<f64> = (0..per_axis)
        .map(|i| lo + (hi - lo) * i as f64 / (per_axis - 1) as f64)
        .collect();
    let total = per_axis.pow(k as u32);
    DMatrix::from_fn(total, k, |i, j| {
        let idx = (i / per_axis.pow(j as u32)) % per_axis;
        axis[idx]
    })
}

/// Zeroes the estimate when its grid sup-norm exceeds `k_n`.
/// Returns the coefficients, the truncation flag and the sup estimate.
pub fn truncate(beta_w1: &[f64], w1: &ComponentSpace, offsets: &[f64], k_n: Truncation) -> (Vec<f64>, bool, f64) {
    let sup = evaluate_estimate(beta_w1, w1, offsets, &sup_grid(w1))
        .into_iter()
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    if sup > k_n.level() {
        (vec![0.0; beta_w1.len()], true, sup)
    } else {
        (beta_w1.to_vec(), false, sup)
    }
}

/// `‖B_n - I‖_op` for `B_n = T (ZᵀZ/n) Tᵀ` with `T G Tᵀ = I`, and whether
/// it is at most `delta`.
pub fn check_edelta(z: &DMatrix<f64>, population_gram: &DMatrix<f64>, delta: f64) -> Result<(bool, f64)> {
    let t = Whitening::new(population_gram, "population")?;
    check_edelta_whitened(z, &t.transform, delta)
}

fn check_edelta_whitened(z: &DMatrix<f64>, t: &DMatrix<f64>, delta: f64) -> Result<(bool, f64)> {
    let n = z.nrows();
    let d = z.ncols();
    if t.nrows() != d {
        return Err(Error::Dimension(format!("Gram is {}×{} but Z has {d} columns", t.nrows(), t.ncols())));
    }
    let zt = z * t.transpose();
    let mut b = zt.tr_mul(&zt) / n.max(1) as f64;
    for i in 0..d {
        b[(i, i)] -= 1.0;
    }
    linalg::symmetrize(&mut b);
    let deviation = linalg::symmetric_op_norm(&b);
    Ok((deviation <= delta, deviation))
}

/// Centered design for one dataset.
#[derive(Debug, Clone)]
pub struct Design {
    /// `[V1 | V2]` columns.
    pub z: DMatrix<f64>,
    /// Centered `W1` columns.
    pub zw: DMatrix<f64>,
    /// Offsets subtracted from each block of `z` (V1 first).
    pub offsets: Vec<Vec<f64>>,
    pub w1_offsets: Vec<f64>,
}

/// An estimator with its population moments precomputed, for repeated fits
/// under one configuration.
#[derive(Debug, Clone)]
pub struct PreparedEstimator {
    config: EstimatorConfig,
    spaces: Vec<ComponentSpace>,
    moments: PopulationMoments,
    /// Whitening of the population-centered Gram of `V`.
    population_whitening: DMatrix<f64>,
}

impl PreparedEstimator {
    pub fn new(config: EstimatorConfig) -> Result<Self> {
        config.validate()?;
        let model = &config.model;
        // blocks: V1, V2..., W1
        let mut spaces: Vec<ComponentSpace> = vec![model.v1().clone()];
        spaces.extend(model.v2().iter().cloned());
        spaces.push(model.w1().clone());
        let refs: Vec<&ComponentSpace> = spaces.iter().collect();
        let moments = population_moments(&refs, &config.design_law, &config.integration)?;
        let v_blocks: Vec<usize> = (0..spaces.len() - 1).collect();
        let g = moments.centered_gram(&v_blocks, &refs[..spaces.len() - 1]);
        crate::sumspace::check_psd(&g)?;
        let population_whitening = Whitening::new(&g, "population")?.transform;
        Ok(Self {
            config,
            spaces,
            moments,
            population_whitening,
        })
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.config
    }

    pub fn model(&self) -> &SumspaceModel {
        &self.config.model
    }

    fn offsets_for(&self, block: usize, z: &DMatrix<f64>) -> Vec<f64> {
        let space = &self.spaces[block];
        match (space.centering, self.config.centering_mode) {
            (Centering::None, _) => vec![0.0; z.ncols()],
            (_, CenteringMode::Population) => self.moments.means(block),
            (_, CenteringMode::Empirical) => column_means(z),
        }
    }

    pub fn design(&self, x: &DMatrix<f64>) -> Result<Design> {
        let mut blocks = Vec::with_capacity(self.spaces.len());
        let mut offsets = Vec::with_capacity(self.spaces.len());
        for (b, space) in self.spaces.iter().enumerate() {
            let mut z = raw_block(space, x)?;
            let off = self.offsets_for(b, &z);
            subtract_offsets(&mut z, &off);
            blocks.push(z);
            offsets.push(off);
        }
        let zw = blocks.pop().expect("W1 block");
        let w1_offsets = offsets.pop().expect("W1 offsets");
        let n = x.nrows();
        let d: usize = blocks.iter().map(|b| b.ncols()).sum();
        let mut z = DMatrix::zeros(n, d);
        let mut start = 0;
        for block in &blocks {
            z.columns_mut(start, block.ncols()).copy_from(block);
            start += block.ncols();
        }
        Ok(Design {
            z,
            zw,
            offsets,
            w1_offsets,
        })
    }

    /// Population Gram of the system actually used in `design`, i.e. with
    /// the given offsets.
    pub fn population_gram_for(&self, offsets: &[Vec<f64>]) -> DMatrix<f64> {
        let blocks: Vec<usize> = (0..offsets.len()).collect();
        self.moments.gram_with_offsets(&blocks, offsets)
    }

    /// `E_δ` check of a design against the population Gram of the same
    /// (offset) system.
    pub fn edelta(&self, design: &Design) -> Result<(bool, f64)> {
        match self.config.centering_mode {
            CenteringMode::Population => {
                check_edelta_whitened(&design.z, &self.population_whitening, self.config.delta)
            }
            CenteringMode::Empirical => {
                let g = self.population_gram_for(&design.offsets);
                check_edelta(&design.z, &g, self.config.delta)
            }
        }
    }

    pub fn fit(&self, data: &Dataset) -> Result<FitResult> {
        let model = self.model();
        let design = self.design(&data.x)?;
        let tol = self.config.pseudoinverse_tolerance;
        let beta = fit_sumspace(&design.z, &data.y, tol);
        let d1 = model.d1();
        let beta_v1 = beta.rows(0, d1).into_owned();
        let beta_v2 = beta.rows(d1, model.d2()).into_owned();
        let fitted_v1 = design.z.columns(0, d1) * &beta_v1;
        let beta_w1 = second_stage(&fitted_v1, &design.zw, tol);
        let (beta_w1, truncated, sup_estimate) =
            truncate(beta_w1.as_slice(), model.w1(), &design.w1_offsets, self.config.k_n);

        let (edelta_holds, gram_deviation) = self.edelta(&design)?;

        let empirical_rho = if model.d2() == 0 {
            0.0
        } else {
            let z1 = design.z.columns(0, d1).into_owned();
            let z2 = design.z.columns(d1, model.d2()).into_owned();
            backfit::empirical_rho(&z1, &z2).unwrap_or(1.0)
        };

        Ok(FitResult {
            beta_v1: beta_v1.as_slice().to_vec(),
            beta_v2: beta_v2.as_slice().to_vec(),
            beta_w1,
            truncated,
            edelta_holds,
            gram_deviation,
            empirical_rho,
            sup_estimate,
            v1_offsets: design.offsets[0].clone(),
            w1_offsets: design.w1_offsets,
            w1: model.w1().clone(),
        })
    }

    /// The benchmark fit with `V2` dropped, applied to responses from which
    /// the nuisance has already been removed.
    pub fn oracle(&self) -> Result<PreparedEstimator> {
        let mut config = self.config.clone();
        config.model = config.model.without_v2();
        if config.centering_mode == CenteringMode::Empirical {
            config.centering_mode = CenteringMode::Population;
        }
        PreparedEstimator::new(config)
    }
}

pub fn fit(config: &EstimatorConfig, data: &Dataset) -> Result<FitResult> {
    PreparedEstimator::new(config.clone())?.fit(data)
}

/// Least squares of `Y - f2(X2)` onto `W1`, through the same pipeline with
/// `V2` removed.
pub fn oracle_fit(config: &EstimatorConfig, data_without_nuisance: &Dataset) -> Result<FitResult> {
    PreparedEstimator::new(config.clone())?.oracle()?.fit(data_without_nuisance)
}
