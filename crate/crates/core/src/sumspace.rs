//! Model spaces `V1`, `V2 = Σ_j V2j`, `W1 ⊆ V1` and their population geometry.
//!
//! Population inner products `E[φ_j(X) φ_k(X)]` are computed block pair by
//! block pair. Whenever a pair involves at most two covariates the integral
//! is done by tensor quadrature (Gauss-Legendre on `[0, 1]`, weighted by the
//! Gaussian copula density when there is one, or Gauss-Hermite for the
//! bivariate Gaussian law); otherwise the whole Gram matrix is estimated by
//! Monte Carlo with reported standard errors.

use crate::basis::{Basis, BasisKind, Domain, TensorBasis, UnivariateBasis};
use crate::error::{Error, Result};
use crate::linalg::{self, Whitening};
use crate::quadrature::{gauss_hermite, gauss_legendre_composite, QuadratureRule};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

/// Tolerance on the most negative Gram eigenvalue before the configuration
/// is declared inconsistent.
pub const PSD_TOLERANCE: f64 = 1e-10;

/// Residual norm allowed when verifying `W1 ⊆ V1`.
pub const CONTAINMENT_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Centering {
    #[default]
    Population,
    Empirical,
    None,
}

/// One additive component: a basis over a block of covariates plus a
/// centering convention.
///
/// A block with more than one covariate uses the tensor product of `basis`
/// across its covariates. Any centering other than `none` removes the
/// constant from the span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpace {
    pub covariates: Vec<usize>,
    pub basis: UnivariateBasis,
    #[serde(default)]
    pub centering: Centering,
}

impl ComponentSpace {
    pub fn new(covariates: Vec<usize>, basis: UnivariateBasis, centering: Centering) -> Self {
        Self {
            covariates,
            basis,
            centering,
        }
    }

    pub fn univariate(covariate: usize, basis: UnivariateBasis, centering: Centering) -> Self {
        Self::new(vec![covariate], basis, centering)
    }

    pub fn is_centered(&self) -> bool {
        self.centering != Centering::None
    }

    /// True when the constant function lies in the span.
    pub fn carries_constant(&self) -> bool {
        !self.is_centered() && self.basis.include_constant()
    }

    /// The function system before any mean subtraction.
    pub fn system(&self) -> Basis {
        let keep_constant = self.carries_constant();
        if self.covariates.len() == 1 {
            Basis::Univariate(self.basis.with_constant(keep_constant))
        } else {
            Basis::Tensor(
                TensorBasis::new(vec![self.basis; self.covariates.len()], keep_constant)
                    .expect("non-empty covariate block"),
            )
        }
    }

    pub fn dim(&self) -> usize {
        self.system().dim()
    }

    fn validate(&self, name: &str) -> Result<()> {
        if self.covariates.is_empty() {
            return Err(Error::Config(format!("{name} has no covariates")));
        }
        let unique: BTreeSet<_> = self.covariates.iter().collect();
        if unique.len() != self.covariates.len() {
            return Err(Error::Config(format!("{name} lists a covariate twice")));
        }
        if self.dim() == 0 {
            return Err(Error::Config(format!("{name} has dimension zero")));
        }
        Ok(())
    }
}

/// Evaluates a component's raw system on one design row.
#[derive(Debug, Clone)]
pub struct BlockEvaluator {
    covariates: Vec<usize>,
    system: Basis,
    scratch: Vec<f64>,
}

impl BlockEvaluator {
    pub fn new(space: &ComponentSpace) -> Self {
        Self {
            covariates: space.covariates.clone(),
            system: space.system(),
            scratch: vec![0.0; space.covariates.len()],
        }
    }

    pub fn dim(&self) -> usize {
        self.system.dim()
    }

    pub fn covariates(&self) -> &[usize] {
        &self.covariates
    }

    pub fn eval_row(&mut self, row: &[f64], out: &mut [f64]) {
        for (slot, &c) in self.scratch.iter_mut().zip(&self.covariates) {
            *slot = row[c];
        }
        self.system.eval_into(&self.scratch, out);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSpec {
    v1: ComponentSpace,
    #[serde(default)]
    v2: Vec<ComponentSpace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    w1: Option<ComponentSpace>,
}

/// The first-stage model `V = V1 + V2` with the second-stage space `W1 ⊆ V1`.
///
/// When `w1` is omitted in structured text it defaults to `V1` itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelSpec", into = "ModelSpec")]
pub struct SumspaceModel {
    v1: ComponentSpace,
    v2: Vec<ComponentSpace>,
    w1: ComponentSpace,
}

impl TryFrom<ModelSpec> for SumspaceModel {
    type Error = Error;
    fn try_from(spec: ModelSpec) -> Result<Self> {
        let w1 = spec.w1.unwrap_or_else(|| spec.v1.clone());
        SumspaceModel::new(spec.v1, spec.v2, w1)
    }
}

impl From<SumspaceModel> for ModelSpec {
    fn from(m: SumspaceModel) -> Self {
        ModelSpec {
            v1: m.v1,
            v2: m.v2,
            w1: Some(m.w1),
        }
    }
}

impl SumspaceModel {
    pub fn new(v1: ComponentSpace, v2: Vec<ComponentSpace>, w1: ComponentSpace) -> Result<Self> {
        v1.validate("V1")?;
        w1.validate("W1")?;
        for (j, block) in v2.iter().enumerate() {
            block.validate(&format!("V2 block {j}"))?;
        }
        let v1_cov: BTreeSet<_> = v1.covariates.iter().copied().collect();
        let mut seen = v1_cov.clone();
        for (j, block) in v2.iter().enumerate() {
            for &c in &block.covariates {
                if !seen.insert(c) {
                    return Err(Error::Config(format!(
                        "V2 block {j} reuses covariate {c}; blocks must be disjoint"
                    )));
                }
            }
        }
        if w1.covariates != v1.covariates {
            return Err(Error::Config("W1 must use the same covariates as V1".into()));
        }
        if w1.centering != v1.centering {
            return Err(Error::Config("W1 must use the same centering as V1".into()));
        }
        let constant_blocks = v2.iter().filter(|b| b.carries_constant()).count();
        if constant_blocks > 1 {
            return Err(Error::Config(format!(
                "{constant_blocks} V2 blocks carry the constant; at most one may"
            )));
        }
        if w1.carries_constant() && !v1.carries_constant() {
            return Err(Error::Config("W1 carries the constant but V1 does not".into()));
        }
        verify_containment(&w1.basis, &v1.basis)?;
        Ok(Self { v1, v2, w1 })
    }

    pub fn v1(&self) -> &ComponentSpace {
        &self.v1
    }

    pub fn v2(&self) -> &[ComponentSpace] {
        &self.v2
    }

    pub fn w1(&self) -> &ComponentSpace {
        &self.w1
    }

    pub fn d1(&self) -> usize {
        self.v1.dim()
    }

    pub fn d2(&self) -> usize {
        self.v2.iter().map(|b| b.dim()).sum()
    }

    pub fn d(&self) -> usize {
        self.d1() + self.d2()
    }

    pub fn dim_w1(&self) -> usize {
        self.w1.dim()
    }

    /// Largest covariate index used plus one.
    pub fn arity(&self) -> usize {
        std::iter::once(&self.v1)
            .chain(&self.v2)
            .flat_map(|b| b.covariates.iter())
            .max()
            .map_or(0, |&c| c + 1)
    }

    pub fn v2_has_constant(&self) -> bool {
        self.v2.iter().any(|b| b.carries_constant())
    }

    /// The same model with `V2` removed.
    pub fn without_v2(&self) -> Self {
        Self {
            v1: self.v1.clone(),
            v2: Vec::new(),
            w1: self.w1.clone(),
        }
    }

    /// Column ranges of `V1` and each `V2` block in the design matrix.
    pub fn block_ranges(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        std::iter::once(&self.v1)
            .chain(&self.v2)
            .map(|b| {
                let r = start..start + b.dim();
                start = r.end;
                r
            })
            .collect()
    }
}

/// Reference measure on which each univariate system is orthonormal.
fn reference_rule(bases: &[UnivariateBasis], min_per_panel: usize) -> Result<QuadratureRule> {
    let hermite = bases.iter().filter(|b| b.domain() == Domain::RealLine).count();
    if hermite > 0 && hermite < bases.len() {
        return Err(Error::Config(
            "cannot mix Hermite and unit-interval bases on one covariate".into(),
        ));
    }
    let resolution = bases.iter().map(|b| b.resolution()).max().unwrap_or(0);
    if hermite > 0 {
        return Ok(gauss_hermite((resolution + 8).max(64)));
    }
    Ok(unit_axis_rule(bases, min_per_panel, 0))
}

/// Composite Gauss-Legendre rule on `[0, 1]` with panels at the union of the
/// bases' breakpoints, sized to resolve products of two members.
fn unit_axis_rule(bases: &[UnivariateBasis], min_per_panel: usize, min_total: usize) -> QuadratureRule {
    let mut breaks: Vec<f64> = bases.iter().flat_map(|b| b.breaks()).collect();
    breaks.push(0.0);
    breaks.push(1.0);
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    let panels = breaks.len() - 1;
    let max_freq = bases
        .iter()
        .filter_map(|b| match b.kind() {
            BasisKind::Trigonometric { max_frequency } => Some(max_frequency),
            _ => None,
        })
        .max()
        .unwrap_or(0);
    let max_deg = bases
        .iter()
        .filter_map(|b| match b.kind() {
            BasisKind::PiecewisePolynomial { max_degree, .. } => Some(max_degree),
            _ => None,
        })
        .max()
        .unwrap_or(0);
    let trig_total = 8 * max_freq + 64;
    let per_panel = min_per_panel
        .max(max_deg + 2)
        .max(trig_total.div_ceil(panels))
        .max(min_total.div_ceil(panels));
    gauss_legendre_composite(&breaks, per_panel)
}

fn verify_containment(inner: &UnivariateBasis, outer: &UnivariateBasis) -> Result<()> {
    let inner = inner.with_constant(true);
    let outer = outer.with_constant(true);
    let rule = reference_rule(&[inner, outer], 64)?;
    let (di, d_o) = (inner.dim(), outer.dim());
    let mut vi = vec![0.0; di];
    let mut vo = vec![0.0; d_o];
    // projection coefficients <w_i, v_j>; both systems are orthonormal
    let mut coef = DMatrix::<f64>::zeros(di, d_o);
    for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
        inner.eval_into(x, &mut vi);
        outer.eval_into(x, &mut vo);
        for i in 0..di {
            for j in 0..d_o {
                coef[(i, j)] += w * vi[i] * vo[j];
            }
        }
    }
    let mut residual = vec![0.0; di];
    for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
        inner.eval_into(x, &mut vi);
        outer.eval_into(x, &mut vo);
        for i in 0..di {
            let proj: f64 = (0..d_o).map(|j| coef[(i, j)] * vo[j]).sum();
            residual[i] += w * (vi[i] - proj).powi(2);
        }
    }
    let worst = residual.iter().fold(0.0_f64, |m, &r| m.max(r.sqrt()));
    if worst > CONTAINMENT_TOLERANCE {
        return Err(Error::Config(format!(
            "W1 is not contained in V1 (projection residual {worst:.3e})"
        )));
    }
    Ok(())
}

/// Joint law of the covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DesignLaw {
    #[default]
    IndependentUniform,
    /// Normal scores with correlation matrix `correlation`, mapped to
    /// uniform marginals through the standard normal CDF.
    GaussianCopula { correlation: Vec<Vec<f64>> },
    /// Standard bivariate normal with correlation `rho`.
    BivariateGaussian { rho: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Marginal {
    Uniform,
    StandardNormal,
}

impl DesignLaw {
    /// Two-dimensional Gaussian copula with a single correlation.
    pub fn copula2(r: f64) -> Self {
        DesignLaw::GaussianCopula {
            correlation: vec![vec![1.0, r], vec![r, 1.0]],
        }
    }

    /// Exchangeable Gaussian copula in `q` dimensions.
    pub fn exchangeable_copula(q: usize, r: f64) -> Self {
        let correlation = (0..q)
            .map(|i| (0..q).map(|j| if i == j { 1.0 } else { r }).collect())
            .collect();
        DesignLaw::GaussianCopula { correlation }
    }

    pub fn marginal(&self) -> Marginal {
        match self {
            DesignLaw::BivariateGaussian { .. } => Marginal::StandardNormal,
            _ => Marginal::Uniform,
        }
    }

    /// Known lower bound `c` on the marginal densities, where one exists
    /// without further assumptions.
    pub fn density_lower_bound(&self) -> Option<f64> {
        match self {
            DesignLaw::IndependentUniform => Some(1.0),
            _ => None,
        }
    }

    pub fn correlation_matrix(&self, q: usize) -> Result<DMatrix<f64>> {
        match self {
            DesignLaw::IndependentUniform => Ok(DMatrix::identity(q, q)),
            DesignLaw::GaussianCopula { correlation } => {
                if correlation.len() != q || correlation.iter().any(|r| r.len() != q) {
                    return Err(Error::DesignLaw(format!(
                        "correlation matrix must be {q}×{q}"
                    )));
                }
                Ok(DMatrix::from_fn(q, q, |i, j| correlation[i][j]))
            }
            DesignLaw::BivariateGaussian { rho } => {
                if q != 2 {
                    return Err(Error::DesignLaw("bivariate Gaussian law needs q = 2".into()));
                }
                Ok(DMatrix::from_row_slice(2, 2, &[1.0, *rho, *rho, 1.0]))
            }
        }
    }

    /// Checks the law against a covariate count `q`; returns the Cholesky
    /// factor of the normal-score correlation.
    pub fn validate(&self, q: usize) -> Result<DMatrix<f64>> {
        if let DesignLaw::BivariateGaussian { rho } = self {
            if !(rho.abs() < 1.0) {
                return Err(Error::DesignLaw(format!("|rho| must be < 1, got {rho}")));
            }
        }
        let r = self.correlation_matrix(q)?;
        for i in 0..q {
            if (r[(i, i)] - 1.0).abs() > 1e-12 {
                return Err(Error::DesignLaw("correlation diagonal must be 1".into()));
            }
            for j in 0..i {
                if (r[(i, j)] - r[(j, i)]).abs() > 1e-12 {
                    return Err(Error::DesignLaw("correlation matrix must be symmetric".into()));
                }
            }
        }
        r.cholesky()
            .map(|c| c.l())
            .ok_or_else(|| Error::DesignLaw("correlation matrix is not positive definite".into()))
    }

    /// Draws `n` design points in `q` dimensions.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, q: usize, rng: &mut R) -> Result<DMatrix<f64>> {
        let chol = self.validate(q)?;
        let mut x = DMatrix::zeros(n, q);
        match self {
            DesignLaw::IndependentUniform => {
                for i in 0..n {
                    for j in 0..q {
                        x[(i, j)] = rng.random::<f64>();
                    }
                }
            }
            DesignLaw::GaussianCopula { .. } | DesignLaw::BivariateGaussian { .. } => {
                let normal = Normal::standard();
                let uniform_marginals = matches!(self, DesignLaw::GaussianCopula { .. });
                let mut xi = DVector::zeros(q);
                for i in 0..n {
                    for j in 0..q {
                        xi[j] = rng.sample::<f64, _>(StandardNormal);
                    }
                    let z = &chol * &xi;
                    for j in 0..q {
                        x[(i, j)] = if uniform_marginals { normal.cdf(z[j]) } else { z[j] };
                    }
                }
            }
        }
        Ok(x)
    }
}

/// Node and sample counts for population integrals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegrationSpec {
    pub nodes_per_axis: usize,
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for IntegrationSpec {
    fn default() -> Self {
        Self {
            nodes_per_axis: 128,
            mc_samples: 1_000_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegrationMethod {
    Quadrature,
    MonteCarlo,
}

/// Raw population second moments of a list of component systems.
///
/// Index 0 of `augmented` is the constant function, so row 0 holds the
/// means; the remaining indices follow the blocks in order.
#[derive(Debug, Clone)]
pub struct PopulationMoments {
    pub augmented: DMatrix<f64>,
    pub ranges: Vec<Range<usize>>,
    pub method: IntegrationMethod,
    pub nodes_per_axis: usize,
    pub samples: usize,
    pub max_standard_error: f64,
}

impl PopulationMoments {
    pub fn means(&self, block: usize) -> Vec<f64> {
        self.ranges[block].clone().map(|i| self.augmented[(0, i + 1)]).collect()
    }

    /// Gram of the selected blocks after subtracting `offsets[b]` from block `b`.
    ///
    /// `E[(f_i - a_i)(f_j - a_j)] = E[f_i f_j] - a_i μ_j - a_j μ_i + a_i a_j`.
    pub fn gram_with_offsets(&self, blocks: &[usize], offsets: &[Vec<f64>]) -> DMatrix<f64> {
        let idx: Vec<(usize, f64)> = blocks
            .iter()
            .zip(offsets)
            .flat_map(|(&b, off)| self.ranges[b].clone().zip(off.iter().copied()))
            .collect();
        let d = idx.len();
        let mut g = DMatrix::zeros(d, d);
        for (p, &(i, ai)) in idx.iter().enumerate() {
            for (q, &(j, aj)) in idx.iter().enumerate() {
                let mi = self.augmented[(0, i + 1)];
                let mj = self.augmented[(0, j + 1)];
                g[(p, q)] = self.augmented[(i + 1, j + 1)] - ai * mj - aj * mi + ai * aj;
            }
        }
        linalg::symmetrize(&mut g);
        g
    }

    /// Gram of the selected blocks with centered blocks recentered to
    /// population mean zero.
    pub fn centered_gram(&self, blocks: &[usize], spaces: &[&ComponentSpace]) -> DMatrix<f64> {
        let offsets: Vec<Vec<f64>> = blocks
            .iter()
            .zip(spaces)
            .map(|(&b, s)| {
                if s.is_centered() {
                    self.means(b)
                } else {
                    vec![0.0; self.ranges[b].len()]
                }
            })
            .collect();
        self.gram_with_offsets(blocks, &offsets)
    }
}

struct PointSet {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

fn check_marginal(space: &ComponentSpace, marginal: Marginal) -> Result<()> {
    let ok = match (space.basis.domain(), marginal) {
        (Domain::UnitInterval, Marginal::Uniform) => true,
        (Domain::RealLine, Marginal::StandardNormal) => true,
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "basis {:?} does not live on the support of the {:?} marginal",
            space.basis.kind(),
            marginal
        )))
    }
}

fn axis_rule_for(coord: usize, spaces: &[&ComponentSpace], law: &DesignLaw, spec: &IntegrationSpec) -> Result<QuadratureRule> {
    let bases: Vec<UnivariateBasis> = spaces
        .iter()
        .filter(|s| s.covariates.contains(&coord))
        .map(|s| s.basis)
        .collect();
    match law.marginal() {
        Marginal::StandardNormal => {
            let resolution = bases.iter().map(|b| b.resolution()).max().unwrap_or(0);
            Ok(gauss_hermite(spec.nodes_per_axis.max(resolution + 8).max(64)))
        }
        Marginal::Uniform => {
            // smooth copula weights need a modest number of nodes per panel
            let per_panel = if matches!(law, DesignLaw::IndependentUniform) { 32 } else { 16 };
            Ok(unit_axis_rule(&bases, per_panel, spec.nodes_per_axis))
        }
    }
}

/// Tensor quadrature over a set of at most two covariates.
fn quadrature_points(coords: &[usize], spaces: &[&ComponentSpace], law: &DesignLaw, q: usize, spec: &IntegrationSpec) -> Result<PointSet> {
    let rules: Vec<QuadratureRule> = coords
        .iter()
        .map(|&c| axis_rule_for(c, spaces, law, spec))
        .collect::<Result<_>>()?;
    let mut points = Vec::new();
    let mut weights = Vec::new();
    let filler = match law.marginal() {
        Marginal::Uniform => 0.5,
        Marginal::StandardNormal => 0.0,
    };
    match coords.len() {
        1 => {
            for (&x, &w) in rules[0].nodes.iter().zip(&rules[0].weights) {
                let mut p = vec![filler; q];
                p[coords[0]] = x;
                points.push(p);
                weights.push(w);
            }
        }
        2 => {
            let (a, b) = (coords[0], coords[1]);
            let normal = Normal::standard();
            for (&x, &wx) in rules[0].nodes.iter().zip(&rules[0].weights) {
                for (&y, &wy) in rules[1].nodes.iter().zip(&rules[1].weights) {
                    let mut p = vec![filler; q];
                    let weight = match law {
                        DesignLaw::IndependentUniform => {
                            p[a] = x;
                            p[b] = y;
                            wx * wy
                        }
                        DesignLaw::GaussianCopula { correlation } => {
                            p[a] = x;
                            p[b] = y;
                            let r = correlation[a][b];
                            let (za, zb) = (normal.inverse_cdf(x), normal.inverse_cdf(y));
                            wx * wy * copula_density(za, zb, r, &normal)
                        }
                        DesignLaw::BivariateGaussian { rho } => {
                            // coords are sorted, so X_a = z1 and X_b = ρ z1 + √(1-ρ²) z2
                            let r = *rho;
                            p[a] = x;
                            p[b] = r * x + (1.0 - r * r).sqrt() * y;
                            wx * wy
                        }
                    };
                    points.push(p);
                    weights.push(weight);
                }
            }
        }
        _ => unreachable!("quadrature is only used for one or two covariates"),
    }
    Ok(PointSet { points, weights })
}

fn copula_density(za: f64, zb: f64, r: f64, normal: &Normal) -> f64 {
    if r == 0.0 {
        return 1.0;
    }
    let s2 = 1.0 - r * r;
    let joint = (-(za * za - 2.0 * r * za * zb + zb * zb) / (2.0 * s2)).exp()
        / (2.0 * std::f64::consts::PI * s2.sqrt());
    joint / (normal.pdf(za) * normal.pdf(zb))
}

/// Raw second moments (with the constant prepended) of the given component
/// systems under `law`.
pub fn population_moments(spaces: &[&ComponentSpace], law: &DesignLaw, spec: &IntegrationSpec) -> Result<PopulationMoments> {
    let q = spaces
        .iter()
        .flat_map(|s| s.covariates.iter())
        .max()
        .map_or(1, |&c| c + 1)
        .max(match law {
            DesignLaw::GaussianCopula { correlation } => correlation.len(),
            DesignLaw::BivariateGaussian { .. } => 2,
            DesignLaw::IndependentUniform => 0,
        });
    law.validate(q)?;
    for s in spaces {
        check_marginal(s, law.marginal())?;
    }
    let mut ranges = Vec::with_capacity(spaces.len());
    let mut start = 0;
    for s in spaces {
        ranges.push(start..start + s.dim());
        start += s.dim();
    }
    let total = start;

    let mut pair_sets: Vec<(usize, usize, Vec<usize>)> = Vec::new();
    for a in 0..spaces.len() {
        for b in a..spaces.len() {
            let union: BTreeSet<usize> = spaces[a]
                .covariates
                .iter()
                .chain(&spaces[b].covariates)
                .copied()
                .collect();
            pair_sets.push((a, b, union.into_iter().collect()));
        }
    }
    let needs_mc = pair_sets.iter().any(|(_, _, s)| s.len() > 2);
    if needs_mc {
        return monte_carlo_moments(spaces, law, q, spec, ranges, total);
    }

    let mut augmented = DMatrix::zeros(total + 1, total + 1);
    augmented[(0, 0)] = 1.0;
    let mut cache: BTreeMap<Vec<usize>, PointSet> = BTreeMap::new();
    let mut evaluators: Vec<BlockEvaluator> = spaces.iter().map(|s| BlockEvaluator::new(s)).collect();

    // means, from each block's own covariates
    for (a, s) in spaces.iter().enumerate() {
        let key = s.covariates.iter().copied().collect::<BTreeSet<_>>().into_iter().collect::<Vec<_>>();
        if !cache.contains_key(&key) {
            cache.insert(key.clone(), quadrature_points(&key, spaces, law, q, spec)?);
        }
        let set = &cache[&key];
        let mut v = vec![0.0; s.dim()];
        for (p, &w) in set.points.iter().zip(&set.weights) {
            evaluators[a].eval_row(p, &mut v);
            for (i, vi) in ranges[a].clone().zip(&v) {
                augmented[(0, i + 1)] += w * vi;
            }
        }
    }
    for i in 1..=total {
        augmented[(i, 0)] = augmented[(0, i)];
    }

    let independent = matches!(law, DesignLaw::IndependentUniform);
    for (a, b, key) in pair_sets {
        let disjoint = spaces[a]
            .covariates
            .iter()
            .all(|c| !spaces[b].covariates.contains(c));
        if disjoint && independent {
            for i in ranges[a].clone() {
                for j in ranges[b].clone() {
                    let v = augmented[(0, i + 1)] * augmented[(0, j + 1)];
                    augmented[(i + 1, j + 1)] = v;
                    augmented[(j + 1, i + 1)] = v;
                }
            }
            continue;
        }
        if !cache.contains_key(&key) {
            cache.insert(key.clone(), quadrature_points(&key, spaces, law, q, spec)?);
        }
        let set = &cache[&key];
        let mut va = vec![0.0; spaces[a].dim()];
        let mut vb = vec![0.0; spaces[b].dim()];
        let mut block = DMatrix::<f64>::zeros(va.len(), vb.len());
        for (p, &w) in set.points.iter().zip(&set.weights) {
            evaluators[a].eval_row(p, &mut va);
            evaluators[b].eval_row(p, &mut vb);
            for (i, &x) in va.iter().enumerate() {
                let wx = w * x;
                for (j, &y) in vb.iter().enumerate() {
                    block[(i, j)] += wx * y;
                }
            }
        }
        for (bi, i) in ranges[a].clone().enumerate() {
            for (bj, j) in ranges[b].clone().enumerate() {
                augmented[(i + 1, j + 1)] = block[(bi, bj)];
                augmented[(j + 1, i + 1)] = block[(bi, bj)];
            }
        }
    }
    let nodes = cache
        .values()
        .map(|s| s.points.len())
        .max()
        .unwrap_or(0);
    Ok(PopulationMoments {
        augmented,
        ranges,
        method: IntegrationMethod::Quadrature,
        nodes_per_axis: (nodes as f64).sqrt().round().max(spec.nodes_per_axis as f64) as usize,
        samples: 0,
        max_standard_error: 0.0,
    })
}

/// Number of independent streams the Monte Carlo integral is split into.
const MC_CHUNKS: u64 = 16;

fn monte_carlo_moments(
    spaces: &[&ComponentSpace],
    law: &DesignLaw,
    q: usize,
    spec: &IntegrationSpec,
    ranges: Vec<Range<usize>>,
    total: usize,
) -> Result<PopulationMoments> {
    let per_chunk = spec.mc_samples.div_ceil(MC_CHUNKS as usize);
    let dim = total + 1;
    // each chunk returns (Σ f fᵀ, Σ (f fᵀ)²) over its samples
    let chunks: Vec<Result<(DMatrix<f64>, DMatrix<f64>)>> = (0..MC_CHUNKS)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(chunk);
            let x = law.sample(per_chunk, q, &mut rng)?;
            let mut evaluators: Vec<BlockEvaluator> = spaces.iter().map(|s| BlockEvaluator::new(s)).collect();
            let mut sum = DMatrix::zeros(dim, dim);
            let mut sum_sq = DMatrix::zeros(dim, dim);
            let mut f = vec![0.0; dim];
            f[0] = 1.0;
            let mut row = vec![0.0; q];
            for i in 0..per_chunk {
                for j in 0..q {
                    row[j] = x[(i, j)];
                }
                for (b, ev) in evaluators.iter_mut().enumerate() {
                    let r = ranges[b].clone();
                    ev.eval_row(&row, &mut f[r.start + 1..r.end + 1]);
                }
                for a in 0..dim {
                    for b in a..dim {
                        let v = f[a] * f[b];
                        sum[(a, b)] += v;
                        sum_sq[(a, b)] += v * v;
                    }
                }
            }
            Ok((sum, sum_sq))
        })
        .collect();
    let mut sum = DMatrix::zeros(dim, dim);
    let mut sum_sq = DMatrix::zeros(dim, dim);
    for c in chunks {
        let (s, s2) = c?;
        sum += s;
        sum_sq += s2;
    }
    let n = (per_chunk * MC_CHUNKS as usize) as f64;
    let mut augmented = DMatrix::zeros(dim, dim);
    let mut max_se = 0.0_f64;
    for a in 0..dim {
        for b in a..dim {
            let mean = sum[(a, b)] / n;
            let var = (sum_sq[(a, b)] / n - mean * mean).max(0.0);
            max_se = max_se.max((var / n).sqrt());
            augmented[(a, b)] = mean;
            augmented[(b, a)] = mean;
        }
    }
    Ok(PopulationMoments {
        augmented,
        ranges,
        method: IntegrationMethod::MonteCarlo,
        nodes_per_axis: 0,
        samples: n as usize,
        max_standard_error: max_se,
    })
}

/// Population Gram of `V = V1 + V2` (columns: `V1`, then the `V2` blocks),
/// with centered blocks recentered to population mean zero.
#[derive(Debug, Clone)]
pub struct PopulationGram {
    pub matrix: DMatrix<f64>,
    pub d1: usize,
    pub moments: PopulationMoments,
}

pub fn population_gram(model: &SumspaceModel, law: &DesignLaw, spec: &IntegrationSpec) -> Result<PopulationGram> {
    let spaces: Vec<&ComponentSpace> = std::iter::once(model.v1()).chain(model.v2()).collect();
    let moments = population_moments(&spaces, law, spec)?;
    let blocks: Vec<usize> = (0..spaces.len()).collect();
    let matrix = moments.centered_gram(&blocks, &spaces);
    check_psd(&matrix)?;
    Ok(PopulationGram {
        matrix,
        d1: model.d1(),
        moments,
    })
}

pub(crate) fn check_psd(g: &DMatrix<f64>) -> Result<()> {
    if g.nrows() == 0 {
        return Ok(());
    }
    let min = linalg::symmetric_eigenvalues_desc(g).last().copied().unwrap_or(0.0);
    if min < -PSD_TOLERANCE {
        return Err(Error::NotPositiveSemidefinite { min_eigenvalue: min });
    }
    Ok(())
}

/// `T1 G12 T2ᵀ`: the cross Gram in orthonormalized coordinates of both blocks.
pub fn whitened_cross(g: &DMatrix<f64>, d1: usize) -> Result<DMatrix<f64>> {
    let d = g.nrows();
    if d1 > d {
        return Err(Error::Dimension(format!("split {d1} exceeds Gram size {d}")));
    }
    let d2 = d - d1;
    if d1 == 0 || d2 == 0 {
        return Ok(DMatrix::zeros(d1, d2));
    }
    let g11 = g.view((0, 0), (d1, d1)).into_owned();
    let g22 = g.view((d1, d1), (d2, d2)).into_owned();
    let g12 = g.view((0, d1), (d1, d2)).into_owned();
    let t1 = Whitening::new(&g11, "first")?;
    let t2 = Whitening::new(&g22, "second")?;
    Ok(&t1.transform * g12 * t2.transform.transpose())
}

/// Cosine of the minimal angle between the spans of the two blocks of `g`:
/// the largest singular value of `G11^{-1/2} G12 G22^{-1/2}`, clamped to `[0, 1]`.
pub fn minimal_angle(g: &DMatrix<f64>, d1: usize) -> Result<f64> {
    let m = whitened_cross(g, d1)?;
    Ok(linalg::spectral_norm(&m).clamp(0.0, 1.0))
}

/// `‖Π_{V2}|_{W1}‖_HS` for a Gram over `[W1 | V2]`: the Frobenius norm of
/// the cross Gram between the two orthonormalized systems.
pub fn hs_norm(g: &DMatrix<f64>, dim_w1: usize) -> Result<f64> {
    let m = whitened_cross(g, dim_w1)?;
    Ok(m.iter().map(|v| v * v).sum::<f64>().sqrt())
}

/// Eigenvalues `α_1 ≥ α_2 ≥ …` of `Π_{V1} Π_{V2} Π_{V1}` restricted to `V1`,
/// i.e. of `M Mᵀ` with `M` the whitened cross Gram.
pub fn eigen_spectrum(g: &DMatrix<f64>, d1: usize) -> Result<Vec<f64>> {
    let m = whitened_cross(g, d1)?;
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let mmt = &m * m.transpose();
    Ok(linalg::symmetric_eigenvalues_desc(&mmt)
        .into_iter()
        .map(|a| a.max(0.0))
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct AngleCheckReport {
    pub rho0: f64,
    pub trials: usize,
    /// Largest normalized violation over inequalities (i)–(iii).
    pub max_violation: f64,
    pub max_violation_cosine: f64,
    pub max_violation_sum: f64,
    pub max_violation_projection: f64,
    /// `|cos(h1*, h2*) - ρ0|` at the top singular pair.
    pub cosine_tightness: f64,
    /// `|‖h1* + h2*‖² - (1 - ρ0²)|` with `h2* = -Π_{H2} h1*`.
    pub projection_tightness: f64,
}

/// Random-pair verification of the three equivalent angle inequalities
/// (cosine bound, sum bound, projection bound) for the Gram `g` split at `d1`.
pub fn angle_equivalence_check(g: &DMatrix<f64>, d1: usize, trials: usize, seed: u64) -> Result<AngleCheckReport> {
    let d = g.nrows();
    let d2 = d - d1;
    let rho0 = minimal_angle(g, d1)?;
    let g11 = g.view((0, 0), (d1, d1)).into_owned();
    let g22 = g.view((d1, d1), (d2, d2)).into_owned();
    let g12 = g.view((0, d1), (d1, d2)).into_owned();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut v1, mut v2, mut v3) = (0.0_f64, 0.0_f64, 0.0_f64);
    for _ in 0..trials {
        let a = DVector::<f64>::from_fn(d1, |_, _| rng.sample(StandardNormal));
        let b = DVector::<f64>::from_fn(d2, |_, _| rng.sample(StandardNormal));
        let n1 = a.dot(&(&g11 * &a)).max(0.0);
        let n2 = b.dot(&(&g22 * &b)).max(0.0);
        let ip = a.dot(&(&g12 * &b));
        let sum = n1 + n2 + 2.0 * ip;
        let norm_prod = (n1 * n2).sqrt();
        if norm_prod > 0.0 {
            v1 = v1.max((ip.abs() - rho0 * norm_prod) / norm_prod);
        }
        let scale = n1 + n2;
        if scale > 0.0 {
            v2 = v2.max(((1.0 - rho0) * scale - sum) / scale);
        }
        if n1 > 0.0 {
            v3 = v3.max(((1.0 - rho0 * rho0) * n1 - sum) / scale.max(n1));
        }
    }

    let (cosine_tightness, projection_tightness) = if d1 > 0 && d2 > 0 {
        let t1 = Whitening::new(&g11, "first")?;
        let t2 = Whitening::new(&g22, "second")?;
        let m = &t1.transform * &g12 * t2.transform.transpose();
        let svd = m.clone().svd(true, true);
        let (top, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &s)| if s > acc.1 { (i, s) } else { acc });
        let u = svd.u.as_ref().unwrap().column(top).into_owned();
        let v = svd.v_t.as_ref().unwrap().row(top).transpose();
        // coefficient vectors in the raw bases
        let a = t1.transform.transpose() * u;
        let b = t2.transform.transpose() * v;
        let n1 = a.dot(&(&g11 * &a));
        let n2 = b.dot(&(&g22 * &b));
        let cos = a.dot(&(&g12 * &b)).abs() / (n1 * n2).sqrt();
        // h2 = -Π_{H2} h1 with unit h1: coefficients -G22⁻¹ G21 a / ‖h1‖
        let a_unit = &a / n1.sqrt();
        let proj = g22
            .clone()
            .cholesky()
            .map(|c| c.solve(&(g12.transpose() * &a_unit)))
            .unwrap_or_else(|| linalg::pinv_solve(&g22, &(g12.transpose() * &a_unit), 1e-14));
        let b2 = -proj;
        let sum = 1.0 + b2.dot(&(&g22 * &b2)) + 2.0 * a_unit.dot(&(&g12 * &b2));
        (
            (cos - rho0).abs(),
            (sum - (1.0 - rho0 * rho0)).abs(),
        )
    } else {
        (0.0, 0.0)
    };

    Ok(AngleCheckReport {
        rho0,
        trials,
        max_violation: v1.max(v2).max(v3).max(0.0),
        max_violation_cosine: v1.max(0.0),
        max_violation_sum: v2.max(0.0),
        max_violation_projection: v3.max(0.0),
        cosine_tightness,
        projection_tightness,
    })
}

/// Population geometry of a model under a design law.
#[derive(Debug, Clone, Serialize)]
pub struct GeometryReport {
    pub rho0: f64,
    pub rho0_w1: f64,
    pub hs_norm: f64,
    pub hs_norm_sq: f64,
    /// `ρ0² · dim W1`, the coarse bound on `hs_norm_sq`.
    pub hs_coarse_bound: f64,
    pub spectrum_trace: f64,
    pub gram_condition: f64,
    /// Smallest eigenvalue of the Gram of `V2` after orthonormalizing each
    /// block separately (1 for a single block).
    pub v2_min_normalized_eigenvalue: f64,
    pub d1: usize,
    pub d2: usize,
    pub d: usize,
    pub dim_w1: usize,
    pub method: IntegrationMethod,
    pub nodes_per_axis: usize,
    pub samples: usize,
    pub max_standard_error: f64,
    pub design_law: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correlation: Option<Vec<Vec<f64>>>,
    #[serde(skip)]
    pub spectrum: Vec<f64>,
}

impl GeometryReport {
    pub fn to_text(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

pub fn geometry(model: &SumspaceModel, law: &DesignLaw, spec: &IntegrationSpec) -> Result<GeometryReport> {
    let mut spaces: Vec<&ComponentSpace> = vec![model.v1(), model.w1()];
    spaces.extend(model.v2());
    let moments = population_moments(&spaces, law, spec)?;
    let v2_blocks: Vec<usize> = (2..spaces.len()).collect();

    let v_blocks: Vec<usize> = std::iter::once(0).chain(v2_blocks.iter().copied()).collect();
    let v_spaces: Vec<&ComponentSpace> = v_blocks.iter().map(|&b| spaces[b]).collect();
    let g_v = moments.centered_gram(&v_blocks, &v_spaces);
    check_psd(&g_v)?;

    let w_blocks: Vec<usize> = std::iter::once(1).chain(v2_blocks.iter().copied()).collect();
    let w_spaces: Vec<&ComponentSpace> = w_blocks.iter().map(|&b| spaces[b]).collect();
    let g_w = moments.centered_gram(&w_blocks, &w_spaces);

    let d1 = model.d1();
    let dim_w1 = model.dim_w1();
    let rho0 = minimal_angle(&g_v, d1)?;
    let rho0_w1 = minimal_angle(&g_w, dim_w1)?;
    let hs = hs_norm(&g_w, dim_w1)?;
    let spectrum = eigen_spectrum(&g_v, d1)?;

    // block-wise orthonormalized V2 Gram
    let g22 = g_v.view((d1, d1), (model.d2(), model.d2())).into_owned();
    let v2_min = if model.d2() == 0 {
        1.0
    } else {
        let mut t = DMatrix::zeros(model.d2(), model.d2());
        let mut start = 0;
        for block in model.v2() {
            let k = block.dim();
            let sub = g22.view((start, start), (k, k)).into_owned();
            let w = Whitening::new(&sub, "V2 block")?;
            t.view_mut((start, start), (k, k)).copy_from(&w.transform);
            start += k;
        }
        let normalized = &t * &g22 * t.transpose();
        linalg::symmetric_eigenvalues_desc(&normalized)
            .last()
            .copied()
            .unwrap_or(1.0)
    };

    let correlation = match law {
        DesignLaw::GaussianCopula { correlation } => Some(correlation.clone()),
        DesignLaw::BivariateGaussian { rho } => Some(vec![vec![1.0, *rho], vec![*rho, 1.0]]),
        DesignLaw::IndependentUniform => None,
    };
    Ok(GeometryReport {
        rho0,
        rho0_w1,
        hs_norm: hs,
        hs_norm_sq: hs * hs,
        hs_coarse_bound: rho0 * rho0 * dim_w1 as f64,
        spectrum_trace: spectrum.iter().sum(),
        gram_condition: linalg::condition_number(&g_v),
        v2_min_normalized_eigenvalue: v2_min,
        d1,
        d2: model.d2(),
        d: model.d(),
        dim_w1,
        method: moments.method,
        nodes_per_axis: moments.nodes_per_axis,
        samples: moments.samples,
        max_standard_error: moments.max_standard_error,
        design_law: match law {
            DesignLaw::IndependentUniform => "independent_uniform",
            DesignLaw::GaussianCopula { .. } => "gaussian_copula",
            DesignLaw::BivariateGaussian { .. } => "bivariate_gaussian",
        }
        .to_string(),
        correlation,
        spectrum,
    })
}

/// Symmetric eigen-decomposition helper used by tests and the CLI.
pub fn spectrum_of(g: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = SymmetricEigen::new(g.clone()).eigenvalues.iter().copied().collect();
    v.sort_by(|a, b| b.partial_cmp(a).unwrap());
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trig(m: usize) -> UnivariateBasis {
        UnivariateBasis::trigonometric(m, true)
    }

    pub(crate) fn additive_trig_model(m1: usize, m2: usize, mw: usize) -> SumspaceModel {
        SumspaceModel::new(
            ComponentSpace::univariate(0, trig(m1), Centering::Population),
            vec![ComponentSpace::univariate(1, trig(m2), Centering::None)],
            ComponentSpace::univariate(0, trig(mw), Centering::Population),
        )
        .unwrap()
    }

    fn hermite_model(deg1: usize, deg2: usize) -> SumspaceModel {
        SumspaceModel::new(
            ComponentSpace::univariate(0, UnivariateBasis::hermite(deg1, true), Centering::Population),
            vec![ComponentSpace::univariate(1, UnivariateBasis::hermite(deg2, true), Centering::None)],
            ComponentSpace::univariate(0, UnivariateBasis::hermite(deg1, true), Centering::Population),
        )
        .unwrap()
    }

    #[test]
    fn independent_uniform_trig_gram_is_identity() {
        let model = additive_trig_model(4, 3, 2);
        let g = population_gram(&model, &DesignLaw::IndependentUniform, &IntegrationSpec::default()).unwrap();
        let err = (&g.matrix - DMatrix::identity(model.d(), model.d())).abs().max();
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn zero_correlation_copula_gram_is_identity() {
        let model = additive_trig_model(2, 2, 2);
        let g = population_gram(&model, &DesignLaw::copula2(0.0), &IntegrationSpec::default()).unwrap();
        let err = (&g.matrix - DMatrix::identity(model.d(), model.d())).abs().max();
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn copula_gram_is_symmetric_psd_and_close_to_monte_carlo() {
        let model = additive_trig_model(2, 1, 1);
        let law = DesignLaw::copula2(0.6);
        let quad = population_gram(&model, &law, &IntegrationSpec::default()).unwrap();
        let g = &quad.matrix;
        assert!((g - g.transpose()).abs().max() < 1e-12);
        assert!(*spectrum_of(g).last().unwrap() > -1e-10);
        // Monte Carlo through the sampler as an independent check
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 200_000;
        let x = law.sample(n, 2, &mut rng).unwrap();
        let mut ev1 = BlockEvaluator::new(model.v1());
        let mut ev2 = BlockEvaluator::new(&model.v2()[0]);
        let (d1, d2) = (model.d1(), model.d2());
        let mut acc = DMatrix::<f64>::zeros(d1, d2);
        let mut a = vec![0.0; d1];
        let mut b = vec![0.0; d2];
        for i in 0..n {
            let row = [x[(i, 0)], x[(i, 1)]];
            ev1.eval_row(&row, &mut a);
            ev2.eval_row(&row, &mut b);
            for p in 0..d1 {
                for r in 0..d2 {
                    acc[(p, r)] += a[p] * b[r] / n as f64;
                }
            }
        }
        let cross = g.view((0, d1), (d1, d2));
        let err = (cross - acc).abs().max();
        // entries have variance ≤ 4, so 5 standard errors ≈ 0.0225
        assert!(err < 0.0225, "{err}");
        // the copula creates genuine dependence
        assert!(cross.abs().max() > 0.1);
    }

    #[test]
    fn mehler_cross_moments() {
        let model = hermite_model(6, 6);
        let law = DesignLaw::BivariateGaussian { rho: 0.5 };
        let g = population_gram(&model, &law, &IntegrationSpec { nodes_per_axis: 64, ..Default::default() }).unwrap();
        let d1 = model.d1();
        for j in 0..d1 {
            for k in 0..model.d2() {
                // V1 index j is degree j+1, V2 index k is degree k
                let expected = if k == j + 1 { 0.5f64.powi(k as i32) } else { 0.0 };
                assert!((g.matrix[(j, d1 + k)] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gaussian_linear_spaces() {
        let lin = UnivariateBasis::hermite(1, false);
        let model = SumspaceModel::new(
            ComponentSpace::univariate(0, lin, Centering::None),
            vec![ComponentSpace::univariate(1, lin, Centering::None)],
            ComponentSpace::univariate(0, lin, Centering::None),
        )
        .unwrap();
        let report = geometry(&model, &DesignLaw::BivariateGaussian { rho: 0.5 }, &IntegrationSpec::default()).unwrap();
        assert!((report.rho0 - 0.5).abs() < 1e-12);
        assert!((report.hs_norm - 0.5).abs() < 1e-12);
        assert!((report.hs_norm_sq - 0.25).abs() < 1e-12);
    }

    #[test]
    fn hermite_spectrum_is_geometric() {
        let model = hermite_model(5, 5);
        let g = population_gram(&model, &DesignLaw::BivariateGaussian { rho: 0.5 }, &IntegrationSpec::default()).unwrap();
        let spectrum = eigen_spectrum(&g.matrix, model.d1()).unwrap();
        for (k, a) in spectrum.iter().enumerate() {
            assert!((a - 0.25f64.powi(k as i32 + 1)).abs() < 1e-12, "{k}: {a}");
        }
    }

    #[test]
    fn independent_design_has_zero_angle_and_hs() {
        let model = additive_trig_model(3, 3, 2);
        let report = geometry(&model, &DesignLaw::IndependentUniform, &IntegrationSpec::default()).unwrap();
        assert!(report.rho0 < 1e-12);
        assert!(report.hs_norm < 1e-12);
        assert!(report.spectrum.iter().all(|a| a.abs() < 1e-12));
    }

    #[test]
    fn population_centering_removes_means() {
        // a copula keeps uniform marginals, so the constant-free system is
        // already mean zero under it
        let basis = UnivariateBasis::piecewise(2, 3, true).unwrap();
        let space = ComponentSpace::univariate(0, basis, Centering::Population);
        let law = DesignLaw::copula2(0.7);
        let moments = population_moments(&[&space], &law, &IntegrationSpec::default()).unwrap();
        let g = moments.centered_gram(&[0], &[&space]);
        assert_eq!(g.nrows(), 8);
        for m in moments.means(0) {
            assert!(m.abs() < 1e-10);
        }
    }

    #[test]
    fn containment_is_checked() {
        let v1 = ComponentSpace::univariate(0, UnivariateBasis::piecewise(1, 4, true).unwrap(), Centering::Population);
        let w1_ok = ComponentSpace::univariate(0, UnivariateBasis::piecewise(1, 2, true).unwrap(), Centering::Population);
        let w1_bad = ComponentSpace::univariate(0, UnivariateBasis::piecewise(1, 3, true).unwrap(), Centering::Population);
        let v2 = vec![ComponentSpace::univariate(1, trig(1), Centering::None)];
        assert!(SumspaceModel::new(v1.clone(), v2.clone(), w1_ok).is_ok());
        assert!(matches!(SumspaceModel::new(v1, v2, w1_bad), Err(Error::Config(_))));
    }

    #[test]
    fn overlapping_blocks_are_rejected() {
        let v1 = ComponentSpace::univariate(0, trig(2), Centering::Population);
        let v2 = vec![
            ComponentSpace::univariate(1, trig(2), Centering::Population),
            ComponentSpace::univariate(1, trig(2), Centering::None),
        ];
        assert!(SumspaceModel::new(v1.clone(), v2, v1).is_err());
    }

    #[test]
    fn two_constant_blocks_are_rejected() {
        let v1 = ComponentSpace::univariate(0, trig(2), Centering::Population);
        let v2 = vec![
            ComponentSpace::univariate(1, trig(2), Centering::None),
            ComponentSpace::univariate(2, trig(2), Centering::None),
        ];
        assert!(SumspaceModel::new(v1.clone(), v2, v1).is_err());
    }

    #[test]
    fn invalid_laws_are_rejected() {
        assert!(DesignLaw::BivariateGaussian { rho: 1.0 }.validate(2).is_err());
        assert!(DesignLaw::copula2(1.5).validate(2).is_err());
        let asym = DesignLaw::GaussianCopula {
            correlation: vec![vec![1.0, 0.2], vec![0.3, 1.0]],
        };
        assert!(asym.validate(2).is_err());
    }

    #[test]
    fn tensor_blocks_fall_back_to_monte_carlo() {
        let v1 = ComponentSpace::univariate(0, trig(1), Centering::Population);
        let v2 = vec![ComponentSpace::new(vec![1, 2], trig(1), Centering::None)];
        let model = SumspaceModel::new(v1.clone(), v2, v1).unwrap();
        let spec = IntegrationSpec {
            mc_samples: 40_000,
            ..Default::default()
        };
        let g = population_gram(&model, &DesignLaw::IndependentUniform, &spec).unwrap();
        assert_eq!(g.moments.method, IntegrationMethod::MonteCarlo);
        let err = (&g.matrix - DMatrix::identity(model.d(), model.d())).abs().max();
        assert!(err < 6.0 * g.moments.max_standard_error + 1e-12, "{err}");
        // seeded streams make the estimate reproducible
        let again = population_gram(&model, &DesignLaw::IndependentUniform, &spec).unwrap();
        assert_eq!(g.matrix, again.matrix);
    }

    #[test]
    fn model_round_trips_through_text() {
        let model = additive_trig_model(3, 2, 1);
        let text = toml::to_string(&model).unwrap();
        let back: SumspaceModel = toml::from_str(&text).unwrap();
        assert_eq!(model, back);
    }
}
