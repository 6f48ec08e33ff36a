//! Orthonormal function systems: trigonometric and piecewise-Legendre bases
//! on `[0, 1]`, normalized Hermite polynomials on the real line, and their
//! tensor products.
//!
//! Bases here are measure-agnostic: the trigonometric and piecewise systems
//! are orthonormal for Lebesgue measure on the unit interval and the Hermite
//! system for the standard normal law. Centering with respect to a design
//! law is handled by [`crate::sumspace`].

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, SQRT_2};

/// Number of equispaced points used for grid sup-norm estimates.
pub const SUP_GRID_POINTS: usize = 10_001;

/// `φ_0 = 1`, `φ_k = √2 cos(2πkx)` and `φ_{-k} = √2 sin(2πkx)` for `k ≥ 1`.
pub fn eval_trig(k: i64, x: f64) -> f64 {
    match k {
        0 => 1.0,
        k if k > 0 => SQRT_2 * (2.0 * PI * k as f64 * x).cos(),
        k => SQRT_2 * (2.0 * PI * (-k) as f64 * x).sin(),
    }
}

/// Orthonormal Legendre polynomial `√(2k+1) P_k(2t-1)` on `[0, 1]`, all
/// degrees up to `out.len() - 1`.
fn shifted_legendre_all(t: f64, out: &mut [f64]) {
    let s = 2.0 * t - 1.0;
    let mut p0 = 1.0;
    let mut p1 = s;
    for (k, slot) in out.iter_mut().enumerate() {
        let pk = match k {
            0 => 1.0,
            1 => s,
            _ => {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * s * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
                p2
            }
        };
        *slot = pk * ((2 * k + 1) as f64).sqrt();
    }
}

/// Cell of the partition `[i/m, (i+1)/m)` containing `x`; the last cell is closed.
fn cell_of(m: usize, x: f64) -> (usize, f64) {
    let scaled = x * m as f64;
    let cell = (scaled.floor().max(0.0) as usize).min(m - 1);
    (cell, scaled - cell as f64)
}

/// Member `j = cell·(r+1) + degree` of the piecewise Legendre system with
/// `m` equal cells and maximal degree `r`.
pub fn eval_piecewise(r: usize, m: usize, j: usize, x: f64) -> Result<f64> {
    let dim = (r + 1) * m;
    if m == 0 || j >= dim {
        return Err(Error::IndexOutOfRange { index: j, dim });
    }
    let (cell, t) = cell_of(m, x);
    let target_cell = j / (r + 1);
    if cell != target_cell {
        return Ok(0.0);
    }
    let degree = j % (r + 1);
    let mut values = vec![0.0; degree + 1];
    shifted_legendre_all(t, &mut values);
    Ok(values[degree] * (m as f64).sqrt())
}

/// Orthonormal Hermite polynomial `He_k(x) / √(k!)` for the standard normal law.
pub fn eval_hermite(k: usize, x: f64) -> f64 {
    let mut values = vec![0.0; k + 1];
    crate::quadrature::hermite_orthonormal(k, x, &mut values);
    values[k]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    UnitInterval,
    RealLine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisKind {
    Trigonometric { max_frequency: usize },
    PiecewisePolynomial { max_degree: usize, partitions: usize },
    Hermite { max_degree: usize },
}

/// A univariate orthonormal system.
///
/// Without the constant, the trigonometric and Hermite systems simply drop
/// their degree-zero member. The piecewise system replaces its `m` cell
/// indicators by `m - 1` orthonormal mean-zero step functions (Helmert
/// contrasts), so it stays orthonormal and spans the mean-zero part.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BasisSpec", into = "BasisSpec")]
pub struct UnivariateBasis {
    kind: BasisKind,
    include_constant: bool,
}

impl UnivariateBasis {
    pub fn trigonometric(max_frequency: usize, include_constant: bool) -> Self {
        Self {
            kind: BasisKind::Trigonometric { max_frequency },
            include_constant,
        }
    }

    pub fn piecewise(max_degree: usize, partitions: usize, include_constant: bool) -> Result<Self> {
        if partitions == 0 {
            return Err(Error::Config("piecewise basis needs at least one cell".into()));
        }
        Ok(Self {
            kind: BasisKind::PiecewisePolynomial {
                max_degree,
                partitions,
            },
            include_constant,
        })
    }

    pub fn hermite(max_degree: usize, include_constant: bool) -> Self {
        Self {
            kind: BasisKind::Hermite { max_degree },
            include_constant,
        }
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn include_constant(&self) -> bool {
        self.include_constant
    }

    pub fn with_constant(mut self, include_constant: bool) -> Self {
        self.include_constant = include_constant;
        self
    }

    pub fn dim(&self) -> usize {
        let full = match self.kind {
            BasisKind::Trigonometric { max_frequency } => 2 * max_frequency + 1,
            BasisKind::PiecewisePolynomial {
                max_degree,
                partitions,
            } => (max_degree + 1) * partitions,
            BasisKind::Hermite { max_degree } => max_degree + 1,
        };
        if self.include_constant {
            full
        } else {
            full - 1
        }
    }

    pub fn domain(&self) -> Domain {
        match self.kind {
            BasisKind::Hermite { .. } => Domain::RealLine,
            _ => Domain::UnitInterval,
        }
    }

    /// Frequency `k` of the `j`-th trigonometric function (`0, 1, -1, 2, -2, ...`).
    pub fn trig_frequency(&self, j: usize) -> Option<i64> {
        match self.kind {
            BasisKind::Trigonometric { .. } => {
                let shifted = if self.include_constant { j } else { j + 1 };
                if shifted == 0 {
                    Some(0)
                } else {
                    let k = shifted.div_ceil(2) as i64;
                    Some(if shifted % 2 == 1 { k } else { -k })
                }
            }
            _ => None,
        }
    }

    /// Panel breaks at which members may lose smoothness.
    pub fn breaks(&self) -> Vec<f64> {
        match self.kind {
            BasisKind::PiecewisePolynomial { partitions, .. } => {
                crate::quadrature::uniform_breaks(partitions)
            }
            _ => vec![0.0, 1.0],
        }
    }

    /// Polynomial degree (piecewise/Hermite) or frequency (trig) that a
    /// quadrature of products of two members must resolve.
    pub fn resolution(&self) -> usize {
        match self.kind {
            BasisKind::Trigonometric { max_frequency } => max_frequency,
            BasisKind::PiecewisePolynomial { max_degree, .. } => max_degree,
            BasisKind::Hermite { max_degree } => max_degree,
        }
    }

    pub fn eval(&self, j: usize, x: f64) -> Result<f64> {
        let d = self.dim();
        if j >= d {
            return Err(Error::IndexOutOfRange { index: j, dim: d });
        }
        let mut out = vec![0.0; d];
        self.eval_into(x, &mut out);
        Ok(out[j])
    }

    /// Evaluates every member at `x` into `out` (length [`Self::dim`]).
    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim());
        match self.kind {
            BasisKind::Trigonometric { max_frequency } => {
                let mut idx = 0;
                if self.include_constant {
                    out[0] = 1.0;
                    idx = 1;
                }
                let theta = 2.0 * PI * x;
                for k in 1..=max_frequency {
                    let (s, c) = (k as f64 * theta).sin_cos();
                    out[idx] = SQRT_2 * c;
                    out[idx + 1] = SQRT_2 * s;
                    idx += 2;
                }
            }
            BasisKind::PiecewisePolynomial {
                max_degree,
                partitions,
            } => {
                out.iter_mut().for_each(|v| *v = 0.0);
                let (cell, t) = cell_of(partitions, x);
                let root_m = (partitions as f64).sqrt();
                let mut legendre = vec![0.0; max_degree + 1];
                shifted_legendre_all(t, &mut legendre);
                if self.include_constant {
                    let base = cell * (max_degree + 1);
                    for (deg, &v) in legendre.iter().enumerate() {
                        out[base + deg] = v * root_m;
                    }
                } else {
                    let contrasts = partitions - 1;
                    for k in 1..=contrasts {
                        out[k - 1] = root_m * helmert(k, cell);
                    }
                    let base = contrasts + cell * max_degree;
                    for deg in 1..=max_degree {
                        out[base + deg - 1] = legendre[deg] * root_m;
                    }
                }
            }
            BasisKind::Hermite { max_degree } => {
                let mut values = vec![0.0; max_degree + 1];
                crate::quadrature::hermite_orthonormal(max_degree, x, &mut values);
                let skip = usize::from(!self.include_constant);
                out.copy_from_slice(&values[skip..]);
            }
        }
    }

    /// `Σ_j φ_j(x)²`.
    pub fn christoffel_sum(&self, x: f64) -> f64 {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(x, &mut out);
        out.iter().map(|v| v * v).sum()
    }
}

/// Entry `cell` of the `k`-th Helmert contrast, `k = 1..m-1`.
fn helmert(k: usize, cell: usize) -> f64 {
    let norm = ((k * (k + 1)) as f64).sqrt();
    if cell < k {
        1.0 / norm
    } else if cell == k {
        -(k as f64) / norm
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum KindTag {
    Trigonometric,
    PiecewisePolynomial,
    Hermite,
}

/// Structured-text form of a basis: `kind`, `m`, `r`, `include_constant`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BasisSpec {
    kind: KindTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    r: Option<usize>,
    #[serde(default = "default_true")]
    include_constant: bool,
}

fn default_true() -> bool {
    true
}

impl TryFrom<BasisSpec> for UnivariateBasis {
    type Error = Error;

    fn try_from(spec: BasisSpec) -> Result<Self> {
        let missing = |key: &str| Error::Config(format!("basis of kind {:?} needs `{key}`", spec.kind));
        match spec.kind {
            KindTag::Trigonometric => {
                if spec.r.is_some() {
                    return Err(Error::Config("trigonometric basis takes no `r`".into()));
                }
                let m = spec.m.ok_or_else(|| missing("m"))?;
                Ok(Self::trigonometric(m, spec.include_constant))
            }
            KindTag::PiecewisePolynomial => {
                let r = spec.r.ok_or_else(|| missing("r"))?;
                let m = spec.m.ok_or_else(|| missing("m"))?;
                Self::piecewise(r, m, spec.include_constant)
            }
            KindTag::Hermite => {
                if spec.m.is_some() {
                    return Err(Error::Config("hermite basis takes no `m`".into()));
                }
                let r = spec.r.ok_or_else(|| missing("r"))?;
                Ok(Self::hermite(r, spec.include_constant))
            }
        }
    }
}

impl From<UnivariateBasis> for BasisSpec {
    fn from(b: UnivariateBasis) -> Self {
        let (kind, m, r) = match b.kind {
            BasisKind::Trigonometric { max_frequency } => (KindTag::Trigonometric, Some(max_frequency), None),
            BasisKind::PiecewisePolynomial {
                max_degree,
                partitions,
            } => (KindTag::PiecewisePolynomial, Some(partitions), Some(max_degree)),
            BasisKind::Hermite { max_degree } => (KindTag::Hermite, None, Some(max_degree)),
        };
        BasisSpec {
            kind,
            m,
            r,
            include_constant: b.include_constant,
        }
    }
}

/// Tensor product of univariate systems over several covariates.
///
/// Each factor is used in "leading constant" form: member 0 is the constant
/// function and the rest is the factor's constant-free system. The index set
/// is the full product of factor indices, minus the all-zero multi-index when
/// the constant is excluded. For trigonometric factors of frequency `m` this
/// is exactly the set of `k ∈ ℤ^q` with `‖k‖_∞ ≤ m`.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorBasis {
    factors: Vec<UnivariateBasis>,
    include_constant: bool,
    index_set: Vec<Vec<usize>>,
}

impl TensorBasis {
    pub fn new(factors: Vec<UnivariateBasis>, include_constant: bool) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::Config("tensor basis needs at least one factor".into()));
        }
        let factors: Vec<_> = factors.into_iter().map(|f| f.with_constant(true)).collect();
        let dims: Vec<usize> = factors.iter().map(|f| f.dim()).collect();
        let mut index_set = vec![Vec::new()];
        for &d in &dims {
            index_set = index_set
                .into_iter()
                .flat_map(|prefix| {
                    (0..d).map(move |i| {
                        let mut next = prefix.clone();
                        next.push(i);
                        next
                    })
                })
                .collect();
        }
        if !include_constant {
            index_set.retain(|k| k.iter().any(|&i| i != 0));
        }
        Ok(Self {
            factors,
            include_constant,
            index_set,
        })
    }

    pub fn factors(&self) -> &[UnivariateBasis] {
        &self.factors
    }

    pub fn index_set(&self) -> &[Vec<usize>] {
        &self.index_set
    }

    pub fn include_constant(&self) -> bool {
        self.include_constant
    }

    pub fn dim(&self) -> usize {
        self.index_set.len()
    }

    /// Factor values in leading-constant form, one vector per axis.
    pub fn factor_values(&self, x: &[f64]) -> Vec<Vec<f64>> {
        self.factors
            .iter()
            .zip(x)
            .map(|(f, &xi)| {
                let free = f.with_constant(false);
                let mut v = vec![0.0; f.dim()];
                v[0] = 1.0;
                free.eval_into(xi, &mut v[1..]);
                v
            })
            .collect()
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let values = self.factor_values(x);
        for (slot, k) in out.iter_mut().zip(&self.index_set) {
            *slot = k.iter().zip(&values).map(|(&i, v)| v[i]).product();
        }
    }
}

/// A univariate or tensor-product system, evaluated on a slice of covariates.
#[derive(Debug, Clone, PartialEq)]
pub enum Basis {
    Univariate(UnivariateBasis),
    Tensor(TensorBasis),
}

impl Basis {
    pub fn dim(&self) -> usize {
        match self {
            Basis::Univariate(b) => b.dim(),
            Basis::Tensor(t) => t.dim(),
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            Basis::Univariate(_) => 1,
            Basis::Tensor(t) => t.factors.len(),
        }
    }

    pub fn include_constant(&self) -> bool {
        match self {
            Basis::Univariate(b) => b.include_constant(),
            Basis::Tensor(t) => t.include_constant,
        }
    }

    pub fn factors(&self) -> Vec<UnivariateBasis> {
        match self {
            Basis::Univariate(b) => vec![*b],
            Basis::Tensor(t) => t.factors.clone(),
        }
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Basis::Univariate(b) => b.eval_into(x[0], out),
            Basis::Tensor(t) => t.eval_into(x, out),
        }
    }
}

fn grid_sup<F: Fn(f64) -> f64>(f: F) -> f64 {
    (0..SUP_GRID_POINTS)
        .map(|i| f(i as f64 / (SUP_GRID_POINTS - 1) as f64))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `sup_x Σ_j φ_j(x)²` for a univariate system with its constant included.
fn christoffel_sup_with_constant(b: &UnivariateBasis) -> f64 {
    let with = b.with_constant(true);
    match b.kind() {
        BasisKind::Trigonometric { .. } => with.dim() as f64,
        BasisKind::PiecewisePolynomial { .. } => grid_sup(|x| with.christoffel_sum(x)),
        BasisKind::Hermite { .. } => f64::INFINITY,
    }
}

/// Analytic upper bound `(r+1)² m` on `sup Σφ_j²` for the piecewise system
/// including the constant.
fn piecewise_analytic_sup(b: &UnivariateBasis) -> Option<f64> {
    match b.kind() {
        BasisKind::PiecewisePolynomial {
            max_degree,
            partitions,
        } => Some(((max_degree + 1) * (max_degree + 1) * partitions) as f64),
        _ => None,
    }
}

/// Constant `φ` with `‖g‖_∞ ≤ φ √d ‖g‖_{L²(p)}` on the span, valid for any
/// design density `p ≥ c`.
///
/// Computed as `√(sup Σ φ_j² / (c d))`: analytically for trigonometric
/// systems (the sum is identically `d`), on a 10 001-point grid for piecewise
/// systems. Hermite systems are unbounded and yield `+∞`.
pub fn sup_norm_constant(basis: &Basis, density_lower_bound: f64) -> f64 {
    assert!(
        density_lower_bound > 0.0 && density_lower_bound <= 1.0,
        "density lower bound must lie in (0, 1]"
    );
    let d = basis.dim();
    if d == 0 {
        return 1.0 / density_lower_bound.sqrt();
    }
    let factors = basis.factors();
    let mut sup_with_constant = 1.0;
    let mut analytic = 1.0;
    for f in &factors {
        let grid = christoffel_sup_with_constant(f);
        sup_with_constant *= grid;
        analytic *= piecewise_analytic_sup(f).unwrap_or(grid);
    }
    if !sup_with_constant.is_finite() {
        return f64::INFINITY;
    }
    // For a single factor the constant-free system loses exactly the constant's
    // contribution 1 at every point; for tensors the same holds for the product.
    let sup = if basis.include_constant() {
        sup_with_constant
    } else {
        sup_with_constant - 1.0
    };
    let bound = if basis.include_constant() { analytic } else { analytic - 1.0 };
    debug_assert!(sup <= bound * (1.0 + 1e-12), "grid sup {sup} exceeds analytic bound {bound}");
    (sup.max(0.0) / (density_lower_bound * d as f64)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{gauss_legendre_composite, uniform_breaks};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lebesgue_gram(b: &UnivariateBasis) -> nalgebra::DMatrix<f64> {
        // ≥ 64 nodes per cell
        let cells = match b.kind() {
            BasisKind::PiecewisePolynomial { partitions, .. } => partitions,
            BasisKind::Trigonometric { max_frequency } => 1 + max_frequency / 8,
            BasisKind::Hermite { .. } => unreachable!(),
        };
        let rule = gauss_legendre_composite(&uniform_breaks(cells), 64);
        let d = b.dim();
        let mut g = nalgebra::DMatrix::zeros(d, d);
        let mut v = vec![0.0; d];
        for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
            b.eval_into(x, &mut v);
            for i in 0..d {
                for j in 0..d {
                    g[(i, j)] += w * v[i] * v[j];
                }
            }
        }
        g
    }

    #[test]
    fn trig_examples() {
        assert_eq!(eval_trig(0, 0.37), 1.0);
        assert!(eval_trig(1, 0.25).abs() < 1e-15);
        assert!((eval_trig(-1, 0.25) - SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn piecewise_examples() {
        assert!((eval_piecewise(0, 1, 0, 0.9).unwrap() - 1.0).abs() < 1e-15);
        assert!((eval_piecewise(0, 2, 0, 0.3).unwrap() - SQRT_2).abs() < 1e-15);
        assert!((eval_piecewise(1, 1, 1, 1.0).unwrap() - 3f64.sqrt()).abs() < 1e-15);
        // knot belongs to the right cell, 1 to the last cell
        assert_eq!(eval_piecewise(0, 2, 0, 0.5).unwrap(), 0.0);
        assert!(eval_piecewise(0, 2, 1, 1.0).unwrap() > 0.0);
    }

    #[test]
    fn piecewise_index_out_of_range() {
        assert!(matches!(
            eval_piecewise(1, 2, 4, 0.5),
            Err(Error::IndexOutOfRange { index: 4, dim: 4 })
        ));
    }

    #[test]
    fn dimensions_follow_the_counting_rules() {
        assert_eq!(UnivariateBasis::trigonometric(3, true).dim(), 7);
        assert_eq!(UnivariateBasis::trigonometric(3, false).dim(), 6);
        assert_eq!(UnivariateBasis::piecewise(2, 4, true).unwrap().dim(), 12);
        assert_eq!(UnivariateBasis::piecewise(2, 4, false).unwrap().dim(), 11);
        let t = TensorBasis::new(vec![UnivariateBasis::trigonometric(2, true); 2], false).unwrap();
        assert_eq!(t.dim(), 24);
    }

    #[test]
    fn lebesgue_gram_is_identity() {
        let bases = [
            UnivariateBasis::trigonometric(0, true),
            UnivariateBasis::trigonometric(12, true),
            UnivariateBasis::trigonometric(7, false),
            UnivariateBasis::piecewise(0, 5, true).unwrap(),
            UnivariateBasis::piecewise(3, 4, true).unwrap(),
            UnivariateBasis::piecewise(4, 3, false).unwrap(),
            UnivariateBasis::piecewise(2, 1, false).unwrap(),
        ];
        for b in bases {
            let g = lebesgue_gram(&b);
            let err = (g - nalgebra::DMatrix::identity(b.dim(), b.dim())).abs().max();
            assert!(err < 1e-10, "{b:?}: {err}");
        }
    }

    #[test]
    fn constant_free_piecewise_is_mean_zero() {
        let b = UnivariateBasis::piecewise(2, 5, false).unwrap();
        let rule = gauss_legendre_composite(&uniform_breaks(5), 64);
        for j in 0..b.dim() {
            let mean = rule.integrate(|x| b.eval(j, x).unwrap());
            assert!(mean.abs() < 1e-12);
        }
    }

    #[test]
    fn trig_frequency_ordering() {
        let b = UnivariateBasis::trigonometric(2, true);
        let ks: Vec<_> = (0..5).map(|j| b.trig_frequency(j).unwrap()).collect();
        assert_eq!(ks, vec![0, 1, -1, 2, -2]);
        let b = UnivariateBasis::trigonometric(2, false);
        let ks: Vec<_> = (0..4).map(|j| b.trig_frequency(j).unwrap()).collect();
        assert_eq!(ks, vec![1, -1, 2, -2]);
        for j in 0..4 {
            let x = 0.123;
            assert!((b.eval(j, x).unwrap() - eval_trig(ks[j], x)).abs() < 1e-14);
        }
    }

    #[test]
    fn hermite_recurrence_matches_closed_forms() {
        let x: f64 = 1.7;
        assert!((eval_hermite(2, x) - (x * x - 1.0) / 2f64.sqrt()).abs() < 1e-14);
        assert!((eval_hermite(3, x) - (x.powi(3) - 3.0 * x) / 6f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn sup_norm_examples() {
        let trig = Basis::Univariate(UnivariateBasis::trigonometric(3, true));
        assert!((sup_norm_constant(&trig, 1.0) - 1.0).abs() < 1e-12);
        let pw = Basis::Univariate(UnivariateBasis::piecewise(0, 4, true).unwrap());
        assert!((sup_norm_constant(&pw, 1.0) - 1.0).abs() < 1e-12);
        let pw = Basis::Univariate(UnivariateBasis::piecewise(1, 2, true).unwrap());
        let phi = sup_norm_constant(&pw, 0.5);
        assert!(phi <= 2.0 + 1e-12, "{phi}");
        assert!(phi >= 1.0);
    }

    #[test]
    fn sup_norm_bound_holds_for_random_members() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cases = [
            UnivariateBasis::trigonometric(4, true),
            UnivariateBasis::piecewise(2, 3, true).unwrap(),
            UnivariateBasis::piecewise(1, 4, false).unwrap(),
        ];
        let grid: Vec<f64> = (0..SUP_GRID_POINTS)
            .map(|i| i as f64 / (SUP_GRID_POINTS - 1) as f64)
            .collect();
        for b in cases {
            let d = b.dim();
            let phi = sup_norm_constant(&Basis::Univariate(b), 1.0);
            let values: Vec<Vec<f64>> = grid
                .iter()
                .map(|&x| {
                    let mut v = vec![0.0; d];
                    b.eval_into(x, &mut v);
                    v
                })
                .collect();
            for _ in 0..1000 {
                let coef: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                let l2 = coef.iter().map(|c| c * c).sum::<f64>().sqrt();
                let sup = values
                    .iter()
                    .map(|v| v.iter().zip(&coef).map(|(a, b)| a * b).sum::<f64>().abs())
                    .fold(0.0, f64::max);
                assert!(sup <= phi * (d as f64).sqrt() * l2 * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn trig_sup_norm_bound_is_attained() {
        let b = UnivariateBasis::trigonometric(3, true);
        let d = b.dim();
        let x0 = 0.3;
        let mut at_x0 = vec![0.0; d];
        b.eval_into(x0, &mut at_x0);
        let l2 = at_x0.iter().map(|c| c * c).sum::<f64>().sqrt();
        let mut v = vec![0.0; d];
        b.eval_into(x0, &mut v);
        let g_x0: f64 = v.iter().zip(&at_x0).map(|(a, b)| a * b).sum();
        let phi = sup_norm_constant(&Basis::Univariate(b), 1.0);
        assert!((g_x0 - phi * (d as f64).sqrt() * l2).abs() < 1e-12);
    }

    #[test]
    fn tensor_evaluation_factorizes() {
        let f = UnivariateBasis::trigonometric(2, true);
        let t = TensorBasis::new(vec![f, f], false).unwrap();
        let x = [0.21, 0.77];
        let mut out = vec![0.0; t.dim()];
        t.eval_into(&x, &mut out);
        for (k, v) in t.index_set().iter().zip(&out) {
            let a = eval_trig(f.trig_frequency(k[0]).unwrap(), x[0]);
            let b = eval_trig(f.trig_frequency(k[1]).unwrap(), x[1]);
            assert_eq!(*v, a * b);
        }
    }

    #[test]
    fn basis_spec_round_trips_and_rejects_unknown_keys() {
        let b = UnivariateBasis::piecewise(1, 4, false).unwrap();
        let text = toml::to_string(&b).unwrap();
        let back: UnivariateBasis = toml::from_str(&text).unwrap();
        assert_eq!(b, back);
        let bad = "kind = \"trigonometric\"\nm = 3\nfreq = 2\n";
        assert!(toml::from_str::<UnivariateBasis>(bad).is_err());
        let trig: UnivariateBasis = toml::from_str("kind = \"trigonometric\"\nm = 3\n").unwrap();
        assert_eq!(trig, UnivariateBasis::trigonometric(3, true));
    }
}
