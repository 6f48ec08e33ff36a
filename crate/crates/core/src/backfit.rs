//! Alternating projections between the two empirical model blocks, with the
//! geometric convergence certificate, plus empirical angle and trace
//! diagnostics.

use crate::error::{Error, Result};
use crate::linalg::{self, orthonormal_columns};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

/// Empirical cosines at or above this are treated as collinear blocks.
pub const COLLINEARITY_LIMIT: f64 = 1.0 - 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackfitOptions {
    /// Stop once the distance of `v1` to its limit is certified below
    /// `tol · ‖v‖_n`, i.e. when the change in `v1` falls to
    /// `tol · (1 - ρ̂²) · ‖v‖_n`.
    pub tol: f64,
    pub max_iter: usize,
    /// Keep every `v1` iterate, for checking the convergence rate.
    pub record_history: bool,
}

impl Default for BackfitOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 10_000,
            record_history: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BackfitReport {
    /// Sweeps performed.
    pub iterations: usize,
    /// `‖Δv1‖_n` in the last sweep.
    pub final_gap: f64,
    /// Error bound `ρ̂^{2k+1}/(1-ρ̂²)·‖v‖_n` of the iterate preceding the
    /// final one, which also bounds `final_gap`.
    pub certified_bound: f64,
    pub empirical_rho: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct Backfit {
    pub v1: DVector<f64>,
    pub v2: DVector<f64>,
    pub report: BackfitReport,
    /// `v1` after sweeps 1, 2, … (iterate `k` sits at index `k`), when requested.
    pub history: Vec<DVector<f64>>,
}

fn empirical_norm(x: &DVector<f64>) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.norm() / (x.len() as f64).sqrt()
    }
}

fn project(q: &DMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    q * (q.tr_mul(x))
}

/// `ρ̂^{2k+1}/(1-ρ̂²)·‖v‖_n`, the distance bound for iterate `k`.
pub fn iterate_bound(rho: f64, k: usize, v_norm: f64) -> f64 {
    rho.powi(2 * k as i32 + 1) / (1.0 - rho * rho) * v_norm
}

fn rho_from_factors(q1: &DMatrix<f64>, q2: &DMatrix<f64>) -> f64 {
    linalg::spectral_norm(&q1.tr_mul(q2)).clamp(0.0, 1.0)
}

/// Cosine of the minimal angle between the column spaces of `z1` and `z2`
/// in the empirical inner product.
pub fn empirical_rho(z1: &DMatrix<f64>, z2: &DMatrix<f64>) -> Result<f64> {
    let q1 = orthonormal_columns(z1, "first")?;
    let q2 = orthonormal_columns(z2, "second")?;
    Ok(rho_from_factors(&q1, &q2))
}

/// Splits the least-squares fit of `v` on `[z1 z2]` into its two block
/// components by alternating projections, starting from `v2 = 0`.
pub fn backfit_decompose(z1: &DMatrix<f64>, z2: &DMatrix<f64>, v: &DVector<f64>, options: &BackfitOptions) -> Result<Backfit> {
    if z1.nrows() != v.len() || z2.nrows() != v.len() {
        return Err(Error::Dimension(format!(
            "blocks have {} and {} rows but v has {}",
            z1.nrows(),
            z2.nrows(),
            v.len()
        )));
    }
    let q1 = orthonormal_columns(z1, "first")?;
    let q2 = orthonormal_columns(z2, "second")?;
    let rho = rho_from_factors(&q1, &q2);
    if rho >= COLLINEARITY_LIMIT {
        return Err(Error::NonConvergence { rho });
    }
    let v_norm = empirical_norm(v);
    // the error of an iterate is at most its change divided by 1 - ρ̂²
    let threshold = options.tol * (1.0 - rho * rho) * v_norm;
    let n = v.len();
    let mut v1 = DVector::zeros(n);
    let mut v2 = DVector::zeros(n);
    let mut history = Vec::new();
    let mut gap = f64::INFINITY;
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < options.max_iter {
        sweeps += 1;
        let next = project(&q1, &(v - &v2));
        v2 = project(&q2, &(v - &next));
        gap = empirical_norm(&(&next - &v1));
        v1 = next;
        if options.record_history {
            history.push(v1.clone());
        }
        if sweeps > 1 && gap <= threshold {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!(
            "backfitting stopped after {sweeps} sweeps with gap {gap:.3e} (empirical rho {rho:.6})"
        );
    }
    let certified_bound = if sweeps >= 2 {
        iterate_bound(rho, sweeps - 2, v_norm)
    } else {
        f64::INFINITY
    };
    Ok(Backfit {
        v1,
        v2,
        report: BackfitReport {
            iterations: sweeps,
            final_gap: gap,
            certified_bound,
            empirical_rho: rho,
            converged,
        },
        history,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceDiagnostics {
    /// `tr(Π̂_{W1} Π̂_{V2})`.
    pub trace: f64,
    /// `‖Π̂_{V2} Π̂_{V1} Π̂_{V2}‖_op`.
    pub op_norm: f64,
    pub empirical_rho: f64,
    pub dim_w1: usize,
    /// `trace ≤ ρ̂² · dim W1` within `1e-10`.
    pub trace_bound_holds: bool,
    /// `op_norm ≤ ρ̂²` within `1e-10`.
    pub op_bound_holds: bool,
}

/// Trace and operator-norm diagnostics computed from thin orthonormal
/// factors, never forming an `n × n` hat matrix.
pub fn trace_diagnostics(zw: &DMatrix<f64>, z1: &DMatrix<f64>, z2: &DMatrix<f64>) -> Result<TraceDiagnostics> {
    let qw = orthonormal_columns(zw, "W1")?;
    let q1 = orthonormal_columns(z1, "first")?;
    let q2 = orthonormal_columns(z2, "second")?;
    let cross_w = qw.tr_mul(&q2);
    let trace = cross_w.iter().map(|v| v * v).sum::<f64>();
    let c = q1.tr_mul(&q2);
    let op_norm = if c.ncols() == 0 || c.nrows() == 0 {
        0.0
    } else {
        linalg::symmetric_op_norm(&c.tr_mul(&c))
    };
    let rho = rho_from_factors(&q1, &q2);
    let dim_w1 = zw.ncols();
    Ok(TraceDiagnostics {
        trace,
        op_norm,
        empirical_rho: rho,
        dim_w1,
        trace_bound_holds: trace <= rho * rho * dim_w1 as f64 + 1e-10,
        op_bound_holds: op_norm <= rho * rho + 1e-10,
    })
}

/// Checks `tr(AB) = tr(BA)`, `|tr(AB)| ≤ ‖A‖_F ‖B‖_F` and, for symmetric
/// positive semidefinite `B`, `|tr(AB)| ≤ ‖A‖_op tr(B)` on random pairs.
/// Returns the largest violation seen.
pub fn trace_inequalities_selftest(trials: usize, max_dim: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for _ in 0..trials {
        let d = rng.random_range(1..=max_dim.max(1));
        let a = DMatrix::<f64>::from_fn(d, d, |_, _| rng.sample(StandardNormal));
        let g = DMatrix::<f64>::from_fn(d, rng.random_range(1..=d), |_, _| rng.sample(StandardNormal));
        let b = &g * g.transpose();
        let ab = (&a * &b).trace();
        let ba = (&b * &a).trace();
        worst = worst.max((ab - ba).abs());
        worst = worst.max(ab.abs() - a.norm() * b.norm());
        worst = worst.max(ab.abs() - linalg::spectral_norm(&a) * b.trace());
    }
    worst.max(0.0)
}
