//! Python bindings for `addsieve`.
//!
//! Configurations are passed as TOML text, matrices as lists of rows.

use addsieve::backfit::{backfit_decompose, BackfitOptions};
use addsieve::estimator::PreparedEstimator;
use addsieve::harness::{self, parse_config_str, ExperimentConfig};
use addsieve::sim::{self, ScenarioConfig};
use addsieve::sumspace;
use addsieve::{Dataset, EstimatorConfig, FitResult};
use nalgebra::{DMatrix, DVector};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(addsieve_py, ConfigError, PyException);
create_exception!(addsieve_py, NumericalError, PyException);

fn to_py(e: addsieve::Error) -> PyErr {
    if e.is_numerical() {
        NumericalError::new_err(e.to_string())
    } else {
        ConfigError::new_err(e.to_string())
    }
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(ConfigError::new_err("rows have different lengths"));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Population geometry of a model described by an estimator configuration.
#[pyclass(get_all, frozen)]
struct Geometry {
    rho0: f64,
    rho0_w1: f64,
    hs_norm: f64,
    hs_norm_sq: f64,
    spectrum: Vec<f64>,
    gram_condition: f64,
    v2_min_normalized_eigenvalue: f64,
    d1: usize,
    d2: usize,
    dim_w1: usize,
    max_standard_error: f64,
}

#[pymethods]
impl Geometry {
    fn __repr__(&self) -> String {
        format!(
            "Geometry(rho0={:.6}, hs_norm_sq={:.6}, d1={}, d2={}, dim_w1={})",
            self.rho0, self.hs_norm_sq, self.d1, self.d2, self.dim_w1
        )
    }
}

#[pyfunction]
fn geometry(config: &str) -> PyResult<Geometry> {
    let c: EstimatorConfig = parse_config_str(config).map_err(to_py)?;
    let r = sumspace::geometry(&c.model, &c.design_law, &c.integration).map_err(to_py)?;
    Ok(Geometry {
        rho0: r.rho0,
        rho0_w1: r.rho0_w1,
        hs_norm: r.hs_norm,
        hs_norm_sq: r.hs_norm_sq,
        spectrum: r.spectrum,
        gram_condition: r.gram_condition,
        v2_min_normalized_eigenvalue: r.v2_min_normalized_eigenvalue,
        d1: r.d1,
        d2: r.d2,
        dim_w1: r.dim_w1,
        max_standard_error: r.max_standard_error,
    })
}

/// Cosine of the minimal angle between the first `d1` coordinates and the
/// rest, for a Gram matrix of `[V1 | V2]`.
#[pyfunction]
fn minimal_angle(gram: Vec<Vec<f64>>, d1: usize) -> PyResult<f64> {
    sumspace::minimal_angle(&matrix(&gram)?, d1).map_err(to_py)
}

#[pyfunction]
fn hs_norm(gram: Vec<Vec<f64>>, dim_w1: usize) -> PyResult<f64> {
    sumspace::hs_norm(&matrix(&gram)?, dim_w1).map_err(to_py)
}

#[pyfunction]
fn empirical_rho(z1: Vec<Vec<f64>>, z2: Vec<Vec<f64>>) -> PyResult<f64> {
    addsieve::backfit::empirical_rho(&matrix(&z1)?, &matrix(&z2)?).map_err(to_py)
}

/// Alternating projections of `v` onto the two column spaces; returns
/// `(v1, v2, iterations, empirical_rho)`.
#[pyfunction]
#[pyo3(signature = (z1, z2, v, tol = 1e-10, max_iter = 10_000))]
fn backfit(z1: Vec<Vec<f64>>, z2: Vec<Vec<f64>>, v: Vec<f64>, tol: f64, max_iter: usize) -> PyResult<(Vec<f64>, Vec<f64>, usize, f64)> {
    let options = BackfitOptions {
        tol,
        max_iter,
        record_history: false,
    };
    let out = backfit_decompose(&matrix(&z1)?, &matrix(&z2)?, &DVector::from_vec(v), &options).map_err(to_py)?;
    Ok((
        out.v1.iter().copied().collect(),
        out.v2.iter().copied().collect(),
        out.report.iterations,
        out.report.empirical_rho,
    ))
}

#[pyclass(frozen)]
struct Fit {
    inner: FitResult,
}

#[pymethods]
impl Fit {
    #[getter]
    fn beta_v1(&self) -> Vec<f64> {
        self.inner.beta_v1.clone()
    }
    #[getter]
    fn beta_v2(&self) -> Vec<f64> {
        self.inner.beta_v2.clone()
    }
    #[getter]
    fn beta_w1(&self) -> Vec<f64> {
        self.inner.beta_w1.clone()
    }
    #[getter]
    fn truncated(&self) -> bool {
        self.inner.truncated
    }
    #[getter]
    fn edelta_holds(&self) -> bool {
        self.inner.edelta_holds
    }
    #[getter]
    fn gram_deviation(&self) -> f64 {
        self.inner.gram_deviation
    }
    #[getter]
    fn empirical_rho(&self) -> f64 {
        self.inner.empirical_rho
    }

    /// The estimate at points given as rows over the target's covariates,
    /// or as plain numbers for a univariate target.
    fn evaluate(&self, points: Bound<'_, PyAny>) -> PyResult<Vec<f64>> {
        if let Ok(xs) = points.extract::<Vec<f64>>() {
            return Ok(self.inner.evaluate_at(&xs));
        }
        let rows: Vec<Vec<f64>> = points.extract()?;
        Ok(self.inner.evaluate(&matrix(&rows)?))
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_text().map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "Fit(dim_w1={}, truncated={}, edelta_holds={}, empirical_rho={:.4})",
            self.inner.beta_w1.len(),
            self.inner.truncated,
            self.inner.edelta_holds,
            self.inner.empirical_rho
        )
    }
}

/// Two-stage estimator with its population quantities computed once.
#[pyclass(frozen)]
struct Estimator {
    inner: PreparedEstimator,
}

#[pymethods]
impl Estimator {
    #[new]
    fn new(config: &str) -> PyResult<Self> {
        let c: EstimatorConfig = parse_config_str(config).map_err(to_py)?;
        Ok(Self {
            inner: PreparedEstimator::new(c).map_err(to_py)?,
        })
    }

    fn fit(&self, x: Vec<Vec<f64>>, y: Vec<f64>) -> PyResult<Fit> {
        let data = Dataset::new(matrix(&x)?, DVector::from_vec(y)).map_err(to_py)?;
        Ok(Fit {
            inner: self.inner.fit(&data).map_err(to_py)?,
        })
    }

    /// The benchmark estimator with `V2` removed.
    fn oracle(&self) -> PyResult<Estimator> {
        Ok(Estimator {
            inner: self.inner.oracle().map_err(to_py)?,
        })
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.model().d()
    }
}

/// One simulated dataset `(x, y)` from a scenario table.
#[pyfunction]
fn simulate(scenario: &str, n: usize, replication: u64) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
    let s: ScenarioConfig = parse_config_str(scenario).map_err(to_py)?;
    s.validate().map_err(to_py)?;
    let truth = s.truth().map_err(to_py)?;
    let rep = sim::generate(&s, &truth, n, replication).map_err(to_py)?;
    Ok((rows_of(&rep.data.x), rep.data.y.iter().copied().collect()))
}

/// Runs a full risk experiment. Returns a dict with the scenario hash,
/// per-replication rows, aggregates and (with at least four sample sizes)
/// the rate fit.
#[pyfunction]
fn simulate_risk<'py>(py: Python<'py>, config: &str) -> PyResult<Bound<'py, PyDict>> {
    let c: ExperimentConfig = parse_config_str(config).map_err(to_py)?;
    let report = py.detach(|| harness::run_risk_experiment(&c)).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("scenario_hash", &report.scenario_hash)?;
    let rows = report
        .rows
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("n", r.n)?;
            d.set_item("replication", r.replication)?;
            d.set_item("risk", r.risk)?;
            d.set_item("oracle_risk", r.oracle_risk)?;
            d.set_item("edelta", r.edelta)?;
            d.set_item("truncated", r.truncated)?;
            d.set_item("rho_hat", r.rho_hat)?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    out.set_item("rows", rows)?;
    let aggregates = report
        .aggregates
        .iter()
        .map(|a| {
            let d = PyDict::new(py);
            d.set_item("n", a.n)?;
            d.set_item("mean_risk", a.mean_risk)?;
            d.set_item("standard_error", a.standard_error)?;
            d.set_item("oracle_mean_risk", a.oracle_mean_risk)?;
            d.set_item("truncated", a.truncated)?;
            d.set_item("edelta_failures", a.edelta_failures)?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    out.set_item("aggregates", aggregates)?;
    if report.aggregates.len() >= 4 {
        if let Ok(fit) = harness::fit_rate(&report, Some(c.scenario.alpha1)) {
            out.set_item("slope", fit.slope)?;
            out.set_item("r_squared", fit.r_squared)?;
            out.set_item("theoretical_slope", fit.theoretical_slope)?;
        }
    }
    Ok(out)
}

/// Least-squares slope, intercept and r² of log risk against log n.
#[pyfunction]
fn fit_rate(points: Vec<(usize, f64)>) -> PyResult<(f64, f64, f64)> {
    let fit = harness::fit_rate_points(&points, None).map_err(to_py)?;
    Ok((fit.slope, fit.intercept, fit.r_squared))
}

#[pymodule]
fn addsieve_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("ConfigError", m.py().get_type::<ConfigError>())?;
    m.add("NumericalError", m.py().get_type::<NumericalError>())?;
    m.add_class::<Geometry>()?;
    m.add_class::<Estimator>()?;
    m.add_class::<Fit>()?;
    m.add_function(wrap_pyfunction!(geometry, m)?)?;
    m.add_function(wrap_pyfunction!(minimal_angle, m)?)?;
    m.add_function(wrap_pyfunction!(hs_norm, m)?)?;
    m.add_function(wrap_pyfunction!(empirical_rho, m)?)?;
    m.add_function(wrap_pyfunction!(backfit, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_risk, m)?)?;
    m.add_function(wrap_pyfunction!(fit_rate, m)?)?;
    Ok(())
}
