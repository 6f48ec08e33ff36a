//! Synthetic scenarios: smooth truth functions in the trigonometric scale,
//! dependent designs with uniform marginals, and additive responses with
//! Gaussian noise.

use crate::error::{Error, Result};
use crate::estimator::Dataset;
use crate::sumspace::DesignLaw;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, SQRT_2};

/// Default highest frequency of generated truth functions.
pub const DEFAULT_K_MAX: usize = 512;

/// Grid size for Hölder seminorm certificates.
pub const HOLDER_GRID: usize = 1025;

/// `θ_0 + Σ_k √2 (a_k cos(2πkx) + b_k sin(2πkx))`, i.e. coefficients on the
/// orthonormal trigonometric system with `a_k = θ_k`, `b_k = θ_{-k}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrigSeries {
    pub constant: f64,
    pub cos: Vec<f64>,
    pub sin: Vec<f64>,
}

impl TrigSeries {
    pub fn zero() -> Self {
        Self {
            constant: 0.0,
            cos: Vec::new(),
            sin: Vec::new(),
        }
    }

    pub fn max_frequency(&self) -> usize {
        self.cos.len().max(self.sin.len())
    }

    /// `Σ_{k≠0} |k|^{2α} θ_k²`.
    pub fn sobolev_sum(&self, alpha: f64) -> f64 {
        let term = |c: &[f64]| -> f64 {
            c.iter()
                .enumerate()
                .map(|(i, t)| ((i + 1) as f64).powf(2.0 * alpha) * t * t)
                .sum()
        };
        term(&self.cos) + term(&self.sin)
    }

    /// `‖f‖²` in `L²([0, 1])`.
    pub fn l2_norm_sq(&self) -> f64 {
        self.constant * self.constant
            + self.cos.iter().map(|t| t * t).sum::<f64>()
            + self.sin.iter().map(|t| t * t).sum::<f64>()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            constant: c * self.constant,
            cos: self.cos.iter().map(|t| c * t).collect(),
            sin: self.sin.iter().map(|t| c * t).collect(),
        }
    }

    /// Evaluates by rotating `(cos 2πkx, sin 2πkx)` one frequency at a time.
    pub fn eval(&self, x: f64) -> f64 {
        let (s1, c1) = (2.0 * PI * x).sin_cos();
        let (mut c, mut s) = (c1, s1);
        let mut acc = 0.0;
        for k in 0..self.max_frequency() {
            if k > 0 && k % 64 == 0 {
                // refresh to keep the recurrence from drifting
                let (sk, ck) = (2.0 * PI * (k + 1) as f64 * x).sin_cos();
                c = ck;
                s = sk;
            }
            let a = self.cos.get(k).copied().unwrap_or(0.0);
            let b = self.sin.get(k).copied().unwrap_or(0.0);
            acc += a * c + b * s;
            let next_c = c * c1 - s * s1;
            s = s * c1 + c * s1;
            c = next_c;
        }
        self.constant + SQRT_2 * acc
    }

    /// `ℓ`-th derivative.
    pub fn derivative(&self, order: usize) -> Self {
        let mut cos = vec![0.0; self.max_frequency()];
        let mut sin = vec![0.0; self.max_frequency()];
        for k in 0..self.max_frequency() {
            let w = 2.0 * PI * (k + 1) as f64;
            let (mut a, mut b) = (
                self.cos.get(k).copied().unwrap_or(0.0),
                self.sin.get(k).copied().unwrap_or(0.0),
            );
            for _ in 0..order {
                // d/dx (a cos + b sin) = w (b cos - a sin)
                let (na, nb) = (w * b, -w * a);
                a = na;
                b = nb;
            }
            cos[k] = a;
            sin[k] = b;
        }
        Self {
            constant: if order == 0 { self.constant } else { 0.0 },
            cos,
            sin,
        }
    }
}

fn random_signs(count: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect()
}

/// Sobolev-ball member on the boundary: `θ_k = s_k A |k|^{-(α+1/2+η)}` for
/// `1 ≤ |k| ≤ k_max`, with `A` chosen so that `Σ |k|^{2α} θ_k² = K²`.
pub fn make_sobolev_function(alpha: f64, k: f64, eta: f64, sign_seed: u64, k_max: usize) -> Result<TrigSeries> {
    if !(alpha > 0.0 && k >= 0.0 && eta > 0.0) || k_max == 0 {
        return Err(Error::Config(format!(
            "Sobolev recipe needs alpha > 0, K ≥ 0, eta > 0 and k_max ≥ 1 (got {alpha}, {k}, {eta}, {k_max})"
        )));
    }
    let exponent = alpha + 0.5 + eta;
    let norm: f64 = 2.0 * (1..=k_max).map(|j| (j as f64).powf(-1.0 - 2.0 * eta)).sum::<f64>();
    let amplitude = k / norm.sqrt();
    let signs = random_signs(2 * k_max, sign_seed);
    let profile = |j: usize| amplitude * (j as f64).powf(-exponent);
    Ok(TrigSeries {
        constant: 0.0,
        cos: (1..=k_max).map(|j| signs[2 * j - 2] * profile(j)).collect(),
        sin: (1..=k_max).map(|j| signs[2 * j - 1] * profile(j)).collect(),
    })
}

/// A single frequency with `Σ |k|^{2α} θ_k² = K²`.
pub fn make_spike(alpha: f64, k: f64, frequency: usize) -> TrigSeries {
    let mut cos = vec![0.0; frequency];
    if frequency > 0 {
        cos[frequency - 1] = k * (frequency as f64).powf(-alpha);
    }
    TrigSeries {
        constant: 0.0,
        cos,
        sin: Vec::new(),
    }
}

/// Grid estimate of the Hölder seminorm of order `alpha` of `f`:
/// `sup |f^{(ℓ)}(x) - f^{(ℓ)}(y)| / |x - y|^β` with `ℓ + β = alpha`,
/// `0 < β ≤ 1`, where `derivative(x)` returns `f^{(ℓ)}(x)`.
pub fn holder_seminorm<F: Fn(f64) -> f64>(derivative: F, alpha: f64, grid: usize) -> f64 {
    let order = (alpha.ceil() - 1.0).max(0.0);
    let beta = alpha - order;
    let xs: Vec<f64> = (0..grid).map(|i| i as f64 / (grid - 1) as f64).collect();
    let values: Vec<f64> = xs.iter().map(|&x| derivative(x)).collect();
    let mut sup = 0.0_f64;
    for i in 0..grid {
        for j in (i + 1)..grid {
            let q = (values[j] - values[i]).abs() / (xs[j] - xs[i]).powf(beta);
            sup = sup.max(q);
        }
    }
    sup
}

/// Derivative order `ℓ` used by the Hölder seminorm of order `alpha`.
pub fn holder_order(alpha: f64) -> usize {
    (alpha.ceil() - 1.0).max(0.0) as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderFunction {
    pub series: TrigSeries,
    /// Grid estimate of the seminorm; at most `K` by construction.
    pub seminorm: f64,
}

/// Trigonometric surrogate for a Hölder-ball member: coefficients decay as
/// `|k|^{-(α+1+η)}`, rescaled so the grid seminorm equals `K`.
pub fn make_holder_function(alpha: f64, k: f64, eta: f64, seed: u64, k_max: usize) -> Result<HolderFunction> {
    if !(alpha > 0.0 && k >= 0.0 && eta > 0.0) {
        return Err(Error::Config("Hölder recipe needs alpha > 0, K ≥ 0, eta > 0".into()));
    }
    if k == 0.0 {
        return Ok(HolderFunction {
            series: TrigSeries::zero(),
            seminorm: 0.0,
        });
    }
    let signs = random_signs(2 * k_max, seed);
    let exponent = alpha + 1.0 + eta;
    let raw = TrigSeries {
        constant: 0.0,
        cos: (1..=k_max).map(|j| signs[2 * j - 2] * (j as f64).powf(-exponent)).collect(),
        sin: (1..=k_max).map(|j| signs[2 * j - 1] * (j as f64).powf(-exponent)).collect(),
    };
    let d = raw.derivative(holder_order(alpha));
    let seminorm = holder_seminorm(|x| d.eval(x), alpha, HOLDER_GRID);
    let series = raw.scaled(k / seminorm);
    Ok(HolderFunction { series, seminorm: k })
}

/// How a truth function is generated from the scenario's `(α, K)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionRecipe {
    Sobolev {
        #[serde(default = "default_eta")]
        eta: f64,
        #[serde(default = "default_k_max")]
        k_max: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sign_seed: Option<u64>,
    },
    Holder {
        #[serde(default = "default_eta")]
        eta: f64,
        #[serde(default = "default_k_max")]
        k_max: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sign_seed: Option<u64>,
    },
    Spike {
        frequency: usize,
    },
    Zero,
    Coefficients {
        #[serde(default)]
        cos: Vec<f64>,
        #[serde(default)]
        sin: Vec<f64>,
    },
}

fn default_eta() -> f64 {
    0.01
}

fn default_k_max() -> usize {
    DEFAULT_K_MAX
}

impl Default for FunctionRecipe {
    fn default() -> Self {
        FunctionRecipe::Sobolev {
            eta: default_eta(),
            k_max: default_k_max(),
            sign_seed: None,
        }
    }
}

impl FunctionRecipe {
    pub fn build(&self, alpha: f64, k: f64, default_seed: u64) -> Result<TrigSeries> {
        match self {
            FunctionRecipe::Sobolev { eta, k_max, sign_seed } => {
                make_sobolev_function(alpha, k, *eta, sign_seed.unwrap_or(default_seed), *k_max)
            }
            FunctionRecipe::Holder { eta, k_max, sign_seed } => {
                Ok(make_holder_function(alpha, k, *eta, sign_seed.unwrap_or(default_seed), *k_max)?.series)
            }
            FunctionRecipe::Spike { frequency } => Ok(make_spike(alpha, k, *frequency)),
            FunctionRecipe::Zero => Ok(TrigSeries::zero()),
            FunctionRecipe::Coefficients { cos, sin } => Ok(TrigSeries {
                constant: 0.0,
                cos: cos.clone(),
                sin: sin.clone(),
            }),
        }
    }
}

fn default_f2() -> Vec<FunctionRecipe> {
    vec![FunctionRecipe::default()]
}

/// A simulation scenario: `Y = f1(X_1) + Σ_{j=2}^q f_{2j}(X_j) + σ ξ`.
///
/// Covariate 0 carries the target; covariates `1..q` the nuisance
/// components. `f2` lists one recipe per nuisance component, or a single
/// recipe used for all of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub q: usize,
    #[serde(default)]
    pub design: DesignLaw,
    pub alpha1: f64,
    pub alpha2: f64,
    #[serde(default = "one")]
    pub k1: f64,
    #[serde(default = "one")]
    pub k2: f64,
    pub sigma: f64,
    #[serde(default)]
    pub f1: FunctionRecipe,
    #[serde(default = "default_f2")]
    pub f2: Vec<FunctionRecipe>,
    #[serde(default)]
    pub base_seed: u64,
    /// Seed from which default sign patterns of the truth are derived.
    #[serde(default)]
    pub truth_seed: u64,
}

fn one() -> f64 {
    1.0
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.q < 2 {
            return Err(Error::Config(format!("q must be at least 2, got {}", self.q)));
        }
        if !(self.alpha1 > 0.0 && self.alpha2 > 0.0) {
            return Err(Error::Config("smoothness indices must be positive".into()));
        }
        if !(self.k1 > 0.0 && self.k2 > 0.0) {
            return Err(Error::Config("radii K1, K2 must be positive".into()));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::Config("sigma must be non-negative".into()));
        }
        if self.f2.len() != 1 && self.f2.len() != self.q - 1 {
            return Err(Error::Config(format!(
                "f2 needs 1 or {} recipes, got {}",
                self.q - 1,
                self.f2.len()
            )));
        }
        self.design.validate(self.q)?;
        Ok(())
    }

    pub fn truth(&self) -> Result<TruthFunctions> {
        self.validate()?;
        let base = self.truth_seed.wrapping_mul(1_000);
        let f1 = self.f1.build(self.alpha1, self.k1, base)?;
        let f2 = (0..self.q - 1)
            .map(|j| {
                let recipe = if self.f2.len() == 1 { &self.f2[0] } else { &self.f2[j] };
                recipe.build(self.alpha2, self.k2, base + 1 + j as u64)
            })
            .collect::<Result<_>>()?;
        Ok(TruthFunctions { f1, f2 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFunctions {
    pub f1: TrigSeries,
    pub f2: Vec<TrigSeries>,
}

impl TruthFunctions {
    /// `Σ_j f_{2j}(x_{j+1})` for one design row.
    pub fn nuisance(&self, row: &[f64]) -> f64 {
        self.f2.iter().zip(&row[1..]).map(|(f, &x)| f.eval(x)).sum()
    }
}

/// Deterministic design draw.
pub fn sample_design(law: &DesignLaw, n: usize, q: usize, seed: u64) -> Result<DMatrix<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    law.sample(n, q, &mut rng)
}

/// One simulated data set together with the truth evaluated on it.
#[derive(Debug, Clone)]
pub struct Replicate {
    pub data: Dataset,
    pub f1_values: DVector<f64>,
    pub f2_values: DVector<f64>,
}

impl Replicate {
    /// `Y - f2(X2)`, the responses the oracle sees.
    pub fn without_nuisance(&self) -> Result<Dataset> {
        self.data.with_response(&self.data.y - &self.f2_values)
    }
}

/// Replication `r` at sample size `n`: seeded with `base_seed + r` on
/// stream `n`, so every (n, r) pair is reproducible on its own.
pub fn generate(config: &ScenarioConfig, truth: &TruthFunctions, n: usize, replication: u64) -> Result<Replicate> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.base_seed.wrapping_add(replication));
    rng.set_stream(n as u64);
    let x = config.design.sample(n, config.q, &mut rng)?;
    let mut f1_values = DVector::zeros(n);
    let mut f2_values = DVector::zeros(n);
    let mut y = DVector::zeros(n);
    let mut row = vec![0.0; config.q];
    for i in 0..n {
        for (j, r) in row.iter_mut().enumerate() {
            *r = x[(i, j)];
        }
        f1_values[i] = truth.f1.eval(row[0]);
        f2_values[i] = truth.nuisance(&row);
        let noise: f64 = rng.sample(StandardNormal);
        y[i] = f1_values[i] + f2_values[i] + config.sigma * noise;
    }
    Ok(Replicate {
        data: Dataset::new(x, y)?,
        f1_values,
        f2_values,
    })
}
