//! Worked examples checked against independent oracles: normal equations,
//! dense hat matrices, power iteration, direct summation and classical
//! goodness-of-fit statistics.

use addsieve::backfit::{backfit_decompose, empirical_rho, trace_diagnostics, BackfitOptions};
use addsieve::estimator::{evaluate_estimate, fit_sumspace, second_stage};
use addsieve::harness::{run_oracle_comparison, ExperimentConfig, ExperimentSpec, ModelRule};
use addsieve::quadrature::risk_rule;
use addsieve::sim::{generate, holder_seminorm, sample_design, FunctionRecipe, ScenarioConfig};
use addsieve::sumspace::DesignLaw;
use addsieve::*;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

fn hat(z: &DMatrix<f64>) -> DMatrix<f64> {
    let gram_inv = (z.transpose() * z).try_inverse().unwrap();
    z * gram_inv * z.transpose()
}

fn trig(m: usize) -> UnivariateBasis {
    UnivariateBasis::trigonometric(m, true)
}

fn l2_distance(f: impl Fn(f64) -> f64, g: &[f64]) -> f64 {
    let rule = risk_rule();
    rule.nodes
        .iter()
        .zip(&rule.weights)
        .zip(g)
        .map(|((x, w), v)| w * (f(*x) - v).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[test]
fn least_squares_matches_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let z = gaussian(&mut rng, 50, 6);
    let y = gaussian(&mut rng, 50, 1).column(0).into_owned();
    let beta = fit_sumspace(&z, &y, 1e-10);
    let normal = (z.transpose() * &z).cholesky().unwrap().solve(&(z.transpose() * &y));
    assert!((beta - normal).amax() < 1e-9);

    let ones = DMatrix::from_element(7, 1, 1.0);
    let y = DVector::from_vec(vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0]);
    assert!((fit_sumspace(&ones, &y, 1e-10)[0] - y.mean()).abs() < 1e-12);
}

#[test]
fn second_stage_is_the_empirical_projection() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let zw = gaussian(&mut rng, 80, 3);
    let fitted = gaussian(&mut rng, 80, 1).column(0).into_owned();
    let beta = second_stage(&fitted, &zw, 1e-10);
    let gram = zw.transpose() * &zw;
    let oracle = gram.try_inverse().unwrap() * zw.transpose() * &fitted;
    assert!((beta - oracle).amax() < 1e-10);

    let inside = &zw * DVector::from_vec(vec![0.5, -1.0, 2.0]);
    let exact = second_stage(&inside, &zw, 1e-10);
    assert!((exact - DVector::from_vec(vec![0.5, -1.0, 2.0])).amax() < 1e-12);
}

#[test]
fn dropping_the_second_stage_when_w1_equals_v1() {
    let v1 = ComponentSpace::univariate(0, trig(4), Centering::Population);
    let model = SumspaceModel::new(
        v1.clone(),
        vec![ComponentSpace::univariate(1, trig(2), Centering::None)],
        v1.clone(),
    )
    .unwrap();
    let mut config = EstimatorConfig::new(model);
    config.design_law = DesignLaw::copula2(0.6);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = config.design_law.sample(300, 2, &mut rng).unwrap();
    let y = DVector::from_fn(300, |i, _| x[(i, 0)].powi(2) + (3.0 * x[(i, 1)]).cos() + 0.2 * rng.sample::<f64, _>(StandardNormal));
    let result = fit(&config, &Dataset::new(x, y).unwrap()).unwrap();
    let grid = DMatrix::from_fn(1001, 1, |i, _| i as f64 / 1000.0);
    let from_v1 = evaluate_estimate(&result.beta_v1, &v1, &result.v1_offsets, &grid);
    let from_w1 = result.evaluate(&grid);
    let gap = from_v1.iter().zip(&from_w1).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(gap <= 1e-10, "{gap}");
}

#[test]
fn evaluate_estimate_is_a_plain_linear_combination() {
    let w1 = ComponentSpace::univariate(0, trig(3), Centering::None);
    let points = DMatrix::from_column_slice(4, 1, &[0.0, 0.1, 0.55, 0.9]);
    assert!(evaluate_estimate(&[0.0; 7], &w1, &[0.0; 7], &points).iter().all(|v| *v == 0.0));

    let mut unit = [0.0; 7];
    unit[2] = 1.0;
    let values = evaluate_estimate(&unit, &w1, &[0.0; 7], &points);
    let basis = w1.basis.clone();
    for (i, v) in values.iter().enumerate() {
        let mut row = vec![0.0; 7];
        basis.eval_into(points[(i, 0)], &mut row);
        assert!((v - row[2]).abs() < 1e-15);
    }

    let beta = [0.3, -1.0, 0.2, 0.7, -0.4, 0.1, 2.0];
    let offsets = [0.1, 0.0, 0.2, 0.0, 0.0, -0.3, 0.05];
    let values = evaluate_estimate(&beta, &w1, &offsets, &points);
    for (i, v) in values.iter().enumerate() {
        let x = points[(i, 0)];
        let mut direct = beta[0] * (1.0 - offsets[0]);
        for k in 1..=3 {
            let c = 2f64.sqrt() * (2.0 * std::f64::consts::PI * k as f64 * x).cos();
            let s = 2f64.sqrt() * (2.0 * std::f64::consts::PI * k as f64 * x).sin();
            direct += beta[2 * k - 1] * (c - offsets[2 * k - 1]) + beta[2 * k] * (s - offsets[2 * k]);
        }
        assert!((v - direct).abs() < 1e-12, "{v} vs {direct}");
    }
}

fn spike_scenario(sigma: f64, f2: FunctionRecipe, design: DesignLaw) -> ScenarioConfig {
    ScenarioConfig {
        q: 2,
        design,
        alpha1: 2.0,
        alpha2: 1.0,
        k1: 1.0,
        k2: 1.0,
        sigma,
        f1: FunctionRecipe::Spike { frequency: 3 },
        f2: vec![f2],
        base_seed: 17,
        truth_seed: 0,
    }
}

fn additive_config(law: DesignLaw) -> EstimatorConfig {
    let model = SumspaceModel::new(
        ComponentSpace::univariate(0, trig(5), Centering::Population),
        vec![ComponentSpace::univariate(1, trig(4), Centering::None)],
        ComponentSpace::univariate(0, trig(4), Centering::Population),
    )
    .unwrap();
    let mut config = EstimatorConfig::new(model);
    config.design_law = law;
    config
}

#[test]
fn noiseless_span_recovery() {
    let law = DesignLaw::IndependentUniform;
    let scenario = spike_scenario(0.0, FunctionRecipe::Spike { frequency: 2 }, law.clone());
    let truth = scenario.truth().unwrap();
    let rep = generate(&scenario, &truth, 2000, 0).unwrap();
    let result = fit(&additive_config(law), &rep.data).unwrap();
    let rule = risk_rule();
    let err = l2_distance(|x| truth.f1.eval(x), &result.evaluate_at(&rule.nodes));
    assert!(err <= 1e-8, "{err}");

    let config = additive_config(DesignLaw::IndependentUniform);
    let oracle = oracle_fit(&config, &rep.without_nuisance().unwrap()).unwrap();
    let err = l2_distance(|x| truth.f1.eval(x), &oracle.evaluate_at(&rule.nodes));
    assert!(err <= 1e-10, "{err}");
}

#[test]
fn oracle_with_zero_nuisance_is_the_fit_without_v2() {
    let law = DesignLaw::copula2(0.4);
    let scenario = spike_scenario(0.5, FunctionRecipe::Zero, law.clone());
    let rep = generate(&scenario, &scenario.truth().unwrap(), 500, 4).unwrap();
    let config = additive_config(law);
    let oracle = oracle_fit(&config, &rep.data).unwrap();
    let mut bare = config.clone();
    bare.model = bare.model.without_v2();
    let direct = fit(&bare, &rep.data).unwrap();
    for (a, b) in oracle.beta_w1.iter().zip(&direct.beta_w1) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn backfit_matches_direct_least_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let z1 = gaussian(&mut rng, 100, 4);
    let z2 = gaussian(&mut rng, 100, 6) + &z1 * gaussian(&mut rng, 4, 6) * 0.5;
    let v = gaussian(&mut rng, 100, 1).column(0).into_owned();
    let out = backfit_decompose(&z1, &z2, &v, &BackfitOptions::default()).unwrap();
    let mut z = DMatrix::zeros(100, 10);
    z.columns_mut(0, 4).copy_from(&z1);
    z.columns_mut(4, 6).copy_from(&z2);
    let beta = (z.transpose() * &z).cholesky().unwrap().solve(&(z.transpose() * &v));
    let v1 = &z1 * beta.rows(0, 4);
    let v2 = &z2 * beta.rows(4, 6);
    assert!((&out.v1 - v1).norm() / 10.0 <= 1e-8);
    assert!((&out.v2 - v2).norm() / 10.0 <= 1e-8);
}

#[test]
fn empirical_rho_matches_power_iteration() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let z1 = gaussian(&mut rng, 200, 3);
    let z2 = gaussian(&mut rng, 200, 5) + &z1 * gaussian(&mut rng, 3, 5) * 0.3;
    let rho = empirical_rho(&z1, &z2).unwrap();
    // ‖P1 P2 g‖ / ‖g‖ converges to ρ² under repeated alternating projection
    let (p1, p2) = (hat(&z1), hat(&z2));
    let mut g = &p2 * gaussian(&mut rng, 200, 1).column(0);
    let mut ratio = 0.0;
    for _ in 0..500 {
        let next = &p2 * (&p1 * &g);
        ratio = next.norm() / g.norm();
        g = next / ratio;
    }
    assert!((rho - ratio.sqrt()).abs() < 1e-3, "{rho} vs {}", ratio.sqrt());
    // random pairs never exceed it
    for _ in 0..10_000 {
        let g1 = &z1 * gaussian(&mut rng, 3, 1).column(0);
        let g2 = &z2 * gaussian(&mut rng, 5, 1).column(0);
        assert!(g1.dot(&g2).abs() / (g1.norm() * g2.norm()) <= rho + 1e-12);
    }
}

#[test]
fn trace_matches_dense_hat_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let z1 = gaussian(&mut rng, 120, 5);
    let zw = z1.columns(0, 2).into_owned();
    let z2 = gaussian(&mut rng, 120, 4) + &z1 * gaussian(&mut rng, 5, 4) * 0.4;
    let diag = trace_diagnostics(&zw, &z1, &z2).unwrap();
    let dense = (hat(&zw) * hat(&z2)).trace();
    assert!((diag.trace - dense).abs() < 1e-9);
    assert!(diag.trace_bound_holds && diag.op_bound_holds);

    let inside = z2.columns(0, 2).into_owned();
    let nested = trace_diagnostics(&inside, &z1, &z2).unwrap();
    assert!((nested.trace - 2.0).abs() < 1e-10);

    let mut orthogonal = DMatrix::zeros(6, 4);
    orthogonal[(0, 0)] = 1.0;
    orthogonal[(1, 1)] = 1.0;
    orthogonal[(2, 2)] = 1.0;
    orthogonal[(3, 3)] = 1.0;
    let zero = trace_diagnostics(
        &orthogonal.columns(0, 1).into_owned(),
        &orthogonal.columns(0, 2).into_owned(),
        &orthogonal.columns(2, 2).into_owned(),
    )
    .unwrap();
    assert!(zero.trace.abs() < 1e-15 && zero.op_norm.abs() < 1e-15);
}

/// Kolmogorov-Smirnov distance of a sample to the uniform law.
fn ks_uniform(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len() as f64;
    values
        .iter()
        .enumerate()
        .map(|(i, &u)| (u - i as f64 / n).max((i + 1) as f64 / n - u))
        .fold(0.0, f64::max)
}

#[test]
fn copula_marginals_are_uniform() {
    let n = 100_000;
    // 1.949 / √n is the 0.001-level critical value of the KS statistic
    let critical = 1.949 / (n as f64).sqrt();
    for (law, q) in [(DesignLaw::exchangeable_copula(3, 0.0), 3), (DesignLaw::copula2(0.7), 2)] {
        let x = sample_design(&law, n, q, 42).unwrap();
        for j in 0..q {
            let d = ks_uniform(x.column(j).iter().copied().collect());
            assert!(d < critical, "column {j}: {d} vs {critical}");
        }
    }
    let single = sample_design(&DesignLaw::IndependentUniform, n, 1, 3).unwrap();
    assert!(ks_uniform(single.column(0).iter().copied().collect()) < critical);
}

#[test]
fn strong_copula_correlation_survives_normal_scores() {
    let n = 100_000;
    let x = sample_design(&DesignLaw::copula2(0.999), n, 2, 9).unwrap();
    let normal = Normal::standard();
    let a: Vec<f64> = x.column(0).iter().map(|&u| normal.inverse_cdf(u)).collect();
    let b: Vec<f64> = x.column(1).iter().map(|&u| normal.inverse_cdf(u)).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ma, mb) = (mean(&a), mean(&b));
    let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    assert!(cov / (va * vb).sqrt() >= 0.99);
}

#[test]
fn noise_has_the_requested_variance() {
    let scenario = spike_scenario(1.0, FunctionRecipe::Spike { frequency: 1 }, DesignLaw::copula2(0.3));
    let rep = generate(&scenario, &scenario.truth().unwrap(), 1_000_000, 0).unwrap();
    let noise = &rep.data.y - &rep.f1_values - &rep.f2_values;
    let m = noise.mean();
    let var = noise.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (noise.len() - 1) as f64;
    assert!((var - 1.0).abs() < 0.01, "{var}");

    let quiet = spike_scenario(0.0, FunctionRecipe::Spike { frequency: 1 }, DesignLaw::IndependentUniform);
    let truth = quiet.truth().unwrap();
    let rep = generate(&quiet, &truth, 100, 0).unwrap();
    for i in 0..100 {
        let row: Vec<f64> = rep.data.x.row(i).iter().copied().collect();
        assert_eq!(rep.data.y[i], truth.f1.eval(row[0]) + truth.nuisance(&row));
    }
}

#[test]
fn holder_seminorm_of_a_line() {
    let k = 1.7;
    let s = holder_seminorm(|x| k * x, 1.0, 257);
    assert!((s - k).abs() < 1e-12);
    assert_eq!(holder_seminorm(|_| 0.0, 1.5, 129), 0.0);
    let doubled = holder_seminorm(|x| 2.0 * (3.0 * x).sin(), 0.5, 129);
    assert!((doubled - 2.0 * holder_seminorm(|x| (3.0 * x).sin(), 0.5, 129)).abs() < 1e-12);
}

#[test]
fn edelta_never_fails_for_two_functions_at_large_n() {
    let model = SumspaceModel::new(
        ComponentSpace::univariate(0, trig(1), Centering::Population),
        Vec::new(),
        ComponentSpace::univariate(0, trig(1), Centering::Population),
    )
    .unwrap();
    assert_eq!(model.d(), 2);
    let estimator = estimator::PreparedEstimator::new(EstimatorConfig::new(model)).unwrap();
    let failures = (0..500u64)
        .filter(|&r| {
            let x = sample_design(&DesignLaw::IndependentUniform, 16_384, 1, r).unwrap();
            !estimator.edelta(&estimator.design(&x).unwrap()).unwrap().0
        })
        .count();
    assert_eq!(failures, 0);
}

fn experiment(f2: FunctionRecipe, design: DesignLaw, grid: Vec<usize>, reps: usize) -> ExperimentConfig {
    ExperimentConfig {
        scenario: ScenarioConfig {
            f1: FunctionRecipe::Sobolev { eta: 0.1, k_max: 512, sign_seed: None },
            ..spike_scenario(0.5, f2, design)
        },
        model_rule: ModelRule::default(),
        experiment: ExperimentSpec::new(grid, reps),
        integration: Default::default(),
    }
}

#[test]
fn edelta_frequency_does_not_grow_with_n() {
    let mut config = experiment(FunctionRecipe::Zero, DesignLaw::IndependentUniform, vec![64, 128, 256, 512], 1);
    config.model_rule.v1_m = Some(4);
    config.model_rule.v2_m = Some(4);
    config.model_rule.w1_m = Some(2);
    config.experiment.edelta_replications = 500;
    let rows = harness::run_edelta_study(&config).unwrap();
    assert!(harness::report::frequencies_non_increasing(&rows), "{rows:?}");
    assert!(rows[0].frequency > rows[3].frequency);
}

#[test]
fn zero_nuisance_fit_agrees_with_oracle() {
    let config = experiment(FunctionRecipe::Zero, DesignLaw::copula2(0.3), vec![1024], 100);
    let cmp = run_oracle_comparison(&config, 1024, 100).unwrap();
    let se = (cmp.standard_error.powi(2) + cmp.oracle_standard_error.powi(2)).sqrt();
    assert!((cmp.mean_risk - cmp.mean_oracle_risk).abs() <= 3.0 * se, "{cmp:?}");
}

#[test]
fn oracle_is_not_beaten_under_weak_dependence() {
    let config = experiment(FunctionRecipe::Sobolev { eta: 0.1, k_max: 512, sign_seed: None }, DesignLaw::copula2(0.2), vec![2048], 100);
    let cmp = run_oracle_comparison(&config, 2048, 100).unwrap();
    let ratio_se = (cmp.ratio_ci_high - cmp.ratio_ci_low) / (2.0 * 1.96);
    assert!(cmp.mean_replication_ratio >= 1.0 - 3.0 * ratio_se, "{cmp:?}");
}

#[test]
fn risk_decreases_along_the_grid() {
    let config = experiment(
        FunctionRecipe::Sobolev { eta: 0.1, k_max: 512, sign_seed: None },
        DesignLaw::IndependentUniform,
        vec![256, 1024, 4096, 16_384],
        40,
    );
    let report = harness::run_risk_experiment(&config).unwrap();
    let means: Vec<f64> = report.aggregates.iter().map(|a| a.mean_risk).collect();
    assert!(means.windows(2).all(|w| w[1] < w[0]), "{means:?}");
}
