"""Quick end-to-end check of the addsieve_py extension module.

Build and install first:

    pip install --no-build-isolation ./crates/python
"""

import math

import addsieve_py as asv

GAUSSIAN = """
[model.v1]
covariates = [0]
basis = { kind = "hermite", r = 12 }

[[model.v2]]
covariates = [1]
centering = "none"
basis = { kind = "hermite", r = 12 }

[design_law]
kind = "bivariate_gaussian"
rho = 0.5

[integration]
nodes_per_axis = 64
"""

ESTIMATOR = """
[model.v1]
covariates = [0]
basis = { kind = "trigonometric", m = 3 }

[[model.v2]]
covariates = [1]
centering = "none"
basis = { kind = "trigonometric", m = 2 }

[design_law]
kind = "gaussian_copula"
correlation = [[1.0, 0.5], [0.5, 1.0]]
"""

SCENARIO = """
q = 2
alpha1 = 2.0
alpha2 = 1.0
sigma = 0.0
f1 = { kind = "spike", frequency = 2 }
f2 = [{ kind = "spike", frequency = 1 }]
design = { kind = "gaussian_copula", correlation = [[1.0, 0.5], [0.5, 1.0]] }
"""


def main():
    g = asv.geometry(GAUSSIAN)
    assert abs(g.rho0 - 0.5) < 1e-3, g
    assert abs(g.hs_norm_sq - 1.0 / 3.0) < 2e-3, g
    print(g)

    assert asv.minimal_angle([[1.0, 0.3], [0.3, 1.0]], 1) == 0.3

    x, y = asv.simulate(SCENARIO, 500, 0)
    est = asv.Estimator(ESTIMATOR)
    fit = est.fit(x, y)
    assert fit.edelta_holds and not fit.truncated
    grid = [i / 20 for i in range(21)]
    truth = [math.sqrt(2) * math.cos(4 * math.pi * t) / 2 ** 2 for t in grid]
    err = max(abs(a - b) for a, b in zip(fit.evaluate(grid), truth))
    assert err < 1e-8, err
    print(fit)

    z1 = [[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]
    z2 = [[0.0], [0.0], [1.0]]
    v1, v2, sweeps, rho = asv.backfit(z1, z2, [1.0, 2.0, 3.0])
    assert max(abs(a - b) for a, b in zip(v1 + v2, [1.0, 2.0, 0.0, 0.0, 0.0, 3.0])) < 1e-14
    assert rho < 1e-15 and sweeps == 2

    slope, _, r2 = asv.fit_rate([(2 ** k, 3.0 * 2.0 ** (-0.8 * k)) for k in range(8, 12)])
    assert abs(slope + 0.8) < 1e-12 and abs(r2 - 1.0) < 1e-12

    try:
        asv.Estimator(ESTIMATOR.replace("covariates = [1]", "covariates = [0]"))
    except asv.ConfigError as e:
        print("rejected overlapping blocks:", e)
    else:
        raise AssertionError("expected ConfigError")

    print("smoke test passed")


if __name__ == "__main__":
    main()
