import math
import warnings

import numpy as np
import pytest

from svde.girsanov import (
    DriftFunctional, WeightDegeneracyWarning, drift_functional, log_weight, phi_preset, weak_estimator,
    weight_diagnostics, weighted_samples,
)
from svde.grid_noise import make_grid, sample_brownian, sample_brownian_batch
from svde.kernel import KernelSeries, cos_field, eval_kernel, fractional_kernel, sin_field, sin_kernel
from svde.solver import euler_estimator


def _two_time_drift(K, W, g):
    t = g.nodes
    out = np.zeros_like(W)
    for i in range(1, g.N + 1):
        out[i] = sum(eval_kernel(K, t[i], t[j], W[j]) for j in range(i)) * g.dt
    return out


@pytest.mark.parametrize("kernel", [
    KernelSeries([(0, sin_field(0.7)), (2, cos_field(-1.3))], 1.0),
    KernelSeries([(1, cos_field()), (4, sin_field(3.0))], 1.0),
    sin_kernel(cos_field(), 3),
    fractional_kernel(-0.3, cos_field(), 40),
])
def test_drift_functional_reconstructs_two_time_drift(kernel):
    g = make_grid(1.0, 200)
    W = 0.3 + sample_brownian(g, 1, 12).values
    C = drift_functional(kernel, W, g).values
    running = np.concatenate([[[0.0]], np.cumsum(C[:-1], axis=0) * g.dt])
    err = np.max(np.abs(running - _two_time_drift(kernel, W, g)))
    bound = kernel.tail_bound() if math.isfinite(kernel.tail_bound()) else 1.0
    assert err <= 5 * g.dt * bound


def test_drift_functional_constant_term_is_field():
    g = make_grid(1.0, 30)
    W = sample_brownian(g, 2, 0).values
    C = drift_functional(KernelSeries([(0, cos_field())], 1.0), W, g).values
    np.testing.assert_allclose(C, np.cos(W), rtol=1e-15)


def test_drift_functional_batch_matches_single(two_term_kernel):
    g = make_grid(1.0, 40)
    W = sample_brownian_batch(g, 1, 4, range(3)).values
    Cb = drift_functional(two_term_kernel, W, g).values
    for k in range(3):
        np.testing.assert_allclose(Cb[k], drift_functional(two_term_kernel, W[k], g).values, atol=1e-15)


def test_drift_functional_rejects_wrong_grid(two_term_kernel):
    with pytest.raises(ValueError):
        drift_functional(two_term_kernel, np.zeros((10, 1)), make_grid(1.0, 20))


def test_log_weight_zero_drift():
    g = make_grid(1.0, 25)
    assert log_weight(DriftFunctional(g, np.zeros((26, 1))), sample_brownian(g, 1, 0)) == 0.0


def test_log_weight_negated_noise():
    g = make_grid(1.0, 25)
    B = sample_brownian(g, 1, 3)
    C = DriftFunctional(g, np.cos(B.values))
    quad = 0.5 * np.sum(np.cos(B.values[:-1]) ** 2) * g.dt
    lw, lw_neg = log_weight(C, B), log_weight(C, -B)
    assert lw + quad == pytest.approx(-(lw_neg + quad), rel=1e-12)


def test_log_weight_constant_drift_closed_form():
    g = make_grid(2.0, 40)
    B = sample_brownian(g, 1, 3)
    lw = log_weight(DriftFunctional(g, np.full((41, 1), 0.5)), B)
    assert lw == pytest.approx(0.5 * B.values[-1, 0] - 0.125 * 2.0, rel=1e-12)


def test_log_weight_upto_bounds():
    g = make_grid(1.0, 5)
    C = DriftFunctional(g, np.ones((6, 1)))
    with pytest.raises(ValueError):
        log_weight(C, sample_brownian(g, 1, 0), upto=6)
    assert log_weight(C, sample_brownian(g, 1, 0), upto=0) == 0.0


def test_mean_weight_is_one(cos_kernel):
    g = make_grid(0.5, 100)
    diag = weight_diagnostics(weighted_samples(cos_kernel, [0.0], g.N, g, 20_000, 2))
    assert abs(diag["mean_weight"] - 1.0) <= 3 * diag["mean_weight_se"]
    assert diag["effective_sample_size"] >= 0.5 * 20_000


def test_constant_test_function_gives_mean_weight(cos_kernel):
    g = make_grid(0.5, 50)
    m, _ = weak_estimator(cos_kernel, [0.0], lambda y: np.ones(len(y)), g.N, g, 1000, 4)
    w = np.mean([s.weight for s in weighted_samples(cos_kernel, [0.0], g.N, g, 1000, 4)])
    assert m == pytest.approx(w, rel=1e-12)


def test_empty_kernel_weights_are_one():
    g = make_grid(1.0, 20)
    m, se = weak_estimator(KernelSeries([], 1.0), [0.0], lambda y: np.ones(len(y)), g.N, g, 100, 0)
    assert m == 1.0 and se == 0.0
    m, se = weak_estimator(KernelSeries([], 1.0), [0.0], "square", g.N, g, 20_000, 0)
    assert abs(m - 1.0) <= 4 * se


def test_full_horizon_weight_same_expectation(cos_kernel):
    # the weight is a martingale, so weighting to T instead of t changes nothing on average
    g = make_grid(0.5, 100)
    a, sa = weak_estimator(cos_kernel, [0.0], "sin", 50, g, 20_000, 6)
    b, sb = weak_estimator(cos_kernel, [0.0], "sin", 50, g, 20_000, 6, weight_index=g.N)
    assert abs(a - b) <= 3 * math.hypot(sa, sb)


def test_weighted_matches_euler_small(cos_kernel):
    g = make_grid(0.5, 200)
    a, sa = weak_estimator(cos_kernel, [0.0], "id", g.N, g, 20_000, 1)
    b, sb = euler_estimator(cos_kernel, [0.0], "id", g.N, g, 20_000, 2)
    assert abs(a - b) <= 3 * math.hypot(sa, sb)


def test_weighted_samples_carry_index(cos_kernel):
    g = make_grid(0.5, 10)
    s = weighted_samples(cos_kernel, [0.0], g.N, g, 5, 1)
    assert [x.path_index for x in s] == list(range(5))
    assert s[2].weight == pytest.approx(math.exp(s[2].log_weight))


def test_ess_uniform_weights():
    d = weight_diagnostics(np.zeros(50))
    assert d["effective_sample_size"] == pytest.approx(50)
    assert d["mean_weight"] == 1.0 and d["weight_variance"] == 0.0


def test_ess_degenerate_warns():
    lw = np.zeros(100)
    lw[0] = 50.0
    with pytest.warns(WeightDegeneracyWarning):
        d = weight_diagnostics(lw)
    assert d["effective_sample_size"] == pytest.approx(1.0)


def test_ess_no_warning_when_healthy():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        weight_diagnostics(np.random.default_rng(0).normal(scale=0.1, size=100))


def test_diagnostics_empty():
    with pytest.raises(ValueError):
        weight_diagnostics([])


@pytest.mark.parametrize("name, y, want", [
    ("id", [[2.0, 1.0]], [2.0]),
    ("square", [[2.0, 1.0]], [5.0]),
    ("sin", [[0.0]], [0.0]),
    ("indicator_le(0.5)", [[0.4], [0.6]], [1.0, 0.0]),
    ("bounded_id", [[3.0], [-0.2]], [1.0, -0.2]),
    ("bounded_id(2)", [[3.0]], [2.0]),
])
def test_phi_presets(name, y, want):
    np.testing.assert_allclose(phi_preset(name)(np.array(y)), want)


def test_phi_unknown():
    with pytest.raises(ValueError):
        phi_preset("cube")


def test_estimator_needs_two_paths(cos_kernel):
    with pytest.raises(ValueError):
        weak_estimator(cos_kernel, [0.0], "id", 1, make_grid(0.5, 4), 1, 0)
