import numpy as np
import pytest
from hypothesis import given, strategies as st

from svde.grid_noise import (
    BATCH_SIZE, batch_ranges, make_grid, map_path_batches, sample_brownian,
    sample_brownian_batch, zero_path,
)


def test_grid_nodes():
    np.testing.assert_array_equal(make_grid(1.0, 4).nodes, [0, 0.25, 0.5, 0.75, 1.0])
    np.testing.assert_array_equal(make_grid(2.0, 1).nodes, [0, 2.0])
    assert make_grid(0.5, 10).dt == pytest.approx(0.05)


@pytest.mark.parametrize("T, N", [(0.0, 4), (-1.0, 4), (1.0, 0), (1.0, 2.5)])
def test_grid_rejects(T, N):
    with pytest.raises(ValueError):
        make_grid(T, N)


@given(st.floats(1e-3, 1e3), st.integers(1, 5000))
def test_grid_invariants(T, N):
    g = make_grid(T, N)
    t = g.nodes
    assert t[0] == 0 and t[-1] == T and len(t) == N + 1
    assert np.all(np.diff(t) > 0)
    np.testing.assert_allclose(np.diff(t), g.dt, rtol=1e-9)


def test_brownian_deterministic_and_starts_at_zero():
    g = make_grid(1.0, 50)
    a = sample_brownian(g, 3, 42, 7)
    b = sample_brownian(g, 3, 42, 7)
    np.testing.assert_array_equal(a.values, b.values)
    np.testing.assert_array_equal(a.values[0], np.zeros(3))
    assert not np.array_equal(a.values, sample_brownian(g, 3, 42, 8).values)
    assert not np.array_equal(a.values, sample_brownian(g, 3, 43, 7).values)


def test_batch_rows_match_single_paths():
    g = make_grid(1.0, 20)
    batch = sample_brownian_batch(g, 2, 5, [3, 0, 11])
    for row, k in zip(batch.values, [3, 0, 11]):
        np.testing.assert_array_equal(row, sample_brownian(g, 2, 5, k).values)


def test_path_independent_of_order():
    g = make_grid(1.0, 10)
    fwd = sample_brownian_batch(g, 1, 9, range(6)).values
    rev = sample_brownian_batch(g, 1, 9, range(5, -1, -1)).values
    np.testing.assert_array_equal(fwd, rev[::-1])


def test_terminal_moments_lln():
    T, n = 1.0, 100_000
    g = make_grid(T, 4)
    BT = sample_brownian_batch(g, 2, 2024, range(n)).values[:, -1, :]
    assert np.all(np.abs(BT.mean(axis=0)) <= 3 * np.sqrt(T / n))
    var_se = T * np.sqrt(2 / (n - 1))
    assert np.all(np.abs(BT.var(axis=0, ddof=1) - T) <= 3 * var_se)


def test_increment_gaussianity():
    g = make_grid(0.5, 8)
    inc = sample_brownian_batch(g, 1, 77, range(20_000)).increments[..., 0] / np.sqrt(g.dt)
    n = inc.shape[0]
    assert np.all(np.abs(inc.mean(axis=0)) <= 3 / np.sqrt(n))
    assert np.all(np.abs(inc.var(axis=0, ddof=1) - 1) <= 3 * np.sqrt(2 / (n - 1)))
    # increments at different steps are uncorrelated
    c = np.corrcoef(inc.T)
    assert np.max(np.abs(c - np.eye(g.N))) <= 4 / np.sqrt(n)


def test_zero_path():
    assert np.all(zero_path(make_grid(1, 3), 2).values == 0)


def test_map_batches_worker_independent():
    n = 2 * BATCH_SIZE + 17
    fn = lambda r: np.sin(np.arange(r.start, r.stop, dtype=float))
    one = map_path_batches(fn, n, workers=1)
    many = map_path_batches(fn, n, workers=4)
    np.testing.assert_array_equal(one, many)
    assert [len(r) for r in batch_ranges(n)] == [BATCH_SIZE, BATCH_SIZE, 17]


def test_threads_env(monkeypatch):
    from svde.grid_noise import n_workers
    monkeypatch.setenv("SVDE_THREADS", "3")
    assert n_workers() == 3
    monkeypatch.setenv("SVDE_THREADS", "0")
    assert n_workers() >= 1
