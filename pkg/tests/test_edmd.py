import numpy as np
import pytest

from kkr.dynamics import Dataset, ObservableSpec, bistable, sample_dataset
from kkr.edmd import EDMDModel, fit_pcr, forecast_edmd, make_pairs
from kkr.errors import RankDeficient
from kkr.kernels import BaseKernel


def _linear_data(rate, N=4, H=5, d=1, seed=0):
    rng = np.random.default_rng(seed)
    x0 = rng.uniform(-1, 1, (N, d))
    states = x0[:, None, :] * rate ** np.arange(H + 1)[None, :, None]
    return Dataset(states, states[..., 0].copy(), 0.1)


def test_make_pairs_small():
    states = np.arange(3.0).reshape(1, 3, 1)
    pairs = make_pairs(Dataset(states, np.zeros((1, 3)), 0.1))
    np.testing.assert_array_equal(pairs.X[:, 0], [0, 1])
    np.testing.assert_array_equal(pairs.X_next[:, 0], [1, 2])
    assert make_pairs(Dataset(np.zeros((2, 2, 1)), np.zeros((2, 2)), 0.1)).M == 2


def test_pairs_roundtrip():
    data = sample_dataset(bistable(), ObservableSpec(), [(-1, 1)], 5, 1 / 14, 6, seed=1)
    pairs = make_pairs(data)
    assert pairs.M == 30
    np.testing.assert_array_equal(pairs.to_states(), data.states)


def test_identity_dynamics_unit_eigenvalues():
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, (3, 1, 2))
    states = np.repeat(X, 4, axis=1)
    data = Dataset(states, states[..., 0].copy(), 0.1)
    m = fit_pcr(make_pairs(data), 3, BaseKernel(0.8))
    np.testing.assert_allclose(m.eigenvalues, 1.0, atol=1e-8)
    y = forecast_edmd(m, X[0, 0], 6)
    np.testing.assert_allclose(y, y[0], atol=1e-8)


def test_rank_one_rayleigh_quotient():
    data = sample_dataset(bistable(), ObservableSpec(), [(-1, 1)], 4, 1 / 14, 3, seed=2)
    pairs = make_pairs(data)
    base = BaseKernel(0.5)
    m = fit_pcr(pairs, 1, base)
    G = base.matrix(pairs.X, pairs.X)
    A = base.matrix(pairs.X_next, pairs.X)
    sig, U = np.linalg.eigh(G)
    u = U[:, -1]
    assert abs(m.eigenvalues[0] - (u @ A @ u) / sig[-1]) < 1e-10


def test_linear_kernel_exact_rate():
    pairs = make_pairs(_linear_data(0.5))
    m = fit_pcr(pairs, 1, BaseKernel(kind="linear"))
    assert abs(m.eigenvalues[0] - 0.5) < 1e-10


def test_contractive_spectral_sanity():
    for rate in (0.3, 0.9):
        m = fit_pcr(make_pairs(_linear_data(rate, N=6, H=6, d=2)), 6, BaseKernel(1.0))
        assert np.all(np.abs(m.eigenvalues) <= 1.05)


def test_zero_modes_zero_forecast():
    m = EDMDModel(np.array([0.5 + 0j]), np.ones((2, 1), dtype=complex), np.zeros(1, dtype=complex),
                  BaseKernel(1.0), np.zeros((2, 1)))
    assert np.all(forecast_edmd(m, [0.3], 4) == 0)


def test_h0_is_output_regression():
    data = sample_dataset(bistable(), ObservableSpec(), [(-1, 1)], 6, 1 / 14, 5, seed=3)
    m = fit_pcr(make_pairs(data), 8, BaseKernel(0.2))
    x = np.array([[0.1], [-0.4]])
    np.testing.assert_allclose(m(x, 3)[:, 0], (m.eigenfunctions(x) @ m.modes).real, atol=1e-14)


def test_residual_monotone_in_rank():
    data = sample_dataset(bistable(), ObservableSpec(), [(-1, 1)], 8, 1 / 14, 5, seed=4)
    pairs = make_pairs(data)
    res = []
    # nested subspaces; stays in the range where the eigenbasis is well conditioned
    for D in (1, 2, 4, 8, 12):
        m = fit_pcr(pairs, D, BaseKernel(0.3))
        res.append(np.linalg.norm(m(pairs.X, 0)[:, 0] - pairs.Y))
    assert all(b <= a * (1 + 1e-6) + 1e-9 for a, b in zip(res, res[1:]))


def test_rank_deficient_warns():
    data = Dataset(np.zeros((2, 3, 1)), np.zeros((2, 3)), 0.1)
    with pytest.warns(RankDeficient):
        m = fit_pcr(make_pairs(data), 3, BaseKernel(1.0))
    assert m.rank == 1


def test_rank_bounds():
    pairs = make_pairs(_linear_data(0.5, N=1, H=2))
    with pytest.raises(ValueError):
        fit_pcr(pairs, 3, BaseKernel(1.0))
    with pytest.raises(ValueError):
        fit_pcr(pairs, 0, BaseKernel(1.0))


def test_json_roundtrip(tmp_path):
    data = sample_dataset(bistable(), ObservableSpec(), [(-1, 1)], 5, 1 / 14, 4, seed=5)
    m = fit_pcr(make_pairs(data), 5, BaseKernel(0.2))
    p = tmp_path / "e.json"
    m.save(p)
    back = EDMDModel.load(p)
    x = np.linspace(-1, 1, 7)[:, None]
    np.testing.assert_array_equal(back(x, 6), m(x, 6))
