import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from absvie_lab.grid import make_grid, sample_paths
from absvie_lab.regress import Basis, Regressor, martingale_coeff, project


@pytest.fixture(scope="module")
def setup():
    g = make_grid(1.0, 0.0, 16)
    ens = sample_paths(g, 100000, 1, seed=2)
    return g, ens, Regressor(ens, Basis(3))


def test_constant_targets_are_exact(setup):
    g, ens, reg = setup
    v = np.full(ens.pathsM, 0.1 + 0.2)
    for j in (0, 5, 16):
        assert np.array_equal(reg.project(v, j), v)
    assert np.array_equal(reg.martingale_coeff(v, 7), np.zeros(ens.pathsM))


def test_node_zero_only_has_the_constant(setup):
    g, ens, reg = setup
    assert reg.n_active(0) == 0
    assert reg.n_active(5) == 3
    W = ens.W[:, :, 0]
    assert np.allclose(reg.project(W[:, -1], 0), W[:, -1].mean())


def test_polynomials_of_current_position_are_reproduced(setup):
    g, ens, reg = setup
    W = ens.W[:, 9, 0]
    v = 1.0 + 2.0 * W - 0.5 * W**2 + 0.1 * W**3
    assert np.max(np.abs(reg.project(v, 9) - v)) < 1e-7


def test_conditional_expectation_of_terminal_value(setup):
    g, ens, reg = setup
    W = ens.W[:, :, 0]
    for j in (4, 8, 12):
        p = reg.project(W[:, -1], j)
        assert np.sqrt(np.mean((p - W[:, j]) ** 2)) < 0.02


def test_martingale_coefficient_of_square(setup):
    # W(T)^2 = T + 2 int W dW, so Z(t) = 2 W(t)
    g, ens, reg = setup
    W = ens.W[:, :, 0]
    V = W[:, -1] ** 2
    for j in range(1, 16):
        z = reg.martingale_coeff(V, j)
        err = np.sqrt(np.mean((z - 2 * W[:, j]) ** 2)) / np.sqrt(np.mean((2 * W[:, j]) ** 2))
        assert err < 0.1, j


def test_martingale_coefficient_of_terminal_value(setup):
    g, ens, reg = setup
    W = ens.W[:, :, 0]
    for j in range(16):
        assert abs(np.mean(reg.martingale_coeff(W[:, -1], j)) - 1.0) < 0.05


def test_projection_of_square(setup):
    g, ens, reg = setup
    W = ens.W[:, :, 0]
    for j in range(1, 16):
        exact = W[:, j] ** 2 + (g.T - g.times[j])
        err = np.sqrt(np.mean((reg.project(W[:, -1] ** 2, j) - exact) ** 2)) / np.sqrt(np.mean(exact**2))
        assert err < 0.05, j


def test_independent_noise_projects_to_mean(setup):
    g, ens, reg = setup
    noise = np.random.default_rng(0).standard_normal(ens.pathsM)
    se = noise.std() / np.sqrt(ens.pathsM)
    p = reg.project(noise, 8)
    # fitted slopes carry sampling noise; compare the path-RMS deviation
    assert np.sqrt(np.mean((p - noise.mean()) ** 2)) < 4 * se * np.sqrt(reg.n_active(8) + 1)


def test_tower_property(setup):
    g, ens, reg = setup
    V = np.cos(ens.W[:, -1, 0])
    inner = reg.project(reg.project(V, 12), 5)
    direct = reg.project(V, 5)
    se = np.std(V) / np.sqrt(ens.pathsM)
    assert np.sqrt(np.mean((inner - direct) ** 2)) < 3 * se


def test_module_level_helpers_match(setup):
    g, ens, reg = setup
    W = ens.W[:, :, 0]
    assert np.allclose(project(W[:, -1], 5, Basis(3), ens), reg.project(W[:, -1], 5))
    assert np.allclose(martingale_coeff(W[:, -1], 5, 0, Basis(3), ens), reg.martingale_coeff(W[:, -1], 5))


def test_state_features_and_degenerate_columns():
    g = make_grid(1.0, 0.0, 8)
    ens = sample_paths(g, 3000, 1, seed=4)
    W = ens.W[:, :, 0]
    state = np.exp(W)  # nonpolynomial adapted feature
    state[:, 3] = 2.0  # constant at one node: dropped there
    reg = Regressor(ens, Basis(2).with_state(S=state))
    assert reg.n_active(3) == 2
    assert reg.n_active(4) == 3
    assert np.max(np.abs(reg.project(state[:, 6], 6) - state[:, 6])) < 1e-7
    with pytest.raises(ValueError):
        Regressor(ens, Basis(2).with_state(S=state[:, :3]))


def test_rejects_non_finite(setup):
    g, ens, reg = setup
    v = np.zeros(ens.pathsM)
    v[3] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        reg.coef(v, 4)


def test_two_dimensional_martingale_coefficients():
    g = make_grid(1.0, 0.0, 8)
    ens = sample_paths(g, 20000, 2, seed=8)
    reg = Regressor(ens, Basis(2))
    W = ens.W
    V = 0.5 * W[:, -1, 0] - 1.5 * W[:, -1, 1]
    assert np.mean(reg.martingale_coeff(V, 3, k=0)) == pytest.approx(0.5, abs=0.03)
    assert np.mean(reg.martingale_coeff(V, 3, k=1)) == pytest.approx(-1.5, abs=0.03)


@settings(max_examples=20, deadline=None)
@given(j=st.integers(1, 16), a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_projection_is_idempotent_and_linear(setup, j, a, b):
    g, ens, reg = setup
    W = ens.W[:, :, 0]
    u, v = W[:, -1], np.sin(W[:, -1])
    pu, pv = reg.project(u, j), reg.project(v, j)
    assert np.allclose(reg.project(pu, j), pu, atol=1e-9)
    assert np.allclose(reg.project(a * u + b * v, j), a * pu + b * pv, atol=1e-9)
