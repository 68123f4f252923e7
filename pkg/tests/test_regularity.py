import numpy as np
import pytest

from absvie_lab.grid import make_grid, sample_paths
from absvie_lab.regress import Basis
from absvie_lab.regularity import (
    LinearRegularityCase,
    check_representation,
    derivative_oracle,
    solve_base,
    solve_derivative,
)


@pytest.fixture(scope="module")
def ens():
    g = make_grid(1.0, 0.25, 32)
    return sample_paths(g, 20000, 1, seed=71)


def recursion(a, fr, r, grid):
    N, h = grid.N, grid.h
    y = np.zeros(grid.nodesN + 1)
    y[r + 1 :] = fr
    for i in range(N - 1, r, -1):
        y[i] = fr + h * a * y[i + 1 : N].sum()
    return y


def test_zero_generator_reproduces_free_term(ens):
    g = ens.grid
    f = lambda t: 1.0 + 0.5 * np.sin(2 * np.pi * t)
    case = LinearRegularityCase(f=f, x0=0.5)
    sol = solve_base(case, ens, Basis(3))
    fn = case.f_nodes(g)
    I = np.concatenate([np.zeros((ens.pathsM, 1)), np.cumsum(ens.increments[:, : g.N, 0] * fn[: g.N], axis=1)], axis=1)
    exact = 0.5 + I
    err = np.sqrt(np.mean((sol.Y[:, : g.N + 1] - exact) ** 2, axis=0) / np.mean(exact**2, axis=0))
    assert err.max() <= 0.05
    zbar = sol.Z_mean()[..., 0]
    rows, cols = np.tril_indices(g.N + 1, k=-1)
    assert np.mean(np.abs(zbar[rows, cols] - fn[cols])) <= 0.05


def test_unit_integrand_gives_unit_z(ens):
    g = ens.grid
    sol = solve_base(LinearRegularityCase(f=1.0, x0=0.0), ens, Basis(3))
    zbar = sol.Z_mean()[..., 0]
    tri = np.tril_indices(g.N + 1, k=-1)
    assert np.mean(np.abs(zbar[tri] - 1.0)) <= 0.05


def test_zero_integrand_is_deterministic(ens):
    sol = solve_base(LinearRegularityCase(A1=0.5, f=0.0, x0=1.0), ens, Basis(2))
    assert np.all(np.ptp(sol.Y, axis=0) == 0)
    assert np.all(sol.Zc == 0)
    d = solve_derivative(LinearRegularityCase(A1=0.5, f=0.0, x0=1.0), 5, ens, Basis(2))
    assert np.all(d.Y == 0)
    rep = check_representation(sol, d, 5)
    assert rep.maxError == 0


def test_derivative_of_free_term(ens):
    g = ens.grid
    d = solve_derivative(LinearRegularityCase(f=2.0), 7, ens, Basis(2))
    expected = np.where(np.arange(g.nodesN + 1) > 7, 2.0, 0.0)
    assert np.array_equal(d.meanY, expected)
    assert np.all(np.ptp(d.Y, axis=0) == 0)


@pytest.mark.parametrize("r", [0, 8, 20])
def test_derivative_against_recursion(ens, r):
    case = LinearRegularityCase(A1=0.5, f=lambda t: 1.0 + t, x0=1.0)
    d = solve_derivative(case, r, ens, Basis(2), tol=1e-13)
    fr = 1.0 + ens.grid.times[r]
    ref = recursion(0.5, fr, r, ens.grid)
    assert np.max(np.abs(d.meanY - ref)) <= 1e-8 * np.abs(ref).max()
    assert np.max(np.abs(derivative_oracle(case, r, ens.grid) - ref)) <= 1e-12


def test_linearity_in_f(ens):
    a = solve_derivative(LinearRegularityCase(A1=0.5, f=1.0), 4, ens, Basis(2))
    b = solve_derivative(LinearRegularityCase(A1=0.5, f=3.0), 4, ens, Basis(2))
    assert np.allclose(b.Y, 3.0 * a.Y, rtol=1e-12, atol=0)


def test_support_below_r(ens):
    d = solve_derivative(LinearRegularityCase(A1=0.5, A2=0.2, f=1.0, delta=0.25), 10, ens, Basis(2))
    assert np.all(d.Y[:, :11] == 0)
    assert np.all(d.Zc[:11] == 0)


def test_r_range(ens):
    with pytest.raises(ValueError):
        solve_derivative(LinearRegularityCase(), ens.grid.N, ens)


def test_representation_without_generator(ens):
    case = LinearRegularityCase(f=1.0, x0=0.0)
    base = solve_base(case, ens, Basis(3))
    g = ens.grid
    for r in (0, 10, 25):
        rep = check_representation(base, solve_derivative(case, r, ens, base.reg), r)
        # single-increment martingale coefficients: noise of order sqrt(P (T - t_r) / (h M))
        floor = 2 * np.sqrt(base.reg.P * (g.T - g.times[r]) / (g.h * ens.pathsM))
        assert rep.maxError <= floor


def test_representation_with_kernel(ens):
    case = LinearRegularityCase(A1=0.5, f=1.0, x0=1.0)
    base = solve_base(case, ens, Basis(3))
    for r in (2, 16):
        d = solve_derivative(case, r, ens, base.reg)
        rep = check_representation(base, d, r)
        oracle = derivative_oracle(case, r, ens.grid)[r + 1 : ens.grid.N + 1]
        assert rep.maxError <= 0.1
        assert np.max(np.abs(rep.zBase - oracle) / np.abs(oracle)) <= 0.1
