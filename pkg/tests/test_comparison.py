import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from absvie_lab.absvie import FreeTerm, GeneratorSpec
from absvie_lab.comparison import ComparisonCase, run_comparison, spot_check_monotonicity
from absvie_lab.grid import DelaySpec, make_grid, sample_paths
from absvie_lab.regress import Basis, Regressor


def gen(fn, uses, **kw):
    def g(t, s, y, z, xi, alpha, beta, gamma, mu, nu, psi):
        return fn(t=t, s=s, y=y, z=z, alpha=alpha, mu=mu)

    return GeneratorSpec(g, frozenset(uses), **kw)


@pytest.fixture(scope="module")
def setup():
    g = make_grid(1.0, 0.25, 32)
    ens = sample_paths(g, 2000, 1, seed=41)
    return g, ens, Regressor(ens, Basis(3))


def flat(g, x):
    return FreeTerm(np.full(g.nodesN + 1, float(x)))


def y_case(g, bar_sign=1.0):
    return ComparisonCase(
        g1=gen(lambda y, **a: y - 1, {"y"}),
        g2=gen(lambda y, **a: y + 1, {"y"}),
        gBar=gen(lambda y, **a: bar_sign * y, {"y"}),
        phi1=flat(g, 0.0),
        phi2=flat(g, 0.0),
    )


def test_ordered_linear_generators_pass_spot_check(setup):
    rep = spot_check_monotonicity(y_case(setup[0]), samples=10_000)
    assert rep.ok and rep.checked >= 10_000 - 16


def test_sign_flip_is_caught(setup):
    rep = spot_check_monotonicity(y_case(setup[0], -1.0), samples=10_000)
    assert not rep.ok
    assert rep.violations[0][0] == "gBar nondecreasing in y"


def test_average_term_is_monotone(setup):
    g = setup[0]
    avg = gen(lambda mu, **a: 0.7 * mu, {"mu"}, lam=1.0, delays=DelaySpec(8))
    case = ComparisonCase(avg, avg, avg, flat(g, 1.0), flat(g, 1.0))
    rep = spot_check_monotonicity(case, samples=10_000)
    assert rep.ok and rep.checked >= 9_984


def test_z_type_arguments_are_rejected(setup):
    g = setup[0]
    bad = gen(lambda **a: 0.0, {"xi"})
    with pytest.raises(ValueError, match="xi"):
        ComparisonCase(bad, bad, bad, flat(g, 0.0), flat(g, 0.0))


def test_unordered_free_terms_rejected(setup):
    g, ens, reg = setup
    zero = gen(lambda **a: 0.0, ())
    with pytest.raises(ValueError, match="ordered"):
        run_comparison(ComparisonCase(zero, zero, zero, flat(g, 1.0), flat(g, 0.0)), ens, reg)


def test_reflexivity(setup):
    g, ens, reg = setup
    W = ens.W[:, :, 0]
    phi = FreeTerm(np.repeat(1.0 + W[:, [g.N]], g.nodesN + 1, axis=1))
    gg = gen(lambda y, z, **a: 0.3 * np.tanh(y) + 0.2 * z[..., 0], {"y", "z"})
    rep = run_comparison(ComparisonCase(gg, gg, gg, phi, phi), ens, reg, tol=1e-9)
    assert np.all(rep.violationFraction == 0)
    assert np.all(rep.worstMargin == 0)
    assert rep.passed


def test_constant_generators_margin(setup):
    g, ens, reg = setup
    c1, c2 = gen(lambda **a: 0.0, ()), gen(lambda **a: 1.0, ())
    rep = run_comparison(ComparisonCase(c1, c2, c1, flat(g, 0.0), flat(g, 0.0)), ens, reg, epsStat=0.0)
    t = g.times[: g.N + 1]
    assert np.allclose(rep.worstMargin, g.T - t, atol=1e-14)
    assert np.all(rep.violationFraction == 0)


def recursion(g, k, d):
    y = np.ones(g.nodesN + 1)
    for i in range(g.N - 1, -1, -1):
        y[i] = 1.0 + g.h * k * y[i + d : g.N + d].sum()
    return y


def test_anticipated_margin_matches_oracle(setup):
    g, ens, reg = setup
    g1 = gen(lambda alpha, **a: 0.2 * alpha, {"alpha"}, delays=DelaySpec(8))
    g2 = gen(lambda alpha, **a: 0.4 * alpha, {"alpha"}, delays=DelaySpec(8))
    case = ComparisonCase(g1, g2, g1, flat(g, 1.0), flat(g, 1.0), declaredMonotone=frozenset({"alpha"}))
    rep = run_comparison(case, ens, reg, epsStat=0.0, tol=1e-12)
    oracle = (recursion(g, 0.4, 8) - recursion(g, 0.2, 8))[: g.N + 1]
    assert np.all(oracle[: g.N] > 0)
    assert np.max(np.abs(rep.worstMargin - oracle)) < 1e-10
    assert np.all(rep.violationFraction == 0)


@settings(max_examples=8, deadline=None)
@given(bump=st.floats(0.0, 2.0))
def test_enlarging_upper_free_term_never_shrinks_margin(setup, bump):
    g, ens, reg = setup
    g1 = gen(lambda alpha, **a: 0.2 * alpha, {"alpha"}, delays=DelaySpec(8))
    g2 = gen(lambda alpha, **a: 0.4 * alpha, {"alpha"}, delays=DelaySpec(8))
    mono = frozenset({"alpha"})
    base = run_comparison(ComparisonCase(g1, g2, g1, flat(g, 1.0), flat(g, 1.0), mono), ens, reg, epsStat=0.0, tol=1e-12)
    more = run_comparison(ComparisonCase(g1, g2, g1, flat(g, 1.0), flat(g, 1.0 + bump), mono), ens, reg, epsStat=0.0, tol=1e-12)
    assert np.all(more.worstMargin >= base.worstMargin - 1e-12)
