import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from absvie_lab.grid import DelaySpec, GridError, brownian_value, counter_normals, make_grid, sample_paths


def test_grid_nodes_and_alignment():
    g = make_grid(1.0, 0.25, 32)
    assert g.h == 1 / 32
    assert g.N == 32
    assert g.nodesN == 40
    assert g.times[g.N] == 1.0
    assert g.times[-1] == pytest.approx(1.25)


@pytest.mark.parametrize("T,K,n", [(1.0, 0.2, 32), (1.0, 0.1, 8)])
def test_misaligned_extension_rejected(T, K, n):
    with pytest.raises(GridError, match="not an integer multiple"):
        make_grid(T, K, n)


@pytest.mark.parametrize("T,K,n", [(0.0, 0.0, 4), (1.0, -0.5, 4), (1.0, 0.0, 0)])
def test_bad_grid_parameters(T, K, n):
    with pytest.raises(GridError):
        make_grid(T, K, n)


def test_delay_offsets():
    g = make_grid(1.0, 0.25, 32)
    ds = DelaySpec.from_times(g, delta=0.25, zeta=0.125)
    d, z = ds.offsets(g)
    assert d.shape == (32,) and np.all(d == 8) and np.all(z == 4)
    with pytest.raises(GridError):
        DelaySpec.from_times(g, delta=0.3)
    with pytest.raises(GridError, match="overflow"):
        DelaySpec(deltaIdx=10).offsets(g)


def test_piecewise_delay_table():
    g = make_grid(1.0, 0.25, 8)
    table = (2, 2, 2, 2, 1, 1, 1, 1)
    d, _ = DelaySpec(delta_table=table).offsets(g)
    assert list(d) == list(table)
    with pytest.raises(GridError):
        DelaySpec(delta_table=(1, 2)).offsets(g)


def test_increment_moments():
    g = make_grid(1.0, 0.0, 16)
    ens = sample_paths(g, 50000, 2, seed=3)
    dw = ens.increments
    assert abs(dw.mean()) < 4 * np.sqrt(g.h / dw.size)
    assert dw.var() == pytest.approx(g.h, rel=0.02)
    # components uncorrelated
    c = np.corrcoef(dw[:, 0, 0], dw[:, 0, 1])[0, 1]
    assert abs(c) < 0.02


def test_same_seed_same_paths_any_threads():
    g = make_grid(1.0, 0.25, 8)
    a = sample_paths(g, 9000, 2, seed=5, threads=1)
    b = sample_paths(g, 9000, 2, seed=5, threads=3)
    assert np.array_equal(a.increments, b.increments)
    c = sample_paths(g, 9000, 2, seed=6)
    assert not np.array_equal(a.increments, c.increments)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**40), p=st.integers(0, 10**6), j=st.integers(0, 500), k=st.integers(0, 3))
def test_counter_draw_is_a_pure_function_of_its_key(seed, p, j, k):
    one = counter_normals(seed, np.array([p]), np.array([j]), np.array([k]))
    block = counter_normals(seed, np.arange(p, p + 3)[:, None, None], np.array([j])[None, :, None], np.array([k])[None, None, :])
    assert one[0] == block[0, 0, 0]
    assert np.isfinite(block).all()


def test_prefix_of_ensemble_is_stable():
    # adding paths does not change the existing ones
    g = make_grid(1.0, 0.0, 4)
    a = sample_paths(g, 100, 1, seed=9)
    b = sample_paths(g, 5000, 1, seed=9)
    assert np.array_equal(a.increments, b.increments[:100])


def test_brownian_value():
    g = make_grid(1.0, 0.25, 8)
    ens = sample_paths(g, 10, 1, seed=1)
    assert np.allclose(brownian_value(ens, 3, 5), ens.W[3, 5])
    assert np.all(brownian_value(ens, 0, 0) == 0)
    with pytest.raises(IndexError):
        brownian_value(ens, 10, 0)
    with pytest.raises(IndexError):
        brownian_value(ens, 0, g.nodesN + 1)
