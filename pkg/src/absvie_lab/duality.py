"""Paired check of the duality between a linear delay SDVIE and its linear ABSVIE.

Forward:   X(t) = phiX(t) + int_0^t (A1(t,s)X(s) + A2(t,s)X(s-delta)) ds + int_0^t A3(t,s)X(s) dW(s)
Backward:  Y(t) = phiY(t) + int_t^T (A1(s,t)Y(s) + A2(s+delta,t+delta)Y(s+delta) + A3(s,t)Z(s,t)) ds - ...

and the identity ``E int phiY X dt = E int phiX Y dt``. With strictly lower
kernel tables and left-point sums the two discrete sides are exact transposes
of each other, so only Monte Carlo noise separates them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .absvie import FreeTerm, GeneratorSpec, solve_absvie
from .grid import DelaySpec, PathEnsemble, TimeGrid, make_grid
from .regress import Basis
from .sdvie import HistorySpec, kernel_table, linear_sdvie_coeffs, simulate_sdvie

__all__ = [
    "DualityCase",
    "DualityResult",
    "adjoint_generator",
    "check_duality",
    "deterministic_duality",
    "bias_ratio",
]


def adjoint_generator(grid: TimeGrid, A1, A2, A3, d: int, name: str = "adjoint") -> GeneratorSpec:
    """Generator ``A1(s,t) y + A2(s+delta, t+delta) alpha + A3(s,t) xi``.

    Kernels are given in forward orientation (row = later time) and read
    transposed here.
    """
    T1, T2, T3 = (kernel_table(grid, a) for a in (A1, A2, A3))
    uses = set()
    if T1.any():
        uses.add("y")
    if T2.any():
        uses.add("alpha")
    if T3.any():
        uses.add("xi")

    def g(t, s, y, alpha, xi, **_):
        i = int(round(t / grid.h))
        js = np.rint(s / grid.h).astype(np.int64)
        out = T1[js, i] * y + T2[js + d, i + d] * alpha
        if "xi" in uses:
            out = out + T3[js, i] * xi[..., 0]
        return out

    return GeneratorSpec(g=g, uses=frozenset(uses), delays=DelaySpec(d, 0), name=name)


def _field(v, ens: PathEnsemble, N: int) -> np.ndarray:
    v = v(ens) if callable(v) else v
    v = np.asarray(v, dtype=float)
    if v.ndim == 0:
        v = np.full(N + 1, float(v))
    if v.shape[-1] != N + 1:
        raise ValueError(f"free terms need values on nodes 0..{N}, got {v.shape[-1]} columns")
    return np.broadcast_to(v, (ens.pathsM, N + 1))


@dataclass(frozen=True)
class DualityCase:
    """Kernels (constants, callables of (t, s), or tables), free terms and the delay.

    ``phiX`` and ``phiY`` are scalars, arrays over nodes 0..N (optionally per
    path) or callables of the ensemble returning such arrays.
    """

    A1: object = 0.0
    A2: object = 0.0
    A3: object = 0.0
    phiX: object = 1.0
    phiY: object = 1.0
    delta: float = 0.0
    stateFeature: bool = True


@dataclass
class DualityResult:
    lhs: float
    rhs: float
    pooledStdErr: float
    tolBias: float
    verdict: bool
    X: np.ndarray = field(repr=False, default=None)
    Y: np.ndarray = field(repr=False, default=None)
    iterations: int = 0

    @property
    def gap(self) -> float:
        return self.lhs - self.rhs

    @property
    def strict_verdict(self) -> bool:
        """Paired test without the discretisation allowance."""
        return abs(self.gap) <= 3.0 * self.pooledStdErr


def check_duality(
    case: DualityCase,
    ens: PathEnsemble,
    basis: Basis | None = None,
    tol: float = 1e-10,
    maxIter: int = 100,
    biasFactor: float = 5.0,
) -> DualityResult:
    """Simulate X, solve for (Y, Z) on the same paths and compare both pairings.

    ``lhs = E h sum phiY X`` and ``rhs = E h sum phiX Y`` over nodes 0..N-1.
    The verdict allows ``3 * pooledStdErr + tolBias`` with
    ``tolBias = biasFactor * h * |lhs|``.
    """
    grid = ens.grid
    M, N, h, L = ens.pathsM, grid.N, grid.h, grid.nodesN
    d = grid.steps_for(case.delta, "delta")
    if d > L - N:
        raise ValueError("the grid extension K must cover the state delay")
    phiX = _field(case.phiX, ens, N)
    phiY = _field(case.phiY, ens, N)

    hist = np.zeros((M, d + N + 1))
    hist[:, d:] = phiX
    state = simulate_sdvie(linear_sdvie_coeffs(grid, case.A1, case.A2, case.A3), HistorySpec(hist), ens, delays=(d, 0, 0))
    X = state.interior

    basis = basis or Basis()
    if case.stateFeature and np.ptp(X, axis=0).max() > 0:
        basis = basis.with_state(X=state.on_grid())
    spec = adjoint_generator(grid, case.A1, case.A2, case.A3, d, name="duality")
    phi = np.zeros((M, L + 1))
    phi[:, :N] = phiY[:, :N]
    sol, diag = solve_absvie(spec, FreeTerm(phi), ens, basis, tol, maxIter)
    Y = sol.Y[:, : N + 1]

    left = h * np.sum(phiY[:, :N] * X[:, :N], axis=1)
    right = h * np.sum(phiX[:, :N] * Y[:, :N], axis=1)
    lhs, rhs = float(left.mean()), float(right.mean())
    se = float((left - right).std() / np.sqrt(M))
    tol_bias = biasFactor * h * abs(lhs)
    verdict = abs(lhs - rhs) <= 3.0 * se + tol_bias
    return DualityResult(lhs, rhs, se, tol_bias, verdict, X=X, Y=Y, iterations=diag.iterations)


def _deterministic(v, N: int, grid: TimeGrid) -> np.ndarray:
    if callable(v):
        raise ValueError("the deterministic oracle needs deterministic free terms")
    v = np.asarray(v, dtype=float)
    return np.full(N + 1, float(v)) if v.ndim == 0 else v


def deterministic_duality(case: DualityCase, grid: TimeGrid) -> tuple[float, float]:
    """Both pairings for a noise-free case from two plain grid recursions.

    Requires ``A3 = 0`` and deterministic free terms.
    """
    N, h, L = grid.N, grid.h, grid.nodesN
    d = grid.steps_for(case.delta, "delta")
    A1, A2, A3 = (kernel_table(grid, a) for a in (case.A1, case.A2, case.A3))
    if A3.any():
        raise ValueError("the deterministic oracle needs A3 = 0")
    px = _deterministic(case.phiX, N, grid)
    py = _deterministic(case.phiY, N, grid)
    x = np.zeros(N + 1)
    for i in range(N + 1):
        acc = 0.0
        for j in range(i):
            acc += A1[i, j] * x[j] + (A2[i, j] * x[j - d] if j >= d else 0.0)
        x[i] = px[i] + h * acc
    y = np.zeros(L + 1)
    for i in range(N - 1, -1, -1):
        acc = 0.0
        for j in range(i, N):
            acc += A1[j, i] * y[j] + A2[j + d, i + d] * y[j + d]
        y[i] = py[i] + h * acc
    return float(h * np.dot(py[:N], x[:N])), float(h * np.dot(px[:N], y[:N]))


def bias_ratio(case: DualityCase, T: float, K: float, steps: tuple[int, int, int] = (16, 32, 64)) -> tuple[float, list[float]]:
    """Ratio of successive changes of the deterministic duality value as h halves.

    A first-order scheme gives a ratio near 1/2.
    """
    vals = [deterministic_duality(case, make_grid(T, K, n))[0] for n in steps]
    d1, d2 = vals[0] - vals[1], vals[1] - vals[2]
    return (d2 / d1 if d1 != 0 else float("nan")), vals
