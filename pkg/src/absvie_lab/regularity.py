"""Malliavin representation ``Z(t, r) = E[D_r Y(t) | F_r]`` for linear equations.

Restricted to deterministic kernels and free terms ``x0 + int_0^{t ^ T} f dW``.
The derivative ``D_r Y`` then solves the same linear equation with the
deterministic free term ``f(r) 1{r < t}``, so it is itself deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .absvie import FreeTerm, MSolution, solve_absvie
from .duality import adjoint_generator
from .grid import PathEnsemble, TimeGrid
from .regress import Basis, Regressor
from .sdvie import kernel_table

__all__ = [
    "LinearRegularityCase",
    "RepresentationReport",
    "solve_base",
    "solve_derivative",
    "check_representation",
    "derivative_oracle",
]


@dataclass(frozen=True)
class LinearRegularityCase:
    """Kernels in forward orientation (see :func:`adjoint_generator`), ``f`` and ``x0``.

    ``f`` is a constant, a callable of time or an array over nodes 0..N-1.
    """

    A1: object = 0.0
    A2: object = 0.0
    A3: object = 0.0
    f: object = 1.0
    x0: float = 0.0
    delta: float = 0.0

    def f_nodes(self, grid: TimeGrid) -> np.ndarray:
        """f on every node, zero from T on."""
        N, L = grid.N, grid.nodesN
        out = np.zeros(L + 1)
        if callable(self.f):
            out[:N] = np.broadcast_to(self.f(grid.times[:N]), (N,))
        else:
            out[:N] = np.broadcast_to(np.asarray(self.f, dtype=float), (N,))
        return out

    def spec(self, grid: TimeGrid):
        d = grid.steps_for(self.delta, "delta")
        return adjoint_generator(grid, self.A1, self.A2, self.A3, d, name="linear-regularity")


def _stochastic_integral(case: LinearRegularityCase, ens: PathEnsemble) -> np.ndarray:
    """``int_0^{t_i ^ T} f dW`` on every node, shape (paths, nodesN+1)."""
    grid = ens.grid
    f = case.f_nodes(grid)
    I = np.zeros((ens.pathsM, grid.nodesN + 1))
    np.cumsum(ens.increments[:, :, 0] * f[None, : grid.nodesN], axis=1, out=I[:, 1:])
    return I


def _regressor(case, ens, basis) -> Regressor:
    if isinstance(basis, Regressor):
        return basis
    basis = basis or Basis()
    I = _stochastic_integral(case, ens)
    if np.ptp(I, axis=0).max() > 0:
        basis = basis.with_state(If=I)
    return Regressor(ens, basis)


def solve_base(
    case: LinearRegularityCase,
    ens: PathEnsemble,
    basis: Basis | Regressor | None = None,
    tol: float = 1e-10,
    maxIter: int = 100,
) -> MSolution:
    """Solve the linear equation with ``phi(t) = x0 + int_0^{t ^ T} f dW``.

    Past T the boundary data carry the representation of phi(T): ``eta(t, s) = f(s)`` for s < T.
    The stochastic integral is added to the basis so that phi is projected exactly.
    """
    grid = ens.grid
    N, L = grid.N, grid.nodesN
    phi = case.x0 + _stochastic_integral(case, ens)
    eta = np.zeros((L + 1, L + 1))
    eta[N + 1 :, :] = case.f_nodes(grid)[None, :]
    reg = _regressor(case, ens, basis)
    sol, _ = solve_absvie(case.spec(grid), FreeTerm(phi, eta), ens, reg, tol, maxIter)
    return sol


def solve_derivative(
    case: LinearRegularityCase,
    r: int,
    ens: PathEnsemble,
    basis: Basis | Regressor | None = None,
    tol: float = 1e-10,
    maxIter: int = 100,
) -> MSolution:
    """Solve for ``(D_r Y, D_r Z)`` with free term ``f(r) 1{r < t}``.

    Rows with ``t_i <= t_r`` are set to zero: the derivative of an
    ``F_t``-measurable variable in a later direction vanishes.
    """
    grid = ens.grid
    if not 0 <= r < grid.N:
        raise ValueError(f"need 0 <= r < N, got r={r}")
    L = grid.nodesN
    fr = case.f_nodes(grid)[r]
    phi = np.where(np.arange(L + 1) > r, fr, 0.0)
    reg = _regressor(case, ens, basis)
    sol, _ = solve_absvie(case.spec(grid), FreeTerm(phi), ens, reg, tol, maxIter)
    Y = np.array(sol.Y)
    Y[:, : r + 1] = 0.0
    Y.flags.writeable = False
    Zc = np.array(sol.Zc)
    Zc[: r + 1] = 0.0
    return MSolution(Y=Y, Zc=Zc, reg=sol.reg, stderrY=sol.stderrY)


def derivative_oracle(case: LinearRegularityCase, r: int, grid: TimeGrid) -> np.ndarray:
    """Deterministic backward recursion for ``D_r Y`` on every node."""
    N, L, h = grid.N, grid.nodesN, grid.h
    d = grid.steps_for(case.delta, "delta")
    A1, A2, A3 = (kernel_table(grid, a) for a in (case.A1, case.A2, case.A3))
    fr = case.f_nodes(grid)[r]
    y = np.where(np.arange(L + 1) > r, fr, 0.0)
    for i in range(N - 1, r, -1):
        acc = 0.0
        for j in range(i, N):
            acc += A1[j, i] * y[j] + A2[j + d, i + d] * y[j + d]
        y[i] = fr + h * acc
    y[: r + 1] = 0.0
    return y


@dataclass
class RepresentationReport:
    r: int
    relErrors: np.ndarray = field(repr=False)
    zBase: np.ndarray = field(repr=False)
    projected: np.ndarray = field(repr=False)

    @property
    def maxError(self) -> float:
        return float(self.relErrors.max()) if self.relErrors.size else 0.0

    @property
    def meanError(self) -> float:
        return float(self.relErrors.mean()) if self.relErrors.size else 0.0


def check_representation(base: MSolution, derivative: MSolution, r: int) -> RepresentationReport:
    """Compare ``Z(t_i, t_r)`` with ``E[D_r Y(t_i) | F_r]`` for r < i <= N.

    Errors are relative L2 over paths; both sides zero counts as no error.
    """
    reg = base.reg
    N = base.grid.N
    rows = np.arange(r + 1, N + 1)
    zb = base.Z_col(r, r + 1, N + 1)[..., 0]
    proj = reg.project(derivative.Y[:, r + 1 : N + 1], r)
    num = np.sqrt(np.mean((zb - proj) ** 2, axis=0))
    den = np.sqrt(np.mean(proj**2, axis=0))
    rel = np.where(num == 0, 0.0, num / np.where(den > 0, den, 1.0))
    assert rel.shape == rows.shape
    return RepresentationReport(r=r, relErrors=rel, zBase=zb.mean(axis=0), projected=proj.mean(axis=0))
