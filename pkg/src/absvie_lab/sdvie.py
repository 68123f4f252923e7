"""Left-point Euler simulation of stochastic delay Volterra equations.

    X(t_i) = phi(t_i) + h * sum_{j<i} b(t_i, t_j, X_j, X_{j-d}, u1_j, u1_{j-d1}, u2_j, u2_{j-d2})
                      + sum_{j<i} sigma(t_i, t_j, X_j, u1_j, u2_j) dW_j

Node arrays that carry a history are stored with the history first: an array for
delay ``d`` has ``d + N + 1`` columns and column ``d + i`` holds node ``i``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .grid import PathEnsemble, TimeGrid

__all__ = [
    "B_ARGS",
    "SimulationError",
    "SDVIECoeffs",
    "kernel_table",
    "HistorySpec",
    "StatePath",
    "with_history",
    "linear_sdvie_coeffs",
    "simulate_sdvie",
    "QuadraticCost",
    "performance",
]

B_ARGS = ("x", "xd", "u1", "u1d", "u2", "u2d")


class SimulationError(FloatingPointError):
    """A coefficient or cost evaluated to a non-finite value."""


def kernel_table(grid: TimeGrid, f=0.0) -> np.ndarray:
    """Table ``k[i, j] = f(t_i, t_j)`` for ``j < i`` and zero elsewhere.

    ``f`` is a constant, a callable of (t, s) broadcasting over arrays, or an
    existing (nodesN+1, nodesN+1) table whose upper triangle and diagonal are
    discarded. Rows cover the whole grid so shifted look-ups past T stay in
    range; callers zero-extend by construction of ``f`` when needed.
    """
    L = grid.nodesN
    t = grid.times
    if callable(f):
        tab = np.asarray(np.broadcast_to(f(t[:, None], t[None, :]), (L + 1, L + 1)), dtype=float).copy()
    else:
        arr = np.asarray(f, dtype=float)
        tab = np.array(np.broadcast_to(arr, (L + 1, L + 1)), dtype=float)
    tab = np.tril(tab, k=-1)
    if not np.all(np.isfinite(tab)):
        raise ValueError("kernel table has non-finite entries")
    tab.flags.writeable = False
    return tab


def _idx(grid: TimeGrid, t) -> np.ndarray:
    return np.rint(np.asarray(t) / grid.h).astype(np.int64)


@dataclass(frozen=True)
class SDVIECoeffs:
    """Drift ``b(t, s, x, xd, u1, u1d, u2, u2d)`` and diffusion ``sigma(t, s, x, u1, u2)``.

    Both receive a scalar ``t``, an array ``s`` of earlier times and per-path
    arrays of shape (paths, len(s)); arguments missing from ``uses`` are zeros.
    ``sigma`` may return (paths, len(s), m) to drive every Brownian component.
    """

    b: Callable[..., np.ndarray]
    sigma: Callable[..., np.ndarray]
    uses: frozenset[str] = frozenset(B_ARGS)
    name: str = ""


@dataclass(frozen=True, eq=False)
class HistorySpec:
    """Free term on nodes -d..N and control histories on -d_k..-1."""

    phi: np.ndarray
    theta1: np.ndarray = field(default_factory=lambda: np.zeros(0))
    theta2: np.ndarray = field(default_factory=lambda: np.zeros(0))


def with_history(u, theta, M: int, N: int) -> np.ndarray:
    """Prepend a control history to per-node controls on 0..N.

    ``u`` is (paths, N+1), (N+1,) or None (zero control); ``theta`` holds the
    values on nodes -d..-1 and is deterministic or per path.
    """
    theta = np.asarray(theta, dtype=float)
    d = theta.shape[-1] if theta.ndim else 0
    out = np.zeros((M, d + N + 1))
    if d:
        out[:, :d] = theta
    if u is not None:
        out[:, d:] = u
    return out


@dataclass(frozen=True, eq=False)
class StatePath:
    """Simulated state on nodes -d..N; column ``offset + i`` is node ``i``."""

    X: np.ndarray
    offset: int
    grid: TimeGrid

    def at(self, i: int) -> np.ndarray:
        return self.X[:, self.offset + i]

    @property
    def interior(self) -> np.ndarray:
        """Nodes 0..N, shape (paths, N+1)."""
        return self.X[:, self.offset :]

    def delayed(self, d: int) -> np.ndarray:
        """X(t_i - d h) for nodes 0..N."""
        if not 0 <= d <= self.offset:
            raise IndexError(f"delay of {d} steps exceeds the stored history of {self.offset}")
        return self.X[:, self.offset - d : self.X.shape[1] - d]

    def on_grid(self, d: int = 0) -> np.ndarray:
        """``delayed(d)`` zero-padded to the full grid, as a regression state feature."""
        out = np.zeros((self.X.shape[0], self.grid.nodesN + 1))
        out[:, : self.grid.N + 1] = self.delayed(d)
        return out


def linear_sdvie_coeffs(grid: TimeGrid, A1=0.0, A2=0.0, A3=0.0) -> SDVIECoeffs:
    """Coefficients of ``A1(t,s)X(s) + A2(t,s)X(s-delta)`` ds and ``A3(t,s)X(s)`` dW."""
    T1, T2, T3 = (kernel_table(grid, a) for a in (A1, A2, A3))

    def b(t, s, x, xd, **_):
        i, js = _idx(grid, t), _idx(grid, s)
        return T1[i, js] * x + T2[i, js] * xd

    def sigma(t, s, x, **_):
        i, js = _idx(grid, t), _idx(grid, s)
        return T3[i, js] * x

    return SDVIECoeffs(b=b, sigma=sigma, uses=frozenset({"x", "xd"}), name="linear")


def _check(v: np.ndarray, what: str, i: int, js: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(v)):
        bad = np.argwhere(~np.isfinite(v))[0]
        raise SimulationError(f"{what} is non-finite at (i={i}, j={int(js[bad[1]])}), path {int(bad[0])}")
    return v


def simulate_sdvie(
    coeffs: SDVIECoeffs,
    history: HistorySpec,
    ens: PathEnsemble,
    u1=None,
    u2=None,
    delays: tuple[int, int, int] = (0, 0, 0),
) -> StatePath:
    """Simulate on nodes 0..N with full kernel re-evaluation per node.

    ``u1``/``u2`` are extended control arrays from :func:`with_history` (or
    None for zero controls); ``delays`` are the step offsets (d, d1, d2).
    """
    grid = ens.grid
    M, N, h = ens.pathsM, grid.N, grid.h
    d, d1, d2 = (int(x) for x in delays)
    if min(d, d1, d2) < 0:
        raise ValueError("delays must be nonnegative")
    phi = np.asarray(history.phi, dtype=float)
    if phi.shape[-1] != d + N + 1:
        raise ValueError(f"phi must cover nodes -{d}..{N} ({d + N + 1} columns), got {phi.shape[-1]}")
    if not np.all(np.isfinite(phi)):
        raise ValueError("phi has non-finite entries")
    U1 = with_history(None, np.zeros(d1), M, N) if u1 is None else np.asarray(u1, dtype=float)
    U2 = with_history(None, np.zeros(d2), M, N) if u2 is None else np.asarray(u2, dtype=float)
    for name, U, dk in (("u1", U1, d1), ("u2", U2, d2)):
        if U.shape[-1] != dk + N + 1:
            raise ValueError(f"{name} must cover nodes -{dk}..{N} ({dk + N + 1} columns), got {U.shape[-1]}")
    U1 = np.broadcast_to(U1, (M, d1 + N + 1))
    U2 = np.broadcast_to(U2, (M, d2 + N + 1))

    X = np.empty((M, d + N + 1))
    X[:] = phi
    uses = coeffs.uses
    dW = ens.increments[:, :N, :]
    t = grid.times
    zero = np.float64(0.0)
    for i in range(1, N + 1):
        js = np.arange(i)
        a = {
            "x": X[:, d + js] if "x" in uses else zero,
            "xd": X[:, js] if "xd" in uses else zero,
            "u1": U1[:, d1 + js] if "u1" in uses else zero,
            "u1d": U1[:, js] if "u1d" in uses else zero,
            "u2": U2[:, d2 + js] if "u2" in uses else zero,
            "u2d": U2[:, js] if "u2d" in uses else zero,
        }
        bv = _check(np.broadcast_to(coeffs.b(t[i], t[js], **a), (M, i)), "drift", i, js)
        sv = coeffs.sigma(t[i], t[js], x=a["x"], u1=a["u1"], u2=a["u2"])
        sv = np.asarray(sv, dtype=float)
        if sv.ndim == 3:
            sv = np.broadcast_to(sv, (M, i, ens.dimsM))
            _check(sv.sum(axis=2), "diffusion", i, js)
            noise = np.einsum("mjk,mjk->m", sv, dW[:, :i, :])
        else:
            sv = _check(np.broadcast_to(sv, (M, i)), "diffusion", i, js)
            noise = np.einsum("mj,mj->m", sv, dW[:, :i, 0])
        X[:, d + i] = phi[..., d + i] + h * bv.sum(axis=1) + noise
    X.flags.writeable = False
    return StatePath(X=X, offset=d, grid=grid)


@dataclass(frozen=True)
class QuadraticCost:
    """``(1/2)(q X^2 + qt X_d^2 + r u^2 + rt u_d^2)`` with node weights on 0..N-1.

    Weights are scalars or arrays over nodes 0..N-1.
    """

    q: float | np.ndarray = 0.0
    qt: float | np.ndarray = 0.0
    r: float | np.ndarray = 0.0
    rt: float | np.ndarray = 0.0

    def __call__(self, i, x, xd, u, ud):
        def w(c):
            c = np.asarray(c, dtype=float)
            return c if c.ndim == 0 else c[i]

        return 0.5 * (w(self.q) * x**2 + w(self.qt) * xd**2 + w(self.r) * u**2 + w(self.rt) * ud**2)


def performance(
    cost: Callable,
    state: StatePath,
    u,
    delays: tuple[int, int] = (0, 0),
) -> tuple[float, float, np.ndarray]:
    """Left Riemann estimate of ``E int_0^T cost dt`` for one player.

    ``cost(i, x, xd, u, ud)`` is vectorised over nodes ``i`` (0..N-1) given as
    an index array, with per-path arrays (paths, N). ``u`` is the player's
    extended control and ``delays`` = (state delay, control delay) in steps.
    Returns (estimate, standard error, per-path values).
    """
    grid = state.grid
    N, h = grid.N, grid.h
    d, dk = delays
    M = state.X.shape[0]
    U = np.broadcast_to(np.asarray(u, dtype=float), (M, dk + N + 1))
    i = np.arange(N)
    x = state.interior[:, :N]
    xd = state.delayed(d)[:, :N]
    c = np.broadcast_to(cost(i, x, xd, U[:, dk : dk + N], U[:, :N]), (M, N))
    if not np.all(np.isfinite(c)):
        raise SimulationError("cost evaluated to a non-finite value")
    per_path = h * c.sum(axis=1)
    est = float(per_path.mean())
    se = float(per_path.std() / np.sqrt(M)) if M > 1 else 0.0
    return est, se, per_path
