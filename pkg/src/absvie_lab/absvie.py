"""Adapted M-solutions of anticipated backward stochastic Volterra equations.

The equation on the grid reads, for nodes ``i < N`` (``t_N = T``),

    Y(t_i) = phi(t_i) + h * sum_{i <= j < N} g(Lambda(t_i, t_j)) - sum_j Z(t_i, t_j) dW_j

with ``Y = phi`` on ``[T, T+K]`` and ``Z = eta`` on the pinned region (row index
above N or column index at least N). The solution is the fixed point of a fully
explicit Picard map: every argument of ``g`` is read from the previous iterate,
``Y`` is the regression of the accumulated right-hand side, the upper triangle
of ``Z`` comes from martingale coefficients of that right-hand side and the
lower triangle from the representation ``Y(t) = E[Y(t)] + int_0^t Z(t, s) dW(s)``.

``Z`` is stored as regression coefficients: on path p, ``Z(t_i, t_j)`` equals
``features[j][p] @ Zc[i, j, k]`` for Brownian component k.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .grid import DelaySpec, PathEnsemble, TimeGrid
from .regress import Basis, Regressor

__all__ = [
    "ARG_NAMES",
    "Y_ARGS",
    "Z_ARGS",
    "GeneratorSpec",
    "FreeTerm",
    "MSolution",
    "Diagnostics",
    "ConvergenceError",
    "GeneratorError",
    "anticipated_args",
    "average_weights",
    "picard_step",
    "initial_candidate",
    "solve_absvie",
    "msolution_residual",
    "msolution_residuals",
    "m2_distance",
    "check_usage_flags",
    "StabilityReport",
    "stability_probe",
]

ARG_NAMES = ("y", "z", "xi", "alpha", "beta", "gamma", "mu", "nu", "psi")
Y_ARGS = frozenset({"y", "alpha", "mu"})
Z_ARGS = frozenset({"z", "xi", "beta", "gamma", "nu", "psi"})


class GeneratorError(FloatingPointError):
    """The generator returned a non-finite value."""


class ConvergenceError(RuntimeError):
    """Picard iteration did not reach the tolerance within the iteration cap."""

    def __init__(self, message: str, diagnostics: "Diagnostics", last: "MSolution"):
        super().__init__(message)
        self.diagnostics = diagnostics
        self.last = last


@dataclass(frozen=True)
class GeneratorSpec:
    """Generator ``g`` together with the wiring of its arguments.

    ``g(t, s, y, z, xi, alpha, beta, gamma, mu, nu, psi)`` is called with a
    scalar ``t``, an array ``s`` of times ``>= t`` and per-path arrays shaped
    (paths, len(s)) for y/alpha/mu and (paths, len(s), m) for the Z-type
    arguments. Arguments not listed in ``uses`` are passed as zeros.
    """

    g: Callable[..., np.ndarray]
    uses: frozenset[str] = frozenset()
    lam: float = 0.0
    delays: DelaySpec = DelaySpec()
    lipschitzHint: float | None = None
    name: str = ""

    def __post_init__(self):
        bad = set(self.uses) - set(ARG_NAMES)
        if bad:
            raise ValueError(f"unknown generator arguments: {sorted(bad)}")
        object.__setattr__(self, "uses", frozenset(self.uses))


@dataclass(frozen=True, eq=False)
class FreeTerm:
    """Free term ``phi`` on every node and deterministic boundary data ``eta``.

    ``phi`` is (paths, nodesN+1) or (nodesN+1,) when deterministic. ``eta`` is a
    deterministic (nodesN+1, nodesN+1) table, read only on the pinned region.
    """

    phi: np.ndarray
    eta: np.ndarray | None = None

    def phi_paths(self, M: int, L: int) -> np.ndarray:
        phi = np.asarray(self.phi, dtype=float)
        if phi.shape == (L + 1,):
            phi = np.broadcast_to(phi, (M, L + 1))
        if phi.shape != (M, L + 1):
            raise ValueError(f"phi must have shape {(L + 1,)} or {(M, L + 1)}, got {phi.shape}")
        if not np.all(np.isfinite(phi)):
            raise ValueError("phi has non-finite entries")
        return phi

    def eta_table(self, L: int) -> np.ndarray:
        if self.eta is None:
            return np.zeros((L + 1, L + 1))
        eta = np.asarray(self.eta, dtype=float)
        if eta.shape != (L + 1, L + 1):
            raise ValueError(f"eta must have shape {(L + 1, L + 1)}, got {eta.shape}")
        return eta


def pinned_mask(grid: TimeGrid) -> np.ndarray:
    """Node pairs where Z is prescribed by the boundary data."""
    idx = np.arange(grid.nodesN + 1)
    return (idx[:, None] > grid.N) | (idx[None, :] >= grid.N)


@dataclass(frozen=True, eq=False)
class MSolution:
    Y: np.ndarray
    Zc: np.ndarray
    reg: Regressor
    stderrY: np.ndarray

    @property
    def meanY(self) -> np.ndarray:
        return self.Y.mean(axis=0)

    @property
    def grid(self) -> TimeGrid:
        return self.reg.ens.grid

    def Z(self, i: int, j: int) -> np.ndarray:
        """Per-path Z(t_i, t_j), shape (paths, m)."""
        return self.reg.features[j] @ self.Zc[i, j].T

    def Z_row(self, i: int, lo: int = 0, hi: int | None = None) -> np.ndarray:
        """Z(t_i, t_l) for lo <= l < hi, shape (paths, hi-lo, m)."""
        hi = self.Zc.shape[1] if hi is None else hi
        return np.einsum("lmp,lkp->mlk", self.reg.features[lo:hi], self.Zc[i, lo:hi])

    def Z_col(self, j: int, lo: int = 0, hi: int | None = None) -> np.ndarray:
        """Z(t_l, t_j) for lo <= l < hi, shape (paths, hi-lo, m)."""
        hi = self.Zc.shape[0] if hi is None else hi
        return np.einsum("mp,lkp->mlk", self.reg.features[j], self.Zc[lo:hi, j])

    def Z_mean(self) -> np.ndarray:
        """Path average of Z on every node pair, shape (L+1, L+1, m)."""
        fbar = self.reg.features.mean(axis=1)
        return np.einsum("jp,ijkp->ijk", fbar, self.Zc)


@dataclass
class Diagnostics:
    distances: list[float] = field(default_factory=list)
    ratios: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False

    def record(self, d: float) -> None:
        if self.distances:
            prev = self.distances[-1]
            self.ratios.append(d / prev if prev > 0 else 0.0)
        self.distances.append(d)
        self.iterations += 1


def average_weights(grid: TimeGrid, offsets: np.ndarray, lam: float) -> np.ndarray:
    """Left-Riemann weights of ``int_{t_j}^{t_j+off_j} e^{lam(t_j - u)} f(u) du``.

    Row j of the (N, nodesN+1) result holds ``h e^{lam(t_j - t_l)}`` for
    ``j <= l < j + off_j``.
    """
    N, L, h = grid.N, grid.nodesN, grid.h
    t = grid.times
    Wt = np.zeros((N, L + 1))
    for j in range(N):
        ls = np.arange(j, j + offsets[j])
        Wt[j, ls] = h * np.exp(lam * (t[j] - t[ls]))
    return Wt


class _ArgBuilder:
    """Evaluates the nine generator arguments from a candidate solution."""

    def __init__(self, sol: MSolution, spec: GeneratorSpec):
        grid = sol.grid
        self.sol = sol
        self.uses = spec.uses
        self.dOff, self.zOff = spec.delays.offsets(grid)
        self.M = sol.Y.shape[0]
        self.m = sol.Zc.shape[2]
        self.L = grid.nodesN
        if "mu" in self.uses:
            self.MU = sol.Y @ average_weights(grid, self.dOff, spec.lam).T
        if self.uses & {"nu", "psi"}:
            self.Wz = average_weights(grid, self.zOff, spec.lam)

    def row(self, i: int, js: np.ndarray) -> dict[str, np.ndarray]:
        sol, uses, L = self.sol, self.uses, self.L
        js = np.asarray(js, dtype=np.int64)
        if js.size and js.min() < i:
            raise IndexError("generator arguments are only defined for s >= t")
        zero_y = np.float64(0.0)
        zero_z = np.zeros(self.m)
        args = {name: (zero_z if name in Z_ARGS else zero_y) for name in ARG_NAMES}
        if "y" in uses:
            args["y"] = sol.Y[:, js]
        if "alpha" in uses:
            args["alpha"] = sol.Y[:, js + self.dOff[js]]
        if "mu" in uses:
            args["mu"] = self.MU[:, js]
        if uses & {"z", "beta", "nu"}:
            ZR = sol.Z_row(i, i, L + 1)
            if "z" in uses:
                args["z"] = ZR[:, js - i]
            if "beta" in uses:
                args["beta"] = ZR[:, js + self.zOff[js] - i]
            if "nu" in uses:
                args["nu"] = np.einsum("jl,mlk->mjk", self.Wz[js, i:], ZR)
        if uses & {"xi", "gamma", "psi"}:
            ZC = sol.Z_col(i, i, L + 1)
            if "xi" in uses:
                args["xi"] = ZC[:, js - i]
            if "gamma" in uses:
                args["gamma"] = ZC[:, js + self.zOff[js] - i]
            if "psi" in uses:
                args["psi"] = np.einsum("jl,mlk->mjk", self.Wz[js, i:], ZC)
        return args


def anticipated_args(candidate: MSolution, i: int, j: int, spec: GeneratorSpec) -> dict[str, np.ndarray]:
    """Per-path values of (y, z, xi, alpha, beta, gamma, mu, nu, psi) at (t_i, t_j).

    Every argument is computed regardless of the generator's usage flags.
    """
    grid = candidate.grid
    if not 0 <= i <= j < grid.N:
        raise IndexError(f"need 0 <= i <= j < N, got i={i}, j={j}")
    full = GeneratorSpec(spec.g, frozenset(ARG_NAMES), spec.lam, spec.delays)
    args = _ArgBuilder(candidate, full).row(i, np.array([j]))
    return {k: v[:, 0] for k, v in args.items()}


def _eval_g(spec: GeneratorSpec, grid: TimeGrid, i: int, js: np.ndarray, args: dict, M: int) -> np.ndarray:
    t = grid.times
    out = spec.g(t[i], t[js], **args)
    out = np.broadcast_to(np.asarray(out, dtype=float), (M, js.size))
    if not np.all(np.isfinite(out)):
        bad = int(js[np.argmax(~np.all(np.isfinite(out), axis=0))])
        raise GeneratorError(f"generator {spec.name or spec.g!r} returned a non-finite value at (i={i}, j={bad})")
    return out


def _as_regressor(ens: PathEnsemble, basis) -> Regressor:
    if isinstance(basis, Regressor):
        if basis.ens is not ens:
            raise ValueError("regressor was built on a different ensemble")
        return basis
    return Regressor(ens, basis if basis is not None else Basis())


def initial_candidate(free: FreeTerm, reg: Regressor) -> MSolution:
    """Zero interior with the boundary rows and pinned region copied in."""
    ens = reg.ens
    grid = ens.grid
    M, L, N, m = ens.pathsM, grid.nodesN, grid.N, ens.dimsM
    phi = free.phi_paths(M, L)
    Y = np.zeros((M, L + 1))
    Y[:, N:] = phi[:, N:]
    Zc = np.zeros((L + 1, L + 1, m, reg.P))
    pin = pinned_mask(grid)
    Zc[..., 0][pin] = free.eta_table(L)[pin][:, None]
    return MSolution(Y=Y, Zc=Zc, reg=reg, stderrY=np.zeros(L + 1))


def picard_step(candidate: MSolution, spec: GeneratorSpec, free: FreeTerm) -> MSolution:
    """One application of the Picard map to ``candidate``."""
    reg = candidate.reg
    ens = reg.ens
    grid = ens.grid
    M, L, N, m, h = ens.pathsM, grid.nodesN, grid.N, ens.dimsM, grid.h
    phi = free.phi_paths(M, L)
    F = reg.features
    dW = ens.increments

    builder = _ArgBuilder(candidate, spec)
    GT = np.empty((N, M))
    for i in range(N):
        js = np.arange(i, N)
        gv = _eval_g(spec, grid, i, js, builder.row(i, js), M)
        GT[i] = phi[:, i] + h * gv.sum(axis=1)

    Y = np.array(phi, dtype=float, copy=True)
    se = np.zeros(L + 1)
    Zc = np.zeros_like(candidate.Zc)
    pin = pinned_mask(grid)
    Zc[..., 0][pin] = free.eta_table(L)[pin][:, None]

    def fit(VT: np.ndarray, const: np.ndarray, j: int):
        # regression and martingale coefficients of the rows of VT at node j
        Fj = F[j]
        c = reg.solve_moments(Fj.T @ VT.T, j)
        c[:, const] = 0.0
        c[0, const] = VT[const, 0]
        zs = []
        for k in range(m):
            Fd = Fj * dW[:, j, k][:, None]
            cz = reg.solve_moments(Fd.T @ VT.T - (Fd.T @ Fj) @ c, j) / h
            cz[:, const] = 0.0
            zs.append(cz.T)
        return c, np.stack(zs, axis=1)

    def tower(VT: np.ndarray, j: int) -> np.ndarray:
        # E[V dW_j | F_j] = E[E[V | F_{j+1}] dW_j | F_j]: projecting on F_{j+1}
        # first removes the noise of the increments after t_{j+1}
        P = (F[j + 1] @ reg.coef(VT.T, j + 1)).T
        return P, np.all(P == P[:, :1], axis=1)

    # Y on [0, T) and the upper triangle (i <= j < N)
    for j in range(N):
        Y[:, j] = reg.project(GT[j], j)
        se[j] = (GT[j] - Y[:, j]).std() / np.sqrt(M)
        _, z = fit(*tower(GT[: j + 1], j), j)
        Zc[: j + 1, j] = z

    # lower triangle (j < i <= N) from the representation of Y(t_i)
    YT = np.ascontiguousarray(Y[:, : N + 1].T)
    for j in range(N):
        _, z = fit(*tower(YT[j + 1 :], j), j)
        Zc[j + 1 : N + 1, j] = z

    Y.flags.writeable = False
    return MSolution(Y=Y, Zc=Zc, reg=reg, stderrY=se)


def m2_distance(a: MSolution, b: MSolution) -> float:
    """Discrete M^2 distance: Y over nodes (weight h), Z over node pairs (weight h^2)."""
    if a.reg is not b.reg:
        raise ValueError("solutions must share the regressor to be compared")
    h = a.grid.h
    dY = h * np.mean((a.Y - b.Y) ** 2, axis=0).sum()
    dc = a.Zc - b.Zc
    dZ = h * h * np.einsum("ijkp,jpq,ijkq->", dc, a.reg._gram, dc)
    return float(np.sqrt(dY + max(dZ, 0.0)))


def solve_absvie(
    spec: GeneratorSpec,
    free: FreeTerm,
    ens: PathEnsemble,
    basis: Basis | Regressor | None = None,
    tol: float = 1e-10,
    maxIter: int = 100,
) -> tuple[MSolution, Diagnostics]:
    """Iterate the Picard map from the zero-extended candidate until the
    successive-iterate distance drops below ``tol``.

    Raises:
        ConvergenceError: after ``maxIter`` steps; carries the ratio history.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    reg = _as_regressor(ens, basis)
    sol = initial_candidate(free, reg)
    diag = Diagnostics()
    for _ in range(maxIter):
        new = picard_step(sol, spec, free)
        d = m2_distance(new, sol)
        diag.record(d)
        sol = new
        if d < tol:
            diag.converged = True
            return sol, diag
    ratios = ", ".join(f"{r:.3g}" for r in diag.ratios[-5:])
    raise ConvergenceError(
        f"Picard iteration did not converge in {maxIter} steps (last distance "
        f"{diag.distances[-1]:.3g}, recent ratios [{ratios}]); the contraction regime "
        "needs a smaller horizon or Lipschitz scale",
        diag,
        sol,
    )


def msolution_residuals(sol: MSolution) -> np.ndarray:
    """Relative L2 residual of ``Y(t_i) - E[Y(t_i)] - sum_{j<i} Z(t_i,t_j) dW_j`` for i <= N."""
    grid = sol.grid
    N = grid.N
    dW = sol.reg.ens.increments
    out = np.zeros(N + 1)
    for i in range(1, N + 1):
        Zr = sol.Z_row(i, 0, i)
        r = sol.Y[:, i] - sol.Y[:, i].mean() - np.einsum("mjk,mjk->m", Zr, dW[:, :i, :])
        num = np.sqrt(np.mean(r**2))
        den = np.sqrt(np.mean(sol.Y[:, i] ** 2))
        out[i] = 0.0 if num == 0 else num / max(den, 1e-300)
    return out


def msolution_residual(sol: MSolution) -> float:
    """Largest relative residual of the representation relation over [0, T]."""
    return float(msolution_residuals(sol).max())


def check_usage_flags(spec: GeneratorSpec, m: int = 1, samples: int = 64, seed: int = 0) -> list[str]:
    """Names of arguments outside ``spec.uses`` that change the output when perturbed."""
    rng = np.random.default_rng(seed)
    n = 4

    def draw(name):
        return rng.normal(size=(samples, n, m)) if name in Z_ARGS else rng.normal(size=(samples, n))

    base = {k: draw(k) for k in ARG_NAMES}
    s = np.linspace(0.5, 1.0, n)
    ref = np.broadcast_to(spec.g(0.25, s, **base), (samples, n))
    leaks = []
    for name in ARG_NAMES:
        if name in spec.uses:
            continue
        pert = dict(base)
        pert[name] = base[name] + 1.0 + rng.normal(size=base[name].shape)
        if not np.array_equal(np.broadcast_to(spec.g(0.25, s, **pert), (samples, n)), ref):
            leaks.append(name)
    return leaks


@dataclass(frozen=True)
class StabilityReport:
    solution_distance: float
    data_distance: float

    @property
    def ratio(self) -> float:
        if self.data_distance == 0:
            return 0.0 if self.solution_distance == 0 else float("inf")
        return self.solution_distance / self.data_distance


def stability_probe(
    specA: GeneratorSpec,
    freeA: FreeTerm,
    specB: GeneratorSpec,
    freeB: FreeTerm,
    ens: PathEnsemble,
    basis: Basis | Regressor | None = None,
    tol: float = 1e-10,
    maxIter: int = 100,
) -> StabilityReport:
    """Distance between two solutions next to the data distance that bounds it.

    The generator gap is evaluated along solution A, with A's argument wiring.
    """
    reg = _as_regressor(ens, basis)
    solA, _ = solve_absvie(specA, freeA, ens, reg, tol, maxIter)
    solB, _ = solve_absvie(specB, freeB, ens, reg, tol, maxIter)
    grid = ens.grid
    M, L, N, h = ens.pathsM, grid.nodesN, grid.N, grid.h
    dphi = freeA.phi_paths(M, L) - freeB.phi_paths(M, L)
    data = h * np.mean(dphi**2, axis=0).sum()
    pin = pinned_mask(grid)
    deta = freeA.eta_table(L) - freeB.eta_table(L)
    data += h * h * np.sum(deta[pin] ** 2)
    full = GeneratorSpec(specA.g, specA.uses | specB.uses, specA.lam, specA.delays)
    builder = _ArgBuilder(solA, full)
    for i in range(N):
        js = np.arange(i, N)
        args = builder.row(i, js)
        gap = _eval_g(specA, grid, i, js, args, M) - _eval_g(specB, grid, i, js, args, M)
        data += h * np.mean((h * np.abs(gap).sum(axis=1)) ** 2)
    return StabilityReport(solution_distance=m2_distance(solA, solB), data_distance=float(np.sqrt(data)))
