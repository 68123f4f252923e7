"""Open-loop Nash equilibrium of the two-player linear-quadratic delay game.

State (left-point Euler on the grid)

    X(t) = phi(t) + int_0^t [a1 X(s) + a2 X(s-d) + b1 u1(s) + b2 u2(s) + c1 u1(s-d1) + c2 u2(s-d2)] ds
                  + int_0^t [at1 X(s) + bt1 u1(s) + bt2 u2(s)] dW(s)

with all kernels evaluated at (t, s), and costs

    J_i = 1/2 E int_0^T (q_i X^2 + qt_i X(t-d)^2 + r_i u_i^2 + rt_i u_i(t-d_i)^2) dt.

Each player's adjoint is a linear ABSVIE; the equilibrium control is
``u_i = -Y0_i / (r_i(t) + rt_i(t + d_i))``. The solver is a damped fixed point
on the controls started from zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .absvie import FreeTerm, MSolution, solve_absvie
from .duality import adjoint_generator
from .grid import PathEnsemble, TimeGrid
from .regress import Basis, Regressor
from .sdvie import HistorySpec, QuadraticCost, SDVIECoeffs, StatePath, kernel_table, performance, simulate_sdvie, with_history

__all__ = [
    "LQGameSpec",
    "AdjointSolution",
    "NashIterate",
    "NashDiagnostics",
    "NashConvergenceError",
    "simulate_state",
    "solve_adjoint",
    "nash_update",
    "solve_nash",
    "stationarity_residual",
    "perturbation_check",
    "hamiltonian",
    "player_costs",
    "NashResult",
]


def _node_values(v, t: np.ndarray) -> np.ndarray:
    if callable(v):
        return np.asarray(np.broadcast_to(v(t), t.shape), dtype=float)
    return np.full(t.shape, float(v))


@dataclass(frozen=True)
class LQGameSpec:
    """Kernels (constants, callables of (t, s) or tables), costs (constants or
    callables of t), delays in time units and deterministic histories.
    """

    a1: object = 0.0
    a2: object = 0.0
    at1: object = 0.0
    b1: object = 0.0
    b2: object = 0.0
    c1: object = 0.0
    c2: object = 0.0
    bt1: object = 0.0
    bt2: object = 0.0
    q1: object = 0.0
    q2: object = 0.0
    qt1: object = 0.0
    qt2: object = 0.0
    r1: object = 1.0
    r2: object = 1.0
    rt1: object = 0.0
    rt2: object = 0.0
    delta: float = 0.0
    delta1: float = 0.0
    delta2: float = 0.0
    phi: object = 1.0
    theta1: float = 0.0
    theta2: float = 0.0

    def swap_players(self) -> "LQGameSpec":
        """The same game with the roles of the two players exchanged."""
        pairs = [("b1", "b2"), ("c1", "c2"), ("bt1", "bt2"), ("q1", "q2"), ("qt1", "qt2"),
                 ("r1", "r2"), ("rt1", "rt2"), ("delta1", "delta2"), ("theta1", "theta2")]
        kw = {}
        for x, y in pairs:
            kw[x], kw[y] = getattr(self, y), getattr(self, x)
        return replace(self, **kw)

    def compile(self, grid: TimeGrid) -> "_Compiled":
        return _Compiled(self, grid)


class _Compiled:
    """Grid tables for one game; costs are zero from T on."""

    def __init__(self, spec: LQGameSpec, grid: TimeGrid):
        self.spec = spec
        self.grid = grid
        N, L = grid.N, grid.nodesN
        self.d = grid.steps_for(spec.delta, "delta")
        self.du = (grid.steps_for(spec.delta1, "delta1"), grid.steps_for(spec.delta2, "delta2"))
        if max(self.d, *self.du) > L - N:
            raise ValueError("the grid extension K must cover every delay")
        kt = lambda v: kernel_table(grid, v)  # noqa: E731
        self.a1, self.a2, self.at1 = kt(spec.a1), kt(spec.a2), kt(spec.at1)
        self.b = (kt(spec.b1), kt(spec.b2))
        self.c = (kt(spec.c1), kt(spec.c2))
        self.bt = (kt(spec.bt1), kt(spec.bt2))
        t = grid.times

        def cost(v):
            out = _node_values(v, t)
            out[N:] = 0.0
            return out

        self.q = (cost(spec.q1), cost(spec.q2))
        self.qt = (cost(spec.qt1), cost(spec.qt2))
        self.r = (cost(spec.r1), cost(spec.r2))
        self.rt = (cost(spec.rt1), cost(spec.rt2))
        for i in range(2):
            if np.any(self.q[i] < 0) or np.any(self.qt[i] < 0):
                raise ValueError(f"state cost weights of player {i + 1} must be nonnegative")
            if np.any(self.divisor(i) <= 0):
                raise ValueError(f"r_{i + 1}(t) + rt_{i + 1}(t + delta_{i + 1}) must be positive on [0, T)")
        hist_t = (np.arange(-self.d, N + 1)) * grid.h
        self.phi = _node_values(spec.phi, hist_t)
        self.theta = (np.full(self.du[0], float(spec.theta1)), np.full(self.du[1], float(spec.theta2)))

    def divisor(self, i: int) -> np.ndarray:
        """``r_i(t_n) + rt_i(t_{n+d_i})`` on nodes 0..N-1 (rt is zero from T on)."""
        N = self.grid.N
        di = self.du[i]
        return self.r[i][:N] + self.rt[i][di : di + N]

    def coeffs(self) -> SDVIECoeffs:
        g = self.grid
        a1, a2, at1 = self.a1, self.a2, self.at1
        (b1, b2), (c1, c2), (bt1, bt2) = self.b, self.c, self.bt

        def drift(t, s, x, xd, u1, u1d, u2, u2d):
            i = int(round(t / g.h))
            js = np.rint(s / g.h).astype(np.int64)
            p1 = b1[i, js] * u1 + c1[i, js] * u1d
            p2 = b2[i, js] * u2 + c2[i, js] * u2d
            return a1[i, js] * x + a2[i, js] * xd + (p1 + p2)

        def diffusion(t, s, x, u1, u2):
            i = int(round(t / g.h))
            js = np.rint(s / g.h).astype(np.int64)
            return at1[i, js] * x + (bt1[i, js] * u1 + bt2[i, js] * u2)

        return SDVIECoeffs(b=drift, sigma=diffusion, name="lq-game")


def simulate_state(game: _Compiled, ens: PathEnsemble, u1: np.ndarray, u2: np.ndarray) -> StatePath:
    """State under controls given on nodes 0..N, shape (paths, N+1)."""
    M, N = ens.pathsM, game.grid.N
    U1 = with_history(u1, game.theta[0], M, N)
    U2 = with_history(u2, game.theta[1], M, N)
    return simulate_sdvie(game.coeffs(), HistorySpec(game.phi), ens, U1, U2, (game.d, *game.du))


@dataclass(frozen=True, eq=False)
class AdjointSolution:
    sol: MSolution
    Y0: np.ndarray
    player: int


def _regressor(game: _Compiled, state: StatePath, ens: PathEnsemble, basis: Basis | None) -> Regressor:
    basis = basis or Basis()
    feats = {}
    X = state.on_grid()
    if np.ptp(X, axis=0).max() > 0:
        feats["X"] = X
        if game.d:
            feats["Xd"] = state.on_grid(game.d)
    return Regressor(ens, basis.with_state(**feats) if feats else basis)


def solve_adjoint(
    game: _Compiled,
    state: StatePath,
    player: int,
    ens: PathEnsemble,
    basis: Basis | Regressor | None = None,
    tol: float = 1e-10,
    maxIter: int = 100,
) -> AdjointSolution:
    """Adjoint ABSVIE of ``player`` (0 or 1) and the projected control gradient ``Y0``."""
    grid = ens.grid
    M, N, L, h = ens.pathsM, grid.N, grid.nodesN, grid.h
    i = player
    d, di = game.d, game.du[i]
    reg = basis if isinstance(basis, Regressor) else _regressor(game, state, ens, basis)
    X = state.interior
    w = game.q[i][: N] + game.qt[i][d : d + N]
    phi = np.zeros((M, L + 1))
    phi[:, :N] = w[None, :] * X[:, :N]
    spec = adjoint_generator(grid, game.a1, game.a2, game.at1, d, name=f"adjoint-{i + 1}")
    sol, _ = solve_absvie(spec, FreeTerm(phi), ens, reg, tol, maxIter)

    B, C, Bt = game.b[i], game.c[i], game.bt[i]
    Y = sol.Y
    Y0 = np.zeros((M, N + 1))
    use_bt = Bt.any()
    for n in range(N - 1):
        v = Y[:, n + 1 : N] @ B[n + 1 : N, n]
        v = v + Y[:, n + 1 + di : N + di] @ C[n + 1 + di : N + di, n + di]
        if use_bt:
            v = v + sol.Z_col(n, n + 1, N)[..., 0] @ Bt[n + 1 : N, n]
        Y0[:, n] = reg.project(h * v, n)
    return AdjointSolution(sol=sol, Y0=Y0, player=i)


def nash_update(game: _Compiled, adjoints: tuple[AdjointSolution, AdjointSolution]) -> tuple[np.ndarray, np.ndarray]:
    """Candidate controls ``-Y0_i / (r_i + rt_i(. + d_i))`` on nodes 0..N-1; node N is zero."""
    N = game.grid.N
    out = []
    for i, adj in enumerate(adjoints):
        u = np.zeros_like(adj.Y0)
        u[:, :N] = -adj.Y0[:, :N] / game.divisor(i)[None, :]
        out.append(u)
    return out[0], out[1]


@dataclass(frozen=True, eq=False)
class NashIterate:
    u1: np.ndarray
    u2: np.ndarray
    iteration: int
    distance: float

    def control(self, i: int) -> np.ndarray:
        return self.u1 if i == 0 else self.u2


@dataclass
class NashDiagnostics:
    distances: list[float] = field(default_factory=list)
    J1: list[float] = field(default_factory=list)
    J2: list[float] = field(default_factory=list)
    converged: bool = False


class NashConvergenceError(RuntimeError):
    def __init__(self, message: str, diagnostics: NashDiagnostics, last: NashIterate):
        super().__init__(message)
        self.diagnostics = diagnostics
        self.last = last


def player_costs(game: _Compiled, state: StatePath, u1: np.ndarray, u2: np.ndarray, ens: PathEnsemble):
    """Per-player (estimate, stderr, per-path values)."""
    M, N = ens.pathsM, game.grid.N
    out = []
    for i, u in enumerate((u1, u2)):
        cost = QuadraticCost(game.q[i][:N], game.qt[i][:N], game.r[i][:N], game.rt[i][:N])
        U = with_history(u, game.theta[i], M, N)
        out.append(performance(cost, state, U, (game.d, game.du[i])))
    return out


def _l2(grid: TimeGrid, a: np.ndarray) -> float:
    return float(np.sqrt(grid.h * np.mean(a[:, : grid.N] ** 2, axis=0).sum()))


@dataclass(frozen=True, eq=False)
class NashResult:
    iterate: NashIterate
    state: StatePath
    adjoints: tuple[AdjointSolution, AdjointSolution]
    diagnostics: NashDiagnostics
    game: _Compiled


def solve_nash(
    spec: LQGameSpec,
    ens: PathEnsemble,
    basis: Basis | None = None,
    damping: float = 0.5,
    tol: float = 1e-8,
    maxIter: int = 200,
    adjointTol: float = 1e-10,
) -> NashResult:
    """Damped fixed point ``u <- (1-rho) u + rho * candidate`` from ``u = 0``.

    Stops when the L2 step over both players is below ``tol``. The returned
    adjoints are those of the final state, so they match the returned controls.
    """
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    game = spec.compile(ens.grid)
    grid = ens.grid
    M, N = ens.pathsM, grid.N
    u1 = np.zeros((M, N + 1))
    u2 = np.zeros((M, N + 1))
    diag = NashDiagnostics()
    for it in range(1, maxIter + 1):
        state = simulate_state(game, ens, u1, u2)
        (j1, _, _), (j2, _, _) = player_costs(game, state, u1, u2, ens)
        diag.J1.append(j1)
        diag.J2.append(j2)
        reg = _regressor(game, state, ens, basis)
        adj = tuple(solve_adjoint(game, state, i, ens, reg, adjointTol) for i in (0, 1))
        c1, c2 = nash_update(game, adj)
        n1 = (1 - damping) * u1 + damping * c1
        n2 = (1 - damping) * u2 + damping * c2
        dist = float(np.hypot(_l2(grid, n1 - u1), _l2(grid, n2 - u2)))
        diag.distances.append(dist)
        u1, u2 = n1, n2
        if dist < tol:
            diag.converged = True
            state = simulate_state(game, ens, u1, u2)
            reg = _regressor(game, state, ens, basis)
            adj = tuple(solve_adjoint(game, state, i, ens, reg, adjointTol) for i in (0, 1))
            return NashResult(NashIterate(u1, u2, it, dist), state, adj, diag, game)
    raise NashConvergenceError(
        f"Nash iteration did not converge in {maxIter} steps (last step {diag.distances[-1]:.3g}); "
        "try a smaller damping or weaker coupling kernels",
        diag,
        NashIterate(u1, u2, maxIter, diag.distances[-1]),
    )


def stationarity_residual(game: _Compiled, iterate: NashIterate, adjoints) -> np.ndarray:
    """Normalised ``|| Y0_i + (r_i + rt_i(. + d_i)) u_i ||`` per player and node, shape (2, N)."""
    N = game.grid.N
    out = np.zeros((2, N))
    for i, adj in enumerate(adjoints):
        Y0 = adj.Y0[:, :N]
        Du = game.divisor(i)[None, :] * iterate.control(i)[:, :N]
        num = np.sqrt(np.mean((Y0 + Du) ** 2, axis=0))
        scale = np.sqrt(np.mean(Y0**2, axis=0)).max() + np.sqrt(np.mean(Du**2, axis=0)).max()
        out[i] = num / scale if scale > 0 else num
    return out


def perturbation_check(
    game: _Compiled,
    iterate: NashIterate,
    directions: list[np.ndarray],
    epsilons: list[float],
    ens: PathEnsemble,
) -> list[dict]:
    """Unilateral deviations ``u_i* + eps v``: paired cost increments per player.

    Rows hold player (1 or 2), direction index, eps, dJ and its paired standard error.
    """
    M, N = ens.pathsM, game.grid.N
    base_state = simulate_state(game, ens, iterate.u1, iterate.u2)
    base = player_costs(game, base_state, iterate.u1, iterate.u2, ens)
    rows = []
    for i in (0, 1):
        for k, v in enumerate(directions):
            v = np.broadcast_to(np.asarray(v, dtype=float), (M, N + 1))
            for eps in epsilons:
                u1, u2 = iterate.u1, iterate.u2
                if i == 0:
                    u1 = u1 + eps * v
                else:
                    u2 = u2 + eps * v
                st = simulate_state(game, ens, u1, u2)
                per = player_costs(game, st, u1, u2, ens)[i][2]
                diff = per - base[i][2]
                rows.append(
                    {"player": i + 1, "direction": k, "eps": float(eps), "dJ": float(diff.mean()),
                     "stderr": float(diff.std() / np.sqrt(M))}
                )
    return rows


def hamiltonian(game: _Compiled, iterate: NashIterate, adjoints, player: int, n: int, u) -> np.ndarray:
    """``-(Y0_i + (r_i + rt_i(. + d_i)) u_i*) u`` per path at node ``n``."""
    bracket = adjoints[player].Y0[:, n] + game.divisor(player)[n] * iterate.control(player)[:, n]
    return -bracket * u
