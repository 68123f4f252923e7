"""Named problem families that experiment configs can refer to.

Every builtin turns (params, ensemble, basis, solver settings) into result rows
``(t, quantity, value, stderr)``, a diagnostics mapping and a pass/fail verdict.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .absvie import FreeTerm, GeneratorSpec, average_weights, msolution_residual, solve_absvie
from .comparison import ComparisonCase, run_comparison
from .duality import DualityCase, check_duality, deterministic_duality
from .game import LQGameSpec, solve_nash, stationarity_residual
from .grid import DelaySpec, PathEnsemble, TimeGrid
from .regress import Basis
from .regularity import LinearRegularityCase, check_representation, derivative_oracle, solve_base, solve_derivative
from .sdvie import HistorySpec, linear_sdvie_coeffs, simulate_sdvie

Row = tuple[Any, str, float, float]


@dataclass
class Outcome:
    rows: list[Row]
    diagnostics: dict
    verdict: bool


@dataclass(frozen=True)
class Settings:
    tol: float = 1e-10
    maxIter: int = 100
    damping: float = 0.5


@dataclass(frozen=True)
class Builtin:
    name: str
    kind: str
    description: str
    params: dict[str, Any]
    run: Callable[[dict, PathEnsemble, Basis, Settings], Outcome] = field(repr=False)

    def resolve(self, given: dict) -> dict:
        unknown = set(given) - set(self.params)
        if unknown:
            raise ValueError(f"builtin {self.name!r} has no parameter(s) {sorted(unknown)}; known: {sorted(self.params)}")
        out = dict(self.params)
        out.update(given)
        return out


REGISTRY: dict[str, Builtin] = {}


def register(name: str, kind: str, description: str, **params):
    def wrap(fn):
        REGISTRY[name] = Builtin(name, kind, description, params, fn)
        return fn

    return wrap


def catalog() -> list[dict]:
    """Builtins sorted by (kind, name) with their default parameters."""
    return [
        {"name": b.name, "kind": b.kind, "description": b.description, "params": dict(b.params)}
        for b in sorted(REGISTRY.values(), key=lambda b: (b.kind, b.name))
    ]


def _y_rows(grid: TimeGrid, sol, upto: int | None = None) -> list[Row]:
    N = grid.N if upto is None else upto
    mean = sol.Y.mean(axis=0)
    return [(float(grid.times[i]), "Y_mean", float(mean[i]), float(sol.stderrY[i])) for i in range(N + 1)]


def _anticipated_oracle(grid: TimeGrid, k: float, d: int, x0: float, lam: float | None) -> np.ndarray:
    """Deterministic solution with Y = x0 from T on; exact linear solve on the grid."""
    N, L, h = grid.N, grid.nodesN, grid.h
    A = np.zeros((L + 1, L + 1))
    if lam is None:
        for i in range(N):
            for j in range(i, N):
                A[i, j + d] += h * k
    else:
        Wt = average_weights(grid, np.full(N, d), lam)
        for i in range(N):
            A[i] += h * k * Wt[i:N].sum(axis=0)
    b = np.full(L + 1, x0)
    A[N:] = 0.0
    return np.linalg.solve(np.eye(L + 1) - A, b)


def _absvie_outcome(grid, sol, diag, exact_rows, err, limit) -> Outcome:
    res = msolution_residual(sol)
    rows = _y_rows(grid, sol) + exact_rows
    diagnostics = {
        "iterations": diag.iterations,
        "distances": diag.distances,
        "ratios": diag.ratios,
        "msolution_residual": res,
        "error": err,
        "error_limit": limit,
    }
    return Outcome(rows, diagnostics, bool(err <= limit and res <= 0.05))


@register("constant", "solve-absvie", "g = c, phi = x0; Y(t) = x0 + c (T - t)", c=0.5, x0=1.0)
def _constant(p, ens, basis, st):
    grid = ens.grid
    c, x0 = float(p["c"]), float(p["x0"])
    spec = GeneratorSpec(lambda t, s, **_: np.full(np.shape(s), c), frozenset(), name="constant")
    sol, diag = solve_absvie(spec, FreeTerm(np.full(grid.nodesN + 1, x0)), ens, basis, st.tol, st.maxIter)
    t = grid.times[: grid.N + 1]
    exact = x0 + c * (grid.T - t)
    err = float(np.abs(sol.Y[:, : grid.N + 1] - exact).max())
    rows = [(float(t[i]), "Y_exact", float(exact[i]), 0.0) for i in range(grid.N + 1)]
    return _absvie_outcome(grid, sol, diag, rows, err, 1e-10)


def _anticipated(p, ens, basis, st, lam):
    grid = ens.grid
    k, x0 = float(p["k"]), float(p["x0"])
    d = grid.steps_for(float(p["delta"]), "delta")
    if lam is None:
        spec = GeneratorSpec(lambda t, s, alpha, **_: k * alpha, frozenset({"alpha"}), delays=DelaySpec(d, 0), name="anticipated-y")
    else:
        spec = GeneratorSpec(lambda t, s, mu, **_: k * mu, frozenset({"mu"}), lam=lam, delays=DelaySpec(d, 0), name="average-y")
    sol, diag = solve_absvie(spec, FreeTerm(np.full(grid.nodesN + 1, x0)), ens, basis, st.tol, st.maxIter)
    y = _anticipated_oracle(grid, k, d, x0, lam)
    N = grid.N
    err = float(np.max(np.abs(sol.meanY[: N + 1] / y[: N + 1] - 1.0)))
    rows = [(float(grid.times[i]), "Y_oracle", float(y[i]), 0.0) for i in range(N + 1)]
    return _absvie_outcome(grid, sol, diag, rows, err, 1e-8)


@register("anticipated-y", "solve-absvie", "g = k Y(s + delta), phi = x0; deterministic recursion oracle", k=1.0, delta=0.25, x0=1.0)
def _anticipated_y(p, ens, basis, st):
    return _anticipated(p, ens, basis, st, None)


@register(
    "average-y", "solve-absvie", "g = k int_s^{s+delta} e^{lam (s - u)} Y(u) du, phi = x0; quadrature oracle",
    k=1.0, lam=1.0, delta=0.25, x0=1.0,
)
def _average_y(p, ens, basis, st):
    return _anticipated(p, ens, basis, st, float(p["lam"]))


@register("z-reading", "solve-absvie", "g = Z(t, s), phi = x0 + b W(T); Y(t) = x0 + b W(t) + b (T - t)", x0=1.0, b=0.7)
def _z_reading(p, ens, basis, st):
    grid = ens.grid
    x0, b = float(p["x0"]), float(p["b"])
    N = grid.N
    W = ens.W[:, :, 0]
    phi = x0 + b * np.repeat(W[:, [N]], grid.nodesN + 1, axis=1)
    spec = GeneratorSpec(lambda t, s, z, **_: z[..., 0], frozenset({"z"}), name="z-reading")
    sol, diag = solve_absvie(spec, FreeTerm(phi), ens, basis, st.tol, st.maxIter)
    t = grid.times[: N + 1]
    exact = x0 + b * W[:, : N + 1] + b * (grid.T - t)
    rel = np.sqrt(np.mean((sol.Y[:, : N + 1] - exact) ** 2, axis=0) / np.mean(exact**2, axis=0))
    zm = sol.Z_mean()[:N, :N, 0][np.triu_indices(N)]
    zerr = float(np.mean(np.abs(zm / b - 1.0))) if b else float(np.mean(np.abs(zm)))
    out = _absvie_outcome(grid, sol, diag, [(float(t[i]), "Y_rel_error", float(rel[i]), 0.0) for i in range(N + 1)], float(rel.max()), 0.05)
    out.rows.append((None, "Z_mean_rel_error", zerr, 0.0))
    out.diagnostics["z_error"] = zerr
    out.verdict = out.verdict and zerr <= 0.05
    return out


def _comparison_rows(grid, rep) -> list[Row]:
    rows = []
    for i in range(grid.N + 1):
        t = float(grid.times[i])
        rows.append((t, "violation_fraction", float(rep.violationFraction[i]), 0.0))
        rows.append((t, "worst_margin", float(rep.worstMargin[i]), float(rep.epsStat[i])))
    return rows


@register(
    "comparison-anticipated", "check-comparison",
    "g_i = k_i Y(s + delta) with k1 < k2, phi = x0; deterministic, ordering exact", k1=0.2, k2=0.4, delta=0.25, x0=1.0,
)
def _comparison_anticipated(p, ens, basis, st):
    grid = ens.grid
    d = grid.steps_for(float(p["delta"]), "delta")
    k1, k2, x0 = float(p["k1"]), float(p["k2"]), float(p["x0"])

    def gen(k):
        return GeneratorSpec(lambda t, s, alpha, **_: k * alpha, frozenset({"alpha"}), delays=DelaySpec(d, 0))

    phi = FreeTerm(np.full(grid.nodesN + 1, x0))
    # the pointwise order g1 <= g2 only holds for alpha >= 0, where these solutions live
    case = ComparisonCase(gen(k1), gen(k2), gen(k1), phi, phi, declaredMonotone=frozenset({"y", "alpha", "mu"}))
    rep = run_comparison(case, ens, basis, st.tol, st.maxIter, epsStat=0.0)
    y1 = _anticipated_oracle(grid, k1, d, x0, None)
    y2 = _anticipated_oracle(grid, k2, d, x0, None)
    N = grid.N
    margin_err = float(np.max(np.abs((rep.sol2.meanY - rep.sol1.meanY)[: N + 1] - (y2 - y1)[: N + 1])))
    diag = {"max_violation_fraction": float(rep.violationFraction.max()), "oracle_margin_error": margin_err}
    return Outcome(_comparison_rows(grid, rep), diag, bool(rep.violationFraction.max() == 0.0 and margin_err <= 1e-10))


@register(
    "comparison-constants", "check-comparison",
    "g_i = ky y + c_i with c1 <= c2, phi = x0 + b W(T); statistical ordering", c1=0.0, c2=1.0, ky=0.2, x0=1.0, b=0.5,
)
def _comparison_constants(p, ens, basis, st):
    grid = ens.grid
    ky, b, x0 = float(p["ky"]), float(p["b"]), float(p["x0"])

    def gen(c):
        return GeneratorSpec(lambda t, s, y, **_: ky * y + c, frozenset({"y"}))

    W = ens.W[:, :, 0]
    phi = FreeTerm(x0 + b * np.repeat(W[:, [grid.N]], grid.nodesN + 1, axis=1))
    case = ComparisonCase(gen(float(p["c1"])), gen(float(p["c2"])), gen(float(p["c1"])), phi, phi)
    rep = run_comparison(case, ens, basis, st.tol, st.maxIter)
    diag = {"max_violation_fraction": float(rep.violationFraction.max())}
    return Outcome(_comparison_rows(grid, rep), diag, rep.passed)


@register(
    "duality-kernels", "check-duality",
    "constant kernels A1, A2, A3, phiX constant, phiY = y0 + vol W(T)", A1=0.3, A2=0.2, A3=0.4, delta=0.25, phiX=1.0, y0=1.0, vol=1.0,
)
def _duality(p, ens, basis, st):
    grid = ens.grid
    N = grid.N
    y0, vol = float(p["y0"]), float(p["vol"])
    phiY = (lambda e: y0 + vol * np.repeat(e.W[:, [N], 0], N + 1, axis=1)) if vol else y0
    case = DualityCase(A1=float(p["A1"]), A2=float(p["A2"]), A3=float(p["A3"]), phiX=float(p["phiX"]), phiY=phiY, delta=float(p["delta"]))
    res = check_duality(case, ens, basis, st.tol, st.maxIter)
    rows = [
        (None, "lhs", res.lhs, 0.0),
        (None, "rhs", res.rhs, 0.0),
        (None, "gap", res.gap, res.pooledStdErr),
        (None, "tol_bias", res.tolBias, 0.0),
    ]
    diag = {"iterations": res.iterations, "pooled_stderr": res.pooledStdErr, "strict_verdict": res.strict_verdict}
    verdict = res.verdict
    if not vol and not float(p["A3"]):
        lo, ro = deterministic_duality(case, grid)
        rows += [(None, "lhs_oracle", lo, 0.0), (None, "rhs_oracle", ro, 0.0)]
        diag["oracle_error"] = max(abs(res.lhs - lo), abs(res.rhs - ro))
        verdict = verdict and diag["oracle_error"] <= 1e-8
    return Outcome(rows, diag, bool(verdict))


@register(
    "lq-game", "solve-game", "two-player LQ delay game with constant kernels and costs",
    a1=0.2, a2=0.3, at1=0.2, b1=1.0, b2=0.5, c1=0.3, c2=0.2, bt1=0.2, bt2=0.1,
    q1=1.0, q2=0.5, qt1=0.5, qt2=0.3, r1=1.0, r2=1.5, rt1=0.5, rt2=0.5,
    delta=0.25, delta1=0.25, delta2=0.25, phi=1.0, theta1=0.1, theta2=-0.1, stationarity_limit=1e-3,
)
def _game(p, ens, basis, st):
    grid = ens.grid
    kw = {k: float(v) for k, v in p.items() if k != "stationarity_limit"}
    res = solve_nash(LQGameSpec(**kw), ens, basis, st.damping, st.tol, st.maxIter)
    sr = stationarity_residual(res.game, res.iterate, res.adjoints)
    rows = []
    M = ens.pathsM
    for n in range(grid.N):
        t = float(grid.times[n])
        for name, u in (("u1_mean", res.iterate.u1), ("u2_mean", res.iterate.u2)):
            rows.append((t, name, float(u[:, n].mean()), float(u[:, n].std() / np.sqrt(M))))
        rows.append((t, "stationarity_1", float(sr[0, n]), 0.0))
        rows.append((t, "stationarity_2", float(sr[1, n]), 0.0))
    diag = {
        "iterations": res.iterate.iteration,
        "distances": res.diagnostics.distances,
        "J1": res.diagnostics.J1,
        "J2": res.diagnostics.J2,
        "max_stationarity": float(sr.max()),
    }
    return Outcome(rows, diag, bool(sr.max() <= float(p["stationarity_limit"])))


@register(
    "linear-regularity", "check-regularity",
    "g = a1 Y(s), phi = x0 + int f dW; Z(t, r) against E[D_r Y(t) | F_r]", a1=0.5, f=1.0, x0=1.0, r_nodes=[0, 4, 8, 16, 24], limit=0.1,
)
def _regularity(p, ens, basis, st):
    grid = ens.grid
    case = LinearRegularityCase(A1=float(p["a1"]), f=float(p["f"]), x0=float(p["x0"]))
    base = solve_base(case, ens, basis, st.tol, st.maxIter)
    rows, errs = [], {}
    for r in p["r_nodes"]:
        r = int(r)
        if not 0 <= r < grid.N:
            raise ValueError(f"r node {r} outside [0, {grid.N})")
        der = solve_derivative(case, r, ens, base.reg, st.tol, st.maxIter)
        rep = check_representation(base, der, r)
        orc = derivative_oracle(case, r, grid)
        for k, i in enumerate(range(r + 1, grid.N + 1)):
            t = float(grid.times[i])
            rows.append((t, f"Z_base_r{r}", float(rep.zBase[k]), 0.0))
            rows.append((t, f"DY_oracle_r{r}", float(orc[i]), 0.0))
        ref = orc[r + 1 : grid.N + 1]
        oracle_err = float(np.max(np.abs(rep.zBase - ref) / np.maximum(np.abs(ref), 1e-12)))
        errs[r] = {"max": rep.maxError, "mean": rep.meanError, "oracle": oracle_err}
    limit = float(p["limit"])
    ok = all(e["max"] <= limit and e["oracle"] <= limit for e in errs.values())
    return Outcome(rows, {"errors": {str(k): v for k, v in errs.items()}}, ok)


@register("linear-sdvie", "simulate-sdvie", "X = x0 + int A1 X ds + int A2 X(s - delta) ds + int A3 X dW", A1=0.5, A2=0.0, A3=0.0, x0=1.0, delta=0.0)
def _linear_sdvie(p, ens, basis, st):
    grid = ens.grid
    d = grid.steps_for(float(p["delta"]), "delta")
    hist = np.full(d + grid.N + 1, float(p["x0"]))
    hist[:d] = 0.0
    state = simulate_sdvie(linear_sdvie_coeffs(grid, float(p["A1"]), float(p["A2"]), float(p["A3"])), HistorySpec(hist), ens, delays=(d, 0, 0))
    X = state.interior
    M = ens.pathsM
    rows = [(float(grid.times[i]), "X_mean", float(X[:, i].mean()), float(X[:, i].std() / np.sqrt(M))) for i in range(grid.N + 1)]
    return Outcome(rows, {"final_mean": float(X[:, -1].mean())}, True)
