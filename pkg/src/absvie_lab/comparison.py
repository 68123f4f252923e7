"""Ordering of solutions for two one-dimensional ABSVIEs with ordered data.

Generators may read only (y, z, alpha, mu). The intermediate generator
``gBar`` is used solely to check the declared hypotheses; the conclusion
``Y1 <= Y2`` is tested on the solutions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .absvie import FreeTerm, GeneratorSpec, MSolution, solve_absvie
from .grid import PathEnsemble
from .regress import Basis, Regressor

__all__ = ["ALLOWED_ARGS", "ComparisonCase", "MonotonicityReport", "OrderingReport", "spot_check_monotonicity", "run_comparison"]

ALLOWED_ARGS = frozenset({"y", "z", "alpha", "mu"})
VIOLATION_LIMIT = 1e-3


@dataclass(frozen=True)
class ComparisonCase:
    g1: GeneratorSpec
    g2: GeneratorSpec
    gBar: GeneratorSpec
    phi1: FreeTerm
    phi2: FreeTerm
    declaredMonotone: frozenset[str] = frozenset({"y", "alpha", "mu", "order"})

    def __post_init__(self):
        for name, g in (("g1", self.g1), ("g2", self.g2), ("gBar", self.gBar)):
            extra = g.uses - ALLOWED_ARGS
            if extra:
                raise ValueError(f"{name} reads {sorted(extra)}; comparison generators may only read y, z, alpha, mu")


@dataclass
class MonotonicityReport:
    checked: int
    violations: list[tuple[str, float, float]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def _call(g: GeneratorSpec, t: float, s: np.ndarray, args: dict) -> np.ndarray:
    full = {k: np.zeros(1) for k in ("xi", "beta", "gamma", "nu", "psi")}
    full.update(args)
    return np.broadcast_to(g.g(t, s, **full), (1, s.size))[0]


def spot_check_monotonicity(case: ComparisonCase, samples: int = 10_000, seed: int = 0, T: float = 1.0) -> MonotonicityReport:
    """Random argument tuples with ordered perturbations of y, alpha and mu.

    Records (check, t, first offending s) for every batch with a violation.
    """
    rng = np.random.default_rng(seed)
    report = MonotonicityReport(checked=0)
    batches = 16
    per = max(1, samples // batches)
    for b in range(batches):
        t = float(rng.uniform(0.0, T))
        s = np.sort(rng.uniform(t, T, size=per))
        args = {
            "y": rng.normal(size=(1, per)),
            "z": rng.normal(size=(1, per, 1)),
            "alpha": rng.normal(size=(1, per)),
            "mu": rng.normal(size=(1, per)),
        }
        base = _call(case.gBar, t, s, args)
        for name in ("y", "alpha", "mu"):
            if name not in case.declaredMonotone:
                continue
            bumped = dict(args)
            bumped[name] = args[name] + rng.exponential(size=(1, per))
            bad = _call(case.gBar, t, s, bumped) < base
            if bad.any():
                report.violations.append((f"gBar nondecreasing in {name}", t, float(s[np.argmax(bad)])))
        if "order" in case.declaredMonotone:
            lo = _call(case.g1, t, s, args)
            hi = _call(case.g2, t, s, args)
            for label, bad in (("g1 <= gBar", lo > base), ("gBar <= g2", base > hi)):
                if bad.any():
                    report.violations.append((label, t, float(s[np.argmax(bad)])))
        report.checked += per
    return report


@dataclass
class OrderingReport:
    violationFraction: np.ndarray
    worstMargin: np.ndarray
    epsStat: np.ndarray
    sol1: MSolution = field(repr=False)
    sol2: MSolution = field(repr=False)

    @property
    def passed(self) -> bool:
        return bool(self.violationFraction.max() <= VIOLATION_LIMIT)


def run_comparison(
    case: ComparisonCase,
    ens: PathEnsemble,
    basis: Basis | Regressor | None = None,
    tol: float = 1e-10,
    maxIter: int = 100,
    epsStat: float | None = None,
    checkSamples: int = 1024,
) -> OrderingReport:
    """Solve both equations on the shared ensemble and measure ``Y1 > Y2`` per node.

    The allowance defaults to three pooled regression standard errors per node.
    """
    check = spot_check_monotonicity(case, samples=checkSamples, T=ens.grid.T)
    if not check.ok:
        raise ValueError(f"declared hypotheses fail the spot check: {check.violations[0]}")
    phi1 = case.phi1.phi_paths(ens.pathsM, ens.grid.nodesN)
    phi2 = case.phi2.phi_paths(ens.pathsM, ens.grid.nodesN)
    if np.any(phi1 > phi2):
        raise ValueError("free terms are not ordered: phi1 > phi2 somewhere")
    reg = basis if isinstance(basis, Regressor) else Regressor(ens, basis)
    sol1, _ = solve_absvie(case.g1, case.phi1, ens, reg, tol, maxIter)
    sol2, _ = solve_absvie(case.g2, case.phi2, ens, reg, tol, maxIter)
    N = ens.grid.N
    margin = sol2.Y[:, : N + 1] - sol1.Y[:, : N + 1]
    if epsStat is None:
        eps = 3.0 * np.sqrt(sol1.stderrY[: N + 1] ** 2 + sol2.stderrY[: N + 1] ** 2)
    else:
        eps = np.full(N + 1, float(epsStat))
    frac = np.mean(margin < -eps, axis=0)
    return OrderingReport(frac, margin.min(axis=0), eps, sol1, sol2)
