"""Least-squares estimates of conditional expectations on a path ensemble.

Every ``E[. | F_{t_j}]`` in the solvers is replaced by a ridge-regularised
linear regression on features observable at node ``j``: Hermite polynomials of
the normalised Brownian position and any adapted state the caller registers
(for example a simulated state ``X(t_j)``).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import eval_hermitenorm

from .grid import PathEnsemble

__all__ = ["Basis", "Projection", "Regressor", "project", "martingale_coeff"]

RIDGE_SCALE = 1e-10


@dataclass(frozen=True, eq=False)
class Basis:
    """Feature specification for the regressions.

    Attributes:
        degree: total polynomial degree in the components of W(t_j).
        state: named adapted processes, each an array (pathsM, nodesN+1) whose
            column j is used as a linear feature at node j.
    """

    degree: int = 3
    state: Mapping[str, np.ndarray] = field(default_factory=dict)
    includesConstant: bool = True

    def __post_init__(self):
        if self.degree < 0:
            raise ValueError("degree must be nonnegative")
        if not self.includesConstant:
            raise ValueError("the constant feature is mandatory")

    def with_state(self, **arrays: np.ndarray) -> "Basis":
        merged = dict(self.state)
        merged.update(arrays)
        return Basis(degree=self.degree, state=merged)

    def multi_indices(self, dims: int) -> list[tuple[int, ...]]:
        out = []
        for total in range(1, self.degree + 1):
            for idx in itertools.product(range(total + 1), repeat=dims):
                if sum(idx) == total:
                    out.append(idx)
        return sorted(out, key=lambda a: (sum(a), tuple(-x for x in a)))

    def n_features(self, dims: int) -> int:
        return 1 + len(self.multi_indices(dims)) + len(self.state)


@dataclass(frozen=True)
class Projection:
    """Fitted regression at one node; ``coefficients`` has shape (P, targets)."""

    node: int
    coefficients: np.ndarray
    ridge: float


class _NodeFit:
    __slots__ = ("p", "chol", "ridge")

    def __init__(self, F: np.ndarray, p: int):
        self.p = p
        if p == 0:
            self.chol = None
            self.ridge = 0.0
            return
        Fc = F[:, 1 : 1 + p]
        A = Fc.T @ Fc
        self.ridge = RIDGE_SCALE * np.trace(A) / p
        A[np.diag_indices(p)] += self.ridge
        self.chol = cho_factor(A, lower=True, check_finite=False)


class Regressor:
    """Per-node design matrices and their factorisations for one ensemble.

    ``features[j]`` is (pathsM, P): column 0 is the constant, then the
    centred and scaled features that are non-degenerate at node j, then zero
    padding. Any per-path quantity fitted at node j is ``features[j] @ c``.
    """

    def __init__(self, ens: PathEnsemble, basis: Basis | None = None):
        basis = basis or Basis()
        self.ens = ens
        self.basis = basis
        grid = ens.grid
        M, L, m = ens.pathsM, grid.nodesN, ens.dimsM
        for name, arr in basis.state.items():
            if np.shape(arr) != (M, L + 1):
                raise ValueError(f"state feature {name!r} must have shape {(M, L + 1)}, got {np.shape(arr)}")
        mi = basis.multi_indices(m)
        self.P = 1 + len(mi) + len(basis.state)
        self.features = np.zeros((L + 1, M, self.P))
        self.features[:, :, 0] = 1.0
        self._fits: list[_NodeFit] = []
        W = ens.W
        state = list(basis.state.values())
        for j in range(L + 1):
            cols = []
            if j > 0 and mi:
                x = W[:, j, :] / np.sqrt(grid.times[j])
                herm = [[eval_hermitenorm(d, x[:, k]) for d in range(basis.degree + 1)] for k in range(m)]
                for idx in mi:
                    col = np.ones(M)
                    for k, d in enumerate(idx):
                        if d:
                            col = col * herm[k][d]
                    cols.append(col)
            for arr in state:
                cols.append(np.asarray(arr[:, j], dtype=float))
            p = 0
            for col in cols:
                mu = col.mean()
                sd = col.std()
                if not sd > 1e-10 * max(1.0, abs(mu)):
                    continue
                p += 1
                self.features[j, :, p] = (col - mu) / sd
            self._fits.append(_NodeFit(self.features[j], p))
        self.features.flags.writeable = False
        self._gram = np.einsum("jmp,jmq->jpq", self.features, self.features) / M
        self._colsum = self.features.sum(axis=1)

    @property
    def M(self) -> int:
        return self.ens.pathsM

    def n_active(self, j: int) -> int:
        return self._fits[j].p

    def gram(self, j: int) -> np.ndarray:
        """Empirical second-moment matrix of the node-j features."""
        return self._gram[j]

    @staticmethod
    def _as2d(values) -> tuple[np.ndarray, bool]:
        v = np.asarray(values, dtype=float)
        if v.ndim == 1:
            return v[:, None], True
        return v, False

    def coef(self, values, j: int) -> np.ndarray:
        """Regression coefficients (P, targets) of ``values`` at node ``j``."""
        V, flat = self._as2d(values)
        if V.shape[0] != self.M:
            raise ValueError(f"expected {self.M} per-path values, got {V.shape[0]}")
        if not np.all(np.isfinite(V)):
            raise ValueError(f"non-finite values passed to the regression at node {j}")
        const = np.all(V == V[:1], axis=0)
        out = self.solve_moments(self.features[j].T @ V, j)
        # constant targets are their own conditional expectation
        out[:, const] = 0.0
        out[0, const] = V[0, const]
        return out[:, 0] if flat else out

    def solve_moments(self, S: np.ndarray, j: int) -> np.ndarray:
        """Coefficients from the raw moments ``S = features[j].T @ V`` (P, targets)."""
        fit = self._fits[j]
        out = np.zeros_like(S, dtype=float)
        mean = S[0] / self.M
        out[0] = mean
        if fit.p:
            rhs = S[1 : 1 + fit.p] - np.outer(self._colsum[j, 1 : 1 + fit.p], mean)
            out[1 : 1 + fit.p] = cho_solve(fit.chol, rhs, check_finite=False)
        return out

    def evaluate(self, coef: np.ndarray, j: int) -> np.ndarray:
        """Per-path values ``features[j] @ coef``."""
        return self.features[j] @ coef

    def fit(self, values, j: int) -> Projection:
        return Projection(node=j, coefficients=self.coef(values, j), ridge=self._fits[j].ridge)

    def project(self, values, j: int) -> np.ndarray:
        """Fitted ``E[values | F_{t_j}]`` per path."""
        return self.evaluate(self.coef(values, j), j)

    def martingale_coef(self, values, j: int, k: int = 0, centered: bool = True) -> np.ndarray:
        """Coefficients of ``(1/h) E[values * dW_j^k | F_{t_j}]``.

        With ``centered`` the fitted ``E[values | F_{t_j}]`` is subtracted first;
        that changes only the sampling noise, since dW_j has zero conditional mean.
        """
        V, flat = self._as2d(values)
        if centered:
            V = V - self.project(V, j)
        dW = self.ens.increments[:, j, k]
        c = self.coef(V * dW[:, None], j) / self.ens.grid.h
        return c[:, 0] if flat else c

    def martingale_coeff(self, values, j: int, k: int = 0, centered: bool = True) -> np.ndarray:
        """Per-path discrete representation integrand at node ``j``."""
        return self.evaluate(self.martingale_coef(values, j, k, centered), j)

    def stderr(self, values, j: int) -> np.ndarray:
        """Standard error of the fitted mean: residual spread over sqrt(paths)."""
        V, flat = self._as2d(values)
        r = V - self.project(V, j)
        se = r.std(axis=0) / np.sqrt(self.M)
        return se[0] if flat else se


def project(values, j: int, basis: Basis, ens: PathEnsemble) -> np.ndarray:
    """Fitted ``E[values | F_{t_j}]`` per path."""
    return Regressor(ens, basis).project(values, j)


def martingale_coeff(values, j: int, k: int, basis: Basis, ens: PathEnsemble) -> np.ndarray:
    """Per-path ``(1/h) E[values dW_j^k | F_{t_j}]``."""
    return Regressor(ens, basis).martingale_coeff(values, j, k)
