"""Delay-aligned time grids and reproducible Brownian path ensembles.

Increments are produced by a counter-based generator: the Gaussian draw for
(path p, step j, dimension k) is a pure function of ``(seed, p, j, k)``, so an
ensemble is identical whatever the number of worker threads used to build it.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import ndtri

__all__ = [
    "GridError",
    "TimeGrid",
    "DelaySpec",
    "PathEnsemble",
    "make_grid",
    "sample_paths",
    "brownian_value",
    "counter_normals",
]


class GridError(ValueError):
    """Raised for inconsistent grid or delay configuration."""


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [0, T+K] whose step divides both T and K."""

    T: float
    K: float
    stepsN_T: int
    h: float
    nodesN: int

    @property
    def N(self) -> int:
        """Index of the node sitting at T."""
        return self.stepsN_T

    @cached_property
    def times(self) -> np.ndarray:
        return np.arange(self.nodesN + 1) * self.h

    def index(self, t) -> np.ndarray:
        """Nearest node index for time(s) ``t``."""
        return np.rint(np.asarray(t) / self.h).astype(np.int64)

    def steps_for(self, span: float, what: str = "delay") -> int:
        """Convert a time span to a whole number of steps or raise."""
        if span < 0:
            raise GridError(f"{what} must be nonnegative, got {span}")
        q = span / self.h
        n = round(q)
        if abs(q - n) > 1e-9 * max(1.0, q):
            raise GridError(f"{what}={span} is not an integer multiple of h={self.h}")
        return int(n)


def make_grid(T: float, K: float, stepsN_T: int) -> TimeGrid:
    """Build the grid on [0, T+K] with ``stepsN_T`` steps covering [0, T]."""
    if not T > 0:
        raise GridError(f"T must be positive, got {T}")
    if K < 0:
        raise GridError(f"K must be nonnegative, got {K}")
    if int(stepsN_T) != stepsN_T or stepsN_T < 1:
        raise GridError(f"stepsN_T must be a positive integer, got {stepsN_T}")
    stepsN_T = int(stepsN_T)
    h = T / stepsN_T
    q = K / h
    extra = round(q)
    if abs(q - extra) > 1e-12 * max(1.0, q):
        raise GridError(
            f"K={K} is not an integer multiple of h={h} (K/h={q:.12g}); "
            "the anticipated region must land on grid nodes"
        )
    return TimeGrid(T=float(T), K=float(K), stepsN_T=stepsN_T, h=h, nodesN=stepsN_T + int(extra))


@dataclass(frozen=True)
class DelaySpec:
    """Grid-index offsets for the advance delta (Y arguments) and zeta (Z arguments).

    ``delta_table``/``zeta_table`` optionally give a per-node offset for nodes
    0..N-1 (piecewise-constant delays); otherwise the constant offsets apply.
    """

    deltaIdx: int = 0
    zetaIdx: int = 0
    delta_table: tuple[int, ...] | None = None
    zeta_table: tuple[int, ...] | None = None

    @classmethod
    def from_times(cls, grid: TimeGrid, delta: float = 0.0, zeta: float = 0.0) -> "DelaySpec":
        return cls(grid.steps_for(delta, "delta"), grid.steps_for(zeta, "zeta"))

    def offsets(self, grid: TimeGrid) -> tuple[np.ndarray, np.ndarray]:
        """Per-node offsets (length N) for delta and zeta, validated against the grid."""
        n = grid.N
        out = []
        for name, const, table in (
            ("delta", self.deltaIdx, self.delta_table),
            ("zeta", self.zetaIdx, self.zeta_table),
        ):
            if table is None:
                arr = np.full(n, int(const), dtype=np.int64)
            else:
                arr = np.asarray(table, dtype=np.int64)
                if arr.shape != (n,):
                    raise GridError(f"{name} table needs {n} entries, got {arr.shape}")
            if np.any(arr < 0):
                raise GridError(f"{name} offsets must be nonnegative")
            # s + delta(s) <= T + K for every s in [0, T)
            if n and np.max(np.arange(n) + arr) > grid.nodesN:
                raise GridError(f"{name} offsets overflow the grid: s+{name}(s) exceeds T+K")
            out.append(arr)
        return out[0], out[1]


_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_KP = np.uint64(0xD1B54A32D192ED03)
_KJ = np.uint64(0xABC98388FB8FAC03)
_KK = np.uint64(0x8CB92BA72F3D8DD7)


def _mix64(x: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer; wraps mod 2**64
    x = (x ^ (x >> np.uint64(30))) * _M1
    x = (x ^ (x >> np.uint64(27))) * _M2
    return x ^ (x >> np.uint64(31))


def counter_normals(seed: int, paths: np.ndarray, steps: np.ndarray, dims: np.ndarray) -> np.ndarray:
    """Standard normals keyed by broadcastable (path, step, dim) counters."""
    with np.errstate(over="ignore"):
        key = _mix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + _GOLDEN)
        x = _mix64(key ^ (np.asarray(paths, dtype=np.uint64) * _KP))
        x = _mix64(x ^ (np.asarray(steps, dtype=np.uint64) * _KJ + _GOLDEN))
        x = _mix64(x ^ (np.asarray(dims, dtype=np.uint64) * _KK + key))
    u = ((x >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(u)


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """Brownian increments ``increments[p, j, k] = W_k(t_{j+1}) - W_k(t_j)``."""

    grid: TimeGrid
    pathsM: int
    dimsM: int
    seed: int
    increments: np.ndarray = field(repr=False)

    @cached_property
    def W(self) -> np.ndarray:
        """Brownian values on every node, shape (pathsM, nodesN+1, dimsM)."""
        W = np.zeros((self.pathsM, self.grid.nodesN + 1, self.dimsM))
        np.cumsum(self.increments, axis=1, out=W[:, 1:, :])
        W.flags.writeable = False
        return W

    def dW(self, k: int = 0) -> np.ndarray:
        """Increments of component ``k``, shape (pathsM, nodesN)."""
        return self.increments[:, :, k]


def sample_paths(grid: TimeGrid, pathsM: int, dimsM: int = 1, seed: int = 0, threads: int = 1) -> PathEnsemble:
    """Draw ``pathsM`` Brownian paths of dimension ``dimsM`` on ``grid``.

    ``threads`` splits the path range across workers; the result does not
    depend on it.
    """
    if pathsM < 1 or dimsM < 1:
        raise GridError("pathsM and dimsM must be at least 1")
    L = grid.nodesN
    out = np.empty((pathsM, L, dimsM))
    steps = np.arange(L, dtype=np.uint64)[None, :, None]
    dims = np.arange(dimsM, dtype=np.uint64)[None, None, :]
    sqrt_h = math.sqrt(grid.h)

    def fill(lo: int, hi: int) -> None:
        p = np.arange(lo, hi, dtype=np.uint64)[:, None, None]
        out[lo:hi] = sqrt_h * counter_normals(seed, p, steps, dims)

    chunk = 4096
    bounds = [(lo, min(lo + chunk, pathsM)) for lo in range(0, pathsM, chunk)]
    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda b: fill(*b), bounds))
    else:
        for b in bounds:
            fill(*b)
    out.flags.writeable = False
    return PathEnsemble(grid=grid, pathsM=int(pathsM), dimsM=int(dimsM), seed=int(seed), increments=out)


def brownian_value(ens: PathEnsemble, p: int, i: int) -> np.ndarray:
    """W(t_i) on path ``p``: the prefix sum of increments before node ``i``."""
    if not 0 <= p < ens.pathsM:
        raise IndexError(f"path index {p} out of range [0, {ens.pathsM})")
    if not 0 <= i <= ens.grid.nodesN:
        raise IndexError(f"node index {i} out of range [0, {ens.grid.nodesN}]")
    return ens.increments[p, :i, :].sum(axis=0)
