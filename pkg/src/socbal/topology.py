"""Communication graph of the battery fleet and its spectral quantities.

Units are numbered 1..n in every user-facing place (edge lists, scenario
files); arrays are 0-indexed as usual.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import DisconnectedGraph, NoAccessUnit, NotSymmetric, SelfLoop, TopologyError


@dataclass(frozen=True)
class Topology:
    """Undirected 0/1 graph plus the pinning (access) flags.

    Attributes:
        n: number of battery units
        edges: sorted unordered pairs (i, j), 1-based, i < j
        access_flags: b_i, 1 when unit i sees the total desired power
    """

    n: int
    edges: tuple[tuple[int, int], ...]
    access_flags: tuple[int, ...]

    @cached_property
    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n), dtype=np.int64)
        for i, j in self.edges:
            a[i - 1, j - 1] = a[j - 1, i - 1] = 1
        a.setflags(write=False)
        return a

    @cached_property
    def pinning(self) -> np.ndarray:
        b = np.asarray(self.access_flags, dtype=np.int64)
        b.setflags(write=False)
        return b

    def neighbors(self, i: int) -> list[int]:
        """0-based neighbor indices of 0-based node ``i``."""
        return [int(j) for j in np.flatnonzero(self.adjacency[i])]

    def is_connected(self) -> bool:
        return _connected(self.n, self.adjacency)


@dataclass(frozen=True)
class SpectralSummary:
    lambda2_L: float
    lambda_max_L: float
    lambda_min_H: float
    lambda_max_H: float


def build_topology(n: int, edges: Iterable[Sequence[int]], access_flags: Sequence[int]) -> Topology:
    """Validate and normalize a 1-based edge list into a :class:`Topology`."""
    if n < 1:
        raise TopologyError(f"unit count must be positive, got {n}")
    flags = tuple(int(b) for b in access_flags)
    if len(flags) != n:
        raise TopologyError(f"access_flags has length {len(flags)}, expected {n}")
    if any(b not in (0, 1) for b in flags):
        raise TopologyError("access_flags must be 0/1")

    pairs = set()
    for e in edges:
        if len(e) != 2:
            raise TopologyError(f"edge {tuple(e)} is not a pair")
        i, j = int(e[0]), int(e[1])
        if not (1 <= i <= n and 1 <= j <= n):
            raise TopologyError(f"edge ({i}, {j}) references a unit outside 1..{n}")
        if i == j:
            raise SelfLoop(f"self-loop on unit {i}")
        pairs.add((min(i, j), max(i, j)))

    topo = Topology(n=n, edges=tuple(sorted(pairs)), access_flags=flags)
    if not topo.is_connected():
        raise DisconnectedGraph("communication graph is not connected")
    if not any(flags):
        raise NoAccessUnit("no unit has access to the total desired power")
    return topo


def ring_edges(n: int) -> list[tuple[int, int]]:
    if n < 3:
        return [(1, 2)] if n == 2 else []
    return [(i, i % n + 1) for i in range(1, n + 1)]


def complete_edges(n: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(1, n + 1) for j in range(i + 1, n + 1)]


def path_edges(n: int) -> list[tuple[int, int]]:
    return [(i, i + 1) for i in range(1, n)]


def _connected(n: int, adjacency: np.ndarray) -> bool:
    seen = {0}
    queue = deque([0])
    while queue:
        i = queue.popleft()
        for j in np.flatnonzero(adjacency[i]):
            j = int(j)
            if j not in seen:
                seen.add(j)
                queue.append(j)
    return len(seen) == n


def laplacian(t: Topology) -> np.ndarray:
    """Graph Laplacian D - A as an integer matrix (rows sum to exactly 0)."""
    a = t.adjacency
    return np.diag(a.sum(axis=1)) - a


def h_matrix(t: Topology) -> np.ndarray:
    """H = L + diag(b); positive definite for every accepted topology."""
    return laplacian(t) + np.diag(t.pinning)


def symmetric_eigenvalues(m, *, tol: float = 1e-12, max_sweeps: int = 100) -> list[float]:
    """All eigenvalues of a real symmetric matrix, ascending, by cyclic Jacobi.

    Sweeps over every off-diagonal pair in row order and annihilates it with a
    plane rotation until the off-diagonal Frobenius mass is negligible against
    the whole matrix.
    """
    a = np.array(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NotSymmetric(f"expected a square matrix, got shape {a.shape}")
    n = a.shape[0]
    scale = max(1.0, float(np.max(np.abs(a)))) if n else 1.0
    if np.max(np.abs(a - a.T), initial=0.0) > tol * scale:
        raise NotSymmetric("matrix is not symmetric")
    a = 0.5 * (a + a.T)

    total = float(np.sqrt(np.sum(a * a)))
    for _ in range(max_sweeps):
        off = float(np.linalg.norm(a - np.diag(np.diag(a))))
        if off <= np.finfo(float).eps * total:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.hypot(theta, 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0
    else:
        raise ArithmeticError("Jacobi iteration did not converge")
    return sorted(float(v) for v in np.diag(a))


def fiedler_value(t: Topology) -> float:
    """Second-smallest Laplacian eigenvalue (algebraic connectivity)."""
    if t.n < 2:
        raise TopologyError("algebraic connectivity needs at least two units")
    return symmetric_eigenvalues(laplacian(t))[1]


def spectral_summary(t: Topology) -> SpectralSummary:
    lam_l = symmetric_eigenvalues(laplacian(t))
    lam_h = symmetric_eigenvalues(h_matrix(t))
    return SpectralSummary(
        lambda2_L=lam_l[1] if t.n > 1 else 0.0,
        lambda_max_L=lam_l[-1],
        lambda_min_H=lam_h[0],
        lambda_max_H=lam_h[-1],
    )
