"""Network topologies and their spectral objects.

Agents are indexed 0..m-1. A topology always carries the self-loops (i, i),
and every matrix built here is symmetric.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

MAX_RESAMPLES = 1000


@dataclass(frozen=True)
class Topology:
    m: int
    edges: frozenset  # pairs (i, j) with i <= j, self-loops included
    attempts: int = field(default=1, compare=False)

    def __post_init__(self):
        for i, j in self.edges:
            if not (0 <= i <= j < self.m):
                raise ValueError(f"bad edge ({i}, {j}) for m={self.m}")
        for i in range(self.m):
            if (i, i) not in self.edges:
                raise ValueError(f"missing self-loop at {i}")

    @classmethod
    def from_pairs(cls, m: int, pairs, attempts: int = 1) -> "Topology":
        edges = {(i, i) for i in range(m)}
        for i, j in pairs:
            i, j = int(i), int(j)
            edges.add((min(i, j), max(i, j)))
        return cls(m, frozenset(edges), attempts)

    def adjacency(self) -> np.ndarray:
        """0-1 adjacency without self-loops."""
        A = np.zeros((self.m, self.m))
        for i, j in self.edges:
            if i != j:
                A[i, j] = A[j, i] = 1.0
        return A

    def degrees(self) -> np.ndarray:
        return self.adjacency().sum(axis=1).astype(int)

    def neighbors(self, i: int) -> list[int]:
        return [int(j) for j in np.flatnonzero(self.adjacency()[i])]

    def is_connected(self) -> bool:
        A = self.adjacency()
        seen = {0}
        queue = deque([0])
        while queue:
            i = queue.popleft()
            for j in np.flatnonzero(A[i]):
                if j not in seen:
                    seen.add(int(j))
                    queue.append(int(j))
        return len(seen) == self.m

    def to_text(self) -> str:
        lines = [f"m {self.m}"]
        lines += [f"{i} {j}" for i, j in sorted(self.edges) if i != j]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Topology":
        rows = [ln.split() for ln in text.splitlines() if ln.strip()]
        if not rows or len(rows[0]) != 2 or rows[0][0] != "m":
            raise ValueError("edge list must start with 'm <count>'")
        m = int(rows[0][1])
        pairs = []
        for r in rows[1:]:
            if len(r) != 2:
                raise ValueError(f"malformed edge line: {' '.join(r)}")
            i, j = int(r[0]), int(r[1])
            if i == j:
                raise ValueError("self-loops are implied and must not be listed")
            pairs.append((i, j))
        return cls.from_pairs(m, pairs)


@dataclass(frozen=True)
class GossipMatrix:
    W: np.ndarray
    nu: float | None = None


@dataclass(frozen=True)
class LaplacianMatrix:
    L: np.ndarray


def generate_erdos_renyi(m: int, p: float, seed: int) -> Topology:
    """Connected G(m, p); resamples with seed+1, seed+2, ... until connected."""
    if m < 2:
        raise ValueError("need m >= 2")
    if not 0 < p <= 1:
        raise ValueError("p must be in (0, 1]")
    iu = np.triu_indices(m, k=1)
    for attempt in range(MAX_RESAMPLES):
        rng = np.random.default_rng(seed + attempt)
        keep = rng.random(len(iu[0])) < p
        t = Topology.from_pairs(m, zip(iu[0][keep], iu[1][keep]), attempts=attempt + 1)
        if t.is_connected():
            return t
    raise RuntimeError(f"no connected G({m}, {p}) after {MAX_RESAMPLES} draws")


def metropolis_weights(t: Topology) -> GossipMatrix:
    deg = t.degrees()
    A = t.adjacency()
    W = np.zeros((t.m, t.m))
    for i, j in zip(*np.nonzero(A)):
        W[i, j] = 1.0 / (1.0 + max(deg[i], deg[j]))
    W[np.diag_indices(t.m)] = 1.0 - W.sum(axis=1)
    return GossipMatrix(W, None)


def shift_spectrum(Wt: GossipMatrix | np.ndarray, nu: float) -> GossipMatrix:
    """W = (1+nu)/2 I + (1-nu)/2 Wt, which maps eigenvalues in [-1, 1] to [nu, 1]."""
    if not 0 < nu <= 1:
        raise ValueError("nu must be in (0, 1]")
    M = Wt.W if isinstance(Wt, GossipMatrix) else np.asarray(Wt, float)
    m = M.shape[0]
    return GossipMatrix((1 + nu) / 2 * np.eye(m) + (1 - nu) / 2 * M, float(nu))


def laplacian(t: Topology) -> LaplacianMatrix:
    A = t.adjacency()
    return LaplacianMatrix(np.diag(A.sum(axis=1)) - A)


def sym_eigenvalues(M, vectors: bool = False, tol: float = 1e-12, max_sweeps: int = 100):
    """Cyclic Jacobi eigensolver.

    Returns eigenvalues in descending order, and the matching orthonormal
    eigenvectors as columns when ``vectors`` is set. Iterates until the
    off-diagonal Frobenius norm is at most ``tol * ||M||_F``.
    """
    A = np.array(M, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    scale = np.linalg.norm(A)
    if np.max(np.abs(A - A.T), initial=0.0) > 1e-12 * max(scale, 1.0):
        raise ValueError("matrix is not symmetric")
    A = (A + A.T) / 2
    n = A.shape[0]
    V = np.eye(n)
    for _ in range(max_sweeps):
        off = np.linalg.norm(A - np.diag(np.diag(A)))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 1e-30 * (abs(A[p, p]) + abs(A[q, q])):
                    A[p, q] = A[q, p] = 0.0  # negligible; rotating would overflow
                    continue
                theta = (A[q, q] - A[p, p]) / (2 * apq)
                t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + np.hypot(theta, 1.0))
                c = 1.0 / np.hypot(t, 1.0)
                s = t * c
                ap, aq = A[:, p].copy(), A[:, q].copy()
                A[:, p], A[:, q] = c * ap - s * aq, s * ap + c * aq
                ap, aq = A[p, :].copy(), A[q, :].copy()
                A[p, :], A[q, :] = c * ap - s * aq, s * ap + c * aq
                vp, vq = V[:, p].copy(), V[:, q].copy()
                V[:, p], V[:, q] = c * vp - s * vq, s * vp + c * vq
    else:
        raise RuntimeError("Jacobi iteration did not converge")
    lam = np.diag(A).copy()
    order = np.argsort(-lam, kind="stable")
    if vectors:
        return lam[order], V[:, order]
    return lam[order]


def rho(M, i: int) -> float:
    """i-th largest eigenvalue (1-based), as in rho_1, rho_2, ..., rho_m."""
    return float(sym_eigenvalues(M)[i - 1])
