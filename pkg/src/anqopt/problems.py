"""Local objectives, data generators, and centralized reference solutions.

The network problem is

    minimize  (1/m) * sum_i f_i(x) + r(x),   r(x) = alpha * ||x||_1,

with every f_i smooth and strongly convex. Agent quantities are stacked as
rows: an (m, d) array X holds one candidate x_i per agent.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np


def prox_l1(w, threshold):
    """Soft-thresholding, the proximal map of threshold * ||.||_1."""
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    w = np.asarray(w, dtype=float)
    return np.sign(w) * np.maximum(np.abs(w) - threshold, 0.0)


def _eig_extremes(H):
    """(largest, smallest) eigenvalue of each symmetric matrix in a stack."""
    ev = np.linalg.eigvalsh(H)
    return ev[..., -1], ev[..., 0]


class Problem:
    """Base class: subclasses supply value, grad and the smoothness data."""

    m: int
    d: int
    alpha: float = 0.0
    L_i: np.ndarray
    mu_i: np.ndarray

    @property
    def L(self) -> float:
        return float(np.max(self.L_i))

    @property
    def mu(self) -> float:
        return float(np.min(self.mu_i))

    @property
    def kappa(self) -> float:
        return self.L / self.mu

    def constants(self) -> dict:
        return {"L_i": self.L_i.copy(), "mu_i": self.mu_i.copy(),
                "L": self.L, "mu": self.mu, "kappa": self.kappa}

    def prox(self, W, gamma: float):
        """prox of gamma * r applied to every row."""
        if self.alpha == 0:
            return np.array(W, dtype=float, copy=True)
        return prox_l1(W, gamma * self.alpha)

    def value(self, X) -> np.ndarray:
        raise NotImplementedError

    def grad(self, X) -> np.ndarray:
        raise NotImplementedError

    def hessian(self, i: int, x) -> np.ndarray:
        raise NotImplementedError

    def local_argmin(self, Y) -> np.ndarray:
        """Row-wise argmin_x f_i(x) + x^T y_i."""
        raise NotImplementedError

    # centralized view ------------------------------------------------------
    def F_grad(self, x) -> np.ndarray:
        X = np.broadcast_to(np.asarray(x, dtype=float), (self.m, self.d))
        return self.grad(X).mean(axis=0)

    def F_value(self, x) -> float:
        X = np.broadcast_to(np.asarray(x, dtype=float), (self.m, self.d))
        return float(self.value(X).mean() + self.alpha * np.abs(x).sum())

    def F_constants(self) -> tuple[float, float]:
        raise NotImplementedError


class LeastSquares(Problem):
    """f_i(x) = 0.5 ||U_i x - v_i||^2 + (reg/2) ||x||^2."""

    def __init__(self, U, v, reg: float = 0.01, alpha: float = 0.0):
        self.U = np.asarray(U, dtype=float)
        self.v = np.asarray(v, dtype=float)
        if self.U.ndim != 3 or self.v.shape != self.U.shape[:2]:
            raise ValueError("U must be (m, n, d) and v (m, n)")
        self.m, self.n, self.d = self.U.shape
        self.reg = float(reg)
        self.alpha = float(alpha)
        self.G = np.einsum("knd,kne->kde", self.U, self.U)
        self.b = np.einsum("knd,kn->kd", self.U, self.v)
        self.H = self.G + self.reg * np.eye(self.d)
        top, bottom = _eig_extremes(self.G)
        self.rho_top, self.rho_bottom = top, np.maximum(bottom, 0.0)
        self.L_i = self.rho_top + self.reg
        self.mu_i = self.rho_bottom + self.reg
        self._Hinv = np.linalg.inv(self.H)

    def value(self, X):
        X = np.asarray(X, dtype=float)
        r = np.einsum("knd,kd->kn", self.U, X) - self.v
        return 0.5 * np.sum(r * r, axis=1) + 0.5 * self.reg * np.sum(X * X, axis=1)

    def grad(self, X):
        X = np.asarray(X, dtype=float)
        return np.einsum("kde,ke->kd", self.H, X) - self.b

    def hessian(self, i, x):
        return self.H[i].copy()

    def local_argmin(self, Y):
        return np.einsum("kde,ke->kd", self._Hinv, self.b - np.asarray(Y, dtype=float))

    def F_constants(self):
        ev = np.linalg.eigvalsh(self.H.mean(axis=0))
        return float(ev[-1]), float(ev[0])

    def with_reg(self, reg: float) -> "LeastSquares":
        return LeastSquares(self.U, self.v, reg, self.alpha)

    def with_alpha(self, alpha: float) -> "LeastSquares":
        p = LeastSquares.__new__(LeastSquares)
        p.__dict__.update(self.__dict__)
        p.alpha = float(alpha)
        return p


def _log1pexp(t):
    return np.logaddexp(0.0, t)


def _sigmoid(t):
    return 0.5 * (1.0 + np.tanh(0.5 * t))


class Logistic(Problem):
    """f_i(x) = (reg/2)||x||^2 + (1/n) sum_p ln(1 + exp(-v_p u_p^T x))."""

    def __init__(self, U, v, reg: float = 0.01, alpha: float = 0.0):
        self.U = np.asarray(U, dtype=float)
        self.v = np.asarray(v, dtype=float)
        if self.U.ndim != 3 or self.v.shape != self.U.shape[:2]:
            raise ValueError("U must be (m, n, d) and v (m, n)")
        self.m, self.n, self.d = self.U.shape
        self.reg = float(reg)
        self.alpha = float(alpha)
        G = np.einsum("knd,kne->kde", self.U, self.U)
        top, _ = _eig_extremes(G)
        self.L_i = self.reg + top / (4 * self.n)
        self.mu_i = np.full(self.m, self.reg)
        self._G = G

    def _margins(self, X):
        return self.v * np.einsum("knd,kd->kn", self.U, np.asarray(X, dtype=float))

    def value(self, X):
        X = np.asarray(X, dtype=float)
        t = self._margins(X)
        return 0.5 * self.reg * np.sum(X * X, axis=1) + _log1pexp(-t).mean(axis=1)

    def grad(self, X):
        X = np.asarray(X, dtype=float)
        s = -self.v * _sigmoid(-self._margins(X))
        return self.reg * X + np.einsum("knd,kn->kd", self.U, s) / self.n

    def hessian(self, i, x):
        t = self.v[i] * (self.U[i] @ x)
        w = _sigmoid(t) * _sigmoid(-t)
        return self.reg * np.eye(self.d) + (self.U[i].T * w) @ self.U[i] / self.n

    def local_argmin(self, Y, tol: float = 1e-12, max_iter: int = 100):
        """Damped Newton on every agent's subproblem."""
        Y = np.asarray(Y, dtype=float)
        X = np.zeros_like(Y)
        for i in range(self.m):
            x = X[i]
            for _ in range(max_iter):
                g = self.grad_one(i, x) + Y[i]
                if np.linalg.norm(g) <= tol * max(1.0, np.linalg.norm(Y[i])):
                    break
                step = np.linalg.solve(self.hessian(i, x), g)
                if np.linalg.norm(step) <= 1e-15 * max(1.0, np.linalg.norm(x)):
                    break  # converged to working precision
                f0 = self.value_one(i, x) + x @ Y[i]
                t = 1.0
                while t > 1e-10:
                    xn = x - t * step
                    if self.value_one(i, xn) + xn @ Y[i] <= f0 - 0.25 * t * (g @ step):
                        break
                    t *= 0.5
                else:
                    xn = x - step  # decrease below rounding: take the pure Newton step
                x = xn
            else:
                raise RuntimeError(f"inner Newton solve failed for agent {i}")
            X[i] = x
        return X

    def grad_one(self, i, x):
        t = self.v[i] * (self.U[i] @ x)
        return self.reg * x + self.U[i].T @ (-self.v[i] * _sigmoid(-t)) / self.n

    def value_one(self, i, x):
        t = self.v[i] * (self.U[i] @ x)
        return 0.5 * self.reg * x @ x + _log1pexp(-t).mean()

    def F_constants(self):
        top = np.linalg.eigvalsh(self._G.mean(axis=0))[-1]
        return float(self.reg + top / (4 * self.n)), self.reg


# data generators -----------------------------------------------------------

@dataclass
class LinRegData:
    U: np.ndarray  # (m, n, d)
    v: np.ndarray  # (m, n)
    x0_true: np.ndarray
    beta: float
    noise_var: float


@dataclass
class LogRegData:
    U: np.ndarray  # (m, n, d), unit-norm rows
    v: np.ndarray  # (m, n), labels in {-1, +1}


def ar1_features(rng, n: int, d: int, beta: float) -> np.ndarray:
    """Columns follow u_1 ~ N(0, I/(1-beta^2)), u_q | u_{q-1} ~ N(beta u_{q-1}, I)."""
    U = np.empty((n, d))
    U[:, 0] = rng.standard_normal(n) / np.sqrt(1 - beta**2)
    for q in range(1, d):
        U[:, q] = beta * U[:, q - 1] + rng.standard_normal(n)
    return U


def ridge_for_kappa(rho_top, rho_bottom, kappa: float) -> float:
    """Ridge c with (max rho_top + c) / (min rho_bottom + c) = kappa."""
    if kappa <= 1:
        raise ValueError("target kappa must exceed 1")
    c = (np.max(rho_top) - kappa * np.min(rho_bottom)) / (kappa - 1)
    if c <= 0:
        raise ValueError("target kappa is below the data's own conditioning")
    return float(c)


def gen_linreg(m: int = 20, n_per_agent: int = 20, d: int = 40, beta: float = 0.3,
               sparsity: float = 0.7, noise_var: float = 0.04, seed: int = 0,
               reg: float = 0.01, alpha: float = 0.0, kappa_target: float | None = None):
    """Correlated-feature linear regression; returns (LinRegData, LeastSquares)."""
    if not 0 <= beta < 1:
        raise ValueError("beta must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    x0 = rng.standard_normal(d)
    zeros = rng.permutation(d)[: int(round(sparsity * d))]
    x0[zeros] = 0.0
    U = np.stack([ar1_features(rng, n_per_agent, d, beta) for _ in range(m)])
    v = np.einsum("knd,d->kn", U, x0) + np.sqrt(noise_var) * rng.standard_normal((m, n_per_agent))
    data = LinRegData(U, v, x0, beta, noise_var)
    prob = LeastSquares(U, v, reg, alpha)
    if kappa_target is not None:
        prob = prob.with_reg(ridge_for_kappa(prob.rho_top, prob.rho_bottom, kappa_target))
    return data, prob


def normalize_rows(U):
    U = np.asarray(U, dtype=float)
    norms = np.linalg.norm(U, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("cannot normalize a zero feature vector")
    return U / norms


def gen_logreg_synthetic(m: int = 10, n_per_agent: int = 50, d: int = 20, seed: int = 0,
                         flip: float = 0.1, reg: float = 0.01, alpha: float = 0.0):
    """Unit-norm features, labels from a planted separator with flipped signs."""
    rng = np.random.default_rng(seed)
    x_true = rng.standard_normal(d)
    U = normalize_rows(rng.standard_normal((m, n_per_agent, d)))
    v = np.where(U @ x_true >= 0, 1.0, -1.0)
    v = np.where(rng.random(v.shape) < flip, -v, v)
    data = LogRegData(U, v)
    return data, Logistic(U, v, reg, alpha)


# file formats --------------------------------------------------------------

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801


def _read_idx(path, magic: int, ndim: int) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 + 4 * ndim:
        raise ValueError(f"{path}: truncated header")
    got = struct.unpack(">i", raw[:4])[0]
    if got != magic:
        raise ValueError(f"{path}: bad magic number {got:#010x}, expected {magic:#010x}")
    dims = struct.unpack(">" + "i" * ndim, raw[4:4 + 4 * ndim])
    body = raw[4 + 4 * ndim:]
    size = int(np.prod(dims))
    if len(body) < size:
        raise ValueError(f"{path}: truncated data ({len(body)} of {size} bytes)")
    return np.frombuffer(body[:size], dtype=np.uint8).reshape(dims)


def load_mnist_idx(images_path, labels_path, target_digit: int, m: int) -> LogRegData:
    """One-vs-all MNIST split evenly over m agents; tail surplus dropped."""
    images = _read_idx(images_path, IDX_IMAGES, 3)
    labels = _read_idx(labels_path, IDX_LABELS, 1)
    if images.shape[0] != labels.shape[0]:
        raise ValueError("image and label counts differ")
    n = images.shape[0] // m
    if n == 0:
        raise ValueError("fewer samples than agents")
    X = images[: n * m].reshape(n * m, -1).astype(float)
    U = normalize_rows(X).reshape(m, n, -1)
    v = np.where(labels[: n * m] == target_digit, 1.0, -1.0).reshape(m, n)
    return LogRegData(U, v)


def write_idx(path, array, magic: int):
    arr = np.asarray(array, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">i", magic))
        fh.write(struct.pack(">" + "i" * arr.ndim, *arr.shape))
        fh.write(arr.tobytes())


QNDS_MAGIC = b"QNDS"
QNDS_VERSION = 1


def save_dataset(path, U, v):
    """Little-endian container: magic, version, m, d, n_i..., then per agent U_i, v_i."""
    U = [np.asarray(u, dtype="<f8") for u in U]
    v = [np.asarray(x, dtype="<f8") for x in v]
    m, d = len(U), U[0].shape[1]
    with open(path, "wb") as fh:
        fh.write(QNDS_MAGIC)
        fh.write(struct.pack("<III", QNDS_VERSION, m, d))
        fh.write(struct.pack("<" + "I" * m, *[u.shape[0] for u in U]))
        for u, x in zip(U, v):
            if u.shape != (x.shape[0], d):
                raise ValueError("inconsistent agent block")
            fh.write(np.ascontiguousarray(u).tobytes())
            fh.write(x.tobytes())


def load_dataset(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != QNDS_MAGIC:
        raise ValueError("not a QNDS container")
    version, m, d = struct.unpack("<III", raw[4:16])
    if version != QNDS_VERSION:
        raise ValueError(f"unsupported container version {version}")
    ns = struct.unpack("<" + "I" * m, raw[16:16 + 4 * m])
    pos = 16 + 4 * m
    U, v = [], []
    for n in ns:
        k = n * d * 8
        if len(raw) < pos + k + n * 8:
            raise ValueError("truncated container")
        U.append(np.frombuffer(raw[pos:pos + k], dtype="<f8").reshape(n, d).copy())
        pos += k
        v.append(np.frombuffer(raw[pos:pos + n * 8], dtype="<f8").copy())
        pos += n * 8
    return U, v


# reference solution ----------------------------------------------------------

def reference_solution(problem: Problem, tol: float = 1e-12, max_iter: int = 1_000_000):
    """Minimizer of F + r by accelerated proximal gradient.

    Stops when the step-scaled prox-gradient residual
    ||x - prox(x - grad F(x)/L)|| falls below tol * max(1, ||x||). For least
    squares the result is polished on the detected support by a linear solve.
    """
    L, mu = problem.F_constants()
    q = np.sqrt(mu / L)
    beta = (1 - q) / (1 + q)
    alpha = problem.alpha
    x = np.zeros(problem.d)
    x_prev = x.copy()

    def step(y):
        return prox_l1(y - problem.F_grad(y) / L, alpha / L)

    for it in range(max_iter):
        y = x + beta * (x - x_prev)
        x_prev, x = x, step(y)
        if it % 10 == 0:
            res = np.linalg.norm(x - step(x))
            if res <= tol * max(1.0, np.linalg.norm(x)):
                break
    else:
        raise RuntimeError("reference solver exceeded its iteration budget")
    if isinstance(problem, LeastSquares):
        x = _polish_lasso(problem, x)
    return x


def _polish_lasso(problem: LeastSquares, x):
    H = problem.H.mean(axis=0)
    b = problem.b.mean(axis=0)
    if problem.alpha == 0:
        return np.linalg.solve(H, b)
    S = np.flatnonzero(x)
    xs = np.zeros_like(x)
    if S.size:
        xs[S] = np.linalg.solve(H[np.ix_(S, S)], b[S] - problem.alpha * np.sign(x[S]))
    g = H @ xs - b
    off = np.setdiff1d(np.arange(x.size), S)
    ok = np.all(np.sign(xs[S]) == np.sign(x[S])) and np.all(np.abs(g[off]) <= problem.alpha + 1e-12)
    return xs if ok else x
