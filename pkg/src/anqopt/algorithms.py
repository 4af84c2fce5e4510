"""Concrete distributed algorithms cast as black-box specs.

Each builder returns an AlgorithmSpec whose maps act on stacked (m, .)
arrays, so a gossip step sum_j w_ij c_j is the matrix product W @ C.
States that hold two blocks are stored side by side, e.g. z_i = [y_i, w_i]
occupies columns [0:d] and [d:2d].
"""
from __future__ import annotations

import math

import numpy as np

from .blackbox import AlgorithmSpec, Lipschitz
from .graph import GossipMatrix, LaplacianMatrix, sym_eigenvalues
from .problems import Problem

GD_STAR = "GdStar"
PROX_EXTRA = "ProxExtra"
PROX_NIDS = "ProxNids"
NIDS = "Nids"
PROX_NEXT = "ProxNext"
PROX_DIGING = "ProxDiging"
NEXT = "Next"
PRIMAL_DUAL = "PrimalDual"
ALL_KINDS = (GD_STAR, PROX_EXTRA, PROX_NIDS, NIDS, PROX_NEXT, PROX_DIGING, NEXT, PRIMAL_DUAL)
SMOOTH_ONLY = (GD_STAR, NIDS, NEXT, PRIMAL_DUAL)


def table2_rate(kind: str, kappa: float, rho2: float | None = None,
                rho1_L: float | None = None, rho_m1_L: float | None = None) -> float | None:
    """Closed-form contraction factor under the default tuning of each kind.

    rho2 is the second largest eigenvalue of the gossip matrix actually used
    (for NIDS pass (1 + rho2(W~))/2). NEXT has no closed form and returns None.
    """
    k = kappa
    if kind == GD_STAR:
        return (k - 1) / (k + 1)
    if kind == PROX_EXTRA:
        return max(k / (k + 1), math.sqrt(rho2))
    if kind == PROX_NIDS:
        return max((k - 1) / (k + 1), math.sqrt(rho2))
    if kind == NIDS:
        return max(math.sqrt(1 - 1 / k), math.sqrt(rho2))
    if kind == PROX_NEXT:
        return max((k - 1) / (k + 1), math.sqrt(1 - (1 - rho2) ** 2))
    if kind == PROX_DIGING:
        return max(k / (k + 1), math.sqrt(1 - (1 - rho2) ** 2))
    if kind == PRIMAL_DUAL:
        r = rho1_L / rho_m1_L
        return (r - 1 / k) / (r + 1 / k)
    if kind == NEXT:
        return None
    raise ValueError(f"unknown algorithm kind {kind!r}")


def default_nu(kind: str, kappa: float) -> float | None:
    """Spectrum shift used to build W from W~ for each kind."""
    if kind == PROX_EXTRA:
        return kappa / (kappa + 1)
    if kind == PROX_DIGING:
        return math.sqrt(kappa / (kappa + 1))
    if kind in (PROX_NIDS, PROX_NEXT, NEXT):
        return 0.001
    return None


def _gossip(W):
    if isinstance(W, GossipMatrix):
        M, nu = np.asarray(W.W, float), W.nu
    else:
        M, nu = np.asarray(W, float), None
    ev = sym_eigenvalues(M)
    if nu is None:
        nu = float(ev[-1])
    if ev[-1] < nu - 1e-10 or ev[0] > 1 + 1e-10:
        raise ValueError("gossip matrix eigenvalues fall outside [nu, 1]")
    if nu <= 0:
        raise ValueError("gossip matrix must be positive definite")
    rho2 = float(ev[1]) if len(ev) > 1 else 0.0
    return M, float(nu), float(ev[-1]), rho2


def _quad(P, Y):
    """sum over columns of Y^T P Y, i.e. y^T (P kron I) y."""
    return float(np.sum(Y * (P @ Y)))


def _require_smooth(problem, kind):
    if problem.alpha != 0:
        raise ValueError(f"{kind} requires r == 0")


def _close(a, b):
    return abs(a - b) <= 1e-9 * max(1.0, abs(b))


def _span_projector(M):
    """Orthogonal projector onto range(M) for symmetric M."""
    return M @ np.linalg.pinv(M)


def build_gd_star(problem: Problem, gamma: float | None = None, x0=None) -> AlgorithmSpec:
    """Gradient descent over a star, emulated with m replicated states."""
    _require_smooth(problem, GD_STAR)
    m, d = problem.m, problem.d
    L, mu = problem.L, problem.mu
    default = gamma is None
    gamma = 2 / (mu + L) if default else float(gamma)
    if gamma <= 0:
        raise ValueError("gamma must be positive")

    def comm(s, Z, C):
        return problem.grad(Z)

    def update(Z, cs):
        return Z - gamma * cs[0].mean(axis=0)

    lam = (problem.kappa - 1) / (problem.kappa + 1) if default else max(abs(1 - gamma * mu), abs(1 - gamma * L))
    z0 = np.tile(np.zeros(d) if x0 is None else np.asarray(x0, float), (m, 1))
    return AlgorithmSpec(
        GD_STAR, 1, m, d, d, comm, update, Lipschitz(gamma, 0.0, L), z0,
        primal=lambda Z: Z,
        rate_lambda=lam if lam < 1 else None,
        feasible_set="replicated states z = 1_m kron x",
        project=lambda Z: np.tile(Z.mean(axis=0), (m, 1)),
        meta={"gamma": gamma},
    )


def _yw_primal(problem, gamma, d):
    return lambda Z: problem.prox(Z[:, d:], gamma)


def _yw_project(IW, d):
    P = _span_projector(IW)
    return lambda Z: np.hstack([P @ Z[:, :d], Z[:, d:]])


def build_prox_extra(problem: Problem, W, gamma: float | None = None, w0=None) -> AlgorithmSpec:
    Wm, nu, rho_m, rho2 = _gossip(W)
    m, d = problem.m, problem.d
    L, mu = problem.L, problem.mu
    default = gamma is None
    gamma = 2 * rho_m / (L + mu * rho_m) if default else float(gamma)
    IW = np.eye(m) - Wm

    def comm(s, Z, C):
        if s == 1:
            return problem.prox(Z[:, d:], gamma)
        return Wm @ C - gamma * problem.grad(C) - Z[:, :d]

    def update(Z, cs):
        c2 = cs[1]
        return np.hstack([Z[:, :d] + IW @ c2, c2])

    IW_pinv, W_inv = np.linalg.pinv(IW), np.linalg.inv(Wm)

    def norm(Z):
        return math.sqrt(_quad(IW_pinv, Z[:, :d]) + _quad(W_inv, Z[:, d:]))

    lam = None
    if default and _close(nu, problem.kappa / (problem.kappa + 1)):
        lam = table2_rate(PROX_EXTRA, problem.kappa, rho2)
    L_A = math.sqrt(3) if nu >= 0.5 else math.sqrt(1 + 1 / nu)
    z0 = np.hstack([np.zeros((m, d)), np.zeros((m, d)) if w0 is None else np.asarray(w0, float)])
    return AlgorithmSpec(
        PROX_EXTRA, 2, m, 2 * d, d, comm, update, Lipschitz(L_A, 1 + gamma * L, 1.0), z0,
        primal=_yw_primal(problem, gamma, d), rate_lambda=lam,
        feasible_set="y in span(I - W), w free", norm=norm, project=_yw_project(IW, d),
        meta={"gamma": gamma, "nu": nu, "rho2": rho2, "rho_m": rho_m},
    )


def build_prox_nids(problem: Problem, W, gamma: float | None = None, w0=None) -> AlgorithmSpec:
    Wm, nu, rho_m, rho2 = _gossip(W)
    m, d = problem.m, problem.d
    L, mu = problem.L, problem.mu
    default = gamma is None
    gamma = 2 / (mu + L) if default else float(gamma)
    IW = np.eye(m) - Wm

    def comm(s, Z, C):
        if s == 1:
            x = problem.prox(Z[:, d:], gamma)
            return x - gamma * problem.grad(x)
        return Wm @ C - Z[:, :d]

    def update(Z, cs):
        c2 = cs[1]
        return np.hstack([Z[:, :d] + IW @ c2, c2])

    W_inv = np.linalg.inv(Wm)
    Py = W_inv @ np.linalg.pinv(IW) @ W_inv

    def norm(Z):
        return math.sqrt(_quad(Py, Z[:, :d]) + _quad(W_inv, Z[:, d:]))

    lam = table2_rate(PROX_NIDS, problem.kappa, rho2) if default else None
    z0 = np.hstack([np.zeros((m, d)), np.zeros((m, d)) if w0 is None else np.asarray(w0, float)])
    return AlgorithmSpec(
        PROX_NIDS, 2, m, 2 * d, d, comm, update, Lipschitz(1 / nu, 1.0, 1 + gamma * L), z0,
        primal=_yw_primal(problem, gamma, d), rate_lambda=lam,
        feasible_set="y in span(I - W), w free", norm=norm, project=_yw_project(IW, d),
        meta={"gamma": gamma, "nu": nu, "rho2": rho2, "rho_m": rho_m},
    )


def build_nids(problem: Problem, Wt, gamma: float | None = None, c: float | None = None,
               x0=None) -> AlgorithmSpec:
    """NIDS on the raw doubly stochastic W~; state z_i = [x_i, gamma*y_i]."""
    _require_smooth(problem, NIDS)
    Wm = np.asarray(Wt.W if isinstance(Wt, GossipMatrix) else Wt, float)
    m, d = problem.m, problem.d
    L = problem.L
    default = gamma is None and c is None
    gamma = 1 / L if gamma is None else float(gamma)
    c = 1 / (2 * gamma) if c is None else float(c)
    if c <= 0 or gamma <= 0:
        raise ValueError("NIDS needs gamma > 0 and c > 0")
    IW = np.eye(m) - Wm
    ev = sym_eigenvalues(IW)
    if c * gamma * ev[0] > 1 + 1e-12:
        raise ValueError("spectral condition c*gamma*(I - W~) <= I is violated")
    rho2_t = float(sym_eigenvalues(Wm)[1]) if m > 1 else 0.0
    K = gamma * c * IW

    def comm(s, Z, C):
        x = Z[:, :d]
        return x - gamma * problem.grad(x) - Z[:, d:]

    def update(Z, cs):
        x, u = Z[:, :d], Z[:, d:]
        mix = K @ cs[0]
        return np.hstack([x - gamma * problem.grad(x) - u - mix, u + mix])

    IW_pinv = np.linalg.pinv(IW)

    def norm(Z):
        return math.sqrt(float(np.sum(Z[:, :d] ** 2)) + _quad(IW_pinv, Z[:, d:]) / (gamma * c))

    lam = table2_rate(NIDS, problem.kappa, (1 + rho2_t) / 2) if default else None
    z0 = np.hstack([np.zeros((m, d)) if x0 is None else np.asarray(x0, float), np.zeros((m, d))])
    P = _span_projector(IW) if m > 1 else np.zeros((1, 1))
    return AlgorithmSpec(
        NIDS, 1, m, 2 * d, d, comm, update, Lipschitz(math.sqrt(2), 1.0, math.sqrt(2) + gamma * L), z0,
        primal=lambda Z: Z[:, :d], rate_lambda=lam,
        feasible_set="x free, gamma*y in span(I - W~)", norm=norm,
        project=lambda Z: np.hstack([Z[:, :d], P @ Z[:, d:]]),
        meta={"gamma": gamma, "c": c, "rho2_tilde": rho2_t},
    )


def build_prox_next(problem: Problem, W, gamma: float | None = None, w0=None) -> AlgorithmSpec:
    Wm, nu, rho_m, rho2 = _gossip(W)
    m, d = problem.m, problem.d
    L, mu = problem.L, problem.mu
    default = gamma is None
    gamma = 2 / (mu + L) if default else float(gamma)
    IW = np.eye(m) - Wm

    def comm(s, Z, C):
        if s == 1:
            x = problem.prox(Z[:, d:], gamma)
            return x - gamma * problem.grad(x)
        if s == 2:
            return Wm @ C
        if s == 3:
            return Wm @ C - Z[:, :d]
        return IW @ C

    def update(Z, cs):
        return np.hstack([Z[:, :d] + IW @ cs[3], cs[2]])

    W2_inv = np.linalg.inv(Wm @ Wm)
    IW2 = IW @ IW
    Py = W2_inv @ np.linalg.pinv(IW2) @ W2_inv
    Pw = W2_inv @ (np.eye(m) - IW2) @ W2_inv

    def norm(Z):
        return math.sqrt(_quad(Py, Z[:, :d]) + _quad(Pw, Z[:, d:]))

    lam = table2_rate(PROX_NEXT, problem.kappa, rho2) if default else None
    z0 = np.hstack([np.zeros((m, d)), np.zeros((m, d)) if w0 is None else np.asarray(w0, float)])
    return AlgorithmSpec(
        PROX_NEXT, 4, m, 2 * d, d, comm, update, Lipschitz(nu**-2, 1.0, 1 + gamma * L), z0,
        primal=_yw_primal(problem, gamma, d), rate_lambda=lam,
        feasible_set="y in span(I - W), w free", norm=norm, project=_yw_project(IW, d),
        meta={"gamma": gamma, "nu": nu, "rho2": rho2, "rho_m": rho_m},
    )


def build_prox_diging(problem: Problem, W, gamma: float | None = None, w0=None) -> AlgorithmSpec:
    Wm, nu, rho_m, rho2 = _gossip(W)
    m, d = problem.m, problem.d
    L, mu = problem.L, problem.mu
    default = gamma is None
    gamma = 2 * rho_m**2 / (L + mu * rho_m**2) if default else float(gamma)
    IW = np.eye(m) - Wm

    def comm(s, Z, C):
        if s == 1:
            return problem.prox(Z[:, d:], gamma)
        if s == 2:
            return Wm @ C
        if s == 3:
            x = problem.prox(Z[:, d:], gamma)
            return Wm @ C - gamma * problem.grad(x) - Z[:, :d]
        return IW @ C

    def update(Z, cs):
        return np.hstack([Z[:, :d] + IW @ cs[3], cs[2]])

    IW2 = IW @ IW
    Py, Pw = np.linalg.pinv(IW2), np.eye(m) - IW2
    scale = 1 / (2 * nu - nu**2)

    def norm(Z):
        return math.sqrt(scale * (_quad(Py, Z[:, :d]) + _quad(Pw, Z[:, d:])))

    lam = None
    if default and _close(nu, math.sqrt(problem.kappa / (problem.kappa + 1))):
        lam = table2_rate(PROX_DIGING, problem.kappa, rho2)
    z0 = np.hstack([np.zeros((m, d)), np.zeros((m, d)) if w0 is None else np.asarray(w0, float)])
    return AlgorithmSpec(
        PROX_DIGING, 4, m, 2 * d, d, comm, update,
        Lipschitz(nu**-0.5, 1.0, math.sqrt(1 + (gamma * L) ** 2)), z0,
        primal=_yw_primal(problem, gamma, d), rate_lambda=lam,
        feasible_set="y in span(I - W), w free", norm=norm, project=_yw_project(IW, d),
        meta={"gamma": gamma, "nu": nu, "rho2": rho2, "rho_m": rho_m},
    )


def build_next(problem: Problem, W, gamma: float | None = None, x0=None) -> AlgorithmSpec:
    """Gradient tracking with state z_i = [x_i, y_i] and y^0 = grad f(x^0).

    The signals are c1 = x - gamma y and c2 = y + grad f(W c1_hat) - grad f(x).
    The y-update is written as c2 - (I - W) c2_hat, which equals W c2 when
    c2_hat = c2 but keeps mean(y) = mean(grad f(x)) exactly under quantization;
    with y+ = W c2_hat the quantization errors would pile up in mean(y) and
    the iterates would settle at a consensus point other than x*.

    Lipschitz constants are analytic bounds in the l2 norm: A moves with
    (c1, c2) by at most sqrt(2 + L^2); C^2 depends on c through grad f(W c),
    so L_C = L; C^1 and C^2 move with z by at most sqrt(1 + gamma^2) and
    sqrt(1 + L^2) respectively.
    """
    _require_smooth(problem, NEXT)
    Wm, nu, rho_m, rho2 = _gossip(W)
    m, d = problem.m, problem.d
    L = problem.L
    gamma = 1 / (2 * L) if gamma is None else float(gamma)

    def comm(s, Z, C):
        x, y = Z[:, :d], Z[:, d:]
        if s == 1:
            return x - gamma * y
        return y + problem.grad(Wm @ C) - problem.grad(x)

    IW = np.eye(m) - Wm

    def update(Z, cs):
        x_next = Wm @ cs[0]
        c2 = Z[:, d:] + problem.grad(x_next) - problem.grad(Z[:, :d])
        return np.hstack([x_next, c2 - IW @ cs[1]])

    x_init = np.zeros((m, d)) if x0 is None else np.asarray(x0, float)
    z0 = np.hstack([x_init, problem.grad(x_init)])
    L_Z = max(math.sqrt(1 + gamma**2), math.sqrt(1 + L**2))
    return AlgorithmSpec(
        NEXT, 2, m, 2 * d, d, comm, update, Lipschitz(math.sqrt(2 + L**2), L, L_Z), z0,
        primal=lambda Z: Z[:, :d], rate_lambda=None,
        feasible_set="mean(y) = mean(grad f(x))",
        meta={"gamma": gamma, "nu": nu, "rho2": rho2},
    )


def build_primal_dual(problem: Problem, Lap, gamma: float | None = None) -> AlgorithmSpec:
    _require_smooth(problem, PRIMAL_DUAL)
    Lm = np.asarray(Lap.L if isinstance(Lap, LaplacianMatrix) else Lap, float)
    m, d = problem.m, problem.d
    L, mu = problem.L, problem.mu
    ev = sym_eigenvalues(Lm)
    rho1, rho_m1 = float(ev[0]), float(ev[-2]) if m > 1 else 0.0
    if m > 1 and rho_m1 <= 1e-12:
        raise ValueError("Laplacian of a disconnected graph")
    default = gamma is None
    gamma = 2 * L * mu / (mu * rho_m1 + L * rho1) if default else float(gamma)

    def comm(s, Z, C):
        return problem.local_argmin(Z)

    def update(Z, cs):
        return Z + gamma * (Lm @ cs[0])

    L_pinv = np.linalg.pinv(Lm)

    def norm(Z):
        return math.sqrt(rho1 * _quad(L_pinv, Z))

    lam = table2_rate(PRIMAL_DUAL, problem.kappa, rho1_L=rho1, rho_m1_L=rho_m1) if default else None
    return AlgorithmSpec(
        PRIMAL_DUAL, 1, m, d, d, comm, update, Lipschitz(gamma * rho1, 0.0, 1 / mu),
        np.zeros((m, d)), primal=lambda Z: problem.local_argmin(Z), rate_lambda=lam,
        feasible_set="y in span(L), i.e. sum_i y_i = 0", norm=norm,
        project=lambda Z: Z - Z.mean(axis=0),
        meta={"gamma": gamma, "rho1_L": rho1, "rho_m1_L": rho_m1},
    )


def build(kind: str, problem: Problem, Wt: GossipMatrix | None = None,
          Lap: LaplacianMatrix | None = None, gamma: float | None = None,
          nu: float | None = None, c: float | None = None) -> AlgorithmSpec:
    """Build any kind from the raw Metropolis matrix, applying default shifts."""
    from .graph import shift_spectrum

    if kind not in ALL_KINDS:
        raise ValueError(f"unknown algorithm kind {kind!r}")
    if kind == GD_STAR:
        return build_gd_star(problem, gamma)
    if kind == PRIMAL_DUAL:
        return build_primal_dual(problem, Lap, gamma)
    if kind == NIDS:
        return build_nids(problem, Wt, gamma, c)
    nu = default_nu(kind, problem.kappa) if nu is None else nu
    W = shift_spectrum(Wt, nu)
    builders = {PROX_EXTRA: build_prox_extra, PROX_NIDS: build_prox_nids,
                PROX_NEXT: build_prox_next, PROX_DIGING: build_prox_diging, NEXT: build_next}
    return builders[kind](problem, W, gamma)


def certify_lipschitz(spec: AlgorithmSpec, pairs: int = 10_000, seed: int = 0) -> dict:
    """Largest sampled ratios for A (in c), C (in c) and C (in z), in l2.

    Pairs are drawn in the feasible set at mixed scales, including nearby
    points so that local curvature is probed as well as global slopes.
    """
    rng = np.random.default_rng(seed)
    m, R, dz, dc = spec.m, spec.R, spec.dim_z, spec.dim_c
    proj = spec.project or (lambda Z: Z)
    best = {"L_A": 0.0, "L_C": 0.0, "L_Z": 0.0}

    def draw(shape, scale):
        return scale * rng.standard_normal(shape)

    for t in range(pairs):
        scale = 10.0 ** rng.uniform(-2, 2)
        near = 10.0 ** rng.uniform(-6, 0)
        s = 1 + t % R
        Z = proj(draw((m, dz), scale))
        Z2 = proj(Z + draw((m, dz), scale * near))
        cs = [draw((m, dc), scale) for _ in range(R)]
        cs2 = [c + draw((m, dc), scale * near) for c in cs]
        # A: same z, different c (all rounds at once)
        dA = np.linalg.norm(spec.update_map(Z, cs) - spec.update_map(Z, cs2))
        dc_all = math.sqrt(sum(np.linalg.norm(a - b) ** 2 for a, b in zip(cs, cs2)))
        best["L_A"] = max(best["L_A"], dA / dc_all)
        # C^s: c-dependence at fixed z, then z-dependence at fixed c
        c_prev, c_prev2 = cs[0], cs2[0]
        dcv = np.linalg.norm(c_prev - c_prev2)
        gap_c = np.linalg.norm(spec.comm_map(s, Z, c_prev) - spec.comm_map(s, Z, c_prev2))
        best["L_C"] = max(best["L_C"], gap_c / dcv)
        gap_z = np.linalg.norm(spec.comm_map(s, Z, c_prev) - spec.comm_map(s, Z2, c_prev))
        dzv = np.linalg.norm(Z - Z2)
        if dzv > 0:
            best["L_Z"] = max(best["L_Z"], gap_z / dzv)
    return best
