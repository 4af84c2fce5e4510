"""Generic fixed-point engine with multi-round quantized communication.

An algorithm is described by R communication maps and one update map. In
iteration k each agent computes round-s signals from its own state and the
round-(s-1) estimates of its neighbours:

    c^{k,s} = C^s(z^k, c_hat^{k,s-1}),       c_hat^{k,0} = 0,
    z^{k+1} = A(z^k, c_hat^{k,1}, ..., c_hat^{k,R}).

Without quantization c_hat^{k,s} = c^{k,s}. With quantization every agent
sends the prediction error against last iteration's estimate for the same
round, and all receivers update

    c_hat^{k,s} = c_hat^{k-1,s} + Q^k(c^{k,s} - c_hat^{k-1,s}),

using the bias eta^k = eta^0 * sigma^k for all rounds of iteration k. The
channel is noiseless, so one stored copy of c_hat per (agent, round) stands
for every receiver.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .codec import symbol_count, bits_per_symbol


@dataclass(frozen=True)
class Lipschitz:
    L_A: float
    L_C: float
    L_Z: float


@dataclass
class AlgorithmSpec:
    name: str
    R: int
    m: int
    dim_z: int
    dim_c: int
    comm_map: Callable  # (s, Z, C_prev) -> C, all stacked over agents
    update_map: Callable  # (Z, [C_1..C_R]) -> Z_next
    lipschitz: Lipschitz
    z0: np.ndarray
    primal: Callable  # Z -> (m, d) agent estimates of x
    rate_lambda: float | None = None
    feasible_set: str = ""
    norm: Callable | None = None  # algorithm norm; defaults to l2
    project: Callable | None = None  # maps arbitrary Z into the feasible set
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.R < 1:
            raise ValueError("R must be >= 1")
        lp = self.lipschitz
        if min(lp.L_A, lp.L_C, lp.L_Z) < 0:
            raise ValueError("Lipschitz constants must be non-negative")
        if self.rate_lambda is not None and not 0 <= self.rate_lambda < 1:
            raise ValueError("rate_lambda must lie in [0, 1)")
        if self.z0.shape != (self.m, self.dim_z):
            raise ValueError("z0 has the wrong shape")

    def zdist(self, Z1, Z2) -> float:
        D = np.asarray(Z1) - np.asarray(Z2)
        return float(self.norm(D)) if self.norm is not None else float(np.linalg.norm(D))


@dataclass
class NetState:
    z: np.ndarray
    c_hat: np.ndarray  # (m, R, dim_c)
    k: int = 0


def init_state(spec: AlgorithmSpec, z0=None) -> NetState:
    z = np.array(spec.z0 if z0 is None else z0, dtype=float)
    if z.shape != (spec.m, spec.dim_z):
        raise ValueError(f"state shape {z.shape} != {(spec.m, spec.dim_z)}")
    return NetState(z, np.zeros((spec.m, spec.R, spec.dim_c)), 0)


def _check(spec, state):
    if state.z.shape != (spec.m, spec.dim_z) or state.c_hat.shape != (spec.m, spec.R, spec.dim_c):
        raise ValueError("state dimensions do not match the algorithm")


def step_unquantized(spec: AlgorithmSpec, state: NetState) -> NetState:
    _check(spec, state)
    c = np.zeros((spec.m, spec.dim_c))
    rounds = []
    for s in range(1, spec.R + 1):
        c = spec.comm_map(s, state.z, c)
        rounds.append(c)
    return NetState(spec.update_map(state.z, rounds), state.c_hat, state.k + 1)


def agent_rngs(seed: int, m: int) -> list[np.random.Generator]:
    """Independent counter-based stream per agent, keyed by (seed, agent)."""
    return [np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, i])))
            for i in range(m)]


@dataclass
class StepInfo:
    bits: np.ndarray  # (m, R) bits sent per agent per round
    symbols: np.ndarray  # (m, R) symbol counts
    max_index: int
    indices: np.ndarray | None = None  # (m, R, dim_c), kept when requested


def step_quantized(spec: AlgorithmSpec, state: NetState, quantizer, eta_k: float,
                   rngs=None, keep_indices: bool = False):
    """One iteration of the quantized scheme; returns (state, StepInfo).

    ``quantizer(x, eta, rngs)`` maps an (m, dim_c) block of prediction errors
    to (indices, values). A quantizer flagged ``lossless`` returns the input
    unchanged and is charged no bits.
    """
    _check(spec, state)
    lossless = getattr(quantizer, "lossless", False)
    S = None if lossless else quantizer.params.S
    c_hat = state.c_hat.copy()
    syms = np.zeros((spec.m, spec.R), dtype=np.int64)
    kept = np.zeros((spec.m, spec.R, spec.dim_c), dtype=np.int64) if keep_indices else None
    max_index = 0
    prev = np.zeros((spec.m, spec.dim_c))
    for s in range(1, spec.R + 1):
        c = spec.comm_map(s, state.z, prev)
        if lossless:
            c_hat[:, s - 1] = c
        else:
            ell, q = quantizer(c - c_hat[:, s - 1], eta_k, rngs)
            c_hat[:, s - 1] = c_hat[:, s - 1] + q
            syms[:, s - 1] = symbol_count(ell, S).sum(axis=1)
            max_index = max(max_index, int(np.max(np.abs(ell), initial=0)))
            if keep_indices:
                kept[:, s - 1] = ell
        prev = c_hat[:, s - 1]
    z_next = spec.update_map(state.z, [c_hat[:, s] for s in range(spec.R)])
    bits = syms * (0.0 if lossless else bits_per_symbol(S))
    return NetState(z_next, c_hat, state.k + 1), StepInfo(bits, syms, max_index, kept)


def run_unquantized(spec: AlgorithmSpec, iters: int, z0=None, callback=None) -> NetState:
    st = init_state(spec, z0)
    if callback:
        callback(st)
    for _ in range(iters):
        st = step_unquantized(spec, st)
        if callback:
            callback(st)
    return st


def fixed_point(spec: AlgorithmSpec, lam: float | None = None, z0=None,
                min_iter: int = 2000, max_iter: int = 1_000_000) -> np.ndarray:
    """z^inf from max(10/(1-lam), min_iter) unquantized iterations.

    Stops early once an iteration no longer moves the state beyond rounding.
    """
    lam = spec.rate_lambda if lam is None else lam
    n = min_iter if lam is None else max(int(math.ceil(10 / (1 - lam))), min_iter)
    n = min(n, max_iter)
    st = init_state(spec, z0)
    for _ in range(n):
        nxt = step_unquantized(spec, st)
        moved = np.linalg.norm(nxt.z - st.z)
        st = nxt
        if moved <= 1e-16 * max(1.0, np.linalg.norm(st.z)):
            break
    return st.z


def fixed_point_residual(spec: AlgorithmSpec, z) -> float:
    st = NetState(np.asarray(z, dtype=float), np.zeros((spec.m, spec.R, spec.dim_c)))
    return float(np.linalg.norm(step_unquantized(spec, st).z - st.z))


# tuning ---------------------------------------------------------------------

def psi_const(L_C: float, R: int) -> float:
    return max(1.0, (2 * L_C) ** (R - 1))


def omega_bar(sigma: float, lam: float, L_A: float, L_Z: float, L_C: float, R: int) -> float:
    """Largest compression rate that still sustains the linear rate sigma."""
    if not sigma > lam:
        raise ValueError("sigma must exceed lambda")
    if not sigma < 1:
        raise ValueError("sigma must be below 1")
    gap = sigma - lam
    psi = psi_const(L_C, R)
    return (sigma / R) * gap / (gap + 2 * L_A * L_Z * (R * psi) ** 2)


def spec_omega_bar(spec: AlgorithmSpec, sigma: float, lam: float | None = None) -> float:
    lam = spec.rate_lambda if lam is None else lam
    lp = spec.lipschitz
    return omega_bar(sigma, lam, lp.L_A, lp.L_Z, lp.L_C, spec.R)


@dataclass
class TuningDiagnostics:
    omega_bar: float
    psi: float
    F_s: list
    V0: float
    c_star: float
    eta0: float
    sigma: float
    omega: float
    lam: float
    z_inf: np.ndarray

    def envelope(self, k):
        return self.V0 * self.sigma ** np.asarray(k, dtype=float)

    def input_bounds(self, k):
        """F^s * sigma^k: bound on the round-s quantizer input at iteration k."""
        return np.outer(self.sigma ** np.asarray(k, dtype=float), self.F_s)


def tuning_diagnostics(spec: AlgorithmSpec, sigma: float, eta0: float, omega: float,
                       z0=None, z_inf=None, lam: float | None = None) -> TuningDiagnostics:
    lam = spec.rate_lambda if lam is None else lam
    if lam is None:
        raise ValueError("a contraction factor lambda is required")
    lp = spec.lipschitz
    R = spec.R
    wbar = omega_bar(sigma, lam, lp.L_A, lp.L_Z, lp.L_C, R)
    if not omega < wbar:
        raise ValueError(f"omega={omega} must be below omega_bar={wbar}")
    z0 = np.array(spec.z0 if z0 is None else z0, dtype=float)
    if z_inf is None:
        z_inf = fixed_point(spec, lam, z0)
    psi = psi_const(lp.L_C, R)
    md = spec.m * spec.dim_c
    c = np.zeros((spec.m, spec.dim_c))
    c_star = max(np.linalg.norm(spec.comm_map(s, z0, c)) for s in range(1, R + 1))
    c_star = c_star / lp.L_Z if lp.L_Z > 0 else 0.0
    dist = spec.zdist(z0, z_inf)
    growth = (1 + (R * omega / sigma) * ((1 + lp.L_C * sigma) * psi - 1)) / (1 - omega / wbar)
    V0 = max(c_star, dist) + lp.L_A * psi * math.sqrt(md) * R**2 * eta0 / (sigma - lam) * growth
    base = (math.sqrt(md) * eta0 * (1 + lp.L_C * sigma) + 2 * lp.L_Z * V0) / (sigma - omega)
    ratio = 2 * lp.L_C / (1 - omega / sigma)
    F_s = [base * sum(ratio**j for j in range(s)) for s in range(1, R + 1)]
    return TuningDiagnostics(wbar, psi, F_s, V0, c_star, eta0, sigma, omega, lam, z_inf)


# rate estimation --------------------------------------------------------------

@dataclass
class RateEstimate:
    lam_hat: float
    lam_ls: float
    start: int
    stop: int


def estimate_rate(mse, start: int = 50, stop: int = 100, floor: float = 1e-20) -> RateEstimate:
    """Per-iterate rate from an MSE trajectory, (MSE^stop / MSE^start)^(1/(2(stop-start))).

    If the trajectory reaches ``floor`` by ``stop`` the window slides earlier to
    end where the floor is first hit, starting halfway there. A least-squares
    fit of log MSE over the same window is returned as a cross-check.
    """
    mse = np.asarray(mse, dtype=float)
    if mse.size <= stop:
        raise ValueError(f"trajectory has {mse.size} points, need more than {stop}")
    hit = np.flatnonzero(mse[: stop + 1] <= floor)
    if hit.size:
        stop = int(hit[0])
        start = min(start, stop // 2)
    if stop - start < 5 or not mse[start] > floor:
        raise ValueError("trajectory is already at the numerical floor")
    lam = (mse[stop] / mse[start]) ** (1.0 / (2 * (stop - start)))
    ks = np.arange(start, stop + 1)
    slope = np.polyfit(ks, np.log(mse[start: stop + 1]), 1)[0]
    return RateEstimate(float(lam), float(np.exp(slope / 2)), start, stop)


def with_lambda(spec: AlgorithmSpec, lam: float) -> AlgorithmSpec:
    return replace(spec, rate_lambda=lam)
