"""Adaptive non-uniform quantizers satisfying the biased-compression rule.

A quantizer with bias eta and compression rate omega keeps the scalar error
within eta + omega*|x| (surely for the deterministic rule, in mean square for
the probabilistic one). Points grow geometrically away from the origin, so
large inputs are represented coarsely and small ones finely.

All index functions are vectorized and return int64 arrays. The sign of 0 is
taken as 0, so x = 0 always maps to index 0.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

OMEGA_LIMIT = 1e-12  # below this, the omega -> 0 closed forms are used
DETERMINISTIC = "deterministic"
PROBABILISTIC = "probabilistic"


@dataclass(frozen=True)
class AnqParams:
    eta: float
    omega: float = 0.0
    S: int = 2
    mode: str = DETERMINISTIC

    def __post_init__(self):
        if not self.eta > 0 or not np.isfinite(self.eta):
            raise ValueError("eta must be positive and finite; eta = 0 admits no finite quantizer")
        if not 0 <= self.omega < 1:
            raise ValueError("omega must lie in [0, 1)")
        if int(self.S) != self.S or self.S < 2:
            raise ValueError("S must be an integer >= 2")
        if self.mode not in (DETERMINISTIC, PROBABILISTIC):
            raise ValueError(f"unknown mode {self.mode!r}")

    def with_eta(self, eta: float) -> "AnqParams":
        return replace(self, eta=eta)


def _det_log_ratio(omega: float) -> float:
    return np.log1p(omega) - np.log1p(-omega)


def quant_point(ell, p: AnqParams):
    """Quantization point q_ell (odd-N constellation, q_0 = 0, q_{-l} = -q_l)."""
    ell = np.asarray(ell)
    a = np.abs(ell).astype(float)
    if p.omega < OMEGA_LIMIT:
        mag = 2 * p.eta * a
    elif p.mode == DETERMINISTIC:
        mag = p.eta / p.omega * np.expm1(a * _det_log_ratio(p.omega))
    else:
        mag = p.eta / p.omega * np.expm1(2 * a * np.arcsinh(p.omega))
    return np.sign(ell) * mag


INDEX_LIMIT = 2.0**62


def _to_index(t):
    """Ceiling of t as int64, refusing non-finite input or indices past int64."""
    if np.any(np.isnan(t)):
        raise ValueError("quantizer input must not be NaN")
    if np.any(t > INDEX_LIMIT):
        raise OverflowError("quantization index does not fit in 64 bits")
    return np.maximum(np.ceil(t), 0).astype(np.int64)


def _det_midpoint(ell, p):
    # midpoint between q_ell and q_{ell+1} on the non-negative side
    return (quant_point(ell, p) + quant_point(ell + 1, p)) / 2


def quantize_det(x, p: AnqParams):
    """Nearest-point index; exact midpoints go to the smaller |ell|."""
    x = np.asarray(x, dtype=float)
    a = np.abs(x)
    if p.omega < OMEGA_LIMIT:
        with np.errstate(over="ignore"):
            t = a / (2 * p.eta) - 0.5
    else:
        w = p.omega
        t = (np.log1p(-w) + np.log1p(w * a / p.eta)) / _det_log_ratio(w)
    ell = _to_index(t)
    # the ceiling of a float is fragile at the boundaries; settle it exactly
    for _ in range(3):
        up = a > _det_midpoint(ell, p)
        ell = ell + up
        down = (ell > 0) & (a <= _det_midpoint(ell - 1, p))
        ell = ell - down
        if not (up.any() or down.any()):
            break
    return (np.sign(x) * ell).astype(np.int64)


def _prob_bracket_index(a, p):
    """Smallest ell >= 0 with q_ell >= a (magnitudes)."""
    if p.omega < OMEGA_LIMIT:
        with np.errstate(over="ignore"):
            t = a / (2 * p.eta)
    else:
        t = np.log1p(p.omega * a / p.eta) / (2 * np.arcsinh(p.omega))
    ell = _to_index(t)
    for _ in range(3):
        up = a > quant_point(ell, p)
        ell = ell + up
        down = (ell > 0) & (a <= quant_point(ell - 1, p))
        ell = ell - down
        if not (up.any() or down.any()):
            break
    return ell


def prob_bracket(x, p: AnqParams):
    """Bracketing points and their selection probabilities.

    Returns (q_lo, q_hi, p_lo, p_hi) with signs matching x, such that
    p_lo*q_lo + p_hi*q_hi = x. When x is itself a point, q_lo = q_hi = x
    and p_hi = 1.
    """
    x = np.asarray(x, dtype=float)
    a = np.abs(x)
    hi = _prob_bracket_index(a, p)
    lo = np.maximum(hi - 1, 0)
    q_hi = quant_point(hi, p)
    q_lo = quant_point(lo, p)
    width = q_hi - q_lo
    exact = (a == q_hi)
    with np.errstate(invalid="ignore", divide="ignore"):
        p_hi = np.where(exact, 1.0, (a - q_lo) / np.where(exact, 1.0, width))
    q_lo = np.where(exact, q_hi, q_lo)
    s = np.sign(x)
    return s * q_lo, s * q_hi, 1.0 - p_hi, p_hi


def quantize_prob(x, p: AnqParams, rng: np.random.Generator | None = None, u=None):
    """Unbiased randomized rounding between the two bracketing points.

    Uniform draws come from ``rng`` or are passed directly as ``u``.
    """
    x = np.asarray(x, dtype=float)
    a = np.abs(x)
    hi = _prob_bracket_index(a, p)
    q_hi = quant_point(hi, p)
    q_lo = quant_point(np.maximum(hi - 1, 0), p)
    exact = a == q_hi
    if u is None:
        u = rng.random(np.shape(x))
    with np.errstate(invalid="ignore", divide="ignore"):
        p_hi = np.where(exact, 1.0, (a - q_lo) / np.where(exact, 1.0, q_hi - q_lo))
    ell = np.where(u < p_hi, hi, hi - 1)
    ell = np.where(hi == 0, 0, ell)
    return (np.sign(x) * ell).astype(np.int64)


def quantize_vector(x, p: AnqParams, rng: np.random.Generator | None = None):
    """Componentwise index vector for the rule selected by ``p.mode``."""
    if p.mode == DETERMINISTIC:
        return quantize_det(x, p)
    if rng is None:
        raise ValueError("probabilistic quantization needs an rng")
    return quantize_prob(x, p, rng)


def quantize(x, p: AnqParams, rng: np.random.Generator | None = None):
    """Return (indices, reconstructed values)."""
    ell = quantize_vector(x, p, rng)
    return ell, quant_point(ell, p)


# even-N constellations: no point at 0, first points at +-eta (deterministic)
def quant_point_even(ell, p: AnqParams):
    """Even-N point for signed ell != 0; q_{-l} = -q_l."""
    ell = np.asarray(ell)
    if np.any(ell == 0):
        raise ValueError("even-N constellations have no index 0")
    a = np.abs(ell).astype(float)
    w = p.omega
    if w < OMEGA_LIMIT:
        mag = (2 * a - 1) * p.eta
    elif p.mode == DETERMINISTIC:
        # (1+w)^l / (1-w)^(l-1) - 1
        mag = p.eta / w * np.expm1(a * np.log1p(w) - (a - 1) * np.log1p(-w))
    else:
        s = np.sqrt(1 + w * w)
        mag = p.eta / w * np.expm1((2 * a - 1) * np.arcsinh(w) - np.log(s))
    return np.sign(ell) * mag


def quantize_det_even(x, p: AnqParams):
    """Nearest even-N point; x = 0 maps to +1 by convention."""
    x = np.asarray(x, dtype=float)
    a = np.abs(x)
    # midpoint between even points l and l+1 coincides with the odd point q_l
    if p.omega < OMEGA_LIMIT:
        t = a / (2 * p.eta)
    else:
        t = np.log1p(p.omega * a / p.eta) / _det_log_ratio(p.omega)
    ell = np.maximum(_to_index(t), 1)
    odd = replace(p, mode=DETERMINISTIC)
    for _ in range(3):
        up = a > (quant_point_even(ell, odd) + quant_point_even(ell + 1, odd)) / 2
        ell = ell + up
        prev = np.maximum(ell - 1, 1)
        down = (ell > 1) & (a <= (quant_point_even(prev, odd) + quant_point_even(prev + 1, odd)) / 2)
        ell = ell - down
        if not (up.any() or down.any()):
            break
    sgn = np.where(x < 0, -1, 1)
    return (sgn * ell).astype(np.int64)


def max_range(eta: float, omega: float, N: int, mode: str = DETERMINISTIC) -> float:
    """Largest |x| a constellation of N points covers while keeping the rule."""
    if N < 1:
        raise ValueError("N must be >= 1")
    if eta == 0:
        return 0.0
    p = AnqParams(eta, omega, 2, mode)
    if N % 2 == 1:
        h = (N - 1) // 2
        if mode == DETERMINISTIC:
            return float((quant_point(h, p) + quant_point(h + 1, p)) / 2)
        return float(quant_point(h, p))
    h = N // 2
    if mode == DETERMINISTIC:
        return float((quant_point_even(h, p) + quant_point_even(h + 1, p)) / 2)
    return float(quant_point_even(h, p))


class AnqQuantizer:
    """Callable used by the engine: (x, eta, rng) -> (indices, values)."""

    lossless = False

    def __init__(self, params: AnqParams):
        self.params = params

    def __call__(self, x, eta, rngs=None):
        """Quantize an (m, d) block; row i draws from ``rngs[i]``."""
        p = self.params.with_eta(eta)
        x = np.asarray(x, dtype=float)
        if p.mode == DETERMINISTIC:
            ell = quantize_det(x, p)
        else:
            if rngs is None:
                raise ValueError("probabilistic quantization needs per-agent rngs")
            u = np.stack([g.random(x.shape[-1]) for g in rngs]).reshape(x.shape)
            ell = quantize_prob(x, p, u=u)
        return ell, quant_point(ell, p)
