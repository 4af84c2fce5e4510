"""Experiment configuration, metrics, sweeps and CSV output.

A run has two phases. Phase 1 iterates the unquantized algorithm to estimate
the contraction factor lam_hat from the MSE trajectory and to locate the
fixed point. Phase 2 picks sigma from lam_hat, omega from omega_bar(sigma),
and runs the quantized algorithm with the bias schedule eta0 * sigma**k.
"""
from __future__ import annotations

import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import algorithms as alg
from .blackbox import (agent_rngs, estimate_rate, fixed_point, fixed_point_residual,
                       init_state, spec_omega_bar, step_quantized, step_unquantized)
from .graph import generate_erdos_renyi, laplacian, metropolis_weights
from .problems import (gen_linreg, gen_logreg_synthetic, load_mnist_idx, Logistic,
                       reference_solution)
from .quantizer import DETERMINISTIC, PROBABILISTIC, AnqParams, AnqQuantizer

CSV_HEADER = "k,mse,bits_per_agent,cum_bits_network"


class ConfigError(ValueError):
    pass


def _from_dict(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    return cls(**data)


@dataclass(frozen=True)
class ProblemConfig:
    kind: str = "linreg"  # linreg | logreg
    m: int = 20
    d: int = 40
    n: int = 20
    beta: float = 0.3
    alpha: float = 0.0
    reg: float = 0.01
    seed: int = 0
    kappa_target: float | None = None
    mnist_images: str | None = None
    mnist_labels: str | None = None
    digit: int = 0


@dataclass(frozen=True)
class GraphConfig:
    p: float = 0.6
    seed: int = 0


@dataclass(frozen=True)
class AlgorithmConfig:
    kind: str = alg.PROX_NIDS
    gamma: float | None = None
    nu: float | None = None  # None: the kind's default shift


@dataclass(frozen=True)
class QuantizerConfig:
    mode: str = DETERMINISTIC
    eta0: float = 0.1
    omega_rule: str = "fraction"  # fraction (of omega_bar) | absolute
    omega: float = 0.5
    S: int = 2


@dataclass(frozen=True)
class SigmaConfig:
    rule: str = "affine"  # affine: a * lam + b | absolute: value
    a: float = 0.99
    b: float = 0.01
    value: float | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)
    algorithm: AlgorithmConfig = field(default_factory=AlgorithmConfig)
    quantizer: QuantizerConfig = field(default_factory=QuantizerConfig)
    sigma: SigmaConfig = field(default_factory=SigmaConfig)
    horizon: int = 1000
    phase1_horizon: int = 1000
    eps: tuple = (1e-8,)
    repetitions: int = 1
    seed: int = 0  # quantizer randomness
    rate_window: tuple = (50, 100)
    stop_on_target: bool = False
    out_dir: str = "out"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.problem.kind not in ("linreg", "logreg"):
            raise ConfigError(f"unknown problem kind {self.problem.kind!r}")
        if self.algorithm.kind not in alg.ALL_KINDS:
            raise ConfigError(f"unknown algorithm {self.algorithm.kind!r}")
        if self.quantizer.mode not in (DETERMINISTIC, PROBABILISTIC):
            raise ConfigError(f"unknown quantizer mode {self.quantizer.mode!r}")
        if self.quantizer.omega_rule not in ("fraction", "absolute"):
            raise ConfigError(f"unknown omega rule {self.quantizer.omega_rule!r}")
        if not self.quantizer.eta0 > 0:
            raise ConfigError("eta0 must be positive")
        if self.sigma.rule not in ("affine", "absolute"):
            raise ConfigError(f"unknown sigma rule {self.sigma.rule!r}")
        if self.sigma.rule == "absolute" and self.sigma.value is None:
            raise ConfigError("absolute sigma rule needs a value")
        start, stop = self.rate_window
        if not 0 <= start < stop:
            raise ConfigError("rate window must satisfy 0 <= start < stop")
        if self.phase1_horizon < max(200, stop + 1):
            raise ConfigError("phase-1 horizon must be >= 200 and exceed the rate window")
        if self.horizon < 1 or self.repetitions < 1:
            raise ConfigError("horizon and repetitions must be positive")
        if not self.eps or min(self.eps) <= 0:
            raise ConfigError("eps targets must be positive")
        if self.problem.kind == "logreg" and (self.problem.mnist_images is None) != (self.problem.mnist_labels is None):
            raise ConfigError("MNIST needs both images and labels paths")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        data = dict(data)
        sections = {"problem": ProblemConfig, "graph": GraphConfig, "algorithm": AlgorithmConfig,
                    "quantizer": QuantizerConfig, "sigma": SigmaConfig}
        for key, sub in sections.items():
            if key in data:
                data[key] = _from_dict(sub, data[key], key)
        for key in ("eps", "rate_window"):
            if key in data:
                data[key] = tuple(data[key])
        try:
            return _from_dict(cls, data, "config")
        except TypeError as e:
            raise ConfigError(str(e)) from None

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON: {e}") from None

    def to_dict(self) -> dict:
        out = asdict(self)
        out["eps"] = list(self.eps)
        out["rate_window"] = list(self.rate_window)
        return out

    def override(self, **changes) -> "ExperimentConfig":
        """Replace top-level keys or nested ones given as 'section.key'."""
        top, nested = {}, {}
        for key, val in changes.items():
            if "." in key:
                sec, sub = key.split(".", 1)
                nested.setdefault(sec, {})[sub] = val
            else:
                top[key] = val
        for sec, vals in nested.items():
            top[sec] = replace(getattr(self, sec), **vals)
        return replace(self, **top)


# metrics ----------------------------------------------------------------------

def compute_mse(x_agents, x_star) -> float:
    """sum_i ||x_i - x*||^2 / (m ||x*||^2)."""
    X = np.atleast_2d(np.asarray(x_agents, dtype=float))
    xs = np.asarray(x_star, dtype=float)
    ref = float(np.sum(xs * xs))
    if ref == 0:
        raise ValueError("reference solution has zero norm")
    return float(np.sum((X - xs) ** 2) / (X.shape[0] * ref))


@dataclass
class RunRecord:
    """Per-iteration series: row k holds MSE^k and the bits sent in iteration k."""

    k: np.ndarray
    mse: np.ndarray
    bits_per_agent: np.ndarray  # mean over agents of the bits sent in iteration k
    cum_bits: np.ndarray  # network bits summed over iterations 0..k
    agent_bits: np.ndarray | None = None  # (K, m)
    indices: list | None = None  # per iteration (m, R, dim_c), when kept
    max_index: np.ndarray | None = None  # largest |index| sent in iteration k
    summary: dict = field(default_factory=dict)

    @classmethod
    def empty(cls) -> "RunRecord":
        z = np.zeros(0)
        return cls(np.zeros(0, dtype=np.int64), z, z.copy(), z.copy())

    def __len__(self):
        return len(self.k)

    def same_series(self, other: "RunRecord") -> bool:
        return (np.array_equal(self.k, other.k) and np.array_equal(self.mse, other.mse)
                and np.array_equal(self.bits_per_agent, other.bits_per_agent)
                and np.array_equal(self.cum_bits, other.cum_bits))


NOT_REACHED = None


def comm_cost(record: RunRecord, eps: float):
    """(k_eps, C_cm): first k with MSE^k <= eps and network bits through k.

    Returns (None, None) when eps is not reached within the record.
    """
    hit = np.flatnonzero(record.mse <= eps)
    if not hit.size:
        return NOT_REACHED, NOT_REACHED
    k = int(hit[0])
    return k, float(record.cum_bits[k])


# experiment setup -------------------------------------------------------------

@dataclass
class Setup:
    cfg: ExperimentConfig
    problem: object
    spec: object
    x_star: np.ndarray
    mse1: np.ndarray
    lam_hat: float
    z_inf: np.ndarray
    table_lambda: float | None
    residual: float


def build_problem(pc: ProblemConfig):
    if pc.kind == "linreg":
        _, prob = gen_linreg(pc.m, pc.n, pc.d, pc.beta, seed=pc.seed, reg=pc.reg,
                             alpha=pc.alpha, kappa_target=pc.kappa_target)
        return prob
    if pc.mnist_images:
        data = load_mnist_idx(pc.mnist_images, pc.mnist_labels, pc.digit, pc.m)
        return Logistic(data.U, data.v, pc.reg, pc.alpha)
    _, prob = gen_logreg_synthetic(pc.m, pc.n, pc.d, pc.seed, reg=pc.reg, alpha=pc.alpha)
    return prob


def build_spec(cfg: ExperimentConfig, problem):
    topo = generate_erdos_renyi(problem.m, cfg.graph.p, cfg.graph.seed)
    Wt = metropolis_weights(topo)
    ac = cfg.algorithm
    try:
        return alg.build(ac.kind, problem, Wt, laplacian(topo), gamma=ac.gamma, nu=ac.nu), Wt
    except ValueError as e:
        raise ConfigError(str(e)) from None


def table_lambda(kind, problem, Wt, spec):
    """Closed-form rate for the kind, evaluated on the matrices actually used."""
    if kind == alg.NIDS:
        return alg.table2_rate(kind, problem.kappa, (1 + spec.meta["rho2_tilde"]) / 2)
    if kind == alg.PRIMAL_DUAL:
        return alg.table2_rate(kind, problem.kappa, rho1_L=spec.meta["rho1_L"],
                               rho_m1_L=spec.meta["rho_m1_L"])
    return alg.table2_rate(kind, problem.kappa, spec.meta.get("rho2"))


def mse_of(spec, z, x_star) -> float:
    return compute_mse(spec.primal(z), x_star)


def prepare(cfg: ExperimentConfig) -> Setup:
    """Phase 1: unquantized trajectory, lam_hat and z^inf."""
    problem = build_problem(cfg.problem)
    spec, Wt = build_spec(cfg, problem)
    x_star = reference_solution(problem)
    st = init_state(spec)
    mse = [mse_of(spec, st.z, x_star)]
    for _ in range(cfg.phase1_horizon):
        st = step_unquantized(spec, st)
        mse.append(mse_of(spec, st.z, x_star))
    mse = np.array(mse)
    est = estimate_rate(mse, *cfg.rate_window)
    lam = est.lam_hat
    if not 0 <= lam < 1:
        raise RuntimeError(f"phase 1 did not contract (lam_hat={lam})")
    z_inf = fixed_point(spec, lam)
    return Setup(cfg, problem, spec, x_star, mse, lam, z_inf,
                 table_lambda(cfg.algorithm.kind, problem, Wt, spec),
                 fixed_point_residual(spec, z_inf))


def pick_sigma(sc: SigmaConfig, lam: float) -> float:
    sigma = sc.value if sc.rule == "absolute" else sc.a * lam + sc.b
    if not lam < sigma < 1:
        raise ConfigError(f"sigma={sigma} must lie in (lam_hat={lam}, 1)")
    return float(sigma)


def pick_omega(qc: QuantizerConfig, wbar: float) -> float:
    omega = qc.omega * wbar if qc.omega_rule == "fraction" else qc.omega
    if not 0 <= omega < wbar:
        raise ConfigError(f"omega={omega} must lie in [0, omega_bar={wbar})")
    return float(omega)


def _quantized_series(setup: Setup, quantizer, sigma, eta0, horizon, seed, stop_eps, keep):
    """One quantized trajectory; the iteration that reaches stop_eps is still sent.

    Stops early, with a reason, once eta^k underflows or an index no longer
    fits in 64 bits; both only happen long after the float floor is reached.
    """
    spec = setup.spec
    rngs = agent_rngs(seed, spec.m)
    st = init_state(spec)
    mse, bits, kept, max_index = [], [], [], []
    stopped = None
    for k in range(horizon):
        eta_k = eta0 * sigma**k
        if not eta_k > 0:
            stopped = "eta underflow"
            break
        try:
            nxt, info = step_quantized(spec, st, quantizer, eta_k, rngs, keep_indices=keep)
        except OverflowError:
            stopped = "index overflow"
            break
        mse.append(mse_of(spec, st.z, setup.x_star))
        bits.append(info.bits.sum(axis=1))
        max_index.append(info.max_index)
        if keep:
            kept.append(info.indices)
        st = nxt
        if stop_eps is not None and mse[-1] <= stop_eps:
            break
    return (np.array(mse), np.array(bits).reshape(-1, spec.m), kept,
            np.array(max_index, dtype=np.int64), stopped)


def run_quantized(setup: Setup, sigma: float | None = None, omega: float | None = None,
                  eta0: float | None = None, quantizer=None, keep_indices: bool = False) -> RunRecord:
    """Phase 2 on a prepared setup; sigma/omega/eta0 override the config rules."""
    cfg = setup.cfg
    qc = cfg.quantizer
    sigma = pick_sigma(cfg.sigma, setup.lam_hat) if sigma is None else float(sigma)
    if not setup.lam_hat < sigma < 1:
        raise ConfigError(f"sigma={sigma} must lie in (lam_hat={setup.lam_hat}, 1)")
    wbar = spec_omega_bar(setup.spec, sigma, setup.lam_hat)
    omega = pick_omega(qc, wbar) if omega is None else float(omega)
    if not 0 <= omega < wbar:
        raise ConfigError(f"omega={omega} must lie in [0, omega_bar={wbar})")
    eta0 = qc.eta0 if eta0 is None else float(eta0)
    reps = cfg.repetitions if qc.mode == PROBABILISTIC else 1
    # averaged runs must share a length, so only single runs stop early
    stop_eps = min(cfg.eps) if cfg.stop_on_target and reps == 1 else None
    runs = []
    for r in range(reps):
        q = quantizer or AnqQuantizer(AnqParams(eta0, omega, qc.S, qc.mode))
        runs.append(_quantized_series(setup, q, sigma, eta0, cfg.horizon, cfg.seed + r,
                                      stop_eps, keep_indices))
    K = min(len(r[0]) for r in runs)
    mse = np.mean([r[0][:K] for r in runs], axis=0)
    agent_bits = np.mean([r[1][:K] for r in runs], axis=0)
    net = agent_bits.sum(axis=1)
    max_index = np.max([r[3][:K] for r in runs], axis=0)
    rec = RunRecord(np.arange(K), mse, agent_bits.mean(axis=1), np.cumsum(net), agent_bits,
                    runs[0][2] if keep_indices else None, max_index)
    s = rec.summary
    s.update(lam_hat=setup.lam_hat, table_lambda=setup.table_lambda, sigma=sigma,
             omega=omega, omega_bar=wbar, eta0=eta0, fixed_point_residual=setup.residual,
             max_index=int(max_index.max(initial=0)),
             stopped=next((r[4] for r in runs if r[4]), None))
    try:
        s["lam_hat_quantized"] = estimate_rate(mse, *cfg.rate_window).lam_hat
    except ValueError:
        s["lam_hat_quantized"] = None
    d = setup.spec.dim_c
    s["avg_bits_per_agent_dim"] = float(rec.bits_per_agent.mean() / d) if K else 0.0
    s["targets"] = {}
    for eps in cfg.eps:
        k_eps, c = comm_cost(rec, eps)
        avg = None if k_eps is None else float(rec.bits_per_agent[: k_eps + 1].mean() / d)
        s["targets"][repr(float(eps))] = {"k_eps": k_eps, "C_cm": c, "avg_bits_per_agent_dim": avg}
    return rec


def run_experiment(cfg: ExperimentConfig, quantizer=None, keep_indices: bool = False) -> RunRecord:
    return run_quantized(prepare(cfg), quantizer=quantizer, keep_indices=keep_indices)


def unquantized_record(setup: Setup, horizon: int | None = None) -> RunRecord:
    """Phase-1 trajectory as a record with zero bits."""
    K = setup.cfg.horizon if horizon is None else horizon
    st = init_state(setup.spec)
    mse = []
    for _ in range(K):
        mse.append(mse_of(setup.spec, st.z, setup.x_star))
        st = step_unquantized(setup.spec, st)
    z = np.zeros(K)
    return RunRecord(np.arange(K), np.array(mse), z, z.copy(), np.zeros((K, setup.spec.m)))


# sweeps -----------------------------------------------------------------------

def _parallel(fn, items, workers):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(workers) as ex:
        return list(ex.map(fn, items))


def _cost_row(rec, eps):
    k, c = comm_cost(rec, eps)
    return {"k_eps": k, "C_cm": c, "lam_hat_quantized": rec.summary.get("lam_hat_quantized"),
            "max_index": rec.summary["max_index"]}


def sweep_sigma(cfg: ExperimentConfig, sigmas, eps: float = 1e-8, workers: int = 1, setup=None):
    """C_cm(eps) per sigma, with omega from the config rule at each sigma."""
    setup = setup or prepare(replace(cfg, stop_on_target=True, eps=(eps,)))

    def one(sigma):
        row = _cost_row(run_quantized(setup, sigma=sigma), eps)
        return {"sigma": float(sigma), **row}
    return _parallel(one, list(sigmas), workers)


def sweep_omega(cfg: ExperimentConfig, fractions=(0.0, 0.25, 0.5, 0.75), eps: float = 1e-8,
                workers: int = 1, setup=None):
    """C_cm(eps) per omega given as a fraction of omega_bar(sigma)."""
    setup = setup or prepare(replace(cfg, stop_on_target=True, eps=(eps,)))
    sigma = pick_sigma(cfg.sigma, setup.lam_hat)
    wbar = spec_omega_bar(setup.spec, sigma, setup.lam_hat)

    def one(frac):
        row = _cost_row(run_quantized(setup, sigma=sigma, omega=frac * wbar), eps)
        return {"omega_frac": float(frac), "omega": float(frac * wbar), **row}
    return _parallel(one, list(fractions), workers)


def loglog_slope(xs, ys):
    """Least-squares slope of log y on log x; None with fewer than two points."""
    if len(xs) < 2:
        return None
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def sweep_dimension(cfg: ExperimentConfig, d_list, eps: float = 1e-8, workers: int = 1):
    """C_cm(eps) per dimension and the log-log slope of cost against d."""
    if cfg.problem.kind == "linreg" and cfg.problem.kappa_target is None:
        raise ConfigError("dimension sweeps need a pinned kappa_target")

    def one(d):
        c = cfg.override(**{"problem.d": int(d)}, stop_on_target=True, eps=(eps,))
        rec = run_experiment(c)
        return {"d": int(d), **_cost_row(rec, eps), "lam_hat": rec.summary["lam_hat"]}
    rows = _parallel(one, list(d_list), workers)
    ok = [r for r in rows if r["C_cm"] is not None]
    slope = loglog_slope([r["d"] for r in ok], [r["C_cm"] for r in ok]) if len(ok) == len(rows) else None
    return rows, slope


# CSV ------------------------------------------------------------------------

def _g(x) -> str:
    return "%.17g" % float(x)


def format_csv(record: RunRecord) -> str:
    out = io.StringIO()
    out.write(CSV_HEADER + "\n")
    for k, mse, b, c in zip(record.k, record.mse, record.bits_per_agent, record.cum_bits):
        out.write(f"{int(k)},{_g(mse)},{_g(b)},{_g(c)}\n")
    return out.getvalue()


def emit_csv(record: RunRecord, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n", encoding="ascii") as fh:
        fh.write(format_csv(record))


def parse_csv(text: str) -> RunRecord:
    lines = text.split("\n")
    if lines[0] != CSV_HEADER:
        raise ValueError("unexpected CSV header")
    rows = [ln.split(",") for ln in lines[1:] if ln]
    if any(len(r) != 4 for r in rows):
        raise ValueError("malformed CSV row")
    if not rows:
        return RunRecord.empty()
    k = np.array([int(r[0]) for r in rows], dtype=np.int64)
    cols = [np.array([float(r[i]) for r in rows]) for i in (1, 2, 3)]
    return RunRecord(k, *cols)


def read_csv(path) -> RunRecord:
    with open(path, encoding="ascii", newline="") as fh:
        return parse_csv(fh.read())


def write_table(rows, path) -> None:
    """Sweep rows as CSV with the keys of the first row as header."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    keys = list(rows[0]) if rows else []
    with open(path, "w", newline="\n", encoding="ascii") as fh:
        fh.write(",".join(keys) + "\n")
        for r in rows:
            fh.write(",".join("" if r[k] is None else (str(r[k]) if isinstance(r[k], int) else _g(r[k]))
                              for k in keys) + "\n")
