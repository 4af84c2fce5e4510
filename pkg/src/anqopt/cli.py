"""Command-line entry point: runs, sweeps, rate estimation and codec inspection.

Exit codes: 0 success, 2 configuration error, 3 target not reached.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import harness as h
from .codec import encode_index, pack_symbols, symbol_width, bits_per_symbol
from .blackbox import estimate_rate
from .quantizer import AnqParams, quantize

EXIT_OK, EXIT_CONFIG, EXIT_NOT_REACHED = 0, 2, 3


def _load_config(args) -> h.ExperimentConfig:
    if getattr(args, "config", None):
        try:
            text = Path(args.config).read_text()
        except OSError as e:
            raise h.ConfigError(f"cannot read config: {e}") from None
        cfg = h.ExperimentConfig.from_json(text)
    else:
        cfg = h.ExperimentConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out_dir is not None:
        changes["out_dir"] = args.out_dir
    if args.algo is not None:
        changes["algorithm.kind"] = args.algo
    if args.eta0 is not None:
        changes["quantizer.eta0"] = args.eta0
    if args.omega_frac is not None:
        changes["quantizer.omega_rule"] = "fraction"
        changes["quantizer.omega"] = args.omega_frac
    if args.sigma is not None:
        changes["sigma.rule"] = "absolute"
        changes["sigma.value"] = args.sigma
    try:
        return cfg.override(**changes) if changes else cfg
    except TypeError as e:
        raise h.ConfigError(str(e)) from None


def _common(p, config_required=False):
    if config_required:
        p.add_argument("config", help="experiment config (JSON)")
    else:
        p.add_argument("config", nargs="?", help="experiment config (JSON)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--algo")
    p.add_argument("--eta0", type=float)
    p.add_argument("--omega-frac", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--workers", type=int, default=1)


def _summary_json(summary) -> str:
    return json.dumps(summary, indent=2, sort_keys=True, default=float)


def cmd_run(args) -> int:
    cfg = _load_config(args)
    rec = h.run_experiment(cfg)
    out = Path(cfg.out_dir)
    h.emit_csv(rec, out / "run.csv")
    (out / "summary.json").write_text(_summary_json(rec.summary) + "\n")
    print(_summary_json(rec.summary))
    reached = all(t["k_eps"] is not None for t in rec.summary["targets"].values())
    return EXIT_OK if reached else EXIT_NOT_REACHED


def _finish_sweep(rows, path, cost_key="C_cm"):
    h.write_table(rows, path)
    for r in rows:
        print(json.dumps(r, default=float))
    return EXIT_OK if all(r[cost_key] is not None for r in rows) else EXIT_NOT_REACHED


def cmd_sweep_sigma(args) -> int:
    cfg = _load_config(args)
    eps = min(cfg.eps)
    setup = h.prepare(replace(cfg, stop_on_target=True, eps=(eps,)))
    lam = setup.lam_hat
    if args.grid:
        sigmas = [float(s) for s in args.grid.split(",")]
    else:
        sigmas = list(lam + (1 - lam) * np.linspace(0.02, 0.95, args.points))
    rows = h.sweep_sigma(cfg, sigmas, eps, args.workers, setup)
    return _finish_sweep(rows, Path(cfg.out_dir) / "sweep_sigma.csv")


def cmd_sweep_omega(args) -> int:
    cfg = _load_config(args)
    fracs = [float(s) for s in args.fractions.split(",")]
    rows = h.sweep_omega(cfg, fracs, min(cfg.eps), args.workers)
    return _finish_sweep(rows, Path(cfg.out_dir) / "sweep_omega.csv")


def cmd_sweep_dim(args) -> int:
    cfg = _load_config(args)
    ds = [int(s) for s in args.dims.split(",")]
    rows, slope = h.sweep_dimension(cfg, ds, min(cfg.eps), args.workers)
    code = _finish_sweep(rows, Path(cfg.out_dir) / "sweep_dim.csv")
    print("slope", "undefined" if slope is None else "%.6g" % slope)
    return code


def cmd_rate_estimate(args) -> int:
    if args.csv:
        mse = h.read_csv(args.csv).mse
        est = estimate_rate(mse, args.start, args.stop)
        print(json.dumps({"lam_hat": est.lam_hat, "lam_ls": est.lam_ls,
                          "start": est.start, "stop": est.stop}))
        return EXIT_OK
    cfg = _load_config(args)
    setup = h.prepare(cfg)
    print(json.dumps({"lam_hat": setup.lam_hat, "table_lambda": setup.table_lambda,
                      "fixed_point_residual": setup.residual}))
    return EXIT_OK


def cmd_codec_inspect(args) -> int:
    p = AnqParams(args.eta, args.omega, args.S, args.mode)
    rng = np.random.default_rng(args.seed)
    for x in args.values:
        ell, q = quantize(np.array([x]), p, rng)
        seq = encode_index(int(ell[0]), p.S)
        print(json.dumps({"x": x, "index": int(ell[0]), "value": float(q[0]), "symbols": seq,
                          "bits": len(seq) * bits_per_symbol(p.S),
                          "wire_bits": len(seq) * symbol_width(p.S),
                          "packed_hex": pack_symbols(seq, p.S).hex()}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="anqopt", description="Quantized distributed optimization experiments")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="two-phase experiment, CSV + summary")
    _common(p, config_required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep-sigma", help="communication cost over a sigma grid")
    _common(p)
    p.add_argument("--grid", help="comma-separated sigma values (default: spread over (lam, 1))")
    p.add_argument("--points", type=int, default=10)
    p.set_defaults(func=cmd_sweep_sigma)

    p = sub.add_parser("sweep-omega", help="communication cost over fractions of omega_bar")
    _common(p)
    p.add_argument("--fractions", default="0,0.25,0.5,0.75")
    p.set_defaults(func=cmd_sweep_omega)

    p = sub.add_parser("sweep-dim", help="communication cost against dimension")
    _common(p)
    p.add_argument("--dims", default="20,40,80,160")
    p.set_defaults(func=cmd_sweep_dim)

    p = sub.add_parser("rate-estimate", help="lam_hat from a config or a run CSV")
    _common(p)
    p.add_argument("--csv", help="estimate from an emitted run CSV instead")
    p.add_argument("--start", type=int, default=50)
    p.add_argument("--stop", type=int, default=100)
    p.set_defaults(func=cmd_rate_estimate)

    p = sub.add_parser("codec-inspect", help="quantize and encode scalars")
    p.add_argument("values", type=float, nargs="+")
    p.add_argument("--eta", type=float, default=1.0)
    p.add_argument("--omega", type=float, default=0.0)
    p.add_argument("--S", type=int, default=2)
    p.add_argument("--mode", default="deterministic", choices=["deterministic", "probabilistic"])
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_codec_inspect)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except h.ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
