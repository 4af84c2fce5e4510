import json
import math

import numpy as np
import pytest

from anqopt import algorithms as alg
from anqopt import harness as h
from anqopt.cli import main
from anqopt.codec import encode_stream

from conftest import IdentityQuantizer


def small_cfg(**over):
    cfg = h.ExperimentConfig(
        problem=h.ProblemConfig(m=5, d=4, n=6, seed=1, kappa_target=10.0),
        graph=h.GraphConfig(p=0.8, seed=2),
        quantizer=h.QuantizerConfig(eta0=0.01),
        horizon=300, phase1_horizon=300,
    )
    return cfg.override(**over) if over else cfg


def test_compute_mse_examples():
    e1 = np.array([1.0, 0.0])
    assert h.compute_mse(np.tile(e1, (3, 1)), e1) == 0.0
    assert h.compute_mse(np.array([[2.0, 0.0], [0.0, 0.0]]), e1) == 1.0
    assert h.compute_mse(np.zeros((4, 2)), e1) == 1.0
    with pytest.raises(ValueError):
        h.compute_mse(np.zeros((2, 2)), np.zeros(2))


def synthetic(K=20, m=4, bits=10.0, hit=9):
    mse = np.where(np.arange(K) < hit, 1.0, 1e-9)
    ab = np.full((K, m), bits)
    return h.RunRecord(np.arange(K), mse, ab.mean(axis=1), np.cumsum(ab.sum(axis=1)), ab)


def test_comm_cost_examples():
    assert h.comm_cost(synthetic(), 1e-8) == (9, 400.0)
    assert h.comm_cost(synthetic(), 1.0) == (0, 40.0)
    assert h.comm_cost(synthetic(), 1e-12) == (None, None)


def test_csv_roundtrip_and_empty(tmp_path):
    rec = synthetic()
    rec.mse[3] = 1 / 3
    h.emit_csv(rec, tmp_path / "a.csv")
    back = h.read_csv(tmp_path / "a.csv")
    assert back.same_series(rec)
    assert h.format_csv(h.RunRecord.empty()) == h.CSV_HEADER + "\n"
    assert len(h.parse_csv(h.CSV_HEADER + "\n")) == 0
    with pytest.raises(ValueError):
        h.parse_csv("k,mse\n")
    with pytest.raises(ValueError):
        h.parse_csv(h.CSV_HEADER + "\n1,2\n")


def test_config_json_roundtrip_and_rejections():
    cfg = small_cfg()
    assert h.ExperimentConfig.from_json(json.dumps(cfg.to_dict())) == cfg
    with pytest.raises(h.ConfigError):
        h.ExperimentConfig.from_dict({"horizon": 10, "bogus": 1})
    with pytest.raises(h.ConfigError):
        h.ExperimentConfig.from_dict({"problem": {"dd": 3}})
    with pytest.raises(h.ConfigError):
        h.ExperimentConfig.from_json("[1, 2]")
    with pytest.raises(h.ConfigError):
        h.ExperimentConfig.from_json("{")
    for bad in ({"algorithm.kind": "nope"}, {"quantizer.eta0": 0.0}, {"phase1_horizon": 150},
                {"sigma.rule": "absolute"}, {"eps": ()}, {"quantizer.mode": "x"}):
        with pytest.raises(h.ConfigError):
            small_cfg(**bad)


def test_sigma_and_omega_rules():
    assert h.pick_sigma(h.SigmaConfig(), 0.8) == pytest.approx(0.802)
    with pytest.raises(h.ConfigError):
        h.pick_sigma(h.SigmaConfig("absolute", value=0.7), 0.8)
    with pytest.raises(h.ConfigError):
        h.pick_sigma(h.SigmaConfig("absolute", value=1.0), 0.8)
    assert h.pick_omega(h.QuantizerConfig(), 0.2) == pytest.approx(0.1)
    with pytest.raises(h.ConfigError):
        h.pick_omega(h.QuantizerConfig(omega_rule="absolute", omega=0.3), 0.2)


@pytest.fixture(scope="module")
def setup():
    return h.prepare(small_cfg())


def test_phase_one(setup):
    assert 0 < setup.lam_hat < 1
    assert setup.residual <= 1e-9
    assert setup.table_lambda == pytest.approx(alg.table2_rate(alg.PROX_NIDS, 10.0, setup.spec.meta["rho2"]))


def test_identity_quantizer_matches_unquantized(setup):
    rec = h.run_quantized(setup, quantizer=IdentityQuantizer())
    ref = h.unquantized_record(setup)
    assert rec.same_series(ref)


def test_quantized_run_summary_and_bits(setup):
    rec = h.run_quantized(setup, keep_indices=True)
    s = rec.summary
    assert s["sigma"] == pytest.approx(0.99 * setup.lam_hat + 0.01)
    assert s["omega"] == pytest.approx(s["omega_bar"] / 2)
    t = s["targets"][repr(1e-8)]
    assert t["k_eps"] is not None and s["lam_hat_quantized"] <= s["sigma"] + 0.01
    assert np.all(np.diff(rec.cum_bits) >= 0) and np.all(rec.mse >= 0)
    # cumulative bits recomputed from the stored index streams
    S = setup.cfg.quantizer.S
    per_symbol = math.log2(S + 1)
    total = 0.0
    for k, idx in enumerate(rec.indices):
        total += sum(len(encode_stream(idx[i, r], S)) * per_symbol
                     for i in range(idx.shape[0]) for r in range(idx.shape[1]))
        assert rec.cum_bits[k] == pytest.approx(total, rel=1e-12)


def test_run_is_deterministic(tmp_path):
    cfg = small_cfg(horizon=150)
    a, b = h.run_experiment(cfg), h.run_experiment(cfg)
    h.emit_csv(a, tmp_path / "a.csv")
    h.emit_csv(b, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_probabilistic_repetitions_average(setup):
    cfg = small_cfg(**{"quantizer.mode": "probabilistic"}, repetitions=3, horizon=100)
    st = h.Setup(cfg, *[getattr(setup, f) for f in
                        ("problem", "spec", "x_star", "mse1", "lam_hat", "z_inf", "table_lambda", "residual")])
    rec = h.run_quantized(st)
    singles = [h.run_quantized(h.Setup(c, *[getattr(st, f) for f in
                ("problem", "spec", "x_star", "mse1", "lam_hat", "z_inf", "table_lambda", "residual")]))
               for c in (cfg.override(repetitions=1, seed=r) for r in range(3))]
    assert np.allclose(rec.mse, np.mean([r.mse for r in singles], axis=0), rtol=1e-12)


def test_stop_on_target_charges_the_hit_iteration(setup):
    full = h.run_quantized(setup)
    st = h.Setup(setup.cfg.override(stop_on_target=True), setup.problem, setup.spec, setup.x_star,
                 setup.mse1, setup.lam_hat, setup.z_inf, setup.table_lambda, setup.residual)
    short = h.run_quantized(st)
    k, c = h.comm_cost(full, 1e-8)
    assert len(short) == k + 1 and h.comm_cost(short, 1e-8) == (k, c)


def test_loglog_slope():
    assert h.loglog_slope([20], [5.0]) is None
    assert h.loglog_slope([1, 2, 4], [3, 6, 12]) == pytest.approx(1.0)


def test_sweep_dimension_small():
    cfg = small_cfg(**{"problem.alpha": 1e-4})
    rows, slope = h.sweep_dimension(cfg, [4])
    assert slope is None and rows[0]["C_cm"] is not None
    rows, slope = h.sweep_dimension(cfg, [4, 8])
    assert rows[1]["C_cm"] > rows[0]["C_cm"] and slope is not None
    with pytest.raises(h.ConfigError):
        h.sweep_dimension(cfg.override(**{"problem.kappa_target": None}), [4])


def test_sweeps_rows(setup):
    rows = h.sweep_omega(setup.cfg, (0.0, 0.5), setup=setup, workers=2)
    assert [r["omega_frac"] for r in rows] == [0.0, 0.5]
    assert all(r["C_cm"] is not None for r in rows)
    lam = setup.lam_hat
    rows = h.sweep_sigma(setup.cfg, [lam + 0.5 * (1 - lam)], setup=setup)
    assert rows[0]["k_eps"] is not None


def write_cfg(tmp_path, **over):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(small_cfg(**over).to_dict()))
    return str(path)


def test_cli_exit_codes(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", write_cfg(tmp_path), "--out-dir", str(out)]) == 0
    assert (out / "run.csv").read_text().startswith(h.CSV_HEADER)
    assert json.loads((out / "summary.json").read_text())["targets"]
    assert main(["run", write_cfg(tmp_path, horizon=20), "--out-dir", str(out)]) == 3
    bad = tmp_path / "bad.json"
    bad.write_text('{"horizon": 10, "typo": 1}')
    assert main(["run", str(bad)]) == 2
    assert main(["run", str(tmp_path / "missing.json")]) == 2
    assert main(["run", write_cfg(tmp_path), "--algo", "nope"]) == 2
    assert main(["run", write_cfg(tmp_path), "--sigma", "0.1", "--out-dir", str(out)]) == 2


def test_cli_codec_and_rate(tmp_path, capsys):
    assert main(["codec-inspect", "3.2", "--eta", "1", "--S", "2"]) == 0
    line = json.loads(capsys.readouterr().out.strip())
    assert line["index"] == 2 and line["symbols"] == [2, 1, 0]  # block 2 is -3, -2, 2, 3
    rec = synthetic(K=200)
    rec.mse[:] = 0.9 ** (2 * np.arange(200.0))
    h.emit_csv(rec, tmp_path / "r.csv")
    assert main(["rate-estimate", "--csv", str(tmp_path / "r.csv")]) == 0
    assert json.loads(capsys.readouterr().out)["lam_hat"] == pytest.approx(0.9)
