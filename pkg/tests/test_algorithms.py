import math

import numpy as np
import pytest

from anqopt import algorithms as alg
from anqopt.blackbox import fixed_point, init_state, step_quantized, step_unquantized
from anqopt.graph import shift_spectrum
from anqopt.problems import reference_solution
from anqopt.quantizer import AnqParams, AnqQuantizer

from conftest import desk_ls

PROX = [alg.PROX_EXTRA, alg.PROX_NIDS, alg.PROX_NEXT, alg.PROX_DIGING]


def test_table2_rate_closed_forms():
    assert alg.table2_rate(alg.GD_STAR, 10) == pytest.approx(9 / 11)
    assert alg.table2_rate(alg.PROX_EXTRA, 10, 0.5) == pytest.approx(10 / 11)
    assert alg.table2_rate(alg.PROX_EXTRA, 10, 0.99) == pytest.approx(math.sqrt(0.99))
    assert alg.table2_rate(alg.NIDS, 4, 0.1) == pytest.approx(math.sqrt(0.75))
    assert alg.table2_rate(alg.PROX_NEXT, 10, 0.5) == pytest.approx(math.sqrt(0.75))
    assert alg.table2_rate(alg.PRIMAL_DUAL, 10, rho1_L=2.0, rho_m1_L=1.0) == pytest.approx(1.9 / 2.1)
    assert alg.table2_rate(alg.NEXT, 10) is None
    with pytest.raises(ValueError):
        alg.table2_rate("nope", 10)


def test_default_nu():
    assert alg.default_nu(alg.PROX_EXTRA, 10) == pytest.approx(10 / 11)
    assert alg.default_nu(alg.PROX_DIGING, 10) == pytest.approx(math.sqrt(10 / 11))
    assert alg.default_nu(alg.PROX_NIDS, 10) == 0.001
    assert alg.default_nu(alg.GD_STAR, 10) is None


@pytest.mark.parametrize("kind", alg.ALL_KINDS)
def test_fixed_point_primal_is_optimum(net5, kind):
    _, Wt, Lap = net5
    p = desk_ls()
    spec = alg.build(kind, p, Wt, Lap)
    X = spec.primal(fixed_point(spec))
    xs = reference_solution(p)
    assert np.allclose(X, np.tile(xs, (p.m, 1)), atol=1e-8)


@pytest.mark.parametrize("kind", PROX)
def test_prox_fixed_point_with_l1(net5, kind):
    _, Wt, Lap = net5
    p = desk_ls(alpha=0.05)
    spec = alg.build(kind, p, Wt, Lap)
    X = spec.primal(fixed_point(spec))
    assert np.allclose(X, np.tile(reference_solution(p), (p.m, 1)), atol=1e-8)


@pytest.mark.parametrize("kind", alg.SMOOTH_ONLY)
def test_smooth_only_kinds_reject_l1(net5, kind):
    _, Wt, Lap = net5
    with pytest.raises(ValueError):
        alg.build(kind, desk_ls(alpha=0.01), Wt, Lap)


@pytest.mark.parametrize("kind", alg.ALL_KINDS)
def test_default_rate_present(net5, kind):
    _, Wt, Lap = net5
    spec = alg.build(kind, desk_ls(), Wt, Lap)
    assert (spec.rate_lambda is None) == (kind == alg.NEXT)
    custom = alg.build(kind, desk_ls(), Wt, Lap, gamma=0.01).rate_lambda
    if kind == alg.GD_STAR:  # exact for any step: max |1 - gamma * eig|
        p = desk_ls()
        assert custom == pytest.approx(max(abs(1 - 0.01 * p.mu), abs(1 - 0.01 * p.L)))
    else:
        assert custom is None


def _tracking_gap(p, spec, Z):
    d = p.d
    return np.abs(Z[:, d:].sum(axis=0) - p.grad(Z[:, :d]).sum(axis=0)).max()


def test_next_tracking_invariant(net5):
    _, Wt, Lap = net5
    p = desk_ls()
    spec = alg.build(alg.NEXT, p, Wt, Lap)
    st = init_state(spec)
    q = AnqQuantizer(AnqParams(0.05, 0.1))
    st_q = init_state(spec)
    for k in range(100):
        st = step_unquantized(spec, st)
        st_q, _ = step_quantized(spec, st_q, q, 0.05 * 0.95**k)
        assert _tracking_gap(p, spec, st.z) <= 1e-12
        assert _tracking_gap(p, spec, st_q.z) <= 1e-12


@pytest.mark.parametrize("kind", PROX + [alg.PRIMAL_DUAL])
def test_dual_stays_feasible(net5, kind):
    _, Wt, Lap = net5
    p = desk_ls(alpha=0.01) if kind in PROX else desk_ls()
    spec = alg.build(kind, p, Wt, Lap)
    q = AnqQuantizer(AnqParams(0.05, 0.1))
    st = init_state(spec)
    d = p.d
    for k in range(60):
        st, _ = step_quantized(spec, st, q, 0.05 * 0.95**k)
        y = st.z if kind == alg.PRIMAL_DUAL else st.z[:, :d]
        assert np.abs(y.sum(axis=0)).max() <= 1e-10 * max(1.0, np.abs(y).max())


def test_nids_parameter_checks(net5):
    _, Wt, Lap = net5
    p = desk_ls()
    with pytest.raises(ValueError):
        alg.build_nids(p, Wt, gamma=0.1, c=-1.0)
    with pytest.raises(ValueError):
        alg.build_nids(p, Wt, gamma=1.0, c=10.0)
    spec = alg.build_nids(p, Wt)
    assert spec.meta["c"] == pytest.approx(1 / (2 * spec.meta["gamma"]))


def test_shift_applied_by_build(net5):
    _, Wt, Lap = net5
    p = desk_ls()
    spec = alg.build(alg.PROX_NIDS, p, Wt, Lap, nu=0.3)
    assert spec.meta["nu"] == 0.3
    ref = alg.build_prox_nids(p, shift_spectrum(Wt, 0.3))
    assert spec.meta["rho2"] == pytest.approx(ref.meta["rho2"])
    with pytest.raises(ValueError):
        alg.build("nope", p, Wt, Lap)


@pytest.mark.parametrize("kind", alg.ALL_KINDS)
def test_sampled_lipschitz_within_analytic(net5, kind):
    _, Wt, Lap = net5
    p = desk_ls(alpha=0.05) if kind in PROX else desk_ls()
    spec = alg.build(kind, p, Wt, Lap)
    emp = alg.certify_lipschitz(spec, pairs=500, seed=1)
    lp = spec.lipschitz
    for key in ("L_A", "L_C", "L_Z"):
        assert emp[key] <= getattr(lp, key) * (1 + 1e-6) + 1e-12, key
