"""
solvers のテスト - AAL の収束と停止、外挿係数、APG と SVT、反復履歴の CSV
"""

import math

import numpy as np
import pytest

from src.errors import ConfigError, ConvergenceError, NonFiniteIterateError
from src.matcore.linalg import numerical_rank
from src.objective.diagonal import DiagonalObjective
from src.objective.factored import RegularizedObjective, phi_value
from src.objective.loss import LeastSquaresLoss
from src.sampling.instance import noise_adjoint_norm
from src.solvers import aal as aal_module
from src.solvers import apg as apg_module
from src.solvers.aal import AalConfig, aal_solve, aal_step, auto_LF, init_spectral, nesterov_beta
from src.solvers.apg import ApgConfig, apg_nuclear, nuclear_norm, nuclear_objective, svt
from src.solvers.trace import TRACE_COLUMNS, SolverTrace, TraceRecord, read_csv, read_csv_meta


def _expected_product(dobj):
    X = np.zeros((dobj.n, dobj.m))
    z = np.maximum(dobj.top() - dobj.lam, 0.0)
    X[np.arange(z.size), np.arange(z.size)] = z
    return X


def test_aal_reaches_closed_form_solution(diag_small):
    obj = diag_small.as_objective()
    result = aal_solve(obj, None, AalConfig(epsilon=1e-10, max_iters=5000))
    assert result.converged
    np.testing.assert_allclose(result.fp.product(), _expected_product(diag_small), atol=1e-7)
    last = result.trace.records[-1]
    assert last.res1 <= 1e-10 and last.res2 <= 1e-10
    assert result.iterations == len(result.trace)


def test_aal_without_extrapolation_is_monotone(diag_small):
    result = aal_solve(diag_small.as_objective(), None, AalConfig(epsilon=1e-10))
    objs = result.trace.objectives()
    assert np.all(np.diff(objs) <= 1e-9 * (1.0 + np.abs(objs[:-1])))


def test_aal_nesterov_with_restart(diag_small):
    config = AalConfig(schedule="nesterov", L_ratio=1e4, restart="objective", epsilon=1e-10, max_iters=5000)
    result = aal_solve(diag_small.as_objective(), None, config)
    assert result.converged
    np.testing.assert_allclose(result.fp.product(), _expected_product(diag_small), atol=1e-7)


def test_aal_iteration_cap_returns_best_iterate(diag_small):
    result = aal_solve(diag_small.as_objective(), None, AalConfig(max_iters=3))
    assert result.stop_reason == "iteration-cap"
    assert not result.converged
    assert result.iterations == 3
    assert result.objective == pytest.approx(result.trace.objectives().min())


def test_aal_records_distance_to_reference(diag_small):
    obj = diag_small.as_objective()
    first = aal_solve(obj, None, AalConfig(record_trace=False))
    assert len(first.trace) == 0
    replay = aal_solve(obj, None, AalConfig(), reference=first.fp)
    dist = replay.trace.column("dist_to_final")
    assert np.all(np.isfinite(dist))
    assert dist[-1] == pytest.approx(0.0, abs=1e-12)
    assert np.all(replay.trace.column("time_ms") == 0.0)


def test_auto_lipschitz_and_fixed_step(diag_small):
    obj = diag_small.as_objective()
    start = init_spectral(obj.loss, 3)
    # 2·(2·½·||A||²)·max(||U⁰||², ||V⁰||²) = 2·1·σ₁
    assert auto_LF(obj, start) == pytest.approx(10.0)
    nxt = aal_step(obj, start, start, 0.0, 100.0)
    assert phi_value(obj, nxt) < phi_value(obj, start)


def test_nesterov_beta():
    beta, theta = nesterov_beta(1.0, 1.0)
    assert beta == 0.0
    assert theta == pytest.approx((1.0 + math.sqrt(5.0)) / 2.0)
    beta, _ = nesterov_beta(3.0, 2.0, cap=0.5)
    assert beta == 0.5
    with pytest.raises(ValueError):
        nesterov_beta(0.5, 1.0)


def test_aal_config_validation(diag_small):
    with pytest.raises(ConfigError):
        AalConfig(schedule="polyak")
    with pytest.raises(ConfigError):
        AalConfig(epsilon=0.0)
    with pytest.raises(ConfigError):
        AalConfig(L_ratio=0.5)
    with pytest.raises(ConfigError):
        AalConfig(L_F=2.0, L=1.0)
    # 固定 β は √(L/(L+L_F)) = √½ を超えられない
    with pytest.raises(ConfigError):
        aal_solve(diag_small.as_objective(), None, AalConfig(schedule="fixed", beta=0.9))


@pytest.mark.parametrize("backtrack", [True, False])
def test_aal_overflow_raises_with_iteration(backtrack):
    # L_F·U が倍精度を溢れる規模
    dobj = DiagonalObjective([1e300, 1e299, 1.0], 3, 3, 1.0, 2)
    with pytest.raises(NonFiniteIterateError) as excinfo:
        aal_solve(dobj.as_objective(), None, AalConfig(max_iters=50, backtrack=backtrack))
    assert excinfo.value.iteration == 1
    assert excinfo.value.solver == "AAL"


def test_aal_nan_block_update_names_iteration(diag_small, monkeypatch):
    calls = {"n": 0}
    original = aal_module._block_update

    def nan_after_two_iterations(tilde, block_grad, L_F, lam):
        calls["n"] += 1
        out = original(tilde, block_grad, L_F, lam)
        return np.full_like(out, np.nan) if calls["n"] > 4 else out

    monkeypatch.setattr(aal_module, "_block_update", nan_after_two_iterations)
    with pytest.raises(NonFiniteIterateError) as excinfo:
        aal_solve(diag_small.as_objective(), None, AalConfig(max_iters=20, backtrack=False))
    assert excinfo.value.iteration == 3


def test_aal_backtracking_gives_up_after_cap(diag_small, monkeypatch):
    monkeypatch.setattr(aal_module, "_majorizes", lambda *args: False)
    with pytest.raises(ConvergenceError) as excinfo:
        aal_solve(diag_small.as_objective(), None, AalConfig(max_iters=5))
    assert excinfo.value.iterations == 1


def test_svt_and_nuclear_norm():
    Z = np.diag([3.0, 1.0])
    np.testing.assert_allclose(svt(Z, 2.0), np.diag([1.0, 0.0]), atol=1e-12)
    assert nuclear_norm(Z) == pytest.approx(4.0)
    with pytest.raises(ValueError):
        svt(Z, -1.0)


def test_apg_full_observation_is_one_thresholding(diag_small):
    loss = diag_small.as_objective().loss
    result = apg_nuclear(loss, 1.0, ApgConfig(lam=1.0, epsilon=1e-10))
    assert result.converged
    np.testing.assert_allclose(result.X, _expected_product(diag_small), atol=1e-10)
    assert result.objective == pytest.approx(nuclear_objective(loss, 1.0, result.X))


def test_apg_backtracking_is_monotone(gaussian_instance):
    loss = LeastSquaresLoss.from_instance(gaussian_instance)
    lam = noise_adjoint_norm(gaussian_instance)
    result = apg_nuclear(loss, lam, ApgConfig(lam=lam, step="backtracking", epsilon=1e-7, max_iters=3000))
    objs = result.trace.objectives()
    assert np.all(np.diff(objs) <= 1e-9 * (1.0 + np.abs(objs[:-1])))


def test_apg_config_validation():
    with pytest.raises(ConfigError):
        ApgConfig(lam=0.0)
    with pytest.raises(ConfigError):
        ApgConfig(lam=1.0, step="armijo")


def test_apg_nan_thresholding_raises_at_first_iteration(diag_small, monkeypatch):
    monkeypatch.setattr(apg_module, "svt", lambda Z, tau: np.full_like(Z, np.nan))
    loss = diag_small.as_objective().loss
    with pytest.raises(NonFiniteIterateError) as excinfo:
        apg_nuclear(loss, 1.0, ApgConfig(lam=1.0))
    assert excinfo.value.iteration == 1
    assert excinfo.value.solver == "APG"


def test_apg_backtracking_gives_up_after_cap(diag_small, monkeypatch):
    loss = diag_small.as_objective().loss
    monkeypatch.setattr(type(loss), "value", lambda self, X: 0.0 if not np.any(X) else math.inf)
    with pytest.raises(ConvergenceError):
        apg_nuclear(loss, 1.0, ApgConfig(lam=1.0, step="backtracking"))


def test_aal_and_apg_reach_the_same_objective(gaussian_instance):
    loss = LeastSquaresLoss.from_instance(gaussian_instance)
    lam = noise_adjoint_norm(gaussian_instance)
    apg = apg_nuclear(loss, lam, ApgConfig(lam=lam, epsilon=1e-9, max_iters=20000))
    r = 6
    assert numerical_rank(apg.X) <= r
    obj = RegularizedObjective(loss, lam, r)
    config = AalConfig(schedule="nesterov", L_ratio=1e4, restart="objective", epsilon=1e-10, max_iters=20000)
    aal = aal_solve(obj, gaussian_instance, config)
    assert aal.objective == pytest.approx(apg.objective, rel=1e-3)


def test_trace_csv_embeds_meta(tmp_path):
    trace = SolverTrace("aal")
    trace.append(TraceRecord(1, 2.0, 0.1, 0.2))
    trace.append(TraceRecord(2, 1.5, 0.01, 0.02))
    with pytest.raises(ValueError):
        trace.append(TraceRecord(2, 1.0, 0.0, 0.0))
    path = trace.to_csv(tmp_path / "trace.csv", {"config_hash": "abc", "version": "0.3.0"})
    assert read_csv_meta(path) == {"config_hash": "abc", "version": "0.3.0"}
    df = read_csv(path)
    assert list(df.columns) == TRACE_COLUMNS
    assert df["obj"].tolist() == [2.0, 1.5]
    assert math.isnan(df["dist_to_final"].iloc[0])
