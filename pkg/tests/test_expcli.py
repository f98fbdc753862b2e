"""
expcli のテスト - 設定の検証とハッシュ、λ 規則、シード、出力、各実験
"""

import json

import numpy as np
import pandas as pd
import pytest

from src.errors import ConfigError, ShapeMismatchError
from src.expcli.config import (
    canonical_hash,
    config_from_dict,
    default_config,
    load_config,
    resolve_lambda,
)
from src.expcli.experiments import (
    SWEEP_COLUMNS,
    TRIAL_COLUMNS,
    fit_linear_rate,
    rmse,
    run_convergence,
    run_counterexample,
    run_rmse_sweep,
    trial_seeds,
)
from src.expcli.verify import run_verify
from src.expcli.writer import OutputWriter, emit_plot_data, read_plot_data
from src.sampling.instance import NoiseSpec, OperatorSpec, generate_instance, noise_adjoint_norm
from src.settings import load_settings
from src.solvers.trace import SolverTrace, TraceRecord, read_csv_meta
from src.test_data import DEFAULT_CONFIGS, TINY_CONVERGENCE_CONFIG, TINY_SWEEP_CONFIG

# 監査一式を数秒で回せる大きさに縮めた verify 設定
TINY_VERIFY_CONFIG = {
    "kind": "verify",
    "n": 16,
    "m": 16,
    "r_star": 2,
    "r": 2,
    "verify": {
        "diagonal": {"n": 8},
        "oracle": {"n": 12, "r": 3},
        "kl": {"n": 12, "samples": 30},
        "equivalence": {"n": 12, "m": 12, "r_star": 2, "r": 6, "p": 300, "epsilon": 1e-7},
        "calmness": {"samples": 20},
        "noise_rate": {"p_small": 100, "p_large": 400},
        "lemma21_samples": 20,
    },
    "counterexample": {"k_max": 50},
}


# ---- 設定 ----

@pytest.mark.parametrize("kind", sorted(DEFAULT_CONFIGS))
def test_default_configs_validate(kind):
    config = default_config(kind)
    assert config.kind == kind
    assert len(config.config_hash()) == 64


def test_partial_config_is_merged_with_defaults():
    config = config_from_dict({"kind": "rmse-sweep", "trials": 2, "aal": {"epsilon": 1e-4}})
    assert config.trials == 2
    assert config.n == 60
    assert config.aal["epsilon"] == 1e-4
    assert config.aal["schedule"] == "nesterov"
    assert config.aal_config().epsilon == 1e-4


def test_config_hash_tracks_content():
    a = config_from_dict(TINY_SWEEP_CONFIG)
    b = config_from_dict(dict(TINY_SWEEP_CONFIG))
    c = config_from_dict(TINY_SWEEP_CONFIG, seed=99)
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != c.config_hash()
    assert c.seed == 99
    assert canonical_hash({"a": 1, "b": 2}) == canonical_hash({"b": 2, "a": 1})
    assert a.meta()["seed"] == "3"


@pytest.mark.parametrize("raw", [
    {"kind": "rmse-sweep", "n": -1},
    {"kind": "rmse-sweep", "bogus": 1},
    {"kind": "rmse-sweep", "operator": {"kind": "sparse"}},
    {"kind": "rmse-sweep", "lambda_rule": {"kind": "nu-times-noise", "grid": []}},
    {"kind": "counterexample", "counterexample": {"k_max": 5}},
    {"kind": "bogus"},
    {},
])
def test_invalid_configs_are_rejected(raw):
    with pytest.raises(ConfigError):
        config_from_dict(raw)


def test_schema_errors_name_the_path():
    with pytest.raises(ConfigError) as excinfo:
        config_from_dict({"kind": "rmse-sweep", "n": 0, "noise": {"ratio": -1}})
    message = str(excinfo.value)
    assert "n:" in message
    assert "noise/ratio" in message


def test_unknown_solver_option_is_a_config_error():
    config = config_from_dict({"kind": "rmse-sweep", "aal": {"momentum": 0.5}})
    with pytest.raises(ConfigError):
        config.aal_config()


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(bad)
    listed = tmp_path / "list.json"
    listed.write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(listed)
    good = tmp_path / "good.json"
    good.write_text(json.dumps(TINY_SWEEP_CONFIG), encoding="utf-8")
    assert load_config(good, seed=5).seed == 5


def test_settings_from_environment(monkeypatch, tmp_path):
    monkeypatch.setenv("LOWRANK_WORKERS", "3")
    monkeypatch.setenv("LOWRANK_LOG_LEVEL", "debug")
    settings = load_settings(str(tmp_path / "none.env"))
    assert settings.workers == 3
    assert settings.log_level == "DEBUG"
    monkeypatch.setenv("LOWRANK_WORKERS", "many")
    with pytest.raises(ConfigError):
        load_settings(str(tmp_path / "none.env"))


# ---- λ 規則 ----

def test_lambda_rules(full_instance):
    inst = full_instance
    assert resolve_lambda({"kind": "absolute"}, inst, 0.7) == 0.7
    assert resolve_lambda({"kind": "nu-times-noise"}, inst, 2.0) == pytest.approx(2.0 * noise_adjoint_norm(inst))
    s = np.linalg.svd(inst.observed_matrix(), compute_uv=False)
    assert resolve_lambda({"kind": "fraction-of-sigma"}, inst, 0.5) == pytest.approx(0.5 * s[1])
    assert resolve_lambda({"kind": "fraction-of-sigma", "index": 1}, inst, 0.5) == pytest.approx(0.5 * s[0])
    with pytest.raises(ConfigError):
        resolve_lambda({"kind": "fraction-of-sigma", "index": 50}, inst, 0.5)


def test_nu_times_noise_needs_noise():
    inst = generate_instance(8, 8, 2, OperatorSpec(kind="full"), NoiseSpec(), seed=0)
    with pytest.raises(ConfigError):
        resolve_lambda({"kind": "nu-times-noise"}, inst, 1.0)


# ---- 補助関数 ----

def test_trial_seeds_are_prefix_consistent():
    assert trial_seeds(0, 5)[:3] == trial_seeds(0, 3)
    assert len(set(trial_seeds(0, 5))) == 5
    assert trial_seeds(1, 3) != trial_seeds(0, 3)


def test_rmse():
    M = np.eye(3)
    assert rmse(M, M) == 0.0
    assert rmse(np.zeros((3, 3)), M) == pytest.approx(1.0)
    with pytest.raises(ShapeMismatchError):
        rmse(np.zeros((2, 3)), M)
    with pytest.raises(ValueError):
        rmse(M, np.zeros((3, 3)))


def test_fit_linear_rate_recovers_slope():
    trace = SolverTrace("aal")
    for k in range(1, 40):
        trace.append(TraceRecord(k, 0.0, 0.0, 0.0, dist_to_final=10.0 ** (-0.25 * k)))
    fit = fit_linear_rate(trace)
    assert fit.slope == pytest.approx(-0.25)
    assert fit.r_squared == pytest.approx(1.0)
    assert fit.reliable
    short = fit_linear_rate(trace, window=(1e-2, 1e-1))
    assert short.points < 10
    assert not short.reliable


def test_writer_embeds_meta(tmp_path):
    writer = OutputWriter(tmp_path / "out", {"config_hash": "h", "version": "v"})
    path = writer.write_json("x.json", {"value": float("nan"), "arr": np.arange(2), "meta": {"extra": 1}})
    data = json.loads(path.read_text(encoding="utf-8"))
    assert data["value"] is None
    assert data["arr"] == [0, 1]
    assert data["meta"] == {"config_hash": "h", "version": "v", "extra": 1}
    csv = writer.write_frame("x.csv", pd.DataFrame({"a": [0.1, 1.0 / 3.0]}))
    assert read_csv_meta(csv) == {"config_hash": "h", "version": "v"}
    assert read_plot_data(csv)["a"].tolist() == [0.1, 1.0 / 3.0]
    with pytest.raises(TypeError):
        emit_plot_data(object(), tmp_path / "y.csv")


# ---- 実験 ----

def test_rmse_sweep_is_deterministic_across_workers(tmp_path):
    config = config_from_dict(TINY_SWEEP_CONFIG)
    serial = run_rmse_sweep(config, OutputWriter(tmp_path / "a", config.meta()), workers=1)
    parallel = run_rmse_sweep(config, OutputWriter(tmp_path / "b", config.meta()), workers=2)
    pd.testing.assert_frame_equal(serial.to_frame(), parallel.to_frame())
    assert not serial.failures

    df = serial.to_frame()
    assert list(df.columns) == SWEEP_COLUMNS
    assert df["nu"].tolist() == [0.5, 1.0]
    assert (df["trials"] == 2).all()
    assert list(serial.trials_frame().columns) == TRIAL_COLUMNS
    # 同じインスタンス列なので λ は ν に比例する
    assert df["lam"].iloc[1] == pytest.approx(2.0 * df["lam"].iloc[0])

    for name in ("sweep.csv", "sweep_trials.csv", "sweep_plot.csv"):
        meta = read_csv_meta(tmp_path / "a" / name)
        assert meta["config_hash"] == config.config_hash()
        assert meta["kind"] == "rmse-sweep"


def test_convergence_experiment(tmp_path):
    config = config_from_dict(TINY_CONVERGENCE_CONFIG)
    result = run_convergence(config, OutputWriter(tmp_path, config.meta()))
    assert result.solve.converged
    assert result.fit.slope < 0
    dist = result.trace.column("dist_to_final")
    assert dist[-1] == pytest.approx(0.0, abs=1e-12)
    fit = json.loads((tmp_path / "convergence_fit.json").read_text(encoding="utf-8"))
    assert fit["meta"]["config_hash"] == config.config_hash()
    plot = read_plot_data(tmp_path / "convergence_plot.csv")
    assert list(plot.columns) == ["iter", "dist_to_final", "log10_dist"]
    assert len(plot) == result.solve.iterations


def test_convergence_requires_full_observation():
    raw = dict(TINY_CONVERGENCE_CONFIG, operator={"kind": "gaussian", "p": 100})
    with pytest.raises(ConfigError):
        run_convergence(config_from_dict(raw))


def test_experiment_kind_is_checked():
    with pytest.raises(ConfigError):
        run_rmse_sweep(config_from_dict(TINY_CONVERGENCE_CONFIG))


def test_counterexample_experiment(tmp_path):
    config = default_config("counterexample")
    result, report = run_counterexample(config, OutputWriter(tmp_path, config.meta()))
    assert len(result.points) == 200
    assert report.counts()["fail"] == 0
    df = read_plot_data(tmp_path / "counterexample.csv")
    assert list(df.columns) == ["k", "gap", "grad_sq", "ratio"]
    assert len(df) == 200
    data = json.loads((tmp_path / "counterexample_report.json").read_text(encoding="utf-8"))
    assert data["meta"]["kind"] == "counterexample"


def test_verify_small(tmp_path):
    config = config_from_dict(TINY_VERIFY_CONFIG)
    report = run_verify(config, OutputWriter(tmp_path, config.meta()))
    ids = set(report.ids())
    for cid in (
        "balance.balance", "diag-critical.critical-set", "fullobs.oracle-value", "lemma31", "lemma32.identity",
        "error-bound.product-vs-gram", "kl.probe[lam=2]", "counterexample.kl-probe",
        "counterexample.ratio-limit", "equivalence.objective-gap", "lemma21", "noise-rate",
        "calmness.counterexample", "calmness.threshold",
    ):
        assert cid in ids, cid
    for cid in ("balance.balance", "lemma21", "counterexample.base-value", "kl.probe[lam=2]"):
        assert report.get(cid).verdict == "pass", cid
    assert report.get("counterexample.kl-probe").verdict == "info"

    data = json.loads((tmp_path / "verify_report.json").read_text(encoding="utf-8"))
    assert data["meta"]["config_hash"] == config.config_hash()
    assert data["meta"]["spectrum_method"] == "exact-full-observation"
    assert sum(data["summary"].values()) == len(data["checks"])


@pytest.mark.slow
def test_verify_default_config(tmp_path):
    config = default_config("verify").with_output_dir(tmp_path)
    report = run_verify(config, OutputWriter(config.output_dir, config.meta()))
    for cid in ("kl.probe[lam=8]", "kl.probe[lam=5]", "kl.probe[lam=2]"):
        assert report.get(cid).verdict == "pass", cid
    assert report.get("fullobs.oracle-value").verdict == "pass"
    assert report.get("fullobs.oracle-product").verdict == "pass"


@pytest.mark.slow
def test_rmse_sweep_default_scale(tmp_path):
    config = config_from_dict({"kind": "rmse-sweep", "trials": 2, "output_dir": str(tmp_path)})
    df = run_rmse_sweep(config, OutputWriter(tmp_path, config.meta())).to_frame()
    # r = 3r* の因子分解は核ノルム解と同程度の誤差に収まる
    assert (df["aal_rmse"] <= 1.5 * df["apg_rmse"] + 1e-3).all()
