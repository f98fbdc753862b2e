"""
sampling のテスト - 作用素と随伴、インスタンス生成、ノイズ校正、保存、制限スペクトル
"""

import numpy as np
import pytest

from src.errors import ConfigError, MemoryCapError, RankConstraintError
from src.sampling.instance import (
    NoiseSpec,
    OperatorSpec,
    check_rank_budget,
    generate_instance,
    load_instance,
    noise_adjoint_norm,
    save_instance,
)
from src.sampling.operators import (
    make_bernoulli_mask,
    make_full_observation,
    make_gaussian_sensing,
    make_weighted_hadamard,
)
from src.sampling.spectrum import SpectrumEstimate, estimate_restricted_spectrum


@pytest.mark.parametrize("build", [
    lambda: make_gaussian_sensing(6, 5, 40, seed=0),
    lambda: make_full_observation(6, 5),
    lambda: make_weighted_hadamard(np.linspace(0.5, 2.0, 30).reshape(6, 5)),
    lambda: make_bernoulli_mask(6, 5, 0.6, seed=0),
])
def test_adjoint_identity(build, rng):
    op = build()
    X = rng.standard_normal((6, 5))
    v = rng.standard_normal(op.p)
    assert np.dot(op.apply(X), v) == pytest.approx(np.vdot(X, op.adjoint(v)), rel=1e-10, abs=1e-10)


def test_loss_scales():
    assert make_full_observation(3, 3).scale == 0.5
    assert make_gaussian_sensing(3, 3, 10, seed=0).scale == pytest.approx(0.05)
    assert make_gaussian_sensing(3, 3, 10, seed=0, loss_scale="unit").scale == 0.5
    with pytest.raises(ValueError):
        make_gaussian_sensing(3, 3, 10, seed=0, loss_scale="half")


def test_gaussian_sensing_respects_memory_cap():
    with pytest.raises(MemoryCapError):
        make_gaussian_sensing(10, 10, 100, seed=0, max_entries=1000)


def test_rank_budget():
    check_rank_budget(8, 9, 2)
    with pytest.raises(RankConstraintError):
        check_rank_budget(8, 9, 3)
    with pytest.raises(RankConstraintError):
        check_rank_budget(8, 9, 0)


def test_generate_instance_is_deterministic():
    spec = OperatorSpec(kind="gaussian", p=60)
    noise = NoiseSpec(calibration="absolute", sigma=0.1)
    a = generate_instance(8, 8, 2, spec, noise, seed=5)
    b = generate_instance(8, 8, 2, spec, noise, seed=5)
    c = generate_instance(8, 8, 2, spec, noise, seed=6)
    np.testing.assert_array_equal(a.y, b.y)
    np.testing.assert_array_equal(a.M_star, b.M_star)
    assert not np.array_equal(a.y, c.y)
    assert np.linalg.matrix_rank(a.M_star) == 2


def test_relative_noise_calibration(gaussian_instance):
    inst = gaussian_instance
    signal = inst.operator.apply(inst.M_star)
    assert np.linalg.norm(inst.omega) == pytest.approx(0.05 * np.linalg.norm(signal), rel=1e-12)
    np.testing.assert_allclose(inst.y, signal + inst.omega)


def test_relative_spectral_noise(full_instance):
    inst = full_instance
    E = inst.noise_matrix
    assert np.linalg.norm(E) == pytest.approx(0.1 * np.linalg.norm(inst.M_star, 2), rel=1e-12)
    np.testing.assert_allclose(inst.observed_matrix(), inst.M_star + E, atol=1e-12)


def test_noise_adjoint_norm_is_gradient_at_truth(gaussian_instance):
    inst = gaussian_instance
    op = inst.operator
    grad = 2.0 * op.scale * op.adjoint(op.apply(inst.M_star) - inst.y)
    assert noise_adjoint_norm(inst) == pytest.approx(np.linalg.norm(grad, 2), rel=1e-10)


def test_noiseless_instance_has_zero_noise_norm():
    inst = generate_instance(8, 8, 2, OperatorSpec(kind="full"), NoiseSpec(), seed=0)
    assert noise_adjoint_norm(inst) == 0.0


def test_save_and_load_instance(tmp_path, gaussian_instance):
    path = save_instance(gaussian_instance, tmp_path / "inst")
    loaded = load_instance(path)
    assert (loaded.n, loaded.m, loaded.p, loaded.r_star) == (10, 10, 150, 2)
    np.testing.assert_array_equal(loaded.y, gaussian_instance.y)
    X = np.ones((10, 10))
    np.testing.assert_array_equal(loaded.operator.apply(X), gaussian_instance.operator.apply(X))
    assert loaded.operator.scale == gaussian_instance.operator.scale
    assert loaded.noise_matrix is None


def test_saved_instance_keeps_noise_matrix(tmp_path, full_instance):
    path = save_instance(full_instance, tmp_path / "inst")
    loaded = load_instance(path)
    np.testing.assert_array_equal(loaded.noise_matrix, full_instance.noise_matrix)
    # E.txt がない古い保存形式でも全観測なら ω から復元できる
    (path / "E.txt").unlink()
    np.testing.assert_array_equal(load_instance(path).noise_matrix, full_instance.noise_matrix)


def test_operator_spec_validation():
    with pytest.raises(ConfigError):
        OperatorSpec(kind="gaussian")
    with pytest.raises(ConfigError):
        OperatorSpec(kind="sparse")
    with pytest.raises(ConfigError):
        NoiseSpec(calibration="snr")
    assert OperatorSpec.from_dict({"kind": "weighted", "weight_range": [0.5, 1.5]}).weight_range == (0.5, 1.5)


def test_exact_spectrum_for_full_and_weighted():
    est = estimate_restricted_spectrum(make_full_observation(5, 5), 2, 10, seed=0)
    assert (est.alpha, est.beta, est.exact) == (1.0, 1.0, True)
    H = np.full((4, 4), 2.0)
    H[0, 0] = 0.5
    est = estimate_restricted_spectrum(make_weighted_hadamard(H), 2, 10, seed=0)
    assert (est.alpha, est.beta) == (0.25, 4.0)


def test_monte_carlo_spectrum_is_prefix_consistent():
    op = make_gaussian_sensing(8, 8, 200, seed=1)
    short = estimate_restricted_spectrum(op, 2, 20, seed=3)
    long = estimate_restricted_spectrum(op, 2, 40, seed=3)
    assert not short.exact
    assert 0 < long.alpha <= short.alpha <= short.beta <= long.beta


def test_spectrum_estimate_validation_and_loss_units():
    with pytest.raises(ValueError):
        SpectrumEstimate(2.0, 1.0, 2, 10, "monte-carlo")
    est = SpectrumEstimate(0.8, 1.2, 2, 10, "monte-carlo").for_loss(0.5)
    assert (est.alpha, est.beta) == pytest.approx((0.8, 1.2))
    assert est.ratio == pytest.approx(1.5)
