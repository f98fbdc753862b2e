"""
objective のテスト - 勾配とヘッセの整合、Ξ 写像、差分評価、対角フレーム
"""

import numpy as np
import pytest

from src.errors import ShapeMismatchError
from src.matcore.factors import FactorPair
from src.objective.diagonal import DiagonalObjective, lemma21_check, phi_tilde
from src.objective.factored import (
    RegularizedObjective,
    dense_hessian,
    min_eig_hessian,
    phi_gap,
    phi_grad,
    phi_hess_quadform,
    phi_value,
    rotate_frame,
    xi_matrix,
    xi_norm,
)
from src.objective.loss import LeastSquaresLoss
from src.theory.fullobs import global_set_fullobs


def _random_pair(rng, n, m, r, scale=1.0):
    return FactorPair(scale * rng.standard_normal((n, r)), scale * rng.standard_normal((m, r)))


def test_gradient_matches_finite_differences(gaussian_instance, rng):
    obj = RegularizedObjective(LeastSquaresLoss.from_instance(gaussian_instance), 0.3, 3)
    fp = _random_pair(rng, 10, 10, 3)
    d = _random_pair(rng, 10, 10, 3)
    h = 1e-6
    numeric = (phi_value(obj, fp + d.scaled(h)) - phi_value(obj, fp - d.scaled(h))) / (2 * h)
    assert phi_grad(obj, fp).inner(d) == pytest.approx(numeric, rel=1e-5)


def test_hessian_quadform_matches_dense_matrix(gaussian_instance, rng):
    obj = RegularizedObjective(LeastSquaresLoss.from_instance(gaussian_instance), 0.3, 2)
    fp = _random_pair(rng, 10, 10, 2)
    d = _random_pair(rng, 10, 10, 2)
    H = dense_hessian(obj, fp)
    x = np.concatenate([d.U.ravel(), d.V.ravel()])
    assert phi_hess_quadform(obj, fp, d) == pytest.approx(x @ H @ x, rel=1e-9)


def test_xi_norm_is_spectral_norm(gaussian_instance, rng):
    loss = LeastSquaresLoss.from_instance(gaussian_instance)
    X = rng.standard_normal((10, 10))
    assert xi_norm(loss, X, 0.7) == pytest.approx(np.linalg.norm(xi_matrix(loss, X, 0.7), 2), rel=1e-10)


def test_phi_gap_agrees_with_value_difference(gaussian_instance, rng):
    obj = RegularizedObjective(LeastSquaresLoss.from_instance(gaussian_instance), 0.3, 2)
    base = _random_pair(rng, 10, 10, 2)
    fp = base + _random_pair(rng, 10, 10, 2, scale=0.1)
    assert phi_gap(obj, fp, base) == pytest.approx(phi_value(obj, fp) - phi_value(obj, base), rel=1e-9)


def test_objective_rejects_bad_parameters(gaussian_instance):
    loss = LeastSquaresLoss.from_instance(gaussian_instance)
    with pytest.raises(ValueError):
        RegularizedObjective(loss, 0.0, 2)
    with pytest.raises(ValueError):
        RegularizedObjective(loss, 1.0, 0)
    with pytest.raises(ShapeMismatchError):
        RegularizedObjective(loss, 1.0, 2).check(FactorPair.zeros(9, 10, 2))
    with pytest.raises(ShapeMismatchError):
        LeastSquaresLoss(gaussian_instance.operator, np.zeros(3))


def test_hessian_is_psd_at_global_minimum(diag_small):
    fp, _ = global_set_fullobs(diag_small.sigma_matrix(), diag_small.r, diag_small.lam)
    probe = min_eig_hessian(diag_small.as_objective(), fp)
    assert probe.method == "dense"
    assert probe.psd


def test_hessian_has_negative_direction_at_origin(diag_small):
    # 原点では -σ₁ + λ < 0 の方向がある
    probe = min_eig_hessian(diag_small.as_objective(), FactorPair.zeros(10, 10, 3))
    assert probe.value == pytest.approx(diag_small.lam - diag_small.sigma(1), rel=1e-8)
    assert not probe.psd


def test_diagonal_objective_accessors(diag_small):
    assert diag_small.sigma(1) == 5.0
    assert diag_small.sigma(10) == 0.0
    assert diag_small.sigma(11) == 0.0
    assert diag_small.distinct_top() == [5.0, 4.0, 3.0]
    assert DiagonalObjective(np.array([2.0, 2.0, 1.0]), 3, 3, 0.5, 3).distinct_top() == [2.0, 1.0]
    with pytest.raises(ValueError):
        DiagonalObjective(np.array([1.0, 2.0]), 2, 2, 0.5, 1)
    with pytest.raises(ValueError):
        DiagonalObjective(np.ones(4), 3, 3, 0.5, 1)


def test_rotated_frame_preserves_objective(rng):
    M = rng.standard_normal((6, 6))
    dobj, P, Q = DiagonalObjective.from_matrix(M, 0.5, 2)
    op_obj = RegularizedObjective(
        LeastSquaresLoss(dobj.as_objective().loss.operator, M.ravel()), 0.5, 2,
    )
    fp = _random_pair(rng, 6, 6, 2)
    diag_fp = rotate_frame(fp, P, Q, "to-diagonal")
    assert phi_tilde(dobj, diag_fp) == pytest.approx(phi_value(op_obj, fp), rel=1e-10)
    back = rotate_frame(diag_fp, P, Q, "from-diagonal")
    np.testing.assert_allclose(back.U, fp.U, atol=1e-12)


def test_lemma21_check_is_tight_for_full_observation(rng):
    dobj = DiagonalObjective(np.array([1.0]), 4, 4, 0.5, 1)
    loss = dobj.as_objective().loss
    X, Y, Z = (rng.standard_normal((4, 4)) for _ in range(3))
    lhs, rhs = lemma21_check(loss, 1.0, 1.0, X, Y, Z)
    assert lhs == pytest.approx(0.0, abs=1e-12)
    assert rhs == 0.0
