"""
行列プリミティブ - 薄いSVD、Procrustes整列、ブロック射影、スペクトルノルム
行列はすべて numpy の行優先 (C順序) 2次元配列で扱う
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

from src.errors import ConvergenceError, ShapeMismatchError

logger = logging.getLogger(__name__)

DEFAULT_RANK_TOL = 1e-6


def as_matrix(X, name: str = "X") -> np.ndarray:
    """2次元の有限な float64 配列に変換"""
    A = np.asarray(X, dtype=np.float64)
    if A.ndim != 2:
        raise ShapeMismatchError(f"{name} は2次元行列である必要があります (ndim={A.ndim})")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} に NaN/Inf が含まれています")
    return A


@dataclass(frozen=True)
class SvdResult:
    """X = left @ diag(singulars) @ right.T"""

    left: np.ndarray
    singulars: np.ndarray
    right: np.ndarray
    tol: float = DEFAULT_RANK_TOL

    @property
    def rank(self) -> int:
        return rank_from_singulars(self.singulars, self.tol)

    def truncate(self, k: int) -> "SvdResult":
        return SvdResult(self.left[:, :k], self.singulars[:k], self.right[:, :k], self.tol)

    def reconstruct(self) -> np.ndarray:
        return (self.left * self.singulars) @ self.right.T


def rank_from_singulars(s: np.ndarray, tol: float = DEFAULT_RANK_TOL) -> int:
    if s.size == 0 or s[0] <= 0.0:
        return 0
    return int(np.count_nonzero(s > tol * s[0]))


def thin_svd(X, tol: float = DEFAULT_RANK_TOL) -> SvdResult:
    """
    薄いSVD。各左特異ベクトルの絶対値最大成分が正になるよう符号を正規化する。
    gesdd が収束しない場合は gesvd で再試行する。
    """
    A = as_matrix(X)
    attempts = 0
    for driver in ("gesdd", "gesvd"):
        attempts += 1
        try:
            P, s, Qt = scipy.linalg.svd(A, full_matrices=False, lapack_driver=driver)
            break
        except np.linalg.LinAlgError as e:
            logger.warning("SVD (%s) が収束しませんでした: %s", driver, e)
    else:
        raise ConvergenceError(f"SVD が収束しませんでした (shape={A.shape})", iterations=attempts)

    Q = Qt.T
    if P.shape[1] > 0:
        idx = np.argmax(np.abs(P), axis=0)
        signs = np.sign(P[idx, np.arange(P.shape[1])])
        signs[signs == 0] = 1.0
        P = P * signs
        Q = Q * signs
    return SvdResult(P, s, Q, tol)


def numerical_rank(X, tol: float = DEFAULT_RANK_TOL) -> int:
    A = as_matrix(X)
    if A.size == 0:
        return 0
    s = scipy.linalg.svdvals(A)
    return rank_from_singulars(s, tol)


@dataclass(frozen=True)
class ProcrustesResult:
    rotation: np.ndarray
    distance: float


def procrustes(A, B) -> ProcrustesResult:
    """
    直交Procrustes: min_R ||A - B R||_F (R は鏡映を含む直交行列)
    B^T A = P diag(s) Q^T に対し R* = P Q^T
    """
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    if A.shape != B.shape:
        raise ShapeMismatchError(f"Procrustes の入力形状が一致しません: {A.shape} vs {B.shape}")
    P, _, Qt = scipy.linalg.svd(B.T @ A, full_matrices=False)
    R = P @ Qt
    return ProcrustesResult(R, float(np.linalg.norm(A - B @ R)))


def _check_split(A: np.ndarray, n: int) -> None:
    if A.shape[0] != A.shape[1]:
        raise ShapeMismatchError(f"正方行列が必要です: {A.shape}")
    if not 0 <= n <= A.shape[0]:
        raise ValueError(f"分割点 n={n} が範囲外です (size={A.shape[0]})")


def p_on(A, n: int) -> np.ndarray:
    """対角ブロック A11, A22 を残す射影"""
    A = as_matrix(A, "A")
    _check_split(A, n)
    out = np.zeros_like(A)
    out[:n, :n] = A[:n, :n]
    out[n:, n:] = A[n:, n:]
    return out


def p_off(A, n: int) -> np.ndarray:
    """非対角ブロックを残す射影"""
    A = as_matrix(A, "A")
    _check_split(A, n)
    out = np.zeros_like(A)
    out[:n, n:] = A[:n, n:]
    out[n:, :n] = A[n:, :n]
    return out


def spectral_norm(
    X, tol: float = 1e-12, max_iter: int = 10000, seed: int = 0, matvec=None, rmatvec=None,
    shape: Optional[tuple] = None,
) -> float:
    """
    X^T X のべき乗法による最大特異値。
    |Δσ| <= tol·σ での停止は経験則で、相対精度の保証ではない。
    max_iter に達したときは ARPACK (svds) で σ₁ を求め直す。
    matvec/rmatvec を渡すと行列を陽に持たない線形写像にも使える。
    """
    if matvec is None:
        A = as_matrix(X)
        if A.size == 0 or not np.any(A):
            return 0.0
        matvec, rmatvec, shape = A.__matmul__, A.T.__matmul__, A.shape

    rng = np.random.default_rng(seed)
    v = rng.standard_normal(shape[1])
    v /= np.linalg.norm(v)
    sigma = 0.0
    for it in range(1, max_iter + 1):
        w = rmatvec(matvec(v))
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        new_sigma = float(np.linalg.norm(matvec(v)))
        if abs(new_sigma - sigma) <= tol * new_sigma:
            return new_sigma
        sigma = new_sigma
    logger.debug("べき乗法が %d 反復で打ち切られました (sigma=%.6g)。svds で求め直します", max_iter, sigma)
    if min(shape) < 2:
        return sigma
    op = scipy.sparse.linalg.LinearOperator(shape, matvec=matvec, rmatvec=rmatvec, dtype=np.float64)
    v0 = rng.standard_normal(min(shape))
    s = scipy.sparse.linalg.svds(op, k=1, v0=v0, return_singular_vectors=False)
    return float(s[0])
