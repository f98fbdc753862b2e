"""
因子分解目的関数 Φ_λ(U, V) = f(UV^T) + (λ/2)(||U||_F² + ||V||_F²)
勾配、Ξ写像、行列を陽に作らないヘッセ二次形式と最小固有値プローブ
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh

from src.errors import ShapeMismatchError
from src.matcore.factors import FactorPair, stack
from src.objective.loss import SmoothLoss

logger = logging.getLogger(__name__)

# 密なヘッセ行列を組み立ててよい変数の総数
DENSE_LIMIT = 400
PSD_RTOL = 1e-6


@dataclass(frozen=True)
class RegularizedObjective:
    loss: SmoothLoss
    lam: float
    r: int

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError(f"λ は正である必要があります: {self.lam}")
        if self.r < 1:
            raise ValueError(f"因子ランク r は1以上である必要があります: {self.r}")

    def check(self, fp: FactorPair) -> None:
        if fp.n != self.loss.n or fp.m != self.loss.m:
            raise ShapeMismatchError(f"因子の形状 ({fp.n}, {fp.m}) が損失 ({self.loss.n}, {self.loss.m}) と一致しません")


def xi_matrix(loss: SmoothLoss, X: np.ndarray, lam: float) -> np.ndarray:
    """Ξ(X) = [[λI, ∇f(X)], [∇f(X)^T, λI]]"""
    G = loss.grad(X)
    n, m = G.shape
    return np.block([[lam * np.eye(n), G], [G.T, lam * np.eye(m)]])


def xi_norm(loss: SmoothLoss, X: np.ndarray, lam: float) -> float:
    # 固有値は λ ± σ_i(∇f(X)) と λ なので ||Ξ|| = λ + ||∇f(X)||
    G = loss.grad(X)
    return float(lam + (np.linalg.norm(G, 2) if G.size else 0.0))


def phi_value(obj: RegularizedObjective, fp: FactorPair) -> float:
    return obj.loss.value(fp.product()) + 0.5 * obj.lam * (np.sum(fp.U**2) + np.sum(fp.V**2))


def phi_grad(obj: RegularizedObjective, fp: FactorPair) -> FactorPair:
    G = obj.loss.grad(fp.product())
    return FactorPair(G @ fp.V + obj.lam * fp.U, G.T @ fp.U + obj.lam * fp.V)


def phi_grad_norm(obj: RegularizedObjective, fp: FactorPair) -> float:
    return phi_grad(obj, fp).norm()


def phi_hess_apply(obj: RegularizedObjective, fp: FactorPair, delta: FactorPair) -> FactorPair:
    """ヘッセ行列とベクトルの積 ∇²Φ_λ(U,V)[Δ]"""
    X = fp.product()
    G = obj.loss.grad(X)
    D = fp.U @ delta.V.T + delta.U @ fp.V.T
    HD = obj.loss.hess_apply(X, D)
    return FactorPair(
        G @ delta.V + HD @ fp.V + obj.lam * delta.U,
        G.T @ delta.U + HD.T @ fp.U + obj.lam * delta.V,
    )


def phi_hess_quadform(obj: RegularizedObjective, fp: FactorPair, delta: FactorPair) -> float:
    """∇²f(X)(UΔ_V^T + Δ_U V^T, 同) + 2<∇f(X), Δ_U Δ_V^T> + λ<Δ, Δ>"""
    X = fp.product()
    D = fp.U @ delta.V.T + delta.U @ fp.V.T
    G = obj.loss.grad(X)
    return (
        obj.loss.hess_quadform(X, D)
        + 2.0 * float(np.vdot(G, delta.U @ delta.V.T))
        + obj.lam * (np.sum(delta.U**2) + np.sum(delta.V**2))
    )


@dataclass(frozen=True)
class EigProbeResult:
    value: float
    vector: FactorPair
    converged: bool
    method: str
    threshold: float

    @property
    def psd(self) -> bool:
        return self.value >= self.threshold


def psd_threshold(obj: RegularizedObjective, fp: FactorPair) -> float:
    G = obj.loss.grad(fp.product())
    return -PSD_RTOL * (obj.lam + float(np.linalg.norm(G, 2)))


def dense_hessian(obj: RegularizedObjective, fp: FactorPair) -> np.ndarray:
    """テスト用の密なヘッセ行列 (変数の並びは vec(U) の後に vec(V))"""
    nU = fp.U.size
    dim = nU + fp.V.size
    H = np.empty((dim, dim))
    for j in range(dim):
        e = np.zeros(dim)
        e[j] = 1.0
        d = FactorPair(e[:nU].reshape(fp.U.shape), e[nU:].reshape(fp.V.shape))
        out = phi_hess_apply(obj, fp, d)
        H[:, j] = np.concatenate([out.U.ravel(), out.V.ravel()])
    return 0.5 * (H + H.T)


def min_eig_hessian(
    obj: RegularizedObjective, fp: FactorPair, tol: float = 1e-10, max_iter: Optional[int] = None,
) -> EigProbeResult:
    """
    ヘッセ二次形式の最小固有値。小規模では密な固有値分解、それ以外は Lanczos (eigsh)。
    反復上限に達した場合は最良推定値を converged=False で返す。
    """
    obj.check(fp)
    nU = fp.U.size
    dim = nU + fp.V.size
    threshold = psd_threshold(obj, fp)

    def unpack(x: np.ndarray) -> FactorPair:
        return FactorPair(x[:nU].reshape(fp.U.shape), x[nU:].reshape(fp.V.shape))

    if dim <= DENSE_LIMIT:
        w, vecs = scipy.linalg.eigh(dense_hessian(obj, fp))
        return EigProbeResult(float(w[0]), unpack(vecs[:, 0]), True, "dense", threshold)

    def matvec(x):
        out = phi_hess_apply(obj, fp, unpack(np.asarray(x).ravel()))
        return np.concatenate([out.U.ravel(), out.V.ravel()])

    op = LinearOperator((dim, dim), matvec=matvec, dtype=np.float64)
    v0 = np.random.default_rng(0).standard_normal(dim)
    maxiter = max_iter or 20 * dim
    ncv = min(dim - 1, 64)
    try:
        top = float(eigsh(op, k=1, which="LA", tol=1e-6, v0=v0, maxiter=maxiter, ncv=ncv, return_eigenvectors=False)[0])
    except ArpackNoConvergence as e:
        top = float(np.max(e.eigenvalues)) if len(e.eigenvalues) else float(np.linalg.norm(matvec(v0)) / np.linalg.norm(v0))
    # 0 付近の固有値は ARPACK の相対許容誤差では収束しないので H - cI の最小固有値を求める
    shift = 1.01 * abs(top) + 1e-12

    def shifted(x):
        return matvec(x) - shift * np.asarray(x).ravel()

    sop = LinearOperator((dim, dim), matvec=shifted, dtype=np.float64)
    try:
        w, vecs = eigsh(sop, k=1, which="SA", tol=tol, v0=v0, maxiter=maxiter, ncv=ncv)
        return EigProbeResult(float(w[0]) + shift, unpack(vecs[:, 0]), True, "lanczos", threshold)
    except ArpackNoConvergence as e:
        logger.warning("ヘッセ固有値プローブが収束しませんでした (maxiter=%d)", maxiter)
        if len(e.eigenvalues):
            j = int(np.argmin(e.eigenvalues))
            return EigProbeResult(float(e.eigenvalues[j]) + shift, unpack(e.eigenvectors[:, j]), False, "lanczos", threshold)
        return EigProbeResult(float("nan"), FactorPair.zeros(fp.n, fp.m, fp.r), False, "lanczos", threshold)


def _check_orthogonal(A: np.ndarray, name: str) -> None:
    if A.shape[0] != A.shape[1] or not np.allclose(A.T @ A, np.eye(A.shape[0]), atol=1e-10, rtol=0.0):
        raise ValueError(f"{name} は直交行列である必要があります")


def rotate_frame(fp: FactorPair, P: np.ndarray, Q: np.ndarray, direction: str = "to-diagonal") -> FactorPair:
    """(U, V) <-> (P^T U, Q^T V)。(P, Q) は M = P Σ Q^T の完全な特異ベクトル行列"""
    _check_orthogonal(P, "P")
    _check_orthogonal(Q, "Q")
    if direction == "to-diagonal":
        return FactorPair(P.T @ fp.U, Q.T @ fp.V)
    if direction == "from-diagonal":
        return FactorPair(P @ fp.U, Q @ fp.V)
    raise ValueError(f"direction は 'to-diagonal' か 'from-diagonal' です: {direction}")


def stacked_gradient(obj: RegularizedObjective, fp: FactorPair) -> np.ndarray:
    """Ξ(UV^T)·W"""
    return xi_matrix(obj.loss, fp.product(), obj.lam) @ stack(fp)


def phi_gap(obj: RegularizedObjective, fp: FactorPair, base: FactorPair) -> float:
    """
    Φ_λ(fp) - Φ_λ(base) を差分から直接計算する (最小二乗損失)。
    値そのものを引き算すると base 近傍で桁落ちする。
    """
    loss = obj.loss
    dU, dV = fp.U - base.U, fp.V - base.V
    D = dU @ fp.V.T + base.U @ dV.T
    AD = loss.operator.apply(D)
    base_res = loss.residual(base.product())
    df = loss.scale * float(np.dot(AD, AD + 2.0 * base_res))
    dreg = 0.5 * obj.lam * (float(np.vdot(dU, fp.U + base.U)) + float(np.vdot(dV, fp.V + base.V)))
    return df + dreg
