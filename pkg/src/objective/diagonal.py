"""
対角フレーム - 全観測 f = ½||X - M||² を M = PΣQ^T で回した Φ̃_λ
RSC/RSS 二次形式の比較 (lemma21_check) もここに置く
"""

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
import scipy.linalg

from src.matcore.factors import FactorPair
from src.objective.factored import RegularizedObjective, phi_grad, phi_value
from src.objective.loss import LeastSquaresLoss, SmoothLoss
from src.sampling.operators import make_full_observation

DISTINCT_RTOL = 1e-9


@dataclass(frozen=True)
class DiagonalObjective:
    d: np.ndarray
    n: int
    m: int
    lam: float
    r: int

    def __post_init__(self):
        d = np.asarray(self.d, dtype=np.float64).ravel()
        if d.size > min(self.n, self.m):
            raise ValueError(f"対角成分の数 {d.size} が min(n, m)={min(self.n, self.m)} を超えています")
        full = np.zeros(min(self.n, self.m))
        full[: d.size] = d
        if np.any(full < 0) or np.any(np.diff(full) > 0):
            raise ValueError("対角成分は非負かつ非増加である必要があります")
        object.__setattr__(self, "d", full)

    @classmethod
    def from_matrix(cls, M: np.ndarray, lam: float, r: int) -> Tuple["DiagonalObjective", np.ndarray, np.ndarray]:
        """M = P Σ Q^T (完全SVD) を返す"""
        P, s, Qt = scipy.linalg.svd(np.asarray(M, dtype=np.float64), full_matrices=True)
        return cls(s, M.shape[0], M.shape[1], lam, r), P, Qt.T

    def sigma(self, i: int) -> float:
        """σ_i(Σ) (1始まり、範囲外は0)"""
        return float(self.d[i - 1]) if 1 <= i <= self.d.size else 0.0

    def sigma_matrix(self) -> np.ndarray:
        S = np.zeros((self.n, self.m))
        k = self.d.size
        S[np.arange(k), np.arange(k)] = self.d
        return S

    def top(self) -> np.ndarray:
        """Σ₁ の対角 (上位 r 個)"""
        return self.d[: self.r]

    def distinct_top(self, rtol: float = DISTINCT_RTOL) -> List[float]:
        """Σ₁ の相異なる値 σ̃₁ > ... > σ̃_s"""
        vals: List[float] = []
        scale = max(self.sigma(1), 1.0)
        for v in self.top():
            if not vals or vals[-1] - v > rtol * scale:
                vals.append(float(v))
        return vals

    def as_objective(self) -> RegularizedObjective:
        op = make_full_observation(self.n, self.m)
        return RegularizedObjective(LeastSquaresLoss(op, op.apply(self.sigma_matrix())), self.lam, self.r)


def phi_tilde(dobj: DiagonalObjective, fp: FactorPair) -> float:
    return phi_value(dobj.as_objective(), fp)


def phi_tilde_grad(dobj: DiagonalObjective, fp: FactorPair) -> FactorPair:
    return phi_grad(dobj.as_objective(), fp)


def lemma21_check(
    loss: SmoothLoss, alpha: float, beta: float, X: np.ndarray, Y: np.ndarray, Z: np.ndarray,
) -> Tuple[float, float]:
    """|2/(α+β)·∇²f(X)(Y,Z) - <Y,Z>| と (β-α)/(α+β)·||Y||·||Z|| を返す"""
    lhs = abs(2.0 / (alpha + beta) * loss.hess_bilinear(X, Y, Z) - float(np.vdot(Y, Z)))
    rhs = (beta - alpha) / (alpha + beta) * float(np.linalg.norm(Y)) * float(np.linalg.norm(Z))
    return lhs, rhs
