"""
滑らかな損失 f - 最小二乗 f(X) = scale·||A(X) - y||²
他の2回微分可能な損失は SmoothLoss を継承して差し込む
"""

from abc import ABC, abstractmethod
from typing import Optional

import numpy as np

from src.errors import ShapeMismatchError
from src.sampling.operators import SamplingOperator


class SmoothLoss(ABC):
    n: int
    m: int

    @abstractmethod
    def value(self, X: np.ndarray) -> float:
        ...

    @abstractmethod
    def grad(self, X: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def hess_apply(self, X: np.ndarray, H: np.ndarray) -> np.ndarray:
        """∇²f(X)[H] を行列として返す"""

    def hess_quadform(self, X: np.ndarray, H: np.ndarray) -> float:
        return float(np.vdot(H, self.hess_apply(X, H)))

    def hess_bilinear(self, X: np.ndarray, Y: np.ndarray, Z: np.ndarray) -> float:
        return float(np.vdot(Z, self.hess_apply(X, Y)))


class LeastSquaresLoss(SmoothLoss):
    def __init__(self, operator: SamplingOperator, y: np.ndarray):
        y = np.asarray(y, dtype=np.float64).ravel()
        if y.size != operator.p:
            raise ShapeMismatchError(f"観測ベクトル長 {y.size} が p={operator.p} と一致しません")
        self.operator = operator
        self.y = y
        self.scale = operator.scale
        self.n, self.m = operator.shape

    @classmethod
    def from_instance(cls, inst) -> "LeastSquaresLoss":
        return cls(inst.operator, inst.y)

    @property
    def y_norm(self) -> float:
        return float(np.linalg.norm(self.y))

    def residual(self, X: np.ndarray) -> np.ndarray:
        return self.operator.apply(X) - self.y

    def value(self, X: np.ndarray) -> float:
        res = self.residual(X)
        return float(self.scale * np.dot(res, res))

    def grad(self, X: np.ndarray) -> np.ndarray:
        return 2.0 * self.scale * self.operator.adjoint(self.residual(X))

    def hess_apply(self, X: np.ndarray, H: np.ndarray) -> np.ndarray:
        # 最小二乗では基点 X に依存しない
        return 2.0 * self.scale * self.operator.adjoint(self.operator.apply(H))

    def hess_quadform(self, X: np.ndarray, H: np.ndarray) -> float:
        AH = self.operator.apply(H)
        return float(2.0 * self.scale * np.dot(AH, AH))


def f_value(loss: SmoothLoss, X: np.ndarray) -> float:
    return loss.value(X)


def f_grad(loss: SmoothLoss, X: np.ndarray) -> np.ndarray:
    return loss.grad(X)


def hess_quadform_f(loss: SmoothLoss, H: np.ndarray, X: Optional[np.ndarray] = None) -> float:
    if X is None:
        X = np.zeros((loss.n, loss.m))
    return loss.hess_quadform(X, H)
