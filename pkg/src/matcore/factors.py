"""
因子ペア (U, V) と積み上げ表現 W = (U; V), Ŵ = (U; -V)
"""

from dataclasses import dataclass

import numpy as np

from src.errors import ShapeMismatchError
from src.matcore.linalg import as_matrix


@dataclass(frozen=True)
class FactorPair:
    U: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        U = as_matrix(self.U, "U")
        V = as_matrix(self.V, "V")
        if U.shape[1] != V.shape[1]:
            raise ShapeMismatchError(f"U と V の列数が一致しません: {U.shape[1]} vs {V.shape[1]}")
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "V", V)

    @property
    def n(self) -> int:
        return self.U.shape[0]

    @property
    def m(self) -> int:
        return self.V.shape[0]

    @property
    def r(self) -> int:
        return self.U.shape[1]

    def product(self) -> np.ndarray:
        return self.U @ self.V.T

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.U**2) + np.sum(self.V**2)))

    def __add__(self, other: "FactorPair") -> "FactorPair":
        return FactorPair(self.U + other.U, self.V + other.V)

    def __sub__(self, other: "FactorPair") -> "FactorPair":
        return FactorPair(self.U - other.U, self.V - other.V)

    def scaled(self, t: float) -> "FactorPair":
        return FactorPair(t * self.U, t * self.V)

    def inner(self, other: "FactorPair") -> float:
        return float(np.vdot(self.U, other.U) + np.vdot(self.V, other.V))

    def right_multiply(self, R: np.ndarray) -> "FactorPair":
        return FactorPair(self.U @ R, self.V @ R)

    @classmethod
    def zeros(cls, n: int, m: int, r: int) -> "FactorPair":
        return cls(np.zeros((n, r)), np.zeros((m, r)))

    @classmethod
    def from_stacked(cls, W: np.ndarray, n: int) -> "FactorPair":
        return cls(W[:n], W[n:])


def stack(fp: FactorPair) -> np.ndarray:
    """W = (U; V)"""
    return np.vstack([fp.U, fp.V])


def stack_hat(fp: FactorPair) -> np.ndarray:
    """Ŵ = (U; -V)。Ŵ^T W = U^T U - V^T V"""
    return np.vstack([fp.U, -fp.V])
