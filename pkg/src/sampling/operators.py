"""
サンプリング作用素 - y = A(M*) + ω の線形写像 A とその随伴 A*
損失のスケール (1/2 または 1/(2p)) は作用素が保持する
"""

import logging
from abc import ABC, abstractmethod
from typing import Dict, Optional, Tuple

import numpy as np

from src.errors import MemoryCapError, ShapeMismatchError
from src.matcore.linalg import spectral_norm
from src.settings import load_settings

logger = logging.getLogger(__name__)

LOSS_SCALES = ("per-measurement", "unit")


class SamplingOperator(ABC):
    kind = "abstract"

    def __init__(self, n: int, m: int, p: int, scale: float):
        self.n = int(n)
        self.m = int(m)
        self.p = int(p)
        self.scale = float(scale)

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.n, self.m)

    def _check_matrix(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape != self.shape:
            raise ShapeMismatchError(f"{self.kind}: 行列の形状 {X.shape} が {self.shape} と一致しません")
        return X

    def _check_vector(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64).ravel()
        if v.size != self.p:
            raise ShapeMismatchError(f"{self.kind}: ベクトル長 {v.size} が p={self.p} と一致しません")
        return v

    @abstractmethod
    def apply(self, X: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def adjoint(self, v: np.ndarray) -> np.ndarray:
        ...

    def exact_spectrum(self) -> Optional[Tuple[float, float]]:
        """閉形式で分かる制限固有値 (alpha, beta)。分からなければ None"""
        return None

    def norm(self) -> float:
        """作用素ノルム ||A|| (べき乗法)"""
        return spectral_norm(
            None,
            matvec=lambda x: self.apply(x.reshape(self.shape)),
            rmatvec=lambda v: self.adjoint(v).ravel(),
            shape=(self.p, self.n * self.m),
        )

    def metadata(self) -> Dict:
        return {"kind": self.kind, "n": self.n, "m": self.m, "p": self.p, "scale": self.scale}


class GaussianSensing(SamplingOperator):
    """A_i の成分が i.i.d. N(0, 1/p) の行列センシング"""

    kind = "gaussian"

    def __init__(self, matrices: np.ndarray, loss_scale: str = "per-measurement"):
        matrices = np.asarray(matrices, dtype=np.float64)
        p, n, m = matrices.shape
        if loss_scale not in LOSS_SCALES:
            raise ValueError(f"loss_scale は {LOSS_SCALES} のいずれかです: {loss_scale!r}")
        super().__init__(n, m, p, 0.5 / p if loss_scale == "per-measurement" else 0.5)
        self.loss_scale = loss_scale
        self.matrices = matrices
        self._flat = matrices.reshape(p, n * m)
        self._norm: Optional[float] = None

    def apply(self, X: np.ndarray) -> np.ndarray:
        return self._flat @ self._check_matrix(X).ravel()

    def adjoint(self, v: np.ndarray) -> np.ndarray:
        return (self._check_vector(v) @ self._flat).reshape(self.shape)

    def norm(self) -> float:
        if self._norm is None:
            self._norm = spectral_norm(self._flat, tol=1e-9, max_iter=2000)
        return self._norm

    def metadata(self) -> Dict:
        meta = super().metadata()
        meta["loss_scale"] = self.loss_scale
        return meta


class FullObservation(SamplingOperator):
    kind = "full"

    def __init__(self, n: int, m: int):
        super().__init__(n, m, n * m, 0.5)

    def apply(self, X: np.ndarray) -> np.ndarray:
        return self._check_matrix(X).ravel().copy()

    def adjoint(self, v: np.ndarray) -> np.ndarray:
        return self._check_vector(v).reshape(self.shape).copy()

    def exact_spectrum(self) -> Tuple[float, float]:
        return (1.0, 1.0)

    def norm(self) -> float:
        return 1.0


class WeightedHadamard(SamplingOperator):
    """要素ごとの重み付き観測 Y = H∘X"""

    kind = "weighted"

    def __init__(self, H: np.ndarray):
        H = np.asarray(H, dtype=np.float64)
        if H.ndim != 2:
            raise ShapeMismatchError("重み行列 H は2次元である必要があります")
        if not np.all(H > 0):
            raise ValueError("重み行列 H の要素はすべて正である必要があります")
        super().__init__(H.shape[0], H.shape[1], H.size, 0.5)
        self.H = H

    def apply(self, X: np.ndarray) -> np.ndarray:
        return (self.H * self._check_matrix(X)).ravel()

    def adjoint(self, v: np.ndarray) -> np.ndarray:
        return self.H * self._check_vector(v).reshape(self.shape)

    def exact_spectrum(self) -> Tuple[float, float]:
        H2 = self.H**2
        return (float(H2.min()), float(H2.max()))

    def norm(self) -> float:
        return float(self.H.max())


class BernoulliMask(SamplingOperator):
    """行列補完用のマスク作用素 (観測成分を行優先順に並べる)"""

    kind = "mask"

    def __init__(self, mask: np.ndarray):
        mask = np.asarray(mask, dtype=bool)
        super().__init__(mask.shape[0], mask.shape[1], int(mask.sum()), 0.5)
        self.mask = mask

    def apply(self, X: np.ndarray) -> np.ndarray:
        return self._check_matrix(X)[self.mask]

    def adjoint(self, v: np.ndarray) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.mask] = self._check_vector(v)
        return out

    def norm(self) -> float:
        return 1.0 if self.p > 0 else 0.0


def make_gaussian_sensing(
    n: int, m: int, p: int, seed: int, max_entries: Optional[int] = None,
    loss_scale: str = "per-measurement",
) -> GaussianSensing:
    if p < 1:
        raise ValueError(f"測定数 p は1以上である必要があります: {p}")
    cap = load_settings().max_entries if max_entries is None else max_entries
    entries = p * n * m
    if entries > cap:
        raise MemoryCapError(entries, cap)
    rng = np.random.default_rng(seed)
    matrices = rng.standard_normal((p, n, m)) / np.sqrt(p)
    logger.debug("ガウスセンシング作用素を生成: n=%d m=%d p=%d", n, m, p)
    return GaussianSensing(matrices, loss_scale=loss_scale)


def make_full_observation(n: int, m: int) -> FullObservation:
    return FullObservation(n, m)


def make_weighted_hadamard(H: np.ndarray) -> WeightedHadamard:
    return WeightedHadamard(H)


def make_bernoulli_mask(n: int, m: int, prob: float, seed: int) -> BernoulliMask:
    if not 0.0 < prob <= 1.0:
        raise ValueError(f"観測確率は (0, 1] の範囲です: {prob}")
    rng = np.random.default_rng(seed)
    return BernoulliMask(rng.random((n, m)) < prob)


def operator_norm(op: SamplingOperator) -> float:
    return op.norm()
