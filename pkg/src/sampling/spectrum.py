"""
制限スペクトル (α, β) の推定
閉形式が分かる作用素は厳密値、それ以外はランクκのランダム方向によるモンテカルロ推定
"""

import logging
from dataclasses import dataclass, replace

import numpy as np

from src.sampling.operators import FullObservation, SamplingOperator

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SpectrumEstimate:
    alpha: float
    beta: float
    rank_used: int
    trials: int
    method: str

    def __post_init__(self):
        if not 0.0 < self.alpha <= self.beta:
            raise ValueError(f"0 < alpha <= beta が必要です (alpha={self.alpha}, beta={self.beta})")

    @property
    def exact(self) -> bool:
        return self.method != "monte-carlo"

    @property
    def ratio(self) -> float:
        return self.beta / self.alpha

    def for_loss(self, scale: float) -> "SpectrumEstimate":
        """||A(X)||² の値を ∇²f = 2·scale·A*A の単位に換算"""
        return replace(self, alpha=2.0 * scale * self.alpha, beta=2.0 * scale * self.beta)


def random_unit_rank_matrix(rng: np.random.Generator, n: int, m: int, kappa: int) -> np.ndarray:
    X = rng.standard_normal((n, kappa)) @ rng.standard_normal((m, kappa)).T
    return X / np.linalg.norm(X)


def estimate_restricted_spectrum(op: SamplingOperator, kappa: int, trials: int, seed: int) -> SpectrumEstimate:
    if kappa < 1 or trials < 1:
        raise ValueError("kappa と trials は1以上である必要があります")
    kappa = min(kappa, op.n, op.m)
    exact = op.exact_spectrum()
    if exact is not None:
        method = "exact-full-observation" if isinstance(op, FullObservation) else "exact-closed-form"
        return SpectrumEstimate(exact[0], exact[1], kappa, 0, method)

    alpha, beta = np.inf, 0.0
    # 試行ごとのサブシードは (seed, 試行番号) から決まるので試行数を増やしても前半は同じ
    for child in np.random.SeedSequence(seed).spawn(trials):
        X = random_unit_rank_matrix(np.random.default_rng(child), op.n, op.m, kappa)
        val = float(np.sum(op.apply(X) ** 2))
        alpha = min(alpha, val)
        beta = max(beta, val)
    logger.debug("制限スペクトル推定 (κ=%d, trials=%d): alpha=%.4g beta=%.4g", kappa, trials, alpha, beta)
    return SpectrumEstimate(float(alpha), float(beta), kappa, trials, "monte-carlo")
