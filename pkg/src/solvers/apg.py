"""
APG 法 - 核ノルム正則化問題 min f(X) + λ||X||_* の加速近接勾配法 (基準解法)
"""

import logging
import math
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from src.errors import ConfigError, ConvergenceError, NonFiniteIterateError
from src.matcore.linalg import thin_svd
from src.objective.loss import LeastSquaresLoss
from src.solvers.trace import SolverTrace, TraceRecord

logger = logging.getLogger(__name__)

STEP_RULES = ("fixed", "backtracking")
MAX_BACKTRACKS = 60


@dataclass(frozen=True)
class ApgConfig:
    lam: float
    step: str = "fixed"
    epsilon: float = 1e-5
    max_iters: int = 5000
    restart: bool = True
    record_trace: bool = True
    record_timing: bool = False
    log_every: int = 100

    def __post_init__(self):
        if self.lam <= 0:
            raise ConfigError(f"λ は正である必要があります: {self.lam}")
        if self.step not in STEP_RULES:
            raise ConfigError(f"step は {STEP_RULES} のいずれかです: {self.step}")
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon は正である必要があります: {self.epsilon}")
        if self.max_iters < 1:
            raise ConfigError(f"max_iters は1以上である必要があります: {self.max_iters}")


@dataclass
class ApgResult:
    X: np.ndarray
    trace: SolverTrace
    stop_reason: str
    iterations: int
    objective: float

    @property
    def converged(self) -> bool:
        return self.stop_reason == "converged"


def svt(Z: np.ndarray, tau: float) -> np.ndarray:
    """特異値ソフト閾値 P·diag((σ - τ)₊)·Q^T"""
    if tau < 0:
        raise ValueError(f"閾値 τ は非負である必要があります: {tau}")
    svd = thin_svd(Z)
    s = np.maximum(svd.singulars - tau, 0.0)
    k = int(np.count_nonzero(s))
    return (svd.left[:, :k] * s[:k]) @ svd.right[:, :k].T


def nuclear_norm(X: np.ndarray) -> float:
    return float(np.sum(np.linalg.svd(X, compute_uv=False)))


def nuclear_objective(loss: LeastSquaresLoss, lam: float, X: np.ndarray) -> float:
    return loss.value(X) + lam * nuclear_norm(X)


def _prox_step(loss: LeastSquaresLoss, lam: float, Y: np.ndarray, t: float, backtrack: bool, iteration: int = 1):
    fY = loss.value(Y)
    G = loss.grad(Y)
    for _ in range(MAX_BACKTRACKS + 1):
        Z = Y - t * G
        X = svt(Z, t * lam) if np.all(np.isfinite(Z)) else Z
        if not np.all(np.isfinite(X)):
            raise NonFiniteIterateError(iteration, "APG")
        D = X - Y
        # f(X) <= f(Y) + <∇f(Y), D> + ||D||²/(2t)
        if not backtrack or loss.value(X) <= fY + float(np.vdot(G, D)) + float(np.sum(D * D)) / (2.0 * t) + 1e-12 * abs(fY):
            return X, t, float(np.linalg.norm(D)) / t
        t *= 0.5
    raise ConvergenceError(f"APG: ステップ幅を {MAX_BACKTRACKS} 回半分にしても上界が成り立ちません", iteration)


def apg_nuclear(
    loss: LeastSquaresLoss, lam: float, config: Optional[ApgConfig] = None, X0: Optional[np.ndarray] = None,
) -> ApgResult:
    """
    X^{k+1} = svt(Z^k - t∇f(Z^k), tλ) に Nesterov 運動量を組み合わせる。
    restart 有効時は目的関数が増えた反復で運動量を捨てて X^k から取り直す (単調減少)。
    停止は ||X^{k+1} - X^k||_F / max(1, ||X^k||_F) <= ε。
    """
    config = config or ApgConfig(lam=lam)
    n, m = loss.n, loss.m
    lip = 2.0 * loss.scale * loss.operator.norm() ** 2
    if lip <= 0.0:
        raise ConfigError("作用素ノルムが 0 のため APG のステップ幅を決められません")
    backtrack = config.step == "backtracking"
    t = 1.0 / lip if not backtrack else 2.0 / lip

    X = np.zeros((n, m)) if X0 is None else np.array(X0, dtype=np.float64)
    X_prev = X
    F = nuclear_objective(loss, lam, X)
    theta = 1.0
    trace = SolverTrace("apg")
    stop_reason = "iteration-cap"
    t0 = time.perf_counter()
    k = 0

    for k in range(config.max_iters):
        theta_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * theta * theta))
        Y = X + ((theta - 1.0) / theta_next) * (X - X_prev)
        X_new, t, grad_map = _prox_step(loss, lam, Y, t, backtrack, k + 1)
        F_new = nuclear_objective(loss, lam, X_new)
        if config.restart and F_new > F:
            theta_next = 1.0
            X_new, t, grad_map = _prox_step(loss, lam, X, t, backtrack, k + 1)
            F_new = nuclear_objective(loss, lam, X_new)

        change = float(np.linalg.norm(X_new - X)) / max(1.0, float(np.linalg.norm(X)))
        X_prev, X, F, theta = X, X_new, F_new, theta_next

        if config.record_trace:
            elapsed = (time.perf_counter() - t0) * 1e3 if config.record_timing else 0.0
            trace.append(TraceRecord(k + 1, F, change, grad_map, math.nan, elapsed))
        if config.log_every and (k + 1) % config.log_every == 0:
            logger.debug("APG 反復 %d: 目的関数=%.12g 相対変化=%.3e", k + 1, F, change)
        if change <= config.epsilon:
            stop_reason = "converged"
            break

    iterations = k + 1
    if stop_reason == "converged":
        logger.info("APG 収束: 反復 %d, 目的関数=%.12g", iterations, F)
    else:
        logger.info("APG: 反復上限 %d に達しました", iterations)
    return ApgResult(X, trace, stop_reason, iterations, F)
