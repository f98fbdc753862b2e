"""
AAL (加速交互線形化) 法 - Φ_λ(U, V) のブロック近接勾配更新
各ブロック部分問題は閉形式 U⁺ = (L_F·Ũ - ∇₁F(Ũ, V)) / (L_F + λ) で解ける
"""

import logging
import math
import time
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from src.errors import ConfigError, ConvergenceError, NonFiniteIterateError
from src.matcore.factors import FactorPair
from src.matcore.linalg import thin_svd
from src.objective.factored import RegularizedObjective, phi_value
from src.solvers.trace import SolverTrace, TraceRecord

logger = logging.getLogger(__name__)

SCHEDULES = ("none", "nesterov", "fixed")
RESTARTS = ("none", "objective")
MAX_BACKTRACKS = 60


@dataclass(frozen=True)
class AalConfig:
    """
    L_F: None なら auto_LF で決める
    L: 外挿上限 √(L/(L+L_F)) の定数。None なら L_ratio·L_F
    """

    L_F: Optional[float] = None
    L: Optional[float] = None
    L_ratio: float = 1.0
    schedule: str = "none"
    beta: float = 0.0
    epsilon: float = 1e-10
    max_iters: int = 5000
    record_trace: bool = True
    record_timing: bool = False
    backtrack: bool = True
    restart: str = "none"
    log_every: int = 100

    def __post_init__(self):
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"schedule は {SCHEDULES} のいずれかです: {self.schedule}")
        if self.restart not in RESTARTS:
            raise ConfigError(f"restart は {RESTARTS} のいずれかです: {self.restart}")
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon は正である必要があります: {self.epsilon}")
        if self.max_iters < 1:
            raise ConfigError(f"max_iters は1以上である必要があります: {self.max_iters}")
        if self.L_F is not None and self.L_F <= 0:
            raise ConfigError(f"L_F は正である必要があります: {self.L_F}")
        if self.L_ratio < 1.0:
            raise ConfigError(f"L_ratio は1以上である必要があります (L >= L_F): {self.L_ratio}")
        if self.L is not None and self.L_F is not None and self.L < self.L_F:
            raise ConfigError(f"L >= L_F が必要です (L={self.L}, L_F={self.L_F})")
        if self.beta < 0:
            raise ConfigError(f"beta は非負である必要があります: {self.beta}")

    def beta_cap(self, L_F: float) -> float:
        L = max(self.L if self.L is not None else self.L_ratio * L_F, L_F)
        return math.sqrt(L / (L + L_F))


@dataclass
class AalResult:
    fp: FactorPair
    trace: SolverTrace
    stop_reason: str
    iterations: int
    L_F: float
    objective: float
    clipped: bool = False

    @property
    def converged(self) -> bool:
        return self.stop_reason == "converged"


def init_spectral(inst, r: int) -> FactorPair:
    """
    X⁰ = A*(y) の上位 r 特異対から (P·diag(σ)^{1/2}, Q·diag(σ)^{1/2}) を作る。
    inst は operator と y を持つもの (RecoveryInstance または LeastSquaresLoss)。
    """
    if r < 1:
        raise ValueError(f"r は1以上である必要があります: {r}")
    X0 = inst.operator.adjoint(inst.y)
    svd = thin_svd(X0)
    k = min(r, svd.singulars.size)
    root = np.sqrt(svd.singulars[:k])
    U = np.zeros((X0.shape[0], r))
    V = np.zeros((X0.shape[1], r))
    U[:, :k] = svd.left[:, :k] * root
    V[:, :k] = svd.right[:, :k] * root
    return FactorPair(U, V)


def auto_LF(obj: RegularizedObjective, start: FactorPair) -> float:
    """L_F = 2·(2·scale·||A||²)·max(||U⁰||², ||V⁰||²)"""
    op = obj.loss.operator
    lip = 2.0 * obj.loss.scale * op.norm() ** 2
    size = max(np.linalg.norm(start.U, 2), np.linalg.norm(start.V, 2)) ** 2
    if size <= 0.0:
        # 原点からの開始では勾配ブロックが消えるので下限だけ置く
        return 2.0 * lip
    return 2.0 * lip * float(size)


def nesterov_beta(theta_prev: float, theta: float, cap: float = 1.0) -> Tuple[float, float]:
    """β_k = (θ_{k-1} - 1)/θ_k を [0, cap] に切り詰め、θ_{k+1} = (1 + √(1 + 4θ_k²))/2"""
    if theta_prev < 1.0 or theta < 1.0:
        raise ValueError(f"θ は1以上である必要があります: ({theta_prev}, {theta})")
    beta = min(max((theta_prev - 1.0) / theta, 0.0), cap)
    return beta, 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * theta * theta))


def _block_update(tilde: np.ndarray, block_grad: np.ndarray, L_F: float, lam: float) -> np.ndarray:
    return (L_F * tilde - block_grad) / (L_F + lam)


def _majorizes(obj: RegularizedObjective, X: np.ndarray, D_lift: np.ndarray, D: np.ndarray, L_F: float) -> bool:
    # F(Ũ + D, V) - F(Ũ, V) - <∇₁F, D> = ½∇²f(D V^T, D V^T) (二次損失では厳密)
    curvature = 0.5 * obj.loss.hess_quadform(X, D_lift)
    return curvature <= 0.5 * L_F * float(np.sum(D * D)) * (1.0 + 1e-12) + 1e-300


def aal_step(
    obj: RegularizedObjective, current: FactorPair, previous: FactorPair, beta: float, L_F: float,
    iteration: int = 1,
) -> FactorPair:
    """外挿した点から U, V のブロックを順に閉形式で更新する。L_F は固定"""
    return _aal_step(obj, current, previous, beta, L_F, backtrack=False, iteration=iteration)[0]


def _finite(*arrays) -> bool:
    return all(np.all(np.isfinite(a)) for a in arrays)


def _block_search(update, majorizes, L_F: float, backtrack: bool, iteration: int):
    """L_F を倍にしながらブロックモデルが上界になる点を探す"""
    for _ in range(MAX_BACKTRACKS + 1):
        new = update(L_F)
        if not _finite(new, L_F):
            raise NonFiniteIterateError(iteration, "AAL")
        if not backtrack or majorizes(new, L_F):
            return new, L_F
        L_F *= 2.0
    raise ConvergenceError(f"AAL: L_F を {MAX_BACKTRACKS} 回倍にしても上界が成り立ちません", iteration)


def _aal_step(
    obj: RegularizedObjective, current: FactorPair, previous: FactorPair, beta: float, L_F: float,
    backtrack: bool, iteration: int = 1,
):
    loss, lam = obj.loss, obj.lam
    U, V = current.U, current.V
    U_t = U + beta * (U - previous.U)
    V_t = V + beta * (V - previous.V)

    X = U_t @ V.T
    G1 = loss.grad(X) @ V
    U_new, L_F = _block_search(
        lambda L: _block_update(U_t, G1, L, lam),
        lambda new, L: _majorizes(obj, X, (new - U_t) @ V.T, new - U_t, L),
        L_F, backtrack, iteration,
    )
    L_U = L_F

    X = U_new @ V_t.T
    G2 = loss.grad(X).T @ U_new
    V_new, L_F = _block_search(
        lambda L: _block_update(V_t, G2, L, lam),
        lambda new, L: _majorizes(obj, X, U_new @ (new - V_t).T, new - V_t, L),
        L_F, backtrack, iteration,
    )
    L_V = L_F

    new = FactorPair(U_new, V_new)
    # 停止判定に使う2つの残差の分子
    G_new = loss.grad(new.product())
    r1 = G1 - G_new @ V_new + L_U * (U_new - U_t)
    r2 = G2 - G_new.T @ U_new + L_V * (V_new - V_t)
    return new, L_F, float(np.linalg.norm(r1)), float(np.linalg.norm(r2))


def aal_solve(
    obj: RegularizedObjective,
    inst,
    config: AalConfig,
    start: Optional[FactorPair] = None,
    reference: Optional[FactorPair] = None,
) -> AalResult:
    """
    加速交互線形化。停止は2つのブロック残差を (1 + ||y||) で割った値が両方 ε 以下。
    reference を渡すと各反復の ||(U^k, V^k) - reference||_F を dist_to_final 列に記録する。
    """
    if start is None:
        start = init_spectral(inst if inst is not None else obj.loss, obj.r)
    obj.check(start)
    if start.r != obj.r:
        raise ValueError(f"初期点の列数 {start.r} が r={obj.r} と一致しません")

    y_norm = float(np.linalg.norm(inst.y if inst is not None else obj.loss.y))
    denom = 1.0 + y_norm
    L_F = config.L_F if config.L_F is not None else auto_LF(obj, start)

    trace = SolverTrace("aal")
    current, previous = start, start
    obj_val = phi_value(obj, current)
    best, best_val = current, obj_val
    theta_prev, theta = 1.0, 1.0
    clipped = False
    stop_reason = "iteration-cap"
    t0 = time.perf_counter()
    k = 0

    for k in range(config.max_iters):
        cap = config.beta_cap(L_F)
        if config.schedule == "nesterov":
            beta, theta_next = nesterov_beta(theta_prev, theta, cap)
            if not clipped and (theta_prev - 1.0) / theta > cap:
                clipped = True
                logger.info("AAL: 外挿係数を上限 %.6g に切り詰めました (反復 %d)", cap, k)
        elif config.schedule == "fixed":
            if config.beta > cap:
                raise ConfigError(f"固定 β={config.beta} が上限 √(L/(L+L_F))={cap:.6g} を超えています")
            beta, theta_next = config.beta, theta
        else:
            beta, theta_next = 0.0, theta

        new, L_F, n1, n2 = _aal_step(obj, current, previous, beta, L_F, config.backtrack, iteration=k + 1)

        new_val = phi_value(obj, new)
        res1, res2 = n1 / denom, n2 / denom

        if config.restart == "objective" and config.schedule == "nesterov" and new_val > obj_val:
            theta_prev, theta = 1.0, 1.0
            previous = new
        else:
            theta_prev, theta = theta, theta_next
            previous = current
        current, obj_val = new, new_val
        if new_val < best_val:
            best, best_val = new, new_val

        if config.record_trace:
            dist = (current - reference).norm() if reference is not None else math.nan
            elapsed = (time.perf_counter() - t0) * 1e3 if config.record_timing else 0.0
            trace.append(TraceRecord(k + 1, new_val, res1, res2, dist, elapsed))
        if config.log_every and (k + 1) % config.log_every == 0:
            logger.debug("AAL 反復 %d: Φ=%.12g res=(%.3e, %.3e) L_F=%.4g", k + 1, new_val, res1, res2, L_F)

        if res1 <= config.epsilon and res2 <= config.epsilon:
            stop_reason = "converged"
            break

    iterations = k + 1
    if stop_reason == "converged":
        final, final_val = current, obj_val
        logger.info("AAL 収束: 反復 %d, Φ=%.12g", iterations, final_val)
    else:
        final, final_val = best, best_val
        logger.info("AAL: 反復上限 %d に達しました (最良の Φ=%.12g を返します)", iterations, final_val)
    return AalResult(final, trace, stop_reason, iterations, L_F, final_val, clipped)
