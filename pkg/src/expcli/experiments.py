"""
実験ハーネス - λ スイープ (RMSE とランク)、収束曲線、反例列
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from src.errors import ConfigError, LowRankError, ShapeMismatchError
from src.expcli.config import ExperimentConfig, resolve_lambda
from src.expcli.writer import OutputWriter, emit_plot_data
from src.matcore.linalg import numerical_rank
from src.objective.factored import RegularizedObjective
from src.objective.loss import LeastSquaresLoss
from src.sampling.instance import generate_instance
from src.settings import load_settings
from src.solvers.aal import AalResult, aal_solve
from src.solvers.apg import apg_nuclear
from src.solvers.trace import SolverTrace
from src.theory.fullobs import CounterexampleResult, counterexample_checks, counterexample_sequence
from src.theory.report import TheoryReport

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = ["nu", "lam", "aal_rmse", "apg_rmse", "aal_rank", "apg_rank", "trials"]
TRIAL_COLUMNS = ["nu", "trial", "seed", "lam", "aal_rmse", "apg_rmse", "aal_rank", "apg_rank", "aal_iters", "apg_iters"]
FIT_WINDOW = (1e-9, 1e-1)
MIN_FIT_POINTS = 10


def rmse(Xf: np.ndarray, M_star: np.ndarray) -> float:
    """||X^f - M*||_F / ||M*||_F"""
    Xf = np.asarray(Xf, dtype=np.float64)
    M_star = np.asarray(M_star, dtype=np.float64)
    if Xf.shape != M_star.shape:
        raise ShapeMismatchError(f"形状が一致しません: {Xf.shape} vs {M_star.shape}")
    ref = float(np.linalg.norm(M_star))
    if ref == 0.0:
        raise ValueError("M* がゼロ行列のため相対 RMSE を定義できません")
    return float(np.linalg.norm(Xf - M_star)) / ref


def trial_seeds(seed: int, trials: int) -> List[int]:
    """試行ごとのサブシード。試行数を増やしても前半は変わらない"""
    return [int(child.generate_state(1)[0]) for child in np.random.SeedSequence(seed).spawn(trials)]


# ---- λ スイープ ----

@dataclass(frozen=True)
class TrialOutcome:
    nu: float
    trial: int
    seed: int
    lam: float
    aal_rmse: float
    apg_rmse: float
    aal_rank: int
    apg_rank: int
    aal_iters: int
    apg_iters: int


@dataclass
class SweepResult:
    rows: List[Dict[str, float]] = field(default_factory=list)
    outcomes: List[TrialOutcome] = field(default_factory=list)
    failures: List[Dict[str, str]] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=SWEEP_COLUMNS).astype({"trials": "int64"})

    def trials_frame(self) -> pd.DataFrame:
        return pd.DataFrame([vars(o) for o in self.outcomes], columns=TRIAL_COLUMNS)


def _sweep_trial(config: ExperimentConfig, nu: float, trial: int, seed: int) -> TrialOutcome:
    inst = generate_instance(config.n, config.m, config.r_star, config.operator_spec(), config.noise_spec(), seed)
    lam = resolve_lambda(config.lambda_rule, inst, nu)
    loss = LeastSquaresLoss.from_instance(inst)
    aal = aal_solve(RegularizedObjective(loss, lam, config.rank), inst, config.aal_config(record_trace=False))
    apg = apg_nuclear(loss, lam, config.apg_config(lam, record_trace=False))
    X_aal = aal.fp.product()
    logger.debug("試行 ν=%.3g #%d: λ=%.4g AAL %s / APG %s", nu, trial, lam, aal.stop_reason, apg.stop_reason)
    return TrialOutcome(
        nu=nu, trial=trial, seed=seed, lam=lam,
        aal_rmse=rmse(X_aal, inst.M_star), apg_rmse=rmse(apg.X, inst.M_star),
        aal_rank=numerical_rank(X_aal), apg_rank=numerical_rank(apg.X),
        aal_iters=aal.iterations, apg_iters=apg.iterations,
    )


def _summarize(nu: float, outcomes: List[TrialOutcome]) -> Dict[str, float]:
    # 試行の順序に依存しないよう fsum で平均する
    k = len(outcomes)

    def mean(attr: str) -> float:
        return math.fsum(getattr(o, attr) for o in outcomes) / k if k else math.nan

    return {
        "nu": nu, "lam": mean("lam"), "aal_rmse": mean("aal_rmse"), "apg_rmse": mean("apg_rmse"),
        "aal_rank": mean("aal_rank"), "apg_rank": mean("apg_rank"), "trials": k,
    }


def run_rmse_sweep(
    config: ExperimentConfig, writer: Optional[OutputWriter] = None, workers: Optional[int] = None,
) -> SweepResult:
    """
    ν グリッドの各点・各試行で AAL (r = config.r) と APG を同じ λ で解き、
    相対 RMSE と数値ランクを平均する。失敗した試行は理由を記録して飛ばす。
    """
    if config.kind != "rmse-sweep":
        raise ConfigError(f"rmse-sweep 用の設定ではありません: {config.kind}")
    grid = sorted(config.lambda_grid())
    seeds = trial_seeds(config.seed, config.trials)
    jobs: List[Tuple[float, int, int]] = [(nu, t, s) for nu in grid for t, s in enumerate(seeds)]
    workers = workers or load_settings().workers
    logger.info("スイープ開始: ν=%s, 試行 %d, ワーカー %d", grid, config.trials, workers)

    result = SweepResult()
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_sweep_trial, config, nu, t, s) for nu, t, s in jobs]
        for (nu, t, s), future in zip(jobs, futures):
            try:
                result.outcomes.append(future.result())
            except LowRankError as e:
                logger.warning("試行を中断しました (ν=%.3g, #%d): %s", nu, t, e)
                result.failures.append({"nu": str(nu), "trial": str(t), "reason": str(e)})

    for nu in grid:
        result.rows.append(_summarize(nu, [o for o in result.outcomes if o.nu == nu]))

    if writer is not None:
        writer.write_frame("sweep.csv", result.to_frame())
        writer.write_frame("sweep_trials.csv", result.trials_frame())
        emit_plot_data(result, writer.path("sweep_plot.csv"), writer.meta)
        if result.failures:
            writer.write_json("sweep_failures.json", {"failures": result.failures})
    return result


# ---- 収束曲線 ----

@dataclass(frozen=True)
class RateFit:
    """log10(dist_to_final) = slope·iter + intercept"""

    slope: float
    intercept: float
    r_squared: float
    points: int
    reliable: bool
    window: Tuple[float, float] = FIT_WINDOW

    def to_dict(self) -> Dict[str, object]:
        return {
            "slope": self.slope, "intercept": self.intercept, "r_squared": self.r_squared,
            "points": self.points, "reliable": self.reliable, "window": list(self.window),
        }


def fit_linear_rate(trace: SolverTrace, window: Tuple[float, float] = FIT_WINDOW) -> RateFit:
    iters = trace.column("iter")
    dist = trace.column("dist_to_final")
    lo, hi = window
    mask = np.isfinite(dist) & (dist >= lo) & (dist <= hi)
    n = int(np.count_nonzero(mask))
    if n < 2:
        return RateFit(math.nan, math.nan, math.nan, n, False, window)
    x, y = iters[mask], np.log10(dist[mask])
    A = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    ss_res = float(np.sum((y - A @ coef) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return RateFit(float(coef[0]), float(coef[1]), r2, n, n >= MIN_FIT_POINTS, window)


@dataclass
class ConvergenceResult:
    lam: float
    solve: AalResult
    trace: SolverTrace
    fit: RateFit


def run_convergence(config: ExperimentConfig, writer: Optional[OutputWriter] = None) -> ConvergenceResult:
    """
    全観測で加速なしの AAL を2回走らせる。1回目で最終点を得て、2回目に
    各反復の ||(U^k, V^k) - (U^f, V^f)||_F を記録し、線形収束の傾きを当てはめる。
    """
    if config.kind != "convergence":
        raise ConfigError(f"convergence 用の設定ではありません: {config.kind}")
    spec = config.operator_spec()
    if spec.kind != "full":
        raise ConfigError(f"収束実験は全観測のみ対応しています: {spec.kind}")
    inst = generate_instance(config.n, config.m, config.r_star, spec, config.noise_spec(), config.seed)
    lam = resolve_lambda(config.lambda_rule, inst, config.lambda_grid()[0])
    obj = RegularizedObjective(LeastSquaresLoss.from_instance(inst), lam, config.rank)

    first = aal_solve(obj, inst, config.aal_config(record_trace=False, record_timing=False))
    replay = aal_solve(obj, inst, config.aal_config(record_trace=True, record_timing=False), reference=first.fp)
    fit = fit_linear_rate(replay.trace)
    if not fit.reliable:
        logger.warning("当てはめ区間の点が %d 個しかないため傾きは参考値です", fit.points)
    logger.info("収束実験: λ=%.6g 反復 %d, 傾き %.4g (R²=%.4f)", lam, replay.iterations, fit.slope, fit.r_squared)

    if writer is not None:
        writer.write_frame("convergence_trace.csv", replay.trace.to_frame())
        writer.write_json("convergence_fit.json", {
            "fit": fit.to_dict(), "lam": lam, "iterations": replay.iterations, "stop_reason": replay.stop_reason,
        })
        emit_plot_data(replay.trace, writer.path("convergence_plot.csv"), writer.meta)
    return ConvergenceResult(lam, replay, replay.trace, fit)


# ---- 反例列 ----

def run_counterexample(
    config: ExperimentConfig, writer: Optional[OutputWriter] = None,
) -> Tuple[CounterexampleResult, TheoryReport]:
    opts = dict(config.counterexample)
    result = counterexample_sequence(opts.get("a", 2.0), opts.get("lam", 1.0), opts.get("k_max", 200))
    report = TheoryReport(config.meta())
    report.extend(counterexample_checks(result))
    if writer is not None:
        emit_plot_data(result, writer.path("counterexample.csv"), writer.meta)
        writer.write_report("counterexample_report.json", report)
    return result, report
