"""
例外定義 - 低ランク復元ライブラリ共通
引数の不正は ValueError 互換、数値計算の失敗は RuntimeError 互換
"""

from typing import Optional


class LowRankError(Exception):
    """ライブラリ全体の基底例外"""


class ShapeMismatchError(LowRankError, ValueError):
    pass


class RankConstraintError(LowRankError, ValueError):
    pass


class HypothesisError(LowRankError, ValueError):
    """補題・定理の前提条件を満たさない入力"""


class ConfigError(LowRankError, ValueError):
    pass


class MemoryCapError(LowRankError, MemoryError):
    def __init__(self, entries: int, cap: int):
        self.entries = entries
        self.cap = cap
        super().__init__(
            f"測定行列の要素数 {entries} が上限 {cap} を超えています。"
            "LOWRANK_MAX_ENTRIES を確認してください。"
        )


class ConvergenceError(LowRankError, RuntimeError):
    def __init__(self, message: str, iterations: Optional[int] = None):
        self.iterations = iterations
        if iterations is not None:
            message = f"{message} (反復回数: {iterations})"
        super().__init__(message)


class NonFiniteIterateError(LowRankError, FloatingPointError):
    def __init__(self, iteration: int, solver: str = "AAL"):
        self.iteration = iteration
        self.solver = solver
        super().__init__(f"{solver}: 反復 {iteration} で NaN/Inf が発生しました")
