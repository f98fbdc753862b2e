"""
出力 - 出力ディレクトリごとに一つの書き込み口を通して CSV / JSON を書き出す
どのファイルにも config_hash と version を埋め込む
"""

import json
import logging
import math
import threading
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
import pandas as pd

from src.solvers.trace import SolverTrace, read_csv, write_csv

logger = logging.getLogger(__name__)

_LOCKS: Dict[Path, threading.Lock] = {}
_LOCKS_GUARD = threading.Lock()


def _lock_for(directory: Path) -> threading.Lock:
    key = directory.resolve()
    with _LOCKS_GUARD:
        if key not in _LOCKS:
            _LOCKS[key] = threading.Lock()
        return _LOCKS[key]


def _plain(v: Any) -> Any:
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_plain(x) for x in v.tolist()]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (np.floating, float)):
        return float(v) if math.isfinite(v) else None
    return v


class OutputWriter:
    def __init__(self, directory: Union[str, Path], meta: Optional[Dict[str, str]] = None):
        self.directory = Path(directory)
        self.meta = dict(meta or {})
        self._lock = _lock_for(self.directory)

    def path(self, name: str) -> Path:
        return self.directory / name

    def write_frame(self, name: str, df: pd.DataFrame) -> Path:
        path = self.path(name)
        try:
            with self._lock:
                write_csv(df, path, self.meta)
        except OSError as e:
            raise OSError(f"CSV の書き込みに失敗しました: {path}: {e}") from e
        logger.info("書き出し: %s (%d 行)", path, len(df))
        return path

    def write_json(self, name: str, payload: Dict[str, Any]) -> Path:
        path = self.path(name)
        body = dict(_plain(payload))
        body.setdefault("meta", {})
        body["meta"] = dict(body["meta"], **self.meta)
        text = json.dumps(body, indent=2, sort_keys=True, ensure_ascii=False, allow_nan=False)
        try:
            with self._lock:
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_text(text + "\n", encoding="utf-8")
        except OSError as e:
            raise OSError(f"JSON の書き込みに失敗しました: {path}: {e}") from e
        logger.info("書き出し: %s", path)
        return path

    def write_report(self, name: str, report) -> Path:
        report.meta.update(self.meta)
        return self.write_json(name, report.to_dict())


def trace_plot_frame(trace: SolverTrace) -> pd.DataFrame:
    """図2相当: iter, dist_to_final, log10_dist"""
    df = trace.to_frame()[["iter", "dist_to_final"]].copy()
    dist = df["dist_to_final"].to_numpy(dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        df["log10_dist"] = np.where(dist > 0, np.log10(dist), np.nan)
    return df


def emit_plot_data(result, path: Union[str, Path], meta: Optional[Dict[str, str]] = None) -> Path:
    """
    外部で描画するための CSV を書く
      SweepResult        → nu, lam, aal_rmse, apg_rmse, aal_rank, apg_rank, trials
      SolverTrace        → iter, dist_to_final, log10_dist
      CounterexampleResult → k, gap, grad_sq, ratio
    """
    from src.expcli.experiments import SweepResult
    from src.theory.fullobs import CounterexampleResult

    path = Path(path)
    if isinstance(result, SweepResult):
        df = result.to_frame()
    elif isinstance(result, SolverTrace):
        df = trace_plot_frame(result)
    elif isinstance(result, CounterexampleResult):
        df = pd.DataFrame(
            [(p.k, p.gap, p.grad_sq, p.ratio) for p in result.points], columns=["k", "gap", "grad_sq", "ratio"],
        )
    else:
        raise TypeError(f"描画用データに変換できない型です: {type(result).__name__}")
    return OutputWriter(path.parent, meta).write_frame(path.name, df)


def read_plot_data(path: Union[str, Path]) -> pd.DataFrame:
    return read_csv(path)
