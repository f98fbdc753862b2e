"""
反復履歴 - 1反復1行の記録と CSV 出力
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import pandas as pd

TRACE_COLUMNS = ["iter", "obj", "res1", "res2", "dist_to_final", "time_ms"]
FLOAT_FORMAT = "%.17g"


@dataclass
class TraceRecord:
    iter: int
    obj: float
    res1: float
    res2: float
    dist_to_final: float = math.nan
    time_ms: float = 0.0


@dataclass
class SolverTrace:
    solver: str
    records: List[TraceRecord] = field(default_factory=list)

    def append(self, record: TraceRecord) -> None:
        if self.records and record.iter <= self.records[-1].iter:
            raise ValueError(f"反復番号は狭義単調増加である必要があります: {self.records[-1].iter} -> {record.iter}")
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(rec, name) for rec in self.records], dtype=np.float64)

    def objectives(self) -> np.ndarray:
        return self.column("obj")

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame([vars(rec) for rec in self.records], columns=TRACE_COLUMNS)
        return df.astype({"iter": "int64"})

    def to_csv(self, path: Union[str, Path], meta: Optional[Dict[str, str]] = None) -> Path:
        return write_csv(self.to_frame(), path, meta)


def write_csv(df: pd.DataFrame, path: Union[str, Path], meta: Optional[Dict[str, str]] = None) -> Path:
    """先頭に '# key=value' 行でメタ情報を埋め込んだ CSV"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        for key, value in sorted((meta or {}).items()):
            f.write(f"# {key}={value}\n")
        df.to_csv(f, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def read_csv(path: Union[str, Path]) -> pd.DataFrame:
    return pd.read_csv(path, comment="#", float_precision="round_trip")


def read_csv_meta(path: Union[str, Path]) -> Dict[str, str]:
    meta: Dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if not line.startswith("# "):
                break
            key, _, value = line[2:].rstrip("\n").partition("=")
            meta[key] = value
    return meta
