"""
行列テキスト形式の読み書き
1行目 "rows cols"、続いて空白区切りの10進数 (有効数字17桁で往復一致)
"""

from pathlib import Path
from typing import Union

import numpy as np

from src.errors import ShapeMismatchError

PathLike = Union[str, Path]
FLOAT_FMT = "%.17g"


def write_matrix(path: PathLike, X: np.ndarray) -> None:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    rows, cols = X.shape
    np.savetxt(path, X, fmt=FLOAT_FMT, header=f"{rows} {cols}", comments="", encoding="utf-8")


def _read_header(path: PathLike):
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().split()
    if len(header) != 2:
        raise ValueError(f"{path}: 1行目は 'rows cols' である必要があります")
    return int(header[0]), int(header[1])


def read_matrix(path: PathLike) -> np.ndarray:
    rows, cols = _read_header(path)
    if rows * cols == 0:
        return np.zeros((rows, cols))
    try:
        values = np.loadtxt(path, dtype=np.float64, skiprows=1, ndmin=2, encoding="utf-8")
    except ValueError as e:
        # 行ごとの列数がそろっていない
        raise ShapeMismatchError(f"{path}: {rows}x{cols} として読めません: {e}") from e
    if values.size != rows * cols:
        raise ShapeMismatchError(f"{path}: 要素数 {values.size} が {rows}x{cols} と一致しません")
    return values.reshape(rows, cols)


def write_vector(path: PathLike, v: np.ndarray) -> None:
    np.savetxt(path, np.asarray(v, dtype=np.float64).ravel(), fmt=FLOAT_FMT, encoding="utf-8")


def read_vector(path: PathLike) -> np.ndarray:
    return np.loadtxt(path, dtype=np.float64, ndmin=1, encoding="utf-8")
