"""
共通フィクスチャ - 小さな対角問題と全観測・ガウスのインスタンス
"""

import numpy as np
import pytest

from src.objective.diagonal import DiagonalObjective
from src.sampling.instance import NoiseSpec, OperatorSpec, generate_instance


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def diag_small():
    # σ = (5, 4, 3, 0.5, 0.4, ...)、λ = 1 なので上位3成分だけが残る
    d = np.array([5.0, 4.0, 3.0, 0.5, 0.4, 0.3, 0.2, 0.1])
    return DiagonalObjective(d, 10, 10, 1.0, 3)


@pytest.fixture
def full_instance():
    spec = OperatorSpec(kind="full")
    noise = NoiseSpec(calibration="relative-spectral", ratio=0.1)
    return generate_instance(20, 20, 2, spec, noise, seed=7)


@pytest.fixture
def gaussian_instance():
    spec = OperatorSpec(kind="gaussian", p=150, loss_scale="unit")
    noise = NoiseSpec(calibration="relative", ratio=0.05)
    return generate_instance(10, 10, 2, spec, noise, seed=11)
