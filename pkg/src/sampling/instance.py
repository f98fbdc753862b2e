"""
復元問題インスタンス - M* = U* V*^T の生成、ノイズ校正、観測 y = A(M*) + ω
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np

from src import __version__
from src.errors import ConfigError, RankConstraintError
from src.matcore.linalg import numerical_rank
from src.matcore.matrix_io import read_matrix, read_vector, write_matrix, write_vector
from src.sampling.operators import (
    BernoulliMask,
    GaussianSensing,
    SamplingOperator,
    WeightedHadamard,
    make_bernoulli_mask,
    make_full_observation,
    make_gaussian_sensing,
    make_weighted_hadamard,
)

logger = logging.getLogger(__name__)

SeedLike = Union[int, np.random.SeedSequence]
CALIBRATIONS = ("absolute", "relative", "relative-spectral")
OPERATOR_KINDS = ("gaussian", "full", "weighted", "mask")


@dataclass(frozen=True)
class NoiseSpec:
    """
    calibration:
      absolute          ω = sigma·ξ
      relative          σ_ω = ratio·||A(M*)|| / ||ξ||
      relative-spectral 行列ノイズ E = ratio·||M*||₂ / ||B||_F · B を加え ω = A(E)
    """

    kind: str = "gaussian"
    calibration: str = "absolute"
    sigma: float = 0.0
    ratio: float = 0.0

    def __post_init__(self):
        if self.kind != "gaussian":
            raise ConfigError(f"未対応のノイズ種別です: {self.kind}")
        if self.calibration not in CALIBRATIONS:
            raise ConfigError(f"calibration は {CALIBRATIONS} のいずれかです: {self.calibration}")
        if self.sigma < 0 or self.ratio < 0:
            raise ConfigError("sigma と ratio は非負である必要があります")

    @classmethod
    def from_dict(cls, d: Optional[Dict]) -> "NoiseSpec":
        return cls(**(d or {}))


@dataclass(frozen=True)
class OperatorSpec:
    kind: str = "full"
    p: Optional[int] = None
    loss_scale: str = "per-measurement"
    weight_range: Tuple[float, float] = (0.9, 1.1)
    mask_prob: float = 0.5

    def __post_init__(self):
        if self.kind not in OPERATOR_KINDS:
            raise ConfigError(f"作用素種別は {OPERATOR_KINDS} のいずれかです: {self.kind}")
        if self.kind == "gaussian" and (self.p is None or self.p < 1):
            raise ConfigError("ガウスセンシングには測定数 p が必要です")

    @classmethod
    def from_dict(cls, d: Optional[Dict]) -> "OperatorSpec":
        d = dict(d or {})
        if "weight_range" in d:
            d["weight_range"] = tuple(d["weight_range"])
        return cls(**d)

    def build(self, n: int, m: int, seed: SeedLike) -> SamplingOperator:
        if self.kind == "gaussian":
            return make_gaussian_sensing(n, m, self.p, seed, loss_scale=self.loss_scale)
        if self.kind == "full":
            return make_full_observation(n, m)
        if self.kind == "weighted":
            lo, hi = self.weight_range
            rng = np.random.default_rng(seed)
            return make_weighted_hadamard(rng.uniform(lo, hi, size=(n, m)))
        return make_bernoulli_mask(n, m, self.mask_prob, seed)


@dataclass
class RecoveryInstance:
    M_star: np.ndarray
    operator: SamplingOperator
    omega: np.ndarray
    y: np.ndarray
    r_star: int
    seed: int
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    sigma_omega: float = 0.0
    noise_matrix: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.M_star.shape[0]

    @property
    def m(self) -> int:
        return self.M_star.shape[1]

    @property
    def p(self) -> int:
        return self.operator.p

    def observed_matrix(self) -> np.ndarray:
        """全観測のとき M = M* + E"""
        return self.operator.adjoint(self.y)


def check_rank_budget(n: int, m: int, r_star: int) -> None:
    if r_star < 1 or 4 * r_star > min(n, m):
        raise RankConstraintError(f"真のランクは 1 <= r* かつ 4r* <= min(n, m) が必要です (r*={r_star}, n={n}, m={m})")


def convergence_noise(M_star: np.ndarray, ratio: float, seed) -> np.ndarray:
    """E = ratio·||M*||₂ / ||B||_F · B (B は標準正規)"""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    B = rng.standard_normal(M_star.shape)
    return ratio * float(np.linalg.norm(M_star, 2)) / float(np.linalg.norm(B)) * B


def generate_instance(
    n: int, m: int, r_star: int, operator_spec: OperatorSpec, noise: NoiseSpec, seed: int,
) -> RecoveryInstance:
    check_rank_budget(n, m, r_star)
    factor_ss, op_ss, noise_ss = np.random.SeedSequence(seed).spawn(3)

    rng = np.random.default_rng(factor_ss)
    U_star = rng.standard_normal((n, r_star))
    V_star = rng.standard_normal((m, r_star))
    M_star = U_star @ V_star.T
    if numerical_rank(M_star, tol=1e-10) != r_star:
        raise RankConstraintError(f"生成した M* のランクが r*={r_star} になりません")

    op = operator_spec.build(n, m, op_ss)
    signal = op.apply(M_star)

    noise_rng = np.random.default_rng(noise_ss)
    noise_matrix = None
    sigma_omega = 0.0
    if noise.calibration == "relative-spectral":
        noise_matrix = convergence_noise(M_star, noise.ratio, noise_rng)
        omega = op.apply(noise_matrix)
        sigma_omega = float(np.linalg.norm(noise_matrix) / np.sqrt(n * m))
    else:
        xi = noise_rng.standard_normal(op.p)
        if noise.calibration == "absolute":
            sigma_omega = noise.sigma
        else:
            sigma_omega = noise.ratio * float(np.linalg.norm(signal)) / float(np.linalg.norm(xi))
        omega = sigma_omega * xi

    logger.debug("インスタンス生成: n=%d m=%d r*=%d p=%d σ_ω=%.4g", n, m, r_star, op.p, sigma_omega)
    return RecoveryInstance(
        M_star=M_star, operator=op, omega=omega, y=signal + omega, r_star=r_star, seed=seed,
        noise=noise, sigma_omega=sigma_omega, noise_matrix=noise_matrix,
    )


def weighted_pca_instance(
    n: int, m: int, r_star: int, weight_range: Tuple[float, float], ratio: float, seed: int,
) -> RecoveryInstance:
    """重み付きPCA: Y = H∘(M* + E)"""
    spec = OperatorSpec(kind="weighted", weight_range=weight_range)
    return generate_instance(n, m, r_star, spec, NoiseSpec(calibration="relative-spectral", ratio=ratio), seed)


def noise_adjoint_norm(inst: RecoveryInstance) -> float:
    """||2·scale·A*(ω)|| = ||∇f(M*)||"""
    op = inst.operator
    if not np.any(inst.omega):
        return 0.0
    return float(np.linalg.norm(2.0 * op.scale * op.adjoint(inst.omega), 2))


# ---- 保存と読み込み ----

def save_instance(inst: RecoveryInstance, directory: Union[str, Path]) -> Path:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    op = inst.operator
    meta = {
        "version": __version__,
        "n": inst.n,
        "m": inst.m,
        "r_star": inst.r_star,
        "p": inst.p,
        "seed": inst.seed,
        "noise": asdict(inst.noise),
        "sigma_omega": inst.sigma_omega,
        "operator": op.metadata(),
    }
    with open(out / "metadata.json", "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
    write_matrix(out / "M_star.txt", inst.M_star)
    write_vector(out / "y.txt", inst.y)
    write_vector(out / "omega.txt", inst.omega)
    if inst.noise_matrix is not None:
        write_matrix(out / "E.txt", inst.noise_matrix)
    if isinstance(op, GaussianSensing):
        write_matrix(out / "A.txt", op.matrices.reshape(op.p * op.n, op.m))
    elif isinstance(op, WeightedHadamard):
        write_matrix(out / "H.txt", op.H)
    elif isinstance(op, BernoulliMask):
        write_matrix(out / "mask.txt", op.mask.astype(np.float64))
    logger.info("インスタンスを保存しました: %s", out)
    return out


def load_instance(directory: Union[str, Path]) -> RecoveryInstance:
    src = Path(directory)
    with open(src / "metadata.json", "r", encoding="utf-8") as f:
        meta = json.load(f)
    n, m = meta["n"], meta["m"]
    op_meta = meta["operator"]
    kind = op_meta["kind"]
    if kind == "gaussian":
        A = read_matrix(src / "A.txt").reshape(op_meta["p"], n, m)
        op: SamplingOperator = GaussianSensing(A, loss_scale=op_meta.get("loss_scale", "per-measurement"))
    elif kind == "full":
        op = make_full_observation(n, m)
    elif kind == "weighted":
        op = make_weighted_hadamard(read_matrix(src / "H.txt"))
    elif kind == "mask":
        op = BernoulliMask(read_matrix(src / "mask.txt") > 0.5)
    else:
        raise ConfigError(f"未知の作用素種別です: {kind}")
    omega = read_vector(src / "omega.txt")
    noise = NoiseSpec.from_dict(meta.get("noise"))
    noise_matrix = None
    if (src / "E.txt").exists():
        noise_matrix = read_matrix(src / "E.txt")
    elif kind == "full" and noise.calibration == "relative-spectral":
        # 全観測では ω = vec(E)
        noise_matrix = op.adjoint(omega)
    return RecoveryInstance(
        M_star=read_matrix(src / "M_star.txt"),
        operator=op,
        omega=omega,
        y=read_vector(src / "y.txt"),
        r_star=int(meta["r_star"]),
        seed=int(meta["seed"]),
        noise=noise,
        sigma_omega=float(meta.get("sigma_omega", 0.0)),
        noise_matrix=noise_matrix,
    )
