"""
実験設定 - JSON を jsonschema (Draft 2020-12) で検証し ExperimentConfig に読み込む
"""

import copy
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
from jsonschema import Draft202012Validator

from src import __version__
from src.errors import ConfigError
from src.sampling.instance import NoiseSpec, OperatorSpec, RecoveryInstance, noise_adjoint_norm
from src.solvers.aal import AalConfig
from src.solvers.apg import ApgConfig
from src.test_data import DEFAULT_CONFIGS

logger = logging.getLogger(__name__)

KINDS = ("rmse-sweep", "convergence", "verify", "counterexample")
LAMBDA_RULES = ("absolute", "nu-times-noise", "fraction-of-sigma")

_POSITIVE_INT = {"type": "integer", "minimum": 1}

SCHEMA: Dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "ExperimentConfig",
    "type": "object",
    "required": ["kind", "n", "m", "r_star", "trials", "seed"],
    "additionalProperties": False,
    "properties": {
        "kind": {"enum": list(KINDS)},
        "n": _POSITIVE_INT,
        "m": _POSITIVE_INT,
        "r_star": _POSITIVE_INT,
        "r": {"type": ["integer", "null"], "minimum": 1},
        "operator": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["gaussian", "full", "weighted", "mask"]},
                "p": {"type": ["integer", "null"], "minimum": 1},
                "loss_scale": {"enum": ["per-measurement", "unit"]},
                "weight_range": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 2, "maxItems": 2},
                "mask_prob": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
            },
        },
        "noise": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"const": "gaussian"},
                "calibration": {"enum": ["absolute", "relative", "relative-spectral"]},
                "sigma": {"type": "number", "minimum": 0},
                "ratio": {"type": "number", "minimum": 0},
            },
        },
        "lambda_rule": {
            "type": "object",
            "required": ["kind", "grid"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": list(LAMBDA_RULES)},
                "grid": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
                "index": {"type": ["integer", "null"], "minimum": 1},
            },
        },
        "aal": {"type": "object"},
        "apg": {"type": "object"},
        "trials": _POSITIVE_INT,
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string", "minLength": 1},
        "verify": {
            "type": "object",
            "properties": {
                "spectrum": {
                    "type": ["object", "null"],
                    "required": ["alpha", "beta"],
                    "properties": {
                        "alpha": {"type": "number", "exclusiveMinimum": 0},
                        "beta": {"type": "number", "exclusiveMinimum": 0},
                    },
                },
                "lemma21_samples": _POSITIVE_INT,
            },
        },
        "counterexample": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "a": {"type": "number", "exclusiveMinimum": 0},
                "lam": {"type": "number", "exclusiveMinimum": 0},
                "k_max": {"type": "integer", "minimum": 20},
            },
        },
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    n: int
    m: int
    r_star: int
    r: Optional[int] = None
    operator: Dict[str, Any] = field(default_factory=dict)
    noise: Dict[str, Any] = field(default_factory=dict)
    lambda_rule: Dict[str, Any] = field(default_factory=dict)
    aal: Dict[str, Any] = field(default_factory=dict)
    apg: Dict[str, Any] = field(default_factory=dict)
    trials: int = 1
    seed: int = 0
    output_dir: str = "results"
    verify: Dict[str, Any] = field(default_factory=dict)
    counterexample: Dict[str, Any] = field(default_factory=dict)

    @property
    def rank(self) -> int:
        """因子の列数 r (省略時は r*)"""
        return self.r if self.r is not None else self.r_star

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def config_hash(self) -> str:
        return canonical_hash(self.to_dict())

    def meta(self) -> Dict[str, str]:
        """出力ファイルに埋め込むメタ情報"""
        return {"config_hash": self.config_hash(), "version": __version__, "kind": self.kind, "seed": str(self.seed)}

    def operator_spec(self) -> OperatorSpec:
        return _build(OperatorSpec.from_dict, self.operator, "operator")

    def noise_spec(self) -> NoiseSpec:
        return _build(NoiseSpec.from_dict, self.noise, "noise")

    def aal_config(self, **overrides) -> AalConfig:
        return _build(lambda d: AalConfig(**d), dict(self.aal, **overrides), "aal")

    def apg_config(self, lam: float, **overrides) -> ApgConfig:
        return _build(lambda d: ApgConfig(**d), dict(self.apg, lam=lam, **overrides), "apg")

    def lambda_grid(self) -> List[float]:
        return [float(v) for v in self.lambda_rule.get("grid", [])]

    def with_output_dir(self, output_dir: Union[str, Path]) -> "ExperimentConfig":
        d = self.to_dict()
        d["output_dir"] = str(output_dir)
        return ExperimentConfig(**d)


def canonical_hash(payload: Dict[str, Any]) -> str:
    """キーを整列した JSON の SHA-256"""
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _build(factory, d: Dict[str, Any], section: str):
    try:
        return factory(d)
    except TypeError as e:
        raise ConfigError(f"設定 '{section}' に不明な項目があります: {e}")


def _merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def validate_config(raw: Dict[str, Any]) -> None:
    errors = sorted(Draft202012Validator(SCHEMA).iter_errors(raw), key=lambda e: [str(p) for p in e.absolute_path])
    if errors:
        lines = []
        for err in errors:
            where = "/".join(str(p) for p in err.absolute_path) or "(root)"
            lines.append(f"{where}: {err.message}")
        raise ConfigError("設定ファイルが不正です:\n  " + "\n  ".join(lines))


def config_from_dict(raw: Dict[str, Any], seed: Optional[int] = None) -> ExperimentConfig:
    """種別の既定値に raw を重ねて検証する。seed は --seed の上書き"""
    kind = raw.get("kind")
    if kind not in DEFAULT_CONFIGS:
        raise ConfigError(f"kind は {KINDS} のいずれかです: {kind!r}")
    merged = _merge(DEFAULT_CONFIGS[kind], raw)
    if seed is not None:
        merged["seed"] = int(seed)
    validate_config(merged)
    config = ExperimentConfig(**merged)
    if config.rank < 1:
        raise ConfigError(f"r は1以上である必要があります: {config.rank}")
    logger.debug("設定を読み込みました: kind=%s hash=%s", config.kind, config.config_hash()[:12])
    return config


def load_config(path: Union[str, Path], seed: Optional[int] = None) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"設定ファイルが見つかりません: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"設定ファイルの JSON が不正です: {path}: {e}")
    if not isinstance(raw, dict):
        raise ConfigError(f"設定ファイルのトップレベルはオブジェクトである必要があります: {path}")
    return config_from_dict(raw, seed)


def default_config(kind: str, seed: Optional[int] = None) -> ExperimentConfig:
    return config_from_dict({"kind": kind}, seed)


def resolve_lambda(rule: Dict[str, Any], inst: RecoveryInstance, value: float) -> float:
    """
    absolute           λ = value
    nu-times-noise     λ = value·||∇f(M*)|| (unit スケールのガウスでは ||A*(ω)||)
    fraction-of-sigma  λ = value·σ_index(M)、M = A*(y)、index の既定は r*
    """
    kind = rule.get("kind", "absolute")
    if kind == "absolute":
        return float(value)
    if kind == "nu-times-noise":
        noise = noise_adjoint_norm(inst)
        if noise <= 0:
            raise ConfigError("ノイズがないため nu-times-noise で λ を決められません")
        return float(value) * noise
    if kind == "fraction-of-sigma":
        index = rule.get("index") or inst.r_star
        s = np.linalg.svd(inst.observed_matrix(), compute_uv=False)
        if index > s.size:
            raise ConfigError(f"index={index} が特異値の数 {s.size} を超えています")
        return float(value) * float(s[index - 1])
    raise ConfigError(f"未知の λ 規則です: {kind}")
