"""
全観測の理論 - 大域最適解集合、KL 指数 1/2 の標本プローブ、反例列、calmness の下界推定
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from src.errors import HypothesisError
from src.matcore.factors import FactorPair, stack
from src.matcore.linalg import procrustes
from src.objective.diagonal import DiagonalObjective, phi_tilde
from src.objective.factored import phi_gap, phi_grad
from src.theory.report import CheckResult, Premise, info, inequality, not_applicable

logger = logging.getLogger(__name__)

CENTER_ATOL = 1e-8
BOUNDARY_RTOL = 1e-9
RATIO_FLOOR = 1e-8


def _padded_sigma(Sigma: np.ndarray) -> np.ndarray:
    Sigma = np.asarray(Sigma, dtype=np.float64)
    if Sigma.ndim == 1:
        return Sigma
    return np.diag(Sigma)[: min(Sigma.shape)]


def global_set_fullobs(Sigma: np.ndarray, r: int, lam: float, check_gap: bool = True) -> Tuple[FactorPair, float]:
    """
    Φ̃_λ の大域最適解の代表元 (P = I, R = I) と最適値。
    Ū₁ = V̄₁ = (Σ₁ - λI)₊^{1/2}、最適値 = ½||z* - diag(Σ₁)||² + λ||z*||₁ + ½Σ_{i>r} σ_i²
    σ_r(Σ) > σ_{r+1}(Σ) が成り立たないと集合の特徴付けが崩れるので拒否する。
    """
    Sigma = np.asarray(Sigma, dtype=np.float64)
    if Sigma.ndim != 2:
        raise ValueError("Sigma は n×m の矩形対角行列である必要があります")
    n, m = Sigma.shape
    d = _padded_sigma(Sigma)
    if r < 1:
        raise ValueError(f"r は1以上である必要があります: {r}")
    s_r = float(d[r - 1]) if r <= d.size else 0.0
    s_next = float(d[r]) if r < d.size else 0.0
    if check_gap and not s_r > s_next:
        raise HypothesisError(f"σ_r(Σ) > σ_(r+1)(Σ) が必要です (σ_r={s_r:.6g}, σ_(r+1)={s_next:.6g})")

    top = d[: min(r, d.size)]
    z = np.maximum(top - lam, 0.0)
    U = np.zeros((n, r))
    V = np.zeros((m, r))
    idx = np.arange(z.size)
    U[idx, idx] = np.sqrt(z)
    V[idx, idx] = np.sqrt(z)
    value = 0.5 * float(np.sum((z - top) ** 2)) + lam * float(np.sum(z)) + 0.5 * float(np.sum(d[r:] ** 2))
    return FactorPair(U, V), value


# ---- KL 指数 1/2 の標本プローブ ----

def kl_delta(dobj: DiagonalObjective) -> Tuple[float, int, List[str]]:
    """
    球の半径の上限
      min{√(σ̃_k - λ)/2, (λ - σ̃_{k+1})/(2√σ̃₁), (σ̃_s - σ_{r+1})/(4√σ̃₁)}
    k = 0 では第1項、λ > σ_r では第3項を落とす。(δ, k, 落とした項の説明) を返す
    """
    distinct = dobj.distinct_top()
    lam = dobj.lam
    s = len(distinct)
    k = sum(1 for v in distinct if v > lam)
    root1 = math.sqrt(distinct[0])
    dropped: List[str] = []
    terms = []
    if k >= 1:
        terms.append(math.sqrt(distinct[k - 1] - lam) / 2.0)
    else:
        dropped.append("k = 0 のため √(σ̃_k - λ)/2 は無限大")
    below = distinct[k] if k < s else 0.0
    terms.append((lam - below) / (2.0 * root1))
    if lam > dobj.sigma(dobj.r):
        dropped.append("λ > σ_r のため (σ̃_s - σ_(r+1))/(4√σ̃₁) は不要")
    else:
        terms.append((distinct[-1] - dobj.sigma(dobj.r + 1)) / (4.0 * root1))
    return min(terms), k, dropped


def _ball_point(rng: np.random.Generator, shape_u, shape_v, radius: float) -> FactorPair:
    dim = int(np.prod(shape_u) + np.prod(shape_v))
    g = rng.standard_normal(dim)
    g *= radius * rng.uniform() ** (1.0 / dim) / np.linalg.norm(g)
    nU = int(np.prod(shape_u))
    return FactorPair(g[:nU].reshape(shape_u), g[nU:].reshape(shape_v))


def kl_probe(
    dobj: DiagonalObjective, center: FactorPair, samples: int = 200, seed: int = 0, require_global: bool = True,
    check_id: str = "kl.probe",
) -> CheckResult:
    """
    中心 (大域最適解) の δ 球から一様に標本を取り、Φ̃ が増える点での
    ||∇Φ̃||² / (Φ̃ - Φ̃(center)) の最小値 η̂ を求める。
    摂動は正準代表元の座標で取り、中心の回転 R で写すので η̂ は center·R に対して不変。
    require_global = False で大域解でない臨界点を渡すと判定せず info として記録する。
    """
    lam = dobj.lam
    distinct = dobj.distinct_top()
    sigma1 = distinct[0]
    premises = [Premise("positive-spectrum", sigma1 > 0, f"σ̃₁={sigma1:.6g}")]
    if sigma1 <= 0:
        return not_applicable(check_id, premises)
    margin = min(abs(lam - v) for v in distinct)
    premises.append(Premise("lambda-inside-gap", margin > BOUNDARY_RTOL * sigma1, f"min|λ - σ̃_j|={margin:.3e}"))
    gap_needed = not lam > dobj.sigma(dobj.r)
    if gap_needed:
        ok = dobj.sigma(dobj.r) > dobj.sigma(dobj.r + 1)
        premises.append(Premise("spectral-gap", ok, f"σ_r={dobj.sigma(dobj.r):.6g}, σ_(r+1)={dobj.sigma(dobj.r + 1):.6g}"))
    if not all(p.ok for p in premises):
        return not_applicable(check_id, premises)

    canonical, optimum = global_set_fullobs(dobj.sigma_matrix(), dobj.r, lam, check_gap=gap_needed)
    align = procrustes(stack(center), stack(canonical))
    tol = CENTER_ATOL * max(1.0, canonical.norm())
    is_global = align.distance <= tol
    premises.append(Premise("center-global", is_global or not require_global, f"dist(center, W̄_λ)={align.distance:.3e}"))
    if not premises[-1].ok:
        return not_applicable(check_id, premises, distance=align.distance)
    R = align.rotation if is_global else np.eye(center.r)

    delta, k, dropped = kl_delta(dobj)
    obj = dobj.as_objective()
    ratios: List[float] = []
    for child in np.random.SeedSequence(seed).spawn(samples):
        step = _ball_point(np.random.default_rng(child), center.U.shape, center.V.shape, delta)
        point = center + step.right_multiply(R)
        gap = phi_gap(obj, point, center)
        if gap > 0:
            ratios.append(phi_grad(obj, point).norm() ** 2 / gap)

    eta = min(ratios) if ratios else math.nan
    threshold = RATIO_FLOOR * lam
    values = {
        "delta": delta, "k": k, "s": len(distinct), "eta_hat": eta, "positive_samples": len(ratios),
        "samples": samples, "optimum": optimum, "center_value": phi_tilde(dobj, center), "is_global": is_global,
    }
    premises.append(Premise("positive-gap-samples", bool(ratios), f"{len(ratios)}/{samples}"))
    logger.debug("KL プローブ: λ=%.4g k=%d δ=%.4g η̂=%.4g", lam, k, delta, eta)
    if not is_global:
        notes = dropped + ["中心が大域最適解集合にないため δ 球の保証はありません"]
        return info(check_id, threshold, eta, notes=notes, distance=align.distance, **values)
    return inequality(check_id, threshold, eta, premises, scale=0.0, rtol=0.0, notes=dropped, **values)


# ---- 反例列 ----

@dataclass(frozen=True)
class CounterexamplePoint:
    k: int
    gap: float
    grad_sq: float

    @property
    def ratio(self) -> float:
        return self.grad_sq / self.gap


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    resid_se: float
    points: int


@dataclass
class CounterexampleResult:
    a: float
    lam: float
    points: List[CounterexamplePoint] = field(default_factory=list)
    gap_fit: Optional[SlopeFit] = None
    grad_fit: Optional[SlopeFit] = None

    @property
    def base_value(self) -> float:
        return counterexample_base_value(self.a, self.lam)

    @property
    def ratio_limit(self) -> float:
        """k → ∞ での grad²/gap の極限 2d(1 + (2 + 2√d)²)/(1 + 4√d + 2d)"""
        d = self.a - self.lam
        s = math.sqrt(d)
        return 2.0 * d * (1.0 + (2.0 + 2.0 * s) ** 2) / (1.0 + 4.0 * s + 2.0 * d)

    def ratios(self) -> np.ndarray:
        return np.array([p.ratio for p in self.points])


def counterexample_base_value(a: float, lam: float) -> float:
    return 0.5 * (a * a + lam * lam) + lam * (a - lam)


def _closed_form(a: float, lam: float, k: int) -> Tuple[float, float]:
    """
    x = 1/k⁴, s = √d とすると
      gap   = x²[(1 + 4s + 2d) + (2 + 2s)x + ½x²]
      grad² = 2x²[(s + x)²(1 + (2 + 2s + x)²) + 2x(1 + 2s + x)²]
    値の差を直接取ると k が大きいとき桁落ちするので多項式で評価する
    """
    d = a - lam
    s = math.sqrt(d)
    x = 1.0 / float(k) ** 4
    c = s + x
    gap = x * x * ((1.0 + 4.0 * s + 2.0 * d) + (2.0 + 2.0 * s) * x + 0.5 * x * x)
    grad_sq = 2.0 * x * x * (c * c * (1.0 + (2.0 + 2.0 * s + x) ** 2) + 2.0 * x * (1.0 + 2.0 * s + x) ** 2)
    return gap, grad_sq


def counterexample_objective(a: float, lam: float) -> DiagonalObjective:
    """Σ = aI (2×2), r = 2"""
    return DiagonalObjective(np.array([a, a]), 2, 2, lam, 2)


def counterexample_center(a: float, lam: float) -> FactorPair:
    """Ū₁ = V̄₁ = Diag(0, √(a - λ)) (大域最適でない臨界点)"""
    U = np.diag([0.0, math.sqrt(a - lam)])
    return FactorPair(U, U.copy())


def counterexample_pair(a: float, lam: float, k: int) -> FactorPair:
    """U₁^k = V₁^k = [[0, 1/k²], [1/k², √d + 1/k⁴]]"""
    e = 1.0 / float(k) ** 2
    U = np.array([[0.0, e], [e, math.sqrt(a - lam) + e * e]])
    return FactorPair(U, U.copy())


def counterexample_point_direct(a: float, lam: float, k: int) -> CounterexamplePoint:
    """2×2 の Φ̃_λ を直接評価する照合用の経路 (k が小さいときのみ精度が出る)"""
    obj = counterexample_objective(a, lam).as_objective()
    fp = counterexample_pair(a, lam, k)
    gap = phi_gap(obj, fp, counterexample_center(a, lam))
    return CounterexamplePoint(k, gap, phi_grad(obj, fp).norm() ** 2)


def fit_loglog(ks: np.ndarray, values: np.ndarray) -> SlopeFit:
    """log(value) = slope·log(k) + intercept の最小二乗、残差標準誤差付き"""
    x = np.log(np.asarray(ks, dtype=np.float64))
    y = np.log(np.asarray(values, dtype=np.float64))
    A = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    dof = max(x.size - 2, 1)
    return SlopeFit(float(coef[0]), float(coef[1]), float(math.sqrt(np.sum(resid**2) / dof)), int(x.size))


def counterexample_sequence(a: float = 2.0, lam: float = 1.0, k_max: int = 200) -> CounterexampleResult:
    """k = 1..k_max の列を作り、k ∈ [k_max/10, k_max] で両対数の傾きを当てはめる"""
    if not 0 < lam < a:
        raise ValueError(f"0 < λ < a が必要です (λ={lam}, a={a})")
    if k_max < 20:
        raise ValueError(f"k_max は20以上である必要があります: {k_max}")
    result = CounterexampleResult(a, lam)
    for k in range(1, k_max + 1):
        gap, grad_sq = _closed_form(a, lam, k)
        result.points.append(CounterexamplePoint(k, gap, grad_sq))
    window = [p for p in result.points if p.k >= math.ceil(k_max / 10)]
    ks = np.array([p.k for p in window])
    result.gap_fit = fit_loglog(ks, np.array([p.gap for p in window]))
    result.grad_fit = fit_loglog(ks, np.array([p.grad_sq for p in window]))
    return result


def counterexample_checks(result: CounterexampleResult, direct_k: int = 5) -> List[CheckResult]:
    """反例列の記録。主張された減衰次数との対応と比の振る舞いを残す"""
    checks: List[CheckResult] = []
    dobj = counterexample_objective(result.a, result.lam)
    base = phi_tilde(dobj, counterexample_center(result.a, result.lam))
    checks.append(inequality(
        "counterexample.base-value", abs(base - result.base_value), 1e-12 * max(1.0, abs(result.base_value)), [],
        scale=0.0, rtol=0.0, computed=base, formula=result.base_value,
    ))

    direct = counterexample_point_direct(result.a, result.lam, direct_k)
    closed = result.points[direct_k - 1]
    rel = max(abs(direct.gap - closed.gap) / closed.gap, abs(direct.grad_sq - closed.grad_sq) / closed.grad_sq)
    checks.append(inequality("counterexample.closed-form", rel, 1e-6, [], scale=0.0, rtol=0.0, k=direct_k))

    gf, hf = result.gap_fit, result.grad_fit
    checks.append(info(
        "counterexample.gap-slope", gf.slope, -4.0,
        notes=["gap は k^-8 で減衰するため O(k^-4) は上界としてのみ成り立ちます"],
        resid_se=gf.resid_se, points=gf.points,
    ))
    checks.append(inequality(
        "counterexample.grad-slope", abs(hf.slope + 8.0), 0.3, [], scale=0.0, rtol=0.0,
        slope=hf.slope, resid_se=hf.resid_se, points=hf.points,
    ))

    ratios = result.ratios()[4:]
    steps = np.diff(ratios)
    checks.append(inequality(
        "counterexample.ratio-decreasing", float(np.max(steps)) if steps.size else 0.0, 0.0, [], scale=0.0, rtol=0.0,
        strict=bool(np.all(steps < 0)),
    ))
    checks.append(info(
        "counterexample.ratio-limit", float(ratios[-1]), result.ratio_limit,
        notes=["grad²/gap は正の極限に収束するため、この列は η > 0 の不在を示しません"],
    ))
    return checks


# ---- calmness ----

def _upsilon(inst, fp: FactorPair) -> Tuple[np.ndarray, np.ndarray]:
    """Υ₁ = [2·scale·A*A(UV^T - M*)]V, Υ₂ = [2·scale·A*A(UV^T - M*)]^T U"""
    op = inst.operator
    H = 2.0 * op.scale * op.adjoint(op.apply(fp.product() - inst.M_star))
    return H @ fp.V, H.T @ fp.U


def calmness_trace(inst, center: FactorPair, eps_ball: float, samples: int = 200, seed: int = 0) -> np.ndarray:
    """標本ごとの (ĉ₁, ĉ₂) の累積最大 (samples×2)。同じ seed なら前半の標本は共通"""
    if eps_ball <= 0:
        raise ValueError(f"eps_ball は正である必要があります: {eps_ball}")
    base1, base2 = _upsilon(inst, center)
    out = np.zeros((samples, 2))
    c1 = c2 = 0.0
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(samples)):
        step = _ball_point(np.random.default_rng(child), center.U.shape, center.V.shape, eps_ball)
        dist = step.norm()
        if dist > 0:
            u1, u2 = _upsilon(inst, center + step)
            c1 = max(c1, float(np.linalg.norm(u1 - base1)) / dist)
            c2 = max(c2, float(np.linalg.norm(u2 - base2)) / dist)
        out[i] = (c1, c2)
    return out


def calmness_estimate(
    inst, center: FactorPair, eps_ball: float, samples: int = 200, seed: int = 0,
) -> Tuple[float, float]:
    """calmness モジュラスの標本下界 (ĉ₁, ĉ₂)。下界なので閾値を満たしても示唆にとどまる"""
    trace = calmness_trace(inst, center, eps_ball, samples, seed)
    if samples == 0:
        return 0.0, 0.0
    return float(trace[-1, 0]), float(trace[-1, 1])


def oracle_audit(dobj: DiagonalObjective, fp: FactorPair, value_rtol: float = 1e-8, product_rtol: float = 1e-6) -> List[CheckResult]:
    """ソルバーの出力を global_set_fullobs の閉形式解と比べる (目的関数値と積 UV^T)"""
    lam = dobj.lam
    ok = dobj.sigma(dobj.r) > dobj.sigma(dobj.r + 1)
    premises = [Premise("spectral-gap", ok, f"σ_r={dobj.sigma(dobj.r):.6g}, σ_(r+1)={dobj.sigma(dobj.r + 1):.6g}")]
    ids = ("fullobs.oracle-value", "fullobs.oracle-product")
    if not ok:
        return [not_applicable(cid, premises) for cid in ids]

    best, optimum = global_set_fullobs(dobj.sigma_matrix(), dobj.r, lam)
    value = phi_tilde(dobj, fp)
    X_opt = best.product()
    ref = float(np.linalg.norm(X_opt))
    err = float(np.linalg.norm(fp.product() - X_opt))
    return [
        inequality(
            ids[0], abs(value - optimum), value_rtol * max(1.0, abs(optimum)), premises, scale=0.0, rtol=0.0,
            value=value, optimum=optimum,
        ),
        inequality(ids[1], err, product_rtol * (ref if ref > 0 else 1.0), premises, scale=0.0, rtol=0.0, reference_norm=ref),
    ]
