"""
理論監査 - 臨界点の誤差限界、補題の不等式、釣り合い性、対角問題の臨界点集合、
凸問題との同値性、RSC/RSS 不等式、ノイズ量の減衰率を数値で確かめる。
前提を確認できない監査は例外を投げずに not-applicable を返す。
"""

import logging
import math
from typing import List, Optional, Tuple

import numpy as np
import scipy.linalg

from src.matcore.factors import FactorPair, stack
from src.matcore.linalg import numerical_rank, procrustes, thin_svd
from src.objective.diagonal import lemma21_check
from src.objective.factored import (
    EigProbeResult,
    RegularizedObjective,
    min_eig_hessian,
    phi_grad_norm,
    phi_hess_quadform,
    phi_value,
    psd_threshold,
    xi_matrix,
    xi_norm,
)
from src.objective.loss import LeastSquaresLoss
from src.sampling.instance import NoiseSpec, OperatorSpec, generate_instance, noise_adjoint_norm
from src.sampling.spectrum import SpectrumEstimate, random_unit_rank_matrix
from src.solvers.apg import nuclear_norm, nuclear_objective
from src.theory.constants import ADMISSIBLE_RATIO, gamma_hat
from src.theory.report import CheckResult, Premise, inequality, not_applicable

logger = logging.getLogger(__name__)

# 臨界点とみなす勾配残差 ||∇Φ|| <= CRITICAL_RTOL·(1 + ||y||)
CRITICAL_RTOL = 1e-8
AUDIT_RTOL = 1e-6
IDENTITY_RTOL = 1e-8
BALANCE_RTOL = 1e-6
PRODUCT_RANK_TOL = 1e-6
# σ(UV^T) = σ(V)² なので因子のランク判定は √τ
FACTOR_RANK_TOL = 1e-3
SPECTRUM_NOTE = "制限スペクトルはモンテカルロ推定値であり証明書ではありません"


def true_factor(M_star: np.ndarray, r_star: int) -> np.ndarray:
    """W* = (P₁Σ₁^{1/2}; Q₁Σ₁^{1/2}) (M* の上位 r* 特異対、R = I)"""
    svd = thin_svd(M_star).truncate(r_star)
    root = np.sqrt(svd.singulars)
    return np.vstack([svd.left * root, svd.right * root])


def _objective(inst, lam: float, r: int) -> RegularizedObjective:
    return RegularizedObjective(LeastSquaresLoss.from_instance(inst), lam, r)


def _critical_premise(obj: RegularizedObjective, fp: FactorPair) -> Premise:
    grad = phi_grad_norm(obj, fp)
    bound = CRITICAL_RTOL * (1.0 + obj.loss.y_norm)
    return Premise("critical-point", grad <= bound, f"||∇Φ||={grad:.3e}, 許容 {bound:.3e}")


def _rank_premise(fp: FactorPair, r_star: int) -> Premise:
    rank = numerical_rank(fp.product(), PRODUCT_RANK_TOL)
    return Premise("rank-at-most-r-star", rank <= r_star, f"rank(UV^T)={rank}, r*={r_star}")


def _psd_premise(probe: EigProbeResult) -> Premise:
    ok = probe.converged and probe.psd
    return Premise(
        "psd-hessian", ok,
        f"最小固有値 {probe.value:.3e} (閾値 {probe.threshold:.3e}, {probe.method}, converged={probe.converged})",
    )


def _loss_spectrum(spectrum: SpectrumEstimate, loss: LeastSquaresLoss) -> Tuple[SpectrumEstimate, List[str]]:
    spec = spectrum.for_loss(loss.scale)
    return spec, ([] if spectrum.exact else [SPECTRUM_NOTE])


def _gram_gap(W: np.ndarray, W_star: np.ndarray) -> np.ndarray:
    return W @ W.T - W_star @ W_star.T


def error_bound_audit(
    inst, fp: FactorPair, lam: float, spectrum: SpectrumEstimate, probe: Optional[EigProbeResult] = None,
) -> List[CheckResult]:
    """
    臨界点 (U, V) の誤差限界の連鎖
      2||UV^T - M*||² <= ||WW^T - W*W*^T||² <= γ̂r*||Ξ(M*)||² <= 2γ̂r*(λ² + ||∇f(M*)||²)
    と、そこから従う ||UV^T - M*|| <= √(γ̂r*)(λ + ||∇f(M*)||)
    """
    obj = _objective(inst, lam, fp.r)
    loss = obj.loss
    r_star = inst.r_star
    spec, notes = _loss_spectrum(spectrum, loss)
    consts = gamma_hat(spec.alpha, spec.beta)
    if probe is None:
        probe = min_eig_hessian(obj, fp)

    premises = [
        _critical_premise(obj, fp),
        _rank_premise(fp, r_star),
        _psd_premise(probe),
        Premise(
            "admissible-spectrum", consts.admissible,
            f"β/α={consts.ratio:.4g} (上限 {ADMISSIBLE_RATIO}), γ₁={consts.gamma1:.4g}",
        ),
    ]
    if not consts.admissible:
        notes = notes + ["β/α が許容範囲外のため γ̂ は定義されません"]

    M_star = inst.M_star
    W_star = true_factor(M_star, r_star)
    G = _gram_gap(stack(fp), W_star)
    err = float(np.linalg.norm(fp.product() - M_star))
    gram = float(np.linalg.norm(G))
    xi = xi_norm(loss, M_star, lam)
    g = float(np.linalg.norm(loss.grad(M_star), 2))
    gh = consts.gamma_hat
    floor = 1e-12 * (1.0 + float(np.sum(M_star**2)))
    values = dict(consts.to_dict(), r_star=r_star, xi_norm=xi, grad_norm_at_truth=g, min_eig=probe.value)

    chain = [
        ("error-bound.product-vs-gram", 2.0 * err**2, gram**2),
        ("error-bound.gram-vs-xi", gram**2, gh * r_star * xi**2),
        ("error-bound.xi-bound", gh * r_star * xi**2, 2.0 * gh * r_star * (lam**2 + g**2)),
        ("error-bound.final", err, math.sqrt(gh * r_star) * (lam + g) if consts.admissible else math.nan),
    ]
    return [
        inequality(cid, lhs, rhs, premises, rtol=AUDIT_RTOL, atol=floor, notes=notes, **values)
        for cid, lhs, rhs in chain
    ]


def _column_basis(W: np.ndarray) -> np.ndarray:
    svd = thin_svd(W, tol=FACTOR_RANK_TOL)
    return svd.left[:, : svd.rank]


def lemma31_audit(inst, fp: FactorPair, lam: float, spectrum: SpectrumEstimate) -> List[CheckResult]:
    """
    Γ = (WW^T - W*W*^T)QQ^T (Q は col(W) の正規直交基底) について
      ½||Γ||² + 2/(α+β)<Ξ(M*), Γ> <= (β-α)/(α+β)·||UV^T - M*||·||Γ||
    とその帰結 (中間不等式と 15/64 の不等式)
    """
    obj = _objective(inst, lam, fp.r)
    loss = obj.loss
    r_star = inst.r_star
    spec, notes = _loss_spectrum(spectrum, loss)
    a, b = spec.alpha, spec.beta
    premises = [_critical_premise(obj, fp), _rank_premise(fp, r_star)]

    W = stack(fp)
    G = _gram_gap(W, true_factor(inst.M_star, r_star))
    Q = _column_basis(W)
    Gamma = G @ Q @ Q.T
    gam = float(np.linalg.norm(Gamma))
    xi_star = xi_matrix(loss, inst.M_star, lam)
    xi_inner = float(np.vdot(xi_star, Gamma))
    xi_n = float(scipy.linalg.norm(xi_star, 2))
    err = float(np.linalg.norm(fp.product() - inst.M_star))
    gram = float(np.linalg.norm(G))
    floor = 1e-12 * (1.0 + float(np.sum(inst.M_star**2)))
    values = {"alpha": a, "beta": b, "gamma_norm": gam, "basis_rank": Q.shape[1], "r_star": r_star}

    lhs = 0.5 * gam**2 + 2.0 / (a + b) * xi_inner
    rhs = (b - a) / (a + b) * err * gam
    scale = 0.5 * gam**2 + 2.0 / (a + b) * abs(xi_inner) + abs(rhs)
    checks = [inequality("lemma31", lhs, rhs, premises, scale=scale, rtol=AUDIT_RTOL, atol=floor, notes=notes, **values)]

    lhs = 0.5 * gam**2
    rhs = 2.0 * math.sqrt(r_star) / (a + b) * xi_n * gam + (b - a) / (a + b) * err * gam
    checks.append(inequality("lemma31.consequence-intermediate", lhs, rhs, premises, rtol=AUDIT_RTOL, atol=floor, notes=notes, **values))

    lhs = 15.0 / 64.0 * gam**2
    rhs = 64.0 * r_star / (a + b) ** 2 * xi_n**2 + (b - a) ** 2 / (2.0 * (a + b) ** 2) * gram**2
    checks.append(inequality("lemma31.consequence-fcond", lhs, rhs, premises, rtol=AUDIT_RTOL, atol=floor, notes=notes, **values))
    return checks


def lemma32_audit(
    inst, fp: FactorPair, lam: float, spectrum: SpectrumEstimate, probe: Optional[EigProbeResult] = None,
) -> List[CheckResult]:
    """
    Δ = W - [W* 0]R* (R* は Procrustes 解) に沿ったヘッセ恒等式、
    ||WΔ^T||² の下界、および W^T W* R₁* が対称半正定値であること
    """
    obj = _objective(inst, lam, fp.r)
    loss = obj.loss
    r, r_star = fp.r, inst.r_star
    spec, notes = _loss_spectrum(spectrum, loss)
    a, b = spec.alpha, spec.beta
    base = [
        _critical_premise(obj, fp),
        _rank_premise(fp, r_star),
        Premise("r-at-least-r-star", r >= r_star, f"r={r}, r*={r_star}"),
    ]
    if r < r_star:
        ids = ("lemma32.identity", "lemma32.lower-bound", "error-bound.psd-alignment")
        return [not_applicable(cid, base, notes) for cid in ids]

    W = stack(fp)
    W_star = true_factor(inst.M_star, r_star)
    W_pad = np.hstack([W_star, np.zeros((W.shape[0], r - r_star))])
    R = procrustes(W, W_pad).rotation
    Delta = W - W_pad @ R
    d = FactorPair.from_stacked(Delta, fp.n)
    X = fp.product()
    G = _gram_gap(W, W_star)

    hess = phi_hess_quadform(obj, fp, d)
    f_term = loss.hess_quadform(X, fp.U @ d.V.T + d.U @ fp.V.T)
    xi_term = float(np.vdot(xi_matrix(loss, X, lam), G))
    residual = abs(hess - (f_term - xi_term))
    denom = abs(hess) + abs(f_term) + abs(xi_term)
    checks = [
        inequality(
            "lemma32.identity", residual, IDENTITY_RTOL * denom, base[:1] + base[2:], scale=0.0, rtol=0.0,
            notes=notes, hessian=hess, f_term=f_term, xi_term=xi_term,
        )
    ]

    delta_sq = float(np.sum(Delta**2))
    thr = psd_threshold(obj, fp) * delta_sq
    hess_premise = Premise("hessian-nonnegative-along-delta", hess >= thr, f"∇²Φ(Δ,Δ)={hess:.3e}, 閾値 {thr:.3e}")
    xi_inner = float(np.vdot(xi_matrix(loss, inst.M_star, lam), G))
    gram_sq = float(np.sum(G**2))
    lower = max(0.0, a / (2.0 * b) * gram_sq + xi_inner / b)
    wd = float(np.sum((W @ Delta.T) ** 2))
    floor = 1e-12 * (1.0 + float(np.sum(inst.M_star**2)))
    lower_premises = base + [hess_premise] + ([_psd_premise(probe)] if probe is not None else [])
    checks.append(inequality(
        "lemma32.lower-bound", lower, wd, lower_premises,
        scale=abs(lower) + abs(wd) + abs(xi_inner) / b, rtol=AUDIT_RTOL, atol=floor, notes=notes,
        alpha=a, beta=b,
    ))

    S = W.T @ W_star @ R[:r_star]
    sym = 0.5 * (S + S.T)
    min_eig = float(scipy.linalg.eigvalsh(sym)[0]) if sym.size else 0.0
    asym = float(np.linalg.norm(S - S.T))
    s_norm = float(np.linalg.norm(S, 2)) if S.size else 0.0
    checks.append(inequality(
        "error-bound.psd-alignment", -min_eig, 1e-10 * max(1.0, s_norm), base[2:], scale=0.0, rtol=0.0,
        notes=notes, min_eig=min_eig, asymmetry=asym,
    ))
    return checks


def balance_audit(fp: FactorPair) -> List[CheckResult]:
    """臨界点の釣り合い U^T U = V^T V、ランクの連鎖、σ(W) = √2·σ(V)"""
    UtU, VtV = fp.U.T @ fp.U, fp.V.T @ fp.V
    absolute = float(np.linalg.norm(UtU - VtV))
    ref = max(float(np.linalg.norm(UtU)), float(np.linalg.norm(VtV)))
    relative = absolute / ref if ref > 0 else (0.0 if absolute == 0 else math.inf)
    checks = [inequality(
        "balance.balance", relative, BALANCE_RTOL, [], scale=0.0, rtol=0.0,
        absolute=absolute, relative=relative,
    )]

    W = stack(fp)
    ranks = {
        "rank_U": numerical_rank(fp.U, FACTOR_RANK_TOL),
        "rank_V": numerical_rank(fp.V, FACTOR_RANK_TOL),
        "rank_W": numerical_rank(W, FACTOR_RANK_TOL),
        "rank_X": numerical_rank(fp.product(), PRODUCT_RANK_TOL),
    }
    spread = max(ranks.values()) - min(ranks.values())
    checks.append(inequality("balance.rank-chain", spread, 0.0, [], scale=0.0, rtol=0.0, **ranks))

    sw = scipy.linalg.svdvals(W)
    sv = scipy.linalg.svdvals(fp.V)
    k = min(sw.size, sv.size)
    gap = float(np.max(np.abs(sw[:k] - math.sqrt(2.0) * sv[:k]))) if k else 0.0
    top = float(sw[0]) if sw.size else 0.0
    checks.append(inequality("balance.sigma-relation", gap, BALANCE_RTOL * max(1.0, top), [], scale=0.0, rtol=0.0))
    return checks


def _diagonal_of(D: np.ndarray) -> Optional[np.ndarray]:
    D = np.asarray(D, dtype=np.float64)
    k = min(D.shape)
    d = np.diag(D)[:k].copy()
    off = D.copy()
    off[np.arange(k), np.arange(k)] = 0.0
    if np.any(off != 0.0) or np.any(d < 0) or np.any(np.diff(d) > 0):
        return None
    return d


def diag_critical_audit(fp: FactorPair, D: np.ndarray, lam: float, r_star: Optional[int] = None) -> CheckResult:
    """
    f = ½||X - D||² (D は非増加の矩形対角) で λ > d_{r*+1} のときの臨界点集合
      U₁ = V₁, U₂ = 0, V₂ = 0, (U₁U₁^T - D₁ + λI)U₁ = 0
    r* を省略すると d_i >= λ の個数とする
    """
    d = _diagonal_of(D)
    if d is None:
        return not_applicable("diag-critical.critical-set", [Premise("rectangular-diagonal", False, "D が非増加・非負の矩形対角ではありません")])
    if r_star is None:
        r_star = int(np.count_nonzero(d >= lam))
    d_next = float(d[r_star]) if r_star < d.size else 0.0
    premises = [
        Premise("rectangular-diagonal", True),
        Premise("lambda-above-tail", lam > d_next, f"λ={lam:.6g}, d_(r*+1)={d_next:.6g}"),
    ]
    if not premises[1].ok:
        return not_applicable("diag-critical.critical-set", premises, r_star=r_star)

    U1, U2 = fp.U[:r_star], fp.U[r_star:]
    V1, V2 = fp.V[:r_star], fp.V[r_star:]
    D1 = np.diag(d[:r_star])
    res = {
        "u1_minus_v1": float(np.linalg.norm(U1 - V1)),
        "u2": float(np.linalg.norm(U2)),
        "v2": float(np.linalg.norm(V2)),
        "stationarity": float(np.linalg.norm((U1 @ U1.T - D1 + lam * np.eye(r_star)) @ U1)),
    }
    bound = AUDIT_RTOL * (1.0 + float(np.linalg.norm(fp.U)))
    return inequality("diag-critical.critical-set", max(res.values()), bound, premises, scale=0.0, rtol=0.0, r_star=r_star, **res)


def factor_from_solution(X: np.ndarray, r: int) -> FactorPair:
    """(P̄·diag(σ^r)^{1/2}, Q̄·diag(σ^r)^{1/2}) を r 列にゼロ詰めして返す"""
    svd = thin_svd(X)
    k = min(r, svd.singulars.size)
    root = np.sqrt(svd.singulars[:k])
    U = np.zeros((X.shape[0], r))
    V = np.zeros((X.shape[1], r))
    U[:, :k] = svd.left[:, :k] * root
    V[:, :k] = svd.right[:, :k] * root
    return FactorPair(U, V)


def equivalence_audit(
    loss: LeastSquaresLoss, apg_X: np.ndarray, aal_fp: FactorPair, lam: float, r: Optional[int] = None,
    gap_rtol: float = 1e-3, factor_rtol: float = 1e-6,
) -> List[CheckResult]:
    """
    凸問題 f(X) + λ||X||_* と因子分解問題の同値性
      (a) 両ソルバーの目的関数値の相対差
      (b) 凸解の因子分解が同じ目的関数値を達成すること
      (c) ||UV^T||_* <= ½(||U||² + ||V||²)
    """
    r = r if r is not None else aal_fp.r
    obj = RegularizedObjective(loss, lam, r)
    rank = numerical_rank(apg_X, PRODUCT_RANK_TOL)
    premises = [Premise("convex-rank-at-most-r", rank <= r, f"rank(X_apg)={rank}, r={r}")]

    convex = nuclear_objective(loss, lam, apg_X)
    factored = phi_value(obj, aal_fp)
    denom = max(1.0, abs(convex))
    checks = [inequality(
        "equivalence.objective-gap", abs(convex - factored) / denom, gap_rtol, premises, scale=0.0, rtol=0.0,
        convex_objective=convex, factored_objective=factored, apg_rank=rank,
    )]

    built = phi_value(obj, factor_from_solution(apg_X, r))
    checks.append(inequality(
        "equivalence.factorization", abs(built - convex) / denom, factor_rtol, premises, scale=0.0, rtol=0.0,
        factorization_objective=built,
    ))

    nuc = nuclear_norm(aal_fp.product())
    half = 0.5 * (float(np.sum(aal_fp.U**2)) + float(np.sum(aal_fp.V**2)))
    checks.append(inequality("equivalence.nuclear-char", nuc, half, [], rtol=1e-12))
    return checks


def lemma21_audit(
    loss: LeastSquaresLoss, spectrum: SpectrumEstimate, kappa: int = 2, samples: int = 200, seed: int = 0,
) -> CheckResult:
    """
    |2/(α+β)·∇²f(X)(Y,Z) - <Y,Z>| <= (β-α)/(α+β)·||Y||·||Z||
    Y = AB^T, Z = AC^T は左因子を共有するランク κ の行列。最も余裕の小さい標本を記録する
    """
    spec = spectrum.for_loss(loss.scale)
    premises = [Premise("exact-spectrum", spectrum.exact, f"method={spectrum.method}")]
    n, m = loss.n, loss.m
    kappa = max(1, min(kappa, n, m))
    worst: Tuple[float, float] = (0.0, 0.0)
    worst_margin = math.inf
    max_lhs = 0.0
    for child in np.random.SeedSequence(seed).spawn(samples):
        rng = np.random.default_rng(child)
        X = random_unit_rank_matrix(rng, n, m, kappa)
        A = rng.standard_normal((n, kappa))
        Y = A @ rng.standard_normal((m, kappa)).T
        Z = A @ rng.standard_normal((m, kappa)).T
        lhs, rhs = lemma21_check(loss, spec.alpha, spec.beta, X, Y, Z)
        max_lhs = max(max_lhs, lhs)
        if rhs - lhs < worst_margin:
            worst_margin = rhs - lhs
            worst = (lhs, rhs)
    notes = [] if spectrum.exact else [SPECTRUM_NOTE]
    return inequality(
        "lemma21", worst[0], worst[1], premises, rtol=1e-10, atol=1e-12, notes=notes,
        alpha=spec.alpha, beta=spec.beta, samples=samples, max_lhs=max_lhs,
    )


def noise_rate_check(
    n: int = 20, m: int = 20, r_star: int = 2, sigma: float = 0.1, p_small: int = 200, p_large: int = 800,
    seed: int = 0,
) -> CheckResult:
    """
    σ_ω を固定したとき ||∇f(M*)|| = (1/p)||A*(ω)|| が 1/p で減衰することの定性的確認。
    (v₁·p₁)/(v₂·p₂) が [1/3, 3] に入れば pass
    """
    if not 0 < p_small < p_large:
        raise ValueError(f"0 < p_small < p_large が必要です ({p_small}, {p_large})")
    noise = NoiseSpec(calibration="absolute", sigma=sigma)
    vals = []
    for p, child in zip((p_small, p_large), np.random.SeedSequence(seed).spawn(2)):
        spec = OperatorSpec(kind="gaussian", p=p, loss_scale="per-measurement")
        inst = generate_instance(n, m, r_star, spec, noise, int(child.generate_state(1)[0]))
        vals.append(noise_adjoint_norm(inst))
    ratio = (vals[0] * p_small) / (vals[1] * p_large) if vals[1] > 0 else math.inf
    premises = [Premise("nonzero-noise", vals[0] > 0 and vals[1] > 0)]
    deviation = abs(math.log(ratio)) if math.isfinite(ratio) and ratio > 0 else math.inf
    # v ∝ p^(-exponent)
    exponent = math.log(vals[0] / vals[1]) / math.log(p_large / p_small) if vals[1] > 0 and vals[0] > 0 else math.nan
    return inequality(
        "noise-rate", deviation, math.log(3.0), premises, scale=0.0, rtol=0.0,
        notes=["絶対定数は監査していません"],
        v_small=vals[0], v_large=vals[1], p_small=p_small, p_large=p_large, ratio=ratio, decay_exponent=exponent,
    )
