"""
理論監査の実行 - 各監査を順に走らせ一つの TheoryReport にまとめる
一つの監査が例外で止まっても記録して次へ進む
"""

import logging
import math
from typing import Any, Callable, Dict, List, Optional, Union

import numpy as np

from src.errors import ConfigError, LowRankError
from src.expcli.config import ExperimentConfig, resolve_lambda
from src.expcli.writer import OutputWriter
from src.objective.diagonal import DiagonalObjective
from src.objective.factored import RegularizedObjective, min_eig_hessian
from src.objective.loss import LeastSquaresLoss
from src.sampling.instance import (
    NoiseSpec,
    OperatorSpec,
    RecoveryInstance,
    generate_instance,
    noise_adjoint_norm,
)
from src.sampling.operators import make_full_observation
from src.sampling.spectrum import SpectrumEstimate, estimate_restricted_spectrum
from src.solvers.aal import aal_solve
from src.solvers.apg import apg_nuclear
from src.theory.audits import (
    balance_audit,
    diag_critical_audit,
    equivalence_audit,
    error_bound_audit,
    lemma21_audit,
    lemma31_audit,
    lemma32_audit,
    noise_rate_check,
)
from src.theory.constants import calmness_threshold
from src.theory.fullobs import (
    calmness_estimate,
    counterexample_center,
    counterexample_checks,
    counterexample_objective,
    counterexample_sequence,
    global_set_fullobs,
    kl_probe,
    oracle_audit,
)
from src.theory.report import CheckResult, TheoryReport, failed, info

logger = logging.getLogger(__name__)

SPECTRUM_TRIALS = 200
CALMNESS_NOTE = "標本から得た calmness は下界です。閾値を満たしても示唆にとどまります"

Audit = Callable[[], Union[CheckResult, List[CheckResult]]]


def _run(report: TheoryReport, check_id: str, audit: Audit) -> None:
    try:
        out = audit()
    except (LowRankError, ValueError, np.linalg.LinAlgError) as e:
        logger.warning("監査 %s が中断しました: %s", check_id, e)
        report.add(failed(check_id, f"{type(e).__name__}: {e}"))
        return
    report.extend(out if isinstance(out, list) else [out])


def _spectrum(config: ExperimentConfig, inst: RecoveryInstance) -> SpectrumEstimate:
    override = config.verify.get("spectrum")
    if override:
        return SpectrumEstimate(float(override["alpha"]), float(override["beta"]), 2 * inst.r_star, 0, "override")
    return estimate_restricted_spectrum(inst.operator, 2 * inst.r_star, SPECTRUM_TRIALS, config.seed)


def _diagonal(opts: Dict[str, Any]) -> DiagonalObjective:
    n = int(opts["n"])
    return DiagonalObjective(np.asarray(opts["d"], dtype=np.float64), n, n, float(opts["lam"]), int(opts["r"]))


def _oracle(opts: Dict[str, Any]) -> DiagonalObjective:
    n = int(opts["n"])
    d = float(opts["top"]) * float(opts["decay"]) ** np.arange(n)
    r = int(opts["r"])
    return DiagonalObjective(d, n, n, float(opts["fraction"]) * float(d[r - 1]), r)


def kl_spectrum(opts: Dict[str, Any]) -> np.ndarray:
    """先頭の値 (重複あり) と、その下に等間隔で並ぶ裾"""
    n = int(opts["n"])
    head = np.asarray(opts["head"], dtype=np.float64)
    lo_hi = opts["tail"]
    tail = np.linspace(float(lo_hi[0]), float(lo_hi[1]), n - head.size)
    return np.concatenate([head, tail])


def _kl_checks(opts: Dict[str, Any], seed: int) -> List[CheckResult]:
    n, r = int(opts["n"]), int(opts["r"])
    d = kl_spectrum(opts)
    samples = int(opts.get("samples", 200))
    checks = []
    for lam in opts["lams"]:
        dobj = DiagonalObjective(d, n, n, float(lam), r)
        gap_needed = not float(lam) > dobj.sigma(r)
        center, _ = global_set_fullobs(dobj.sigma_matrix(), r, float(lam), check_gap=gap_needed)
        checks.append(kl_probe(dobj, center, samples, seed, check_id=f"kl.probe[lam={float(lam):g}]"))
    return checks


def _counterexample_probe(opts: Dict[str, Any], samples: int, seed: int) -> CheckResult:
    a, lam = float(opts.get("a", 2.0)), float(opts.get("lam", 1.0))
    return kl_probe(
        counterexample_objective(a, lam), counterexample_center(a, lam), samples, seed,
        require_global=False, check_id="counterexample.kl-probe",
    )


def counterexample_instance(a: float, lam: float, seed: int = 0) -> RecoveryInstance:
    """Σ = aI (2×2) を雑音なしで全観測する問題"""
    op = make_full_observation(2, 2)
    Sigma = a * np.eye(2)
    return RecoveryInstance(M_star=Sigma, operator=op, omega=np.zeros(op.p), y=op.apply(Sigma), r_star=2, seed=seed)


def _counterexample_calmness(opts: Dict[str, Any], calm: Dict[str, Any], seed: int) -> CheckResult:
    a, lam = float(opts.get("a", 2.0)), float(opts.get("lam", 1.0))
    inst = counterexample_instance(a, lam, seed)
    c1, c2 = calmness_estimate(inst, counterexample_center(a, lam), float(calm["eps_ball"]), int(calm["samples"]), seed)
    d = a - lam
    return info(
        "calmness.counterexample", max(c1, c2), 2.0 * a - lam,
        notes=[CALMNESS_NOTE, "rhs は主張された下界 2a - λ"],
        c1_hat=c1, c2_hat=c2, linearized=math.sqrt(d * d + a * a),
    )


def _threshold(inst: RecoveryInstance, fp, lam: float, calm: Dict[str, Any], seed: int) -> CheckResult:
    c1, c2 = calmness_estimate(inst, fp, float(calm["eps_ball"]), int(calm["samples"]), seed)
    noise = noise_adjoint_norm(inst)
    thr = calmness_threshold(max(c1, c2), noise)
    return info(
        "calmness.threshold", thr, lam, notes=[CALMNESS_NOTE, "lhs <= rhs なら λ が閾値を上回ります"],
        c1_hat=c1, c2_hat=c2, noise_norm=noise,
    )


def _equivalence(config: ExperimentConfig, opts: Dict[str, Any]) -> List[CheckResult]:
    spec = OperatorSpec(kind="gaussian", p=int(opts["p"]), loss_scale="unit")
    noise = NoiseSpec(calibration="relative", ratio=float(opts["ratio"]))
    inst = generate_instance(int(opts["n"]), int(opts["m"]), int(opts["r_star"]), spec, noise, config.seed)
    lam = float(opts["nu"]) * noise_adjoint_norm(inst)
    loss = LeastSquaresLoss.from_instance(inst)
    r = int(opts["r"])
    eps = float(opts.get("epsilon", 1e-8))
    aal = aal_solve(RegularizedObjective(loss, lam, r), inst, config.aal_config(record_trace=False, epsilon=eps))
    apg = apg_nuclear(loss, lam, config.apg_config(lam, record_trace=False, epsilon=eps))
    if not (aal.converged and apg.converged):
        logger.warning("同値性の監査: 収束していないソルバーがあります (AAL %s, APG %s)", aal.stop_reason, apg.stop_reason)
    return equivalence_audit(loss, apg.X, aal.fp, lam, r=r)


def run_verify(config: ExperimentConfig, writer: Optional[OutputWriter] = None) -> TheoryReport:
    """
    実行順: 釣り合い、対角問題の臨界点集合、全観測の閉形式解との照合、
    補題 3.1/3.2、誤差限界、KL プローブ (ギャップごと)、反例列、同値性。
    最後に RSC/RSS 不等式、ノイズ量の減衰率、calmness を記録する。
    """
    if config.kind != "verify":
        raise ConfigError(f"verify 用の設定ではありません: {config.kind}")
    opts = config.verify
    seed = config.seed
    report = TheoryReport(config.meta())

    inst = generate_instance(config.n, config.m, config.r_star, config.operator_spec(), config.noise_spec(), seed)
    lam = resolve_lambda(config.lambda_rule, inst, config.lambda_grid()[0])
    loss = LeastSquaresLoss.from_instance(inst)
    obj = RegularizedObjective(loss, lam, config.rank)
    main = aal_solve(obj, inst, config.aal_config(record_trace=False))
    fp = main.fp
    spectrum = _spectrum(config, inst)
    report.meta.update({"lambda": lam, "aal_stop_reason": main.stop_reason, "spectrum_method": spectrum.method})
    logger.info("監査用インスタンス: λ=%.6g, AAL %s (反復 %d)", lam, main.stop_reason, main.iterations)

    _run(report, "balance", lambda: balance_audit(fp))

    dobj = _diagonal(opts["diagonal"])
    _run(report, "diag-critical.critical-set", lambda: diag_critical_audit(
        aal_solve(dobj.as_objective(), None, config.aal_config(record_trace=False)).fp, dobj.sigma_matrix(), dobj.lam,
    ))

    oobj = _oracle(opts["oracle"])
    _run(report, "fullobs.oracle", lambda: oracle_audit(
        oobj, aal_solve(oobj.as_objective(), None, config.aal_config(record_trace=False)).fp,
    ))

    probe = min_eig_hessian(obj, fp)
    _run(report, "lemma31", lambda: lemma31_audit(inst, fp, lam, spectrum))
    _run(report, "lemma32", lambda: lemma32_audit(inst, fp, lam, spectrum, probe))
    _run(report, "error-bound", lambda: error_bound_audit(inst, fp, lam, spectrum, probe))

    _run(report, "kl.probe", lambda: _kl_checks(opts["kl"], seed))
    samples = int(opts["kl"].get("samples", 200))
    _run(report, "counterexample.kl-probe", lambda: _counterexample_probe(config.counterexample, samples, seed))

    ce = config.counterexample
    _run(report, "counterexample", lambda: counterexample_checks(
        counterexample_sequence(float(ce.get("a", 2.0)), float(ce.get("lam", 1.0)), int(ce.get("k_max", 200)))
    ))

    _run(report, "equivalence", lambda: _equivalence(config, opts["equivalence"]))

    _run(report, "lemma21", lambda: lemma21_audit(loss, spectrum, kappa=2, samples=int(opts.get("lemma21_samples", 200)), seed=seed))
    rate = opts.get("noise_rate", {})
    _run(report, "noise-rate", lambda: noise_rate_check(
        p_small=int(rate.get("p_small", 200)), p_large=int(rate.get("p_large", 800)), seed=seed,
    ))
    calm = opts["calmness"]
    _run(report, "calmness.counterexample", lambda: _counterexample_calmness(ce, calm, seed))
    _run(report, "calmness.threshold", lambda: _threshold(inst, fp, lam, calm, seed))

    counts = report.counts()
    logger.info("監査結果: %s", ", ".join(f"{k}={v}" for k, v in counts.items()))
    if writer is not None:
        writer.write_report("verify_report.json", report)
    return report
