"""
実験設定データセット - 机上規模の既定値
CLI の既定値とテストの両方から参照する
"""

# 図1 相当の λ スイープ (ガウスセンシング、r = 3r*)
NU_GRID = [0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0]

SWEEP_CONFIG = {
    "kind": "rmse-sweep",
    "n": 60,
    "m": 60,
    "r_star": 3,
    "r": 9,
    "operator": {"kind": "gaussian", "p": 900, "loss_scale": "unit"},
    "noise": {"calibration": "relative", "ratio": 0.1},
    "lambda_rule": {"kind": "nu-times-noise", "grid": NU_GRID},
    "aal": {"schedule": "nesterov", "L_ratio": 1e4, "restart": "objective", "epsilon": 1e-5, "max_iters": 5000},
    "apg": {"epsilon": 1e-5, "max_iters": 5000},
    "trials": 5,
    "seed": 0,
    "output_dir": "results/sweep",
}

# 図2 相当の収束曲線 (全観測、加速なし)
CONVERGENCE_CONFIG = {
    "kind": "convergence",
    "n": 200,
    "m": 200,
    "r_star": 10,
    "r": 10,
    "operator": {"kind": "full"},
    "noise": {"calibration": "relative-spectral", "ratio": 0.1},
    "lambda_rule": {"kind": "fraction-of-sigma", "grid": [0.95]},
    "aal": {"schedule": "none", "epsilon": 1e-10, "max_iters": 5000},
    "trials": 1,
    "seed": 0,
    "output_dir": "results/convergence",
}

# 理論監査。トップレベルは誤差限界の監査に使う全観測インスタンス
VERIFY_CONFIG = {
    "kind": "verify",
    "n": 60,
    "m": 60,
    "r_star": 4,
    "r": 4,
    "operator": {"kind": "full"},
    "noise": {"calibration": "relative", "ratio": 0.1},
    "lambda_rule": {"kind": "nu-times-noise", "grid": [1.2]},
    "aal": {"schedule": "nesterov", "L_ratio": 1e4, "restart": "objective", "epsilon": 1e-10, "max_iters": 20000},
    "apg": {"epsilon": 1e-8, "max_iters": 20000},
    "trials": 1,
    "seed": 0,
    "output_dir": "results/verify",
    "verify": {
        "diagonal": {"n": 10, "d": [5.0, 4.0, 3.0, 0.5, 0.4, 0.3, 0.2, 0.1], "lam": 1.0, "r": 5},
        "oracle": {"n": 40, "top": 20.0, "decay": 0.85, "r": 5, "fraction": 0.5},
        "kl": {"n": 30, "r": 5, "head": [6.0, 6.0, 4.0, 4.0, 3.0], "tail": [1.5, 0.1], "lams": [8.0, 5.0, 2.0],
               "samples": 200},
        "equivalence": {"n": 40, "m": 40, "r_star": 2, "r": 6, "p": 2000, "nu": 1.0, "ratio": 0.1, "epsilon": 1e-8},
        "calmness": {"eps_ball": 1e-3, "samples": 200},
        "noise_rate": {"p_small": 200, "p_large": 800},
        "lemma21_samples": 200,
        "spectrum": None,
    },
    "counterexample": {"a": 2.0, "lam": 1.0, "k_max": 200},
}

COUNTEREXAMPLE_CONFIG = {
    "kind": "counterexample",
    "n": 2,
    "m": 2,
    "r_star": 1,
    "r": 2,
    "trials": 1,
    "seed": 0,
    "output_dir": "results/counterexample",
    "counterexample": {"a": 2.0, "lam": 1.0, "k_max": 200},
}

DEFAULT_CONFIGS = {
    "rmse-sweep": SWEEP_CONFIG,
    "convergence": CONVERGENCE_CONFIG,
    "verify": VERIFY_CONFIG,
    "counterexample": COUNTEREXAMPLE_CONFIG,
}

# テスト用の小さな設定
TINY_SWEEP_CONFIG = {
    "kind": "rmse-sweep",
    "n": 12,
    "m": 12,
    "r_star": 2,
    "r": 6,
    "operator": {"kind": "gaussian", "p": 120, "loss_scale": "unit"},
    "noise": {"calibration": "relative", "ratio": 0.05},
    "lambda_rule": {"kind": "nu-times-noise", "grid": [0.5, 1.0]},
    "aal": {"schedule": "nesterov", "L_ratio": 1e4, "restart": "objective", "epsilon": 1e-6, "max_iters": 3000},
    "apg": {"epsilon": 1e-6, "max_iters": 3000},
    "trials": 2,
    "seed": 3,
}

TINY_CONVERGENCE_CONFIG = {
    "kind": "convergence",
    "n": 20,
    "m": 20,
    "r_star": 2,
    "r": 2,
    "operator": {"kind": "full"},
    "noise": {"calibration": "relative-spectral", "ratio": 0.1},
    "lambda_rule": {"kind": "fraction-of-sigma", "grid": [0.5]},
    "aal": {"schedule": "none", "epsilon": 1e-10, "max_iters": 3000},
    "trials": 1,
    "seed": 1,
}
