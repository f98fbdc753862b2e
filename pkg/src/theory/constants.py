"""
誤差限界の定数 γ₁, γ₂, γ̂ と KL 性の calmness 閾値
"""

import math
from dataclasses import dataclass

# β/α がこれ以下のときだけ γ₁ > 0 が保証される
ADMISSIBLE_RATIO = 1.38


@dataclass(frozen=True)
class GammaConstants:
    alpha: float
    beta: float
    gamma1: float
    gamma2: float
    gamma_hat: float
    admissible: bool

    @property
    def ratio(self) -> float:
        return self.beta / self.alpha

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "gamma1": self.gamma1,
            "gamma2": self.gamma2,
            "gamma_hat": self.gamma_hat if self.admissible else None,
            "admissible": self.admissible,
        }


def gamma_hat(alpha: float, beta: float) -> GammaConstants:
    """
    γ₁ = 63α/(128β) - 1/8 - 16(7+√2)(β-α)²/(15(α+β)²)
    γ₂ = 2048(7+√2)/(15(α+β)²) + 64/(αβ)
    γ̂ = γ₂/γ₁ (β/α <= 1.38 かつ γ₁ > 0 のときのみ、それ以外は nan)
    """
    if alpha <= 0 or beta <= 0:
        raise ValueError(f"制限モジュラスは正である必要があります (alpha={alpha}, beta={beta})")
    if beta < alpha:
        raise ValueError(f"alpha <= beta が必要です (alpha={alpha}, beta={beta})")
    c = 7.0 + math.sqrt(2.0)
    s2 = (alpha + beta) ** 2
    g1 = 63.0 * alpha / (128.0 * beta) - 0.125 - 16.0 * c * (beta - alpha) ** 2 / (15.0 * s2)
    g2 = 2048.0 * c / (15.0 * s2) + 64.0 / (alpha * beta)
    admissible = beta / alpha <= ADMISSIBLE_RATIO and g1 > 0
    return GammaConstants(alpha, beta, g1, g2, g2 / g1 if admissible else math.nan, admissible)


def calmness_threshold(c_bar: float, noise_norm: float) -> float:
    """2c̄ + ||A*(ω)|| + √((2c̄ + ||A*(ω)||)² + 4c̄||A*(ω)||)。λ がこれを超えれば KL 指数 1/2"""
    if c_bar < 0 or noise_norm < 0:
        raise ValueError("c_bar と noise_norm は非負である必要があります")
    b = 2.0 * c_bar + noise_norm
    return b + math.sqrt(b * b + 4.0 * c_bar * noise_norm)
