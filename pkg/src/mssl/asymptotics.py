"""Closed-form limits of the risk factors and mixing ratios as n, p grow.

Used by the convergence acceptance tests and for quick what-if evaluation;
everything here is an exact scalar formula in the aspect ratios, the noise
and signal levels, and the limiting covariance trace.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import DataValidationError

__all__ = [
    "AsymptoticSetting",
    "LimitReport",
    "ols_limits",
    "interp_limits",
    "finite_m_limits",
    "eta_from_ols_terms",
]


@dataclass(frozen=True)
class AsymptoticSetting:
    """Limiting problem description.

    gamma is the p/n limit; gamma_tilde is the large-coordinate ratio
    p_tilde/n in the interpolator regime (or the p/m pool ratio in the
    finite-pool mode); c2 the limiting covariance trace.
    """

    gamma: float
    gamma_tilde: float = 0.0
    sigma2: float = 1.0
    tau2: float = 1.0
    c2: float = 1.0

    def __post_init__(self):
        if self.gamma <= 0:
            raise DataValidationError("gamma must be positive")
        if self.c2 <= 0:
            raise DataValidationError("c2 must be positive")
        if self.sigma2 < 0 or self.tau2 < 0:
            raise DataValidationError("sigma2 and tau2 must be nonnegative")


@dataclass(frozen=True)
class LimitReport:
    """Limiting relative risk, mixing ratio, and the term limits behind them."""

    eta_inf: float
    alpha_inf: float
    term_limits: dict = field(default_factory=dict)


def eta_from_ols_terms(
    sigma2: float, tau2: float, v_l: float, v_u: float, b_u: float
) -> float:
    """Relative risk of the best mix, written in terms of the risk factors.

    1 - sigma^2 (v_l - v_u)^2 / (tau^2 v_l b_u + sigma^2 v_l (v_l - v_u)).
    """
    denom = tau2 * v_l * b_u + sigma2 * v_l * (v_l - v_u)
    if denom <= 0:
        raise DataValidationError("nonpositive denominator in the eta identity")
    return 1.0 - sigma2 * (v_l - v_u) ** 2 / denom


def ols_limits(s: AsymptoticSetting) -> LimitReport:
    """Gaussian limits in the under-parameterized regime p/n -> gamma < 1."""
    g = s.gamma
    if not 0.0 < g < 1.0:
        raise DataValidationError(f"gamma must be in (0, 1), got {g}")
    eta = 1.0 - g**4 * s.sigma2 / ((1.0 - g) * g**2 * s.tau2 * s.c2 + g**3 * s.sigma2)
    alpha = g**2 * s.sigma2 / ((1.0 - g) * g * s.tau2 * s.c2 + g**2 * s.sigma2)
    terms = {"v_l": g / (1.0 - g), "v_u": g, "b_u": g * s.c2}
    return LimitReport(eta_inf=float(eta), alpha_inf=float(alpha), term_limits=terms)


def interp_limits(s: AsymptoticSetting) -> LimitReport:
    """Limits for the spiked-covariance interpolators, 1 < gamma_tilde < gamma."""
    g, gt = s.gamma, s.gamma_tilde
    if not (g > 1.0 and 1.0 < gt < g):
        raise DataValidationError(
            f"need gamma > 1 and 1 < gamma_tilde < gamma, got ({g}, {gt})"
        )
    c2, sig2, tau2 = s.c2, s.sigma2, s.tau2
    bracket1 = tau2 * c2 / (g * gt) + sig2 / ((g - 1.0) * (gt - 1.0))
    bracket2 = tau2 * c2 * (gt - 1.0) / gt + sig2 / (gt - 1.0)
    eta = 1.0 - (g - gt) * sig2**2 / (
        (g - 1.0) ** 2 * (gt - 1.0) ** 2 * bracket1 * bracket2
    )
    alpha = sig2 / ((g - 1.0) * (gt - 1.0) * bracket1)
    terms = {
        "v_l": 1.0 / (gt - 1.0),
        "b_l": c2 * (1.0 - 1.0 / gt),
        "v_u": 1.0 / (g - 1.0),
        "b_u": c2 * (1.0 - 1.0 / g),
    }
    return LimitReport(eta_inf=float(eta), alpha_inf=float(alpha), term_limits=terms)


def finite_m_limits(gamma: float, gamma_tilde_m: float, c2: float) -> dict:
    """Term limits when the pool is finite, with p/m -> gamma_tilde_m.

    gamma_tilde_m = 0 recovers the infinite-pool limits exactly.
    """
    if not 0.0 < gamma < 1.0:
        raise DataValidationError(f"gamma must be in (0, 1), got {gamma}")
    if not 0.0 <= gamma_tilde_m < 1.0:
        raise DataValidationError(
            f"gamma_tilde_m must be in [0, 1), got {gamma_tilde_m}"
        )
    if c2 <= 0:
        raise DataValidationError("c2 must be positive")
    one = 1.0 - gamma_tilde_m
    return {
        "b_u_tilde": c2 * (1.0 + one**3 - 2.0 * one**2 + gamma) / one**3,
        "v_u_tilde": gamma / one**3,
        "v_s_tilde": gamma / one,
        "v_l": gamma / (1.0 - gamma),
    }
