"""Over-parameterized estimators: minimum-norm and minimum-variance
interpolators, their mixing rule, risk terms, noise/signal estimation, and
the random-feature map used in the synthetic feature-expansion demos.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .core import LabeledSet, ResampleSpec, UnlabeledPool, seeded_rng
from .errors import (
    DataValidationError,
    RegimeError,
    ResampleBudgetError,
    SingularMatrixError,
)

__all__ = [
    "InterpRiskTerms",
    "NoiseSignalInterp",
    "RffMap",
    "fit_min_norm",
    "fit_min_variance",
    "interp_risk_terms",
    "interp_terms_spiked_closed_form",
    "alpha_star_interp",
    "interp_eta",
    "sigma2_known_tau",
    "iterate_sigma_tau",
    "make_rff_map",
    "rff_features",
    "rff_scaler",
    "gaussian_sampler",
    "pool_sampler",
]

_COND_LIMIT = 1e12
_SKIP_BUDGET = 0.10


def _gram_factor(X: np.ndarray, what: str):
    Gn = X @ X.T
    if np.linalg.cond(Gn) > _COND_LIMIT:
        rank = int(np.linalg.matrix_rank(Gn))
        raise SingularMatrixError(f"{what} is singular (rank {rank})", rank=rank)
    return cho_factor(Gn, lower=True)


def fit_min_norm(data: LabeledSet) -> np.ndarray:
    """Minimum-l2-norm interpolator X^T (X X^T)^{-1} Y (needs p > n)."""
    if data.p <= data.n:
        raise RegimeError(f"interpolation needs p > n, got n={data.n}, p={data.p}")
    return data.X.T @ cho_solve(_gram_factor(data.X, "X X^T"), data.Y)


def fit_min_variance(data: LabeledSet, Sigma: np.ndarray) -> np.ndarray:
    """Minimum-predictive-variance interpolator for a given covariance.

    Sigma^{-1} X^T (X Sigma^{-1} X^T)^{-1} Y; among interpolators it
    minimizes w^T Sigma w for every realization of the data.
    """
    if data.p <= data.n:
        raise RegimeError(f"interpolation needs p > n, got n={data.n}, p={data.p}")
    Sigma = np.asarray(Sigma, dtype=float)
    try:
        sig_factor = cho_factor(Sigma, lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError("Sigma must be positive definite") from exc
    A = cho_solve(sig_factor, data.X.T)  # Sigma^{-1} X^T, p x n
    inner = data.X @ A
    if np.linalg.cond(inner) > _COND_LIMIT:
        raise SingularMatrixError("X Sigma^{-1} X^T is singular")
    return A @ cho_solve(cho_factor(inner, lower=True), data.Y)


@dataclass(frozen=True)
class InterpRiskTerms:
    """Bias/variance factors of the two interpolators with their MC errors."""

    b_l: float
    v_l: float
    b_u: float
    v_u: float
    se_b_l: float = 0.0
    se_v_l: float = 0.0
    se_b_u: float = 0.0
    se_v_u: float = 0.0


def gaussian_sampler(Sigma: np.ndarray, n: int):
    """Factory: draws n x p Gaussian designs with the given covariance."""
    L = np.linalg.cholesky(np.asarray(Sigma, dtype=float))
    p = L.shape[0]

    def draw(rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal((n, p)) @ L.T

    return draw


def pool_sampler(pool: UnlabeledPool, n: int):
    """Factory: draws n pool rows without replacement."""
    if n > pool.m:
        raise DataValidationError(f"n={n} exceeds pool size {pool.m}")

    def draw(rng: np.random.Generator) -> np.ndarray:
        return pool.Z[rng.choice(pool.m, size=n, replace=False)]

    return draw


def interp_risk_terms(
    Sigma: np.ndarray, n: int, p: int, sampler, spec: ResampleSpec
) -> InterpRiskTerms:
    """Monte Carlo estimates of (b_l, v_l, b_u, v_u) over design draws.

    b_l = tr(Sigma - Sigma E[X^T (X X^T)^{-1} X]),
    v_l = tr(Sigma E[X^T (X X^T)^{-2} X]),
    b_u = tr(Sigma - E[X^T (X Sigma^{-1} X^T)^{-1} X]),
    v_u = tr(E[(X Sigma^{-1} X^T)^{-1}]).
    """
    if p <= n + 1:
        raise RegimeError(f"need p > n + 1, got n={n}, p={p}")
    Sigma = np.asarray(Sigma, dtype=float)
    tr_sigma = float(np.trace(Sigma))
    sig_factor = cho_factor(Sigma, lower=True)

    rows = []
    skipped = 0
    for i in range(spec.replications):
        X = sampler(seeded_rng(spec.seed, 0x1D4A, i))
        Gn = X @ X.T
        if np.linalg.cond(Gn) > _COND_LIMIT:
            skipped += 1
            continue
        gf = cho_factor(Gn, lower=True)
        XSX = X @ Sigma @ X.T
        GiXSX = cho_solve(gf, XSX)
        b_l = tr_sigma - float(np.trace(GiXSX))
        v_l = float(np.trace(cho_solve(gf, GiXSX.T)))
        A = cho_solve(sig_factor, X.T)
        inner = X @ A
        inf_factor = cho_factor(inner, lower=True)
        b_u = tr_sigma - float(np.trace(cho_solve(inf_factor, Gn)))
        v_u = float(np.trace(cho_solve(inf_factor, np.eye(n))))
        rows.append((b_l, v_l, b_u, v_u))

    if skipped > _SKIP_BUDGET * spec.replications:
        raise ResampleBudgetError(f"{skipped}/{spec.replications} draws skipped")
    arr = np.asarray(rows)
    mean = arr.mean(axis=0)
    se = arr.std(axis=0, ddof=1) / math.sqrt(arr.shape[0])
    return InterpRiskTerms(
        b_l=mean[0], v_l=mean[1], b_u=mean[2], v_u=mean[3],
        se_b_l=se[0], se_v_l=se[1], se_b_u=se[2], se_v_u=se[3],
    )


def interp_terms_spiked_closed_form(
    n: int, p: int, p_tilde: int, c1_sq: float, trace_sigma: float
) -> InterpRiskTerms:
    """Closed-form Gaussian terms for a two-level (spiked) diagonal covariance.

    v_u = n/(p-n-1), b_u = tr(Sigma)(1 - n/p), and the supervised factors
    behave as if only the p_tilde large-variance coordinates existed:
    v_l = n/(p_tilde-n-1), b_l = c1^2 (p_tilde - n).
    """
    if p <= n + 1 or p_tilde <= n + 1:
        raise RegimeError("closed forms need p, p_tilde > n + 1")
    return InterpRiskTerms(
        b_l=float(c1_sq * (p_tilde - n)),
        v_l=float(n / (p_tilde - n - 1)),
        b_u=float(trace_sigma * (1.0 - n / p)),
        v_u=float(n / (p - n - 1)),
    )


def alpha_star_interp(
    sigma2: float, tau2: float, terms: InterpRiskTerms
) -> tuple[float, float]:
    """Best interpolator mixing ratio and the risk value it attains.

    alpha = sigma^2 (v_l - v_u) / (tau^2 (b_u - b_l) + sigma^2 (v_l - v_u)).
    """
    slack_v = 3.0 * (terms.se_v_l + terms.se_v_u)
    slack_b = 3.0 * (terms.se_b_l + terms.se_b_u)
    if terms.v_l < terms.v_u - slack_v or terms.b_u < terms.b_l - slack_b:
        raise DataValidationError(
            "bias/variance ordering violated beyond Monte Carlo error: "
            f"v_l={terms.v_l:.4g} vs v_u={terms.v_u:.4g}, "
            f"b_l={terms.b_l:.4g} vs b_u={terms.b_u:.4g}"
        )
    v_gap = max(terms.v_l - terms.v_u, 0.0)
    b_gap = max(terms.b_u - terms.b_l, 0.0)
    denom = tau2 * b_gap + sigma2 * v_gap
    if denom <= 0:
        raise DataValidationError("nonpositive denominator in the mixing formula")
    alpha = sigma2 * v_gap / denom
    r_min = tau2 * terms.b_l + sigma2 * terms.v_l - (sigma2 * v_gap) ** 2 / denom
    return float(alpha), float(r_min)


def interp_eta(sigma2: float, tau2: float, terms: InterpRiskTerms) -> float:
    """Risk of the best mix relative to the minimum-norm interpolator."""
    _, r_min = alpha_star_interp(sigma2, tau2, terms)
    return float(r_min / (tau2 * terms.b_l + sigma2 * terms.v_l))


def sigma2_known_tau(data: LabeledSet, tau2: float) -> float:
    """Unbiased noise estimate when the signal level tau^2 is known.

    (Y^T (X X^T)^{-2} Y - tau^2 tr((X X^T)^{-1})) / tr((X X^T)^{-2}); the raw
    value may be negative and is returned unclipped.
    """
    if data.p <= data.n:
        raise RegimeError("needs the over-parameterized regime p > n")
    gf = _gram_factor(data.X, "X X^T")
    Gi = cho_solve(gf, np.eye(data.n))
    Gi2 = Gi @ Gi
    return float((data.Y @ Gi2 @ data.Y - tau2 * np.trace(Gi)) / np.trace(Gi2))


@dataclass(frozen=True)
class NoiseSignalInterp:
    """Jointly iterated noise/signal estimates (clipped at zero)."""

    sigma2_hat: float
    tau2_hat: float
    iterations: int
    converged: bool


def iterate_sigma_tau(
    data: LabeledSet, Sigma: np.ndarray, tol: float = 1e-10, max_iter: int = 100
) -> NoiseSignalInterp:
    """Alternate the known-tau noise formula with a second-moment signal update.

    Starts from tau^2 = w^T Sigma w / tr(Sigma) at the minimum-norm fit; each
    round clips at zero.  Stops when both estimates move by less than tol.
    """
    Sigma = np.asarray(Sigma, dtype=float)
    w_hat = fit_min_norm(data)
    tr_sigma = float(np.trace(Sigma))
    if tr_sigma <= 0:
        raise DataValidationError("tr(Sigma) must be positive")
    gf = _gram_factor(data.X, "X X^T")
    Gi = cho_solve(gf, np.eye(data.n))
    Gi2 = Gi @ Gi
    yq = float(data.Y @ Gi2 @ data.Y)
    tr1 = float(np.trace(Gi))
    tr2 = float(np.trace(Gi2))
    y2 = float(data.Y @ data.Y) / data.n

    tau2 = float(w_hat @ Sigma @ w_hat) / tr_sigma
    sigma2 = 0.0
    for it in range(1, max_iter + 1):
        sigma2_new = max((yq - tau2 * tr1) / tr2, 0.0)
        tau2_new = max((y2 - sigma2_new) / tr_sigma, 0.0)
        done = abs(sigma2_new - sigma2) < tol and abs(tau2_new - tau2) < tol
        sigma2, tau2 = sigma2_new, tau2_new
        if done:
            return NoiseSignalInterp(sigma2, tau2, it, True)
    return NoiseSignalInterp(sigma2, tau2, max_iter, False)


# -- random feature map -------------------------------------------------------

_ACTIVATIONS = {
    "tanh": np.tanh,
    "sigmoid": lambda z: 1.0 / (1.0 + np.exp(-z)),
    "elu": lambda z: np.where(z < 0.0, np.expm1(z), z),
}


@dataclass(frozen=True)
class RffMap:
    """A fixed random first layer: h x p Gaussian weights plus activations."""

    C: np.ndarray
    activations: tuple[str, ...]
    seed: int

    @property
    def out_dim(self) -> int:
        return self.C.shape[0] * len(self.activations)


def make_rff_map(
    p: int,
    h: int,
    activations: tuple[str, ...] = ("tanh", "sigmoid", "elu"),
    seed: int = 0,
) -> RffMap:
    for a in activations:
        if a not in _ACTIVATIONS:
            raise DataValidationError(f"unknown activation {a!r}")
    C = seeded_rng(seed, 0x0FF).standard_normal((h, p))
    return RffMap(C=C, activations=tuple(activations), seed=seed)


def rff_features(X: np.ndarray, rff: RffMap, scaler=None) -> np.ndarray:
    """Nonlinear random features: each activation applied to X C^T, concatenated.

    ``scaler`` is an optional (mean, std) pair, normally computed from the
    transformed pool, applied columnwise to the concatenated features.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != rff.C.shape[1]:
        raise DataValidationError(
            f"X has {X.shape[1]} columns but the map expects {rff.C.shape[1]}"
        )
    Z = X @ rff.C.T
    F = np.concatenate([_ACTIVATIONS[a](Z) for a in rff.activations], axis=1)
    if scaler is not None:
        mean, std = scaler
        F = (F - mean) / std
    return F


def rff_scaler(pool_X: np.ndarray, rff: RffMap) -> tuple[np.ndarray, np.ndarray]:
    """Columnwise standardization statistics of the transformed pool."""
    F = rff_features(pool_X, rff)
    std = F.std(axis=0)
    std[std < 1e-12] = 1.0
    return F.mean(axis=0), std
