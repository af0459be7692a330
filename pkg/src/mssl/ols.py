"""Squared-loss estimators, mixing rules, and risk-term estimation.

Implements the supervised least-squares fit, its semi-supervised
counterpart built from pool moments, the two mixing mechanisms (mixing the
coefficient vectors, and mixing the loss functions), the closed-form best
mixing ratio for the coefficient mix, and block-resampling estimators of
every variance/bias factor those formulas need.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from .core import (
    LabeledSet,
    PopulationMoments,
    ResampleSpec,
    UnlabeledPool,
    build_moments,
    resample_block,
)
from .errors import (
    DataValidationError,
    RegimeError,
    ResampleBudgetError,
    SingularMatrixError,
)

__all__ = [
    "COND_LIMIT",
    "OlsRiskTerms",
    "RiskCurve",
    "MixDiagnostics",
    "OlsPoolModel",
    "DdotRiskModel",
    "fit_ols_supervised",
    "fit_ols_semisupervised",
    "fit_finite_m_semisupervised",
    "mix_linear",
    "fit_loss_mixed_ols",
    "ols_risk_terms",
    "NoiseSignalOls",
    "noise_signal_ols",
    "alpha_star_ols",
    "r_dot_curve",
    "grid_search_alpha_ddot",
    "alpha_star_finite_m",
]

# Condition number beyond which a matrix is treated as singular (float64).
COND_LIMIT = 1e12

_DEFAULT_BLOCKS = 200
_SKIP_BUDGET = 0.10


def _spd_factor(A: np.ndarray, what: str):
    """Cholesky factor of a symmetric matrix, or a rank-annotated error."""
    try:
        return cho_factor(A, lower=True)
    except np.linalg.LinAlgError as exc:
        rank = int(np.linalg.matrix_rank(A))
        raise SingularMatrixError(f"{what} is singular (rank {rank})", rank=rank) from exc


def _check_condition(A: np.ndarray, what: str) -> None:
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        rank = int(np.linalg.matrix_rank(A))
        raise SingularMatrixError(
            f"{what} too ill-conditioned (cond ~ {cond:.2e}, rank {rank})", rank=rank
        )


def fit_ols_supervised(data: LabeledSet) -> np.ndarray:
    """Least-squares coefficients (X^T X)^{-1} X^T Y."""
    X, Y = data.X, data.Y
    G = X.T @ X
    _check_condition(G, "X^T X")
    return cho_solve(_spd_factor(G, "X^T X"), X.T @ Y)


def fit_ols_semisupervised(data: LabeledSet, moments: PopulationMoments) -> np.ndarray:
    """Semi-supervised coefficients H^{-1}(X^T Y - n Xbar Ybar)."""
    X, Y = data.X, data.Y
    n = data.n
    rhs = X.T @ Y - n * X.mean(axis=0) * Y.mean()
    _check_condition(moments.H, "H")
    return cho_solve(_spd_factor(moments.H, "H"), rhs)


def fit_finite_m_semisupervised(data: LabeledSet, pool: UnlabeledPool) -> np.ndarray:
    """Finite-pool variant (m/n) (Z^T Z)^{-1} X^T Y."""
    if pool.p != data.p:
        raise DataValidationError("pool and labeled data disagree on p")
    G = pool.Z.T @ pool.Z
    _check_condition(G, "Z^T Z")
    return (pool.m / data.n) * cho_solve(_spd_factor(G, "Z^T Z"), data.X.T @ data.Y)


def mix_linear(a: np.ndarray, b: np.ndarray, alpha: float) -> np.ndarray:
    """Componentwise mix (1 - alpha) a + alpha b."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DataValidationError(f"length mismatch: {a.shape} vs {b.shape}")
    if not np.isfinite(alpha):
        raise DataValidationError("alpha must be finite")
    return (1.0 - alpha) * a + alpha * b


def fit_loss_mixed_ols(
    data: LabeledSet, moments: PopulationMoments, alpha: float
) -> np.ndarray:
    """Minimizer of the blended squared loss.

    Closed form S_alpha (X^T Y - alpha n Xbar Ybar) with
    S_alpha = (alpha H + (1 - alpha) X^T X)^{-1}; equals the supervised fit
    at alpha = 0 and the semi-supervised one at alpha = 1.
    """
    if not 0.0 <= alpha <= 1.0:
        raise DataValidationError(f"alpha must be in [0, 1], got {alpha}")
    X, Y = data.X, data.Y
    n = data.n
    blend = alpha * moments.H + (1.0 - alpha) * (X.T @ X)
    _check_condition(blend, "alpha H + (1-alpha) X^T X")
    rhs = X.T @ Y - alpha * n * X.mean(axis=0) * Y.mean()
    return cho_solve(_spd_factor(blend, "blend matrix"), rhs)


@dataclass(frozen=True)
class OlsRiskTerms:
    """Risk factors of the pure estimators, estimated from the pool.

    v_l scales the supervised variance, v_u = (n-1)p/n^2 the semi-supervised
    one; B_hat is the estimated squared bias of the semi-supervised fit at a
    plug-in coefficient vector, and b_u_hat its per-unit-signal analogue for
    the random-coefficient setting.
    """

    v_l: float
    v_u: float
    B_hat: float
    b_u_hat: float
    se_v_l: float


@dataclass(frozen=True)
class RiskCurve:
    """A grid of estimated reducible errors over mixing ratios."""

    alphas: np.ndarray
    r_hat: np.ndarray
    se: np.ndarray
    argmin_alpha: float

    def __post_init__(self):
        alphas = np.asarray(self.alphas, dtype=float)
        r_hat = np.asarray(self.r_hat, dtype=float)
        se = np.asarray(self.se, dtype=float)
        if not (alphas.size == r_hat.size == se.size) or alphas.size < 2:
            raise DataValidationError("curve grids must share a length >= 2")
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "r_hat", r_hat)
        object.__setattr__(self, "se", se)


@dataclass(frozen=True)
class MixDiagnostics:
    """Estimated risk components and the resulting mixing ratios."""

    v_l: float
    v_u: float
    B_hat: float
    sigma2_hat: float
    tau2_hat: float | None
    alpha_hat: float
    alpha_tilde: float | None
    se: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "v_l": self.v_l,
            "v_u": self.v_u,
            "B_hat": self.B_hat,
            "sigma2_hat": self.sigma2_hat,
            "tau2_hat": self.tau2_hat,
            "alpha_hat": self.alpha_hat,
            "alpha_tilde": self.alpha_tilde,
            "se": dict(self.se),
        }


def _default_spec(n: int, seed: int = 0) -> ResampleSpec:
    return ResampleSpec(block_size=n, replications=_DEFAULT_BLOCKS, seed=seed)


class OlsPoolModel:
    """Pool statistics for the squared-loss risk formulas.

    One pass of block resampling estimates v_l (with its standard error),
    the random-coefficient bias factor b_u, and keeps the whitened centered
    scatter of every block so the bias of the semi-supervised estimator can
    be evaluated at any plug-in coefficient vector without re-resampling.
    """

    def __init__(
        self,
        pool: UnlabeledPool,
        n: int,
        spec: ResampleSpec | None = None,
        moments: PopulationMoments | None = None,
        keep_blocks: bool = True,
    ):
        if n <= pool.p:
            raise RegimeError(
                f"n={n} <= p={pool.p}: these risk terms need n > p "
                "(use the interpolators module in the over-parameterized regime)"
            )
        spec = spec if spec is not None else _default_spec(n)
        if spec.block_size != n:
            raise DataValidationError("resample block_size must equal n")
        moments = moments if moments is not None else build_moments(pool, n)
        self.pool = moments.pool
        self.n = n
        self.p = pool.p
        self.spec = spec
        self.moments = moments
        self.H = moments.H
        self._L_H = np.linalg.cholesky(self.H)

        v_l_samples: list[float] = []
        b_u_samples: list[float] = []
        whitened: list[np.ndarray] = []
        skipped = 0
        sqrt_H = self._L_H  # lower-triangular factor, H = L L^T
        for i in range(spec.replications):
            Xb = resample_block(self.pool, spec, i)
            G = Xb.T @ Xb
            if np.linalg.cond(G) > COND_LIMIT:
                skipped += 1
                continue
            factor = cho_factor(G, lower=True)
            v_l_samples.append(float(np.trace(cho_solve(factor, self.H))) / n)
            xbar = Xb.mean(axis=0)
            M = G - n * np.outer(xbar, xbar)
            W = solve_triangular(sqrt_H, M, lower=True)  # L^{-1} M
            whitened.append(W)
            # tr(Delta1^T H Delta1) with Delta1 = H^{-1} M - I equals
            # ||L^{-1} M - L^T||_F^2.
            b_u_samples.append(float(np.sum((W - sqrt_H.T) ** 2)) / n)

        if skipped > _SKIP_BUDGET * spec.replications:
            raise ResampleBudgetError(
                f"{skipped}/{spec.replications} resampled blocks were singular"
            )
        if len(v_l_samples) < 2:
            raise DataValidationError("not enough usable blocks")

        arr = np.asarray(v_l_samples)
        self.n_blocks = arr.size
        self.n_skipped = skipped
        self.v_l = float(arr.mean())
        self.se_v_l = float(arr.std(ddof=1) / math.sqrt(arr.size))
        self.v_u = (n - 1) * pool.p / n**2
        self.b_u_hat = float(np.mean(b_u_samples))
        self._W = np.stack(whitened) if keep_blocks else None

    def bias_at(self, beta: np.ndarray) -> float:
        """Estimated bias of the semi-supervised estimator at a plug-in beta.

        (1/n) tr(H^{-1} Var_X(X^T X beta - n Xbar (Xbar . beta))) with the
        variance taken over the resampled blocks.
        """
        if self._W is None:
            raise DataValidationError("model was built with keep_blocks=False")
        beta = np.asarray(beta, dtype=float)
        U = self._W @ beta  # (blocks, p) whitened covariance vectors
        U = U - U.mean(axis=0)
        return float(np.sum(U * U) / (U.shape[0] - 1) / self.n)

    def terms(self, beta_plugin: np.ndarray) -> OlsRiskTerms:
        return OlsRiskTerms(
            v_l=self.v_l,
            v_u=self.v_u,
            B_hat=self.bias_at(beta_plugin),
            b_u_hat=self.b_u_hat,
            se_v_l=self.se_v_l,
        )


def ols_risk_terms(
    pool: UnlabeledPool,
    n: int,
    beta_plugin: np.ndarray,
    spec: ResampleSpec | None = None,
) -> OlsRiskTerms:
    """Block-resampling estimates of (v_l, v_u, B_hat, b_u_hat)."""
    return OlsPoolModel(pool, n, spec).terms(beta_plugin)


@dataclass(frozen=True)
class NoiseSignalOls:
    """Noise and signal estimates from the supervised residuals."""

    sigma2_hat: float
    tau2_hat: float


def noise_signal_ols(
    data: LabeledSet, beta_hat: np.ndarray, moments: PopulationMoments
) -> NoiseSignalOls:
    """Unbiased noise estimate RSS/(n-p) and the matching signal estimate."""
    n, p = data.n, data.p
    if n <= p:
        raise RegimeError(
            "noise estimation by RSS/(n-p) needs n > p; "
            "use the interpolators module when p >= n"
        )
    resid = data.Y - data.X @ np.asarray(beta_hat, dtype=float)
    sigma2 = float(resid @ resid) / (n - p)
    tr_exx = float(np.trace(moments.Exx))
    if tr_exx <= 0:
        raise DataValidationError("tr(Exx) must be positive to estimate the signal")
    tau2 = max((float(data.Y @ data.Y) / n - sigma2) / tr_exx, 0.0)
    return NoiseSignalOls(sigma2_hat=sigma2, tau2_hat=tau2)


def alpha_star_ols(
    sigma2: float, B: float, v_l: float, v_u: float
) -> tuple[float, float]:
    """Best mixing ratio for the coefficient mix, and the risk it attains.

    alpha* = sigma^2 (v_l - v_u) / (B + sigma^2 (v_l - v_u)), with minimum
    reducible error sigma^2 v_l - sigma^4 (v_l - v_u)^2 / (B + sigma^2 (v_l - v_u)).
    """
    if v_u < 0 or B < 0 or sigma2 < 0:
        raise DataValidationError("sigma2, B and v_u must be nonnegative")
    if v_l <= v_u:
        raise DataValidationError(
            f"v_l={v_l} <= v_u={v_u}: the variance ordering required for the "
            "optimum formula is violated"
        )
    gap = sigma2 * (v_l - v_u)
    denom = B + gap
    if denom <= 0:
        raise DataValidationError("B + sigma^2 (v_l - v_u) must be positive")
    alpha = gap / denom
    r_min = sigma2 * v_l - sigma2 * gap * (v_l - v_u) / denom
    return float(alpha), float(r_min)


def r_dot_curve(alpha, sigma2: float, B: float, v_l: float, v_u: float):
    """Reducible error of the coefficient mix as a function of alpha.

    Quadratic alpha^2 (B + sigma^2 (v_l - v_u)) - 2 alpha sigma^2 (v_l - v_u)
    + sigma^2 v_l; accepts a scalar or an array of mixing ratios.
    """
    if v_l <= v_u:
        raise DataValidationError(f"v_l={v_l} <= v_u={v_u}")
    if B < 0 or sigma2 < 0:
        raise DataValidationError("sigma2 and B must be nonnegative")
    alpha = np.asarray(alpha, dtype=float)
    gap = sigma2 * (v_l - v_u)
    out = alpha**2 * (B + gap) - 2.0 * alpha * gap + sigma2 * v_l
    return float(out) if out.ndim == 0 else out


def alpha_star_finite_m(
    sigma2: float, tau2: float, b_ut: float, v_ut: float, v_st: float, v_l: float
) -> float:
    """Best mixing ratio without the infinite-pool idealization.

    sigma^2 (v_l - v_s~) / (tau^2 b_u~ + sigma^2 (v_l + v_u~ - 2 v_s~)).
    """
    denom = tau2 * b_ut + sigma2 * (v_l + v_ut - 2.0 * v_st)
    if denom <= 0:
        raise DataValidationError("nonpositive denominator in the finite-m formula")
    return float(sigma2 * (v_l - v_st) / denom)


def _xi(alpha, n: int):
    return 1.0 - (2.0 * alpha - alpha**2) / n


def _ddot_block_pieces(Xb: np.ndarray, H: np.ndarray, n: int, alphas: np.ndarray):
    """Per-alpha (Delta, variance trace) for one resampled block.

    Delta_alpha = S_alpha (X^T X - alpha n Xbar Xbar^T) - I and the variance
    scalar tr(H S_alpha X^T X S_alpha), with
    S_alpha = (alpha H + (1 - alpha) X^T X)^{-1}.
    """
    p = Xb.shape[1]
    G = Xb.T @ Xb
    xbar = Xb.mean(axis=0)
    C = n * np.outer(xbar, xbar)
    eye = np.eye(p)
    deltas = np.empty((alphas.size, p, p))
    var_tr = np.empty(alphas.size)
    for j, a in enumerate(alphas):
        blend = a * H + (1.0 - a) * G
        factor = cho_factor(blend, lower=True)
        deltas[j] = cho_solve(factor, G - a * C) - eye
        SH = cho_solve(factor, H)  # S H
        SG = cho_solve(factor, G)  # S G
        var_tr[j] = float(np.einsum("ij,ji->", SH, SG))
    return deltas, var_tr


def grid_search_alpha_ddot(
    data: LabeledSet,
    pool: UnlabeledPool,
    beta_plugin: np.ndarray,
    sigma2_hat: float,
    grid,
    spec: ResampleSpec | None = None,
) -> RiskCurve:
    """Estimate the reducible error of the loss-mixed fit over a ratio grid.

    For each alpha the bias term (1/n) E_X[beta^T Delta_alpha^T H Delta_alpha
    beta] at the plug-in beta and the variance term
    (sigma^2 xi_alpha / n) tr(H E_X[S_alpha X^T X S_alpha]) are averaged over
    resampled blocks; returns the curve with standard errors and its argmin.
    """
    alphas = np.asarray(grid, dtype=float)
    if alphas.size < 5 or alphas.min() < 0 or alphas.max() > 1:
        raise DataValidationError("grid must have >= 5 points inside [0, 1]")
    n = data.n
    moments = build_moments(pool, n)
    spec = spec if spec is not None else _default_spec(n)
    beta = np.asarray(beta_plugin, dtype=float)
    H = moments.H
    xi = _xi(alphas, n)

    samples = []
    skipped = 0
    for i in range(spec.replications):
        Xb = resample_block(moments.pool, spec, i)
        if np.linalg.cond(Xb.T @ Xb) > COND_LIMIT:
            skipped += 1
            continue
        try:
            deltas, var_tr = _ddot_block_pieces(Xb, H, n, alphas)
        except np.linalg.LinAlgError:
            skipped += 1
            continue
        v = deltas @ beta  # (A, p)
        bias = np.einsum("ai,ij,aj->a", v, H, v)
        samples.append((bias + sigma2_hat * xi * var_tr) / n)

    if skipped > _SKIP_BUDGET * spec.replications:
        raise ResampleBudgetError(
            f"{skipped}/{spec.replications} blocks skipped in the grid search"
        )
    S = np.asarray(samples)
    r_hat = S.mean(axis=0)
    se = S.std(axis=0, ddof=1) / math.sqrt(S.shape[0])
    return RiskCurve(
        alphas=alphas,
        r_hat=r_hat,
        se=se,
        argmin_alpha=float(alphas[int(np.argmin(r_hat))]),
    )


class DdotRiskModel:
    """Reduced pool machinery for evaluating the loss-mixed risk curve fast.

    Precomputes, per grid point, the block-averaged bias operator
    E_X[Delta_alpha^T H Delta_alpha] and variance trace so the curve can be
    re-evaluated for many plug-in coefficient vectors (one per Monte Carlo
    replication) at quadratic-form cost.
    """

    def __init__(
        self,
        pool: UnlabeledPool,
        n: int,
        grid,
        spec: ResampleSpec | None = None,
        moments: PopulationMoments | None = None,
    ):
        self.alphas = np.asarray(grid, dtype=float)
        moments = moments if moments is not None else build_moments(pool, n)
        spec = spec if spec is not None else _default_spec(n)
        H = moments.H
        self.n = n
        self._xi = _xi(self.alphas, n)
        Q = np.zeros((self.alphas.size, pool.p, pool.p))
        V = np.zeros(self.alphas.size)
        used = 0
        skipped = 0
        for i in range(spec.replications):
            Xb = resample_block(moments.pool, spec, i)
            if np.linalg.cond(Xb.T @ Xb) > COND_LIMIT:
                skipped += 1
                continue
            try:
                deltas, var_tr = _ddot_block_pieces(Xb, H, n, self.alphas)
            except np.linalg.LinAlgError:
                skipped += 1
                continue
            HD = np.einsum("ij,ajk->aik", H, deltas)
            Q += np.einsum("aji,ajk->aik", deltas, HD)
            V += var_tr
            used += 1
        if skipped > _SKIP_BUDGET * spec.replications:
            raise ResampleBudgetError(
                f"{skipped}/{spec.replications} blocks skipped building the model"
            )
        self._Q = Q / used
        self._V = V / used

    def curve(self, beta_plugin: np.ndarray, sigma2_hat: float) -> np.ndarray:
        beta = np.asarray(beta_plugin, dtype=float)
        bias = np.einsum("aij,i,j->a", self._Q, beta, beta)
        return (bias + sigma2_hat * self._xi * self._V) / self.n

    def argmin_alpha(self, beta_plugin: np.ndarray, sigma2_hat: float) -> float:
        return float(self.alphas[int(np.argmin(self.curve(beta_plugin, sigma2_hat)))])
