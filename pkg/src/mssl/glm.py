"""General-link estimators and their quadratic-approximation risk terms.

All fits minimize the canonical loss G(x^T beta) - x^T beta y (or its
pool-averaged semi-supervised analogue) by damped Newton-Raphson.  Risk
factors for the mixing-ratio formulas come from a quadratic expansion of
the losses around an evaluation point, with the required expectations over
fresh design matrices realized by block resampling from the pool.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .core import (
    LabeledSet,
    ResampleSpec,
    UnlabeledPool,
    build_moments,
    resample_block,
)
from .errors import (
    DataValidationError,
    LinkValidationError,
    RegimeError,
    ResampleBudgetError,
    SingularMatrixError,
)
from .links import LinkSpec
from .ols import COND_LIMIT, RiskCurve, _xi

__all__ = [
    "GlmFitReport",
    "GlmQuadratic",
    "GlmProblem",
    "GlmPoolStats",
    "fit_glm_supervised",
    "fit_glm_semisupervised",
    "fit_glm_loss_mixed",
    "glm_risk_terms",
    "estimate_noise_glm",
    "alpha_dot_glm",
    "r_dot_glm_curve",
    "grid_search_alpha_ddot_glm",
    "v_M_terms",
    "alpha_M_dispersion",
]

_DEFAULT_BLOCKS = 200
_SKIP_BUDGET = 0.10


@dataclass(frozen=True)
class GlmFitReport:
    """Outcome of one Newton solve."""

    beta: np.ndarray
    iterations: int
    final_step_norm: float
    converged: bool


class GlmProblem:
    """Objective, gradient, and Hessian closures for one training instance.

    The semi-supervised pieces average over a centered pool; the mixed loss
    blends the supervised and semi-supervised pieces with weight alpha on
    the pool side.
    """

    def __init__(self, data: LabeledSet, pool: UnlabeledPool | None, link: LinkSpec):
        self.data = data
        self.link = link
        self.X = data.X
        self.Y = data.Y
        self.n = data.n
        if pool is not None:
            if pool.p != data.p:
                raise DataValidationError("pool and labeled data disagree on p")
            if not pool.centered:
                pool = build_moments(pool, data.n).pool
            self.Z = pool.Z
            self.m = pool.m
            self.zbar = self.Z.mean(axis=0)
        else:
            self.Z = None
            self.m = 0
            self.zbar = None
        ybar = self.Y.mean()
        xbar = self.X.mean(axis=0)
        # gradient of the sample covariance term Cov(X beta, Y)
        self._cov_xy = (self.X.T @ self.Y - self.n * xbar * ybar) / self.n
        self._ybar = ybar

    # -- supervised loss ---------------------------------------------------
    def sup_value(self, beta: np.ndarray) -> float:
        eta = self.X @ beta
        return float(np.mean(self.link.G(eta) - eta * self.Y))

    def sup_grad(self, beta: np.ndarray) -> np.ndarray:
        return self.X.T @ (self.link.g(self.X @ beta) - self.Y) / self.n

    def sup_hess(self, beta: np.ndarray) -> np.ndarray:
        d = self.link.gprime(self.X @ beta)
        return (self.X * d[:, None]).T @ self.X / self.n

    # -- semi-supervised loss ----------------------------------------------
    def _require_pool(self):
        if self.Z is None:
            raise DataValidationError("this objective needs an unlabeled pool")

    def semi_value(self, beta: np.ndarray) -> float:
        self._require_pool()
        zeta = self.Z @ beta
        lin = (self.zbar @ beta) * self._ybar + self._cov_xy @ beta
        return float(np.mean(self.link.G(zeta)) - lin)

    def semi_grad(self, beta: np.ndarray) -> np.ndarray:
        self._require_pool()
        return (
            self.Z.T @ self.link.g(self.Z @ beta) / self.m
            - self.zbar * self._ybar
            - self._cov_xy
        )

    def semi_hess(self, beta: np.ndarray) -> np.ndarray:
        self._require_pool()
        d = self.link.gprime(self.Z @ beta)
        return (self.Z * d[:, None]).T @ self.Z / self.m

    # -- blended loss --------------------------------------------------------
    def mixed_value(self, beta: np.ndarray, alpha: float) -> float:
        return (1.0 - alpha) * self.sup_value(beta) + alpha * self.semi_value(beta)

    def mixed_grad(self, beta: np.ndarray, alpha: float) -> np.ndarray:
        return (1.0 - alpha) * self.sup_grad(beta) + alpha * self.semi_grad(beta)

    def mixed_hess(self, beta: np.ndarray, alpha: float) -> np.ndarray:
        return (1.0 - alpha) * self.sup_hess(beta) + alpha * self.semi_hess(beta)

    def ols_start(self) -> np.ndarray:
        return np.linalg.lstsq(self.X, self.Y, rcond=None)[0]


def _newton(value, grad, hess, beta0, max_iter: int = 100, tol: float = 1e-10) -> GlmFitReport:
    """Damped Newton minimization of a smooth convex objective.

    Steps are halved until the objective stops increasing; five successive
    step-norm growths without convergence end in a non-converged report.
    """
    beta = np.asarray(beta0, dtype=float).copy()
    f = value(beta)
    step_norm = math.inf
    prev_norm = math.inf
    growth = 0
    for it in range(1, max_iter + 1):
        g = grad(beta)
        Hm = hess(beta)
        step = None
        ridge = 0.0
        for attempt in range(4):
            try:
                step = cho_solve(cho_factor(Hm + ridge * np.eye(Hm.shape[0]), lower=True), g)
                break
            except np.linalg.LinAlgError:
                base = max(np.trace(Hm) / Hm.shape[0], 1.0)
                ridge = base * (1e-10 if ridge == 0.0 else 1e4 * ridge / base)
        if step is None:
            raise SingularMatrixError("Newton Hessian remained singular after damping")

        t = 1.0
        accepted = False
        for _ in range(30):
            cand = beta - t * step
            fc = value(cand)
            if fc <= f + 1e-12 * (1.0 + abs(f)):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            return GlmFitReport(beta=beta, iterations=it, final_step_norm=step_norm, converged=False)

        step_norm = float(t * np.linalg.norm(step))
        beta, f = cand, fc
        if step_norm < tol:
            return GlmFitReport(beta=beta, iterations=it, final_step_norm=step_norm, converged=True)
        growth = growth + 1 if step_norm > prev_norm else 0
        if growth >= 5:
            return GlmFitReport(beta=beta, iterations=it, final_step_norm=step_norm, converged=False)
        prev_norm = step_norm
    return GlmFitReport(beta=beta, iterations=max_iter, final_step_norm=step_norm, converged=False)


def fit_glm_supervised(
    data: LabeledSet, link: LinkSpec, max_iter: int = 100, tol: float = 1e-10
) -> GlmFitReport:
    """Newton minimizer of the supervised canonical loss."""
    prob = GlmProblem(data, None, link)
    return _newton(prob.sup_value, prob.sup_grad, prob.sup_hess, prob.ols_start(), max_iter, tol)


def fit_glm_semisupervised(
    data: LabeledSet,
    pool: UnlabeledPool,
    link: LinkSpec,
    max_iter: int = 100,
    tol: float = 1e-10,
) -> GlmFitReport:
    """Newton minimizer of the pool-averaged semi-supervised loss."""
    prob = GlmProblem(data, pool, link)
    return _newton(prob.semi_value, prob.semi_grad, prob.semi_hess, prob.ols_start(), max_iter, tol)


def fit_glm_loss_mixed(
    data: LabeledSet,
    pool: UnlabeledPool,
    link: LinkSpec,
    alpha: float,
    max_iter: int = 100,
    tol: float = 1e-10,
    beta0: np.ndarray | None = None,
) -> GlmFitReport:
    """Newton minimizer of the alpha-blended loss.

    The update solves (alpha H_m + (1 - alpha) H_n) step = blended gradient,
    with H_m the pool Hessian and H_n the labeled-sample one; alpha = 0
    reproduces the supervised fit and alpha = 1 the semi-supervised fit.
    """
    if not 0.0 <= alpha <= 1.0:
        raise DataValidationError(f"alpha must be in [0, 1], got {alpha}")
    prob = GlmProblem(data, pool, link)
    start = prob.ols_start() if beta0 is None else np.asarray(beta0, dtype=float)
    return _newton(
        lambda b: prob.mixed_value(b, alpha),
        lambda b: prob.mixed_grad(b, alpha),
        lambda b: prob.mixed_hess(b, alpha),
        start,
        max_iter,
        tol,
    )


@dataclass(frozen=True)
class GlmQuadratic:
    """Risk factors of the quadratic loss expansion at ``beta_eval``.

    The v-terms and the bias factor here carry the n-scaled normalization
    (they are n times their squared-loss counterparts under the identity
    link); the mixing-ratio formula is invariant to that common scale.
    """

    beta_eval: np.ndarray
    Hg_hat: np.ndarray
    v_l_g: float
    v_u_g: float
    v_s_g: float
    B_g_hat: float
    zeta_hat_mean: np.ndarray
    zeta_hat_cov: np.ndarray
    se_v_l_g: float = 0.0
    se_v_s_g: float = 0.0


class GlmPoolStats:
    """One resampling pass computing every pool statistic at ``beta_eval``.

    Collects the v-terms of the quadratic risk expansion, the bias factor,
    the trace appearing in the noise-estimator denominator, the dispersion
    variant's v-terms, and (optionally) the loss-mixed risk curve over a
    mixing-ratio grid.
    """

    def __init__(
        self,
        pool: UnlabeledPool,
        n: int,
        link: LinkSpec,
        beta_eval: np.ndarray,
        spec: ResampleSpec | None = None,
        alphas=None,
    ):
        if n <= pool.p:
            raise RegimeError(f"need n > p, got n={n}, p={pool.p}")
        moments = build_moments(pool, n)
        pool = moments.pool
        spec = spec if spec is not None else ResampleSpec(n, _DEFAULT_BLOCKS, 0)
        if spec.block_size != n:
            raise DataValidationError("resample block_size must equal n")
        beta_eval = np.asarray(beta_eval, dtype=float)
        self.n, self.p = n, pool.p
        self.beta_eval = beta_eval
        self.link = link

        Z = pool.Z
        m = pool.m
        eta_pool = Z @ beta_eval
        d_pool = link.gprime(eta_pool)
        if np.min(d_pool) <= 0.0:
            raise LinkValidationError(
                "g' is nonpositive somewhere on the pool; the quadratic "
                "expansion needs a strictly increasing link there"
            )
        mu_pool = link.g(eta_pool)
        Zd = Z * d_pool[:, None]
        self.Hg = n * (Zd.T @ Z) / m
        self.Hg = 0.5 * (self.Hg + self.Hg.T)
        self.H = moments.H
        Zd2 = Z * (d_pool**2)[:, None]
        self.H2 = n * (Zd2.T @ Z) / m
        self.exmu = n * (Z.T @ mu_pool) / m  # total-information E_X[X^T mu]

        Lg = np.linalg.cholesky(self.Hg)
        self.v_u_g = (n - 1) / n * float(np.trace(cho_solve((Lg, True), self.H)))

        self.alphas = None if alphas is None else np.asarray(alphas, dtype=float)
        v_l_samples, v_s_samples, tr_sigma_samples, v_lM_samples = [], [], [], []
        cov_vecs = []
        curve_samples = []
        skipped = 0
        for i in range(spec.replications):
            Xb = resample_block(pool, spec, i)
            d = link.gprime(Xb @ beta_eval)
            F = (Xb * d[:, None]).T @ Xb
            if np.linalg.cond(F) > COND_LIMIT:
                skipped += 1
                continue
            try:
                factor = cho_factor(F, lower=True)
            except np.linalg.LinAlgError:
                skipped += 1
                continue
            G = Xb.T @ Xb
            FiG = cho_solve(factor, G)
            FiHg = cho_solve(factor, self.Hg)
            v_l_samples.append(float(np.einsum("ij,ji->", FiG, FiHg)))
            v_s_samples.append((n - 1) / n * float(np.trace(FiG)))
            G2 = (Xb * (d**2)[:, None]).T @ Xb
            FiG2 = cho_solve(factor, G2)
            tr_sigma_samples.append(float(np.einsum("ij,ji->", FiG, FiG2)))
            v_lM_samples.append(float(np.trace(cho_solve(factor, self.H2))))
            mu = link.g(Xb @ beta_eval)
            c = Xb.T @ mu - n * Xb.mean(axis=0) * mu.mean()
            cov_vecs.append(c)
            if self.alphas is not None:
                zeta = self.exmu - c
                bias = np.empty(self.alphas.size)
                var = np.empty(self.alphas.size)
                for j, a in enumerate(self.alphas):
                    blend = a * self.Hg + (1.0 - a) * F
                    bf = cho_factor(blend, lower=True)
                    Sz = cho_solve(bf, zeta)
                    bias[j] = float(Sz @ self.Hg @ Sz)
                    SHg = cho_solve(bf, self.Hg)
                    SG = cho_solve(bf, G)
                    var[j] = float(np.einsum("ij,ji->", SHg, SG))
                curve_samples.append((bias, var))

        if skipped > _SKIP_BUDGET * spec.replications:
            raise ResampleBudgetError(
                f"{skipped}/{spec.replications} blocks skipped estimating risk terms"
            )
        if len(v_l_samples) < 2:
            raise DataValidationError("not enough usable blocks")

        def _mean_se(vals):
            arr = np.asarray(vals)
            return float(arr.mean()), float(arr.std(ddof=1) / math.sqrt(arr.size))

        self.v_l_g, self.se_v_l_g = _mean_se(v_l_samples)
        self.v_s_g, self.se_v_s_g = _mean_se(v_s_samples)
        self.trace_sigma = float(np.mean(tr_sigma_samples))
        self.v_l_M = float(np.mean(v_lM_samples))
        self.v_u_M = (n - 1) / n * float(np.trace(cho_solve((Lg, True), self.H2)))

        C = np.stack(cov_vecs)
        self.zeta_hat_mean = self.exmu - C.mean(axis=0)
        zetas = self.exmu[None, :] - C
        self.zeta_hat_cov = np.cov(zetas.T, ddof=1) if C.shape[0] > 1 else np.zeros((self.p, self.p))
        U = np.linalg.solve(Lg, (C - C.mean(axis=0)).T).T
        self.B_g_hat = float(np.sum(U * U) / (C.shape[0] - 1))
        self._curve_samples = curve_samples

    def quadratic(self) -> GlmQuadratic:
        return GlmQuadratic(
            beta_eval=self.beta_eval,
            Hg_hat=self.Hg,
            v_l_g=self.v_l_g,
            v_u_g=self.v_u_g,
            v_s_g=self.v_s_g,
            B_g_hat=self.B_g_hat,
            zeta_hat_mean=self.zeta_hat_mean,
            zeta_hat_cov=self.zeta_hat_cov,
            se_v_l_g=self.se_v_l_g,
            se_v_s_g=self.se_v_s_g,
        )

    def sigma2_denominator(self) -> float:
        return self.n - 2 * self.p + self.trace_sigma

    def ddot_curve(self, sigma2_hat: float) -> RiskCurve:
        if self.alphas is None:
            raise DataValidationError("stats were built without a mixing-ratio grid")
        xi = _xi(self.alphas, self.n)
        rows = np.stack(
            [self.alphas**2 * b + xi * sigma2_hat * v for b, v in self._curve_samples]
        )
        r_hat = rows.mean(axis=0)
        se = rows.std(axis=0, ddof=1) / math.sqrt(rows.shape[0])
        return RiskCurve(
            alphas=self.alphas,
            r_hat=r_hat,
            se=se,
            argmin_alpha=float(self.alphas[int(np.argmin(r_hat))]),
        )


def glm_risk_terms(
    pool: UnlabeledPool,
    n: int,
    link: LinkSpec,
    beta_eval: np.ndarray,
    spec: ResampleSpec | None = None,
) -> GlmQuadratic:
    """Block-resampling estimates of the quadratic-expansion risk factors."""
    return GlmPoolStats(pool, n, link, beta_eval, spec).quadratic()


def estimate_noise_glm(
    data: LabeledSet,
    beta_hat: np.ndarray,
    beta_breve: np.ndarray,
    pool: UnlabeledPool,
    link: LinkSpec,
    spec: ResampleSpec | None = None,
    stats: GlmPoolStats | None = None,
) -> float:
    """Approximately unbiased noise estimate for a general link.

    RSS of the supervised fit divided by n - 2p + an estimated trace, with
    the local derivative weights evaluated at the semi-supervised fit.
    Negative raw values are clipped at zero with a warning.
    """
    if stats is None:
        stats = GlmPoolStats(pool, data.n, link, beta_breve, spec)
    denom = stats.sigma2_denominator()
    if denom <= 0:
        raise DataValidationError(
            f"nonpositive noise-estimator denominator (trace {stats.trace_sigma:.4g})"
        )
    resid = link.g(data.X @ np.asarray(beta_hat, dtype=float)) - data.Y
    sigma2 = float(resid @ resid) / denom
    if sigma2 < 0:
        warnings.warn("noise estimate clipped at zero", stacklevel=2)
        return 0.0
    return sigma2


def alpha_dot_glm(
    sigma2: float, B_g: float, v_l_g: float, v_u_g: float, v_s_g: float
) -> tuple[float, float]:
    """Best mixing ratio under the quadratic expansion, and its risk value."""
    curv = v_l_g + v_u_g - 2.0 * v_s_g
    if curv <= 0:
        raise DataValidationError(
            f"v_l + v_u - 2 v_s = {curv:.4g} <= 0: quadratic curvature "
            "condition violated (Monte Carlo noise or assumption breach)"
        )
    denom = B_g + sigma2 * curv
    if denom <= 0:
        raise DataValidationError("nonpositive denominator")
    alpha = sigma2 * (v_l_g - v_s_g) / denom
    r_min = sigma2 * v_l_g - sigma2**2 * (v_l_g - v_s_g) ** 2 / denom
    return float(alpha), float(r_min)


def r_dot_glm_curve(
    alpha, sigma2: float, B_g: float, v_l_g: float, v_u_g: float, v_s_g: float
):
    """Quadratic risk of the coefficient mix under the general-link expansion."""
    curv = v_l_g + v_u_g - 2.0 * v_s_g
    if curv <= 0:
        raise DataValidationError(f"v_l + v_u - 2 v_s = {curv:.4g} <= 0")
    alpha = np.asarray(alpha, dtype=float)
    out = (
        alpha**2 * (B_g + sigma2 * curv)
        - 2.0 * alpha * sigma2 * (v_l_g - v_s_g)
        + sigma2 * v_l_g
    )
    return float(out) if out.ndim == 0 else out


def grid_search_alpha_ddot_glm(
    pool: UnlabeledPool,
    n: int,
    link: LinkSpec,
    beta_eval: np.ndarray,
    sigma2_hat: float,
    grid,
    spec: ResampleSpec | None = None,
) -> RiskCurve:
    """Loss-mixed risk curve over a ratio grid for a general link."""
    grid = np.asarray(grid, dtype=float)
    if grid.min() < 0 or grid.max() > 1:
        raise DataValidationError("grid must lie in [0, 1]")
    stats = GlmPoolStats(pool, n, link, beta_eval, spec, alphas=grid)
    return stats.ddot_curve(sigma2_hat)


def v_M_terms(
    pool: UnlabeledPool,
    n: int,
    link: LinkSpec,
    beta_eval: np.ndarray,
    spec: ResampleSpec | None = None,
) -> tuple[float, float]:
    """Variance factors for the dispersion-weighted prediction mix."""
    stats = GlmPoolStats(pool, n, link, beta_eval, spec)
    return stats.v_l_M, stats.v_u_M


def alpha_M_dispersion(sigma2: float, B: float, v_l_M: float, v_u_M: float) -> float:
    """Best mixing ratio when the conditional variance scales with g'."""
    if v_l_M <= v_u_M:
        raise DataValidationError(f"v_l_M={v_l_M} <= v_u_M={v_u_M}: ordering violated")
    gap = sigma2 * (v_l_M - v_u_M)
    denom = B + gap
    if denom <= 0:
        raise DataValidationError("nonpositive denominator")
    return float(gap / denom)
