"""Core data containers, pool moment estimation, and block resampling.

The unlabeled pool stands in for the covariate distribution: column moments
estimated from it feed every semi-supervised estimator, and expectations
over fresh design matrices are realized by drawing blocks of rows from the
pool without replacement.  All containers are immutable after construction
and every operation here is a pure function of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import DataValidationError

__all__ = [
    "LabeledSet",
    "UnlabeledPool",
    "PopulationMoments",
    "ResampleSpec",
    "center_pool",
    "build_moments",
    "resample_block",
    "resample_blocks",
    "seeded_rng",
]

# Stream tags keep independently-consumed RNG streams from colliding when
# they are derived from one user-facing seed.
_STREAM_BLOCKS = 0xB10C


def seeded_rng(seed: int, *indices: int) -> np.random.Generator:
    """Deterministic generator for (seed, *indices), stable across runs."""
    return np.random.default_rng(np.random.SeedSequence((int(seed),) + tuple(int(i) for i in indices)))


@dataclass(frozen=True)
class LabeledSet:
    """A supervised sample: covariates X (n x p) and responses Y (length n)."""

    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        Y = np.asarray(self.Y, dtype=float).ravel()
        if X.ndim != 2:
            raise DataValidationError("X must be a 2-d matrix")
        if X.shape[0] < 1:
            raise DataValidationError("need at least one observation")
        if Y.shape[0] != X.shape[0]:
            raise DataValidationError(
                f"Y has length {Y.shape[0]} but X has {X.shape[0]} rows"
            )
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise DataValidationError("labeled data must be finite")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class UnlabeledPool:
    """Covariate-only observations Z (m x p) used to estimate moments."""

    Z: np.ndarray
    centered: bool = False

    def __post_init__(self):
        Z = np.atleast_2d(np.asarray(self.Z, dtype=float))
        if Z.ndim != 2 or Z.shape[0] < 1:
            raise DataValidationError("Z must be a nonempty 2-d matrix")
        if not np.all(np.isfinite(Z)):
            raise DataValidationError("pool entries must be finite")
        if self.centered:
            scale = np.maximum(np.max(np.abs(Z), axis=0), 1.0)
            if np.any(np.abs(Z.mean(axis=0)) > 1e-12 * scale):
                raise DataValidationError(
                    "pool flagged as centered but column means are not ~0"
                )
        object.__setattr__(self, "Z", Z)

    @property
    def m(self) -> int:
        return self.Z.shape[0]

    @property
    def p(self) -> int:
        return self.Z.shape[1]


@dataclass(frozen=True)
class PopulationMoments:
    """Pool-based moment estimates shared by every estimator module.

    ``mean`` holds the column means removed from the pool; ``Exx`` estimates
    E[xx^T] on centered data, ``H`` is its n-scaled version n*Exx, and
    ``Sigma`` equals ``Exx`` under the zero-mean convention.  ``pool`` is the
    centered view of the ingested pool.
    """

    mean: np.ndarray
    Exx: np.ndarray
    H: np.ndarray
    Sigma: np.ndarray
    n: int
    pool: UnlabeledPool

    def __post_init__(self):
        for name in ("Exx", "Sigma"):
            A = getattr(self, name)
            sym_err = np.max(np.abs(A - A.T)) if A.size else 0.0
            if sym_err > 1e-10 * max(1.0, np.max(np.abs(A))):
                raise DataValidationError(f"{name} is not symmetric")
        evals = np.linalg.eigvalsh(self.Sigma)
        if evals.size and evals.min() < -1e-10 * max(np.trace(self.Sigma), 1.0):
            raise DataValidationError("Sigma estimate is not PSD")


def center_pool(pool: UnlabeledPool) -> tuple[UnlabeledPool, np.ndarray]:
    """Return a column-centered view of the pool and the removed means."""
    if pool.centered:
        return pool, np.zeros(pool.p)
    mean = pool.Z.mean(axis=0)
    return UnlabeledPool(pool.Z - mean, centered=True), mean


def build_moments(pool: UnlabeledPool, n: int) -> PopulationMoments:
    """Estimate (mean, Exx, H, Sigma) from the pool for a sample size n.

    The pool is centered first (the estimators assume E[x] = 0), and the
    centered view is carried on the returned object.
    """
    if pool.m < 2:
        raise DataValidationError("need at least 2 pool rows to form moments")
    if n < 1:
        raise DataValidationError("n must be >= 1")
    centered, mean = center_pool(pool)
    Z = centered.Z
    Exx = (Z.T @ Z) / centered.m
    Exx = 0.5 * (Exx + Exx.T)
    return PopulationMoments(
        mean=mean, Exx=Exx, H=n * Exx, Sigma=Exx, n=int(n), pool=centered
    )


@dataclass(frozen=True)
class ResampleSpec:
    """Deterministic block-resampling plan: k blocks of block_size pool rows."""

    block_size: int
    replications: int
    seed: int

    def __post_init__(self):
        if self.block_size < 1:
            raise DataValidationError("block_size must be >= 1")
        if self.replications < 1:
            raise DataValidationError("replications must be >= 1")


def resample_block(pool: UnlabeledPool, spec: ResampleSpec, index: int) -> np.ndarray:
    """The index-th resampled block; depends only on (spec.seed, index)."""
    if spec.block_size > pool.m:
        raise DataValidationError(
            f"block_size {spec.block_size} exceeds pool size {pool.m}"
        )
    rng = seeded_rng(spec.seed, _STREAM_BLOCKS, index)
    idx = rng.choice(pool.m, size=spec.block_size, replace=False)
    return pool.Z[idx]


def resample_blocks(pool: UnlabeledPool, spec: ResampleSpec) -> Iterator[np.ndarray]:
    """Yield spec.replications blocks, each drawn without replacement."""
    if spec.block_size > pool.m:
        raise DataValidationError(
            f"block_size {spec.block_size} exceeds pool size {pool.m}"
        )
    for i in range(spec.replications):
        yield resample_block(pool, spec, i)
