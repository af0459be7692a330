import numpy as np
import pytest

from mssl import (
    DataValidationError,
    LabeledSet,
    ResampleSpec,
    UnlabeledPool,
    build_moments,
    center_pool,
    resample_blocks,
    seeded_rng,
)


def test_labeled_set_validation():
    with pytest.raises(DataValidationError):
        LabeledSet(np.ones((2, 2)), [1.0])  # length mismatch
    with pytest.raises(DataValidationError):
        LabeledSet([[1.0, np.nan]], [1.0])
    ds = LabeledSet([[1.0, 2.0], [3.0, 4.0]], [1.0, 2.0])
    assert (ds.n, ds.p) == (2, 2)


def test_pool_centered_flag_checked():
    with pytest.raises(DataValidationError):
        UnlabeledPool(np.array([[5.0, 5.0], [5.0, 5.0]]), centered=True)
    UnlabeledPool(np.array([[1.0, -1.0], [-1.0, 1.0]]), centered=True)


def test_build_moments_hand_example():
    Z = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    mom = build_moments(UnlabeledPool(Z), n=2)
    np.testing.assert_allclose(mom.mean, [0.0, 0.0])
    np.testing.assert_allclose(mom.Exx, np.diag([0.5, 0.5]))
    np.testing.assert_allclose(mom.H, np.diag([1.0, 1.0]))


def test_build_moments_zero_pool():
    mom = build_moments(UnlabeledPool(np.zeros((3, 2))), n=3)
    np.testing.assert_array_equal(mom.Exx, np.zeros((2, 2)))


def test_build_moments_centers_and_records_mean():
    Z = np.array([[4.0, 4.0], [6.0, 6.0], [5.0, 5.0]])
    mom = build_moments(UnlabeledPool(Z), n=2)
    np.testing.assert_allclose(mom.mean, [5.0, 5.0])
    assert mom.pool.centered
    np.testing.assert_allclose(mom.pool.Z.mean(axis=0), [0.0, 0.0], atol=1e-14)


def test_centering_idempotent():
    rng = seeded_rng(3)
    Z = rng.standard_normal((50, 4)) + 2.0
    first = build_moments(UnlabeledPool(Z), n=10)
    second = build_moments(first.pool, n=10)
    assert np.max(np.abs(first.pool.Z - second.pool.Z)) <= 1e-12
    assert np.max(np.abs(first.Exx - second.Exx)) <= 1e-12


def test_h_is_exact_scaling_of_exx():
    rng = seeded_rng(4)
    mom = build_moments(UnlabeledPool(rng.standard_normal((30, 3))), n=7)
    assert np.array_equal(mom.H, 7 * mom.Exx)


def test_build_moments_rejects_tiny_pool():
    with pytest.raises(DataValidationError):
        build_moments(UnlabeledPool(np.ones((1, 2))), n=1)


def test_center_pool_roundtrip():
    Z = np.array([[1.0, 2.0], [3.0, 4.0]])
    centered, mean = center_pool(UnlabeledPool(Z))
    np.testing.assert_allclose(mean, [2.0, 3.0])
    again, mean2 = center_pool(centered)
    assert again is centered
    np.testing.assert_array_equal(mean2, [0.0, 0.0])


def test_resample_determinism():
    rng = seeded_rng(11)
    pool = UnlabeledPool(rng.standard_normal((4, 3)))
    spec = ResampleSpec(block_size=2, replications=3, seed=7)
    runs = [list(resample_blocks(pool, spec)) for _ in range(2)]
    for a, b in zip(*runs):
        np.testing.assert_array_equal(a, b)


def test_resample_independent_of_consumption_order():
    rng = seeded_rng(12)
    pool = UnlabeledPool(rng.standard_normal((10, 2)))
    spec = ResampleSpec(block_size=4, replications=5, seed=99)
    from mssl import resample_block

    forward = [resample_block(pool, spec, i) for i in range(5)]
    backward = [resample_block(pool, spec, i) for i in reversed(range(5))][::-1]
    for a, b in zip(forward, backward):
        np.testing.assert_array_equal(a, b)


def test_resample_single_block_shape():
    pool = UnlabeledPool(np.arange(12.0).reshape(6, 2))
    blocks = list(resample_blocks(pool, ResampleSpec(3, 1, 0)))
    assert len(blocks) == 1
    assert blocks[0].shape == (3, 2)


def test_resample_block_too_large():
    pool = UnlabeledPool(np.ones((3, 2)))
    with pytest.raises(DataValidationError):
        list(resample_blocks(pool, ResampleSpec(4, 1, 0)))


def test_resample_blocks_match_pool_moments():
    # law of large numbers: mean of (1/n) X^T X over many blocks approaches
    # the pool second-moment estimate within 3 standard errors
    rng = seeded_rng(21)
    Z = rng.standard_normal((2000, 3))
    mom = build_moments(UnlabeledPool(Z), n=20)
    spec = ResampleSpec(block_size=20, replications=10000, seed=5)
    samples = np.array(
        [(X.T @ X / 20)[0, 0] for X in resample_blocks(mom.pool, spec)]
    )
    se = samples.std(ddof=1) / np.sqrt(samples.size)
    assert abs(samples.mean() - mom.Exx[0, 0]) < 3 * se
