import math

import numpy as np
import pytest

from mssl import (
    CovarianceSpec,
    DataValidationError,
    ExperimentConfig,
    UnlabeledPool,
    constant_beta,
    draw_dataset,
    elu_link,
    gen_sigma,
    identity_link,
    load_config,
    preset_names,
    random_beta,
    run_experiment,
    seeded_rng,
    summarize_pairwise,
    write_result_csv,
)


# -- covariance generation ------------------------------------------------------


def test_gen_sigma_block_example():
    sigma = gen_sigma(CovarianceSpec("block_equicorrelated", 4, blocks=2, rho=0.9))
    block = np.array([[1.0, 0.9], [0.9, 1.0]])
    expected = np.block(
        [[block, np.zeros((2, 2))], [np.zeros((2, 2)), block]]
    )
    np.testing.assert_allclose(sigma, expected)


def test_gen_sigma_rho_zero_is_identity():
    sigma = gen_sigma(CovarianceSpec("block_equicorrelated", 6, blocks=3, rho=0.0))
    np.testing.assert_array_equal(sigma, np.eye(6))


def test_gen_sigma_spiked_example():
    sigma = gen_sigma(
        CovarianceSpec("spiked_diagonal", 100, spike_fraction=0.8, minor_scale=0.02)
    )
    d = np.diag(sigma)
    assert np.all(d[:80] == 1.0)
    assert np.all(d[80:] == 0.02)
    assert np.count_nonzero(sigma - np.diag(d)) == 0


def test_gen_sigma_trace_rescaling():
    sigma = gen_sigma(
        CovarianceSpec("block_equicorrelated", 10, blocks=5, rho=0.5, target_trace=25.0)
    )
    assert np.trace(sigma) == pytest.approx(25.0)


def test_gen_sigma_invalid_rho():
    with pytest.raises(DataValidationError):
        gen_sigma(CovarianceSpec("block_equicorrelated", 4, blocks=2, rho=-1.0))


def test_gen_sigma_indivisible_blocks():
    with pytest.raises(DataValidationError):
        gen_sigma(CovarianceSpec("block_equicorrelated", 5, blocks=2, rho=0.5))


def test_gen_sigma_custom_psd_check():
    bad = np.array([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(DataValidationError):
        gen_sigma(CovarianceSpec("custom", 2, matrix=bad))


# -- dataset draws -----------------------------------------------------------------


def test_draw_noiseless():
    sigma = np.eye(3)
    ds, beta = draw_dataset(sigma, 5, constant_beta(1.5), elu_link(), 0.0, seeded_rng(1))
    np.testing.assert_array_equal(beta, np.full(3, 1.5))
    np.testing.assert_allclose(ds.Y, elu_link().g(ds.X @ beta), atol=1e-12)


def test_draw_constant_beta_value():
    _, beta = draw_dataset(np.eye(2), 3, constant_beta(1.5), identity_link(), 1.0, seeded_rng(2))
    np.testing.assert_array_equal(beta, [1.5, 1.5])


def test_draw_deterministic_per_seed():
    sigma = gen_sigma(CovarianceSpec("block_equicorrelated", 4, blocks=2, rho=0.5))
    a, _ = draw_dataset(sigma, 6, random_beta(1.0), identity_link(), 2.0, seeded_rng(3))
    b, _ = draw_dataset(sigma, 6, random_beta(1.0), identity_link(), 2.0, seeded_rng(3))
    np.testing.assert_array_equal(a.X, b.X)
    np.testing.assert_array_equal(a.Y, b.Y)


def test_draw_sample_covariance_matches_sigma():
    sigma = gen_sigma(CovarianceSpec("block_equicorrelated", 4, blocks=2, rho=0.7))
    ds, _ = draw_dataset(sigma, 100000, constant_beta(0.0), identity_link(), 0.0, seeded_rng(4))
    emp = ds.X.T @ ds.X / ds.n
    # entrywise within 3 standard errors (var of x_i x_j products ~ 1+rho^2)
    assert np.max(np.abs(emp - sigma)) < 3 * 2.0 / math.sqrt(ds.n)


def test_draw_from_pool_rows():
    pool = UnlabeledPool(seeded_rng(5).standard_normal((40, 3)))
    ds, _ = draw_dataset(np.eye(3), 10, constant_beta(1.0), identity_link(), 1.0,
                         seeded_rng(6), pool=pool)
    for row in ds.X:
        assert np.any(np.all(np.isclose(pool.Z, row), axis=1))


# -- pairwise summaries ----------------------------------------------------------------


def test_pairwise_symmetric_zero():
    s = summarize_pairwise([-1.0, 0.0, 1.0])
    assert s.mean == 0.0
    assert s.t == 0.0
    assert s.p == 1.0


def test_pairwise_degenerate_constant():
    s = summarize_pairwise([0.5, 0.5, 0.5])
    assert s.p == 0.0
    assert s.t == math.inf


def test_pairwise_degenerate_zero():
    s = summarize_pairwise([0.0, 0.0])
    assert s.p == 1.0


def test_pairwise_needs_two():
    with pytest.raises(DataValidationError):
        summarize_pairwise([1.0])


def test_pairwise_calibration_under_null():
    # p-values under the null should reject at roughly the nominal rate
    rejections = 0
    for k in range(200):
        d = seeded_rng(7, k).standard_normal(1000)
        if summarize_pairwise(d).p < 0.05:
            rejections += 1
    assert abs(rejections / 200 - 0.05) < 0.03


def test_pairwise_matches_scipy_oracle():
    from scipy.stats import ttest_rel

    rng = seeded_rng(8)
    a, b = rng.standard_normal(50), rng.standard_normal(50)
    ours = summarize_pairwise(a - b)
    ref = ttest_rel(a, b)
    assert ours.t == pytest.approx(ref.statistic, rel=1e-12)
    assert ours.p == pytest.approx(ref.pvalue, rel=1e-12)


# -- experiment engine -------------------------------------------------------------------


def _tiny_ols_cfg(**kw):
    base = dict(
        preset="ols_constant_beta",
        k=24,
        seed=5,
        n=30,
        p_rule="fixed:10",
        sigma2_grid=(9.0,),
        pool_size=1500,
        resample_blocks=40,
        alpha_grid_size=11,
    )
    base.update(kw)
    return ExperimentConfig(**base)


def test_preset_names_complete():
    assert preset_names() == (
        "ols_constant_beta",
        "ols_random_beta",
        "glm_elu",
        "glm_alpha_sweep",
        "interp_fixed",
        "interp_growth",
    )


def test_unknown_preset_rejected():
    with pytest.raises(DataValidationError):
        run_experiment(ExperimentConfig(preset="nope"))


def test_row_count_conservation():
    cfg = _tiny_ols_cfg(sigma2_grid=(1.0, 9.0))
    res = run_experiment(cfg)
    n_est = 8  # preset default estimator set
    assert len(res.rows) == n_est * 2
    assert len(res.paired) == (n_est * (n_est - 1) // 2) * 2
    assert all(r.se >= 0 for r in res.rows)
    assert all(0.0 <= r.p <= 1.0 for r in res.paired)
    assert all(r.k_effective == cfg.k for r in res.rows)


def test_bit_reproducibility_and_thread_independence():
    res1 = run_experiment(_tiny_ols_cfg())
    res2 = run_experiment(_tiny_ols_cfg())
    res3 = run_experiment(_tiny_ols_cfg(threads=4))
    assert res1.rows == res2.rows == res3.rows
    assert res1.paired == res2.paired


def test_identical_estimators_have_zero_diff():
    cfg = _tiny_ols_cfg(k=2, estimators=("supervised", "linear_mixed(0.0)"))
    res = run_experiment(cfg)
    pair = res.paired[0]
    assert pair.mean_diff == 0.0
    assert pair.p == 1.0


def test_fixed_alpha_zero_matches_supervised():
    cfg = _tiny_ols_cfg(estimators=("supervised", "linear_mixed(0.0)", "loss_mixed(0.0)"))
    res = run_experiment(cfg)
    by_name = {r.estimator: r.mean_error for r in res.rows}
    assert abs(by_name["linear_mixed(0.0)"] - by_name["supervised"]) <= 1e-12
    assert abs(by_name["loss_mixed(0.0)"] - by_name["supervised"]) <= 1e-10


def test_fixed_alpha_one_matches_semisupervised():
    cfg = _tiny_ols_cfg(estimators=("semisupervised", "linear_mixed(1.0)"))
    res = run_experiment(cfg)
    by_name = {r.estimator: r.mean_error for r in res.rows}
    assert abs(by_name["linear_mixed(1.0)"] - by_name["semisupervised"]) <= 1e-12


def test_error_metric_nonnegative():
    res = run_experiment(_tiny_ols_cfg())
    assert all(r.mean_error >= 0.0 for r in res.rows)


def test_ols_random_smoke():
    cfg = ExperimentConfig(
        preset="ols_random_beta",
        k=16,
        seed=3,
        n_grid=(40,),
        pool_size=2000,
        resample_blocks=40,
    )
    res = run_experiment(cfg)
    assert {r.estimator for r in res.rows} == {
        "supervised", "semisupervised", "linear_mixed_opt",
        "linear_mixed_est", "linear_mixed_est_tau",
    }
    assert res.grid_name == "n"
    eta = res.extras["eta_measured"][40]
    assert eta["supervised"] == 1.0


def test_glm_elu_smoke():
    cfg = ExperimentConfig(
        preset="glm_elu",
        k=6,
        seed=11,
        sigma2_grid=(9.0,),
        pool_size=400,
        resample_blocks=30,
        rep_blocks=20,
    )
    res = run_experiment(cfg)
    assert len(res.rows) == 7
    assert all(r.k_effective >= 5 for r in res.rows)
    assert 0.0 < res.extras["alpha_dot_oracle"][9.0] <= 1.0


def test_interp_fixed_smoke():
    cfg = ExperimentConfig(
        preset="interp_fixed",
        k=12,
        seed=2,
        n=20,
        p_rule="fixed:40",
        sigma2_grid=(4.0,),
        pool_size=500,
        resample_blocks=40,
    )
    res = run_experiment(cfg)
    assert len(res.rows) == 5
    assert res.extras["dominance_min_slack"][4.0] >= -1e-10


def test_csv_schema(tmp_path):
    res = run_experiment(_tiny_ols_cfg(k=4))
    main, pairs = write_result_csv(res, tmp_path)
    lines = main.read_text().splitlines()
    assert lines[0] == "preset,estimator,grid_name,grid_value,mean_error,se,k_effective"
    assert len(lines) == 1 + len(res.rows)
    plines = pairs.read_text().splitlines()
    assert plines[0] == "estimator_a,estimator_b,grid_value,mean_diff,se_diff,t,p"
    assert len(plines) == 1 + len(res.paired)


def test_load_config_roundtrip(tmp_path):
    path = tmp_path / "exp.ini"
    path.write_text(
        "[experiment]\n"
        "preset = ols_constant_beta\n"
        "k = 8\n"
        "seed = 42\n"
        "sigma2_grid = 1, 9\n"
        "pool_size = 1000\n"
        "estimators = supervised, semisupervised\n"
    )
    cfg = load_config(path)
    assert cfg.preset == "ols_constant_beta"
    assert cfg.k == 8
    assert cfg.sigma2_grid == (1.0, 9.0)
    assert cfg.estimators == ("supervised", "semisupervised")


def test_load_config_unknown_key(tmp_path):
    path = tmp_path / "exp.ini"
    path.write_text("[experiment]\npreset = glm_elu\nbogus = 1\n")
    with pytest.raises(DataValidationError):
        load_config(path)


def test_config_validation():
    with pytest.raises(DataValidationError):
        ExperimentConfig(preset="glm_elu", k=1)
    with pytest.raises(DataValidationError):
        ExperimentConfig(preset="glm_elu", sigma2_grid=())
    with pytest.raises(DataValidationError):
        ExperimentConfig(preset="glm_elu", eval_cov="other")


def test_gaussian_x_source_switch():
    res_pool = run_experiment(_tiny_ols_cfg(k=8))
    res_iid = run_experiment(_tiny_ols_cfg(k=8, x_source="gaussian"))
    by_pool = {r.estimator: r.mean_error for r in res_pool.rows}
    by_iid = {r.estimator: r.mean_error for r in res_iid.rows}
    assert by_pool["supervised"] != by_iid["supervised"]  # different draws
    assert by_iid["supervised"] > 0


def test_true_eval_cov_switch():
    res = run_experiment(_tiny_ols_cfg(k=8, eval_cov="true"))
    assert all(r.mean_error >= 0 for r in res.rows)
