import logging

import numpy as np
import pytest
from joblib import Parallel, delayed

from models.configs import LassoParams
from models.dataset import Dataset
from models.errors import DimensionMismatchError
from models.lasso_path import LassoPath
from services.lasso_service import (
    default_lambdas,
    fit_joint_lasso,
    joint_design,
    kkt_residuals,
    lambda_max,
    predict_response,
    predict_tau,
)


def random_dataset(seed: int, n: int = 200, p: int = 3) -> Dataset:
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1.0, 1.0, size=(n, p))
    W = (rng.random(n) < 0.5).astype(int)
    alpha = rng.normal(size=p + 1)
    beta = rng.normal(size=p + 1)
    Y = alpha[0] + X @ alpha[1:] + W * (beta[0] + X @ beta[1:]) + 0.5 * rng.standard_normal(n)
    return Dataset.from_arrays(X, W, Y)


def test_default_grid():
    grid = default_lambdas()
    assert grid.size == 11
    assert grid[0] == pytest.approx(2**-0.5)
    assert grid[-1] == pytest.approx(2**-5.5)
    assert np.all(np.diff(grid) < 0)


def test_joint_design_layout():
    X = np.array([[1.0, 2.0], [3.0, 4.0]])
    design = joint_design(X, np.array([0, 1]))
    np.testing.assert_array_equal(
        design,
        [[1.0, 1.0, 2.0, 0.0, 0.0, 0.0], [1.0, 3.0, 4.0, 1.0, 3.0, 4.0]],
    )
    with pytest.raises(DimensionMismatchError):
        joint_design(X, np.array([0, 1, 1]))


def test_large_lambda_kills_every_coefficient():
    d = random_dataset(0)
    path = fit_joint_lasso(d, [1.01 * lambda_max(d)])
    assert np.all(path.alpha_hat == 0.0)
    assert np.all(path.beta_hat == 0.0)


def test_tiny_lambda_recovers_least_squares():
    d = random_dataset(1, n=400)
    path = fit_joint_lasso(d, [1e-10], LassoParams(tol=1e-14))
    design = joint_design(d.X, d.W)
    ols, *_ = np.linalg.lstsq(design, d.Y, rcond=None)
    coef = np.concatenate([path.alpha_hat[0], path.beta_hat[0]])
    np.testing.assert_allclose(coef, ols, atol=1e-4)


def test_single_column_is_soft_thresholded():
    # W = 0 everywhere and an orthonormal intercept column: only alpha_0 can move
    n = 50
    rng = np.random.default_rng(2)
    Y = 3.0 + rng.standard_normal(n)
    d = Dataset.from_arrays(np.zeros((n, 1)), np.zeros(n), Y)
    lam = 0.4
    path = fit_joint_lasso(d, [lam])
    expected = np.sign(Y.mean()) * max(abs(Y.mean()) - lam, 0.0)
    assert path.alpha_hat[0, 0] == pytest.approx(expected, abs=1e-6)
    assert np.all(path.beta_hat == 0.0)


@pytest.mark.parametrize("seed", range(50))
def test_kkt_conditions_hold_along_the_path(seed):
    d = random_dataset(seed, n=120, p=4)
    path = fit_joint_lasso(d)
    assert np.all(kkt_residuals(d, path) <= 1e-5)


def test_prediction_arithmetic():
    path = LassoPath(lambdas=[1.0], alpha_hat=[[1.0, 2.0]], beta_hat=[[0.0, 1.0]])
    np.testing.assert_allclose(predict_response(path, 0, [[3.0]], [1]), [10.0])
    np.testing.assert_allclose(predict_response(path, 0, [[3.0]], [0]), [7.0])
    np.testing.assert_allclose(predict_tau(path, 0, [[3.0]]), [3.0])


def test_zero_effect_predicts_zero():
    path = LassoPath(lambdas=[0.5], alpha_hat=[[1.0, 1.0]], beta_hat=[[0.0, 0.0]])
    np.testing.assert_array_equal(predict_tau(path, 0, np.linspace(-1, 1, 5).reshape(-1, 1)), np.zeros(5))


def test_prediction_checks_dimensions():
    path = LassoPath(lambdas=[1.0], alpha_hat=[[1.0, 2.0]], beta_hat=[[0.0, 1.0]])
    with pytest.raises(DimensionMismatchError):
        predict_tau(path, 0, [[1.0, 2.0]])
    with pytest.raises(IndexError):
        predict_tau(path, 1, [[1.0]])


def test_grid_must_descend():
    with pytest.raises(ValueError):
        LassoPath(lambdas=[0.5, 1.0], alpha_hat=np.zeros((2, 2)), beta_hat=np.zeros((2, 2)))


@pytest.mark.filterwarnings("ignore::sklearn.exceptions.ConvergenceWarning")
def test_unconverged_fit_is_logged(caplog):
    d = random_dataset(4)
    with caplog.at_level(logging.WARNING, logger="services.lasso_service"):
        path = fit_joint_lasso(d, [0.01, 0.001], LassoParams(max_iter=1))
    assert len(path) == 2
    assert "did not converge" in caplog.text


def test_converged_fit_logs_no_warning(caplog):
    with caplog.at_level(logging.WARNING, logger="services.lasso_service"):
        fit_joint_lasso(random_dataset(5), default_lambdas(4))
    assert "did not converge" not in caplog.text


def test_concurrent_fits_match_serial_fits():
    datasets = [random_dataset(seed) for seed in range(6)]
    serial = [fit_joint_lasso(d) for d in datasets]
    threaded = Parallel(n_jobs=3, prefer="threads")(delayed(fit_joint_lasso)(d) for d in datasets)
    for expected, got in zip(serial, threaded):
        np.testing.assert_array_equal(got.beta_hat, expected.beta_hat)
