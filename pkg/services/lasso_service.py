import logging
from typing import Sequence

import numpy as np
from sklearn.linear_model import Lasso

from models.configs import LassoParams
from models.dataset import Dataset
from models.errors import DimensionMismatchError
from models.lasso_path import LassoPath

logger = logging.getLogger(__name__)


def default_lambdas(count: int = 11) -> np.ndarray:
    """The grid 2^(-i/2), i = 1..count, in descending order."""
    return 2.0 ** (-np.arange(1, count + 1) / 2.0)


def joint_design(X: np.ndarray, W: np.ndarray) -> np.ndarray:
    """Stacked design [1, X, W, W*X]; the first p+1 columns carry alpha, the rest beta."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    W = np.asarray(W, dtype=float).reshape(-1, 1)
    if W.shape[0] != X.shape[0]:
        raise DimensionMismatchError(f"X has {X.shape[0]} rows but W has {W.shape[0]}")
    base = np.hstack([np.ones((X.shape[0], 1)), X])
    return np.hstack([base, W * base])


def lambda_max(d: Dataset) -> float:
    design = joint_design(d.X, d.W)
    return float(np.max(np.abs(design.T @ d.Y)) / d.n)


def objective(design: np.ndarray, y: np.ndarray, coef: np.ndarray, lam: float) -> float:
    residual = y - design @ coef
    return float(residual @ residual / (2 * y.size) + lam * np.abs(coef).sum())


def kkt_residuals(d: Dataset, path: LassoPath) -> np.ndarray:
    """Largest violation of the LASSO optimality conditions at each grid point."""
    design = joint_design(d.X, d.W)
    out = np.empty(len(path))
    for index, lam in enumerate(path.lambdas):
        coef = np.concatenate([path.alpha_hat[index], path.beta_hat[index]])
        gradient = -design.T @ (d.Y - design @ coef) / d.n
        active = coef != 0.0
        violation = np.where(
            active,
            np.abs(gradient + lam * np.sign(coef)),
            np.maximum(np.abs(gradient) - lam, 0.0),
        )
        out[index] = float(violation.max(initial=0.0))
    return out


class JointLassoService:
    """Minimizes (1/2n)|Y - [1,X]a - W[1,X]b|^2 + lam(|a|_1 + |b|_1) along a warm-started path."""

    def __init__(self: "JointLassoService", params: LassoParams | None = None) -> None:
        self.params = params or LassoParams()

    def fit(self: "JointLassoService", d: Dataset, lambdas: Sequence[float] | None = None) -> LassoPath:
        grid = default_lambdas() if lambdas is None else np.asarray(lambdas, dtype=float)
        design = joint_design(d.X, d.W)
        if not np.all(np.isfinite(design)) or not np.all(np.isfinite(d.Y)):
            raise ValueError("LASSO inputs must be finite")

        width = d.p + 1
        model = Lasso(
            alpha=float(grid[0]),
            fit_intercept=False,
            warm_start=True,
            tol=self.params.tol,
            max_iter=self.params.max_iter,
            selection="cyclic",
        )
        coefficients = np.zeros((grid.size, 2 * width))
        previous = np.zeros(2 * width)
        for index, lam in enumerate(grid):
            model.set_params(alpha=float(lam))
            model.fit(design, d.Y)
            if model.n_iter_ >= self.params.max_iter:
                logger.warning("coordinate descent did not converge at lambda=%.4g", lam)
            current = model.coef_.copy()
            if __debug__:
                warm = objective(design, d.Y, previous, lam)
                assert objective(design, d.Y, current, lam) <= warm + 1e-9 * max(1.0, abs(warm))
            coefficients[index] = current
            previous = current

        logger.debug("fitted LASSO path on n=%d p=%d over %d lambdas", d.n, d.p, grid.size)
        return LassoPath(lambdas=grid, alpha_hat=coefficients[:, :width], beta_hat=coefficients[:, width:])


def fit_joint_lasso(
    d: Dataset, lambdas: Sequence[float] | None = None, params: LassoParams | None = None
) -> LassoPath:
    return JointLassoService(params).fit(d, lambdas)


def predict_tau(path: LassoPath, index: int, x: np.ndarray) -> np.ndarray:
    return path.predict_tau(index, x)


def predict_response(path: LassoPath, index: int, x: np.ndarray, w: np.ndarray) -> np.ndarray:
    return path.predict_response(index, x, w)
