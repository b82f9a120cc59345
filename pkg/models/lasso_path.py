from dataclasses import dataclass

import numpy as np

from models.errors import DimensionMismatchError


@dataclass(frozen=True)
class LassoPath:
    """Joint LASSO coefficients along a descending lambda grid.

    alpha_hat and beta_hat have one row per lambda and p+1 columns, intercept first.
    """

    lambdas: np.ndarray
    alpha_hat: np.ndarray
    beta_hat: np.ndarray

    def __post_init__(self: "LassoPath") -> None:
        lambdas = np.asarray(self.lambdas, dtype=float).reshape(-1)
        if lambdas.size == 0 or np.any(lambdas <= 0.0) or np.any(np.diff(lambdas) >= 0.0):
            raise ValueError("lambda grid must be positive and strictly descending")
        for name in ("alpha_hat", "beta_hat"):
            coefficients = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            if coefficients.shape[0] != lambdas.size:
                raise ValueError(f"{name} must have one row per lambda")
            if not np.all(np.isfinite(coefficients)):
                raise ValueError(f"{name} has non-finite coefficients")
            object.__setattr__(self, name, coefficients)
        object.__setattr__(self, "lambdas", lambdas)

    @property
    def p(self: "LassoPath") -> int:
        return self.beta_hat.shape[1] - 1

    def __len__(self: "LassoPath") -> int:
        return self.lambdas.size

    def __check(self: "LassoPath", index: int, X: np.ndarray) -> np.ndarray:
        if not 0 <= index < len(self):
            raise IndexError(f"lambda index {index} outside grid of length {len(self)}")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.p:
            raise DimensionMismatchError(f"expected {self.p} covariates, got {X.shape[1]}")
        return X

    def predict_tau(self: "LassoPath", index: int, X: np.ndarray) -> np.ndarray:
        X = self.__check(index, X)
        beta = self.beta_hat[index]
        return beta[0] + X @ beta[1:]

    def predict_control(self: "LassoPath", index: int, X: np.ndarray) -> np.ndarray:
        X = self.__check(index, X)
        alpha = self.alpha_hat[index]
        return alpha[0] + X @ alpha[1:]

    def predict_response(
        self: "LassoPath", index: int, X: np.ndarray, W: np.ndarray
    ) -> np.ndarray:
        W = np.asarray(W, dtype=float).reshape(-1)
        return self.predict_control(index, X) + W * self.predict_tau(index, X)
