import logging

import numpy as np
from sklearn.ensemble import RandomForestRegressor

from models.configs import ForestParams
from models.errors import DimensionMismatchError

logger = logging.getLogger(__name__)


class RegressionForest:
    """CART regression forest fitted on control units, used only as a metric learner.

    Rows route left when x[feature] <= threshold, so ties at a threshold go left and
    out-of-range covariates still reach a leaf.
    """

    def __init__(self: "RegressionForest", params: ForestParams | None = None) -> None:
        self.params = params or ForestParams()
        self.__estimator: RandomForestRegressor | None = None
        self.__p: int | None = None

    @property
    def m(self: "RegressionForest") -> int:
        return self.params.n_trees

    @property
    def p(self: "RegressionForest") -> int | None:
        return self.__p

    @property
    def trees(self: "RegressionForest") -> list:
        return list(self.__fitted().estimators_)

    def fit(self: "RegressionForest", X: np.ndarray, y: np.ndarray) -> "RegressionForest":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float).reshape(-1)
        if X.shape[0] < 2:
            raise ValueError(f"forest needs at least 2 control units, got {X.shape[0]}")
        if X.shape[0] != y.size:
            raise DimensionMismatchError(f"{X.shape[0]} rows but {y.size} responses")

        self.__p = X.shape[1]
        self.__estimator = RandomForestRegressor(
            n_estimators=self.params.n_trees,
            criterion="squared_error",
            min_samples_leaf=self.params.min_leaf_size,
            max_features=self.params.features_per_split(self.__p),
            bootstrap=self.params.bootstrap,
            random_state=self.params.seed,
            n_jobs=self.params.n_jobs,
        )
        self.__estimator.fit(X, y)
        logger.debug(
            "fitted forest: %d trees on %d controls, p=%d", self.m, X.shape[0], self.__p
        )
        return self

    def leaf_assignments(self: "RegressionForest", X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if np.isnan(X).any():
            raise ValueError("covariates contain NaN")
        estimator = self.__fitted()
        if X.shape[1] != self.__p:
            raise DimensionMismatchError(
                f"forest was trained on {self.__p} covariates, got {X.shape[1]}"
            )
        # trees split on float32 thresholds; infinities route like the extreme finite values
        limit = np.finfo(np.float32).max
        return estimator.apply(np.clip(X, -limit, limit))

    def __fitted(self: "RegressionForest") -> RandomForestRegressor:
        if self.__estimator is None:
            raise ValueError("forest is not fitted")
        return self.__estimator


def fit_forest(X_control: np.ndarray, y_control: np.ndarray, params: ForestParams | None = None) -> RegressionForest:
    return RegressionForest(params).fit(X_control, y_control)


def leaf_assignments(forest: RegressionForest, X: np.ndarray) -> np.ndarray:
    return forest.leaf_assignments(X)
