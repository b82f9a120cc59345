import logging

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist

from models.configs import ForestParams
from models.dataset import Dataset, Truth, split_by_treatment
from models.errors import DimensionMismatchError, MissingPotentialsError, SchemaError
from models.matching import DistanceKind, DistanceMatrix
from services.forest_service import RegressionForest, fit_forest

logger = logging.getLogger(__name__)

RIDGE = 1e-8


def proximity_matrix(
    forest: RegressionForest,
    X_treated: np.ndarray,
    X_control: np.ndarray,
    treated_ids=None,
    control_ids=None,
) -> DistanceMatrix:
    """Number of trees in which a treated and a control unit land in different leaves."""
    X_treated = np.atleast_2d(X_treated)
    X_control = np.atleast_2d(X_control)
    if X_treated.shape[1] != X_control.shape[1]:
        raise DimensionMismatchError("treated and control covariates differ in dimension")
    leaves_t = forest.leaf_assignments(X_treated)
    leaves_c = forest.leaf_assignments(X_control)

    shared = np.zeros((leaves_t.shape[0], leaves_c.shape[0]), dtype=np.int64)
    for tree in range(leaves_t.shape[1]):
        shared += leaves_t[:, tree, None] == leaves_c[None, :, tree]

    return DistanceMatrix(
        values=(forest.m - shared).astype(float),
        kind="proximity",
        treated_ids=treated_ids if treated_ids is not None else range(X_treated.shape[0]),
        control_ids=control_ids if control_ids is not None else range(X_control.shape[0]),
    )


def mahalanobis_from_covariance(
    X_treated: np.ndarray, X_control: np.ndarray, covariance: np.ndarray
) -> np.ndarray:
    covariance = np.atleast_2d(np.asarray(covariance, dtype=float))
    p = covariance.shape[0]
    trace = float(np.trace(covariance))
    ridge = RIDGE * trace / p if trace > 0.0 else RIDGE
    precision = np.linalg.inv(covariance + ridge * np.eye(p))
    values = cdist(np.atleast_2d(X_treated), np.atleast_2d(X_control), "mahalanobis", VI=precision) ** 2
    return np.maximum(values, 0.0)


def mahalanobis_matrix(d: Dataset) -> DistanceMatrix:
    """Quadratic form under the sample covariance of all n covariate rows."""
    if d.n < 2:
        raise ValueError("Mahalanobis distance needs at least 2 units")
    treated, control = split_by_treatment(d)
    covariance = np.atleast_2d(np.cov(d.X, rowvar=False))
    values = mahalanobis_from_covariance(d.X[treated], d.X[control], covariance)
    return DistanceMatrix(
        values=values,
        kind="mahalanobis",
        treated_ids=[d.ids[i] for i in treated],
        control_ids=[d.ids[j] for j in control],
    )


def semi_oracle_matrix(truth: Truth, d: Dataset, noise: np.ndarray | None = None) -> DistanceMatrix:
    """(Y_t(0) - Y_c(0))^2 from the true control potentials.

    `noise` holds standard-normal draws per unit; when given, each potential is
    perturbed by sigma times its draw.
    """
    if truth.potential0 is None:
        raise MissingPotentialsError("truth carries no control potentials")
    potentials = np.asarray(truth.potential0, dtype=float)
    if potentials.size != d.n:
        raise DimensionMismatchError(f"{potentials.size} potentials for {d.n} units")
    if noise is not None:
        potentials = potentials + truth.sigma * np.asarray(noise, dtype=float).reshape(-1)

    treated, control = split_by_treatment(d)
    values = (potentials[treated][:, None] - potentials[control][None, :]) ** 2
    return DistanceMatrix(
        values=values,
        kind="semi_oracle",
        treated_ids=[d.ids[i] for i in treated],
        control_ids=[d.ids[j] for j in control],
    )


def dataset_proximity_matrix(d: Dataset, params: ForestParams | None = None) -> DistanceMatrix:
    """Fit the forest on the controls of `d` alone and score every treated-control pair."""
    treated, control = split_by_treatment(d)
    forest = fit_forest(d.X[control], d.Y[control], params)
    return proximity_matrix(
        forest,
        d.X[treated],
        d.X[control],
        treated_ids=[d.ids[i] for i in treated],
        control_ids=[d.ids[j] for j in control],
    )


def build_distance(
    d: Dataset,
    kind: DistanceKind,
    params: ForestParams | None = None,
    truth: Truth | None = None,
) -> DistanceMatrix:
    if kind == "proximity":
        return dataset_proximity_matrix(d, params)
    if kind == "mahalanobis":
        return mahalanobis_matrix(d)
    if truth is None:
        raise MissingPotentialsError("semi-oracle distance needs the simulation truth")
    return semi_oracle_matrix(truth, d)


def save_distance(D: DistanceMatrix, path) -> None:
    frame = pd.DataFrame(
        [[repr(float(v)) for v in row] for row in D.values],
        columns=list(D.control_ids),
    )
    frame.insert(0, "treated_id", list(D.treated_ids))
    frame.to_csv(path, index=False, encoding="utf-8")


def load_distance(path, kind: DistanceKind = "proximity") -> DistanceMatrix:
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    if frame.columns.empty or frame.columns[0] != "treated_id":
        raise SchemaError(f"{path}: first column must be treated_id")
    try:
        values = frame.iloc[:, 1:].map(float).to_numpy(dtype=float)
    except ValueError as e:
        raise SchemaError(f"{path}: non-numeric distance ({e})") from None
    return DistanceMatrix(
        values=values,
        kind=kind,
        treated_ids=frame["treated_id"].tolist(),
        control_ids=list(frame.columns[1:]),
    )
