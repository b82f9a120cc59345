import math
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from models.configs import PropensitySpec
from models.errors import ParseError, SchemaError


def _frozen(values: np.ndarray) -> np.ndarray:
    values.setflags(write=False)
    return values


class Dataset(BaseModel):
    """Units with covariates X (n x p), binary treatment W and response Y.

    Arrays are copied and made read-only on construction.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    X: np.ndarray
    W: np.ndarray
    Y: np.ndarray
    ids: tuple[str, ...]

    @field_validator("X", mode="before")
    @classmethod
    def coerce_covariates(cls, value) -> np.ndarray:
        values = np.array(value, dtype=float, copy=True)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        if values.ndim != 2:
            raise ValueError("X must be a 2-d matrix")
        if not np.all(np.isfinite(values)):
            raise ValueError("X contains non-finite entries")
        return _frozen(values)

    @field_validator("W", mode="before")
    @classmethod
    def coerce_treatment(cls, value) -> np.ndarray:
        raw = np.asarray(value, dtype=float).reshape(-1)
        if not np.all((raw == 0.0) | (raw == 1.0)):
            raise ValueError("W entries must be 0 or 1")
        return _frozen(raw.astype(np.int8))

    @field_validator("Y", mode="before")
    @classmethod
    def coerce_response(cls, value) -> np.ndarray:
        values = np.array(value, dtype=float, copy=True).reshape(-1)
        if not np.all(np.isfinite(values)):
            raise ValueError("Y contains non-finite entries")
        return _frozen(values)

    @field_validator("ids", mode="before")
    @classmethod
    def coerce_ids(cls, value) -> tuple[str, ...]:
        return tuple(str(item) for item in value)

    @model_validator(mode="after")
    def check_lengths(self: "Dataset") -> "Dataset":
        n = self.X.shape[0]
        if not (len(self.W) == len(self.Y) == len(self.ids) == n):
            raise ValueError(
                f"length mismatch: X has {n} rows, W {len(self.W)}, Y {len(self.Y)}, ids {len(self.ids)}"
            )
        return self

    @classmethod
    def from_arrays(
        cls,
        X: np.ndarray,
        W: np.ndarray,
        Y: np.ndarray,
        ids: Sequence[str] | None = None,
    ) -> "Dataset":
        n = np.asarray(X).shape[0]
        return cls(X=X, W=W, Y=Y, ids=ids if ids is not None else [str(i) for i in range(n)])

    @property
    def n(self: "Dataset") -> int:
        return self.X.shape[0]

    @property
    def p(self: "Dataset") -> int:
        return self.X.shape[1]

    def subset(self: "Dataset", indices: Sequence[int] | np.ndarray) -> "Dataset":
        rows = np.asarray(indices, dtype=int)
        return Dataset(
            X=self.X[rows],
            W=self.W[rows],
            Y=self.Y[rows],
            ids=[self.ids[i] for i in rows],
        )


class Truth(BaseModel):
    """Simulation ground truth: mu(x) = [1,x]'alpha + delta*|x1|, tau(x) = [1,x]'beta."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    alpha: np.ndarray
    beta: np.ndarray
    delta: float = 0.0
    sigma: float = Field(gt=0.0)
    propensity: PropensitySpec = PropensitySpec()
    kappa: float = 2.0
    potential0: np.ndarray | None = None
    potential1: np.ndarray | None = None
    propensity_values: np.ndarray | None = None

    @field_validator("alpha", "beta", mode="before")
    @classmethod
    def coerce_coefficients(cls, value) -> np.ndarray:
        return _frozen(np.array(value, dtype=float, copy=True).reshape(-1))

    @field_validator("potential0", "potential1", "propensity_values", mode="before")
    @classmethod
    def coerce_optional(cls, value) -> np.ndarray | None:
        if value is None:
            return None
        return _frozen(np.array(value, dtype=float, copy=True).reshape(-1))

    @model_validator(mode="after")
    def check_propensity(self: "Truth") -> "Truth":
        values = self.propensity_values
        if values is not None and not np.all((values > 0.0) & (values < 1.0)):
            raise ValueError("propensity values must lie in (0, 1)")
        return self

    def control_mean(self: "Truth", X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        return self.alpha[0] + X @ self.alpha[1:] + self.delta * np.abs(X[:, 0])

    def effect(self: "Truth", X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        return self.beta[0] + X @ self.beta[1:]

    def to_record(self: "Truth") -> dict:
        return {
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "delta": self.delta,
            "sigma": self.sigma,
            "kappa": self.kappa,
            "propensity": self.propensity.model_dump(),
            "potential0": None if self.potential0 is None else self.potential0.tolist(),
            "potential1": None if self.potential1 is None else self.potential1.tolist(),
            "propensity_values": None
            if self.propensity_values is None
            else self.propensity_values.tolist(),
        }

    @classmethod
    def from_record(cls, record: dict) -> "Truth":
        return cls(**{**record, "propensity": PropensitySpec(**record["propensity"])})


class DatasetSchema(BaseModel):
    """Column names of the dataset CSV; covariates default to the x1..xp columns."""

    model_config = ConfigDict(frozen=True)

    id_column: str = "id"
    treatment_column: str = "w"
    response_column: str = "y"
    covariate_columns: tuple[str, ...] | None = None

    def resolve_covariates(self: "DatasetSchema", header: Sequence[str]) -> list[str]:
        if self.covariate_columns is not None:
            return list(self.covariate_columns)
        return [name for name in header if name.startswith("x") and name[1:].isdigit()]


def split_by_treatment(d: Dataset) -> tuple[list[int], list[int]]:
    treated = np.flatnonzero(d.W == 1).tolist()
    control = np.flatnonzero(d.W == 0).tolist()
    return treated, control


def _parse_column(cells: pd.Series, name: str) -> np.ndarray:
    values = np.empty(len(cells), dtype=float)
    for row, cell in enumerate(cells, start=1):
        try:
            value = float(cell)
        except ValueError:
            raise ParseError(f"non-numeric value {cell!r} in column {name!r}", row) from None
        if not math.isfinite(value):
            raise ParseError(f"missing or non-finite value in column {name!r}", row)
        values[row - 1] = value
    return values


def load_dataset(path: str | Path, schema: DatasetSchema | None = None) -> Dataset:
    schema = schema or DatasetSchema()
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    covariates = schema.resolve_covariates(list(frame.columns))

    required = [schema.id_column, *covariates, schema.treatment_column, schema.response_column]
    missing = [name for name in required if name not in frame.columns]
    if missing:
        raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
    if not covariates:
        raise SchemaError(f"{path}: no covariate columns (expected x1..xp)")

    X = np.column_stack([_parse_column(frame[name], name) for name in covariates])
    W = _parse_column(frame[schema.treatment_column], schema.treatment_column)
    for row, value in enumerate(W, start=1):
        if value not in (0.0, 1.0):
            raise ParseError(f"treatment must be 0 or 1, got {frame[schema.treatment_column].iloc[row - 1]!r}", row)
    Y = _parse_column(frame[schema.response_column], schema.response_column)

    return Dataset(X=X, W=W, Y=Y, ids=frame[schema.id_column].tolist())


def save_dataset(d: Dataset, path: str | Path) -> None:
    # repr() is the shortest string that parses back to the same double
    columns: dict[str, list[str]] = {"id": list(d.ids)}
    for j in range(d.p):
        columns[f"x{j + 1}"] = [repr(float(value)) for value in d.X[:, j]]
    columns["w"] = [str(int(value)) for value in d.W]
    columns["y"] = [repr(float(value)) for value in d.Y]
    pd.DataFrame(columns).to_csv(path, index=False, encoding="utf-8")
