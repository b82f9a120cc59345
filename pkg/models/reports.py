from dataclasses import dataclass, field

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator


class PairDiagnostics(BaseModel):
    """Per-pair control-mean gaps b = mu(X_t) - mu(X_c) and the oracle error of a match."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    b_values: np.ndarray
    b2_bar: float = Field(ge=0.0)
    oracle_error: float = Field(ge=0.0)

    @model_validator(mode="after")
    def check_b2_bar(self: "PairDiagnostics") -> "PairDiagnostics":
        expected = float(np.mean(np.square(self.b_values))) if self.b_values.size else 0.0
        if abs(expected - self.b2_bar) > 1e-12 * max(1.0, expected):
            raise ValueError("b2_bar must equal the mean of squared b values")
        return self


@dataclass(frozen=True)
class Prop1Bounds:
    """Bias and variance bounds for the matched validation error.

    With `normalized` the bias bounds bracket (E[error_hat] - 2 sigma^2) / error_pi;
    otherwise (oracle error zero) both equal E[error_hat] = b2_bar + 2 sigma^2.
    """

    bias_lower: float
    bias_upper: float
    variance_upper: float
    normalized: bool = True


@dataclass
class CrossValidationReport:
    method: str
    lambdas: np.ndarray
    errors: np.ndarray
    fold_errors: np.ndarray
    flagged_folds: list[int] = field(default_factory=list)
    fold_pairs: list[int] = field(default_factory=list)

    def to_frame_records(self: "CrossValidationReport") -> list[dict]:
        return [
            {"lambda": float(lam), "error": float(err)}
            for lam, err in zip(self.lambdas, self.errors)
        ]


class CurveFit(BaseModel):
    slope: float
    intercept: float
    r2: float
    flagged: bool = False


class RepetitionRecord(BaseModel):
    setting: str
    repetition: int
    seed: int
    status: str = "ok"
    error: str | None = None
    oracle_index: int | None = None
    mse_oracle: float | None = None
    oracle_curve: list[float] = Field(default_factory=list)
    chosen_index: dict[str, int] = Field(default_factory=dict)
    mse_method: dict[str, float] = Field(default_factory=dict)
    relative_mse: dict[str, float] = Field(default_factory=dict)
    validation_curves: dict[str, list[float]] = Field(default_factory=dict)
    flags: list[str] = Field(default_factory=list)


class MethodSummary(BaseModel):
    setting: str
    method: str
    slope: float
    intercept: float
    r2: float
    curve_flagged: bool
    relative_mse_q25: float
    relative_mse_median: float
    relative_mse_q75: float
    n_reps: int
    n_failed: int


class ExperimentResult(BaseModel):
    settings: list[str]
    methods: list[str]
    reps: int
    seed: int
    lambdas: list[float]
    repetitions: list[RepetitionRecord] = Field(default_factory=list)
    mean_curves: dict[str, dict[str, list[float]]] = Field(default_factory=dict)
    mean_oracle_curves: dict[str, list[float]] = Field(default_factory=dict)
    summaries: list[MethodSummary] = Field(default_factory=list)

    def summary_for(self: "ExperimentResult", setting: str, method: str) -> MethodSummary:
        for summary in self.summaries:
            if summary.setting == setting and summary.method == method:
                return summary
        raise KeyError((setting, method))

    def relative_mses(self: "ExperimentResult", setting: str, method: str) -> list[float]:
        return [
            record.relative_mse[method]
            for record in self.repetitions
            if record.setting == setting and record.status == "ok"
        ]
