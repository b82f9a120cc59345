import os
import math
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

from models.matching import DistanceKind, MatchSpec


MethodName = Literal["prd", "cvr", "full", "S-M", "combo"]
METHOD_NAMES: tuple[str, ...] = ("prd", "cvr", "full", "S-M", "combo")
SETTING_NAMES: tuple[str, ...] = ("I", "II", "III", "IV", "V")


class PropensitySpec(BaseModel):
    """Treatment assignment probability e(x).

    `constant` returns `e` for every unit; `logistic` applies the logistic link to
    `theta` dotted with the leading covariates (theta=(2,) means e^{2x1}/(1+e^{2x1})).
    """

    model_config = ConfigDict(frozen=True)

    kind: Literal["constant", "logistic"] = "constant"
    e: float = Field(default=0.5, gt=0.0, lt=1.0)
    theta: tuple[float, ...] = (2.0,)


class ScenarioConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    n: int = Field(default=200, ge=4)
    p: int = Field(default=10, ge=1)
    delta: float = 0.0
    propensity: PropensitySpec = PropensitySpec()
    k_folds: int = Field(default=10, ge=2)
    snr_target: float = Field(default=0.5, gt=0.0, le=1.0)
    seed: int = Field(default=0, ge=0, lt=2**64)
    alpha: tuple[float, ...] | None = None
    beta: tuple[float, ...] | None = None

    @model_validator(mode="after")
    def check_coefficients(self: "ScenarioConfig") -> "ScenarioConfig":
        for name in ("alpha", "beta"):
            values = getattr(self, name)
            if values is not None and len(values) != self.p + 1:
                raise ValueError(f"{name} override must have p+1={self.p + 1} entries")
        return self


def default_tree_count() -> int:
    return int(os.getenv("MATCHVAL_FOREST_TREES", "500"))


class ForestParams(BaseModel):
    """Proximity forest hyperparameters; `max_features=None` means ceil(p/3)."""

    model_config = ConfigDict(frozen=True)

    n_trees: int = Field(default_factory=default_tree_count, ge=1)
    min_leaf_size: int = Field(default=5, ge=1)
    max_features: int | None = Field(default=None, ge=1)
    bootstrap: bool = True
    seed: int = Field(default=0, ge=0, lt=2**32)
    n_jobs: int | None = None

    def features_per_split(self: "ForestParams", p: int) -> int:
        if self.max_features is not None:
            return min(self.max_features, p)
        return max(1, math.ceil(p / 3))


class NoiseSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    sigma2: float = Field(gt=0.0)
    kappa: float = Field(default=2.0, gt=0.0)


class Family(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: Literal["gaussian", "bernoulli", "poisson"] = "gaussian"
    sigma2: float = Field(default=1.0, gt=0.0)


class MethodConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    method: MethodName = "combo"
    spec: MatchSpec = MatchSpec()
    forest: ForestParams = Field(default_factory=ForestParams)
    k_folds: int = Field(default=10, ge=2)
    seed: int = Field(default=0, ge=0)


class LassoParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    tol: float = Field(default=1e-12, gt=0.0)
    max_iter: int = Field(default=100_000, ge=1)


class CliConfig(BaseModel):
    """Fully resolved options of one CLI run; `--config` files use the same keys."""

    model_config = ConfigDict(extra="forbid")

    command: str
    input: Path | None = None
    out: Path | None = None
    outdir: Path | None = None
    truth: Path | None = None
    distance: Path | None = None
    pairs: Path | None = None
    from_features: Path | None = None
    features: Path | None = None

    setting: str | None = None
    settings: list[str] = ["I"]
    method: MethodName = "combo"
    methods: list[str] = ["combo"]
    objective: Literal["avg", "total"] = "avg"
    kind: DistanceKind = "proximity"
    prune: bool = False

    seed: int = Field(default=0, ge=0, lt=2**64)
    n: int | None = Field(default=None, ge=4)
    snr: float | None = Field(default=None, gt=0.0, le=1.0)
    frac: float = Field(default=1.0, gt=0.0, le=1.0)
    folds: int | None = Field(default=None, ge=2)
    lambdas: list[float] | None = None
    reps: int = Field(default=200, ge=1)
    jobs: int | None = Field(default=None, ge=1)
    serial: bool = False
    no_plot: bool = False

    m_t: int = Field(default=1, ge=0)
    m_c: int = Field(default=1, ge=0)
    M_t: int = Field(default=2, ge=1)
    M_c: int = Field(default=2, ge=1)
    trees: int | None = Field(default=None, ge=1)
    min_leaf: int = Field(default=5, ge=1)

    @model_validator(mode="after")
    def check_methods(self: "CliConfig") -> "CliConfig":
        unknown = [m for m in self.methods if m not in (*METHOD_NAMES, "oracle")]
        if unknown:
            raise ValueError(f"unknown method(s) {unknown}; choose from {', '.join(METHOD_NAMES)}, oracle")
        return self

    @model_validator(mode="after")
    def check_settings(self: "CliConfig") -> "CliConfig":
        unknown = [s for s in self.settings if s not in SETTING_NAMES]
        if self.setting is not None and self.setting not in (*SETTING_NAMES, "features"):
            unknown.append(self.setting)
        if unknown:
            raise ValueError(f"unknown setting(s) {unknown}; choose from {', '.join(SETTING_NAMES)}")
        return self

    def match_spec(self: "CliConfig") -> MatchSpec:
        return MatchSpec(m_t=self.m_t, m_c=self.m_c, M_t=self.M_t, M_c=self.M_c)

    def forest_params(self: "CliConfig") -> ForestParams:
        values = {"min_leaf_size": self.min_leaf, "seed": self.seed % 2**32, "n_jobs": self.jobs}
        if self.trees is not None:
            values["n_trees"] = self.trees
        return ForestParams(**values)
