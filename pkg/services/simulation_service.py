import math
import logging

import numpy as np
import pandas as pd
from scipy.special import expit

from models.configs import PropensitySpec, ScenarioConfig
from models.dataset import Dataset, Truth
from models.errors import ParseError, SchemaError
from utils import make_rng

logger = logging.getLogger(__name__)


SCENARIO_PRESETS: dict[str, dict] = {
    "I": {"delta": 0.0, "p": 10, "propensity": PropensitySpec(), "k_folds": 10},
    "II": {"delta": -2.0, "p": 10, "propensity": PropensitySpec(), "k_folds": 10},
    "III": {"delta": 0.0, "p": 20, "propensity": PropensitySpec(), "k_folds": 10},
    "IV": {
        "delta": 0.0,
        "p": 10,
        "propensity": PropensitySpec(kind="logistic", theta=(2.0,)),
        "k_folds": 10,
    },
    "V": {"delta": 0.0, "p": 10, "propensity": PropensitySpec(), "k_folds": 25},
}

FEATURES_SETTING = "features"

# confounded and misspecified, the combination applied to real feature tables
FEATURES_PRESET: dict = {
    "delta": -2.0,
    "propensity": PropensitySpec(kind="logistic", theta=(2.0,)),
    "k_folds": 10,
}


def scenario_config(name: str, **overrides) -> ScenarioConfig:
    """Preset I..V, or `features` for the feature-table combination, with non-None overrides."""
    if name == FEATURES_SETTING:
        preset = FEATURES_PRESET
    elif name in SCENARIO_PRESETS:
        preset = SCENARIO_PRESETS[name]
    else:
        raise ValueError(f"unknown setting {name!r}; choose one of {', '.join(SCENARIO_PRESETS)}")
    values = {**preset, **{k: v for k, v in overrides.items() if v is not None}}
    return ScenarioConfig(**values)


def propensity(x: np.ndarray, kind: PropensitySpec) -> float | np.ndarray:
    rows = np.atleast_2d(np.asarray(x, dtype=float))
    if kind.kind == "constant":
        values = np.full(rows.shape[0], kind.e)
    else:
        theta = np.asarray(kind.theta, dtype=float)
        width = min(theta.size, rows.shape[1])
        values = expit(rows[:, :width] @ theta[:width])
    if np.ndim(x) == 1:
        return float(values[0])
    return values


class SimulationService:
    """Draws datasets from Y = mu(X) + W tau(X) + eps with sparse linear mu and tau."""

    def generate_scenario(self: "SimulationService", cfg: ScenarioConfig) -> tuple[Dataset, Truth]:
        rng = make_rng(cfg.seed)
        X = rng.uniform(-1.0, 1.0, size=(cfg.n, cfg.p))
        return self.__simulate_outcomes(X, cfg, rng, ids=[str(i) for i in range(cfg.n)])

    def generate_from_features(
        self: "SimulationService",
        table: np.ndarray | pd.DataFrame,
        cfg: ScenarioConfig,
        frac: float = 1.0,
    ) -> tuple[Dataset, Truth]:
        features = np.asarray(table, dtype=float)
        if features.ndim != 2 or features.shape[0] == 0 or features.shape[1] == 0:
            raise SchemaError("feature table is empty")
        missing = np.flatnonzero(~np.all(np.isfinite(features), axis=1))
        if missing.size:
            raise ParseError("feature table has missing or non-finite values", int(missing[0]) + 1)
        if not 0.0 < frac <= 1.0:
            raise ValueError(f"subsample fraction must be in (0, 1], got {frac}")

        rows = features.shape[0]
        size = math.floor(frac * rows)
        if size < 4:
            raise SchemaError(f"subsample of {size} rows is too small (need at least 4)")

        rng = make_rng(cfg.seed)
        chosen = rng.choice(rows, size=size, replace=False)
        X = features[chosen]

        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        constant = scale == 0.0
        if np.any(constant):
            logger.warning("feature column(s) %s have zero variance; left centered", np.flatnonzero(constant).tolist())
            scale = np.where(constant, 1.0, scale)
        X = (X - mean) / scale

        values = cfg.model_dump()
        values.update(n=size, p=X.shape[1])
        if cfg.alpha is not None and len(cfg.alpha) != X.shape[1] + 1:
            values["alpha"] = None
        if cfg.beta is not None and len(cfg.beta) != X.shape[1] + 1:
            values["beta"] = None
        resolved = ScenarioConfig(**values)
        return self.__simulate_outcomes(X, resolved, rng, ids=[str(int(i)) for i in chosen])

    def __simulate_outcomes(
        self: "SimulationService",
        X: np.ndarray,
        cfg: ScenarioConfig,
        rng: np.random.Generator,
        ids: list[str],
    ) -> tuple[Dataset, Truth]:
        n, p = X.shape
        alpha = self.__draw_coefficients(p, rng, cfg.alpha, anchor_first=False)
        beta = self.__draw_coefficients(
            p, rng, cfg.beta, anchor_first=cfg.propensity.kind == "logistic"
        )

        mu = alpha[0] + X @ alpha[1:] + cfg.delta * np.abs(X[:, 0])
        tau = beta[0] + X @ beta[1:]
        e = np.atleast_1d(propensity(X, cfg.propensity))
        W = (rng.random(n) < e).astype(np.int8)

        # Var((W - e) tau) averaged over the drawn covariates; E[(W-e)^2 | X] = e(1-e)
        signal = float(np.mean(e * (1.0 - e) * tau**2))
        if signal > 0.0:
            sigma = math.sqrt(signal / cfg.snr_target)
        else:
            logger.warning("treatment effect is identically zero; using sigma=1")
            sigma = 1.0

        noise = rng.standard_normal(n)
        Y = mu + W * tau + sigma * noise

        dataset = Dataset(X=X, W=W, Y=Y, ids=ids)
        truth = Truth(
            alpha=alpha,
            beta=beta,
            delta=cfg.delta,
            sigma=sigma,
            propensity=cfg.propensity,
            kappa=2.0,
            potential0=mu,
            potential1=mu + tau,
            propensity_values=e,
        )
        logger.info(
            "generated scenario n=%d p=%d treated=%d sigma=%.4f seed=%d",
            n, p, int(W.sum()), sigma, cfg.seed,
        )
        return dataset, truth

    def __draw_coefficients(
        self: "SimulationService",
        p: int,
        rng: np.random.Generator,
        override: tuple[float, ...] | None,
        anchor_first: bool,
    ) -> np.ndarray:
        # draws always happen so an override does not shift the rest of the stream
        size = p // 2
        support = rng.choice(p, size=size, replace=False)
        signs = rng.choice(np.array([-1.0, 1.0]), size=size)
        if override is not None:
            return np.asarray(override, dtype=float)

        coefficients = np.zeros(p + 1)
        if anchor_first and size > 0:
            # x1 drives the propensity; keep it in the effect with a positive sign
            rest = [j for j in support.tolist() if j != 0][: size - 1]
            support = np.array([0, *rest], dtype=int)
            signs[0] = 1.0
        coefficients[1 + support] = signs
        return coefficients


def generate_scenario(cfg: ScenarioConfig) -> tuple[Dataset, Truth]:
    return SimulationService().generate_scenario(cfg)


def generate_from_features(
    table: np.ndarray | pd.DataFrame, cfg: ScenarioConfig, frac: float = 1.0
) -> tuple[Dataset, Truth]:
    return SimulationService().generate_from_features(table, cfg, frac=frac)
