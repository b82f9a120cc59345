import math
import logging
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from matplotlib.figure import Figure
from scipy.stats import linregress

from models.configs import ForestParams, MethodConfig
from models.dataset import Truth
from models.lasso_path import LassoPath
from models.reports import CurveFit, ExperimentResult, MethodSummary, RepetitionRecord
from services.assessment_service import cross_validate
from services.lasso_service import default_lambdas, fit_joint_lasso
from services.simulation_service import (
    generate_from_features,
    generate_scenario,
    scenario_config,
)
from utils import default_jobs, spawn_seeds, write_json

logger = logging.getLogger(__name__)

ORACLE = "oracle"


def coefficient_errors(path: LassoPath, truth: Truth) -> np.ndarray:
    """|beta_hat(lambda) - beta|^2 at every grid point."""
    return np.sum((path.beta_hat - truth.beta[None, :]) ** 2, axis=1)


def oracle_mse(path: LassoPath, truth: Truth) -> tuple[int, float]:
    curve = coefficient_errors(path, truth)
    index = int(np.argmin(curve))
    return index, float(curve[index])


def relative_mse(mse_method: float, mse_oracle: float) -> float:
    """log(mse_method / mse_oracle); +inf when only the oracle error is zero."""
    if mse_method < 0.0 or mse_oracle < 0.0:
        raise ValueError("mean squared errors must be nonnegative")
    if mse_oracle == 0.0:
        if mse_method == 0.0:
            return 0.0
        logger.warning("oracle MSE is zero; relative MSE reported as +inf")
        return math.inf
    return math.log(mse_method / mse_oracle)


def select_lambda(errors: np.ndarray) -> int:
    """Index of the minimal validation error, ties toward the smaller lambda."""
    errors = np.asarray(errors, dtype=float)
    return int(errors.size - 1 - np.argmin(errors[::-1]))


def curve_regression(validation: Sequence[float], oracle: Sequence[float]) -> CurveFit:
    validation = np.asarray(validation, dtype=float)
    oracle = np.asarray(oracle, dtype=float)
    if validation.shape != oracle.shape or validation.size < 3:
        raise ValueError("curves must have equal lengths of at least 3")
    if np.ptp(oracle) == 0.0:
        logger.warning("oracle curve is constant; slope undefined")
        return CurveFit(slope=math.nan, intercept=math.nan, r2=math.nan, flagged=True)

    fit = linregress(oracle, validation)
    residual = validation - (fit.intercept + fit.slope * oracle)
    rss = float(residual @ residual)
    tss = float(np.sum((validation - validation.mean()) ** 2))
    r2 = 1.0 - rss / tss if tss > 0.0 else 1.0
    return CurveFit(slope=float(fit.slope), intercept=float(fit.intercept), r2=r2)


def _run_repetition(
    setting: str,
    repetition: int,
    seed: int,
    methods: Sequence[str],
    lambdas: np.ndarray,
    forest: ForestParams,
    n: int | None,
    features: np.ndarray | None,
    frac: float,
) -> RepetitionRecord:
    record = RepetitionRecord(setting=setting, repetition=repetition, seed=seed)
    try:
        cfg = scenario_config(setting, seed=seed, n=n)
        if features is not None:
            d, truth = generate_from_features(features, cfg, frac=frac)
        else:
            d, truth = generate_scenario(cfg)

        path = fit_joint_lasso(d, lambdas)
        curve = coefficient_errors(path, truth)
        oracle_index, mse_oracle = oracle_mse(path, truth)
        record.oracle_index = oracle_index
        record.mse_oracle = mse_oracle
        record.oracle_curve = curve.tolist()

        for method in methods:
            if method == ORACLE:
                chosen, errors = oracle_index, curve
            else:
                method_cfg = MethodConfig(
                    method=method, forest=forest, k_folds=cfg.k_folds, seed=seed
                )
                report = cross_validate(d, None, lambdas, method_cfg)
                errors = report.errors
                chosen = select_lambda(errors)
                if report.flagged_folds:
                    record.flags.append(f"{method}: flagged folds {report.flagged_folds}")
            # the full-data path already holds the refit at every grid value
            mse_method = float(curve[chosen])
            record.chosen_index[method] = chosen
            record.mse_method[method] = mse_method
            record.relative_mse[method] = relative_mse(mse_method, mse_oracle)
            record.validation_curves[method] = np.asarray(errors, dtype=float).tolist()
            if math.isinf(record.relative_mse[method]):
                record.flags.append(f"{method}: zero oracle MSE")
    except Exception as e:
        logger.error("setting %s repetition %d failed: %s", setting, repetition, e)
        record.status = "failed"
        record.error = f"{type(e).__name__}: {e}"
        return record

    logger.info("setting %s repetition %d finished", setting, repetition)
    return record


class ExperimentService:
    """Settings x repetitions of the simulation study, one repetition per joblib task."""

    def __init__(
        self: "ExperimentService",
        forest: ForestParams | None = None,
        lambdas: Sequence[float] | None = None,
        n_jobs: int | None = None,
    ) -> None:
        self.forest = forest or ForestParams()
        self.lambdas = default_lambdas() if lambdas is None else np.asarray(lambdas, dtype=float)
        self.n_jobs = n_jobs or default_jobs()

    def run(
        self: "ExperimentService",
        settings: Sequence[str],
        methods: Sequence[str],
        reps: int,
        seed: int,
        n: int | None = None,
        features: np.ndarray | None = None,
        frac: float = 1.0,
    ) -> ExperimentResult:
        if reps < 1:
            raise ValueError(f"reps must be at least 1, got {reps}")
        settings, methods = list(settings), list(methods)
        seeds = spawn_seeds(seed, len(settings) * reps)
        tasks = [
            delayed(_run_repetition)(
                setting, rep, seeds[s * reps + rep], methods, self.lambdas, self.forest, n, features, frac
            )
            for s, setting in enumerate(settings)
            for rep in range(reps)
        ]
        logger.info("running %d repetitions on %d worker(s)", len(tasks), self.n_jobs)
        records = list(Parallel(n_jobs=self.n_jobs)(tasks))

        result = ExperimentResult(
            settings=settings,
            methods=methods,
            reps=reps,
            seed=seed,
            lambdas=self.lambdas.tolist(),
            repetitions=records,
        )
        for setting in settings:
            self.__aggregate(result, setting)
        return result

    def __aggregate(self: "ExperimentService", result: ExperimentResult, setting: str) -> None:
        records = [r for r in result.repetitions if r.setting == setting]
        ok = [r for r in records if r.status == "ok"]
        failed = len(records) - len(ok)
        if failed:
            logger.warning("setting %s: %d of %d repetitions failed", setting, failed, len(records))

        grid = len(result.lambdas)
        oracle = np.mean([r.oracle_curve for r in ok], axis=0) if ok else np.full(grid, np.nan)
        result.mean_oracle_curves[setting] = oracle.tolist()
        result.mean_curves[setting] = {}
        for method in result.methods:
            if ok:
                curve = np.mean([r.validation_curves[method] for r in ok], axis=0)
                fit = curve_regression(curve, oracle)
                quartiles = np.quantile([r.relative_mse[method] for r in ok], [0.25, 0.5, 0.75])
            else:
                curve = np.full(grid, np.nan)
                fit = CurveFit(slope=math.nan, intercept=math.nan, r2=math.nan, flagged=True)
                quartiles = np.full(3, np.nan)
            result.mean_curves[setting][method] = curve.tolist()
            result.summaries.append(
                MethodSummary(
                    setting=setting,
                    method=method,
                    slope=fit.slope,
                    intercept=fit.intercept,
                    r2=fit.r2,
                    curve_flagged=fit.flagged,
                    relative_mse_q25=float(quartiles[0]),
                    relative_mse_median=float(quartiles[1]),
                    relative_mse_q75=float(quartiles[2]),
                    n_reps=len(ok),
                    n_failed=failed,
                )
            )


def run_experiment(
    settings: Sequence[str],
    methods: Sequence[str],
    reps: int,
    seed: int,
    lambdas: Sequence[float] | None = None,
    forest: ForestParams | None = None,
    n_jobs: int | None = None,
    serial: bool = False,
    n: int | None = None,
    features: np.ndarray | None = None,
    frac: float = 1.0,
) -> ExperimentResult:
    service = ExperimentService(forest=forest, lambdas=lambdas, n_jobs=1 if serial else n_jobs)
    return service.run(settings, methods, reps, seed, n=n, features=features, frac=frac)


def curves_frame(result: ExperimentResult) -> pd.DataFrame:
    frame = pd.DataFrame({"lambda": result.lambdas})
    for setting in result.settings:
        for method in result.methods:
            frame[f"{setting}/{method}"] = result.mean_curves[setting][method]
        frame[f"{setting}/{ORACLE}_mse"] = result.mean_oracle_curves[setting]
    return frame


def plot_curves(result: ExperimentResult, path: str | Path) -> None:
    """Mean validation curves per setting, each shifted to start at zero."""
    fig = Figure(figsize=(4.5 * len(result.settings), 3.5))
    axes = fig.subplots(1, len(result.settings), squeeze=False)
    exponents = -2.0 * np.log2(result.lambdas)
    for ax, setting in zip(axes[0], result.settings):
        for method in result.methods:
            curve = np.asarray(result.mean_curves[setting][method])
            ax.plot(exponents, curve - curve[0], marker="o", label=method)
        oracle = np.asarray(result.mean_oracle_curves[setting])
        ax.plot(exponents, oracle - oracle[0], color="black", linestyle="--", label="oracle")
        ax.set_title(f"setting {setting}")
        ax.set_xlabel("i  (lambda = 2^(-i/2))")
        ax.set_ylabel("shifted error")
        ax.grid(alpha=0.3)
    axes[0][-1].legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})


def write_results(result: ExperimentResult, outdir: str | Path, plot: bool = True) -> list[Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = [outdir / "results.json", outdir / "curves.csv", outdir / "summary.csv"]
    write_json(result.model_dump(), written[0])
    curves_frame(result).to_csv(written[1], index=False)
    pd.DataFrame([s.model_dump() for s in result.summaries]).to_csv(written[2], index=False)
    if plot:
        written.append(outdir / "curves.svg")
        plot_curves(result, written[-1])
    logger.info("wrote %s", ", ".join(str(p) for p in written))
    return written
