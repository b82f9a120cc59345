import logging
from typing import Callable, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy.special import expit
from scipy.stats import binom

from models.configs import Family, MethodConfig, NoiseSpec
from models.dataset import Dataset, split_by_treatment
from models.errors import EmptyMatchError, FamilyDataError, FoldingError, InfeasibleSpecError
from models.lasso_path import LassoPath
from models.matching import DistanceMatrix, Match
from models.reports import CrossValidationReport, PairDiagnostics, Prop1Bounds
from services.distance_service import dataset_proximity_matrix, mahalanobis_matrix
from services.flow_matching_service import min_avg_match, min_total_match
from services.lasso_service import default_lambdas, fit_joint_lasso
from services.pruning_service import match_components, prune
from utils import make_rng

logger = logging.getLogger(__name__)

Trainer = Callable[[Dataset, np.ndarray], LassoPath]
TauPredictor = Callable[[np.ndarray], np.ndarray]


def _pair_index(match: Match) -> tuple[np.ndarray, np.ndarray]:
    if not match.pairs:
        raise EmptyMatchError("match has no pairs")
    treated = np.fromiter((p.treated for p in match.pairs), dtype=int, count=len(match))
    control = np.fromiter((p.control for p in match.pairs), dtype=int, count=len(match))
    return treated, control


def validation_error(
    match: Match, y_treated: np.ndarray, y_control: np.ndarray, tau_treated: np.ndarray
) -> float:
    """Mean over pairs of (Y_t - Y_c - tau_hat(X_t))^2; arrays are indexed by group position."""
    t, c = _pair_index(match)
    residual = np.asarray(y_treated)[t] - np.asarray(y_control)[c] - np.asarray(tau_treated)[t]
    return float(np.mean(residual**2))


def pair_diagnostics(
    match: Match,
    mu_treated: np.ndarray,
    mu_control: np.ndarray,
    tau_treated: np.ndarray,
    tau_hat_treated: np.ndarray,
) -> PairDiagnostics:
    t, c = _pair_index(match)
    b = np.asarray(mu_treated, dtype=float)[t] - np.asarray(mu_control, dtype=float)[c]
    gap = np.asarray(tau_treated, dtype=float)[t] - np.asarray(tau_hat_treated, dtype=float)[t]
    return PairDiagnostics(
        b_values=b,
        b2_bar=float(np.mean(b**2)),
        oracle_error=float(np.mean(gap**2)),
    )


def prop1_bounds(diag: PairDiagnostics, noise: NoiseSpec, match: Match) -> Prop1Bounds:
    """Bias and variance bounds of the matched validation error given the pair gaps."""
    if not match.pairs:
        raise EmptyMatchError("match has no pairs")
    sigma2, b2, error = noise.sigma2, diag.b2_bar, diag.oracle_error
    multiplicity = match.max_treated_multiplicity + match.max_control_multiplicity - 1
    variance = multiplicity / len(match) * (
        (4.0 * noise.kappa + 8.0) * sigma2**2 + 32.0 * sigma2 * (b2 + error)
    )
    if error > 0.0:
        ratio = np.sqrt(b2 / error)
        return Prop1Bounds(
            bias_lower=float((1.0 - ratio) ** 2),
            bias_upper=float((1.0 + ratio) ** 2),
            variance_upper=float(variance),
        )
    expected = b2 + 2.0 * sigma2
    return Prop1Bounds(
        bias_lower=expected, bias_upper=expected, variance_upper=float(variance), normalized=False
    )


def holdout_assess(tau_hat: TauPredictor, validation: Dataset, cfg: MethodConfig) -> float:
    """Forest on the validation controls, proximity match under cfg.spec, matched error."""
    treated, control = split_by_treatment(validation)
    if not treated or not control:
        raise InfeasibleSpecError("hold-out set needs both treated and control units")
    D = dataset_proximity_matrix(validation, cfg.forest)
    solution = min_avg_match(D, cfg.spec)
    tau_treated = np.asarray(tau_hat(validation.X[treated]), dtype=float).reshape(-1)
    return validation_error(
        solution.match, validation.Y[treated], validation.Y[control], tau_treated
    )


def make_folds(
    match: Match,
    k: int,
    rng: np.random.Generator,
    treated_units: Sequence[int],
    control_units: Sequence[int],
    n_units: int,
) -> np.ndarray:
    """Fold id per unit; matched components stay whole, unmatched units go round-robin."""
    if k < 1:
        raise ValueError(f"fold count must be positive, got {k}")
    components = match_components(match)
    if k > len(components):
        raise FoldingError(f"{k} folds requested but the match has {len(components)} components")

    folds = np.full(n_units, -1, dtype=int)
    sizes = np.zeros(k, dtype=int)
    for index in rng.permutation(len(components)):
        treated, control = components[index]
        fold = int(np.argmin(sizes))
        folds[[treated_units[i] for i in treated]] = fold
        folds[[control_units[j] for j in control]] = fold
        sizes[fold] += len(treated) + len(control)

    order = np.argsort(sizes, kind="stable")
    for position, unit in enumerate(np.flatnonzero(folds < 0)):
        folds[unit] = order[position % k]
    logger.info("built %d folds from %d components; sizes %s", k, len(components), np.bincount(folds, minlength=k).tolist())
    return folds


def random_folds(n_units: int, k: int, rng: np.random.Generator) -> np.ndarray:
    return rng.permutation(np.arange(n_units) % k)


def conditional_nll(
    match: Match,
    y_treated: np.ndarray,
    y_control: np.ndarray,
    tau_treated: np.ndarray,
    family: Family | None = None,
) -> float:
    """Mean negative log-likelihood of each pair's split given its sum Z = Y_t + Y_c."""
    family = family or Family()
    t, c = _pair_index(match)
    yt = np.asarray(y_treated, dtype=float)[t]
    yc = np.asarray(y_control, dtype=float)[c]
    tau = np.asarray(tau_treated, dtype=float)[t]

    if family.name == "gaussian":
        sigma2 = family.sigma2
        values = (yt - yc - tau) ** 2 / (4.0 * sigma2) + 0.5 * np.log(np.pi * sigma2)
    elif family.name == "bernoulli":
        if not np.all(np.isin(np.concatenate([yt, yc]), (0.0, 1.0))):
            raise FamilyDataError("bernoulli responses must be 0 or 1")
        discordant = yt != yc
        values = np.where(discordant, np.logaddexp(0.0, tau) - tau * yt, 0.0)
    else:
        both = np.concatenate([yt, yc])
        if np.any(both < 0.0) or np.any(both != np.round(both)):
            raise FamilyDataError("poisson responses must be nonnegative integers")
        values = -binom.logpmf(yt, yt + yc, expit(tau))
    return float(np.mean(values))


class CrossValidationService:
    """Per-lambda validation error curves for the five validation methods."""

    def __init__(
        self: "CrossValidationService",
        cfg: MethodConfig,
        trainer: Trainer | None = None,
        n_jobs: int = 1,
    ) -> None:
        self.cfg = cfg
        self.trainer = trainer or fit_joint_lasso
        self.n_jobs = n_jobs

    def run(
        self: "CrossValidationService", d: Dataset, lambdas: Sequence[float] | None = None
    ) -> CrossValidationReport:
        grid = default_lambdas() if lambdas is None else np.asarray(lambdas, dtype=float)
        rng = make_rng(self.cfg.seed)
        k = self.cfg.k_folds
        method = self.cfg.method

        if method in ("combo", "cvr", "full"):
            folds, match = self.__matched_folds(d, rng)
            tasks = [delayed(self.__matched_fold)(d, folds, match, f, grid) for f in range(k)]
        elif method == "S-M":
            folds = random_folds(d.n, k, rng)
            tasks = [delayed(self.__split_then_match_fold)(d, folds, f, grid) for f in range(k)]
        else:
            folds = random_folds(d.n, k, rng)
            tasks = [delayed(self.__prediction_fold)(d, folds, f, grid) for f in range(k)]

        results = Parallel(n_jobs=self.n_jobs, prefer="threads")(tasks)
        fold_errors = np.vstack([errors for errors, _ in results])
        fold_pairs = [pairs for _, pairs in results]
        flagged = [f for f in range(k) if np.all(np.isnan(fold_errors[f]))]
        for f in flagged:
            logger.warning("%s fold %d has no usable validation pairs; excluded", method, f)
        if len(flagged) == k:
            raise FoldingError(f"every {method} fold was flagged")

        errors = np.mean(np.delete(fold_errors, flagged, axis=0), axis=0)
        logger.info("%s cross-validation over %d folds: best lambda index %d", method, k, int(np.argmin(errors)))
        return CrossValidationReport(
            method=method,
            lambdas=grid,
            errors=errors,
            fold_errors=fold_errors,
            flagged_folds=flagged,
            fold_pairs=fold_pairs,
        )

    def __matched_folds(
        self: "CrossValidationService", d: Dataset, rng: np.random.Generator
    ) -> tuple[np.ndarray, Match]:
        treated, control = split_by_treatment(d)
        if self.cfg.method == "cvr":
            D = mahalanobis_matrix(d)
        else:
            D = dataset_proximity_matrix(d, self.cfg.forest)
        solve = min_total_match if self.cfg.method == "full" else min_avg_match
        match = prune(solve(D, self.cfg.spec).match, D)
        folds = make_folds(match, self.cfg.k_folds, rng, treated, control, d.n)
        return folds, match

    def __matched_fold(
        self: "CrossValidationService",
        d: Dataset,
        folds: np.ndarray,
        match: Match,
        fold: int,
        grid: np.ndarray,
    ) -> tuple[np.ndarray, int]:
        treated, _ = split_by_treatment(d)
        treated_folds = folds[treated]
        held = Match(
            pairs=tuple(p for p in match.pairs if treated_folds[p.treated] == fold),
            treated_count=match.treated_count,
            control_count=match.control_count,
        )
        if not held.pairs:
            return np.full(grid.size, np.nan), 0
        path = self.trainer(d.subset(np.flatnonzero(folds != fold)), grid)
        return self.__pair_errors(d, held, path), len(held)

    def __split_then_match_fold(
        self: "CrossValidationService", d: Dataset, folds: np.ndarray, fold: int, grid: np.ndarray
    ) -> tuple[np.ndarray, int]:
        validation = d.subset(np.flatnonzero(folds == fold))
        treated, control = split_by_treatment(validation)
        if not treated or len(control) < 2:
            return np.full(grid.size, np.nan), 0
        params = self.cfg.forest.model_copy(update={"seed": (self.cfg.forest.seed + fold) % 2**32})
        D = dataset_proximity_matrix(validation, params)
        try:
            match = prune(min_avg_match(D, self.cfg.spec).match, D)
        except InfeasibleSpecError as e:
            logger.warning("S-M fold %d: %s", fold, e)
            return np.full(grid.size, np.nan), 0
        path = self.trainer(d.subset(np.flatnonzero(folds != fold)), grid)
        return self.__pair_errors(validation, match, path), len(match)

    def __prediction_fold(
        self: "CrossValidationService", d: Dataset, folds: np.ndarray, fold: int, grid: np.ndarray
    ) -> tuple[np.ndarray, int]:
        held = np.flatnonzero(folds == fold)
        if held.size == 0:
            return np.full(grid.size, np.nan), 0
        path = self.trainer(d.subset(np.flatnonzero(folds != fold)), grid)
        errors = np.array([
            float(np.mean((d.Y[held] - path.predict_response(i, d.X[held], d.W[held])) ** 2))
            for i in range(len(path))
        ])
        return errors, 0

    def __pair_errors(
        self: "CrossValidationService", d: Dataset, match: Match, path: LassoPath
    ) -> np.ndarray:
        treated, control = split_by_treatment(d)
        X_t = d.X[treated]
        return np.array([
            validation_error(match, d.Y[treated], d.Y[control], path.predict_tau(i, X_t))
            for i in range(len(path))
        ])


def cross_validate(
    d: Dataset,
    trainer: Trainer | None = None,
    lambdas: Sequence[float] | None = None,
    cfg: MethodConfig | None = None,
    n_jobs: int = 1,
) -> CrossValidationReport:
    return CrossValidationService(cfg or MethodConfig(), trainer, n_jobs).run(d, lambdas)
