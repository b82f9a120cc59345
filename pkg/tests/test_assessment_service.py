import numpy as np
import pytest
from scipy.stats import binom, chisquare

from models.configs import METHOD_NAMES, Family, ForestParams, MethodConfig, NoiseSpec
from models.dataset import Dataset, split_by_treatment
from models.errors import EmptyMatchError, FamilyDataError, FoldingError
from models.lasso_path import LassoPath
from models.matching import Match, MatchSpec, Pair
from models.reports import PairDiagnostics
from services.assessment_service import (
    conditional_nll,
    cross_validate,
    holdout_assess,
    make_folds,
    pair_diagnostics,
    prop1_bounds,
    random_folds,
    validation_error,
)
from services.distance_service import dataset_proximity_matrix
from services.flow_matching_service import min_avg_match
from services.pruning_service import prune


def diagonal(n: int) -> Match:
    return Match(pairs=tuple(Pair(i, i, 0.0) for i in range(n)), treated_count=n, control_count=n)


def test_validation_error_exact_fit():
    assert validation_error(diagonal(1), [3.0], [1.0], [2.0]) == 0.0


def test_validation_error_averages_over_pairs():
    assert validation_error(diagonal(2), [5.0, 4.0], [1.0, 2.0], [2.0, 2.0]) == pytest.approx(2.0)


def test_validation_error_rejects_empty_match():
    with pytest.raises(EmptyMatchError):
        validation_error(Match(pairs=(), treated_count=1, control_count=1), [1.0], [1.0], [0.0])


def test_perfect_pairs_estimate_twice_the_noise_variance():
    rng = np.random.default_rng(5)
    n = 10_000
    tau = rng.normal(size=n)
    y_control = rng.standard_normal(n)
    y_treated = tau + rng.standard_normal(n)
    error = validation_error(diagonal(n), y_treated, y_control, tau)
    assert error == pytest.approx(2.0, abs=0.1)


def test_pair_diagnostics():
    diag = pair_diagnostics(diagonal(2), [1.0, 2.0], [0.0, 0.0], [1.0, 1.0], [0.0, 1.0])
    np.testing.assert_allclose(diag.b_values, [1.0, 2.0])
    assert diag.b2_bar == pytest.approx(2.5)
    assert diag.oracle_error == pytest.approx(0.5)


def test_bias_bounds_collapse_for_perfect_pairs():
    diag = PairDiagnostics(b_values=np.zeros(4), b2_bar=0.0, oracle_error=1.5)
    bounds = prop1_bounds(diag, NoiseSpec(sigma2=1.0), diagonal(4))
    assert bounds.normalized
    assert bounds.bias_lower == 1.0
    assert bounds.bias_upper == 1.0


def test_bias_bounds_when_gap_equals_error():
    b = np.full(4, 2.0)
    diag = PairDiagnostics(b_values=b, b2_bar=4.0, oracle_error=4.0)
    bounds = prop1_bounds(diag, NoiseSpec(sigma2=1.0), diagonal(4))
    assert bounds.bias_lower == pytest.approx(0.0)
    assert bounds.bias_upper == pytest.approx(4.0)


def test_zero_oracle_error_reports_unnormalized_expectation():
    b = np.array([1.0, -1.0])
    diag = PairDiagnostics(b_values=b, b2_bar=1.0, oracle_error=0.0)
    bounds = prop1_bounds(diag, NoiseSpec(sigma2=0.5), diagonal(2))
    assert not bounds.normalized
    assert bounds.bias_lower == bounds.bias_upper == pytest.approx(2.0)


def test_variance_bound_for_one_to_one_pairs():
    diag = PairDiagnostics(b_values=np.zeros(100), b2_bar=0.0, oracle_error=0.0)
    bounds = prop1_bounds(diag, NoiseSpec(sigma2=1.0, kappa=2.0), diagonal(100))
    assert bounds.variance_upper == pytest.approx(0.16)


def test_diagnostics_reject_inconsistent_b2_bar():
    with pytest.raises(ValueError):
        PairDiagnostics(b_values=np.ones(3), b2_bar=2.0, oracle_error=0.0)


@pytest.mark.slow
def test_validation_error_moments_respect_bounds():
    rng = np.random.default_rng(17)
    pairs, reps = 100, 10_000
    b = 0.5 * rng.uniform(-1.0, 1.0, size=pairs)
    gap = rng.uniform(-1.0, 1.0, size=pairs)
    match = diagonal(pairs)
    diag = PairDiagnostics(b_values=b, b2_bar=float(np.mean(b**2)), oracle_error=float(np.mean(gap**2)))
    bounds = prop1_bounds(diag, NoiseSpec(sigma2=1.0, kappa=2.0), match)

    noise = rng.standard_normal((reps, pairs)) - rng.standard_normal((reps, pairs))
    errors = np.mean((b + gap + noise) ** 2, axis=1)
    ratio = (errors.mean() - 2.0) / diag.oracle_error
    assert bounds.bias_lower <= ratio <= bounds.bias_upper
    assert errors.var() <= bounds.variance_upper


def test_holdout_is_zero_for_duplicated_units():
    x = np.linspace(-1.0, 1.0, 6).reshape(-1, 1)
    X = np.vstack([x, x])
    W = np.repeat([0, 1], 6)
    Y = np.concatenate([2.0 * x[:, 0], 2.0 * x[:, 0] + 1.0 + x[:, 0]])
    validation = Dataset.from_arrays(X, W, Y)
    cfg = MethodConfig(
        spec=MatchSpec(m_t=1, m_c=1, M_t=2, M_c=2),
        forest=ForestParams(n_trees=10, min_leaf_size=1, bootstrap=False, max_features=1),
    )
    error = holdout_assess(lambda rows: 1.0 + rows[:, 0], validation, cfg)
    assert error == pytest.approx(0.0, abs=1e-12)


def test_holdout_on_constant_data():
    validation = Dataset.from_arrays(np.zeros((8, 2)), np.tile([0, 1], 4), np.ones(8))
    cfg = MethodConfig(forest=ForestParams(n_trees=5))
    assert holdout_assess(lambda rows: np.zeros(rows.shape[0]), validation, cfg) == 0.0


def test_holdout_is_deterministic(small_scenario, small_forest):
    d, truth = small_scenario
    cfg = MethodConfig(forest=small_forest)
    first = holdout_assess(truth.effect, d, cfg)
    second = holdout_assess(truth.effect, d, cfg)
    assert first == second


def test_folds_of_singleton_pairs():
    folds = make_folds(diagonal(10), 5, np.random.default_rng(0), range(10), range(10, 20), 20)
    assert np.bincount(folds).tolist() == [4] * 5
    for i in range(10):
        assert folds[i] == folds[10 + i]


def test_folds_balance_a_large_component():
    pairs = [Pair(0, 0, 1.0), Pair(0, 1, 1.0)] + [Pair(i, i + 1, 1.0) for i in range(1, 8)]
    match = Match(pairs=tuple(pairs), treated_count=8, control_count=9)
    folds = make_folds(match, 2, np.random.default_rng(3), range(8), range(8, 17), 17)
    sizes = np.bincount(folds, minlength=2)
    assert abs(int(sizes[0]) - int(sizes[1])) <= 3
    for p in match.pairs:
        assert folds[p.treated] == folds[8 + p.control]


def test_unmatched_units_are_spread_over_folds():
    match = Match(pairs=(Pair(0, 0, 1.0), Pair(1, 1, 1.0)), treated_count=3, control_count=3)
    folds = make_folds(match, 2, np.random.default_rng(0), [0, 2, 4], [1, 3, 5], 6)
    assert np.all(folds >= 0)
    assert sorted(np.bincount(folds).tolist()) == [3, 3]


def test_too_many_folds():
    with pytest.raises(FoldingError):
        make_folds(diagonal(3), 4, np.random.default_rng(0), range(3), range(3, 6), 6)


def test_folds_keep_pairs_of_pruned_matches():
    rng = np.random.default_rng(8)
    D = rng.integers(0, 10, size=(12, 15)).astype(float)
    match = prune(min_avg_match(D, MatchSpec()).match, D)
    folds = make_folds(match, 3, rng, range(12), range(12, 27), 27)
    for p in match.pairs:
        assert folds[p.treated] == folds[12 + p.control]


def test_random_folds_cover_every_unit():
    folds = random_folds(23, 5, np.random.default_rng(1))
    assert sorted(np.bincount(folds).tolist()) == [4, 4, 5, 5, 5]


def test_gaussian_nll_constant():
    nll = conditional_nll(diagonal(1), [3.0], [1.0], [2.0], Family(name="gaussian", sigma2=1.0))
    assert nll == pytest.approx(0.5 * np.log(np.pi))


def test_poisson_nll_is_binomial():
    nll = conditional_nll(diagonal(1), [2.0], [2.0], [0.0], Family(name="poisson"))
    assert nll == pytest.approx(-np.log(0.375))


def test_bernoulli_concordant_pairs_contribute_nothing():
    for tau in (-3.0, 0.0, 2.5):
        assert conditional_nll(diagonal(2), [1.0, 0.0], [1.0, 0.0], [tau, tau], Family(name="bernoulli")) == 0.0


def test_bernoulli_discordant_pair():
    nll = conditional_nll(diagonal(1), [1.0], [0.0], [0.7], Family(name="bernoulli"))
    assert nll == pytest.approx(-np.log(np.exp(0.7) / (1.0 + np.exp(0.7))))


def test_family_data_is_checked():
    with pytest.raises(FamilyDataError):
        conditional_nll(diagonal(1), [2.0], [0.0], [0.0], Family(name="bernoulli"))
    with pytest.raises(FamilyDataError):
        conditional_nll(diagonal(1), [1.5], [0.0], [0.0], Family(name="poisson"))


def test_gaussian_nll_ranks_like_validation_error():
    rng = np.random.default_rng(4)
    n = 50
    y_t, y_c = rng.normal(size=n), rng.normal(size=n)
    predictors = [rng.normal(size=n) for _ in range(10)]
    by_error = np.argsort([validation_error(diagonal(n), y_t, y_c, tau) for tau in predictors])
    by_nll = np.argsort([conditional_nll(diagonal(n), y_t, y_c, tau) for tau in predictors])
    np.testing.assert_array_equal(by_error, by_nll)


@pytest.mark.slow
@pytest.mark.parametrize("tau", [0.0, 1.0])
@pytest.mark.parametrize("mu", [0.0, 1.0, 3.0])
def test_poisson_split_does_not_depend_on_control_mean(mu, tau):
    rng = np.random.default_rng(int(10 * mu + tau))
    n = 100_000
    y_c = rng.poisson(np.exp(mu), size=n)
    y_t = rng.poisson(np.exp(mu + tau), size=n)
    z = y_t + y_c
    total = int(np.bincount(z).argmax())
    observed = np.bincount(y_t[z == total], minlength=total + 1)
    expected = binom.pmf(np.arange(total + 1), total, np.exp(tau) / (1.0 + np.exp(tau))) * observed.sum()
    # sparse tails are dropped; every remaining expected count is at least 5
    keep = expected >= 5
    kept_obs, kept_exp = observed[keep], expected[keep]
    kept_exp = kept_exp * kept_obs.sum() / kept_exp.sum()
    assert chisquare(kept_obs, kept_exp).pvalue > 1e-3


def true_path(alpha: np.ndarray, beta: np.ndarray, grid: np.ndarray) -> LassoPath:
    return LassoPath(
        lambdas=grid,
        alpha_hat=np.tile(alpha, (grid.size, 1)),
        beta_hat=np.tile(beta, (grid.size, 1)),
    )


def test_prediction_error_vanishes_for_the_true_model():
    rng = np.random.default_rng(6)
    n, p = 60, 3
    alpha, beta = rng.normal(size=p + 1), rng.normal(size=p + 1)
    X = rng.uniform(-1, 1, size=(n, p))
    W = np.tile([0, 1], n // 2)
    Y = alpha[0] + X @ alpha[1:] + W * (beta[0] + X @ beta[1:])
    d = Dataset.from_arrays(X, W, Y)
    report = cross_validate(
        d, lambda train, grid: true_path(alpha, beta, grid), None, MethodConfig(method="prd", k_folds=5)
    )
    np.testing.assert_allclose(report.errors, 0.0, atol=1e-20)
    assert report.flagged_folds == []


@pytest.mark.parametrize("method", METHOD_NAMES)
def test_cross_validation_curves(small_scenario, small_forest, method):
    d, _ = small_scenario
    cfg = MethodConfig(method=method, forest=small_forest, k_folds=3, seed=1)
    report = cross_validate(d, None, None, cfg)
    again = cross_validate(d, None, None, cfg)

    assert report.errors.shape == (11,)
    assert np.all(np.isfinite(report.errors))
    assert report.fold_errors.shape == (3, 11)
    np.testing.assert_array_equal(report.errors, again.errors)


def test_single_lambda_error_is_the_fold_average(small_scenario, small_forest):
    d, _ = small_scenario
    cfg = MethodConfig(method="combo", forest=small_forest, k_folds=2, seed=0)
    report = cross_validate(d, None, [0.1], cfg)
    assert report.errors[0] == pytest.approx(report.fold_errors[:, 0].mean())
    assert sum(report.fold_pairs) > 0


def test_parallel_folds_match_serial(small_scenario, small_forest):
    d, _ = small_scenario
    cfg = MethodConfig(method="combo", forest=small_forest, k_folds=3, seed=2)
    serial = cross_validate(d, None, None, cfg, n_jobs=1)
    threaded = cross_validate(d, None, None, cfg, n_jobs=3)
    np.testing.assert_array_equal(serial.errors, threaded.errors)


def test_matching_never_reads_treated_responses(small_scenario, small_forest):
    d, _ = small_scenario
    treated, _ = split_by_treatment(d)
    Y = d.Y.copy()
    Y[treated] += 100.0
    shifted = Dataset(X=d.X, W=d.W, Y=Y, ids=d.ids)
    np.testing.assert_array_equal(
        dataset_proximity_matrix(d, small_forest).values,
        dataset_proximity_matrix(shifted, small_forest).values,
    )
