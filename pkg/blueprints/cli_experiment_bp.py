import logging
from pathlib import Path

from blueprints.cli_simulate_bp import read_feature_table
from blueprints.registry import FOREST_ARGUMENTS, Blueprint, arg, csv_list, float_list, setting_list
from models.configs import CliConfig
from services.experiment_service import run_experiment, write_results
from services.simulation_service import FEATURES_SETTING

logger = logging.getLogger(__name__)

bp = Blueprint()


@bp.command(
    "experiment",
    help="repeat settings x methods and write the results bundle",
    arguments=[
        arg("--settings", type=setting_list, help="comma-separated presets, e.g. I,II"),
        arg("--methods", type=csv_list, help="comma-separated methods, e.g. combo,prd"),
        arg("--reps", type=int),
        arg("--seed", type=int),
        arg("--n", type=int, help="units per simulated dataset"),
        arg("--lambdas", type=float_list, help="comma-separated grid or 'default'"),
        arg("--jobs", type=int, help="worker processes (default MATCHVAL_JOBS or CPU count)"),
        arg("--serial", action="store_true", help="run repetitions in order in this process"),
        arg("--features", type=Path, help="covariate table replacing the simulated covariates"),
        arg("--frac", type=float, help="fraction of feature rows per repetition"),
        arg("--no-plot", dest="no_plot", action="store_true", help="skip curves.svg"),
        arg("--outdir", type=Path, help="output directory"),
        *FOREST_ARGUMENTS,
    ],
)
def experiment(cfg: CliConfig) -> int:
    if cfg.outdir is None:
        logger.error("experiment needs --outdir")
        return 2
    try:
        features = None
        settings = cfg.settings
        if cfg.features is not None:
            features = read_feature_table(cfg.features).to_numpy(dtype=float)
            settings = [FEATURES_SETTING]
        forest = cfg.forest_params().model_copy(update={"n_jobs": None})
        result = run_experiment(
            settings,
            cfg.methods,
            cfg.reps,
            cfg.seed,
            lambdas=cfg.lambdas,
            forest=forest,
            n_jobs=cfg.jobs,
            serial=cfg.serial,
            n=cfg.n,
            features=features,
            frac=cfg.frac,
        )
        write_results(result, cfg.outdir, plot=not cfg.no_plot)
        return 0
    except (OSError, ValueError) as e:
        logger.error("experiment failed: %s", e)
        return 1
