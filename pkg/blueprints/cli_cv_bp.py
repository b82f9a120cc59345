import logging
from pathlib import Path

import pandas as pd

from blueprints.registry import FOREST_ARGUMENTS, MULTIPLICITY_ARGUMENTS, Blueprint, arg, float_list
from models.configs import METHOD_NAMES, CliConfig, MethodConfig
from models.dataset import load_dataset
from services.assessment_service import cross_validate

logger = logging.getLogger(__name__)

bp = Blueprint()


@bp.command(
    "cv",
    help="per-lambda validation error of the joint LASSO",
    arguments=[
        arg("--input", type=Path, help="dataset CSV"),
        arg("--method", choices=list(METHOD_NAMES)),
        arg("--folds", type=int),
        arg("--lambdas", type=float_list, help="comma-separated grid or 'default'"),
        arg("--seed", type=int),
        arg("--jobs", type=int, help="concurrent folds"),
        arg("--out", type=Path, help="error CSV"),
        *MULTIPLICITY_ARGUMENTS,
        *FOREST_ARGUMENTS,
    ],
)
def cv(cfg: CliConfig) -> int:
    if cfg.input is None or cfg.out is None:
        logger.error("cv needs --input and --out")
        return 2
    try:
        method_cfg = MethodConfig(
            method=cfg.method,
            spec=cfg.match_spec(),
            forest=cfg.forest_params(),
            k_folds=cfg.folds or 10,
            seed=cfg.seed,
        )
        report = cross_validate(load_dataset(cfg.input), None, cfg.lambdas, method_cfg, n_jobs=cfg.jobs or 1)
        pd.DataFrame(report.to_frame_records()).to_csv(cfg.out, index=False)
        return 0
    except (OSError, ValueError) as e:
        logger.error("cv failed: %s", e)
        return 1
