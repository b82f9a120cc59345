import logging
from pathlib import Path

import pandas as pd

from blueprints.registry import Blueprint, arg
from models.configs import CliConfig
from models.dataset import save_dataset
from services.simulation_service import (
    FEATURES_SETTING,
    SCENARIO_PRESETS,
    generate_from_features,
    generate_scenario,
    scenario_config,
)
from utils import write_json

logger = logging.getLogger(__name__)

bp = Blueprint()


def truth_path(out: Path) -> Path:
    return out.with_name(f"{out.stem}.truth.json")


def read_feature_table(path: Path) -> pd.DataFrame:
    """Numeric feature table; unparsable cells become NaN and are rejected downstream."""
    frame = pd.read_csv(path, encoding="utf-8")
    return frame.apply(pd.to_numeric, errors="coerce")


@bp.command(
    "simulate",
    help="draw a dataset and its ground truth",
    arguments=[
        arg("--setting", choices=list(SCENARIO_PRESETS), help="scenario preset"),
        arg("--seed", type=int),
        arg("--n", type=int, help="number of units"),
        arg("--snr", type=float, help="target signal-to-noise ratio"),
        arg("--from-features", dest="from_features", type=Path, help="covariate table to resample"),
        arg("--frac", type=float, help="fraction of feature rows to sample"),
        arg("--out", type=Path, help="dataset CSV"),
        arg("--truth", type=Path, help="truth JSON (default <out>.truth.json)"),
    ],
)
def simulate(cfg: CliConfig) -> int:
    if cfg.out is None:
        logger.error("simulate needs --out")
        return 2
    try:
        if cfg.from_features is not None:
            scenario = scenario_config(cfg.setting or FEATURES_SETTING, seed=cfg.seed, snr_target=cfg.snr)
            dataset, truth = generate_from_features(read_feature_table(cfg.from_features), scenario, frac=cfg.frac)
        else:
            scenario = scenario_config(cfg.setting or "I", seed=cfg.seed, n=cfg.n, snr_target=cfg.snr)
            dataset, truth = generate_scenario(scenario)

        save_dataset(dataset, cfg.out)
        write_json(truth.to_record(), cfg.truth or truth_path(cfg.out))
        return 0
    except (OSError, ValueError) as e:
        logger.error("simulate failed: %s", e)
        return 1
