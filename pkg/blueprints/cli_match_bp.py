import logging
from pathlib import Path

from blueprints.registry import FOREST_ARGUMENTS, MULTIPLICITY_ARGUMENTS, Blueprint, arg
from models.configs import CliConfig
from models.dataset import Truth, load_dataset
from models.errors import SchemaError
from models.matching import DistanceMatrix, load_pairs, save_pairs
from services.distance_service import build_distance, load_distance, save_distance
from services.flow_matching_service import solve_match
from services.pruning_service import prune
from utils import read_json

logger = logging.getLogger(__name__)

bp = Blueprint()


def resolve_distance(cfg: CliConfig) -> DistanceMatrix:
    if cfg.distance is not None:
        return load_distance(cfg.distance, kind=cfg.kind)
    if cfg.input is None:
        raise SchemaError("either --distance or --input is required")
    truth = Truth.from_record(read_json(cfg.truth)) if cfg.truth is not None else None
    return build_distance(load_dataset(cfg.input), cfg.kind, cfg.forest_params(), truth)


@bp.command(
    "match solve",
    help="optimal match under multiplicity bounds",
    arguments=[
        arg("--distance", type=Path, help="distance CSV (treated_id column, control ids as headers)"),
        arg("--input", type=Path, help="dataset CSV to compute distances from"),
        arg("--truth", type=Path, help="truth JSON for --kind semi_oracle"),
        arg("--kind", choices=["proximity", "mahalanobis", "semi_oracle"]),
        arg("--objective", choices=["avg", "total"]),
        arg("--prune", action="store_true", help="prune the match to star components"),
        arg("--seed", type=int),
        arg("--out", type=Path, help="pair CSV"),
        *MULTIPLICITY_ARGUMENTS,
        *FOREST_ARGUMENTS,
    ],
)
def solve(cfg: CliConfig) -> int:
    if cfg.out is None:
        logger.error("match solve needs --out")
        return 2
    try:
        D = resolve_distance(cfg)
        match = solve_match(D, cfg.match_spec(), cfg.objective).match
        if cfg.prune:
            match = prune(match, D)
        save_pairs(match, D.treated_ids, D.control_ids, cfg.out)
        return 0
    except (OSError, ValueError) as e:
        logger.error("match solve failed: %s", e)
        return 1


@bp.command(
    "match prune",
    help="prune a pair CSV to star-shaped components",
    arguments=[
        arg("--pairs", type=Path, help="pair CSV to prune"),
        arg("--distance", type=Path, help="distance CSV overriding the pair distances"),
        arg("--out", type=Path, help="pruned pair CSV"),
    ],
)
def prune_pairs(cfg: CliConfig) -> int:
    if cfg.pairs is None or cfg.out is None:
        logger.error("match prune needs --pairs and --out")
        return 2
    try:
        D = load_distance(cfg.distance) if cfg.distance is not None else None
        match, treated_ids, control_ids = load_pairs(cfg.pairs, D)
        save_pairs(prune(match, D, (treated_ids, control_ids)), treated_ids, control_ids, cfg.out)
        return 0
    except (OSError, ValueError) as e:
        logger.error("match prune failed: %s", e)
        return 1


@bp.command(
    "match export-distance",
    help="write the treated x control distance matrix of a dataset",
    arguments=[
        arg("--input", type=Path, help="dataset CSV"),
        arg("--truth", type=Path, help="truth JSON for --kind semi_oracle"),
        arg("--kind", choices=["proximity", "mahalanobis", "semi_oracle"]),
        arg("--seed", type=int),
        arg("--out", type=Path, help="distance CSV"),
        *FOREST_ARGUMENTS,
    ],
)
def export_distance(cfg: CliConfig) -> int:
    if cfg.input is None or cfg.out is None:
        logger.error("match export-distance needs --input and --out")
        return 2
    try:
        save_distance(resolve_distance(cfg), cfg.out)
        return 0
    except (OSError, ValueError) as e:
        logger.error("match export-distance failed: %s", e)
        return 1
