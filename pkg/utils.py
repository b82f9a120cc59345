import os
import sys
import json
import logging
from pathlib import Path

import numpy as np


def configure_logging(level: str | None = None) -> None:
    logging.basicConfig(
        format="[%(asctime)s - %(name)s:%(lineno)d - %(levelname)s] %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
        stream=sys.stderr,
        level=(level or os.getenv("MATCHVAL_LOG_LEVEL", "INFO")).upper(),
        force=True,
    )
    logging.getLogger("matplotlib").setLevel(logging.WARNING)


def default_jobs() -> int:
    jobs = os.getenv("MATCHVAL_JOBS")
    if jobs:
        return max(1, int(jobs))
    return os.cpu_count() or 1


def spawn_seeds(seed: int, count: int) -> list[int]:
    """Independent 64-bit child seeds of `seed`, stable across runs and platforms."""
    children = np.random.SeedSequence(seed).spawn(count)
    return [int(child.generate_state(1, dtype=np.uint64)[0]) for child in children]


def make_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed))


def write_json(payload: dict, path: str | Path) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True, allow_nan=True)
    Path(path).write_text(text + "\n", encoding="utf-8")


def read_json(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))
