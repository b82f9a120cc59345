
from models.configs import (
    METHOD_NAMES,
    CliConfig,
    Family,
    ForestParams,
    LassoParams,
    MethodConfig,
    NoiseSpec,
    PropensitySpec,
    ScenarioConfig,
)
from models.dataset import (
    Dataset,
    DatasetSchema,
    Truth,
    load_dataset,
    save_dataset,
    split_by_treatment,
)
from models.lasso_path import LassoPath
from models.matching import (
    DistanceMatrix,
    Match,
    MatchSolution,
    MatchSpec,
    Pair,
    load_pairs,
    save_pairs,
)
from models.reports import (
    CrossValidationReport,
    CurveFit,
    ExperimentResult,
    MethodSummary,
    PairDiagnostics,
    Prop1Bounds,
    RepetitionRecord,
)

__all__ = [
    "METHOD_NAMES",
    "CliConfig",
    "CrossValidationReport",
    "CurveFit",
    "Dataset",
    "DatasetSchema",
    "DistanceMatrix",
    "ExperimentResult",
    "Family",
    "ForestParams",
    "LassoParams",
    "LassoPath",
    "Match",
    "MatchSolution",
    "MatchSpec",
    "MethodConfig",
    "MethodSummary",
    "NoiseSpec",
    "Pair",
    "PairDiagnostics",
    "Prop1Bounds",
    "PropensitySpec",
    "RepetitionRecord",
    "ScenarioConfig",
    "Truth",
    "load_dataset",
    "load_pairs",
    "save_dataset",
    "save_pairs",
    "split_by_treatment",
]
