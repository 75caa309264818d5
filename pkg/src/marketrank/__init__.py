"""Multi-objective learning-to-rank for two-sided marketplaces."""

from .corpus import Dataset, Document, QuerySet, load_dataset, save_dataset, split, validate
from .es import EsConfig, TrainHistory, train
from .fitness import FitnessReport, FitnessSpec, FitnessTerm, evaluate_fitness
from .metrics import MarketLedger, Ranking
from .policy import ParamVector, PolicyConfig, greedy_rank, init_params, pointwise_rank
from .synthgen import GenConfig, generate

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "Document",
    "QuerySet",
    "load_dataset",
    "save_dataset",
    "split",
    "validate",
    "EsConfig",
    "TrainHistory",
    "train",
    "FitnessReport",
    "FitnessSpec",
    "FitnessTerm",
    "evaluate_fitness",
    "MarketLedger",
    "Ranking",
    "ParamVector",
    "PolicyConfig",
    "greedy_rank",
    "init_params",
    "pointwise_rank",
    "GenConfig",
    "generate",
    "__version__",
]
