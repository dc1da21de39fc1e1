"""Hybrid content / collaborative / semantic recommender with an offline evaluation harness."""

from hybridrec.domain import (
    ContextRecord,
    Interaction,
    ItemRecord,
    RatingsMatrix,
    ReviewRecord,
    ScoreTriple,
    validate_dataset,
)
from hybridrec.ingest import DatasetBundle, load_bundle, save_bundle

__all__ = [
    "ContextRecord",
    "DatasetBundle",
    "Interaction",
    "ItemRecord",
    "RatingsMatrix",
    "ReviewRecord",
    "ScoreTriple",
    "load_bundle",
    "save_bundle",
    "validate_dataset",
]

__version__ = "0.1.0"
