"""Debiased implicit-feedback recommender training with dual popularity/conformity debiasing."""

from .types import (Backbone, EmbeddingSet, HyperParams, Interaction, Method, SplitDataset,
                    TrainTriple, validate_dataset)

__version__ = "0.1.0"

__all__ = ["Backbone", "EmbeddingSet", "HyperParams", "Interaction", "Method", "SplitDataset",
           "TrainTriple", "validate_dataset", "__version__"]
