"""Graph-data imputation with a draft-then-refine Laplacian pyramid network,
reference imputers, and numerical checks of Dirichlet-energy bounds."""
from .errors import (ContractError, ConvergenceError, DataError, DegenerateNodeError,
                     DimensionError, GlpnError, TrainingDivergence)
from .graph import Graph, augmented_laplacian, dirichlet_energy, spectral_cache
from .masks import MaskSpec, Mechanism, make_mask
from .model import GlpnConfig, GlpnParams, draft_impute, forward, train

__version__ = "0.1.0"

__all__ = [
    "ContractError", "ConvergenceError", "DataError", "DegenerateNodeError", "DimensionError",
    "GlpnError", "TrainingDivergence", "Graph", "augmented_laplacian", "dirichlet_energy",
    "spectral_cache", "MaskSpec", "Mechanism", "make_mask", "GlpnConfig", "GlpnParams",
    "draft_impute", "forward", "train", "__version__",
]
