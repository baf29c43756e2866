"""Training-free Bayesianization of low-rank adapters on small numpy networks."""

from .adapter import BayesianAdapter, LoraAdapter, Posterior, PosteriorFamily, bayesianize
from .linalg import compact_svd
from .netcore import Network, bayesianize_network

__all__ = [
    "BayesianAdapter",
    "LoraAdapter",
    "Network",
    "Posterior",
    "PosteriorFamily",
    "bayesianize",
    "bayesianize_network",
    "compact_svd",
]
