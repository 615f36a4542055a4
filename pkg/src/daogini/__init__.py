"""Governance-token decentralization metrics: group-wise Gini coefficients of
holder distributions and log-log robust OLS against returns."""

__version__ = "0.1.0"

from .gini import GiniBundle, SortedDistribution, compute_bundle, gini  # noqa: E402
from .holders import HolderRecord, HolderSnapshot, load_snapshot, save_snapshot  # noqa: E402

__all__ = [
    "GiniBundle",
    "HolderRecord",
    "HolderSnapshot",
    "SortedDistribution",
    "compute_bundle",
    "gini",
    "load_snapshot",
    "save_snapshot",
]
