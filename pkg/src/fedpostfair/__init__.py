"""Post-processing for local and global group fairness in federated learning."""

__version__ = "0.1.0"

from .criteria import Criterion, DisparitySpec, empirical_disparity, fairness_metric
from .domain import (
    ClientDataset,
    FairnessBudget,
    FederatedDataset,
    GroupStatistics,
    SampleRecord,
    compute_group_statistics,
)
from .fedopt import OptimizerConfig, run_federated_postprocess
from .postproc import DualParams, FairClassifier, FairnessConstraints, predict

__all__ = [
    "ClientDataset",
    "Criterion",
    "DisparitySpec",
    "DualParams",
    "FairClassifier",
    "FairnessBudget",
    "FairnessConstraints",
    "FederatedDataset",
    "GroupStatistics",
    "OptimizerConfig",
    "SampleRecord",
    "compute_group_statistics",
    "empirical_disparity",
    "fairness_metric",
    "predict",
    "run_federated_postprocess",
]
