"""Corruption-robust offline RLHF on finite linear MDPs.

Robust reward estimation from epsilon-corrupted preference data, pessimistic
policy optimisation over a likelihood confidence set through zero-order and
first-order offline RL oracles, and exact evaluation machinery.
"""
from .contamination import AttackSpec, corrupt
from .mdp import LinearMdp, optimal_value, policy_value, random_linear_mdp
from .oracles import OracleResult, PrimalDualConfig, TransitionData, exact_oracle, primal_dual_oracle, robust_lsvi_oracle
from .pipelines import PipelineConfig, RobustRLHF, run_pipeline, suboptimality_gap
from .preferences import PreferenceDataset, coverage_diagnostics, sample_dataset
from .reward import ConfidenceSet, TrimmedMLE, confidence_zeta
from .robust_stats import RobustCovariance, RobustMean, robust_covariance, robust_mean
from .zeroth_order import SmoothingConfig, biased_pgd, gaussian_subgradient

__version__ = "0.1.0"

__all__ = [
    "AttackSpec",
    "corrupt",
    "LinearMdp",
    "optimal_value",
    "policy_value",
    "random_linear_mdp",
    "OracleResult",
    "PrimalDualConfig",
    "TransitionData",
    "exact_oracle",
    "primal_dual_oracle",
    "robust_lsvi_oracle",
    "PipelineConfig",
    "RobustRLHF",
    "run_pipeline",
    "suboptimality_gap",
    "PreferenceDataset",
    "coverage_diagnostics",
    "sample_dataset",
    "ConfidenceSet",
    "TrimmedMLE",
    "confidence_zeta",
    "RobustCovariance",
    "RobustMean",
    "robust_covariance",
    "robust_mean",
    "SmoothingConfig",
    "biased_pgd",
    "gaussian_subgradient",
    "__version__",
]
