"""Emphatic off-policy TD learning with a learned expected emphasis.

Tabular MDPs with linear features, closed-form ground truth, incremental
value and emphasis learners, replay, limiting-matrix stability analysis and
a seeded benchmark harness.
"""

from .baird import baird_features, baird_modified
from .learners import FollowonState, LearnerConfig, LinearFunction, Segment
from .mdp import FeatureMap, PolicyPair, Problem, TabularMdp, TabularPolicy, Transition
from .oracle import expected_emphasis, ground_truth, true_values, unbiased_fixed_point
from .replay import ReplayBuffer, segment_stream
from .stability import StabilityReport, is_positive_definite, stability_report, thresholds

__version__ = "0.1.0"

__all__ = [
    "FeatureMap",
    "FollowonState",
    "LearnerConfig",
    "LinearFunction",
    "PolicyPair",
    "Problem",
    "ReplayBuffer",
    "Segment",
    "StabilityReport",
    "TabularMdp",
    "TabularPolicy",
    "Transition",
    "baird_features",
    "baird_modified",
    "expected_emphasis",
    "ground_truth",
    "is_positive_definite",
    "segment_stream",
    "stability_report",
    "thresholds",
    "true_values",
    "unbiased_fixed_point",
]
