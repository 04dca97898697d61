"""The modified Baird counterexample used for the emphasis experiments.

Seven states: six on a top level and one bottom state. Action 0 ("solid")
moves to the bottom state from anywhere; action 1 ("dashed") moves to a
uniformly random top state. Values are linear in eight weights: top state
``i`` is ``2 w_i + w_8`` and the bottom state is ``w_7 + 2 w_8``.
"""

import numpy as np

from .mdp import FeatureMap, PolicyPair, Problem, TabularMdp, TabularPolicy

NUM_TOP = 6
BOTTOM = NUM_TOP
SOLID, DASHED = 0, 1

TARGET_SOLID = 0.3
BEHAVIOR_SOLID = 6.0 / 7.0
DISCOUNT = 0.95


def baird_features() -> FeatureMap:
    phi = np.zeros((NUM_TOP + 1, NUM_TOP + 2))
    for i in range(NUM_TOP):
        phi[i, i] = 2.0
        phi[i, -1] = 1.0
    phi[BOTTOM, NUM_TOP] = 1.0
    phi[BOTTOM, -1] = 2.0
    return FeatureMap(phi)


def baird_modified(
    target_solid: float = TARGET_SOLID,
    behavior_solid: float = BEHAVIOR_SOLID,
    discount: float = DISCOUNT,
) -> Problem:
    """Build ``(mdp, pair, features)``; rewards are identically zero."""
    num_states = NUM_TOP + 1
    transition = np.zeros((num_states, 2, num_states))
    transition[:, SOLID, BOTTOM] = 1.0
    transition[:, DASHED, :NUM_TOP] = 1.0 / NUM_TOP
    mdp = TabularMdp(transition, np.zeros((num_states, 2)), discount)
    target = TabularPolicy(np.tile([target_solid, 1.0 - target_solid], (num_states, 1)))
    behavior = TabularPolicy(np.tile([behavior_solid, 1.0 - behavior_solid], (num_states, 1)))
    return Problem(mdp, PolicyPair(target, behavior), baird_features())
