"""Finite MDPs, tabular policies, feature maps and trajectory simulation.

States and actions are integer indices. Transition tensors are indexed
``(s, a, s')``, reward tables ``(s, a)`` and discounts ``gamma(s)`` per state.
The discount of a transition is the discount of the state it lands in, so the
return is ``G_t = R_{t+1} + gamma(S_{t+1}) G_{t+1}``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numba
import numpy as np

from .errors import DimensionError, ErgodicityError

_PROB_ATOL = 1e-12


def _frozen(x, ndim: int, name: str) -> np.ndarray:
    arr = np.array(x, dtype=float)
    if arr.ndim != ndim:
        raise DimensionError(f"{name} must have {ndim} dimensions, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def _check_distribution_rows(arr: np.ndarray, name: str) -> None:
    if np.any(arr < 0):
        raise ValueError(f"{name} has negative entries")
    sums = arr.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > _PROB_ATOL):
        worst = float(np.max(np.abs(sums - 1.0)))
        raise ValueError(f"{name} rows must sum to 1 (worst deviation {worst:.3e})")


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Finite MDP with per-state discount.

    Parameters
    ----------
    transition : array (S, A, S)
        ``transition[s, a, s2]`` is the probability of landing in ``s2``.
    reward : array (S, A)
        Expected reward ``r(s, a)``.
    discount : array (S,) or float
        ``gamma(s)`` in ``[0, 1]``; a scalar is broadcast to every state.
    """

    transition: np.ndarray
    reward: np.ndarray
    discount: np.ndarray

    def __post_init__(self):
        transition = _frozen(self.transition, 3, "transition")
        s, a, s2 = transition.shape
        if s != s2 or s == 0 or a == 0:
            raise DimensionError(f"transition must be (S, A, S), got {transition.shape}")
        _check_distribution_rows(transition, "transition")
        reward = _frozen(self.reward, 2, "reward")
        if reward.shape != (s, a):
            raise DimensionError(f"reward must be {(s, a)}, got {reward.shape}")
        discount = np.broadcast_to(np.asarray(self.discount, dtype=float), (s,))
        discount = _frozen(discount, 1, "discount")
        if np.any(discount < 0) or np.any(discount > 1):
            raise ValueError("discount values must lie in [0, 1]")
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "reward", reward)
        object.__setattr__(self, "discount", discount)

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]


@dataclass(frozen=True, eq=False)
class TabularPolicy:
    """Action probabilities ``probs[s, a] = pi(a|s)``."""

    probs: np.ndarray

    def __post_init__(self):
        probs = _frozen(self.probs, 2, "policy probs")
        _check_distribution_rows(probs, "policy probs")
        object.__setattr__(self, "probs", probs)

    @property
    def num_states(self) -> int:
        return self.probs.shape[0]

    @property
    def num_actions(self) -> int:
        return self.probs.shape[1]


@dataclass(frozen=True, eq=False)
class PolicyPair:
    """Target policy ``pi`` evaluated from data generated by behavior ``mu``."""

    target: TabularPolicy
    behavior: TabularPolicy

    def __post_init__(self):
        if self.target.probs.shape != self.behavior.probs.shape:
            raise DimensionError(
                f"target {self.target.probs.shape} and behavior "
                f"{self.behavior.probs.shape} policies differ in shape"
            )
        uncovered = (self.target.probs > 0) & (self.behavior.probs <= 0)
        if np.any(uncovered):
            s, a = np.argwhere(uncovered)[0]
            raise ValueError(f"behavior policy does not cover target at state {s}, action {a}")
        ratios = np.divide(
            self.target.probs,
            self.behavior.probs,
            out=np.zeros_like(self.target.probs),
            where=self.behavior.probs > 0,
        )
        ratios.setflags(write=False)
        object.__setattr__(self, "_ratios", ratios)

    @property
    def ratios(self) -> np.ndarray:
        """IS ratio table ``pi(a|s) / mu(a|s)``; 0 where ``mu(a|s) = 0``."""
        return self._ratios

    def is_on_policy(self) -> bool:
        return bool(np.array_equal(self.target.probs, self.behavior.probs))


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """State features; row ``s`` of ``matrix`` is ``phi(s)``."""

    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix", _frozen(self.matrix, 2, "feature matrix"))

    @classmethod
    def tabular(cls, num_states: int) -> "FeatureMap":
        return cls(np.eye(num_states))

    @property
    def num_states(self) -> int:
        return self.matrix.shape[0]

    @property
    def num_features(self) -> int:
        return self.matrix.shape[1]

    def __getitem__(self, state) -> np.ndarray:
        return self.matrix[state]

    @property
    def rank(self) -> int:
        return int(np.linalg.matrix_rank(self.matrix))

    def row_space_basis(self) -> np.ndarray:
        """Orthonormal basis (K, rank) of the row space of the feature matrix.

        Weight components orthogonal to this space do not change any value
        estimate, so stability and fixed points are judged on it.
        """
        _, sing, vt = np.linalg.svd(self.matrix)
        tol = sing.max(initial=0.0) * max(self.matrix.shape) * np.finfo(float).eps
        return vt[: int(np.sum(sing > tol))].T.copy()


class Transition(NamedTuple):
    state: int
    action: int
    reward: float
    next_state: int
    rho: float
    gamma_next: float


class StreamArrays(NamedTuple):
    """Column layout of a simulated behavior stream, one entry per transition."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    rho: np.ndarray
    gamma_next: np.ndarray

    def __len__(self):
        return len(self.states)

    def transitions(self) -> list[Transition]:
        return [
            Transition(int(s), int(a), float(r), int(s2), float(p), float(g))
            for s, a, r, s2, p, g in zip(*self)
        ]


def _check_compatible(mdp: TabularMdp, policy: TabularPolicy) -> None:
    if policy.probs.shape != mdp.reward.shape:
        raise DimensionError(
            f"policy shape {policy.probs.shape} does not match MDP (S, A) = {mdp.reward.shape}"
        )


def transition_matrix(mdp: TabularMdp, policy: TabularPolicy) -> np.ndarray:
    """State-to-state matrix ``P_pi(s, s') = sum_a pi(a|s) P(s'|s, a)``."""
    _check_compatible(mdp, policy)
    return np.einsum("sa,sat->st", policy.probs, mdp.transition)


def reward_vector(mdp: TabularMdp, policy: TabularPolicy) -> np.ndarray:
    """Expected one-step reward ``r_pi(s) = sum_a pi(a|s) r(s, a)``."""
    _check_compatible(mdp, policy)
    return np.einsum("sa,sa->s", policy.probs, mdp.reward)


def diag_discount(mdp: TabularMdp) -> np.ndarray:
    return np.diag(mdp.discount)


def diag_weighting(vector) -> np.ndarray:
    return np.diag(np.asarray(vector, dtype=float))


def stationary_from_matrix(P: np.ndarray, tol: float = 1e-12, max_iters: int = 10**6) -> np.ndarray:
    """Left fixed point of a row-stochastic matrix by power iteration.

    Raises ErgodicityError when the iterates oscillate (periodic chain) or
    fail to settle within ``max_iters`` steps.
    """
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {P.shape}")
    # a non-uniform start, so that periodic chains with a uniform stationary
    # vector still oscillate instead of converging on the first step
    d = np.arange(1.0, P.shape[0] + 1.0)
    d /= d.sum()
    prev = d
    for it in range(max_iters):
        nxt = d @ P
        nxt /= nxt.sum()
        step = np.max(np.abs(nxt - d))
        if step <= tol:
            return nxt
        # two-step fixed point while single steps stay large: period 2
        if it > 0 and step > np.sqrt(tol) and np.max(np.abs(nxt - prev)) <= tol:
            raise ErgodicityError(
                f"power iteration oscillates with period 2 after {it} iterations; chain is periodic"
            )
        prev, d = d, nxt
    raise ErgodicityError(
        f"power iteration did not converge in {max_iters} iterations (last step {step:.3e})"
    )


def stationary_distribution(
    mdp: TabularMdp, policy: TabularPolicy, tol: float = 1e-12, max_iters: int = 10**6
) -> np.ndarray:
    """Stationary distribution of the chain induced by ``policy``."""
    return stationary_from_matrix(transition_matrix(mdp, policy), tol=tol, max_iters=max_iters)


def _sampling_table(probs: np.ndarray) -> np.ndarray:
    # cumulative table whose entries from the last positive-probability slot
    # on are exactly 1.0, so u in [0, 1) never selects a zero-probability slot
    cum = np.cumsum(probs, axis=-1)
    flat_p = probs.reshape(-1, probs.shape[-1])
    flat_c = cum.reshape(-1, probs.shape[-1])
    for p_row, c_row in zip(flat_p, flat_c):
        last = np.flatnonzero(p_row > 0)[-1]
        c_row[last:] = 1.0
    return cum


@numba.njit(cache=True)
def _decode_path(mu_cum, p_cum, start, u):
    length = u.shape[0]
    num_actions = mu_cum.shape[1]
    num_states = p_cum.shape[2]
    states = np.empty(length, dtype=np.int64)
    actions = np.empty(length, dtype=np.int64)
    nexts = np.empty(length, dtype=np.int64)
    s = start
    for t in range(length):
        a = 0
        while a < num_actions - 1 and u[t, 0] >= mu_cum[s, a]:
            a += 1
        s2 = 0
        while s2 < num_states - 1 and u[t, 1] >= p_cum[s, a, s2]:
            s2 += 1
        states[t] = s
        actions[t] = a
        nexts[t] = s2
        s = s2
    return states, actions, nexts


def sample_stream_arrays(
    mdp: TabularMdp, pair: PolicyPair, start: int, rng: np.random.Generator, length: int
) -> StreamArrays:
    """Simulate ``length`` behavior transitions from ``start`` using ``rng``.

    Consumes exactly one ``rng.random((length, 2))`` call: column 0 picks the
    action by inverse CDF of ``mu(.|s)``, column 1 the next state.
    """
    _check_compatible(mdp, pair.behavior)
    if length < 0:
        raise ValueError("length must be non-negative")
    if not 0 <= start < mdp.num_states:
        raise ValueError(f"start state {start} out of range")
    u = rng.random((length, 2))
    states, actions, nexts = _decode_path(
        _sampling_table(pair.behavior.probs), _sampling_table(mdp.transition), int(start), u
    )
    return StreamArrays(
        states=states,
        actions=actions,
        rewards=mdp.reward[states, actions],
        next_states=nexts,
        rho=pair.ratios[states, actions],
        gamma_next=mdp.discount[nexts],
    )


def simulate_stream(
    mdp: TabularMdp, pair: PolicyPair, start: int, rng_seed: int, length: int
) -> list[Transition]:
    """Deterministic behavior trajectory of ``length`` transitions."""
    rng = np.random.default_rng(rng_seed)
    return sample_stream_arrays(mdp, pair, start, rng, length).transitions()


def sample_state(distribution: np.ndarray, rng: np.random.Generator) -> int:
    """Draw one state index from ``distribution`` with a single uniform."""
    cum = np.cumsum(distribution)
    return int(min(np.searchsorted(cum, rng.random() * cum[-1], side="right"), len(cum) - 1))


class Problem(NamedTuple):
    """An off-policy evaluation problem: dynamics, policy pair and features."""

    mdp: TabularMdp
    pair: PolicyPair
    features: FeatureMap
