"""Incremental linear update rules for off-policy value and emphasis learning.

Every update is a pure function returning a new :class:`LinearFunction`; the
caller owns the loop. A :class:`Segment` holds ``n`` chained transitions
``(S_0, A_0, R_1, S_1, ..., S_n)``. Within a segment, step ``k`` contributes
the IS ratio ``rho_k`` and the discount ``gamma_{k+1}`` of the state it lands in.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .mdp import FeatureMap, Transition

log = logging.getLogger(__name__)

#: Followon traces are capped here instead of overflowing to inf.
TRACE_CAP = 1e300


@dataclass(frozen=True, eq=False)
class LinearFunction:
    """``v(s) = <weights, phi(s)>``."""

    weights: np.ndarray
    features: FeatureMap

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.shape != (self.features.num_features,):
            raise ValueError(
                f"weights shape {w.shape} does not match {self.features.num_features} features"
            )
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def constant(cls, features: FeatureMap, value: float) -> "LinearFunction":
        return cls(np.full(features.num_features, float(value)), features)

    def __call__(self, state: int) -> float:
        return float(self.weights @ self.features.matrix[state])

    def values(self) -> np.ndarray:
        return self.features.matrix @ self.weights

    def gradient(self, state: int) -> np.ndarray:
        return self.features.matrix[state]

    def with_weights(self, weights) -> "LinearFunction":
        return replace(self, weights=weights)

    def step(self, scale: float, state: int) -> "LinearFunction":
        """``weights + scale * phi(state)``."""
        return self.with_weights(self.weights + scale * self.features.matrix[state])


@dataclass(frozen=True)
class Segment:
    transitions: tuple[Transition, ...]

    def __post_init__(self):
        object.__setattr__(self, "transitions", tuple(self.transitions))
        if not self.transitions:
            raise ValueError("a segment needs at least one transition")
        for prev, nxt in zip(self.transitions, self.transitions[1:]):
            if prev.next_state != nxt.state:
                raise ValueError(
                    f"transitions do not chain: next_state {prev.next_state} != state {nxt.state}"
                )

    @property
    def n(self) -> int:
        return len(self.transitions)

    @property
    def first_state(self) -> int:
        return self.transitions[0].state

    @property
    def last_state(self) -> int:
        return self.transitions[-1].next_state

    @property
    def rhos(self) -> tuple[float, ...]:
        return tuple(tr.rho for tr in self.transitions)

    @property
    def gammas(self) -> tuple[float, ...]:
        return tuple(tr.gamma_next for tr in self.transitions)


@dataclass(frozen=True)
class LearnerConfig:
    """Step sizes and clipping thresholds shared by the learners.

    ``beta`` weights the Monte Carlo regression term of the emphasis learner.
    ``rho_bar`` clips the emphasis learner's ratios (and V-trace's TD-error
    ratios); ``c_bar`` clips V-trace's trace ratios. ``value_rho_clip`` clips
    the ratios inside the X-ETD(n) value update. ``inf`` means no clipping.
    """

    n: int = 1
    alpha_w: float = 2.0**-8
    alpha_theta: float = 2.0**-8
    beta: float = 0.0
    rho_bar: float = math.inf
    c_bar: float = math.inf
    value_rho_clip: float = math.inf

    def __post_init__(self):
        if not (isinstance(self.n, (int, np.integer)) and self.n >= 1):
            raise ValueError(f"n must be a positive integer, got {self.n!r}")
        for name in ("alpha_w", "alpha_theta"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be finite and > 0, got {value!r}")
        if not (math.isfinite(self.beta) and self.beta >= 0):
            raise ValueError(f"beta must be finite and >= 0, got {self.beta!r}")
        for name in ("rho_bar", "c_bar", "value_rho_clip"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0 (inf disables clipping)")


# -- value learners ---------------------------------------------------------


def _corrected_td_sum(seg: Segment, v: LinearFunction, trace_ratios, td_ratios) -> float:
    # sum_k (prod_{i<k} gamma_{i+1} c_i) r_k delta_k, one pass with a running product
    total = 0.0
    coef = 1.0
    for tr, c, r in zip(seg.transitions, trace_ratios, td_ratios):
        delta = tr.reward + tr.gamma_next * v(tr.next_state) - v(tr.state)
        total += coef * r * delta
        coef *= tr.gamma_next * c
    return total


def _clipped(values, bound: float):
    return tuple(min(x, bound) for x in values)


def n_step_delta(seg: Segment, v: LinearFunction) -> tuple[float, np.ndarray]:
    """Scalar of the off-policy n-step TD update and its direction ``phi(S_0)``."""
    rhos = seg.rhos
    return _corrected_td_sum(seg, v, rhos, rhos), v.gradient(seg.first_state)


def _emphatic_step(seg, v, emphasis, alpha, scalar):
    return v.step(alpha * emphasis * scalar, seg.first_state)


def td_n_update(seg: Segment, v: LinearFunction, alpha: float) -> LinearFunction:
    """Off-policy TD(n): ``w + alpha * delta_sum * phi(S_0)``."""
    scalar, _ = n_step_delta(seg, v)
    return _emphatic_step(seg, v, 1.0, alpha, scalar)


def etd_n_update(seg: Segment, v: LinearFunction, followon: float, alpha: float) -> LinearFunction:
    """ETD(n): the TD(n) update scaled by the Monte Carlo followon trace."""
    scalar, _ = n_step_delta(seg, v)
    return _emphatic_step(seg, v, followon, alpha, scalar)


def vtrace_update(seg: Segment, v: LinearFunction, config: LearnerConfig, alpha: float) -> LinearFunction:
    """V-trace policy evaluation: traces clipped at ``c_bar``, TD errors at ``rho_bar``."""
    rhos = seg.rhos
    scalar = _corrected_td_sum(seg, v, _clipped(rhos, config.c_bar), _clipped(rhos, config.rho_bar))
    return _emphatic_step(seg, v, 1.0, alpha, scalar)


def xetd_n_update(
    seg: Segment,
    v: LinearFunction,
    f: LinearFunction,
    alpha_w: float,
    value_rho_clip: float = math.inf,
) -> LinearFunction:
    """X-ETD(n): the TD(n) update scaled by the emphasis model at ``S_0``.

    A finite ``value_rho_clip`` clips every ratio inside the n-step sum.
    """
    rhos = seg.rhos
    if value_rho_clip != math.inf:
        rhos = _clipped(rhos, value_rho_clip)
    scalar = _corrected_td_sum(seg, v, rhos, rhos)
    return _emphatic_step(seg, v, f(seg.first_state), alpha_w, scalar)


# -- emphasis learners -----------------------------------------------------


def reversed_td_error(seg: Segment, f: LinearFunction, rho_bar: float = math.inf) -> float:
    """``(prod_k gamma_{k+1} min(rho_k, rho_bar)) f(S_0) + 1 - f(S_n)``."""
    prod = 1.0
    for tr in seg.transitions:
        prod *= tr.gamma_next * min(tr.rho, rho_bar)
    return prod * f(seg.first_state) + 1.0 - f(seg.last_state)


def reversed_td_update(seg: Segment, f: LinearFunction, alpha_theta: float) -> LinearFunction:
    """Semi-gradient time-reversed TD; moves only along ``phi(S_n)``."""
    return f.step(alpha_theta * reversed_td_error(seg, f), seg.last_state)


def reversed_td_clipped_update(
    seg: Segment, f: LinearFunction, alpha_theta: float, rho_bar: float
) -> LinearFunction:
    return f.step(alpha_theta * reversed_td_error(seg, f, rho_bar), seg.last_state)


def reversed_td_mc_update(
    seg_iid: Segment,
    online_step: tuple[int, float],
    f: LinearFunction,
    alpha_theta: float,
    beta: float,
    rho_bar: float = math.inf,
) -> LinearFunction:
    """Time-reversed TD on a replayed segment plus Monte Carlo regression.

    ``online_step`` is ``(S_k, F_k)`` from the sequential stream; the second
    term pulls ``f(S_k)`` toward the observed followon trace with weight ``beta``.
    """
    state, followon = online_step
    phi = f.features.matrix
    td_part = (alpha_theta * reversed_td_error(seg_iid, f, rho_bar)) * phi[seg_iid.last_state]
    mc_part = (alpha_theta * beta * (followon - f(state))) * phi[state]
    return f.with_weights(f.weights + td_part + mc_part)


# -- followon trace ----------------------------------------------------------


class FollowonState:
    """Ring buffers for the n-step followon recursion along one stream.

    ``history`` holds the last ``n`` traces ``F_{t-n+1} .. F_t`` and
    ``factors`` the last ``n`` products ``rho_i gamma_{i+1}``. The trace starts
    at ``F_0 = 1`` and stays 1 until ``n`` factors are available.
    """

    def __init__(self, n: int):
        if n < 1:
            raise ValueError("n must be >= 1")
        self.n = n
        self.t = 0
        self.history: deque[float] = deque([1.0], maxlen=n)
        self.factors: deque[float] = deque(maxlen=n)
        self.saturated = False

    @property
    def current(self) -> float:
        return self.history[-1]


def followon_advance(state: FollowonState, factor: float) -> float:
    """Consume ``rho_t gamma_{t+1}`` and return ``F_{t+1}``; rotates ``state``.

    ``F_{t+1} = (prod of the last n factors) F_{t+1-n} + 1`` once ``t + 1 >= n``,
    else 1. Values beyond ``TRACE_CAP`` are capped with a warning.
    """
    state.factors.append(factor)
    state.t += 1
    if state.t < state.n:
        trace = 1.0
    else:
        prod = 1.0
        for x in state.factors:
            prod *= x
        trace = prod * state.history[0] + 1.0
        if not trace <= TRACE_CAP:
            if not state.saturated:
                log.warning("followon trace exceeded %.0e at t=%d; capping", TRACE_CAP, state.t)
            state.saturated = True
            trace = TRACE_CAP
    state.history.append(trace)
    return trace


def followon_traces(stream: Sequence[Transition], n: int) -> np.ndarray:
    """``F_0 .. F_len(stream)`` along a stream; entry ``t`` belongs to ``S_t``."""
    state = FollowonState(n)
    out = [state.current]
    for tr in stream:
        out.append(followon_advance(state, tr.rho * tr.gamma_next))
    return np.array(out)
