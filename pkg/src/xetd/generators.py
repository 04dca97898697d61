"""Random tabular problems for property tests and numerical sanity checks."""

from __future__ import annotations

import numpy as np

from .linalg import spectral_radius
from .mdp import FeatureMap, PolicyPair, Problem, TabularMdp, TabularPolicy


def _random_simplex_rows(rng, shape, min_prob=0.0):
    x = rng.dirichlet(np.ones(shape[-1]), size=shape[:-1])
    if min_prob > 0:
        x = (x + min_prob) / (1.0 + shape[-1] * min_prob)
    return x


def followon_second_moment(mdp: TabularMdp, pair: PolicyPair) -> np.ndarray:
    """``M2(s, s') = sum_a mu(a|s) rho(s, a)^2 P(s'|s, a) gamma(s')^2``.

    The one-step followon trace has a finite stationary second moment iff
    its spectral radius is below one.
    """
    mu = pair.behavior.probs
    rho = pair.ratios
    M = np.einsum("sa,sa,sat->st", mu, rho**2, mdp.transition)
    return M * (mdp.discount**2)[None, :]


def random_problem(
    rng: np.random.Generator,
    num_states: int | None = None,
    num_actions: int | None = None,
    num_features: int | None = None,
    discount: float | tuple[float, float] = (0.5, 0.95),
    state_discount: bool = False,
    max_second_moment: float | None = None,
    max_tries: int = 1000,
) -> Problem:
    """A random ergodic off-policy problem with full-column-rank features.

    Every transition probability and behavior probability is bounded away
    from zero, so the behavior chain is irreducible and aperiodic. With
    ``max_second_moment`` set, candidates whose one-step followon trace has
    a second-moment radius at or above the bound are redrawn; that keeps
    Monte Carlo estimates of the expected emphasis well behaved.
    """
    for _ in range(max_tries):
        S = int(num_states if num_states is not None else rng.integers(2, 11))
        A = int(num_actions if num_actions is not None else rng.integers(1, 5))
        K = int(num_features if num_features is not None else rng.integers(1, S + 1))
        P = _random_simplex_rows(rng, (S, A, S), min_prob=0.05)
        R = rng.normal(size=(S, A))
        if isinstance(discount, tuple):
            lo, hi = discount
            gamma = rng.uniform(lo, hi, size=S) if state_discount else rng.uniform(lo, hi)
        else:
            gamma = discount
        mdp = TabularMdp(P, R, gamma)
        target = TabularPolicy(_random_simplex_rows(rng, (S, A)))
        behavior = TabularPolicy(_random_simplex_rows(rng, (S, A), min_prob=0.1))
        pair = PolicyPair(target, behavior)
        if max_second_moment is not None:
            if spectral_radius(followon_second_moment(mdp, pair)) >= max_second_moment:
                continue
        Phi = rng.normal(size=(S, K))
        if np.linalg.matrix_rank(Phi) < K:
            continue
        return Problem(mdp, pair, FeatureMap(Phi))
    raise RuntimeError("no admissible random problem found; relax the constraints")
