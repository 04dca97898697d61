r"""Closed-form ground truth for off-policy evaluation on tabular MDPs.

Notation: ``P`` is the target transition matrix ``P_pi``, ``G`` the diagonal
discount matrix, ``d`` the behavior stationary distribution and ``D = diag(d)``.

Expected emphasis
-----------------
The n-step followon trace is ``F_t = (prod_{i=t-n}^{t-1} rho_i gamma_{i+1}) F_{t-n} + 1``.
The ratio product depends only on the actions taken after ``S_{t-n}``, so it
is conditionally independent of ``F_{t-n}`` given that state, and

    E_mu[rho_i gamma_{i+1} 1{S_{i+1} = s'} | S_i = s] = (P G)(s, s').

Writing ``m(s) = lim E[F_t 1{S_t = s}] = d(s) f(s)`` and chaining n steps,

    m = ((P G)^n)^T m + d,   i.e.   D f = (G P^T)^n D f + D 1,

so ``f = (I - D^{-1} (G P^T)^n D)^{-1} 1``. We solve for ``m`` and divide by
``d``, which is the same system without forming ``D^{-1}``. Consistency with
the time-reversed TD update matrix ``Phi^T (I - (G P^T)^n) D Phi`` is what
makes ``m`` its fixed point in the tabular case; the test-suite checks ``f``
against Monte Carlo averages and an exact forward recursion.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import EmphasisDivergenceError, ErgodicityError, NonEvaluableError, OutputError
from .linalg import checked_solve, solve_on_subspace, spectral_radius
from .mdp import (
    FeatureMap,
    PolicyPair,
    TabularMdp,
    TabularPolicy,
    reward_vector,
    stationary_distribution,
    transition_matrix,
)

_RADIUS_MARGIN = 1e-12


def discounted_transition(mdp: TabularMdp, policy: TabularPolicy) -> np.ndarray:
    """``P_pi Gamma``: transition matrix with the landing state's discount."""
    return transition_matrix(mdp, policy) * mdp.discount[None, :]


def n_step_gap(mdp: TabularMdp, policy: TabularPolicy, n: int) -> np.ndarray:
    """``L = I - (P_pi Gamma)^n``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return np.eye(mdp.num_states) - np.linalg.matrix_power(discounted_transition(mdp, policy), n)


def true_values(mdp: TabularMdp, target_policy: TabularPolicy) -> np.ndarray:
    """``v_pi = (I - P_pi Gamma)^{-1} r_pi``."""
    PG = discounted_transition(mdp, target_policy)
    if spectral_radius(PG) >= 1.0 - _RADIUS_MARGIN:
        raise NonEvaluableError(
            "spectral radius of P_pi Gamma is 1; the discounted return is unbounded"
        )
    return checked_solve(
        np.eye(mdp.num_states) - PG,
        reward_vector(mdp, target_policy),
        NonEvaluableError,
        "Bellman system I - P_pi Gamma",
    )


def n_step_reward_vector(mdp: TabularMdp, target_policy: TabularPolicy, n: int) -> np.ndarray:
    """``r_pi^n = sum_{i<n} (P_pi Gamma)^i r_pi``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    PG = discounted_transition(mdp, target_policy)
    term = reward_vector(mdp, target_policy)
    total = term.copy()
    for _ in range(n - 1):
        term = PG @ term
        total += term
    return total


def expected_emphasis(mdp: TabularMdp, pair: PolicyPair, n: int, d_mu=None) -> np.ndarray:
    """Limiting expected n-step followon trace ``f(s) = lim E_mu[F_t | S_t = s]``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    d = stationary_distribution(mdp, pair.behavior) if d_mu is None else np.asarray(d_mu)
    if np.any(d <= 0):
        raise ErgodicityError("expected emphasis needs a strictly positive stationary distribution")
    M = np.linalg.matrix_power(discounted_transition(mdp, pair.target), n)
    if spectral_radius(M) >= 1.0 - _RADIUS_MARGIN:
        raise EmphasisDivergenceError("(P_pi Gamma)^n has spectral radius 1; emphasis diverges")
    m = checked_solve(
        np.eye(mdp.num_states) - M.T, d, EmphasisDivergenceError, "emphasis system"
    )
    return m / d


def unbiased_fixed_point(
    mdp: TabularMdp, pair: PolicyPair, features: FeatureMap, n: int
) -> np.ndarray:
    """``w* = (Phi^T D^f L Phi)^{-1} Phi^T D^f r_pi^n`` with exact emphasis.

    For rank-deficient features the minimum-norm solution on the feature row
    space is returned; ``Phi w*`` is unique either way.
    """
    d = stationary_distribution(mdp, pair.behavior)
    f = expected_emphasis(mdp, pair, n, d_mu=d)
    weights = d * f
    Phi = features.matrix
    M = Phi.T @ (weights[:, None] * n_step_gap(mdp, pair.target, n)) @ Phi
    rhs = Phi.T @ (weights * n_step_reward_vector(mdp, pair.target, n))
    return solve_on_subspace(M, rhs, features.row_space_basis(), what="emphatic fixed-point system")


@dataclass(frozen=True, eq=False)
class GroundTruth:
    v_pi: np.ndarray
    f_star: np.ndarray
    d_mu: np.ndarray
    r_pi_n: np.ndarray
    L: np.ndarray
    n: int

    def to_csv(self, path) -> None:
        """Per-state sidecar table for debugging runs."""
        try:
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(["state", "d_mu", "v_pi", "f_star", "r_pi_n"])
                for s in range(len(self.v_pi)):
                    writer.writerow(
                        [s] + [f"{x[s]:.17g}" for x in (self.d_mu, self.v_pi, self.f_star, self.r_pi_n)]
                    )
        except OSError as exc:
            raise OutputError(f"cannot write ground truth to {path}: {exc}") from exc


def ground_truth(mdp: TabularMdp, pair: PolicyPair, n: int) -> GroundTruth:
    d = stationary_distribution(mdp, pair.behavior)
    return GroundTruth(
        v_pi=true_values(mdp, pair.target),
        f_star=expected_emphasis(mdp, pair, n, d_mu=d),
        d_mu=d,
        r_pi_n=n_step_reward_vector(mdp, pair.target, n),
        L=n_step_gap(mdp, pair.target, n),
        n=n,
    )
