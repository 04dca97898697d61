"""Limiting update matrices, positive-definiteness certificates and thresholds.

Each stochastic learner here has an expected update ``b - A w`` in the
stationary regime, with ``A = Phi^T K Phi`` for a state-space "key" matrix
``K`` and ``b = Phi^T c``. Positive definiteness of ``A`` is decided from its
symmetric part. When the feature matrix is rank deficient ``A`` is singular
by construction, so every report also carries the verdict restricted to the
feature row space, which is what governs the values ``Phi w``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import DimensionError, NotPositiveDefiniteError, SingularSystemError
from .learners import LearnerConfig
from .linalg import min_sym_eig, solve_on_subspace
from .mdp import FeatureMap, PolicyPair, TabularMdp, stationary_distribution
from .oracle import (
    discounted_transition,
    expected_emphasis,
    n_step_gap,
    n_step_reward_vector,
    true_values,
)

PD_TOL = 1e-10

VALUE_ALGORITHMS = ("td_n", "etd_n", "vtrace", "xetd_n")
EMPHASIS_ALGORITHMS = ("reversed_td", "reversed_td_mc")


class Thresholds(NamedTuple):
    tau: float
    xi: float
    eta0: float


class Suboptimality(NamedTuple):
    error_norm: float
    value_error: float
    projection_error: float


@dataclass(eq=False)
class StabilityReport:
    algorithm: str
    A: np.ndarray
    b: np.ndarray
    pd: bool
    min_sym_eig: float
    fixed_point: np.ndarray | None
    thresholds: Thresholds
    feature_rank: int = 0
    num_features: int = 0
    span_pd: bool = False
    span_min_sym_eig: float = math.nan
    key_pd: bool = False
    key_min_sym_eig: float = math.nan
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        def num(x):
            return None if x is None else (x.tolist() if isinstance(x, np.ndarray) else float(x))

        return {
            "algorithm": self.algorithm,
            "pd": self.pd,
            "min_sym_eig": num(self.min_sym_eig),
            "span_pd": self.span_pd,
            "span_min_sym_eig": num(self.span_min_sym_eig),
            "key_pd": self.key_pd,
            "key_min_sym_eig": num(self.key_min_sym_eig),
            "feature_rank": self.feature_rank,
            "num_features": self.num_features,
            "thresholds": {k: num(v) for k, v in self.thresholds._asdict().items()},
            "fixed_point": num(self.fixed_point),
            "A": num(self.A),
            "b": num(self.b),
            "notes": list(self.notes),
        }

    def to_text(self) -> str:
        lines = [f"algorithm: {self.algorithm}"]
        verdict = "positive definite" if self.pd else "NOT positive definite"
        lines.append(f"  A ({self.num_features}x{self.num_features}): {verdict}, "
                     f"min eig of symmetric part = {self.min_sym_eig:.6g}")
        if self.feature_rank < self.num_features:
            lines.append(f"  feature rank {self.feature_rank} < {self.num_features} features "
                         "(full column rank violated)")
        span = "stable" if self.span_pd else "not certified stable"
        lines.append(f"  on feature row space: {span}, min eig = {self.span_min_sym_eig:.6g}")
        key = "positive definite" if self.key_pd else "NOT positive definite"
        lines.append(f"  key matrix: {key}, min eig = {self.key_min_sym_eig:.6g}")
        t = self.thresholds
        lines.append(f"  thresholds: tau = {t.tau:.6g}, xi = {t.xi:.6g}, eta0 = {t.eta0:.6g}")
        if self.fixed_point is None:
            lines.append("  fixed point: none (singular on the feature row space)")
        else:
            lines.append("  fixed point: " + np.array2string(self.fixed_point, precision=6))
        lines.extend(f"  note: {msg}" for msg in self.notes)
        return "\n".join(lines)


def is_positive_definite(A, tol: float = PD_TOL) -> tuple[bool, float]:
    """PD verdict for the real quadratic form ``y^T A y``."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"positive definiteness needs a square matrix, got {A.shape}")
    lam = min_sym_eig(A)
    return bool(lam > tol), lam


def clipped_discounted_transition(mdp: TabularMdp, pair: PolicyPair, rho_bar: float) -> np.ndarray:
    """``P(s, s') = sum_a mu(a|s) min(rho(a|s), rho_bar) P(s'|s, a) gamma(s')``."""
    if rho_bar == math.inf:
        return discounted_transition(mdp, pair.target)
    weights = pair.behavior.probs * np.minimum(pair.ratios, rho_bar)
    return np.einsum("sa,sat->st", weights, mdp.transition) * mdp.discount[None, :]


# -- key matrices: A = Phi^T K Phi, b = Phi^T c -------------------------------


def _emphatic_key(mdp, pair, f_vector, n, d):
    weights = d * np.asarray(f_vector, dtype=float)
    K = weights[:, None] * n_step_gap(mdp, pair.target, n)
    c = weights * n_step_reward_vector(mdp, pair.target, n)
    return K, c


def _vtrace_key(mdp, pair, n, rho_bar, c_bar, d):
    mu = pair.behavior.probs
    td_w = mu * np.minimum(pair.ratios, rho_bar)
    P_trace = clipped_discounted_transition(mdp, pair, c_bar)
    P_td = np.einsum("sa,sat->st", td_w, mdp.transition) * mdp.discount[None, :]
    one_step = np.diag(td_w.sum(axis=1)) - P_td
    r_td = np.einsum("sa,sa->s", td_w, mdp.reward)
    acc = np.zeros_like(one_step)
    rew = np.zeros(mdp.num_states)
    power = np.eye(mdp.num_states)
    for _ in range(n):
        acc += power @ one_step
        rew += power @ r_td
        power = power @ P_trace
    return d[:, None] * acc, d * rew


def _reversed_key(mdp, pair, n, rho_bar, beta, d):
    P = np.linalg.matrix_power(clipped_discounted_transition(mdp, pair, rho_bar), n)
    K = ((1.0 + beta) * np.eye(mdp.num_states) - P.T) * d[None, :]
    c = d.copy()
    if beta:
        c = c + beta * d * expected_emphasis(mdp, pair, n, d_mu=d)
    return K, c


def _project(features: FeatureMap, K, c):
    Phi = features.matrix
    return Phi.T @ K @ Phi, Phi.T @ c


def build_A_xetd(mdp, pair, features, f_vector, n) -> tuple[np.ndarray, np.ndarray]:
    """``A = Phi^T D^f (I - (P Gamma)^n) Phi`` and ``b = Phi^T D^f r^n``."""
    d = stationary_distribution(mdp, pair.behavior)
    return _project(features, *_emphatic_key(mdp, pair, f_vector, n, d))


def build_A_td(mdp, pair, features, n) -> tuple[np.ndarray, np.ndarray]:
    return build_A_xetd(mdp, pair, features, np.ones(mdp.num_states), n)


def build_A_vtrace(mdp, pair, features, n, rho_bar, c_bar) -> tuple[np.ndarray, np.ndarray]:
    d = stationary_distribution(mdp, pair.behavior)
    return _project(features, *_vtrace_key(mdp, pair, n, rho_bar, c_bar, d))


def build_A_reversed_td(mdp, pair, features, n, rho_bar=math.inf) -> np.ndarray:
    """``Phi^T (I - (P_rho_bar^T)^n) D Phi``; ``rho_bar = inf`` is the unclipped rule."""
    d = stationary_distribution(mdp, pair.behavior)
    return _project(features, *_reversed_key(mdp, pair, n, rho_bar, 0.0, d))[0]


def build_A_reversed_td_mc(mdp, pair, features, n, beta, rho_bar=math.inf) -> np.ndarray:
    """``Phi^T ((1 + beta) I - (Gamma P^T)^n) D Phi``."""
    if beta < 0:
        raise ValueError("beta must be >= 0")
    d = stationary_distribution(mdp, pair.behavior)
    return _project(features, *_reversed_key(mdp, pair, n, rho_bar, beta, d))[0]


# -- thresholds -----------------------------------------------------------------


def clip_threshold_tau(mdp: TabularMdp) -> float:
    """Clipping level below which clipped time-reversed TD is stable: ``1 / max gamma``."""
    g = float(np.max(mdp.discount))
    return math.inf if g == 0 else 1.0 / g


def mc_threshold_xi(mdp, pair, features, n) -> float:
    """Monte Carlo weight above which the regularized emphasis learner is stable."""
    d = stationary_distribution(mdp, pair.behavior)
    flow = d @ np.linalg.matrix_power(discounted_transition(mdp, pair.target), n)
    return max(float(np.max(flow / d)) - 1.0, 0.0)


def emphasis_error_budget_eta0(mdp, pair, features, n) -> float:
    """Largest ``||D^eps||`` that provably keeps the X-ETD(n) key matrix PD.

    ``eta`` is the smallest eigenvalue of the symmetric part of
    ``D^f (I - (P Gamma)^n)``; the budget is ``eta / ||I - (P Gamma)^n||_2``.
    """
    d = stationary_distribution(mdp, pair.behavior)
    f = expected_emphasis(mdp, pair, n, d_mu=d)
    K, _ = _emphatic_key(mdp, pair, f, n, d)
    eta = min_sym_eig(K)
    if not eta > PD_TOL:
        raise NotPositiveDefiniteError(f"emphatic key matrix is not PD (min eig {eta:.3e})")
    return eta / float(np.linalg.norm(n_step_gap(mdp, pair.target, n), 2))


def thresholds(mdp, pair, features, n) -> Thresholds:
    try:
        eta0 = emphasis_error_budget_eta0(mdp, pair, features, n)
    except (NotPositiveDefiniteError, SingularSystemError):
        eta0 = math.nan
    return Thresholds(clip_threshold_tau(mdp), mc_threshold_xi(mdp, pair, features, n), eta0)


def suboptimality_terms(mdp, pair, features, f_vector, n) -> Suboptimality:
    """Measurable quantities of the fixed-point error bound.

    Returns ``||D^eps||_2``, ``||Phi w_inf - v_pi||_2`` and the
    ``D^f``-weighted projection error of ``v_pi`` onto the features.
    """
    d = stationary_distribution(mdp, pair.behavior)
    f_star = expected_emphasis(mdp, pair, n, d_mu=d)
    error_norm = float(np.max(np.abs(d * (np.asarray(f_vector) - f_star))))
    A, b = _project(features, *_emphatic_key(mdp, pair, f_vector, n, d))
    w_inf = solve_on_subspace(A, b, features.row_space_basis(), what="X-ETD(n) fixed point")
    v_pi = true_values(mdp, pair.target)
    Phi = features.matrix
    value_error = float(np.linalg.norm(Phi @ w_inf - v_pi))
    weight = d * f_star
    gram = Phi.T @ (weight[:, None] * Phi)
    projected = Phi @ (np.linalg.pinv(gram) @ (Phi.T @ (weight * v_pi)))
    projection_error = float(np.sqrt(np.sum(weight * (projected - v_pi) ** 2)))
    return Suboptimality(error_norm, value_error, projection_error)


# -- reports -----------------------------------------------------------------------


def key_matrix(algorithm, mdp, pair, n, config: LearnerConfig | None = None, f_vector=None):
    """``(K, c)`` with ``A = Phi^T K Phi`` and ``b = Phi^T c`` for ``algorithm``.

    ``f_vector`` overrides the emphasis used by ``xetd_n`` (default: exact).
    """
    config = config or LearnerConfig(n=n)
    d = stationary_distribution(mdp, pair.behavior)
    if algorithm == "td_n":
        return _emphatic_key(mdp, pair, np.ones(mdp.num_states), n, d)
    if algorithm in ("etd_n", "xetd_n"):
        if f_vector is None or algorithm == "etd_n":
            f_vector = expected_emphasis(mdp, pair, n, d_mu=d)
        return _emphatic_key(mdp, pair, f_vector, n, d)
    if algorithm == "vtrace":
        return _vtrace_key(mdp, pair, n, config.rho_bar, config.c_bar, d)
    if algorithm == "reversed_td":
        return _reversed_key(mdp, pair, n, config.rho_bar, 0.0, d)
    if algorithm == "reversed_td_mc":
        return _reversed_key(mdp, pair, n, config.rho_bar, config.beta, d)
    raise ValueError(f"unknown algorithm {algorithm!r}")


def stability_report(
    algorithm: str,
    mdp: TabularMdp,
    pair: PolicyPair,
    features: FeatureMap,
    config: LearnerConfig | None = None,
    f_vector=None,
) -> StabilityReport:
    config = config or LearnerConfig()
    n = config.n
    K, c = key_matrix(algorithm, mdp, pair, n, config, f_vector)
    A, b = _project(features, K, c)
    pd, lam = is_positive_definite(A)
    basis = features.row_space_basis()
    span_pd, span_lam = is_positive_definite(basis.T @ A @ basis)
    key_pd, key_lam = is_positive_definite(K)
    try:
        fixed_point = solve_on_subspace(A, b, basis, what=f"{algorithm} fixed point")
    except SingularSystemError:
        fixed_point = None
    report = StabilityReport(
        algorithm=algorithm,
        A=A,
        b=b,
        pd=pd,
        min_sym_eig=lam,
        fixed_point=fixed_point,
        thresholds=thresholds(mdp, pair, features, n),
        feature_rank=basis.shape[1],
        num_features=features.num_features,
        span_pd=span_pd,
        span_min_sym_eig=span_lam,
        key_pd=key_pd,
        key_min_sym_eig=key_lam,
    )
    if algorithm == "reversed_td" and config.rho_bar != math.inf:
        tau = report.thresholds.tau
        rel = "<" if config.rho_bar < tau else ">="
        report.notes.append(f"clipping at rho_bar = {config.rho_bar:.6g} {rel} tau = {tau:.6g}")
    if algorithm == "reversed_td_mc":
        xi = report.thresholds.xi
        rel = ">" if config.beta > xi else "<="
        report.notes.append(f"Monte Carlo weight beta = {config.beta:.6g} {rel} xi = {xi:.6g}")
    if not span_pd:
        report.notes.append("not PD on the feature span: this update is not stable in general "
                            "for this problem (PD is sufficient, not necessary)")
    return report

