"""Seeded experiment runs, hyperparameter sweeps and stability analysis."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import ConfigError
from ..learners import LearnerConfig
from ..mdp import Problem, sample_state, sample_stream_arrays
from ..oracle import GroundTruth, ground_truth
from ..stability import StabilityReport, stability_report
from .config import ALPHA_GRID, BETA_GRID, ExperimentConfig, resolve_problem
from .engine import ROW_FIELDS, RunSpec, run_compiled, run_reference


@dataclass(frozen=True, eq=False)
class RunRecord:
    """Evaluation rows of one seeded run; columns are :data:`ROW_FIELDS`.

    ``weights`` and ``emphasis_weights`` hold the final ``w`` and ``theta``
    when the record comes from a run (not from a parsed CSV).
    """

    algo: str
    seed: int
    rows: np.ndarray
    diverged: bool = False
    saturated: bool = False
    weights: np.ndarray | None = None
    emphasis_weights: np.ndarray | None = None

    @property
    def steps(self) -> np.ndarray:
        return self.rows[:, 0].astype(np.int64)

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, ROW_FIELDS.index(name)]

    @property
    def final(self) -> np.ndarray:
        return self.rows[-1]


def run_spec(config: ExperimentConfig) -> RunSpec:
    lc = config.learner
    return RunSpec(
        algorithm=config.algorithm,
        emphasis_source=config.emphasis_source,
        n=lc.n,
        alpha_w=lc.alpha_w,
        alpha_theta=lc.alpha_theta,
        beta=lc.beta,
        rho_bar=lc.rho_bar,
        c_bar=lc.c_bar,
        value_rho_clip=lc.value_rho_clip,
        schedule_t0=config.schedule_t0 if config.schedule == "decaying" else 0.0,
        schedule_offset=config.schedule_offset,
        total_steps=config.total_steps,
        eval_every=config.eval_every,
    )


def _initial_weights(config: ExperimentConfig, problem: Problem):
    k = problem.features.num_features
    w0 = np.ones(k) if config.w_init is None else np.asarray(config.w_init, dtype=float)
    theta0 = np.zeros(k) if config.theta_init is None else np.asarray(config.theta_init, dtype=float)
    if w0.shape != (k,) or theta0.shape != (k,):
        raise ConfigError(f"w_init and theta_init need {k} entries")
    return w0, theta0


def _run_inputs(config: ExperimentConfig, problem: Problem, truth: GroundTruth, seed: int):
    """Behavior stream and replay indices for one seed.

    The seed is split into an environment stream and a replay stream. The
    start state is drawn from the behavior stationary distribution.
    """
    spec = run_spec(config)
    env_ss, replay_ss = np.random.SeedSequence(seed).spawn(2)
    env_rng = np.random.default_rng(env_ss)
    replay_rng = np.random.default_rng(replay_ss)
    T = config.total_steps
    start = sample_state(truth.d_mu, env_rng)
    length = T + spec.n - 1 if T > 0 else 0
    stream = sample_stream_arrays(problem.mdp, problem.pair, start, env_rng, length)
    if config.setting == "sequential" or spec.sequential_only:
        replay_rng = None
    return spec, stream, replay_rng


def replay_indices(replay_rng, total_steps: int, capacity: int) -> np.ndarray:
    """Segment index sampled at every step from a FIFO buffer of ``capacity``.

    At step ``t`` the buffer holds segments ``t - size + 1 .. t``; one uniform
    draw per step matches :meth:`ReplayBuffer.sample_iid` with batch 1.
    """
    t = np.arange(total_steps)
    sizes = np.minimum(t + 1, capacity)
    return (t - sizes + 1) + replay_rng.integers(0, sizes)


def _one_run(config: ExperimentConfig, problem: Problem, truth: GroundTruth, run_index: int,
             engine: str) -> RunRecord:
    seed = config.seed_base + run_index
    spec, stream, replay_rng = _run_inputs(config, problem, truth, seed)
    w0, theta0 = _initial_weights(config, problem)
    Phi = problem.features.matrix
    if engine == "reference":
        rows, saturated, diverged_at, w, theta = run_reference(
            spec, problem.features, problem.features, stream, replay_rng, truth.f_star,
            truth.v_pi, truth.f_star, w0, theta0, config.buffer_capacity,
        )
    else:
        if replay_rng is None:
            idx = np.arange(config.total_steps)
        else:
            idx = replay_indices(replay_rng, config.total_steps, config.buffer_capacity)
        rows, saturated, diverged_at, w, theta = run_compiled(
            spec, Phi, Phi, stream, idx, truth.f_star, truth.v_pi, truth.f_star, w0, theta0
        )
    return RunRecord(config.algorithm, seed, rows, diverged=diverged_at >= 0,
                     saturated=bool(saturated), weights=w, emphasis_weights=theta)


def _run_chunk(args):
    config, problem, truth, indices, engine = args
    return [_one_run(config, problem, truth, i, engine) for i in indices]


def run_experiment(config: ExperimentConfig, workers: int = 1, engine: str = "fast") -> list[RunRecord]:
    """``num_runs`` seeded runs of ``config``, ordered by seed.

    ``engine="reference"`` runs the pure-Python learners instead of the
    compiled loop; results agree up to summation order.
    """
    if engine not in ("fast", "reference"):
        raise ConfigError(f"unknown engine {engine!r}")
    problem = resolve_problem(config.mdp_spec)
    truth = ground_truth(problem.mdp, problem.pair, config.learner.n)
    indices = list(range(config.num_runs))
    if workers <= 1 or config.num_runs == 1:
        return _run_chunk((config, problem, truth, indices, engine))
    chunks = [indices[i::workers] for i in range(workers)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = pool.map(_run_chunk, [(config, problem, truth, c, engine) for c in chunks if c])
        records = [r for part in parts for r in part]
    return sorted(records, key=lambda r: r.seed)


# -- sweeps --------------------------------------------------------------


def baird_grid(base: ExperimentConfig, alphas: Sequence[float] = ALPHA_GRID,
               betas: Sequence[float] = BETA_GRID) -> list[ExperimentConfig]:
    """Step-size grid for one algorithm.

    Algorithms with a learned emphasis get ``alpha_theta = alpha_w * beta``
    for every pair; the others only sweep ``alpha_w``.
    """
    grid = []
    for alpha in alphas:
        if base.algorithm == "xetd_n_mc" or (
            base.algorithm == "xetd_n" and base.emphasis_source == "learned"
        ):
            for ratio in betas:
                grid.append(base.with_learner(alpha_w=alpha, alpha_theta=alpha * ratio))
        else:
            grid.append(base.with_learner(alpha_w=alpha))
    return grid


@dataclass(frozen=True)
class SweepRow:
    algorithm: str
    alpha_w: float
    alpha_theta: float
    mc_beta: float
    final_mean_rmse_v: float
    final_std_rmse_v: float
    diverged_runs: int

    @property
    def ratio(self) -> float:
        return self.alpha_theta / self.alpha_w


@dataclass(frozen=True, eq=False)
class SweepResult:
    configs: list[ExperimentConfig]
    rows: list[SweepRow]
    records: list[list[RunRecord]] | None
    best: dict[str, int]

    def best_config(self, algorithm: str) -> ExperimentConfig:
        return self.configs[self.best[algorithm]]

    def best_records(self, algorithm: str) -> list[RunRecord]:
        if self.records is None:
            raise ValueError("records were not kept")
        return self.records[self.best[algorithm]]


def _summarize(config: ExperimentConfig, records: list[RunRecord]) -> SweepRow:
    finals = np.array([r.column("rmse_v")[-1] for r in records])
    finite = bool(np.all(np.isfinite(finals)))
    return SweepRow(
        algorithm=config.algorithm,
        alpha_w=config.learner.alpha_w,
        alpha_theta=config.learner.alpha_theta,
        mc_beta=config.learner.beta,
        final_mean_rmse_v=float(finals.mean()) if finite else math.inf,
        final_std_rmse_v=float(finals.std()) if finite else math.inf,
        diverged_runs=sum(r.diverged for r in records),
    )


def select_best(rows: Sequence[SweepRow]) -> dict[str, int]:
    """Index of the best row per algorithm by final mean value RMSE.

    Configurations with any non-finite final RMSE are excluded. Ties go to
    the larger ``alpha_w``, then the smaller emphasis step-size ratio.
    """
    best: dict[str, int] = {}
    key = {}
    for i, row in enumerate(rows):
        if not math.isfinite(row.final_mean_rmse_v):
            continue
        k = (row.final_mean_rmse_v, -row.alpha_w, row.ratio, row.mc_beta)
        if row.algorithm not in best or k < key[row.algorithm]:
            best[row.algorithm] = i
            key[row.algorithm] = k
    return best


def sweep(grid: Sequence[ExperimentConfig], workers: int = 1, keep_records: bool = True,
          engine: str = "fast") -> SweepResult:
    if not grid:
        raise ConfigError("sweep needs a non-empty grid")
    rows, kept = [], []
    for config in grid:
        records = run_experiment(config, workers=workers, engine=engine)
        rows.append(_summarize(config, records))
        if keep_records:
            kept.append(records)
    return SweepResult(list(grid), rows, kept if keep_records else None, select_best(rows))


# -- analysis ------------------------------------------------------------


def analyze(mdp_spec, algorithm: str, learner_config: LearnerConfig | None = None,
            emphasis_source: str = "oracle") -> list[StabilityReport]:
    """Stability reports for an algorithm on a problem.

    Algorithms with a learned emphasis get two reports: one for the value
    update driven by the exact expected emphasis and one for the emphasis
    learner itself.
    """
    problem = resolve_problem(mdp_spec)
    config = learner_config or LearnerConfig()
    mdp, pair, features = problem
    if algorithm in ("xetd_n", "xetd_n_mc"):
        reports = [stability_report("xetd_n", mdp, pair, features, config)]
        if emphasis_source == "learned" or algorithm == "xetd_n_mc":
            emph = "reversed_td_mc" if algorithm == "xetd_n_mc" else "reversed_td"
            reports.append(stability_report(emph, mdp, pair, features, config))
        return reports
    return [stability_report(algorithm, mdp, pair, features, config)]
