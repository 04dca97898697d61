"""Experiment configuration and the TOML file format.

A config file has the sections ``[mdp]``, ``[policies]``, ``[features]``,
``[learner]`` and ``[experiment]``, plus an optional ``[sweep]``::

    [mdp]
    builtin = "baird_modified"      # or: transition, reward, discount tables

    [learner]
    n = 1
    alpha_w = 0.0078125
    alpha_theta = 0.0078125

    [experiment]
    algorithm = "xetd_n"
    total_steps = 200000
    num_runs = 100

``[policies]`` (``target``/``behavior`` as ``S x A`` tables) and
``[features]`` (``matrix`` or ``tabular = true``) are required unless the
MDP is builtin. ``[sweep]`` takes ``alpha_w`` and ``beta`` lists; without
them the default grid is used.
"""

from __future__ import annotations

import dataclasses
import math
import sys
from dataclasses import dataclass, field

import numpy as np

from ..baird import baird_modified
from ..errors import ConfigError, OutputError
from ..learners import LearnerConfig
from ..mdp import FeatureMap, PolicyPair, Problem, TabularMdp, TabularPolicy
from .engine import ALGORITHMS, EMPHASIS_SOURCES

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

BUILTINS = {"baird_modified": baird_modified}
SETTINGS = ("iid", "sequential")
SCHEDULES = ("constant", "decaying")

#: Step sizes 2^-6 .. 2^-14 and emphasis step-size ratios of the Baird sweep.
ALPHA_GRID = tuple(2.0**i for i in range(-6, -15, -1))
BETA_GRID = (0.0005, 0.001, 0.005, 0.01, 0.05, 0.1, 0.5, 1.0, 2.0, 5.0)


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: a problem, a learner, and how many seeded runs to make.

    ``mdp_spec`` is a builtin name, a path to a config file, or an already
    built :class:`~xetd.mdp.Problem`. Run ``i`` uses the seed
    ``seed_base + i``. ``schedule = "decaying"`` scales both step sizes by
    ``1 / (1 + (t + schedule_offset) / schedule_t0)``; a nonzero offset resumes
    a schedule part-way, e.g. to continue from ``w_init`` in chunks.
    """

    mdp_spec: object = "baird_modified"
    algorithm: str = "xetd_n"
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    total_steps: int = 200_000
    num_runs: int = 100
    seed_base: int = 0
    eval_every: int = 100
    emphasis_source: str = "learned"
    setting: str = "iid"
    buffer_capacity: int = 10_000
    schedule: str = "constant"
    schedule_t0: float = 1e4
    schedule_offset: int = 0
    w_init: tuple | None = None
    theta_init: tuple | None = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if self.emphasis_source not in EMPHASIS_SOURCES:
            raise ConfigError(f"unknown emphasis_source {self.emphasis_source!r}")
        if self.setting not in SETTINGS:
            raise ConfigError(f"unknown setting {self.setting!r}; expected one of {SETTINGS}")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"unknown schedule {self.schedule!r}; expected one of {SCHEDULES}")
        if not isinstance(self.learner, LearnerConfig):
            raise ConfigError("learner must be a LearnerConfig")
        for name in ("total_steps", "num_runs", "eval_every", "buffer_capacity", "seed_base",
                     "schedule_offset"):
            if not isinstance(getattr(self, name), (int, np.integer)):
                raise ConfigError(f"{name} must be an integer")
        if self.num_runs < 1:
            raise ConfigError("num_runs must be >= 1")
        if self.total_steps < 0:
            raise ConfigError("total_steps must be >= 0")
        if self.eval_every < 1 or self.total_steps % self.eval_every:
            raise ConfigError(
                f"eval_every={self.eval_every} must be >= 1 and divide total_steps={self.total_steps}"
            )
        if self.buffer_capacity < 1:
            raise ConfigError("buffer_capacity must be >= 1")
        if self.seed_base < 0 or self.schedule_offset < 0:
            raise ConfigError("seed_base and schedule_offset must be >= 0")
        if self.schedule == "decaying" and not self.schedule_t0 > 0:
            raise ConfigError("schedule_t0 must be > 0")

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def with_learner(self, **changes) -> "ExperimentConfig":
        try:
            learner = dataclasses.replace(self.learner, **changes)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self.replace(learner=learner)


def resolve_problem(mdp_spec) -> Problem:
    if isinstance(mdp_spec, Problem):
        return mdp_spec
    if isinstance(mdp_spec, str) and mdp_spec in BUILTINS:
        return BUILTINS[mdp_spec]()
    if isinstance(mdp_spec, str):
        return load_problem(read_toml(mdp_spec))
    raise ConfigError(f"cannot interpret mdp_spec {mdp_spec!r}")


def read_toml(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise OutputError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _section(doc: dict, name: str, required: bool = True) -> dict:
    sec = doc.get(name)
    if sec is None:
        if required:
            raise ConfigError(f"missing [{name}] section")
        return {}
    if not isinstance(sec, dict):
        raise ConfigError(f"[{name}] must be a table")
    return sec


def _array(sec: dict, key: str, where: str):
    if key not in sec:
        raise ConfigError(f"[{where}] needs {key!r}")
    try:
        return np.asarray(sec[key], dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}] {key!r} is not a rectangular numeric table") from exc


def load_problem(doc: dict) -> Problem:
    """Build the problem described by the ``[mdp]``/``[policies]``/``[features]`` tables."""
    mdp_sec = _section(doc, "mdp")
    builtin = mdp_sec.get("builtin")
    try:
        if builtin is not None:
            if builtin not in BUILTINS:
                raise ConfigError(f"unknown builtin MDP {builtin!r}; known: {sorted(BUILTINS)}")
            return BUILTINS[builtin]()
        mdp = TabularMdp(
            _array(mdp_sec, "transition", "mdp"),
            _array(mdp_sec, "reward", "mdp"),
            _array(mdp_sec, "discount", "mdp"),
        )
        pol = _section(doc, "policies")
        pair = PolicyPair(
            TabularPolicy(_array(pol, "target", "policies")),
            TabularPolicy(_array(pol, "behavior", "policies")),
        )
        feat = _section(doc, "features")
        if feat.get("tabular"):
            features = FeatureMap.tabular(mdp.num_states)
        else:
            features = FeatureMap(_array(feat, "matrix", "features"))
        if features.num_states != mdp.num_states:
            raise ConfigError(
                f"feature matrix has {features.num_states} rows for {mdp.num_states} states"
            )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return Problem(mdp, pair, features)


_LEARNER_KEYS = {f.name for f in dataclasses.fields(LearnerConfig)}
_EXPERIMENT_KEYS = {f.name for f in dataclasses.fields(ExperimentConfig)} - {"mdp_spec", "learner"}


def _number(value):
    # TOML has no inf literal other than `inf`, which tomllib already parses
    return float(value) if isinstance(value, (int, float)) and not isinstance(value, bool) else value


def load_config(path) -> ExperimentConfig:
    """Parse a config file into an :class:`ExperimentConfig` with a built problem."""
    doc = read_toml(path)
    return config_from_dict(doc)


def config_from_dict(doc: dict) -> ExperimentConfig:
    problem = load_problem(doc)
    learner_sec = _section(doc, "learner", required=False)
    unknown = set(learner_sec) - _LEARNER_KEYS
    if unknown:
        raise ConfigError(f"unknown [learner] keys: {sorted(unknown)}")
    exp_sec = dict(_section(doc, "experiment", required=False))
    unknown = set(exp_sec) - _EXPERIMENT_KEYS
    if unknown:
        raise ConfigError(f"unknown [experiment] keys: {sorted(unknown)}")
    learner_kwargs = {k: (v if k == "n" else _number(v)) for k, v in learner_sec.items()}
    try:
        learner = LearnerConfig(**learner_kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[learner]: {exc}") from exc
    for key in ("w_init", "theta_init"):
        if key in exp_sec:
            exp_sec[key] = tuple(float(x) for x in exp_sec[key])
    try:
        return ExperimentConfig(mdp_spec=problem, learner=learner, **exp_sec)
    except TypeError as exc:
        raise ConfigError(f"[experiment]: {exc}") from exc


def sweep_axes(doc: dict) -> tuple[tuple[float, ...], tuple[float, ...]]:
    """``(alpha_w values, beta values)`` from ``[sweep]``, defaulting to the full grid."""
    sec = _section(doc, "sweep", required=False)
    alphas = tuple(float(a) for a in sec.get("alpha_w", ALPHA_GRID))
    betas = tuple(float(b) for b in sec.get("beta", BETA_GRID))
    if not alphas or not betas:
        raise ConfigError("[sweep] grids must be non-empty")
    if any(not (math.isfinite(x) and x > 0) for x in alphas + betas):
        raise ConfigError("[sweep] values must be finite and > 0")
    return alphas, betas
