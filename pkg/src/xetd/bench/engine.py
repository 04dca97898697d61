"""Run loops: a compiled kernel for sweeps and a reference loop over the learners.

Both engines consume the same pre-simulated behavior stream and the same
replay indices, so for equal seeds they produce the same trajectories up to
floating-point summation order inside dot products.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from ..learners import (
    TRACE_CAP,
    FollowonState,
    LearnerConfig,
    LinearFunction,
    etd_n_update,
    followon_advance,
    reversed_td_clipped_update,
    reversed_td_mc_update,
    reversed_td_update,
    td_n_update,
    vtrace_update,
    xetd_n_update,
)
from ..mdp import FeatureMap, StreamArrays
from ..replay import ReplayBuffer, segment_stream

ALGORITHMS = ("td_n", "etd_n", "vtrace", "xetd_n", "xetd_n_mc")
EMPHASIS_SOURCES = ("learned", "oracle", "monte_carlo")
DIVERGENCE_LIMIT = 1e100

_ALGO_CODE = {name: i for i, name in enumerate(ALGORITHMS)}
_SOURCE_CODE = {name: i for i, name in enumerate(EMPHASIS_SOURCES)}

#: Columns of a run's evaluation table.
ROW_FIELDS = ("step", "rmse_v", "rmse_f", "weight_norm", "emphasis_norm")


@dataclass(frozen=True)
class RunSpec:
    """Everything one run needs besides its stream, in kernel-ready form."""

    algorithm: str
    emphasis_source: str
    n: int
    alpha_w: float
    alpha_theta: float
    beta: float
    rho_bar: float
    c_bar: float
    value_rho_clip: float
    schedule_t0: float
    schedule_offset: int
    total_steps: int
    eval_every: int

    @property
    def uses_trace(self) -> bool:
        return self.algorithm in ("etd_n", "xetd_n_mc") or (
            self.algorithm == "xetd_n" and self.emphasis_source == "monte_carlo"
        )

    @property
    def learns_emphasis(self) -> bool:
        return self.algorithm == "xetd_n_mc" or (
            self.algorithm == "xetd_n" and self.emphasis_source == "learned"
        )

    @property
    def sequential_only(self) -> bool:
        # the Monte Carlo trace only exists along the online stream
        return self.algorithm == "etd_n" or (
            self.algorithm == "xetd_n" and self.emphasis_source == "monte_carlo"
        )


@numba.njit(cache=True)
def _dot(w, row):
    acc = 0.0
    for i in range(w.shape[0]):
        acc += w[i] * row[i]
    return acc


@numba.njit(cache=True)
def _eval_row(out, r, step, phi, phi_f, w, theta, v_true, f_true, f_mode, f_fixed, sum_f, cnt_f):
    num_states = phi.shape[0]
    sv = 0.0
    sf = 0.0
    ef = 0.0
    for s in range(num_states):
        dv = _dot(w, phi[s]) - v_true[s]
        sv += dv * dv
        if f_mode == 0:
            fs = _dot(theta, phi_f[s])
        elif f_mode == 1:
            fs = f_fixed[s]
        elif f_mode == 2:
            fs = sum_f[s] / cnt_f[s] if cnt_f[s] > 0 else 1.0
        else:
            fs = 1.0
        df = fs - f_true[s]
        sf += df * df
        ef += fs * fs
    out[r, 0] = step
    out[r, 1] = math.sqrt(sv / num_states)
    out[r, 2] = math.sqrt(sf / num_states)
    out[r, 3] = math.sqrt(_dot(w, w))
    out[r, 4] = math.sqrt(ef)


@numba.njit(cache=True)
def _run_kernel(
    phi, phi_f, states, rewards, next_states, rho, gamma_next, sample_idx,
    algo, source, n, alpha_w, alpha_theta, beta, rho_bar, c_bar, value_clip,
    f_fixed, v_true, f_true, w0, theta0, schedule_t0, schedule_offset, total_steps, eval_every,
):
    num_states = phi.shape[0]
    k_w = phi.shape[1]
    k_f = phi_f.shape[1]
    w = w0.copy()
    theta = theta0.copy()
    uses_trace = algo == 1 or algo == 4 or (algo == 3 and source == 2)
    learned = algo == 4 or (algo == 3 and source == 0)
    clip_value = algo >= 3 and value_clip < np.inf
    # rmse_f reference: 0 learned, 1 fixed oracle, 2 running trace mean, 3 constant one
    if learned:
        f_mode = 0
    elif algo == 3 and source == 1:
        f_mode = 1
    elif uses_trace:
        f_mode = 2
    else:
        f_mode = 3
    trace = np.ones(max(total_steps, 1))
    sum_f = np.zeros(num_states)
    cnt_f = np.zeros(num_states)
    num_rows = total_steps // eval_every + 1
    out = np.empty((num_rows, 5))
    _eval_row(out, 0, 0.0, phi, phi_f, w, theta, v_true, f_true, f_mode, f_fixed, sum_f, cnt_f)
    saturated = False
    diverged_at = -1
    next_w = np.empty(k_w)
    next_theta = np.empty(k_f)
    for t in range(total_steps):
        if schedule_t0 > 0:
            decay = 1.0 + (t + schedule_offset) / schedule_t0
            a_w = alpha_w / decay
            a_th = alpha_theta / decay
        else:
            a_w = alpha_w
            a_th = alpha_theta
        F = 1.0
        if uses_trace:
            if t >= n:
                prod = 1.0
                for i in range(t - n, t):
                    prod *= rho[i] * gamma_next[i]
                F = prod * trace[t - n] + 1.0
                if not F <= TRACE_CAP:
                    F = TRACE_CAP
                    saturated = True
            trace[t] = F
            sum_f[states[t]] += F
            cnt_f[states[t]] += 1.0
        j = sample_idx[t]
        s0 = states[j]
        total = 0.0
        coef = 1.0
        for k in range(n):
            i = j + k
            rk = rho[i]
            if algo == 2:
                trr = min(rk, c_bar)
                tdr = min(rk, rho_bar)
            elif clip_value:
                trr = min(rk, value_clip)
                tdr = trr
            else:
                trr = rk
                tdr = rk
            delta = rewards[i] + gamma_next[i] * _dot(w, phi[next_states[i]]) - _dot(w, phi[states[i]])
            total += coef * tdr * delta
            coef *= gamma_next[i] * trr
        if algo == 1:
            emphasis = F
        elif algo == 3 and source == 1:
            emphasis = f_fixed[s0]
        elif algo == 3 and source == 2:
            emphasis = F
        elif learned:
            emphasis = _dot(theta, phi_f[s0])
        else:
            emphasis = 1.0
        scale = a_w * emphasis * total
        if learned:
            prod = 1.0
            for k in range(n):
                prod *= gamma_next[j + k] * min(rho[j + k], rho_bar)
            sn = next_states[j + n - 1]
            err = prod * _dot(theta, phi_f[s0]) + 1.0 - _dot(theta, phi_f[sn])
            td_scale = a_th * err
            if algo == 4:
                st = states[t]
                mc_scale = a_th * beta * (F - _dot(theta, phi_f[st]))
                for i in range(k_f):
                    next_theta[i] = theta[i] + td_scale * phi_f[sn, i] + mc_scale * phi_f[st, i]
            else:
                for i in range(k_f):
                    next_theta[i] = theta[i] + td_scale * phi_f[sn, i]
            theta[:] = next_theta
        for i in range(k_w):
            next_w[i] = w[i] + scale * phi[s0, i]
        w[:] = next_w
        bad = False
        for i in range(k_w):
            if not abs(w[i]) <= DIVERGENCE_LIMIT:
                bad = True
        for i in range(k_f):
            if not abs(theta[i]) <= DIVERGENCE_LIMIT:
                bad = True
        if bad:
            diverged_at = t + 1
            break
        if (t + 1) % eval_every == 0:
            r = (t + 1) // eval_every
            _eval_row(out, r, t + 1.0, phi, phi_f, w, theta, v_true, f_true,
                      f_mode, f_fixed, sum_f, cnt_f)
    if diverged_at >= 0:
        first = (diverged_at + eval_every - 1) // eval_every
        for r in range(first, num_rows):
            out[r, 0] = r * eval_every
            for c in range(1, 5):
                out[r, c] = np.inf
    return out, saturated, diverged_at, w, theta


def _as_float_array(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def run_compiled(spec: RunSpec, phi, phi_f, stream: StreamArrays, sample_idx, f_fixed,
                 v_true, f_true, w0, theta0):
    """Execute one run with the compiled kernel.

    Returns ``(rows, saturated, diverged_at, w, theta)`` with the final weights.
    """
    return _run_kernel(
        _as_float_array(phi), _as_float_array(phi_f),
        np.ascontiguousarray(stream.states, dtype=np.int64),
        _as_float_array(stream.rewards),
        np.ascontiguousarray(stream.next_states, dtype=np.int64),
        _as_float_array(stream.rho), _as_float_array(stream.gamma_next),
        np.ascontiguousarray(sample_idx, dtype=np.int64),
        _ALGO_CODE[spec.algorithm], _SOURCE_CODE[spec.emphasis_source], spec.n,
        spec.alpha_w, spec.alpha_theta, spec.beta, spec.rho_bar, spec.c_bar, spec.value_rho_clip,
        _as_float_array(f_fixed), _as_float_array(v_true), _as_float_array(f_true),
        _as_float_array(w0), _as_float_array(theta0), float(spec.schedule_t0), int(spec.schedule_offset),
        spec.total_steps, spec.eval_every,
    )


def _metrics(step, v, f_values, v_true, f_true):
    return (
        float(step),
        float(np.sqrt(np.mean((v.values() - v_true) ** 2))),
        float(np.sqrt(np.mean((f_values - f_true) ** 2))),
        float(np.linalg.norm(v.weights)),
        float(np.linalg.norm(f_values)),
    )


def run_reference(spec: RunSpec, features, emphasis_features, stream: StreamArrays, replay_rng,
                  f_fixed, v_true, f_true, w0, theta0, capacity):
    """Pure-Python run built from the update functions and a ReplayBuffer.

    ``replay_rng`` must be in the same state the compiled engine used to draw
    its indices; pass ``None`` for a sequential run.
    """
    n = spec.n
    segments = segment_stream(stream.transitions(), n) if spec.total_steps else []
    buffer = ReplayBuffer(capacity, n, replay_rng) if replay_rng is not None else None
    v = LinearFunction(w0, features)
    f = LinearFunction(theta0, emphasis_features)
    trace_state = FollowonState(n)
    vtrace_config = LearnerConfig(n=n, rho_bar=spec.rho_bar, c_bar=spec.c_bar)
    fixed = LinearFunction(np.asarray(f_fixed, dtype=float), FeatureMap.tabular(features.num_states))
    sum_f = np.zeros(features.num_states)
    cnt_f = np.zeros(features.num_states)

    def emphasis_values():
        if spec.learns_emphasis:
            return f.values()
        if spec.algorithm == "xetd_n" and spec.emphasis_source == "oracle":
            return np.asarray(f_fixed, dtype=float)
        if spec.uses_trace:
            return np.divide(sum_f, cnt_f, out=np.ones_like(sum_f), where=cnt_f > 0)
        return np.ones(features.num_states)

    rows = [_metrics(0, v, emphasis_values(), v_true, f_true)]
    saturated = False
    diverged_at = -1
    for t in range(spec.total_steps):
        decay = 1.0 + (t + spec.schedule_offset) / spec.schedule_t0 if spec.schedule_t0 > 0 else 1.0
        a_w = spec.alpha_w / decay if spec.schedule_t0 > 0 else spec.alpha_w
        a_th = spec.alpha_theta / decay if spec.schedule_t0 > 0 else spec.alpha_theta
        online = segments[t]
        F = trace_state.current
        if spec.uses_trace:
            sum_f[online.first_state] += F
            cnt_f[online.first_state] += 1.0
        if buffer is not None and not spec.sequential_only:
            buffer.push(online)
            seg = buffer.sample_iid(1)[0]
        else:
            seg = online
        if spec.algorithm == "td_n":
            new_v = td_n_update(seg, v, a_w)
        elif spec.algorithm == "vtrace":
            new_v = vtrace_update(seg, v, vtrace_config, a_w)
        elif spec.algorithm == "etd_n" or spec.emphasis_source == "monte_carlo":
            new_v = etd_n_update(seg, v, F, a_w)
        elif spec.emphasis_source == "oracle" and spec.algorithm == "xetd_n":
            new_v = xetd_n_update(seg, v, fixed, a_w, spec.value_rho_clip)
        else:
            new_v = xetd_n_update(seg, v, f, a_w, spec.value_rho_clip)
        if spec.algorithm == "xetd_n_mc":
            f = reversed_td_mc_update(seg, (online.first_state, F), f, a_th, spec.beta, spec.rho_bar)
        elif spec.learns_emphasis:
            if spec.rho_bar == math.inf:
                f = reversed_td_update(seg, f, a_th)
            else:
                f = reversed_td_clipped_update(seg, f, a_th, spec.rho_bar)
        v = new_v
        tr = online.transitions[0]
        followon_advance(trace_state, tr.rho * tr.gamma_next)
        saturated = saturated or trace_state.saturated
        if not (np.all(np.abs(v.weights) <= DIVERGENCE_LIMIT)
                and np.all(np.abs(f.weights) <= DIVERGENCE_LIMIT)):
            diverged_at = t + 1
            break
        if (t + 1) % spec.eval_every == 0:
            rows.append(_metrics(t + 1, v, emphasis_values(), v_true, f_true))
    num_rows = spec.total_steps // spec.eval_every + 1
    while len(rows) < num_rows:
        rows.append((float(len(rows) * spec.eval_every),) + (math.inf,) * 4)
    return np.array(rows), saturated, diverged_at, np.array(v.weights), np.array(f.weights)

