"""Deterministic discrete-event simulator of (a)synchronous distributed
optimization.

The simulator is single-threaded: it only decides WHICH snapshot each
worker computes on and at what virtual time each update lands at the
master.  The parameter trajectory is therefore exactly the serial
trajectory induced by that interleaving, and identical (cfg, seed) pairs
produce bit-identical traces.

Compute times are log-normal with the distribution's mean and standard
deviation given directly by (mu, sigma); communication costs tau per
message leg; the master is a serial FIFO resource charging mu_master per
applied update.
"""

from __future__ import annotations

import heapq
import math
import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DivergenceError
from .model import rmse as model_rmse
from .model import MatrixFactorizationModel, draw_subsample, potential
from .sampler import (
    MbLbfgsMaster,
    ParameterState,
    WorkerState,
    asgd_step,
    compute_update,
    master_apply,
    post_send_memory_update,
)


@dataclass
class SimConfig:
    """Timing parameters of the simulated cluster (generic base time units)."""

    workers: int = 1
    mu_master: float = 0.0
    mu_worker: float = 1.0
    sigma_worker: float = 0.0
    comm_time: float = 0.0
    timeout: float = math.inf  # synchronous-round timeout, mb-L-BFGS only
    max_updates: int = 1000
    max_time: float = math.inf
    seed: int = 0
    sample_every: int = 1
    per_worker_speed: bool = False  # draw one speed per worker instead of per iteration
    wait_for_stragglers: bool = True  # mb only; see run_sync_mb

    def __post_init__(self):
        if self.workers < 1:
            raise ConfigError(f"need at least one worker, got {self.workers}")
        if self.mu_master < 0 or self.mu_worker < 0 or self.comm_time < 0:
            raise ConfigError("times must be nonnegative")
        if self.sigma_worker < 0:
            raise ConfigError("sigma_worker must be nonnegative")
        if self.max_updates < 1 and math.isinf(self.max_time):
            raise ConfigError("horizon required: set max_updates or max_time")


@dataclass
class TraceRecord:
    time: float
    iteration: int
    staleness: int
    potential: float
    rmse: float | None = None


@dataclass
class SimResult:
    trace: list
    final_state: ParameterState
    staleness_log: list  # (iteration, staleness) for every applied update
    truncated: bool = False
    included_log: list = field(default_factory=list)  # workers aggregated per mb round

    @property
    def iterations(self) -> int:
        return self.final_state.iteration

    @property
    def max_staleness(self) -> int:
        return max((l for _, l in self.staleness_log), default=0)

    @property
    def final_time(self) -> float:
        return self.trace[-1].time if self.trace else 0.0


def sample_compute_time(rng, mu: float, sigma: float) -> float:
    """Log-normal draw with mean mu and standard deviation sigma."""
    if mu < 0:
        raise ValueError(f"mu must be nonnegative, got {mu}")
    if mu == 0.0:
        return 0.0
    if sigma == 0.0:
        return float(mu)
    s2 = math.log(1.0 + (sigma / mu) ** 2)
    m = math.log(mu) - 0.5 * s2
    return float(rng.lognormal(mean=m, sigma=math.sqrt(s2)))


def _record(trace, model, state, time, staleness, include_rmse):
    trace.append(
        TraceRecord(
            time=time,
            iteration=state.iteration,
            staleness=staleness,
            potential=potential(model, state.theta),
            rmse=model_rmse(model, state.theta) if include_rmse else None,
        )
    )


def run_async(sim_cfg: SimConfig, sampler_cfg, model, algo="as-lbfgs", theta0=None) -> SimResult:
    """Event loop for the asynchronous algorithms (as-L-BFGS and a-SGD).

    Each worker cycles receive -> compute -> send; the master serializes
    applies FIFO by arrival with the (time, worker, sequence) tie-break.
    A worker gets its fresh snapshot only in reply to its own send, so its
    staleness accrues from the other workers' applies in between.
    """
    if algo not in ("as-lbfgs", "a-sgd"):
        raise ConfigError(f"unknown asynchronous algorithm {algo!r}")
    dim = model.dim
    state = ParameterState.zeros(dim)
    if theta0 is not None:
        state.theta = np.asarray(theta0, dtype=float).copy()
    include_rmse = isinstance(model, MatrixFactorizationModel)

    time_rngs = [np.random.default_rng((sim_cfg.seed, w, 1)) for w in range(sim_cfg.workers)]
    samp_rngs = [np.random.default_rng(sim_cfg.seed + w) for w in range(sim_cfg.workers)]
    speeds = None
    if sim_cfg.per_worker_speed:
        speeds = [
            sample_compute_time(time_rngs[w], sim_cfg.mu_worker, sim_cfg.sigma_worker)
            for w in range(sim_cfg.workers)
        ]
    workers = [WorkerState(sampler_cfg, dim) for _ in range(sim_cfg.workers)]

    trace: list = []
    staleness_log: list = []
    _record(trace, model, state, 0.0, 0, include_rmse)

    # heap entries: (time, worker, seq, kind, payload)
    heap: list = []
    seq = 0
    master_busy_until = 0.0
    queue: deque = deque()

    def push(time, worker, kind, payload):
        nonlocal seq
        heapq.heappush(heap, (time, worker, seq, kind, payload))
        seq += 1

    for w in range(sim_cfg.workers):
        push(sim_cfg.comm_time, w, "receive", state.copy())

    truncated = False
    while heap:
        t, w, _, kind, payload = heapq.heappop(heap)
        if t > sim_cfg.max_time:
            truncated = True
            break
        if kind == "receive":
            snapshot = payload
            if sim_cfg.per_worker_speed:
                c = speeds[w]
            else:
                c = sample_compute_time(time_rngs[w], sim_cfg.mu_worker, sim_cfg.sigma_worker)
            if algo == "as-lbfgs":
                upd, ctx = compute_update(sampler_cfg, workers[w], snapshot, model, samp_rngs[w])
                post_send_memory_update(workers[w], ctx, model)
            else:
                sub = draw_subsample(
                    samp_rngs[w], model.n_records, sampler_cfg.n_s, sampler_cfg.n_o
                )
                upd = asgd_step(snapshot.theta, sampler_cfg.step, model, sub.combined)
            push(t + c + sim_cfg.comm_time, w, "arrive", (upd, snapshot.iteration))
        elif kind == "arrive":
            queue.append((w, payload))
            # master drains its FIFO queue immediately; service is serial.
            start = max(t, master_busy_until)
            while queue:
                ww, (upd, n_read) = queue.popleft()
                upd.staleness = state.iteration - n_read
                state = master_apply(state, upd)
                staleness_log.append((state.iteration, upd.staleness))
                done = start + sim_cfg.mu_master
                if state.iteration % sim_cfg.sample_every == 0:
                    _record(trace, model, state, done, upd.staleness, include_rmse)
                push(done + sim_cfg.comm_time, ww, "receive", state.copy())
                start = done
            master_busy_until = start
            if state.iteration >= sim_cfg.max_updates:
                break
    else:
        truncated = bool(math.isfinite(sim_cfg.max_time))

    if trace[-1].iteration != state.iteration:
        _record(
            trace, model, state, master_busy_until, staleness_log[-1][1] if staleness_log else 0,
            include_rmse,
        )
    return SimResult(trace=trace, final_state=state, staleness_log=staleness_log,
                     truncated=truncated)


def run_sync_mb(sim_cfg: SimConfig, mb_master: MbLbfgsMaster, sampler_cfg, model,
                theta0=None) -> SimResult:
    """Synchronous multi-batch rounds.

    Per round the master broadcasts theta (tau), each worker draws a
    compute time and a subsample, and only gradients whose compute time is
    within the round timeout are aggregated; stragglers' work is discarded.

    With ``wait_for_stragglers`` (default) the next broadcast waits for the
    whole cohort, so round wall time is max(compute) + mu_master + 2*tau;
    otherwise the round closes at the timeout and the wall time is
    min(timeout, max compute) + mu_master + 2*tau.
    """
    if not math.isfinite(sim_cfg.timeout):
        raise ConfigError("run_sync_mb requires a finite timeout")
    dim = model.dim
    theta = np.zeros(dim) if theta0 is None else np.asarray(theta0, dtype=float).copy()
    include_rmse = isinstance(model, MatrixFactorizationModel)
    time_rngs = [np.random.default_rng((sim_cfg.seed, w, 1)) for w in range(sim_cfg.workers)]
    samp_rngs = [np.random.default_rng(sim_cfg.seed + w) for w in range(sim_cfg.workers)]

    trace: list = []
    staleness_log: list = []
    state = ParameterState(theta=theta, u=np.zeros(dim), iteration=0)
    _record(trace, model, state, 0.0, 0, include_rmse)

    t = 0.0
    n = 0
    truncated = False
    included_log: list = []
    from .model import combined_gradient

    while n < sim_cfg.max_updates:
        if t > sim_cfg.max_time:
            truncated = True
            break
        times = [
            sample_compute_time(time_rngs[w], sim_cfg.mu_worker, sim_cfg.sigma_worker)
            for w in range(sim_cfg.workers)
        ]
        grads = []
        overlap: list = []
        for w, c in enumerate(times):
            sub = draw_subsample(samp_rngs[w], model.n_records, sampler_cfg.n_s, sampler_cfg.n_o)
            if c <= sim_cfg.timeout:
                grads.append(combined_gradient(model, state.theta, sub))
                overlap.extend(sub.o_indices.tolist())
        included_log.append(len(grads))
        if sim_cfg.wait_for_stragglers:
            wait = max(times)
        else:
            wait = min(sim_cfg.timeout, max(times))
        if not grads:
            t += 2 * sim_cfg.comm_time + wait
            continue
        theta = mb_master.round(state.theta, grads, overlap, model)
        t += 2 * sim_cfg.comm_time + wait + sim_cfg.mu_master
        n += 1
        state = ParameterState(theta=theta, u=state.u, iteration=n)
        staleness_log.append((n, 0))
        if n % sim_cfg.sample_every == 0:
            _record(trace, model, state, t, 0, include_rmse)

    if trace[-1].iteration != state.iteration:
        _record(trace, model, state, t, 0, include_rmse)
    return SimResult(trace=trace, final_state=state, staleness_log=staleness_log,
                     truncated=truncated, included_log=included_log)


def time_to_epsilon(trace, u_star: float, eps: float):
    """First virtual time at which (U - U*)/U* <= eps, or None.

    When U* = 0 the relative criterion is undefined; falls back to the
    absolute criterion U <= eps with a warning."""
    if u_star == 0.0:
        warnings.warn("U* is zero; using absolute criterion U <= eps", stacklevel=2)
        for rec in trace:
            if rec.potential <= eps:
                return rec.time
        return None
    for rec in trace:
        if (rec.potential - u_star) / u_star <= eps:
            return rec.time
    return None


def write_trace_csv(trace, path):
    """CSV trace: header time,n,staleness,potential[,rmse], 12 significant
    digits, '.' decimal separator."""
    with_rmse = any(rec.rmse is not None for rec in trace)
    with open(path, "w") as fh:
        fh.write("time,n,staleness,potential,rmse\n" if with_rmse
                 else "time,n,staleness,potential\n")
        for rec in trace:
            row = f"{rec.time:.12g},{rec.iteration},{rec.staleness},{rec.potential:.12g}"
            if with_rmse:
                row += f",{rec.rmse:.12g}"
            fh.write(row + "\n")
