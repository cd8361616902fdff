"""Update-vector mathematics for the asynchronous quasi-Newton sampler.

This module holds the per-worker computation (quasi-Newton momentum update
with tempered Gaussian noise), the master-side accumulation, the step-size
reparametrization, and the three baselines: SGLD, asynchronous SGD, and a
simplified synchronous multi-batch L-BFGS.

Every function is either pure or mutates only the worker-owned state it is
handed; serializing master applies is the caller's job.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DivergenceError
from .lbfgs import LbfgsMemory
from .model import Subsample, combined_gradient, draw_subsample, stochastic_gradient


@dataclass
class SamplerConfig:
    """Hyperparameters of one sampler run.

    ``step`` and ``friction`` are the reparametrized h' = h^2 and
    gamma' = h*gamma.  ``inv_temperature`` may be math.inf, which disables
    the injected noise and recovers deterministic optimization.
    """

    step: float
    friction: float
    inv_temperature: float = math.inf
    memory_size: int = 3
    n_s: int = 4
    n_o: int = 2
    epsilon: float = 1e-8
    rho: float = 0.0
    use_memory: bool = True

    def __post_init__(self):
        if self.step <= 0:
            raise ConfigError(f"step must be positive, got {self.step}")
        if not 0.0 < self.friction < 1.0:
            raise ConfigError(f"friction must lie in (0, 1), got {self.friction}")
        if self.inv_temperature <= 0:
            raise ConfigError(f"inverse temperature must be positive, got {self.inv_temperature}")

    def noise_scale(self) -> float:
        if math.isinf(self.inv_temperature):
            return 0.0
        return math.sqrt(2.0 * self.step * self.friction / self.inv_temperature)


@dataclass
class ParameterState:
    """The master's iterate, momentum, and iteration counter."""

    theta: np.ndarray
    u: np.ndarray
    iteration: int = 0

    @staticmethod
    def zeros(dim: int) -> "ParameterState":
        return ParameterState(theta=np.zeros(dim), u=np.zeros(dim), iteration=0)

    def copy(self) -> "ParameterState":
        return ParameterState(self.theta.copy(), self.u.copy(), self.iteration)


@dataclass
class UpdateVector:
    """Additive update a worker ships to the master, tagged with the
    staleness (applies between snapshot read and this update's apply)."""

    d_theta: np.ndarray
    d_u: np.ndarray
    staleness: int = 0


@dataclass
class UpdateContext:
    """Everything the post-send memory update needs from the matching
    compute_update call."""

    snapshot_theta: np.ndarray
    subsample: Subsample
    overlap_gradient: np.ndarray
    snapshot_iteration: int


class WorkerState:
    """Worker-local L-BFGS memory and previous-iteration bookkeeping."""

    def __init__(self, cfg: SamplerConfig, dim: int):
        self.cfg = cfg
        self.memory = LbfgsMemory(dim, cfg.memory_size, epsilon=cfg.epsilon, rho=cfg.rho)
        self.prev_theta = None
        self.prev_overlap = None
        self.prev_overlap_grad = None
        self.local_iter = 0


def compute_update(cfg, worker, snapshot, model, rng) -> tuple[UpdateVector, UpdateContext]:
    """One worker iteration: draw a subsample, form the combined gradient
    at the (possibly stale) snapshot, and build (d_theta, d_u).

    Does not touch the worker's memory; call post_send_memory_update with
    the returned context afterwards, mirroring the send-then-update order
    of the protocol.
    """
    theta, u = snapshot.theta, snapshot.u
    sub = draw_subsample(rng, model.n_records, cfg.n_s, cfg.n_o)
    g = combined_gradient(model, theta, sub)
    if not np.all(np.isfinite(g)):
        raise DivergenceError(
            f"non-finite gradient at iteration {snapshot.iteration}",
            iteration=snapshot.iteration,
        )
    d_u = -cfg.step * worker.memory.apply(g) - cfg.friction * u
    scale = cfg.noise_scale()
    if scale > 0.0:
        d_u += scale * rng.standard_normal(model.dim)
    d_theta = worker.memory.apply(u)
    overlap_grad = stochastic_gradient(model, theta, sub.o_indices)
    ctx = UpdateContext(
        snapshot_theta=theta.copy(),
        subsample=sub,
        overlap_gradient=overlap_grad,
        snapshot_iteration=snapshot.iteration,
    )
    return UpdateVector(d_theta=d_theta, d_u=d_u), ctx


def post_send_memory_update(worker: WorkerState, ctx: UpdateContext, model) -> bool:
    """Advance the worker's local bookkeeping and try to admit a pair.

    The gradient difference re-evaluates the PREVIOUS overlap set at the
    current local iterate, so both gradients in a pair use the same index
    set.  Returns whether a pair was admitted.
    """
    admitted = False
    if worker.local_iter >= 1 and worker.cfg.use_memory:
        g_prime = stochastic_gradient(model, ctx.snapshot_theta, worker.prev_overlap)
        s = ctx.snapshot_theta - worker.prev_theta
        y = g_prime - worker.prev_overlap_grad
        admitted = worker.memory.try_add(s, y)
    worker.prev_theta = ctx.snapshot_theta
    worker.prev_overlap = ctx.subsample.o_indices
    worker.prev_overlap_grad = ctx.overlap_gradient
    worker.local_iter += 1
    return admitted


def master_apply(state: ParameterState, upd: UpdateVector) -> ParameterState:
    """Componentwise accumulation; returns a new state with n+1."""
    theta = state.theta + upd.d_theta
    u = state.u + upd.d_u
    if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(u))):
        raise DivergenceError(
            f"non-finite iterate after update {state.iteration + 1}",
            iteration=state.iteration + 1,
        )
    return ParameterState(theta=theta, u=u, iteration=state.iteration + 1)


def reparameterize(h: float, gamma: float) -> tuple[float, float]:
    """Map underlying (step, friction) to the discretized (h', gamma') =
    (h^2, h*gamma).  Requires h*gamma < 1 so the friction stays in (0,1)."""
    if h <= 0 or gamma <= 0:
        raise ValueError(f"h and gamma must be positive, got ({h}, {gamma})")
    if h * gamma >= 1.0:
        raise ValueError(f"h*gamma must be < 1 for stability, got {h * gamma}")
    return h * h, h * gamma


def sgld_step(theta, h, beta, model, indices, rng) -> np.ndarray:
    """One stochastic gradient Langevin step; beta = inf gives plain SGD."""
    if h <= 0 or beta <= 0:
        raise ValueError(f"h and beta must be positive, got ({h}, {beta})")
    g = stochastic_gradient(model, theta, indices)
    new = theta - h * g
    if not math.isinf(beta):
        new = new + math.sqrt(2.0 * h / beta) * rng.standard_normal(len(theta))
    if not np.all(np.isfinite(new)):
        raise DivergenceError("non-finite iterate in SGLD step")
    return new


def asgd_step(theta, h, model, indices) -> UpdateVector:
    """Asynchronous SGD baseline: momentum-free, noise-free update vector."""
    if h <= 0:
        raise ValueError(f"h must be positive, got {h}")
    g = stochastic_gradient(model, theta, indices)
    if not np.all(np.isfinite(g)):
        raise DivergenceError("non-finite gradient in a-SGD step")
    return UpdateVector(d_theta=-h * g, d_u=np.zeros_like(theta))


class MbLbfgsMaster:
    """Simplified synchronous multi-batch L-BFGS master (mb-lbfgs-simplified).

    Keeps a central memory; per round it averages the workers' combined
    gradients, steps theta, and admits a pair built from consecutive
    rounds' overlap gradients evaluated on the same index set.
    """

    def __init__(self, dim, step, memory_size=3, epsilon=1e-8, rho=0.0, use_memory=True):
        if step <= 0:
            raise ConfigError(f"step must be positive, got {step}")
        self.step = float(step)
        self.use_memory = use_memory
        self.memory = LbfgsMemory(dim, memory_size, epsilon=epsilon, rho=rho)
        self.prev_theta = None
        self.prev_overlap = None
        self.prev_overlap_grad = None

    def round(self, theta, gradients, overlap_indices, model):
        """One synchronous round.

        ``gradients`` are the combined gradients received in time, all
        evaluated at ``theta``; ``overlap_indices`` is the concatenation of
        the contributing workers' overlap sets.  Returns the new iterate;
        with an empty gradient list the round is skipped and theta is
        returned unchanged.
        """
        if len(gradients) == 0:
            return theta
        g_bar = np.mean(gradients, axis=0)
        if self.use_memory and self.prev_theta is not None:
            g_prime = stochastic_gradient(model, theta, self.prev_overlap)
            self.memory.try_add(theta - self.prev_theta, g_prime - self.prev_overlap_grad)
        if self.use_memory:
            self.prev_theta = theta.copy()
            self.prev_overlap = np.asarray(overlap_indices, dtype=np.intp)
            self.prev_overlap_grad = stochastic_gradient(model, theta, self.prev_overlap)
        new = theta - self.step * self.memory.apply(g_bar)
        if not np.all(np.isfinite(new)):
            raise DivergenceError("non-finite iterate in mb-L-BFGS round")
        return new


def mb_lbfgs_round(master: MbLbfgsMaster, theta, gradients, overlap_indices, model):
    """Functional wrapper around MbLbfgsMaster.round."""
    return master.round(theta, gradients, overlap_indices, model)
