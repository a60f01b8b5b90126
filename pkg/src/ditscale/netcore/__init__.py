"""Trainable velocity network: parameters, backprop, optimizer, accounting.

The hot kernels (fused loss/gradient pass, AdamW) run on a compiled Cython
backend when built, with a pure-numpy fallback selected at import time; see
ditscale.netcore.backends. Everything else (init, inference forward,
directional derivatives) is shared numpy code.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, DivergedRunError
from ..formulations import (Schedule, TimestepSampler, velocity_target_arrays)
from .backends import (available_backends, default_backend, forward,
                       forward_jvp, gelu, gelu_prime)
from .model import (ModelConfig, ParamSet, assemble_features, init, layout,
                    param_count, time_features, train_flops_per_sample)

__all__ = [
    "ModelConfig", "ParamSet", "OptimizerState",
    "init", "forward", "forward_jvp", "loss_and_grads", "loss_and_grads_at",
    "adamw_step", "clip_grad_norm", "param_count", "train_flops_per_sample",
    "assemble_features", "time_features", "layout", "gelu", "gelu_prime",
    "default_backend", "available_backends", "backend_name",
]


def backend_name() -> str:
    return default_backend().name


@dataclass
class OptimizerState:
    """AdamW accumulators mirroring the flat parameter vector."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-15
    weight_decay: float = 0.01

    @classmethod
    def for_params(cls, params: ParamSet, **hyper) -> "OptimizerState":
        return cls(m=np.zeros_like(params.flat), v=np.zeros_like(params.flat), **hyper)


def adamw_step(state: OptimizerState, params: ParamSet, grads: np.ndarray,
               lr: float, backend=None) -> None:
    """One decoupled-weight-decay Adam update (in place on params and state).

    Decay p *= 1 - lr*wd is applied before the bias-corrected moment step.
    """
    if grads.shape != params.flat.shape:
        raise ConfigError("gradient shape does not match parameters")
    be = backend or default_backend()
    state.step += 1
    be.adamw(params.flat, grads, state.m, state.v, state.step,
             lr, state.beta1, state.beta2, state.eps, state.weight_decay)


def clip_grad_norm(grads: np.ndarray, max_norm: float = 1.0) -> float:
    """Scale grads in place to global L2 norm max_norm if exceeded.

    Returns the pre-clip norm.
    """
    norm = float(np.sqrt(grads @ grads))
    if norm > max_norm:
        grads *= max_norm / norm
    return norm


def loss_and_grads_at(params: ParamSet, x0: np.ndarray, cond: np.ndarray,
                      t: np.ndarray, eps: np.ndarray, schedule: Schedule,
                      backend=None):
    """Loss and exact gradients for fixed randomness (t, eps, cond).

    Builds x_t and the velocity target from the schedule, then runs the fused
    kernel. Useful for finite-difference checks where the noise must be frozen
    while parameters are perturbed.
    """
    be = backend or default_backend()
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    eps = np.atleast_2d(np.asarray(eps, dtype=np.float64))
    if x0.shape != eps.shape:
        raise ConfigError(f"shape mismatch: x0 {x0.shape} vs eps {eps.shape}")
    cond = np.asarray(cond, dtype=np.int64)
    t = np.asarray(t, dtype=np.float64)
    x_t, target = velocity_target_arrays(schedule, t, x0, eps)
    feats = assemble_features(params, x_t, t, cond)
    loss, grads = be.fused_loss_grads(params, feats, np.ascontiguousarray(target), cond)
    if not np.isfinite(loss):
        raise DivergedRunError(f"non-finite training loss {loss}")
    return loss, grads


def loss_and_grads(params: ParamSet, x0: np.ndarray, cond: np.ndarray,
                   schedule: Schedule, sampler: TimestepSampler,
                   rng: np.random.Generator, label_drop_prob: float = 0.0,
                   backend=None):
    """Monte Carlo training loss and gradients for one batch.

    Per element: optionally drop the label to the null class, draw t from the
    sampler and eps ~ N(0, I), form the velocity target, and average. Draw
    order is fixed (drop mask, then t, then eps) so runs are reproducible.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    n = x0.shape[0]
    if n == 0:
        raise ConfigError("empty batch")
    cond = np.asarray(cond, dtype=np.int64).copy()
    if label_drop_prob > 0.0:
        drop = rng.random(n) < label_drop_prob
        cond[drop] = params.config.null_class
    t = sampler.sample(rng, n)
    eps = rng.standard_normal(x0.shape)
    return loss_and_grads_at(params, x0, cond, t, eps, schedule, backend=backend)
