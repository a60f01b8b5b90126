"""Budget-driven training loop.

A run is specified by a total FLOP budget C and a model shape; the step count
follows from C = 6 N D with D = steps * batch_size. Each step draws a fresh
batch, drops labels for classifier-free guidance, samples timesteps and noise,
takes one clipped AdamW step, and records the raw and EMA-smoothed loss.

EMA convention: the default ("paper") recurrence is l <- (1 - a) l + a v,
weighting the newest value by a. The narrative around that recurrence in its
source suggests the opposite convention, so "classic" (l <- a l + (1 - a) v,
stronger smoothing for large a) is available via ema_mode. The tracker is
seeded with the first raw loss to avoid early-phase bias.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import netcore
from .datagen import DistributionSpec, default_in_domain, distribution_from_dict
from .errors import ConfigError, DivergedRunError
from .formulations import (LogitNormalSampler, RectifiedFlow, Schedule,
                           TimestepSampler, sampler_from_dict,
                           schedule_from_dict)
from .netcore import ModelConfig, OptimizerState, ParamSet
from .netcore.model import time_features

LR_DECAY_FACTORS = (1.0, 0.316, 0.1)  # 1e-4 -> 3.16e-5 -> 1e-5 at base 1e-4


@dataclass
class TrainConfig:
    """One training run: budget, model, data, and recipe knobs."""

    budget_flops: float
    model: ModelConfig
    dataset: DistributionSpec = field(default_factory=default_in_domain)
    schedule: Schedule = field(default_factory=RectifiedFlow)
    sampler: TimestepSampler = field(default_factory=LogitNormalSampler)
    batch_size: int = 256
    lr_schedule: str = "constant"  # "constant" | "decayed_large"
    base_lr: float = 1e-4
    label_drop_prob: float = 0.1
    ema_alpha: float = 0.9
    ema_mode: str = "paper"  # "paper" | "classic", see module docstring
    weight_decay: float = 0.01
    clip_norm: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.budget_flops <= 0:
            raise ConfigError(f"budget must be > 0, got {self.budget_flops}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.label_drop_prob <= 1.0:
            raise ConfigError(f"label_drop_prob must be in [0, 1], got {self.label_drop_prob}")
        if not 0.0 < self.ema_alpha <= 1.0:
            raise ConfigError(f"ema_alpha must be in (0, 1], got {self.ema_alpha}")
        if self.lr_schedule not in ("constant", "decayed_large"):
            raise ConfigError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.ema_mode not in ("paper", "classic"):
            raise ConfigError(f"unknown ema_mode {self.ema_mode!r}")

    def to_dict(self) -> dict:
        return {
            "budget_flops": self.budget_flops,
            "model": self.model.to_dict(),
            "dataset": self.dataset.to_dict(),
            "schedule": self.schedule.to_dict(),
            "timestep_sampler": self.sampler.to_dict(),
            "batch_size": self.batch_size,
            "lr_schedule": self.lr_schedule,
            "base_lr": self.base_lr,
            "label_drop_prob": self.label_drop_prob,
            "ema_alpha": self.ema_alpha,
            "ema_mode": self.ema_mode,
            "weight_decay": self.weight_decay,
            "clip_norm": self.clip_norm,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        return cls(
            budget_flops=doc["budget_flops"],
            model=ModelConfig.from_dict(doc["model"]),
            dataset=distribution_from_dict(doc["dataset"]),
            schedule=schedule_from_dict(doc.get("schedule", "rf")),
            sampler=sampler_from_dict(doc.get("timestep_sampler",
                                              {"kind": "logit_normal"})),
            batch_size=doc.get("batch_size", 256),
            lr_schedule=doc.get("lr_schedule", "constant"),
            base_lr=doc.get("base_lr", 1e-4),
            label_drop_prob=doc.get("label_drop_prob", 0.1),
            ema_alpha=doc.get("ema_alpha", 0.9),
            ema_mode=doc.get("ema_mode", "paper"),
            weight_decay=doc.get("weight_decay", 0.01),
            clip_norm=doc.get("clip_norm", 1.0),
            seed=doc.get("seed", 0),
        )


@dataclass
class RunRecord:
    """Everything one training run produced."""

    run_id: str
    config: dict
    n_params: int
    tokens: int
    steps: int
    losses: list
    ema_losses: list
    final_ema_loss: float
    grad_norms: list
    wall_time_seconds: float
    diverged: bool = False
    metrics: dict = field(default_factory=dict)
    schema_version: int = 1

    @property
    def budget(self) -> float:
        return self.config["budget_flops"]

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "run_id": self.run_id,
            "config": self.config,
            "n_params": self.n_params,
            "tokens": self.tokens,
            "steps": self.steps,
            "losses": self.losses,
            "ema_losses": self.ema_losses,
            "final_ema_loss": self.final_ema_loss,
            "grad_norms": self.grad_norms,
            "wall_time_seconds": self.wall_time_seconds,
            "diverged": self.diverged,
            "metrics": self.metrics,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RunRecord":
        doc = dict(doc)
        doc.pop("schema_version", None)
        return cls(**doc)


def derive_steps(budget_flops: float, n_params: int, batch_size: int):
    """(steps, tokens) exhausting the budget under C = 6 N D.

    steps = floor(C / (6 N batch)); raises if not even one step fits.
    """
    per_step = 6 * n_params * batch_size
    if budget_flops < per_step:
        raise ConfigError(
            f"budget {budget_flops:g} below one step; minimum is {per_step:g} "
            f"(6 * {n_params} params * {batch_size} batch)")
    steps = int(budget_flops // per_step)
    return steps, steps * batch_size


def lr_at(step: int, total_steps: int, schedule: str, base_lr: float = 1e-4) -> float:
    """Piecewise-constant learning rate.

    constant: base_lr throughout. decayed_large: base_lr for the first 80% of
    steps, 0.316x for the next 10%, 0.1x for the final 10% (with base 1e-4
    that is 1e-4 -> 3.16e-5 -> 1e-5).
    """
    if not 0 <= step < total_steps:
        raise ConfigError(f"step {step} outside [0, {total_steps})")
    if schedule == "constant":
        return base_lr
    if schedule == "decayed_large":
        if step < int(0.8 * total_steps):
            return base_lr * LR_DECAY_FACTORS[0]
        if step < int(0.9 * total_steps):
            return base_lr * LR_DECAY_FACTORS[1]
        return base_lr * LR_DECAY_FACTORS[2]
    raise ConfigError(f"unknown lr_schedule {schedule!r}")


def ema_update(l_prev: float, v_new: float, alpha: float, mode: str = "paper") -> float:
    """One smoothing step; see the module docstring for the two conventions."""
    if not 0.0 < alpha <= 1.0:
        raise ConfigError(f"alpha must be in (0, 1], got {alpha}")
    if mode == "paper":
        return (1.0 - alpha) * l_prev + alpha * v_new
    if mode == "classic":
        return alpha * l_prev + (1.0 - alpha) * v_new
    raise ConfigError(f"unknown ema mode {mode!r}")


def replay_ema(losses, alpha: float, mode: str = "paper"):
    """EMA curve from a raw loss curve (first value seeds the tracker)."""
    out = []
    current = None
    for v in losses:
        current = v if current is None else ema_update(current, v, alpha, mode)
        out.append(current)
    return out


class _StepWorkspace:
    """Preallocated per-step buffers for the training hot loop."""

    def __init__(self, config: ModelConfig, batch: int):
        self.feats = np.empty((batch, config.in_dim), dtype=np.float64)
        d = config.data_dim
        te = config.time_embed_dim
        self.xt = self.feats[:, :d]
        self.tf_sin = self.feats[:, d:d + te // 2]
        self.tf_cos = self.feats[:, d + te // 2:d + te]
        self.emb = self.feats[:, d + te:]
        self.target = np.empty((batch, d), dtype=np.float64)
        self.freqs = np.pi * (2.0 ** np.arange(te // 2))
        self.phase = np.empty((batch, te // 2), dtype=np.float64)

    def fill(self, params: ParamSet, schedule: Schedule, x0, eps, t, cond):
        """Assemble features and the velocity target in place."""
        if isinstance(schedule, RectifiedFlow):
            np.multiply(x0, (1.0 - t)[:, None], out=self.xt)
            self.xt += t[:, None] * eps
            np.subtract(eps, x0, out=self.target)
        else:
            alpha, beta, ap, bp = schedule.coeffs_arrays(t)
            np.multiply(x0, alpha[:, None], out=self.xt)
            self.xt += beta[:, None] * eps
            np.multiply(x0, ap[:, None], out=self.target)
            self.target += bp[:, None] * eps
        np.multiply(t[:, None], self.freqs[None, :], out=self.phase)
        np.sin(self.phase, out=self.tf_sin)
        np.cos(self.phase, out=self.tf_cos)
        self.emb[:] = params.embedding[cond]


def _spawn_rngs(seed: int):
    """Three independent streams: init, data, training noise."""
    init_ss, data_ss, train_ss = np.random.SeedSequence(seed).spawn(3)
    return (np.random.default_rng(init_ss), np.random.default_rng(data_ss),
            np.random.default_rng(train_ss))


def train(config: TrainConfig, run_id: str = "run", snapshot_at=(),
          backend=None):
    """Train one run to budget exhaustion.

    Returns (RunRecord, ParamSet). A non-finite loss aborts the run and marks
    the record diverged (parameters returned as-is for inspection).
    snapshot_at: optional iterable of step indices whose parameter vectors are
    copied into the returned record-side dict {step: flat.copy()}.
    """
    be = backend or netcore.default_backend()
    cfg_model = config.model
    n_params = netcore.param_count(cfg_model)
    steps, tokens = derive_steps(config.budget_flops, n_params, config.batch_size)

    rng_init, rng_data, rng_train = _spawn_rngs(config.seed)
    params = netcore.init(cfg_model, rng_init)
    opt = OptimizerState.for_params(params, weight_decay=config.weight_decay)
    ws = _StepWorkspace(cfg_model, config.batch_size)
    snapshots = {}
    snapshot_set = set(snapshot_at)

    losses = np.empty(steps, dtype=np.float64)
    emas = np.empty(steps, dtype=np.float64)
    gnorms = np.empty(steps, dtype=np.float64)
    null_class = cfg_model.null_class
    drop_p = config.label_drop_prob
    ema = None
    diverged = False
    t0 = time.perf_counter()

    # randomness is drawn in blocks of steps to amortize generator overhead;
    # the consumption order is fixed, so runs stay seed-deterministic
    block = 256
    batch = config.batch_size
    done = 0
    for start in range(0, steps, block):
        blk = min(block, steps - start)
        x0_blk, labels_blk = config.dataset.sample((blk, batch), rng_data)
        if drop_p > 0.0:
            drop_blk = rng_train.random((blk, batch)) < drop_p
            cond_blk = np.where(drop_blk, null_class, labels_blk)
        else:
            cond_blk = labels_blk
        t_blk = config.sampler.sample(rng_train, (blk, batch))
        eps_blk = rng_train.standard_normal((blk, batch, cfg_model.data_dim))

        fast_assemble = (getattr(be, "assemble_rf", None)
                         if isinstance(config.schedule, RectifiedFlow) else None)
        for i in range(blk):
            step = start + i
            if step in snapshot_set:
                snapshots[step] = params.flat.copy()
            cond = cond_blk[i]
            if fast_assemble is not None:
                fast_assemble(params, x0_blk[i], eps_blk[i], t_blk[i], cond,
                              ws.freqs, ws.feats, ws.target)
            else:
                ws.fill(params, config.schedule, x0_blk[i], eps_blk[i],
                        t_blk[i], cond)
            loss, grads = be.fused_loss_grads(params, ws.feats, ws.target, cond)
            if not np.isfinite(loss):
                diverged = True
                done = step
                break
            gnorms[step] = netcore.clip_grad_norm(grads, config.clip_norm)
            lr = lr_at(step, steps, config.lr_schedule, config.base_lr)
            netcore.adamw_step(opt, params, grads, lr, backend=be)
            ema = loss if ema is None else ema_update(ema, loss, config.ema_alpha,
                                                      config.ema_mode)
            losses[step] = loss
            emas[step] = ema
            done = step + 1
        if diverged:
            break

    if steps in snapshot_set and not diverged:
        snapshots[steps] = params.flat.copy()
    wall = time.perf_counter() - t0
    record = RunRecord(
        run_id=run_id,
        config=config.to_dict(),
        n_params=n_params,
        tokens=tokens if not diverged else done * config.batch_size,
        steps=done,
        losses=losses[:done].tolist(),
        ema_losses=emas[:done].tolist(),
        final_ema_loss=float(emas[done - 1]) if done else float("nan"),
        grad_norms=gnorms[:done].tolist(),
        wall_time_seconds=wall,
        diverged=diverged,
    )
    if snapshot_at:
        return record, params, snapshots
    return record, params
