"""Run-store persistence and sweep configuration.

Layout under a store root:

    runs/<sweep-id>/
        manifest.json          index of every run document
        <run-id>.json          one RunRecord per run (write-once)
        <run-id>.ckpt          final parameters (absent for diverged runs)
        reports/               fitted reports, plots, CSV exports

Run documents are written atomically (tmp file + rename), so an interrupted
sweep leaves either a complete document or none; combined with per-run seeds
derived from (master seed, budget index, model index), resuming reproduces
exactly the store an uninterrupted sweep would have written. One writer per
sweep is enforced with an advisory lock file.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import SCHEMA_VERSION
from .datagen import (DistributionSpec, default_in_domain,
                      default_out_of_domain, distribution_from_dict)
from .errors import ConfigError, StoreError
from .formulations import (LogitNormalSampler, RectifiedFlow, sampler_from_dict,
                           schedule_from_dict)
from .netcore import ModelConfig, ParamSet, param_count
from .scalelab import IsoFlopPoint
from .trainer import RunRecord, TrainConfig, derive_steps

DEFAULT_STORE_ENV = "DITSCALE_STORE"


def default_store_root():
    return os.environ.get(DEFAULT_STORE_ENV, os.path.join(os.getcwd(), "ditscale-store"))


@dataclass(frozen=True)
class SweepJob:
    run_id: str
    budget: float
    config: TrainConfig


@dataclass
class SweepConfig:
    """Budgets x model grid plus the shared training recipe."""

    sweep_id: str
    budgets: list
    grid: list  # [(depth, aspect_ratio), ...]
    dataset: DistributionSpec = field(default_factory=default_in_domain)
    ood_dataset: DistributionSpec = field(default_factory=default_out_of_domain)
    schedule: object = field(default_factory=RectifiedFlow)
    sampler: object = field(default_factory=LogitNormalSampler)
    model_base: dict = field(default_factory=dict)   # extra ModelConfig fields
    train_base: dict = field(default_factory=dict)   # extra TrainConfig fields
    master_seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if not self.budgets:
            raise ConfigError("sweep needs at least one budget")
        if any(b2 <= b1 for b1, b2 in zip(self.budgets, self.budgets[1:])):
            raise ConfigError("budgets must be strictly increasing")
        if len(self.grid) < 3:
            raise ConfigError(f"model grid needs >= 3 sizes, got {len(self.grid)}")
        if not self.sweep_id or "/" in self.sweep_id:
            raise ConfigError(f"invalid sweep id {self.sweep_id!r}")

    def model_for(self, depth: int, aspect_ratio: int) -> ModelConfig:
        return ModelConfig.from_aspect(depth, aspect_ratio, **self.model_base)

    def jobs(self):
        """Deterministic enumeration of (budget, model) cells.

        Per-run seeds depend only on (master seed, budget index, model index),
        never on execution order, so resumes and reruns agree bitwise.
        """
        batch = self.train_base.get("batch_size", 256)
        for bi, budget in enumerate(self.budgets):
            for mi, (depth, ar) in enumerate(self.grid):
                model = self.model_for(depth, ar)
                derive_steps(budget, param_count(model), batch)  # validate
                seed = int(np.random.SeedSequence(
                    [self.master_seed, bi, mi]).generate_state(1, np.uint64)[0])
                config = TrainConfig(
                    budget_flops=float(budget), model=model,
                    dataset=self.dataset, schedule=self.schedule,
                    sampler=self.sampler, seed=seed, **self.train_base)
                run_id = f"b{bi:02d}_m{mi:02d}_d{depth}w{model.width}"
                yield SweepJob(run_id=run_id, budget=float(budget), config=config)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "sweep_id": self.sweep_id,
            "budgets": list(self.budgets),
            "grid": [list(g) for g in self.grid],
            "dataset": self.dataset.to_dict(),
            "ood_dataset": self.ood_dataset.to_dict(),
            "schedule": self.schedule.to_dict(),
            "timestep_sampler": self.sampler.to_dict(),
            "model_base": dict(self.model_base),
            "train_base": dict(self.train_base),
            "master_seed": self.master_seed,
            "workers": self.workers,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SweepConfig":
        version = doc.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported sweep config schema {version}")
        return cls(
            sweep_id=doc["sweep_id"],
            budgets=[float(b) for b in doc["budgets"]],
            grid=[tuple(g) for g in doc["grid"]],
            dataset=distribution_from_dict(doc["dataset"]) if "dataset" in doc
            else default_in_domain(),
            ood_dataset=distribution_from_dict(doc["ood_dataset"])
            if "ood_dataset" in doc else default_out_of_domain(),
            schedule=schedule_from_dict(doc.get("schedule", "rf")),
            sampler=sampler_from_dict(doc.get("timestep_sampler",
                                              {"kind": "logit_normal"})),
            model_base=doc.get("model_base", {}),
            train_base=doc.get("train_base", {}),
            master_seed=doc.get("master_seed", 0),
            workers=doc.get("workers", 1),
        )

    @classmethod
    def load(cls, path) -> "SweepConfig":
        try:
            with open(path) as f:
                doc = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"sweep config not found: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})")
        return cls.from_dict(doc)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _atomic_write(path, data: str):
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w") as f:
        f.write(data)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


class StoreLock:
    """Advisory single-writer lock for a sweep directory."""

    def __init__(self, directory):
        self.path = os.path.join(directory, ".lock")
        self._fd = None

    def __enter__(self):
        try:
            self._fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            os.write(self._fd, str(os.getpid()).encode())
        except FileExistsError:
            raise StoreError(
                f"sweep directory is locked by another writer ({self.path}); "
                "remove the lock file if that writer is gone")
        return self

    def __exit__(self, *exc):
        if self._fd is not None:
            os.close(self._fd)
            os.unlink(self.path)


class RunStore:
    """Filesystem-backed store of run documents, checkpoints, and reports."""

    def __init__(self, root):
        self.root = root

    def sweep_dir(self, sweep_id: str):
        return os.path.join(self.root, "runs", sweep_id)

    def reports_dir(self, sweep_id: str):
        return os.path.join(self.sweep_dir(sweep_id), "reports")

    def _run_json(self, sweep_id, run_id):
        return os.path.join(self.sweep_dir(sweep_id), f"{run_id}.json")

    def _run_ckpt(self, sweep_id, run_id):
        return os.path.join(self.sweep_dir(sweep_id), f"{run_id}.ckpt")

    def ensure_sweep(self, sweep_id: str):
        os.makedirs(self.reports_dir(sweep_id), exist_ok=True)

    def lock(self, sweep_id: str) -> StoreLock:
        self.ensure_sweep(sweep_id)
        return StoreLock(self.sweep_dir(sweep_id))

    def run_complete(self, sweep_id, run_id) -> bool:
        return os.path.exists(self._run_json(sweep_id, run_id))

    def write_run(self, sweep_id: str, record: RunRecord,
                  params: ParamSet | None = None):
        """Persist one run document (and checkpoint) atomically."""
        self.ensure_sweep(sweep_id)
        if params is not None:
            ckpt = self._run_ckpt(sweep_id, record.run_id)
            tmp = f"{ckpt}.tmp.{os.getpid()}"
            params.save(tmp)
            os.replace(tmp, ckpt)
        _atomic_write(self._run_json(sweep_id, record.run_id),
                      json.dumps(record.to_dict()))

    def read_run(self, sweep_id: str, run_id: str) -> RunRecord:
        path = self._run_json(sweep_id, run_id)
        try:
            with open(path) as f:
                return RunRecord.from_dict(json.load(f))
        except FileNotFoundError:
            raise StoreError(f"run document not found: {path}")

    def read_params(self, sweep_id: str, run_id: str) -> ParamSet:
        path = self._run_ckpt(sweep_id, run_id)
        if not os.path.exists(path):
            raise StoreError(f"checkpoint not found: {path}")
        return ParamSet.load(path)

    def attach_metrics(self, sweep_id: str, run_id: str, metrics: dict):
        """Merge evaluation metrics into an existing run document."""
        record = self.read_run(sweep_id, run_id)
        record.metrics.update(metrics)
        _atomic_write(self._run_json(sweep_id, run_id),
                      json.dumps(record.to_dict()))
        return record

    def run_ids(self, sweep_id: str):
        d = self.sweep_dir(sweep_id)
        if not os.path.isdir(d):
            raise StoreError(f"no such sweep in store: {sweep_id} ({d})")
        return sorted(f[:-5] for f in os.listdir(d)
                      if f.endswith(".json") and f != "manifest.json")

    def rebuild_manifest(self, sweep: SweepConfig):
        """Regenerate the manifest from the run documents on disk."""
        rows = []
        for run_id in self.run_ids(sweep.sweep_id):
            rec = self.read_run(sweep.sweep_id, run_id)
            rows.append({
                "run_id": run_id,
                "budget": rec.budget,
                "n_params": rec.n_params,
                "tokens": rec.tokens,
                "status": "diverged" if rec.diverged else "done",
                "final_ema_loss": rec.final_ema_loss,
            })
        doc = {"schema_version": SCHEMA_VERSION,
               "sweep_id": sweep.sweep_id,
               "fingerprint": sweep.fingerprint(),
               "config": sweep.to_dict(),
               "runs": rows}
        _atomic_write(os.path.join(self.sweep_dir(sweep.sweep_id), "manifest.json"),
                      json.dumps(doc, indent=1))

    def read_manifest(self, sweep_id: str) -> dict:
        path = os.path.join(self.sweep_dir(sweep_id), "manifest.json")
        try:
            with open(path) as f:
                return json.load(f)
        except FileNotFoundError:
            raise StoreError(f"manifest not found: {path} (run `ditscale sweep` first)")

    def load_points(self, sweep_id: str):
        """IsoFlopPoints of all completed, non-diverged runs."""
        points = []
        for run_id in self.run_ids(sweep_id):
            rec = self.read_run(sweep_id, run_id)
            if rec.diverged:
                continue
            points.append(IsoFlopPoint(c=rec.budget, n=rec.n_params,
                                       d=rec.tokens, loss=rec.final_ema_loss,
                                       run_id=run_id))
        return points
