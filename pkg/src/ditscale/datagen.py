"""Synthetic labeled 2-D distributions used as training and evaluation data.

Component index doubles as the class label. A translation `shift` applied to
every component produces the out-of-domain variant: the optimal velocity-
matching loss is translation invariant, so any loss offset measured on the
shifted distribution isolates model misfit rather than task difficulty.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError


class DistributionSpec:
    """Base class for labeled sample generators."""

    kind = "base"

    @property
    def num_classes(self) -> int:
        raise NotImplementedError

    def sample(self, n: int, rng: np.random.Generator):
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class GaussianMixture(DistributionSpec):
    """Equal-weight mixture of isotropic Gaussians with shared std."""

    means: tuple = ((2.0, 2.0), (-2.0, 2.0), (-2.0, -2.0), (2.0, -2.0))
    std: float = 0.5
    shift: tuple = (0.0, 0.0)
    kind = "gaussian_mixture"

    def __post_init__(self):
        if len(self.means) < 1:
            raise ConfigError("mixture needs at least one component")
        if self.std <= 0:
            raise ConfigError(f"mixture std must be > 0, got {self.std}")

    @property
    def num_classes(self) -> int:
        return len(self.means)

    @property
    def dim(self) -> int:
        return len(self.means[0])

    def sample(self, n, rng: np.random.Generator):
        """n may be an int or a shape tuple; points get a trailing dim axis."""
        if np.prod(n) < 1:
            raise ConfigError(f"sample count must be >= 1, got {n}")
        shape = (n,) if isinstance(n, int) else tuple(n)
        means = np.asarray(self.means, dtype=np.float64)
        labels = rng.integers(0, len(means), size=shape)
        x = means[labels] + self.std * rng.standard_normal(shape + (means.shape[1],))
        x += np.asarray(self.shift, dtype=np.float64)
        return x, labels.astype(np.int64)

    def mean(self) -> np.ndarray:
        return np.mean(np.asarray(self.means), axis=0) + np.asarray(self.shift)

    def cov(self) -> np.ndarray:
        """Analytic covariance: std^2 I + spread of component means."""
        means = np.asarray(self.means, dtype=np.float64)
        mu = means.mean(axis=0)
        centered = means - mu
        spread = centered.T @ centered / len(self.means)
        return self.std**2 * np.eye(means.shape[1]) + spread

    def second_moment(self) -> float:
        """E||x||^2, used by analytic loss baselines."""
        mu = self.mean()
        return float(np.trace(self.cov()) + mu @ mu)

    def shifted(self, shift) -> "GaussianMixture":
        base = np.asarray(self.shift) + np.asarray(shift, dtype=np.float64)
        return GaussianMixture(self.means, self.std, tuple(float(v) for v in base))

    def to_dict(self):
        return {"kind": self.kind,
                "means": [list(m) for m in self.means],
                "std": self.std,
                "shift": list(self.shift)}


@dataclass(frozen=True)
class Checkerboard(DistributionSpec):
    """Uniform draws from the dark cells of a grid; cell index is the label."""

    grid_size: int = 4
    cell_extent: float = 1.0
    shift: tuple = (0.0, 0.0)
    kind = "checkerboard"

    def __post_init__(self):
        if self.grid_size < 1:
            raise ConfigError(f"grid_size must be >= 1, got {self.grid_size}")
        if self.cell_extent <= 0:
            raise ConfigError(f"cell_extent must be > 0, got {self.cell_extent}")

    def _cells(self):
        g = self.grid_size
        half = g * self.cell_extent / 2.0
        cells = []
        for i in range(g):
            for j in range(g):
                if (i + j) % 2 == 0:
                    cells.append((-half + i * self.cell_extent,
                                  -half + j * self.cell_extent))
        return cells

    @property
    def num_classes(self) -> int:
        return len(self._cells())

    def sample(self, n, rng: np.random.Generator):
        if np.prod(n) < 1:
            raise ConfigError(f"sample count must be >= 1, got {n}")
        shape = (n,) if isinstance(n, int) else tuple(n)
        cells = np.asarray(self._cells(), dtype=np.float64)
        labels = rng.integers(0, len(cells), size=shape)
        x = cells[labels] + self.cell_extent * rng.random(shape + (2,))
        x += np.asarray(self.shift, dtype=np.float64)
        return x, labels.astype(np.int64)

    def to_dict(self):
        return {"kind": self.kind, "grid_size": self.grid_size,
                "cell_extent": self.cell_extent, "shift": list(self.shift)}


def distribution_from_dict(doc: dict) -> DistributionSpec:
    kind = doc.get("kind")
    if kind == "gaussian_mixture":
        return GaussianMixture(means=tuple(tuple(m) for m in doc["means"]),
                               std=doc.get("std", 0.5),
                               shift=tuple(doc.get("shift", (0.0, 0.0))))
    if kind == "checkerboard":
        return Checkerboard(grid_size=doc.get("grid_size", 4),
                            cell_extent=doc.get("cell_extent", 1.0),
                            shift=tuple(doc.get("shift", (0.0, 0.0))))
    raise ConfigError(f"unknown distribution kind {kind!r}")


def default_in_domain() -> GaussianMixture:
    """4-component mixture at (+-2, +-2), std 0.5."""
    return GaussianMixture()


def default_out_of_domain() -> GaussianMixture:
    """The in-domain mixture translated by (3, 3)."""
    return default_in_domain().shifted((3.0, 3.0))


def sample(spec: DistributionSpec, n: int, rng: np.random.Generator):
    """n i.i.d. draws: (points (n, 2), labels (n,))."""
    return spec.sample(n, rng)


def split(spec: DistributionSpec, n_train: int, n_val: int, seed: int):
    """Independent train/validation draws from disjoint sub-seeds."""
    train_ss, val_ss = np.random.SeedSequence(seed).spawn(2)
    train = spec.sample(n_train, np.random.default_rng(train_ss))
    val = spec.sample(n_val, np.random.default_rng(val_ss))
    return train, val
