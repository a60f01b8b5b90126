"""Noise schedules, prediction targets, timestep samplers, and the velocity loss.

Conventions: t ranges over [0, 1] with t=0 clean data and t=1 pure noise. A
schedule defines the forward marginal x_t = alpha_t * x0 + beta_t * eps and the
velocity target v = alpha'_t * x0 + beta'_t * eps. Rectified flow uses
alpha_t = 1 - t, beta_t = t, so v = eps - x0 and the training loss is
||v_pred + x0 - eps||^2 per sample, averaged over the batch.

Discrete schedules (DDPM / LDM) are evaluated at index round(t * (T - 1)); for
derivatives the cumulative-product coefficients are interpolated linearly in t
and differenced centrally with step 1e-4.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, SingularTimestepError

# Sampled timesteps are clamped away from the endpoints where the score target
# and SNR' blow up.
T_CLAMP = 1e-5

# Central-difference step for discrete-schedule derivatives.
_FD_STEP = 1e-4


@dataclass(frozen=True)
class NoiseCoeffs:
    """Schedule coefficients at one timestep: x_t = alpha*x0 + beta*eps."""

    alpha: float
    beta: float
    alpha_prime: float
    beta_prime: float
    t: float


class Schedule:
    """Base class; subclasses implement coeffs_arrays over a vector of t."""

    name = "base"

    def coeffs_arrays(self, t: np.ndarray):
        """Return (alpha, beta, alpha', beta') arrays for timesteps t."""
        raise NotImplementedError

    def coeffs(self, t: float) -> NoiseCoeffs:
        if not 0.0 <= t <= 1.0:
            raise ConfigError(f"timestep {t} outside [0, 1]")
        a, b, ap, bp = (float(x[0]) for x in self.coeffs_arrays(np.array([t])))
        return NoiseCoeffs(a, b, ap, bp, float(t))

    def to_dict(self) -> dict:
        return {"kind": self.name}

    def __repr__(self):
        return f"{type(self).__name__}()"


@dataclass(frozen=True, repr=False)
class RectifiedFlow(Schedule):
    """Straight-line interpolation x_t = (1 - t) x0 + t eps."""

    name = "rf"

    def coeffs_arrays(self, t):
        t = np.asarray(t, dtype=np.float64)
        return 1.0 - t, t.copy(), np.full_like(t, -1.0), np.full_like(t, 1.0)


@dataclass(frozen=True, repr=False)
class VariancePreserving(Schedule):
    """Continuous VP schedule with constant noise rate sigma.

    alpha_t = exp(-sigma t / 2), beta_t = sqrt(1 - exp(-sigma t)), which keeps
    alpha^2 + beta^2 = 1 for all t.
    """

    sigma: float = 1.0
    name = "vp"

    def __post_init__(self):
        if self.sigma <= 0:
            raise ConfigError(f"vp schedule needs sigma > 0, got {self.sigma}")

    def coeffs_arrays(self, t):
        t = np.asarray(t, dtype=np.float64)
        decay = np.exp(-self.sigma * t)
        alpha = np.exp(-0.5 * self.sigma * t)
        beta = np.sqrt(np.maximum(1.0 - decay, 0.0))
        alpha_prime = -0.5 * self.sigma * alpha
        with np.errstate(divide="ignore"):
            beta_prime = np.where(beta > 0, self.sigma * decay / (2.0 * np.where(beta > 0, beta, 1.0)), np.inf)
        return alpha, beta, alpha_prime, beta_prime

    def to_dict(self):
        return {"kind": "vp", "sigma": self.sigma}

    def __repr__(self):
        return f"VariancePreserving(sigma={self.sigma})"


class _DiscreteVP(Schedule):
    """Shared machinery for discrete variance-preserving schedules.

    The per-index noise rate sigma_s defines alpha_i = sqrt(prod_{s<=i}(1 - sigma_s))
    and beta_i = sqrt(1 - alpha_i^2). Lookups round t to the nearest index;
    derivatives come from central differences of the linear interpolation of
    alpha over t.
    """

    def __init__(self, sigma0: float, sigmaT: float, steps: int):
        if not (0.0 < sigma0 <= sigmaT < 1.0):
            raise ConfigError(
                f"discrete schedule needs 0 < sigma0 <= sigmaT < 1, got ({sigma0}, {sigmaT})")
        if steps < 1:
            raise ConfigError(f"discrete schedule needs steps >= 1, got {steps}")
        self.sigma0 = float(sigma0)
        self.sigmaT = float(sigmaT)
        self.steps = int(steps)
        idx = np.arange(self.steps, dtype=np.float64)
        sigma = self._sigma_of(idx / self.steps)
        self._alpha_grid = np.sqrt(np.cumprod(1.0 - sigma))
        self._beta_grid = np.sqrt(np.maximum(1.0 - self._alpha_grid**2, 0.0))

    def _sigma_of(self, frac: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _interp_alpha(self, t: np.ndarray) -> np.ndarray:
        if self.steps == 1:
            return np.full_like(t, self._alpha_grid[0])
        u = np.clip(t, 0.0, 1.0) * (self.steps - 1)
        return np.interp(u, np.arange(self.steps), self._alpha_grid)

    def coeffs_arrays(self, t):
        t = np.asarray(t, dtype=np.float64)
        idx = np.rint(t * (self.steps - 1)).astype(np.intp) if self.steps > 1 \
            else np.zeros(t.shape, dtype=np.intp)
        alpha = self._alpha_grid[idx]
        beta = self._beta_grid[idx]
        h = _FD_STEP
        lo = np.maximum(t - h, 0.0)
        hi = np.minimum(t + h, 1.0)
        span = np.where(hi > lo, hi - lo, 1.0)
        a_hi = self._interp_alpha(hi)
        a_lo = self._interp_alpha(lo)
        alpha_prime = (a_hi - a_lo) / span
        b_hi = np.sqrt(np.maximum(1.0 - a_hi**2, 0.0))
        b_lo = np.sqrt(np.maximum(1.0 - a_lo**2, 0.0))
        beta_prime = (b_hi - b_lo) / span
        return alpha, beta, alpha_prime, beta_prime

    def to_dict(self):
        return {"kind": self.name, "sigma0": self.sigma0,
                "sigmaT": self.sigmaT, "steps": self.steps}

    def __repr__(self):
        return (f"{type(self).__name__}(sigma0={self.sigma0}, "
                f"sigmaT={self.sigmaT}, steps={self.steps})")


class DDPM(_DiscreteVP):
    """Discrete schedule with linearly increasing noise rate."""

    name = "ddpm"

    def __init__(self, sigma0: float = 1e-4, sigmaT: float = 0.02, steps: int = 1000):
        super().__init__(sigma0, sigmaT, steps)

    def _sigma_of(self, frac):
        return self.sigma0 + frac * (self.sigmaT - self.sigma0)


class LDM(_DiscreteVP):
    """Discrete schedule with noise rate linear in sqrt space."""

    name = "ldm"

    def __init__(self, sigma0: float = 0.00085, sigmaT: float = 0.012, steps: int = 1000):
        super().__init__(sigma0, sigmaT, steps)

    def _sigma_of(self, frac):
        root0 = math.sqrt(self.sigma0)
        rootT = math.sqrt(self.sigmaT)
        return (root0 + frac * (rootT - root0)) ** 2


def schedule_from_dict(doc) -> Schedule:
    """Build a schedule from its run-config form ("rf" or {"kind": ..., ...})."""
    if isinstance(doc, str):
        doc = {"kind": doc}
    kind = doc.get("kind")
    if kind == "rf":
        return RectifiedFlow()
    if kind == "vp":
        return VariancePreserving(sigma=doc.get("sigma", 1.0))
    if kind == "ddpm":
        return DDPM(doc.get("sigma0", 1e-4), doc.get("sigmaT", 0.02), doc.get("steps", 1000))
    if kind == "ldm":
        return LDM(doc.get("sigma0", 0.00085), doc.get("sigmaT", 0.012), doc.get("steps", 1000))
    raise ConfigError(f"unknown schedule kind {kind!r}")


def coeffs(spec: Schedule, t: float) -> NoiseCoeffs:
    """Coefficients (alpha, beta, alpha', beta') of a schedule at timestep t."""
    return spec.coeffs(t)


def make_noisy(x0: np.ndarray, eps: np.ndarray, c: NoiseCoeffs) -> np.ndarray:
    """Forward-process sample alpha*x0 + beta*eps."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ConfigError(f"shape mismatch: x0 {x0.shape} vs eps {eps.shape}")
    return c.alpha * x0 + c.beta * eps


class PredictionType:
    """Closed set of regression targets the network can be trained on."""

    EPSILON = "epsilon"
    VELOCITY = "velocity"
    SCORE = "score"
    ALL = (EPSILON, VELOCITY, SCORE)


def target(p: str, x0: np.ndarray, eps: np.ndarray, c: NoiseCoeffs) -> np.ndarray:
    """Regression target for prediction type p at coefficients c.

    epsilon -> eps, velocity -> alpha'*x0 + beta'*eps, score -> -eps/beta.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ConfigError(f"shape mismatch: x0 {x0.shape} vs eps {eps.shape}")
    if p == PredictionType.EPSILON:
        return eps.copy()
    if p == PredictionType.VELOCITY:
        return c.alpha_prime * x0 + c.beta_prime * eps
    if p == PredictionType.SCORE:
        if c.beta <= 0:
            raise SingularTimestepError(f"score target undefined at beta=0 (t={c.t})")
        return -eps / c.beta
    raise ConfigError(f"unknown prediction type {p!r}")


def velocity_target_arrays(schedule: Schedule, t: np.ndarray,
                           x0: np.ndarray, eps: np.ndarray):
    """Vectorized (x_t, velocity target) for a batch of per-sample timesteps."""
    alpha, beta, ap, bp = schedule.coeffs_arrays(t)
    col = (slice(None),) + (None,) * (x0.ndim - 1)
    x_t = alpha[col] * x0 + beta[col] * eps
    v = ap[col] * x0 + bp[col] * eps
    return x_t, v


def rf_loss(v_pred: np.ndarray, x0: np.ndarray, eps: np.ndarray) -> float:
    """Velocity-matching loss ||v_pred + x0 - eps||^2, batch-averaged.

    Accepts a single vector or a (batch, dim) array; the squared norm is summed
    over the last axis and averaged over the batch.
    """
    v_pred = np.asarray(v_pred, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if not (v_pred.shape == x0.shape == eps.shape):
        raise ConfigError("rf_loss arguments must share one shape")
    r = v_pred + x0 - eps
    sq = np.sum(r * r, axis=-1)
    return float(np.mean(sq)) if sq.ndim else float(sq)


class TimestepSampler:
    """Base class for the training-time distribution of t."""

    name = "base"

    def sample(self, rng: np.random.Generator, n: int | None = None):
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {"kind": self.name}


@dataclass(frozen=True)
class UniformSampler(TimestepSampler):
    """t ~ U(0, 1), clamped to [T_CLAMP, 1 - T_CLAMP]."""

    name = "uniform"

    def sample(self, rng, n=None):
        u = rng.random() if n is None else rng.random(n)
        return np.clip(u, T_CLAMP, 1.0 - T_CLAMP)


@dataclass(frozen=True)
class LogitNormalSampler(TimestepSampler):
    """t = logistic(u) with u ~ Normal(m, s); concentrates mass at mid noise."""

    m: float = 0.0
    s: float = 1.0
    name = "logit_normal"

    def __post_init__(self):
        if self.s <= 0:
            raise ConfigError(f"logit-normal scale must be > 0, got {self.s}")

    def sample(self, rng, n=None):
        u = rng.normal(self.m, self.s) if n is None else rng.normal(self.m, self.s, n)
        t = 1.0 / (1.0 + np.exp(-u))
        return np.clip(t, T_CLAMP, 1.0 - T_CLAMP)

    def to_dict(self):
        return {"kind": "logit_normal", "m": self.m, "s": self.s}


def sampler_from_dict(doc) -> TimestepSampler:
    if isinstance(doc, str):
        doc = {"kind": doc}
    kind = doc.get("kind")
    if kind == "uniform":
        return UniformSampler()
    if kind == "logit_normal":
        return LogitNormalSampler(m=doc.get("m", 0.0), s=doc.get("s", 1.0))
    raise ConfigError(f"unknown timestep sampler kind {kind!r}")


def sample_timestep(s: TimestepSampler, rng: np.random.Generator) -> float:
    """Draw one training timestep; result is strictly inside (0, 1)."""
    return float(s.sample(rng))


def ln_density(t, m: float = 0.0, s: float = 1.0):
    """Logit-normal density at t in (0, 1).

    (1 / (s sqrt(2 pi))) * (1 / (t (1 - t))) * exp(-(logit(t) - m)^2 / (2 s^2))
    """
    if s <= 0:
        raise ConfigError(f"scale must be > 0, got {s}")
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr <= 0.0) or np.any(t_arr >= 1.0):
        raise ConfigError("ln_density defined on open interval (0, 1)")
    logit = np.log(t_arr / (1.0 - t_arr))
    out = (np.exp(-((logit - m) ** 2) / (2.0 * s * s))
           / (s * math.sqrt(2.0 * math.pi) * t_arr * (1.0 - t_arr)))
    return float(out) if np.isscalar(t) else out


def snr(c: NoiseCoeffs) -> float:
    """Signal-to-noise ratio alpha^2 / beta^2."""
    if c.beta <= 0:
        raise SingularTimestepError(f"snr undefined at beta=0 (t={c.t})")
    return (c.alpha / c.beta) ** 2


def snr_prime_rf(t):
    """d/dt of the rectified-flow SNR (1-t)^2/t^2: closed form -2(1-t)/t^3."""
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr <= 0.0) or np.any(t_arr >= 1.0):
        raise SingularTimestepError("snr_prime_rf defined on open interval (0, 1)")
    out = -2.0 * (1.0 - t_arr) / t_arr**3
    return float(out) if np.isscalar(t) else out


def v_to_x0(x_t: np.ndarray, v: np.ndarray, t) -> np.ndarray:
    """Invert the rectified-flow interpolation: x0_hat = x_t - t * v.

    t may be a scalar or a per-sample vector matching the batch axis.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    t_arr = np.asarray(t, dtype=np.float64)
    if t_arr.ndim == 1 and x_t.ndim == 2:
        t_arr = t_arr[:, None]
    return x_t - t_arr * v
