"""Numerical backends for the training inner loop.

Two implementations of the hot kernels (fused forward/backward pass and the
AdamW update) are provided: a pure-numpy one and a compiled Cython one that
drives BLAS directly and fuses the elementwise work. The compiled module is
optional; selection happens at import time and can be forced with
DITSCALE_BACKEND=python|compiled. Both backends implement the same math; they
agree to floating-point roundoff (summation order differs inside BLAS), and
each is bitwise deterministic for a fixed seed.

Forward-mode directional derivatives (used for divergence / exact likelihood)
and plain inference forwards are numpy-only shared code.
"""

from __future__ import annotations

import math
import os

import numpy as np

from ..errors import ConfigError
from .model import ModelConfig, ParamSet

# tanh-form GELU constants
_GELU_C1 = math.sqrt(2.0 / math.pi)
_GELU_C2 = 0.044715


def gelu(x: np.ndarray) -> np.ndarray:
    """GELU, tanh form: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))."""
    u = _GELU_C1 * x * (1.0 + _GELU_C2 * x * x)
    return 0.5 * x * (1.0 + np.tanh(u))


def gelu_prime(x: np.ndarray) -> np.ndarray:
    """Exact derivative of the tanh-form GELU."""
    return _gelu_pair(x)[1]


def _gelu_pair(x: np.ndarray):
    """(gelu(x), gelu'(x)) sharing a single tanh evaluation."""
    x2 = x * x
    u = _GELU_C1 * x * (1.0 + _GELU_C2 * x2)
    t = np.tanh(u)
    val = 0.5 * x * (1.0 + t)
    du = _GELU_C1 * (1.0 + 3.0 * _GELU_C2 * x2)
    deriv = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
    return val, deriv


def _forward_cached(params: ParamSet, feats: np.ndarray, want_primes: bool = False):
    """Forward pass caching activations (and GELU derivatives when asked)."""
    acts, primes = [], []
    h = feats
    weights, biases = params.weights, params.biases
    for w, b in zip(weights[:-1], biases[:-1]):
        z = h @ w
        z += b
        if want_primes:
            h, dp = _gelu_pair(z)
            primes.append(dp)
        else:
            h = gelu(z)
        acts.append(h)
    out = h @ weights[-1] + biases[-1]
    return out, acts, primes


def py_fused_loss_grads(params: ParamSet, feats: np.ndarray, target: np.ndarray,
                        cond: np.ndarray):
    """Loss ||out - target||^2 (batch mean) and exact gradients, numpy path."""
    cfg = params.config
    n = feats.shape[0]
    out, acts, primes = _forward_cached(params, feats, want_primes=True)
    r = out - target
    loss = float(np.sum(r * r)) / n

    grad_flat = np.zeros_like(params.flat)
    gset = ParamSet(cfg, grad_flat)
    gw, gb = gset.weights, gset.biases
    weights = params.weights

    dout = (2.0 / n) * r
    gw[-1][...] = acts[-1].T @ dout
    gb[-1][...] = dout.sum(axis=0)
    da = dout @ weights[-1].T
    for l in range(cfg.depth - 1, 0, -1):
        dz = da * primes[l]
        gw[l][...] = acts[l - 1].T @ dz
        gb[l][...] = dz.sum(axis=0)
        da = dz @ weights[l].T
    dz0 = da * primes[0]
    gw[0][...] = feats.T @ dz0
    gb[0][...] = dz0.sum(axis=0)

    emb_start = cfg.data_dim + cfg.time_embed_dim
    d_emb = dz0 @ weights[0][emb_start:, :].T
    np.add.at(gset.embedding, cond, d_emb)
    return loss, grad_flat


def py_adamw(flat: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray,
             step: int, lr: float, beta1: float, beta2: float,
             eps: float, weight_decay: float) -> None:
    """Decoupled-weight-decay Adam update, in place. step is 1-based."""
    flat *= 1.0 - lr * weight_decay
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**step)
    v_hat = v / (1.0 - beta2**step)
    flat -= lr * m_hat / (np.sqrt(v_hat) + eps)


class PythonBackend:
    """Pure-numpy kernels (always available)."""

    name = "python"

    fused_loss_grads = staticmethod(py_fused_loss_grads)
    adamw = staticmethod(py_adamw)


class CompiledBackend:
    """Cython kernels; set up lazily so the import stays optional."""

    name = "compiled"

    def __init__(self, kernels):
        self._k = kernels

    def fused_loss_grads(self, params: ParamSet, feats, target, cond):
        cfg = params.config
        feats = np.ascontiguousarray(feats, dtype=np.float64)
        target = np.ascontiguousarray(target, dtype=np.float64)
        cond = np.ascontiguousarray(cond, dtype=np.int64)
        grad = np.zeros_like(params.flat)
        loss = self._k.fused_loss_grads(
            params.flat, feats, target, cond, grad,
            cfg.depth, cfg.width, cfg.in_dim, cfg.data_dim,
            cfg.num_classes, cfg.cond_embed_dim)
        return loss, grad

    def assemble_rf(self, params: ParamSet, x0, eps, t, cond, freqs,
                    feats, target):
        """Fill straight-line features/target buffers in one compiled pass."""
        cfg = params.config
        self._k.assemble_rf(params.flat, x0, eps, t, cond, freqs, feats,
                            target, cfg.depth, cfg.width, cfg.in_dim,
                            cfg.data_dim, cfg.cond_embed_dim)

    def adamw(self, flat, grad, m, v, step, lr, beta1, beta2, eps, weight_decay):
        self._k.adamw(flat, grad, m, v, step, lr, beta1, beta2, eps, weight_decay)


def _load_compiled():
    try:
        from . import _kernels
    except ImportError:
        return None
    return CompiledBackend(_kernels)


_FORCED = os.environ.get("DITSCALE_BACKEND", "auto").lower()
if _FORCED == "python":
    _DEFAULT = PythonBackend()
elif _FORCED == "compiled":
    _DEFAULT = _load_compiled()
    if _DEFAULT is None:
        raise ImportError("DITSCALE_BACKEND=compiled but ditscale.netcore._kernels "
                          "is not built; run pip install -e . --no-build-isolation")
elif _FORCED == "auto":
    _DEFAULT = _load_compiled() or PythonBackend()
else:
    raise ConfigError(f"DITSCALE_BACKEND must be auto|python|compiled, got {_FORCED!r}")


def default_backend():
    """Backend chosen at import time (compiled when built, numpy otherwise)."""
    return _DEFAULT


def available_backends():
    out = [PythonBackend()]
    compiled = _load_compiled()
    if compiled is not None:
        out.append(compiled)
    return out


def forward(params: ParamSet, x_t, t, cond) -> np.ndarray:
    """Predicted velocity for noisy samples x_t at timesteps t, condition cond.

    Shared numpy path (evaluation is batched and not kernel-bound). Accepts a
    single sample or a batch; returns matching shape.
    """
    from .model import assemble_features
    single = np.asarray(x_t).ndim == 1
    feats = assemble_features(params, x_t, t, cond)
    out, _, _ = _forward_cached(params, feats)
    return out[0] if single else out


def forward_jvp(params: ParamSet, x_t, t, cond, dxs: np.ndarray):
    """Forward pass plus directional derivatives with respect to x_t.

    dxs has shape (k, n, data_dim): k directions per batch of n samples. Only
    the x_t block of the input varies; time features and embeddings are fixed.
    Returns (out (n, data_dim), douts (k, n, data_dim)).
    """
    from .model import assemble_features
    cfg = params.config
    feats = assemble_features(params, x_t, t, cond)
    out, _, primes = _forward_cached(params, feats, want_primes=True)
    weights = params.weights
    w_in_x = weights[0][:cfg.data_dim, :]
    douts = np.empty((dxs.shape[0],) + out.shape, dtype=np.float64)
    for j in range(dxs.shape[0]):
        dh = (dxs[j] @ w_in_x) * primes[0]
        for l in range(1, cfg.depth):
            dh = (dh @ weights[l]) * primes[l]
        douts[j] = dh @ weights[-1]
    return out, douts
