"""Conditional velocity-field network: configuration, parameters, checkpoints.

The network is a dense feed-forward map. Its input is the concatenation of
the noisy sample x_t (data_dim), sinusoidal time features (time_embed_dim),
and a learned class embedding (cond_embed_dim); hidden layers use GELU and the
output is a linear read-out of size data_dim. Class index num_classes selects
the null (unconditional) embedding row used for classifier-free guidance.

Parameter layout (one flat float64 vector, in this order):

    W_in  (in_dim, width)   row-major
    b_in  (width,)
    for each hidden layer l = 1 .. depth-1:
        W_l (width, width), b_l (width,)
    W_out (width, data_dim), b_out (data_dim,)
    embedding ((num_classes + 1), cond_embed_dim)   last row = null embedding

Checkpoint format (little-endian): magic b"DSCP", uint32 version, uint32
header length, UTF-8 JSON header holding the ModelConfig fields, then the flat
parameter vector as float64.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ConfigError, StoreError

_CKPT_MAGIC = b"DSCP"
_CKPT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Shape of the velocity network.

    depth counts the GELU layers (input layer plus depth-1 hidden layers);
    width is their common dimension.
    """

    depth: int
    width: int
    data_dim: int = 2
    num_classes: int = 4
    time_embed_dim: int = 8
    cond_embed_dim: int = 4

    def __post_init__(self):
        for name in ("depth", "width", "data_dim", "num_classes",
                     "time_embed_dim", "cond_embed_dim"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.time_embed_dim % 2 != 0:
            raise ConfigError(f"time_embed_dim must be even, got {self.time_embed_dim}")

    @property
    def in_dim(self) -> int:
        return self.data_dim + self.time_embed_dim + self.cond_embed_dim

    @property
    def null_class(self) -> int:
        return self.num_classes

    @property
    def aspect_ratio(self) -> float:
        return self.width / self.depth

    @classmethod
    def from_aspect(cls, depth: int, aspect_ratio: int, **kwargs) -> "ModelConfig":
        """Family constructor: width = aspect_ratio * depth (fixed-shape sweeps)."""
        return cls(depth=depth, width=int(aspect_ratio) * depth, **kwargs)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        return cls(**doc)


def param_count(config: ModelConfig) -> int:
    """Exact number of scalar parameters for a config."""
    w, d = config.width, config.data_dim
    n = config.in_dim * w + w                      # input layer
    n += (config.depth - 1) * (w * w + w)          # hidden layers
    n += w * d + d                                 # output layer
    n += (config.num_classes + 1) * config.cond_embed_dim
    return n


def train_flops_per_sample(config: ModelConfig) -> int:
    """Training cost per sample under the 6-FLOPs-per-parameter rule."""
    return 6 * param_count(config)


def layout(config: ModelConfig):
    """Ordered (name, shape, start, stop) slices into the flat vector."""
    w, d = config.width, config.data_dim
    entries = [("w_in", (config.in_dim, w)), ("b_in", (w,))]
    for l in range(1, config.depth):
        entries.append((f"w_h{l}", (w, w)))
        entries.append((f"b_h{l}", (w,)))
    entries.append(("w_out", (w, d)))
    entries.append(("b_out", (d,)))
    entries.append(("emb", (config.num_classes + 1, config.cond_embed_dim)))
    out, off = [], 0
    for name, shape in entries:
        size = int(np.prod(shape))
        out.append((name, shape, off, off + size))
        off += size
    return out


class ParamSet:
    """Dense parameters stored as one flat float64 vector with named views.

    Views share memory with the flat vector, so in-place optimizer updates on
    `flat` are visible through them.
    """

    def __init__(self, config: ModelConfig, flat: np.ndarray):
        expected = param_count(config)
        flat = np.ascontiguousarray(flat, dtype=np.float64)
        if flat.shape != (expected,):
            raise ConfigError(f"flat vector has shape {flat.shape}, expected ({expected},)")
        self.config = config
        self.flat = flat
        self._views = {}
        for name, shape, start, stop in layout(config):
            self._views[name] = self.flat[start:stop].reshape(shape)

    def view(self, name: str) -> np.ndarray:
        return self._views[name]

    @property
    def weights(self):
        """Input + hidden + output weight matrices, in forward order."""
        names = ["w_in"] + [f"w_h{l}" for l in range(1, self.config.depth)] + ["w_out"]
        return [self._views[n] for n in names]

    @property
    def biases(self):
        names = ["b_in"] + [f"b_h{l}" for l in range(1, self.config.depth)] + ["b_out"]
        return [self._views[n] for n in names]

    @property
    def embedding(self) -> np.ndarray:
        return self._views["emb"]

    def copy(self) -> "ParamSet":
        return ParamSet(self.config, self.flat.copy())

    def save(self, path):
        header = json.dumps({"config": self.config.to_dict()}).encode("utf-8")
        with open(path, "wb") as f:
            f.write(_CKPT_MAGIC)
            f.write(struct.pack("<II", _CKPT_VERSION, len(header)))
            f.write(header)
            f.write(self.flat.astype("<f8").tobytes())

    @classmethod
    def load(cls, path) -> "ParamSet":
        with open(path, "rb") as f:
            magic = f.read(4)
            if magic != _CKPT_MAGIC:
                raise StoreError(f"{path}: not a ditscale checkpoint")
            version, hlen = struct.unpack("<II", f.read(8))
            if version != _CKPT_VERSION:
                raise StoreError(f"{path}: unsupported checkpoint version {version}")
            header = json.loads(f.read(hlen).decode("utf-8"))
            config = ModelConfig.from_dict(header["config"])
            raw = f.read()
        flat = np.frombuffer(raw, dtype="<f8").astype(np.float64)
        return cls(config, flat)


def init(config: ModelConfig, rng: np.random.Generator) -> ParamSet:
    """He-style initialization: weights ~ N(0, 2/fan_in), biases 0, embeddings
    ~ N(0, 0.02^2). Draw order follows the flat layout, so a given seed yields
    bitwise-identical parameters."""
    flat = np.zeros(param_count(config), dtype=np.float64)
    params = ParamSet(config, flat)
    for name, shape, _, _ in layout(config):
        view = params.view(name)
        if name == "emb":
            view[...] = rng.normal(0.0, 0.02, size=shape)
        elif name.startswith("w_"):
            fan_in = shape[0]
            view[...] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
        # biases stay zero
    return params


def time_features(t, dim: int) -> np.ndarray:
    """Sinusoidal features of t at frequencies pi * 2^k, k = 0 .. dim/2 - 1,
    ordered [sin f0 t, ..., sin f_last t, cos f0 t, ..., cos f_last t]."""
    t_arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
    freqs = np.pi * (2.0 ** np.arange(dim // 2))
    phase = t_arr[:, None] * freqs[None, :]
    half = dim // 2
    out = np.empty((t_arr.shape[0], dim), dtype=np.float64)
    np.sin(phase, out=out[:, :half])
    np.cos(phase, out=out[:, half:])
    return out


def assemble_features(params: ParamSet, x_t: np.ndarray, t, cond) -> np.ndarray:
    """Build the network input [x_t | time features | class embedding].

    cond entries must lie in [0, num_classes]; num_classes selects the null row.
    """
    cfg = params.config
    x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
    n = x_t.shape[0]
    if x_t.shape[1] != cfg.data_dim:
        raise ConfigError(f"x_t has dim {x_t.shape[1]}, expected {cfg.data_dim}")
    t_arr = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
    cond_arr = np.broadcast_to(np.asarray(cond, dtype=np.int64), (n,))
    if np.any(cond_arr < 0) or np.any(cond_arr > cfg.num_classes):
        raise ConfigError(f"condition index outside [0, {cfg.num_classes}]")
    feats = np.empty((n, cfg.in_dim), dtype=np.float64)
    feats[:, :cfg.data_dim] = x_t
    feats[:, cfg.data_dim:cfg.data_dim + cfg.time_embed_dim] = time_features(t_arr, cfg.time_embed_dim)
    feats[:, cfg.data_dim + cfg.time_embed_dim:] = params.embedding[cond_arr]
    return feats
