"""Two MLP branches projecting audio and visual features into label space."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .numkit import as_matrix

ACTIVATIONS = ("relu", "tanh")
MAGIC = b"XTLC"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class EncoderConfig:
    label_dim: int
    audio_dim: int = 128
    visual_dim: int = 1024
    hidden: tuple[int, ...] = (1024, 1024, 100)
    activation: str = "relu"
    init_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not self.hidden:
            raise ValueError("hidden must list at least one layer width")
        dims = (self.label_dim, self.audio_dim, self.visual_dim) + self.hidden
        if any(d < 1 for d in dims):
            raise ValueError(f"all dimensions must be >= 1, got {dims}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if not 0 <= self.init_seed < 2**64:
            raise ValueError("init_seed must fit in an unsigned 64-bit integer")

    def layer_dims(self, input_dim: int) -> list[tuple[int, int]]:
        widths = (input_dim,) + self.hidden + (self.label_dim,)
        return list(zip(widths[:-1], widths[1:]))


@dataclass
class BranchParams:
    """Weights (in x out) and bias rows for one branch; the last layer is the classifier."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("branch needs matching, non-empty weight and bias lists")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {k}: weight {w.shape} and bias {b.shape} do not fit")
            if k and self.weights[k - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {k} input {w.shape[0]} does not chain from layer {k - 1}")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @classmethod
    def from_arrays(cls, arrays) -> "BranchParams":
        arrays = list(arrays)
        return cls(arrays[0::2], arrays[1::2])

    def zeros_like(self) -> "BranchParams":
        return BranchParams([np.zeros_like(w) for w in self.weights],
                            [np.zeros_like(b) for b in self.biases])


@dataclass
class DualParams:
    audio: BranchParams
    visual: BranchParams

    def __post_init__(self):
        if self.audio.output_dim != self.visual.output_dim:
            raise ValueError(
                f"branches end in different label dims: {self.audio.output_dim} vs {self.visual.output_dim}"
            )

    @property
    def label_dim(self) -> int:
        return self.audio.output_dim

    def arrays(self) -> list[np.ndarray]:
        """Every parameter array, audio branch first, layer by layer (W, b)."""
        return self.audio.arrays() + self.visual.arrays()

    def with_arrays(self, arrays) -> "DualParams":
        arrays = list(arrays)
        k = 2 * len(self.audio.weights)
        return DualParams(BranchParams.from_arrays(arrays[:k]), BranchParams.from_arrays(arrays[k:]))

    def copy(self) -> "DualParams":
        return self.with_arrays([x.copy() for x in self.arrays()])

    def n_params(self) -> int:
        return sum(x.size for x in self.arrays())


def _init_branch(rng: np.random.Generator, dims) -> BranchParams:
    weights, biases = [], []
    for fan_in, fan_out in dims:
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return BranchParams(weights, biases)


def init_params(cfg: EncoderConfig) -> DualParams:
    """Glorot-uniform weights and zero biases, deterministic in ``cfg.init_seed``."""
    audio_rng, visual_rng = np.random.default_rng(cfg.init_seed).spawn(2)
    return DualParams(
        _init_branch(audio_rng, cfg.layer_dims(cfg.audio_dim)),
        _init_branch(visual_rng, cfg.layer_dims(cfg.visual_dim)),
    )


@dataclass
class ForwardCache:
    params_id: int
    shapes: tuple
    activation: str
    inputs: list[np.ndarray] = field(default_factory=list)   # input to each layer
    preacts: list[np.ndarray] = field(default_factory=list)  # affine output of each layer


def _shapes(params: BranchParams) -> tuple:
    return tuple(w.shape for w in params.weights)


def _activate(z, activation):
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "tanh":
        return np.tanh(z)
    raise ValueError(f"unknown activation {activation!r}")


def forward(params: BranchParams, x, activation: str = "relu"):
    """Run one branch. Hidden layers are affine + activation; the classifier is affine only.

    Returns ``(embeddings, cache)``.
    """
    h = as_matrix(x, "x")
    if h.shape[1] != params.input_dim:
        raise ValueError(f"input has {h.shape[1]} columns, branch expects {params.input_dim}")
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    cache = ForwardCache(id(params), _shapes(params), activation)
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        cache.inputs.append(h)
        z = h @ w + b
        cache.preacts.append(z)
        h = z if k == last else _activate(z, activation)
    return h, cache


def backward(params: BranchParams, cache: ForwardCache, grad_out) -> BranchParams:
    """Parameter gradients of ``sum(grad_out * forward(params, x))``."""
    if cache.params_id != id(params) or cache.shapes != _shapes(params):
        raise ValueError("forward cache does not belong to these parameters")
    g = as_matrix(grad_out, "grad_out")
    if g.shape != cache.preacts[-1].shape:
        raise ValueError(f"upstream gradient {g.shape} does not match output {cache.preacts[-1].shape}")
    n_layers = len(params.weights)
    gw = [None] * n_layers
    gb = [None] * n_layers
    for k in range(n_layers - 1, -1, -1):
        if k != n_layers - 1:
            z = cache.preacts[k]
            if cache.activation == "relu":
                g = g * (z > 0.0)
            else:
                t = np.tanh(z)
                g = g * (1.0 - t * t)
        gw[k] = cache.inputs[k].T @ g
        gb[k] = g.sum(axis=0)
        if k:
            g = g @ params.weights[k].T
    return BranchParams(gw, gb)


def embed(params: BranchParams, x, activation: str = "relu", chunk: int = 64) -> np.ndarray:
    """Forward pass in row chunks, keeping only the embeddings."""
    x = as_matrix(x, "x")
    if x.shape[0] == 0:
        return np.zeros((0, params.output_dim))
    return np.concatenate(
        [forward(params, x[i:i + chunk], activation)[0] for i in range(0, x.shape[0], chunk)]
    )


# -- checkpoint file ---------------------------------------------------------


def save_checkpoint(path, cfg: EncoderConfig, params: DualParams) -> None:
    """Little-endian binary: magic, version, encoder config, then every layer."""
    out = bytearray(MAGIC)
    out += struct.pack("<I", FORMAT_VERSION)
    out += struct.pack("<III", cfg.audio_dim, cfg.visual_dim, cfg.label_dim)
    out += struct.pack("<I", len(cfg.hidden))
    out += struct.pack(f"<{len(cfg.hidden)}I", *cfg.hidden)
    out += struct.pack("<BQ", ACTIVATIONS.index(cfg.activation), cfg.init_seed)
    for branch in (params.audio, params.visual):
        for w, b in zip(branch.weights, branch.biases):
            out += struct.pack("<II", *w.shape)
            out += np.ascontiguousarray(w, dtype="<f8").tobytes()
            out += np.ascontiguousarray(b, dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(out))


def load_checkpoint(path) -> tuple[EncoderConfig, DualParams]:
    data = Path(path).read_bytes()
    pos = 0

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(data):
            raise ValueError(f"{path}: truncated checkpoint")
        vals = struct.unpack_from(fmt, data, pos)
        pos += size
        return vals

    def take_f64(count):
        nonlocal pos
        if pos + 8 * count > len(data):
            raise ValueError(f"{path}: truncated checkpoint")
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).astype(np.float64)
        pos += 8 * count
        return arr

    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    pos = 4
    (version,) = take("<I")
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    audio_dim, visual_dim, label_dim = take("<III")
    (n_hidden,) = take("<I")
    hidden = take(f"<{n_hidden}I")
    act, seed = take("<BQ")
    cfg = EncoderConfig(label_dim=label_dim, audio_dim=audio_dim, visual_dim=visual_dim,
                        hidden=hidden, activation=ACTIVATIONS[act], init_seed=seed)
    branches = []
    for input_dim in (audio_dim, visual_dim):
        weights, biases = [], []
        for fan_in, fan_out in cfg.layer_dims(input_dim):
            rows, cols = take("<II")
            if (rows, cols) != (fan_in, fan_out):
                raise ValueError(f"{path}: layer shape {rows}x{cols}, expected {fan_in}x{fan_out}")
            weights.append(take_f64(rows * cols).reshape(rows, cols))
            biases.append(take_f64(cols))
        branches.append(BranchParams(weights, biases))
    if pos != len(data):
        raise ValueError(f"{path}: {len(data) - pos} trailing bytes")
    return cfg, DualParams(*branches)


def with_label_dim(cfg: EncoderConfig, label_dim: int) -> EncoderConfig:
    return replace(cfg, label_dim=label_dim)
