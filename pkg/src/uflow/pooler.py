"""Attention-pooling head that turns a screen-feature sequence into one vector.

Per-screen 1024-d features are projected to a 256-d working space, learnable
temporal position embeddings are added, and a single learnable query token
attends over the valid positions with multi-head attention under a padding
mask.  The normalized attention output passes through a small GELU MLP and a
final projection to the 1536-d text-embedding space.

The module also owns the checkpoint container (magic ``UFPC``): a JSON config
block followed by a tensor table in canonical parameter order, all little
endian, f32 payloads.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.special import erf

from .errors import DataFormatError, NumericError, UsageError

CHECKPOINT_MAGIC = b"UFPC"
CHECKPOINT_VERSION = 1

LN_EPS = 1e-6
_SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class PoolerConfig:
    """Dimensions of the pooling head; defaults match the production setup."""

    d_vis: int = 1024
    d_model: int = 256
    d_out: int = 1536
    n_heads: int = 4
    max_len: int = 6
    mlp_hidden: int = 1024

    def __post_init__(self):
        for name in ("d_vis", "d_model", "d_out", "n_heads", "max_len", "mlp_hidden"):
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be positive, got {getattr(self, name)}")
        if self.d_model % self.n_heads != 0:
            raise UsageError(
                f"d_model ({self.d_model}) must be divisible by n_heads "
                f"({self.n_heads})"
            )

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return {
            "d_vis": self.d_vis,
            "d_model": self.d_model,
            "d_out": self.d_out,
            "n_heads": self.n_heads,
            "max_len": self.max_len,
            "mlp_hidden": self.mlp_hidden,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PoolerConfig":
        try:
            return cls(**{k: int(d[k]) for k in (
                "d_vis", "d_model", "d_out", "n_heads", "max_len", "mlp_hidden")})
        except KeyError as exc:
            raise DataFormatError(f"pooler config: missing field {exc}") from exc


def param_shapes(config: PoolerConfig) -> dict[str, tuple[int, ...]]:
    """Canonical parameter table: name -> shape, in serialization order."""
    d, h = config.d_model, config.mlp_hidden
    return {
        "W_in": (config.d_vis, d),
        "b_in": (d,),
        "pos": (config.max_len, d),
        "q": (1, d),
        "W_q": (d, d),
        "b_q": (d,),
        "W_k": (d, d),
        "b_k": (d,),
        "W_v": (d, d),
        "b_v": (d,),
        "W_o": (d, d),
        "b_o": (d,),
        "ln_in_scale": (d,),
        "ln_in_shift": (d,),
        "ln_attn_scale": (d,),
        "ln_attn_shift": (d,),
        "W_mlp1": (d, h),
        "b_mlp1": (h,),
        "W_mlp2": (h, d),
        "b_mlp2": (d,),
        "W_out": (d, config.d_out),
        "b_out": (config.d_out,),
    }


@dataclass
class PoolerParams:
    """All learnable tensors of the pooling head, keyed by canonical name."""

    config: PoolerConfig
    tensors: dict[str, np.ndarray]

    def __post_init__(self):
        shapes = param_shapes(self.config)
        if set(self.tensors) != set(shapes):
            missing = sorted(set(shapes) - set(self.tensors))
            extra = sorted(set(self.tensors) - set(shapes))
            raise DataFormatError(
                f"parameter table mismatch: missing {missing}, unexpected {extra}"
            )
        for name, shape in shapes.items():
            t = self.tensors[name]
            if t.shape != shape:
                raise DataFormatError(
                    f"parameter {name}: shape {t.shape} does not match {shape}"
                )
            if not np.all(np.isfinite(t)):
                raise NumericError(f"parameter {name} contains non-finite values")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    @property
    def names(self) -> list[str]:
        return list(param_shapes(self.config))

    @property
    def n_parameters(self) -> int:
        return sum(t.size for t in self.tensors.values())

    @property
    def dtype(self) -> np.dtype:
        return self.tensors["W_in"].dtype

    def astype(self, dtype) -> "PoolerParams":
        return PoolerParams(
            config=self.config,
            tensors={k: v.astype(dtype) for k, v in self.tensors.items()},
        )

    def copy(self) -> "PoolerParams":
        return PoolerParams(
            config=self.config,
            tensors={k: v.copy() for k, v in self.tensors.items()},
        )


def init_params(config: PoolerConfig, seed: int) -> PoolerParams:
    """Seeded initialization.

    Weight matrices draw from normal(0, 0.02) clipped at two standard
    deviations; ``pos`` and ``q`` draw from plain normal(0, 0.02); biases
    start at zero and layer-norm scales/shifts at one/zero.  Draws happen
    in canonical parameter order so the result is bitwise reproducible.
    """
    if seed < 0:
        raise UsageError(f"seed must be non-negative, got {seed}")
    rng = np.random.Generator(np.random.PCG64(seed))
    std = 0.02
    tensors: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(config).items():
        if name.startswith("W_"):
            w = rng.normal(0.0, std, size=shape)
            tensors[name] = np.clip(w, -2 * std, 2 * std).astype(np.float32)
        elif name in ("pos", "q"):
            tensors[name] = rng.normal(0.0, std, size=shape).astype(np.float32)
        elif name.endswith("_scale"):
            tensors[name] = np.ones(shape, dtype=np.float32)
        else:  # biases and layer-norm shifts
            tensors[name] = np.zeros(shape, dtype=np.float32)
    return PoolerParams(config=config, tensors=tensors)


@dataclass
class SequenceBatch:
    """Zero-padded batch of screen-feature sequences with a validity mask."""

    features: np.ndarray  # (B, max_len, d_vis) float32, zero beyond lengths
    mask: np.ndarray      # (B, max_len) bool, True = real frame
    lengths: np.ndarray   # (B,) int64

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        self.mask = np.asarray(self.mask, dtype=bool)
        self.lengths = np.asarray(self.lengths, dtype=np.int64)
        if self.features.ndim != 3:
            raise UsageError(f"features must be 3-d, got shape {self.features.shape}")
        b, max_len, _ = self.features.shape
        if self.mask.shape != (b, max_len) or self.lengths.shape != (b,):
            raise UsageError(
                f"inconsistent batch shapes: features {self.features.shape}, "
                f"mask {self.mask.shape}, lengths {self.lengths.shape}"
            )
        if np.any(self.lengths < 1) or np.any(self.lengths > max_len):
            raise NumericError(
                f"sequence lengths must lie in [1, {max_len}], got "
                f"{self.lengths.tolist()}"
            )
        expected = np.arange(max_len)[None, :] < self.lengths[:, None]
        if not np.array_equal(self.mask, expected):
            raise NumericError("mask does not match lengths")
        if np.any(self.features[~self.mask] != 0.0):
            raise NumericError("padded positions must be all-zero")
        if not np.all(np.isfinite(self.features)):
            raise NumericError("features contain non-finite values")

    def __len__(self) -> int:
        return self.features.shape[0]


def pack_sequences(sequences: list[np.ndarray], max_len: int) -> SequenceBatch:
    """Zero-pad variable-length screen arrays into a SequenceBatch."""
    if not sequences:
        raise UsageError("cannot pack an empty list of sequences")
    d_vis = np.asarray(sequences[0]).shape[-1]
    b = len(sequences)
    features = np.zeros((b, max_len, d_vis), dtype=np.float32)
    lengths = np.zeros(b, dtype=np.int64)
    for i, seq in enumerate(sequences):
        arr = np.asarray(seq, dtype=np.float32)
        if arr.ndim != 2 or arr.shape[1] != d_vis:
            raise UsageError(
                f"sequence {i}: expected shape (n, {d_vis}), got {arr.shape}"
            )
        n = arr.shape[0]
        if n < 1:
            raise NumericError(f"sequence {i} has no frames; cannot pool")
        if n > max_len:
            raise UsageError(
                f"sequence {i} has {n} frames, longer than max_len {max_len}"
            )
        features[i, :n] = arr
        lengths[i] = n
    mask = np.arange(max_len)[None, :] < lengths[:, None]
    return SequenceBatch(features=features, mask=mask, lengths=lengths)


def _layer_norm(x: np.ndarray, scale: np.ndarray, shift: np.ndarray):
    """Layer norm over the last axis; returns (out, xhat, inv_std) for reuse."""
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv_std
    return xhat * scale + shift, xhat, inv_std


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact (erf-based) GELU."""
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    """Derivative of the exact GELU."""
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    return cdf + x * pdf


def forward_with_cache(params: PoolerParams, batch: SequenceBatch):
    """Run the pooler and keep every intermediate needed for the backward pass.

    Computes in the dtype of ``params`` (float32 in production, float64 for
    finite-difference replicas).  Returns (output, cache) where output has
    shape (B, d_out).
    """
    cfg = params.config
    b, max_len, d_vis = batch.features.shape
    if max_len != cfg.max_len or d_vis != cfg.d_vis:
        raise UsageError(
            f"batch shape {batch.features.shape[1:]} does not match config "
            f"(max_len={cfg.max_len}, d_vis={cfg.d_vis})"
        )
    t = params.tensors
    dt = params.dtype
    feats = batch.features.astype(dt, copy=False)
    mask = batch.mask
    h, dh = cfg.n_heads, cfg.d_head

    x_pre = feats @ t["W_in"] + t["b_in"] + t["pos"]
    x, x_hat, x_inv_std = _layer_norm(x_pre, t["ln_in_scale"], t["ln_in_shift"])

    qp = (t["q"] @ t["W_q"] + t["b_q"]).reshape(h, dh)
    k = (x @ t["W_k"] + t["b_k"]).reshape(b, max_len, h, dh)
    v = (x @ t["W_v"] + t["b_v"]).reshape(b, max_len, h, dh)

    scale = 1.0 / np.sqrt(dh)
    scores = np.einsum("hd,blhd->bhl", qp, k) * scale
    valid = mask[:, None, :]
    neg = np.where(valid, scores, -np.inf)
    m = neg.max(axis=2, keepdims=True)
    e = np.exp(neg - m)  # exp(-inf) == 0.0, so padded keys get exact zeros
    denom = e.sum(axis=2, keepdims=True)
    weights = e / denom

    ctx = np.einsum("bhl,blhd->bhd", weights, v).reshape(b, cfg.d_model)
    attn = ctx @ t["W_o"] + t["b_o"]
    y, y_hat, y_inv_std = _layer_norm(attn, t["ln_attn_scale"], t["ln_attn_shift"])

    m1 = y @ t["W_mlp1"] + t["b_mlp1"]
    g = gelu(m1)
    z = g @ t["W_mlp2"] + t["b_mlp2"]
    out = z @ t["W_out"] + t["b_out"]

    cache = {
        "feats": feats,
        "mask": mask,
        "x_hat": x_hat,
        "x_inv_std": x_inv_std,
        "x": x,
        "qp": qp,
        "k": k,
        "v": v,
        "weights": weights,
        "ctx": ctx,
        "y_hat": y_hat,
        "y_inv_std": y_inv_std,
        "y": y,
        "m1": m1,
        "g": g,
        "z": z,
        "scale": scale,
    }
    return out, cache


def forward(params: PoolerParams, batch: SequenceBatch) -> np.ndarray:
    """Pool a batch into (B, d_out) embeddings (unnormalized)."""
    out, _ = forward_with_cache(params, batch)
    return out


def attention_weights(params: PoolerParams, batch: SequenceBatch) -> np.ndarray:
    """Per-head attention weights, shape (B, n_heads, max_len).

    Rows sum to 1 over the valid positions; padded positions are exactly 0.
    """
    _, cache = forward_with_cache(params, batch)
    return cache["weights"]


# --- checkpoint container ----------------------------------------------------

def save_checkpoint(path: str | Path, params: PoolerParams, extra: dict | None = None) -> None:
    """Write params to a UFPC checkpoint file (canonical tensor order)."""
    config_blob = {"pooler": params.config.to_dict()}
    if extra:
        config_blob["extra"] = extra
    config_bytes = json.dumps(config_blob, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(config_bytes)))
        f.write(config_bytes)
        names = params.names
        f.write(struct.pack("<I", len(names)))
        for name in names:
            tensor = np.ascontiguousarray(params.tensors[name], dtype="<f4")
            name_bytes = name.encode("utf-8")
            f.write(struct.pack("<H", len(name_bytes)))
            f.write(name_bytes)
            f.write(struct.pack("<I", tensor.ndim))
            for dim in tensor.shape:
                f.write(struct.pack("<I", dim))
            f.write(tensor.tobytes())


def load_checkpoint(path: str | Path) -> PoolerParams:
    """Read a UFPC checkpoint, validating magic, version, and tensor table."""
    path = Path(path)
    name = path.name
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataFormatError(f"{name}: cannot read checkpoint: {exc}") from exc

    view = memoryview(raw)
    off = 0

    def take(n: int, what: str) -> memoryview:
        nonlocal off
        if off + n > len(raw):
            raise DataFormatError(
                f"{name}: truncated at {what}: expected {n} bytes at offset "
                f"{off}, file has {len(raw)}"
            )
        chunk = view[off : off + n]
        off += n
        return chunk

    magic = bytes(take(4, "magic"))
    if magic != CHECKPOINT_MAGIC:
        raise DataFormatError(
            f"{name}: bad magic {magic!r} (expected {CHECKPOINT_MAGIC!r})"
        )
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != CHECKPOINT_VERSION:
        raise DataFormatError(
            f"{name}: unsupported version {version} (expected {CHECKPOINT_VERSION})"
        )
    (config_len,) = struct.unpack("<I", take(4, "config length"))
    try:
        config_blob = json.loads(bytes(take(config_len, "config JSON")).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"{name}: config JSON unreadable: {exc}") from exc
    if "pooler" not in config_blob:
        raise DataFormatError(f"{name}: config JSON missing 'pooler' section")
    config = PoolerConfig.from_dict(config_blob["pooler"])

    (count,) = struct.unpack("<I", take(4, "tensor count"))
    expected_names = list(param_shapes(config))
    if count != len(expected_names):
        raise DataFormatError(
            f"{name}: tensor count {count} does not match the {len(expected_names)} "
            f"declared parameters"
        )
    tensors: dict[str, np.ndarray] = {}
    for i, expected in enumerate(expected_names):
        (name_len,) = struct.unpack("<H", take(2, f"tensor {i} name length"))
        tname = bytes(take(name_len, f"tensor {i} name")).decode("utf-8")
        if tname != expected:
            raise DataFormatError(
                f"{name}: tensor {i} is {tname!r}, expected {expected!r} "
                f"(canonical order)"
            )
        (rank,) = struct.unpack("<I", take(4, f"tensor {tname} rank"))
        dims = tuple(
            struct.unpack("<I", take(4, f"tensor {tname} dim {j}"))[0]
            for j in range(rank)
        )
        n_elem = int(np.prod(dims)) if dims else 1
        payload = take(n_elem * 4, f"tensor {tname} payload")
        tensors[tname] = (
            np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
        )
    if off != len(raw):
        raise DataFormatError(
            f"{name}: {len(raw) - off} trailing bytes after tensor table"
        )
    return PoolerParams(config=config, tensors=tensors)


def checkpoint_id(path: str | Path) -> str:
    """Stable identifier for a checkpoint file: sha256 of its bytes."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def slice_params_max_len(params: PoolerParams, max_len: int) -> PoolerParams:
    """Params for a shorter max_len by truncating the position table."""
    if not 1 <= max_len <= params.config.max_len:
        raise UsageError(
            f"max_len must be in [1, {params.config.max_len}], got {max_len}"
        )
    cfg = replace(params.config, max_len=max_len)
    tensors = {k: v.copy() for k, v in params.tensors.items()}
    tensors["pos"] = tensors["pos"][:max_len].copy()
    return PoolerParams(config=cfg, tensors=tensors)
