"""Contrastive training of the pooling head against frozen text embeddings.

The objective is a symmetric cross-entropy over the cosine-similarity
matrix between L2-normalized pooled sequence embeddings and L2-normalized
text embeddings, at a fixed temperature.  Gradients are exact analytic
reverse-mode derivatives through the loss, the row normalization, and
every pooler tensor; the optimizer is standard bias-corrected Adam.

All training arithmetic is float32; loss values are reduced in float64.
Runs are bitwise deterministic for fixed seeds.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataio import Dataset, Episode, filter_episodes, split
from .errors import DataFormatError, NumericError, UsageError
from .pooler import (
    PoolerConfig,
    PoolerParams,
    SequenceBatch,
    forward_with_cache,
    gelu_grad,
    init_params,
    save_checkpoint,
)


@dataclass
class TrainConfig:
    """Optimization hyperparameters; defaults are the production recipe."""

    lr: float = 1e-4
    batch_size: int = 1024
    epochs: int = 100
    temperature: float = 0.07
    train_fraction: float = 0.9
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.temperature <= 0:
            raise UsageError(f"temperature must be > 0, got {self.temperature}")
        if self.lr < 0:
            raise UsageError(f"lr must be >= 0, got {self.lr}")
        if self.batch_size < 2:
            raise UsageError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.epochs < 1:
            raise UsageError(f"epochs must be >= 1, got {self.epochs}")
        if not 0.0 < self.train_fraction < 1.0:
            raise UsageError(
                f"train_fraction must be in (0, 1), got {self.train_fraction}"
            )
        if self.seed < 0:
            raise UsageError(f"seed must be non-negative, got {self.seed}")

    def to_dict(self) -> dict:
        return {
            "lr": self.lr,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "temperature": self.temperature,
            "train_fraction": self.train_fraction,
            "seed": self.seed,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
        }


def normalize_rows(m: np.ndarray) -> np.ndarray:
    """L2-normalize each row; zero rows are a numeric error."""
    m = np.asarray(m)
    if m.ndim != 2:
        raise UsageError(f"expected a 2-d matrix, got shape {m.shape}")
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise NumericError("cannot normalize zero-norm rows")
    return m / norms


def _cross_entropy_diag(logits: np.ndarray) -> float:
    """Mean over rows of -log softmax(row)[diagonal], reduced in float64."""
    a = logits.astype(np.float64, copy=False)
    m = a.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(a - m).sum(axis=1))
    return float(np.mean(lse - np.diagonal(a)))


def contrastive_loss(v: np.ndarray, t: np.ndarray, tau: float) -> float:
    """Symmetric contrastive loss over a batch of matched embedding pairs.

    ``v`` and ``t`` are (n, d) matrices whose rows are matched pairs; both
    are defensively re-normalized.  The loss is the mean of the two
    row-wise cross-entropies over v @ t.T / tau and t @ v.T / tau, so it is
    exactly symmetric in its arguments.
    """
    if tau <= 0:
        raise NumericError(f"temperature must be > 0, got {tau}")
    v = np.asarray(v)
    t = np.asarray(t)
    if v.shape != t.shape or v.ndim != 2:
        raise UsageError(
            f"v and t must be matching 2-d matrices, got {v.shape} and {t.shape}"
        )
    if v.shape[0] < 1:
        raise UsageError("need at least one row")
    if not (np.all(np.isfinite(v)) and np.all(np.isfinite(t))):
        raise NumericError("non-finite values in loss input")
    vn = normalize_rows(v)
    tn = normalize_rows(t)
    s_vt = vn @ tn.T / tau
    s_tv = tn @ vn.T / tau
    loss = 0.5 * (_cross_entropy_diag(s_vt) + _cross_entropy_diag(s_tv))
    return max(0.0, loss)


def _row_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    return e / e.sum(axis=1, keepdims=True)


def _pooler_backward(params: PoolerParams, cache: dict, dout: np.ndarray) -> dict:
    """Backpropagate dL/d(pooler output) into every parameter tensor."""
    cfg = params.config
    t = params.tensors
    b, max_len = cache["mask"].shape
    d, h, dh = cfg.d_model, cfg.n_heads, cfg.d_head

    # Output projection and MLP.
    d_w_out = cache["z"].T @ dout
    d_b_out = dout.sum(axis=0)
    dz = dout @ t["W_out"].T

    d_w_mlp2 = cache["g"].T @ dz
    d_b_mlp2 = dz.sum(axis=0)
    dg = dz @ t["W_mlp2"].T
    dm1 = dg * gelu_grad(cache["m1"])

    d_w_mlp1 = cache["y"].T @ dm1
    d_b_mlp1 = dm1.sum(axis=0)
    dy = dm1 @ t["W_mlp1"].T

    # Norm on the aggregated attention output.
    y_hat, y_inv = cache["y_hat"], cache["y_inv_std"]
    d_ln_attn_shift = dy.sum(axis=0)
    d_ln_attn_scale = (dy * y_hat).sum(axis=0)
    dyhat = dy * t["ln_attn_scale"]
    dattn = y_inv * (
        dyhat
        - dyhat.mean(axis=-1, keepdims=True)
        - y_hat * (dyhat * y_hat).mean(axis=-1, keepdims=True)
    )

    d_w_o = cache["ctx"].T @ dattn
    d_b_o = dattn.sum(axis=0)
    dctx = (dattn @ t["W_o"].T).reshape(b, h, dh)

    # Attention aggregation and masked softmax.
    weights, v = cache["weights"], cache["v"]
    dw = np.einsum("bhd,blhd->bhl", dctx, v)
    dv = np.einsum("bhl,bhd->blhd", weights, dctx)
    inner = (dw * weights).sum(axis=2, keepdims=True)
    dscores = weights * (dw - inner)  # padded keys keep exact zeros

    k, qp, scale = cache["k"], cache["qp"], cache["scale"]
    dqp = np.einsum("bhl,blhd->hd", dscores, k) * scale
    dk = np.einsum("bhl,hd->blhd", dscores, qp) * scale

    # Query/key/value projections.
    x2 = cache["x"].reshape(b * max_len, d)
    dk2 = dk.reshape(b * max_len, d)
    dv2 = dv.reshape(b * max_len, d)
    d_w_k = x2.T @ dk2
    d_b_k = dk2.sum(axis=0)
    d_w_v = x2.T @ dv2
    d_b_v = dv2.sum(axis=0)
    dx2 = dk2 @ t["W_k"].T + dv2 @ t["W_v"].T

    dqp_flat = dqp.reshape(1, d)
    d_w_q = t["q"].T @ dqp_flat
    d_b_q = dqp_flat[0]
    d_q = dqp_flat @ t["W_q"].T

    # Norm on the projected inputs.
    dx = dx2.reshape(b, max_len, d)
    x_hat, x_inv = cache["x_hat"], cache["x_inv_std"]
    d_ln_in_shift = dx.sum(axis=(0, 1))
    d_ln_in_scale = (dx * x_hat).sum(axis=(0, 1))
    dxhat = dx * t["ln_in_scale"]
    dx_pre = x_inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - x_hat * (dxhat * x_hat).mean(axis=-1, keepdims=True)
    )

    # Input projection and position table.
    f2 = cache["feats"].reshape(b * max_len, cfg.d_vis)
    dxp2 = dx_pre.reshape(b * max_len, d)
    d_w_in = f2.T @ dxp2
    d_b_in = dxp2.sum(axis=0)
    d_pos = dx_pre.sum(axis=0)

    return {
        "W_in": d_w_in,
        "b_in": d_b_in,
        "pos": d_pos,
        "q": d_q,
        "W_q": d_w_q,
        "b_q": d_b_q,
        "W_k": d_w_k,
        "b_k": d_b_k,
        "W_v": d_w_v,
        "b_v": d_b_v,
        "W_o": d_w_o,
        "b_o": d_b_o,
        "ln_in_scale": d_ln_in_scale,
        "ln_in_shift": d_ln_in_shift,
        "ln_attn_scale": d_ln_attn_scale,
        "ln_attn_shift": d_ln_attn_shift,
        "W_mlp1": d_w_mlp1,
        "b_mlp1": d_b_mlp1,
        "W_mlp2": d_w_mlp2,
        "b_mlp2": d_b_mlp2,
        "W_out": d_w_out,
        "b_out": d_b_out,
    }


def loss_and_grad(
    params: PoolerParams, batch: SequenceBatch, texts: np.ndarray, tau: float
) -> tuple[float, dict]:
    """Loss and its exact gradient w.r.t. every pooler parameter.

    The pipeline is forward -> row L2 normalization -> symmetric contrastive
    loss against the (constant) text embeddings.  Arithmetic runs in the
    dtype of ``params``; the loss value is reduced in float64.
    """
    if tau <= 0:
        raise NumericError(f"temperature must be > 0, got {tau}")
    dt = params.dtype
    texts = np.asarray(texts, dtype=dt)
    n = len(batch)
    if texts.shape[0] != n:
        raise UsageError(
            f"batch has {n} episodes but texts has {texts.shape[0]} rows"
        )
    if not np.all(np.isfinite(texts)):
        raise NumericError("non-finite values in text embeddings")

    out, cache = forward_with_cache(params, batch)
    norms = np.linalg.norm(out, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise NumericError("pooled embedding with zero norm; cannot normalize")
    vn = out / norms
    tn = normalize_rows(texts)

    s_vt = vn @ tn.T / tau
    s_tv = tn @ vn.T / tau
    loss = max(0.0, 0.5 * (_cross_entropy_diag(s_vt) + _cross_entropy_diag(s_tv)))

    p_vt = _row_softmax(s_vt)
    p_tv = _row_softmax(s_tv)
    eye = np.eye(n, dtype=dt)
    d_s = (p_vt - eye) + (p_tv - eye).T  # combined dL/d(s_vt), both CE terms
    dvn = d_s @ tn / (2.0 * n * tau)

    # Through the row normalization: v = u / |u|.
    dot = (vn * dvn).sum(axis=1, keepdims=True)
    dout = (dvn - vn * dot) / norms

    grads = _pooler_backward(params, cache, dout.astype(dt, copy=False))
    return loss, grads


def grad(
    params: PoolerParams, batch: SequenceBatch, texts: np.ndarray, tau: float
) -> dict:
    """Exact analytic gradient of the contrastive loss for every tensor."""
    return loss_and_grad(params, batch, texts, tau)[1]


def batch_loss(
    params: PoolerParams, batch: SequenceBatch, texts: np.ndarray, tau: float
) -> float:
    """Loss only (no gradient), same arithmetic path as training."""
    out, _ = forward_with_cache(params, batch)
    return contrastive_loss(out, np.asarray(texts, dtype=params.dtype), tau)


# --- Adam ---------------------------------------------------------------------

@dataclass
class AdamState:
    """First/second moment estimates plus the shared step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: PoolerParams) -> "AdamState":
        return cls(
            m={k: np.zeros_like(x) for k, x in params.tensors.items()},
            v={k: np.zeros_like(x) for k, x in params.tensors.items()},
        )


def adam_step(
    params: PoolerParams, grads: dict, state: AdamState, config: TrainConfig
) -> tuple[PoolerParams, AdamState]:
    """One bias-corrected Adam update, in place; returns (params, state)."""
    state.t += 1
    bc1 = 1.0 - config.beta1 ** state.t
    bc2 = 1.0 - config.beta2 ** state.t
    for name in params.names:
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= config.beta1
        m += (1.0 - config.beta1) * g
        v *= config.beta2
        v += (1.0 - config.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        params.tensors[name] -= config.lr * m_hat / (np.sqrt(v_hat) + config.eps)
    return params, state


# --- training loop -------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    seconds: float

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "seconds": self.seconds,
        }


@dataclass
class TrainResult:
    records: list[EpochRecord]
    params: PoolerParams
    best_params: PoolerParams
    best_epoch: int
    n_train: int
    n_val: int
    n_dropped: int
    checkpoint_path: Path | None = None
    best_checkpoint_path: Path | None = None


class _PackedEpisodes:
    """Episodes pre-padded once so per-batch assembly is a gather."""

    def __init__(self, episodes: list[Episode], max_len: int):
        n = len(episodes)
        d_vis = episodes[0].screens.shape[1]
        self.features = np.zeros((n, max_len, d_vis), dtype=np.float32)
        self.lengths = np.zeros(n, dtype=np.int64)
        self.texts = np.zeros((n, episodes[0].text_embedding.shape[0]), dtype=np.float32)
        for i, ep in enumerate(episodes):
            self.features[i, : ep.n_screens] = ep.screens
            self.lengths[i] = ep.n_screens
            self.texts[i] = ep.text_embedding
        self.max_len = max_len

    def batch(self, idx: np.ndarray) -> tuple[SequenceBatch, np.ndarray]:
        lengths = self.lengths[idx]
        mask = np.arange(self.max_len)[None, :] < lengths[:, None]
        sb = SequenceBatch(
            features=self.features[idx], mask=mask, lengths=lengths
        )
        return sb, self.texts[idx]


def _batch_slices(n: int, batch_size: int) -> list[np.ndarray]:
    """Consecutive index blocks; a trailing block of one is dropped unless
    it is the only block."""
    blocks = [np.arange(s, min(s + batch_size, n)) for s in range(0, n, batch_size)]
    if len(blocks) > 1 and len(blocks[-1]) < 2:
        blocks = blocks[:-1]
    return blocks


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    """Shuffle RNG derived from (seed, epoch) so resumption is reproducible."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, epoch))))


def best_checkpoint_path(path: str | Path) -> Path:
    path = Path(path)
    if path.suffix:
        return path.with_name(path.stem + ".best" + path.suffix)
    return path.with_name(path.name + ".best")


def _mean_loss(
    params: PoolerParams, packed: _PackedEpisodes, blocks: list[np.ndarray], tau: float
) -> float:
    total = 0.0
    count = 0
    for idx in blocks:
        sb, texts = packed.batch(idx)
        total += batch_loss(params, sb, texts, tau) * len(idx)
        count += len(idx)
    return total / count


def train(
    dataset: Dataset,
    pooler_config: PoolerConfig,
    train_config: TrainConfig,
    checkpoint_path: str | Path | None = None,
) -> TrainResult:
    """Full training run: split, epoch loop, validation, checkpointing.

    Episodes longer than the pooler's max_len cannot be pooled and are
    dropped up front.  The train/validation split uses the dataset's own
    split_seed; the train seed drives parameter init and the per-epoch
    shuffles (derived from (seed, epoch), so any epoch's order can be
    reproduced in isolation).  The final parameters are written to
    ``checkpoint_path`` and the best-validation parameters next to it.
    """
    usable = filter_episodes(dataset.episodes, 1, pooler_config.max_len)
    n_dropped = len(dataset.episodes) - len(usable)
    filtered = Dataset(
        episodes=usable, split_seed=dataset.split_seed, meta=dataset.meta
    )
    train_eps, val_eps = split(
        filtered, train_config.train_fraction, dataset.split_seed
    )
    if len(train_eps) < 2:
        raise DataFormatError(
            f"need at least 2 train episodes after filtering, got {len(train_eps)}"
        )
    if not val_eps:
        raise DataFormatError("validation split is empty")

    packed_train = _PackedEpisodes(train_eps, pooler_config.max_len)
    packed_val = _PackedEpisodes(val_eps, pooler_config.max_len)
    val_blocks = _batch_slices(len(val_eps), train_config.batch_size)

    params = init_params(pooler_config, train_config.seed)
    state = AdamState.zeros_like(params)
    tau = train_config.temperature

    records: list[EpochRecord] = []
    best_val = np.inf
    best_epoch = 0
    best_params = params.copy()

    n_train = len(train_eps)
    for epoch in range(1, train_config.epochs + 1):
        t0 = time.perf_counter()
        order = _epoch_rng(train_config.seed, epoch).permutation(n_train)
        total = 0.0
        count = 0
        for block in _batch_slices(n_train, train_config.batch_size):
            idx = order[block]
            sb, texts = packed_train.batch(idx)
            loss, grads = loss_and_grad(params, sb, texts, tau)
            adam_step(params, grads, state, train_config)
            total += loss * len(idx)
            count += len(idx)
        train_loss = total / count
        val_loss = _mean_loss(params, packed_val, val_blocks, tau)
        seconds = time.perf_counter() - t0
        records.append(
            EpochRecord(
                epoch=epoch,
                train_loss=train_loss,
                val_loss=val_loss,
                seconds=seconds,
            )
        )
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_params = params.copy()

    result = TrainResult(
        records=records,
        params=params,
        best_params=best_params,
        best_epoch=best_epoch,
        n_train=len(train_eps),
        n_val=len(val_eps),
        n_dropped=n_dropped,
    )
    if checkpoint_path is not None:
        checkpoint_path = Path(checkpoint_path)
        extra = {"train": train_config.to_dict(), "dataset_meta": dataset.meta}
        save_checkpoint(checkpoint_path, params, extra=extra)
        best_path = best_checkpoint_path(checkpoint_path)
        save_checkpoint(
            best_path, best_params, extra={**extra, "best_epoch": best_epoch}
        )
        result.checkpoint_path = checkpoint_path
        result.best_checkpoint_path = best_path
    return result
