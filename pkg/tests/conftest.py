from __future__ import annotations

import numpy as np
import pytest

from uflow.dataio import FEATURE_DIM, TEXT_DIM, Dataset, Episode, SynthConfig, synth_dataset
from uflow.pooler import PoolerConfig, PoolerParams, param_shapes


def make_episode(eid: str, n_screens: int, fill: float = 0.0, **kwargs) -> Episode:
    """Cheap episode with constant screens; good enough for structural tests."""
    screens = np.full((n_screens, FEATURE_DIM), fill, dtype=np.float32)
    text = np.zeros(TEXT_DIM, dtype=np.float32)
    text[0] = 1.0
    return Episode(
        id=eid, description=f"episode {eid}", screens=screens,
        text_embedding=text, **kwargs,
    )


def random_params(config: PoolerConfig, seed: int, scale: float = 0.5) -> PoolerParams:
    """O(1)-scale random parameters, well conditioned for finite differences."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_shapes(config).items():
        if name.endswith("_scale"):
            tensors[name] = (1.0 + 0.3 * rng.normal(size=shape)).astype(np.float64)
        else:
            tensors[name] = (scale * rng.normal(size=shape)).astype(np.float64)
    return PoolerParams(config=config, tensors=tensors)


def fd_gradients(params, batch, texts, tau: float, h: float = 1e-3) -> dict:
    """Central finite differences of the training loss for every tensor."""
    from uflow.training import batch_loss

    out = {}
    for name in params.names:
        t = params.tensors[name]
        fd = np.zeros_like(t)
        it = np.nditer(t, flags=["multi_index"])
        for _ in it:
            ix = it.multi_index
            orig = t[ix]
            t[ix] = orig + h
            lp = batch_loss(params, batch, texts, tau)
            t[ix] = orig - h
            lm = batch_loss(params, batch, texts, tau)
            t[ix] = orig
            fd[ix] = (lp - lm) / (2 * h)
        out[name] = fd
    return out


def max_rel_err(analytic: np.ndarray, fd: np.ndarray) -> float:
    denom = max(np.abs(analytic).max(), np.abs(fd).max(), 1e-8)
    return float(np.abs(analytic - fd).max() / denom)


@pytest.fixture(scope="session")
def tiny_config() -> PoolerConfig:
    return PoolerConfig(d_vis=8, d_model=4, d_out=6, n_heads=2, max_len=4, mlp_hidden=8)


@pytest.fixture(scope="session")
def small_dataset() -> Dataset:
    return synth_dataset(
        SynthConfig(n_archetypes=4, n_episodes=80, noise_sigma=0.1, seed=11)
    )
