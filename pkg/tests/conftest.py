import numpy as np
import pytest
import torch

from aliad.contrastive import EmbeddingSet
from aliad.data import SyntheticSpec, ViewSpec, gen_synthetic, split_dataset
from aliad.model import AliAdConfig


@pytest.fixture(autouse=True)
def float64_precision():
    from aliad.diffcore import set_precision

    set_precision("float64")
    yield


def random_embedding_set(num_views, batch, dim, seed=0, mask_prob=0.0):
    """Mag-normalized random embeddings with an optional random mask that
    always leaves at least one present view per sample."""
    g = torch.Generator().manual_seed(seed)
    z = torch.randn(num_views, batch, dim, generator=g)
    z = z / z.norm(dim=-1, keepdim=True) * dim**0.5
    if mask_prob > 0:
        mask = torch.rand(num_views, batch, generator=g) >= mask_prob
        mask[0, ~mask.any(0)] = True
    else:
        mask = torch.ones(num_views, batch, dtype=torch.bool)
    return EmbeddingSet(z, mask)


def normalized_weights(e: EmbeddingSet, seed=0, uniform=False):
    if uniform:
        w = e.mask.double()
    else:
        g = torch.Generator().manual_seed(seed)
        w = torch.rand(*e.mask.shape, generator=g) * e.mask
    return w / w.sum(0).clamp_min(1e-12)


def tiny_spec(**kw):
    defaults = dict(
        num_views=3,
        num_classes=3,
        window=32,
        samples_per_class=12,
        seed=0,
    )
    defaults.update(kw)
    return SyntheticSpec(**defaults)


@pytest.fixture(scope="session")
def tiny_dataset():
    return gen_synthetic(tiny_spec())


@pytest.fixture(scope="session")
def tiny_splits(tiny_dataset):
    train, val, test = split_dataset(tiny_dataset, [0.6, 0.2], seed=1)
    return train, val, test


def tiny_config(ds, **kw):
    from aliad.moe import GateConfig

    defaults = dict(
        embed_dim=8,
        epochs=2,
        gate=GateConfig(num_experts=4, top_k=2),
        seed=0,
    )
    defaults.update(kw)
    return AliAdConfig.for_dataset(ds, **defaults)
