import numpy as np
import pytest

from unisrec.corpus import SyntheticSpec, generate_synthetic_corpus
from unisrec.model import ModelConfig, UniSRecModel
from unisrec.rng import RngStreams

TINY_SPEC = dict(domains=2, items_per_domain=30, users_per_domain=12,
                 topics=3, dim=12, seq_len_min=6, seq_len_max=10, seed=5)


@pytest.fixture(scope="session")
def tiny_corpus():
    """Small two-domain synthetic corpus shared across tests (read-only)."""
    spec = SyntheticSpec(**TINY_SPEC)
    table, per_domain = generate_synthetic_corpus(spec)
    return table, per_domain


@pytest.fixture()
def tiny_model(tiny_corpus):
    table, _ = tiny_corpus
    cfg = ModelConfig(d_w=table.dim, d_v=8, n_experts=3, n_layers=1,
                      n_heads=2, n_max=8, dropout=0.0)
    return UniSRecModel(cfg, RngStreams(0))


def unit_rows(gen, b, d):
    """Random unit-norm float64 rows."""
    m = gen.standard_normal((b, d))
    return m / np.linalg.norm(m, axis=1, keepdims=True)
