"""A look inside the item adaptor: how whitening recenters raw text
embeddings and how the gating network distributes items across experts.

Run:  python3 demos/02_item_adaptor_geometry.py
"""

import numpy as np

from unisrec import autodiff as ad
from unisrec.corpus import SyntheticSpec, generate_synthetic_corpus
from unisrec.item_encoder import gate
from unisrec.model import ModelConfig, UniSRecModel
from unisrec.rng import RngStreams

spec = SyntheticSpec(domains=1, items_per_domain=200, users_per_domain=1,
                     topics=4, dim=16, seed=3)
table, _ = generate_synthetic_corpus(spec)
x = table.rows[::2]  # original channel only
print(f"raw embeddings: {x.shape}, mean norm {np.linalg.norm(x, axis=1).mean():.3f}")

model = UniSRecModel(
    ModelConfig(d_w=16, d_v=8, n_experts=4, n_layers=1, n_heads=2,
                n_max=8, dropout=0.0),
    RngStreams(0),
)

with ad.no_grad():
    v = model.encode_items(x, train=False, noise_active=False).data
    gates = gate(ad.as_tensor(x), model.params["moe.W2"], model.params["moe.W3"],
                 noise_gen=None, noise_active=False).data

print(f"adapted vectors: {v.shape}, mean norm {np.linalg.norm(v, axis=1).mean():.3f}")
print(f"gate rows sum to 1: max |sum - 1| = {np.abs(gates.sum(axis=1) - 1).max():.2e}")
print("mean gate weight per expert:", np.round(gates.mean(axis=0), 3))
print("items routed mostly (>0.5) to one expert:",
      int((gates.max(axis=1) > 0.5).sum()), "of", len(gates))

# Cosine structure: items from the same latent topic should stay closer
# after adaptation than items from different topics.
unit = v / np.linalg.norm(v, axis=1, keepdims=True)
sims = unit @ unit.T
print(f"mean pairwise cosine similarity: {sims[np.triu_indices_from(sims, 1)].mean():.3f}")
