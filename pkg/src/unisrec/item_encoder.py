"""Universal textual item representation: parametric whitening experts
combined by a noise-regularized mixture-of-experts gating router."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .rng import truncated_normal


def init_adaptor_params(d_w, d_v, n_experts, init_gen):
    """Create the adaptor's named parameter tensors (b/W1 per expert, W2, W3)."""
    params = {}
    for k in range(n_experts):
        params[f"moe.expert{k}.b"] = ad.param(
            np.zeros(d_w, dtype=np.float32), f"moe.expert{k}.b"
        )
        params[f"moe.expert{k}.W1"] = ad.param(
            truncated_normal(init_gen, (d_w, d_v)), f"moe.expert{k}.W1"
        )
    params["moe.W2"] = ad.param(truncated_normal(init_gen, (d_w, n_experts)), "moe.W2")
    params["moe.W3"] = ad.param(truncated_normal(init_gen, (d_w, n_experts)), "moe.W3")
    return params


def adaptor_param_names(n_experts):
    names = []
    for k in range(n_experts):
        names += [f"moe.expert{k}.b", f"moe.expert{k}.W1"]
    return names + ["moe.W2", "moe.W3"]


def whiten(x, b, w1):
    """(x - b) @ W1; x may be a single vector or a batch of rows."""
    return ad.matmul(ad.as_tensor(x) - b, w1)


def gate(x, w2, w3, noise_gen=None, noise_active=False):
    """Expert weights: softmax(x @ W2 + eps * softplus(x @ W3)).

    Gaussian noise is resampled per call from `noise_gen` when active
    (pre-training only); otherwise the routing is deterministic.
    """
    x = ad.as_tensor(x)
    logits = ad.matmul(x, w2)
    if noise_active:
        eps = noise_gen.standard_normal(logits.shape).astype(np.float32)
        logits = logits + ad.mul(ad.softplus(ad.matmul(x, w3)), eps)
    return ad.softmax(logits, axis=-1)


def encode_items(x, params, n_experts, noise_gen=None, noise_active=False):
    """Convex combination of the whitened vectors, weighted by the gate.

    `x`: (B, d_W) array or Tensor of raw text embeddings -> (B, d_V) Tensor.
    """
    x = ad.as_tensor(x)
    g = gate(x, params["moe.W2"], params["moe.W3"], noise_gen, noise_active)
    out = None
    for k in range(n_experts):
        xk = whiten(x, params[f"moe.expert{k}.b"], params[f"moe.expert{k}.W1"])
        weighted = ad.mul(xk, _column(g, k))
        out = weighted if out is None else out + weighted
    return out


def _column(g, k):
    """Select column k of a (B, G) tensor as (B, 1), keeping gradients."""
    b, n = g.shape
    mask = np.zeros((n, 1), dtype=np.float32)
    mask[k, 0] = 1.0
    return ad.matmul(g, mask)
