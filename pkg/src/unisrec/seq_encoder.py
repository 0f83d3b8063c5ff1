"""Self-attentive sequence encoder: causal multi-head attention blocks over
universal item vectors plus absolute position embeddings, read out at the
last real position and L2-normalized."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import InvalidParameterError
from .rng import truncated_normal

NEG_INF = -1e9


@dataclass
class TransformerConfig:
    n_layers: int = 2
    n_heads: int = 2
    d_v: int = 64
    d_ff: int = 256
    n_max: int = 50
    dropout: float = 0.2

    def validate(self):
        if self.n_layers < 0 or self.n_heads < 1 or self.n_max < 1:
            raise InvalidParameterError("bad transformer config")
        if self.d_v % self.n_heads != 0:
            raise InvalidParameterError("d_v must be divisible by head count")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidParameterError("dropout must be in [0, 1)")


def init_encoder_params(cfg: TransformerConfig, init_gen):
    cfg.validate()
    d, ff = cfg.d_v, cfg.d_ff
    params = {"pos.P": ad.param(truncated_normal(init_gen, (cfg.n_max, d)), "pos.P")}
    for layer in range(cfg.n_layers):
        p = f"layer{layer}"
        for proj in ("Wq", "Wk", "Wv", "Wo"):
            params[f"{p}.attn.{proj}"] = ad.param(
                truncated_normal(init_gen, (d, d)), f"{p}.attn.{proj}"
            )
        for bias in ("bq", "bk", "bv", "bo"):
            params[f"{p}.attn.{bias}"] = ad.param(
                np.zeros(d, dtype=np.float32), f"{p}.attn.{bias}"
            )
        params[f"{p}.ln1.g"] = ad.param(np.ones(d, dtype=np.float32), f"{p}.ln1.g")
        params[f"{p}.ln1.b"] = ad.param(np.zeros(d, dtype=np.float32), f"{p}.ln1.b")
        params[f"{p}.ffn.W1"] = ad.param(truncated_normal(init_gen, (d, ff)), f"{p}.ffn.W1")
        params[f"{p}.ffn.b1"] = ad.param(np.zeros(ff, dtype=np.float32), f"{p}.ffn.b1")
        params[f"{p}.ffn.W2"] = ad.param(truncated_normal(init_gen, (ff, d)), f"{p}.ffn.W2")
        params[f"{p}.ffn.b2"] = ad.param(np.zeros(d, dtype=np.float32), f"{p}.ffn.b2")
        params[f"{p}.ln2.g"] = ad.param(np.ones(d, dtype=np.float32), f"{p}.ln2.g")
        params[f"{p}.ln2.b"] = ad.param(np.zeros(d, dtype=np.float32), f"{p}.ln2.b")
    return params


def encoder_param_names(cfg: TransformerConfig):
    names = ["pos.P"]
    for layer in range(cfg.n_layers):
        p = f"layer{layer}"
        names += [f"{p}.attn.{w}" for w in ("Wq", "Wk", "Wv", "Wo", "bq", "bk", "bv", "bo")]
        names += [f"{p}.ln1.g", f"{p}.ln1.b",
                  f"{p}.ffn.W1", f"{p}.ffn.b1", f"{p}.ffn.W2", f"{p}.ffn.b2",
                  f"{p}.ln2.g", f"{p}.ln2.b"]
    return names


def build_input(item_vecs, pos_table, id_vecs=None):
    """f_j = v_j + p_j (+ e_j in transductive mode), positions 0..n-1.

    `item_vecs`: (B, n, d_V) Tensor of already-truncated item representations.
    """
    item_vecs = ad.as_tensor(item_vecs)
    _, n, _ = item_vecs.shape
    positions = ad.gather_rows(pos_table, np.arange(n))
    out = item_vecs + positions
    if id_vecs is not None:
        id_vecs = ad.as_tensor(id_vecs)
        if id_vecs.shape != item_vecs.shape:
            raise InvalidParameterError(
                f"id_vecs shape {id_vecs.shape} != item_vecs shape {item_vecs.shape}"
            )
        out = out + id_vecs
    return out


def attention_mask(lengths, n):
    """(B, 1, n, n) additive mask: causal plus key-padding."""
    lengths = np.asarray(lengths)
    causal = np.triu(np.full((n, n), NEG_INF, dtype=np.float32), k=1)
    key_pad = np.where(
        np.arange(n)[None, :] < lengths[:, None], 0.0, NEG_INF
    ).astype(np.float32)  # (B, n)
    mask = causal[None, None, :, :] + key_pad[:, None, None, :]
    # Keep each row finite: a position may always attend to itself.
    eye = np.eye(n, dtype=bool)[None, None, :, :]
    return np.where(eye, 0.0, mask)


def encode_sequences(f0, lengths, cfg: TransformerConfig, params,
                     train=False, dropout_gen=None):
    """Run the block stack and return unit-norm readouts at the last real position.

    `f0`: (B, n, d_V) Tensor from build_input; `lengths`: real length per row.
    """
    lengths = np.asarray(lengths)
    if (lengths < 1).any():
        raise InvalidParameterError("all-padding input sequence")
    b, n, d = f0.shape
    if n > cfg.n_max:
        raise InvalidParameterError(f"sequence window {n} exceeds n_max {cfg.n_max}")
    h = cfg.n_heads
    dh = d // h
    mask = attention_mask(lengths, n)
    scale = 1.0 / float(np.sqrt(dh))

    def drop(x):
        return ad.dropout(x, cfg.dropout, dropout_gen, train)

    f = f0
    for layer in range(cfg.n_layers):
        p = f"layer{layer}"
        q = ad.matmul(f, params[f"{p}.attn.Wq"]) + params[f"{p}.attn.bq"]
        k = ad.matmul(f, params[f"{p}.attn.Wk"]) + params[f"{p}.attn.bk"]
        v = ad.matmul(f, params[f"{p}.attn.Wv"]) + params[f"{p}.attn.bv"]
        q = ad.transpose(ad.reshape(q, (b, n, h, dh)), (0, 2, 1, 3))
        k = ad.transpose(ad.reshape(k, (b, n, h, dh)), (0, 2, 1, 3))
        v = ad.transpose(ad.reshape(v, (b, n, h, dh)), (0, 2, 1, 3))
        scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), scale) + mask
        attn = ad.softmax(scores, axis=-1)
        ctx = ad.matmul(attn, v)  # (B, H, n, dh)
        ctx = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (b, n, d))
        ctx = ad.matmul(ctx, params[f"{p}.attn.Wo"]) + params[f"{p}.attn.bo"]
        f = ad.layer_norm(f + drop(ctx), params[f"{p}.ln1.g"], params[f"{p}.ln1.b"])
        ff = ad.matmul(ad.relu(ad.matmul(f, params[f"{p}.ffn.W1"]) + params[f"{p}.ffn.b1"]),
                       params[f"{p}.ffn.W2"]) + params[f"{p}.ffn.b2"]
        f = ad.layer_norm(f + drop(ff), params[f"{p}.ln2.g"], params[f"{p}.ln2.b"])

    last = ad.take_positions(f, lengths - 1)
    return ad.l2_normalize_rows(last)
