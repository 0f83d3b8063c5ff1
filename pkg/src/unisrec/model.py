"""Full model assembly: MoE item adaptor + self-attentive sequence encoder,
with an optional ID-embedding table for the transductive setting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import item_encoder, seq_encoder
from .errors import InvalidParameterError
from .rng import RngStreams, STREAM_DROPOUT, STREAM_GATING, STREAM_INIT
from .seq_encoder import TransformerConfig


@dataclass
class ModelConfig:
    d_w: int = 768  # raw text-embedding width (fixed by the embedding file)
    d_v: int = 300  # model width
    n_experts: int = 8
    n_layers: int = 2
    n_heads: int = 2
    d_ff: int = 0  # 0 -> 4 * d_v
    n_max: int = 50
    dropout: float = 0.2

    def __post_init__(self):
        if self.d_ff == 0:
            self.d_ff = 4 * self.d_v

    def transformer(self) -> TransformerConfig:
        return TransformerConfig(
            n_layers=self.n_layers,
            n_heads=self.n_heads,
            d_v=self.d_v,
            d_ff=self.d_ff,
            n_max=self.n_max,
            dropout=self.dropout,
        )

    def validate(self):
        if self.d_w < 1 or self.d_v < 1 or self.n_experts < 1:
            raise InvalidParameterError("bad model config")
        self.transformer().validate()


class UniSRecModel:
    """Named parameter tensors plus batched forward passes."""

    def __init__(self, cfg: ModelConfig, streams: RngStreams, n_id_items=0):
        cfg.validate()
        self.cfg = cfg
        self.streams = streams
        init_gen = streams.stream(STREAM_INIT)
        self.params = {}
        self.params.update(item_encoder.init_adaptor_params(cfg.d_w, cfg.d_v, cfg.n_experts, init_gen))
        self.params.update(seq_encoder.init_encoder_params(cfg.transformer(), init_gen))
        if n_id_items:
            self.add_id_table(n_id_items)

    def add_id_table(self, n_items):
        """Zero-initialized ID embeddings (transductive fine-tuning starts at
        the text-only solution)."""
        self.params["id_embed.E"] = ad.param(
            np.zeros((n_items, self.cfg.d_v), dtype=np.float32), "id_embed.E"
        )

    @property
    def has_id_table(self):
        return "id_embed.E" in self.params

    def zero_grads(self):
        for p in self.params.values():
            p.zero_grad()

    def adaptor_names(self):
        return item_encoder.adaptor_param_names(self.cfg.n_experts)

    def backbone_names(self):
        return seq_encoder.encoder_param_names(self.cfg.transformer())

    # -- forward --------------------------------------------------------

    def encode_items(self, x, train=False, noise_active=False):
        """(B, d_W) raw text embeddings -> (B, d_V) universal item vectors."""
        gen = self.streams.stream(STREAM_GATING) if noise_active else None
        return item_encoder.encode_items(
            x, self.params, self.cfg.n_experts, noise_gen=gen, noise_active=noise_active
        )

    def pad_contexts(self, contexts):
        """Right-pad raw-embedding contexts into (B, n, d_W) + lengths.

        Each context is a (len, d_W) array; longer-than-n_max contexts keep
        only the most recent n_max items.
        """
        clipped = [c[-self.cfg.n_max:] for c in contexts]
        lengths = np.array([len(c) for c in clipped])
        if (lengths < 1).any():
            raise InvalidParameterError("empty context sequence")
        n = int(lengths.max())
        x = np.zeros((len(clipped), n, self.cfg.d_w), dtype=np.float32)
        for i, c in enumerate(clipped):
            x[i, : len(c)] = c
        return x, lengths

    def encode_contexts(self, contexts, train=False, noise_active=False, id_indices=None):
        """Encode raw-embedding contexts into unit-norm sequence representations.

        `id_indices`: optional per-context list of row indices into the ID
        table (transductive mode), aligned with the items.
        """
        x, lengths = self.pad_contexts(contexts)
        b, n, _ = x.shape
        flat = ad.reshape(ad.as_tensor(x), (b * n, self.cfg.d_w))
        items = ad.reshape(self.encode_items(flat, train, noise_active), (b, n, self.cfg.d_v))
        id_vecs = None
        if id_indices is not None:
            if not self.has_id_table:
                raise InvalidParameterError("model has no ID-embedding table")
            idx = np.zeros((b, n), dtype=np.int64)
            for i, ids in enumerate(id_indices):
                ids = ids[-self.cfg.n_max:]
                if len(ids) != lengths[i]:
                    raise InvalidParameterError("id_indices misaligned with contexts")
                idx[i, : len(ids)] = ids
            id_vecs = ad.reshape(
                ad.gather_rows(self.params["id_embed.E"], idx.reshape(-1)),
                (b, n, self.cfg.d_v),
            )
            # Zero out padded positions so they carry no ID signal.
            pad = (np.arange(n)[None, :] < lengths[:, None]).astype(np.float32)
            id_vecs = ad.mul(id_vecs, pad[:, :, None])
        f0 = seq_encoder.build_input(items, self.params["pos.P"], id_vecs)
        gen = self.streams.stream(STREAM_DROPOUT)
        return seq_encoder.encode_sequences(
            f0, lengths, self.cfg.transformer(), self.params,
            train=train, dropout_gen=gen,
        )
