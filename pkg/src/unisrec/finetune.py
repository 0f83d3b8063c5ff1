"""Parameter-efficient adaptation to a target domain: inductive (text-only)
or transductive (text + ID) fine-tuning with a frozen backbone."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import InvalidParameterError
from .model import UniSRecModel
from .numeric import softmax_t

log = logging.getLogger("unisrec")

INDUCTIVE = "inductive"
TRANSDUCTIVE = "transductive"


@dataclass
class FreezePlan:
    trainable: set
    frozen: set

    def validate(self, model: UniSRecModel):
        names = set(model.params)
        if self.trainable & self.frozen:
            raise InvalidParameterError("trainable and frozen sets overlap")
        if self.trainable | self.frozen != names:
            raise InvalidParameterError("freeze plan does not cover all parameters")


def make_freeze_plan(model: UniSRecModel, mode, adaptor_only_whitening=False) -> FreezePlan:
    """Inductive: tune the MoE adaptor; transductive: adaptor + ID table.

    `adaptor_only_whitening` restricts tuning to the experts' b/W1 (the
    narrower reading), leaving the router frozen.
    """
    if mode not in (INDUCTIVE, TRANSDUCTIVE):
        raise InvalidParameterError(f"unknown fine-tuning mode {mode!r}")
    adaptor = set(model.adaptor_names())
    if adaptor_only_whitening:
        adaptor -= {"moe.W2", "moe.W3"}
    trainable = set(adaptor)
    if mode == TRANSDUCTIVE:
        if not model.has_id_table:
            raise InvalidParameterError("transductive mode requires an ID-embedding table")
        trainable.add("id_embed.E")
    frozen = set(model.params) - trainable
    plan = FreezePlan(trainable=trainable, frozen=frozen)
    plan.validate(model)
    return plan


def sample_negatives(positive, pool, k, gen):
    """k items uniform without replacement from `pool`, excluding the positive."""
    candidates = [r for r in pool if r.key != positive.key]
    if len(candidates) <= k:
        log.warning("negative pool (%d) <= k (%d); using whole pool", len(candidates), k)
        return list(candidates)
    idx = gen.choice(len(candidates), size=k, replace=False)
    return [candidates[i] for i in idx]


def inductive_scores(s, candidate_vecs):
    """Softmax over s . v_c for the candidate item vectors (temperature 1).

    `s`: (d,) array; `candidate_vecs`: (C, d) array -> (C,) probabilities.
    """
    candidate_vecs = np.asarray(candidate_vecs)
    if candidate_vecs.shape[0] == 0:
        raise InvalidParameterError("empty candidate set")
    return softmax_t(candidate_vecs @ np.asarray(s), tau=1.0)


def transductive_scores(s_tilde, item_vecs, id_vecs):
    """Softmax over s~ . (v_i + e_i) for every target-domain item."""
    item_vecs = np.asarray(item_vecs)
    id_vecs = np.asarray(id_vecs)
    if item_vecs.shape != id_vecs.shape:
        raise InvalidParameterError("item/ID embedding tables misaligned")
    return softmax_t((item_vecs + id_vecs) @ np.asarray(s_tilde), tau=1.0)


def apply_freeze_plan(model: UniSRecModel, plan: FreezePlan):
    """Flip requires_grad per the plan so backward never touches frozen tensors."""
    plan.validate(model)
    for name, p in model.params.items():
        p.requires_grad = name in plan.trainable
        p.zero_grad()


@dataclass
class FinetuneBatch:
    contexts: list  # list of (len, d_W) arrays
    context_ids: list | None  # per-context item indices (transductive)
    positive_idx: np.ndarray  # (B,) index of positive within candidates
    candidate_vecs: np.ndarray | None  # (B, C, d_W): per-row sampled candidates
    candidate_ids: np.ndarray | None  # (B, C) ID-table rows (transductive)
    shared_item_vecs: np.ndarray | None = None  # (C, d_W): full-vocabulary softmax


def _cross_entropy(logits, positive_idx):
    b, c = logits.shape
    onehot = np.zeros((b, c), dtype=np.float32)
    onehot[np.arange(b), positive_idx] = 1.0
    pos = ad.tsum(ad.mul(logits, onehot), axis=-1)
    lse = ad.reshape(ad.logsumexp(logits, axis=-1, keepdims=True), (b,))
    return ad.tsum(lse - pos)


def finetune_loss(batch: FinetuneBatch, model: UniSRecModel, mode, train=True):
    """Cross-entropy of the positive under the mode's scoring rule.

    Inductive rows carry their own sampled candidate set; transductive rows
    share the full target vocabulary (exact softmax). Gating noise stays
    off during fine-tuning.
    """
    id_indices = batch.context_ids if mode == TRANSDUCTIVE else None
    s = model.encode_contexts(batch.contexts, train=train, noise_active=False,
                              id_indices=id_indices)  # (B, d_V)
    b = len(batch.contexts)
    d_v = model.cfg.d_v
    if batch.shared_item_vecs is not None:
        v = model.encode_items(batch.shared_item_vecs, train=train, noise_active=False)
        if mode == TRANSDUCTIVE:
            v = v + model.params["id_embed.E"]
        logits = ad.matmul(s, ad.transpose(v, (1, 0)))  # (B, C)
    else:
        bb, c, d_w = batch.candidate_vecs.shape
        if bb != b:
            raise InvalidParameterError("candidate batch misaligned with contexts")
        v = model.encode_items(batch.candidate_vecs.reshape(bb * c, d_w),
                               train=train, noise_active=False)
        v = ad.reshape(v, (bb, c, d_v))
        if mode == TRANSDUCTIVE:
            e = ad.gather_rows(model.params["id_embed.E"], batch.candidate_ids.reshape(-1))
            v = v + ad.reshape(e, (bb, c, d_v))
        logits = ad.reshape(ad.matmul(v, ad.reshape(s, (b, d_v, 1))), (b, c))
    return _cross_entropy(logits, batch.positive_idx)
