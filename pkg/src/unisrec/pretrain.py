"""Multi-domain contrastive pre-training: sequence-item and
sequence-sequence tasks over in-batch negatives, combined multi-task."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .corpus import EmbeddingTable, InteractionSequence
from .errors import InvalidParameterError


@dataclass
class TrainInstance:
    domain: str
    context: list  # list[ItemRef]
    positive: object  # ItemRef


def extract_instances(sequences, n_max):
    """One (context, next-item) instance per position, windowed to n_max."""
    out = []
    for seq in sequences:
        for t in range(1, len(seq.items)):
            ctx = seq.items[max(0, t - n_max): t]
            out.append(TrainInstance(seq.domain, ctx, seq.items[t]))
    return out


def item_drop(seq, ratio, gen):
    """Drop floor(ratio * n) uniformly chosen items, preserving order and
    always keeping at least one item. Works on a list of ItemRefs or on an
    InteractionSequence."""
    if not 0.0 <= ratio < 1.0:
        raise InvalidParameterError(f"drop ratio must be in [0, 1), got {ratio}")
    items = seq.items if isinstance(seq, InteractionSequence) else list(seq)
    n = len(items)
    n_drop = min(int(ratio * n), n - 1)
    if n_drop <= 0:
        kept_idx = list(range(n))
    else:
        dropped = set(gen.choice(n, size=n_drop, replace=False).tolist())
        kept_idx = [i for i in range(n) if i not in dropped]
    kept = [items[i] for i in kept_idx]
    if isinstance(seq, InteractionSequence):
        ts = [seq.timestamps[i] for i in kept_idx]
        return InteractionSequence(seq.user, seq.domain, kept, ts)
    return kept


def word_drop_lookup(item, table: EmbeddingTable):
    """Precomputed word-drop-augmented embedding row (original as fallback)."""
    return table.aug_vector(item)


def seq_item_loss(s, v, tau):
    """InfoNCE between contexts and their next items, in-batch negatives.

    `s`, `v`: (B, d) Tensors of unit-norm rows.
    """
    if tau <= 0:
        raise InvalidParameterError(f"temperature must be positive, got {tau}")
    s, v = ad.as_tensor(s), ad.as_tensor(v)
    logits = ad.mul(ad.matmul(s, ad.transpose(v, (1, 0))), 1.0 / tau)  # (B, B)
    b = logits.shape[0]
    eye = np.eye(b, dtype=np.float32)
    pos = ad.tsum(ad.mul(logits, eye), axis=-1)  # diagonal
    lse = ad.logsumexp(logits, axis=-1, keepdims=True)
    return ad.tsum(ad.reshape(lse, (b,)) - pos)


def seq_seq_loss(s, s_aug, tau):
    """InfoNCE between sequences and their augmentations; the denominator
    runs over the original in-batch sequence representations."""
    if tau <= 0:
        raise InvalidParameterError(f"temperature must be positive, got {tau}")
    s, s_aug = ad.as_tensor(s), ad.as_tensor(s_aug)
    b = s.shape[0]
    pos = ad.tsum(ad.mul(s, s_aug), axis=-1) * (1.0 / tau)  # s_j . s~_j
    denom_logits = ad.mul(ad.matmul(s, ad.transpose(s, (1, 0))), 1.0 / tau)
    lse = ad.logsumexp(denom_logits, axis=-1, keepdims=True)
    return ad.tsum(ad.reshape(lse, (b,)) - pos)


@dataclass
class PretrainBatch:
    contexts: list  # list of (len, d_W) arrays
    aug_contexts: list
    positives: np.ndarray  # (B, d_W)
    domains: list


def assemble_batches(instances, table, batch_size, epoch_gen, drop_gen,
                     item_drop_ratio=0.2, augmentation="both"):
    """Shuffle the pooled multi-domain instances and yield PretrainBatches.

    `augmentation`: "both" (item drop + word-drop embeddings), "item_drop",
    or "word_drop".
    """
    order = epoch_gen.permutation(len(instances))
    for start in range(0, len(instances), batch_size):
        chunk = [instances[i] for i in order[start:start + batch_size]]
        contexts, aug_contexts, positives, domains = [], [], [], []
        for inst in chunk:
            ctx_vecs = np.stack([table.vector(r) for r in inst.context])
            contexts.append(ctx_vecs)
            aug_items = inst.context
            if augmentation in ("both", "item_drop"):
                aug_items = item_drop(aug_items, item_drop_ratio, drop_gen)
            if augmentation in ("both", "word_drop"):
                aug_vecs = np.stack([word_drop_lookup(r, table) for r in aug_items])
            else:
                aug_vecs = np.stack([table.vector(r) for r in aug_items])
            aug_contexts.append(aug_vecs)
            positives.append(table.vector(inst.positive))
            domains.append(inst.domain)
        yield PretrainBatch(
            contexts=contexts,
            aug_contexts=aug_contexts,
            positives=np.stack(positives),
            domains=domains,
        )


def pretrain_step(batch: PretrainBatch, model, tau, lam, noise_active=True, train=True):
    """L_PT = l_SI + lambda * l_SS on one batch; returns the scalar loss Tensor."""
    if lam < 0:
        raise InvalidParameterError("lambda must be nonnegative")
    s = model.encode_contexts(batch.contexts, train=train, noise_active=noise_active)
    v = model.encode_items(batch.positives, train=train, noise_active=noise_active)
    v = ad.l2_normalize_rows(v)
    loss = seq_item_loss(s, v, tau)
    if lam > 0:
        s_aug = model.encode_contexts(batch.aug_contexts, train=train, noise_active=noise_active)
        loss = loss + ad.mul(seq_seq_loss(s, s_aug, tau), lam)
    return loss
