"""Optimization loop: Adam, early stopping on validation NDCG@10,
checkpointing, and the pre-train -> fine-tune orchestration."""

from __future__ import annotations

import logging
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .corpus import leave_one_out_split
from .errors import CheckpointError, ConfigError, NotPretrainedError
from .evaluate import evaluate
from .finetune import (
    INDUCTIVE,
    TRANSDUCTIVE,
    FinetuneBatch,
    apply_freeze_plan,
    make_freeze_plan,
    sample_negatives,
)
from .model import ModelConfig, UniSRecModel
from .pretrain import assemble_batches, extract_instances, pretrain_step
from .rng import RngStreams, STREAM_ITEM_DROP, STREAM_NEG_SAMPLE, STREAM_SHUFFLE

log = logging.getLogger("unisrec")

CKPT_MAGIC = b"UCKP"
CKPT_VERSION = 1

LR_GRID = (0.0003, 0.001, 0.003, 0.01)
DIM_GRID = (64, 128, 300)


@dataclass
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 256
    pretrain_epochs: int = 30  # scaled down from the full-size 300
    finetune_epochs: int = 50
    patience: int = 10
    tau: float = 0.07
    lam: float = 1e-3
    item_drop_ratio: float = 0.2
    negatives_k: int = 99
    augmentation: str = "both"  # both | item_drop | word_drop
    adaptor_only_whitening: bool = False
    checkpoint_interval: int = 0  # epochs between intermediate checkpoints
    seed: int = 0
    # model shape
    d_v: int = 300
    n_experts: int = 8
    n_layers: int = 2
    n_heads: int = 2
    d_ff: int = 0
    n_max: int = 50
    dropout: float = 0.2

    def validate(self):
        if self.lr <= 0 or self.batch_size < 1 or self.patience < 1:
            raise ConfigError("lr must be > 0, batch_size >= 1, patience >= 1")
        if self.pretrain_epochs < 0 or self.finetune_epochs < 0:
            raise ConfigError("epoch counts must be nonnegative")
        if self.tau <= 0 or self.lam < 0:
            raise ConfigError("tau must be > 0 and lambda >= 0")
        if not 0 <= self.item_drop_ratio < 1:
            raise ConfigError("item_drop_ratio must be in [0, 1)")
        if self.augmentation not in ("both", "item_drop", "word_drop"):
            raise ConfigError(f"unknown augmentation {self.augmentation!r}")
        if self.negatives_k < 1:
            raise ConfigError("negatives_k must be >= 1")

    def model_config(self, d_w) -> ModelConfig:
        return ModelConfig(
            d_w=d_w, d_v=self.d_v, n_experts=self.n_experts,
            n_layers=self.n_layers, n_heads=self.n_heads, d_ff=self.d_ff,
            n_max=self.n_max, dropout=self.dropout,
        )


# -- Adam ----------------------------------------------------------------


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params, state: AdamState, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update over the given named tensors."""
    state.t += 1
    t = state.t
    for p in params:
        g = p.grad
        if g is None:
            continue
        name = p.name
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.m[name] = m
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m[...] = beta1 * m + (1 - beta1) * g
        v[...] = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        p.data = (p.data - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype)


# -- early stopping --------------------------------------------------------


def early_stop(history, patience):
    """(stop, best_epoch) for a history of validation NDCG@10 values.

    Stops once `patience` consecutive epochs fail to strictly improve the
    best value seen so far. Epochs are 0-based indices into `history`.
    """
    if not history:
        raise ConfigError("early_stop needs a nonempty history")
    best_epoch = 0
    best = history[0]
    since_best = 0
    for i, value in enumerate(history[1:], start=1):
        if value > best:
            best = value
            best_epoch = i
            since_best = 0
        else:
            since_best += 1
            if since_best >= patience:
                return True, best_epoch
    return False, best_epoch


# -- checkpoints -----------------------------------------------------------


def _encode_tensors(tensors):
    body = bytearray()
    for name in sorted(tensors):
        # asarray keeps 0-d scalars 0-d (ascontiguousarray would promote to 1-d)
        data = np.asarray(tensors[name], dtype="<f4", order="C")
        nb = name.encode("utf-8")
        body += struct.pack("<H", len(nb)) + nb
        body += struct.pack("<B", data.ndim)
        for dim in data.shape:
            body += struct.pack("<I", dim)
        body += data.tobytes()
    return bytes(body)


def save_checkpoint(path, tensors: dict):
    """Write named f32 tensors: UCKP header, records, trailing CRC-32."""
    body = _encode_tensors(tensors)
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<II", CKPT_VERSION, len(tensors)))
        f.write(body)
        f.write(struct.pack("<I", zlib.crc32(body)))


def load_checkpoint(path) -> dict:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 16 or blob[:4] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    version, count = struct.unpack("<II", blob[4:12])
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    body, (crc,) = blob[12:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError(f"{path}: CRC mismatch")
    tensors = {}
    off = 0
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", body, off)
        off += 2
        name = body[off:off + name_len].decode("utf-8")
        off += name_len
        (rank,) = struct.unpack_from("<B", body, off)
        off += 1
        dims = struct.unpack_from(f"<{rank}I", body, off)
        off += 4 * rank
        size = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(body, dtype="<f4", count=size, offset=off).reshape(dims).copy()
        off += 4 * size
        tensors[name] = data
    if off != len(body):
        raise CheckpointError(f"{path}: trailing bytes in tensor region")
    return tensors


_SHAPE_KEYS = ("d_v", "n_experts", "n_layers", "n_heads", "d_ff", "n_max")


def model_to_tensors(model: UniSRecModel, epoch=0, best_metric=0.0, adam=None):
    tensors = {name: p.data for name, p in model.params.items()}
    tensors["meta.epoch"] = np.array(float(epoch), dtype=np.float32)
    tensors["meta.best_metric"] = np.array(float(best_metric), dtype=np.float32)
    tensors["config.d_w"] = np.array(float(model.cfg.d_w), dtype=np.float32)
    tensors["config.dropout"] = np.array(model.cfg.dropout, dtype=np.float32)
    for key in _SHAPE_KEYS:
        tensors[f"config.{key}"] = np.array(float(getattr(model.cfg, key)), dtype=np.float32)
    if adam is not None:
        tensors["adam.t"] = np.array(float(adam.t), dtype=np.float32)
        for name, m in adam.m.items():
            tensors[f"adam.m.{name}"] = m
            tensors[f"adam.v.{name}"] = adam.v[name]
    return tensors


def config_from_tensors(tensors) -> ModelConfig:
    def geti(key):
        if f"config.{key}" not in tensors:
            raise CheckpointError(f"checkpoint missing config.{key}")
        return int(tensors[f"config.{key}"])

    return ModelConfig(
        d_w=geti("d_w"), d_v=geti("d_v"), n_experts=geti("n_experts"),
        n_layers=geti("n_layers"), n_heads=geti("n_heads"), d_ff=geti("d_ff"),
        n_max=geti("n_max"), dropout=float(tensors["config.dropout"]),
    )


def model_from_tensors(tensors, streams: RngStreams) -> UniSRecModel:
    cfg = config_from_tensors(tensors)
    model = UniSRecModel(cfg, streams)
    if "id_embed.E" in tensors:
        model.add_id_table(tensors["id_embed.E"].shape[0])
    for name, p in model.params.items():
        if name not in tensors:
            raise CheckpointError(f"checkpoint missing tensor {name}")
        if tensors[name].shape != p.data.shape:
            raise CheckpointError(
                f"tensor {name}: checkpoint shape {tensors[name].shape} != model {p.data.shape}"
            )
        p.data = tensors[name].copy()
        p.zero_grad()
    return model


def adam_from_tensors(tensors) -> AdamState:
    state = AdamState()
    if "adam.t" in tensors:
        state.t = int(tensors["adam.t"])
        for name, data in tensors.items():
            if name.startswith("adam.m."):
                state.m[name[len("adam.m."):]] = data.copy()
            elif name.startswith("adam.v."):
                state.v[name[len("adam.v."):]] = data.copy()
    return state


# -- orchestration ---------------------------------------------------------


def run_pretrain(table, sequences, config: TrainConfig, ckpt_path=None,
                 resume_from=None, progress=None):
    """Fixed-epoch multi-domain pre-training over the pooled instance set.

    Returns (model, per-step losses). `sequences` is the pooled list across
    all source domains.
    """
    config.validate()
    streams = RngStreams(config.seed)
    if resume_from is not None:
        tensors = load_checkpoint(resume_from)
        model = model_from_tensors(tensors, streams)
        adam = adam_from_tensors(tensors)
        start_epoch = int(tensors.get("meta.epoch", np.float32(0)))
    else:
        model = UniSRecModel(config.model_config(table.dim), streams)
        adam = AdamState()
        start_epoch = 0
    instances = extract_instances(sequences, config.n_max)
    if not instances:
        raise ConfigError("no pre-training instances (all sequences length < 2)")
    log.info("pre-training on %d instances from %d sequences", len(instances), len(sequences))

    shuffle_gen = streams.stream(STREAM_SHUFFLE)
    drop_gen = streams.stream(STREAM_ITEM_DROP)
    tensors_of = list(model.params.values())
    losses = []
    for epoch in range(start_epoch, config.pretrain_epochs):
        epoch_loss, steps = 0.0, 0
        for batch in assemble_batches(
            instances, table, config.batch_size, shuffle_gen, drop_gen,
            item_drop_ratio=config.item_drop_ratio, augmentation=config.augmentation,
        ):
            model.zero_grads()
            loss = pretrain_step(batch, model, config.tau, config.lam,
                                 noise_active=True, train=True)
            ad.backward(loss)
            adam_step(tensors_of, adam, config.lr)
            val = float(loss.data) / len(batch.contexts)
            losses.append(val)
            epoch_loss += val
            steps += 1
        log.info("pretrain epoch %d: mean loss %.4f", epoch, epoch_loss / max(steps, 1))
        if progress:
            progress(epoch, epoch_loss / max(steps, 1))
        if ckpt_path and config.checkpoint_interval and (epoch + 1) % config.checkpoint_interval == 0:
            save_checkpoint(ckpt_path, model_to_tensors(model, epoch=epoch + 1, adam=adam))
    if ckpt_path:
        save_checkpoint(ckpt_path, model_to_tensors(model, epoch=config.pretrain_epochs, adam=adam))
    return model, losses


def _finetune_batches(split_instances, table, refs, pos_of, config, mode,
                      shuffle_gen, neg_gen):
    item_matrix = np.stack([table.vector(r) for r in refs])
    order = shuffle_gen.permutation(len(split_instances))
    for start in range(0, len(split_instances), config.batch_size):
        chunk = [split_instances[i] for i in order[start:start + config.batch_size]]
        contexts = [np.stack([table.vector(r) for r in inst.context]) for inst in chunk]
        if mode == TRANSDUCTIVE:
            context_ids = [[pos_of[r.key] for r in inst.context] for inst in chunk]
            positive_idx = np.array([pos_of[inst.positive.key] for inst in chunk])
            yield FinetuneBatch(
                contexts=contexts, context_ids=context_ids,
                positive_idx=positive_idx, candidate_vecs=None, candidate_ids=None,
                shared_item_vecs=item_matrix,
            )
        else:
            cand_vecs, pos_idx = [], []
            for inst in chunk:
                negs = sample_negatives(inst.positive, refs, config.negatives_k, neg_gen)
                cands = [inst.positive] + negs
                cand_vecs.append(np.stack([table.vector(r) for r in cands]))
                pos_idx.append(0)
            # Rows may differ in candidate count only when the pool is tiny.
            c_min = min(v.shape[0] for v in cand_vecs)
            cand_vecs = [v[:c_min] for v in cand_vecs]
            yield FinetuneBatch(
                contexts=contexts, context_ids=None,
                positive_idx=np.array(pos_idx),
                candidate_vecs=np.stack(cand_vecs), candidate_ids=None,
            )


@dataclass
class FinetuneResult:
    model: UniSRecModel
    best_epoch: int
    valid_history: list
    report: object  # MetricsReport on the test split


def run_finetune(table, sequences, mode, config: TrainConfig, ckpt_tensors=None,
                 from_scratch=False, eval_only=False, tail_boundaries=None,
                 progress=None):
    """Fine-tune on one target domain with early stopping on valid NDCG@10.

    `ckpt_tensors`: loaded pre-trained checkpoint (required unless
    `from_scratch`). Returns a FinetuneResult with the test report of the
    best model.
    """
    config.validate()
    if mode not in (INDUCTIVE, TRANSDUCTIVE):
        raise ConfigError(f"unknown mode {mode!r}")
    domains = {s.domain for s in sequences}
    if len(domains) != 1:
        raise ConfigError(f"fine-tuning expects one target domain, got {sorted(domains)}")
    domain = domains.pop()

    streams = RngStreams(config.seed)
    if from_scratch:
        model = UniSRecModel(config.model_config(table.dim), streams)
    else:
        if ckpt_tensors is None:
            raise NotPretrainedError("fine-tuning requires a pre-trained checkpoint "
                                     "(or the explicit from-scratch flag)")
        model = model_from_tensors(ckpt_tensors, streams)
        if model.cfg.d_w != table.dim:
            raise ConfigError(
                f"checkpoint d_w {model.cfg.d_w} != embedding table dim {table.dim}"
            )

    refs = table.items_in_domain(domain)
    pos_of = {r.key: i for i, r in enumerate(refs)}
    if mode == TRANSDUCTIVE and not model.has_id_table:
        model.add_id_table(len(refs))

    split = leave_one_out_split(sequences)
    from .evaluate import train_popularity_counts  # local to avoid cycle at import

    popularity = train_popularity_counts(split.train)

    if from_scratch:
        # Baseline arm: everything trainable.
        trainable = list(model.params.values())
        for p in trainable:
            p.requires_grad = True
            p.zero_grad()
    else:
        plan = make_freeze_plan(model, mode, config.adaptor_only_whitening)
        apply_freeze_plan(model, plan)
        trainable = [model.params[n] for n in sorted(plan.trainable)]

    valid_history = []
    best_tensors = None
    best_epoch = -1
    if not eval_only:
        instances = extract_instances(split.train, config.n_max)
        shuffle_gen = streams.stream(STREAM_SHUFFLE)
        neg_gen = streams.stream(STREAM_NEG_SAMPLE)
        adam = AdamState()
        from .finetune import finetune_loss

        for epoch in range(config.finetune_epochs):
            for batch in _finetune_batches(instances, table, refs, pos_of,
                                           config, mode, shuffle_gen, neg_gen):
                model.zero_grads()
                loss = finetune_loss(batch, model, mode, train=True)
                ad.backward(loss)
                adam_step(trainable, adam, config.lr)
            report = evaluate(model, split.valid, table, domain, mode)
            valid_history.append(report.ndcg[10])
            log.info("finetune epoch %d: valid NDCG@10 %.4f", epoch, report.ndcg[10])
            if progress:
                progress(epoch, report.ndcg[10])
            stop, best = early_stop(valid_history, config.patience)
            if best == len(valid_history) - 1:
                best_tensors = {n: p.data.copy() for n, p in model.params.items()}
                best_epoch = best
            if stop:
                log.info("early stop at epoch %d (best %d)", epoch, best)
                break
        if best_tensors is not None:
            for name, data in best_tensors.items():
                model.params[name].data = data
    test_report = evaluate(
        model, split.test, table, domain, mode,
        train_popularity=popularity, tail_boundaries=tail_boundaries,
    )
    return FinetuneResult(model=model, best_epoch=best_epoch,
                          valid_history=valid_history, report=test_report)
