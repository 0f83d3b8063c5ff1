"""Command-line surface: synth / pretrain / finetune / gradcheck.

Exit codes: 0 ok, 1 verification failure, 2 bad input file,
3 config/shape error, 4 empty-data condition.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import fields

import numpy as np

from .corpus import (
    SyntheticSpec,
    five_core_filter,
    load_domain_dir,
    write_synthetic_corpus,
)
from .errors import (
    CheckpointError,
    ConfigError,
    CorpusFormatError,
    EmptyTestSetError,
    InvalidSpecError,
    MissingEmbeddingError,
    NotPretrainedError,
    UniSRecError,
)
from .evaluate import write_report_json, write_report_tsv
from .model import UniSRecModel
from .numeric import finite_diff_check
from .pretrain import assemble_batches, extract_instances, pretrain_step
from .rng import RngStreams, STREAM_ITEM_DROP, STREAM_SHUFFLE
from .trainer import (
    TrainConfig,
    load_checkpoint,
    model_to_tensors,
    run_finetune,
    run_pretrain,
    save_checkpoint,
)

log = logging.getLogger("unisrec")

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_BAD_INPUT = 2
EXIT_CONFIG = 3
EXIT_EMPTY = 4

_BOOL_FIELDS = {"adaptor_only_whitening"}
_STR_FIELDS = {"augmentation"}


def load_train_config(path) -> TrainConfig:
    """Parse a line-based key=value config; unknown keys are rejected."""
    cfg = TrainConfig()
    valid = {f.name for f in fields(TrainConfig)}
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, value = (p.strip() for p in line.split("=", 1))
            if key not in valid:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            current = getattr(cfg, key)
            try:
                if key in _BOOL_FIELDS:
                    if value.lower() not in ("true", "false", "0", "1"):
                        raise ValueError(f"bad boolean {value!r}")
                    parsed = value.lower() in ("true", "1")
                elif key in _STR_FIELDS:
                    parsed = value
                elif isinstance(current, int):
                    parsed = int(value)
                else:
                    parsed = float(value)
            except ValueError as e:
                raise ConfigError(f"{path}:{lineno}: {e}") from None
            setattr(cfg, key, parsed)
    cfg.validate()
    return cfg


def _setup_logging():
    level = os.environ.get("UNISREC_LOG", "info").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(
        stream=sys.stderr,
        level=levels.get(level, logging.INFO),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _load_pooled(data_dirs):
    """Load and pool multiple domain directories; tables must share dim."""
    tables, sequences = [], []
    for d in data_dirs:
        table, seqs = load_domain_dir(d)
        tables.append(table)
        sequences.extend(seqs)
    dim = tables[0].dim
    if any(t.dim != dim for t in tables):
        raise ConfigError("embedding dims differ across data directories")
    # Merge tables: row offsets shift per source table.
    rows = []
    index = {}
    from .corpus import EmbeddingTable, ItemRef

    offset = 0
    remap = {}
    for t in tables:
        for key, ref in t.index.items():
            if key in index:
                raise ConfigError(f"duplicate item {key} across data directories")
            aug = None if ref.aug_row is None else ref.aug_row + offset
            new_ref = ItemRef(ref.token, ref.domain, ref.row + offset, aug)
            index[key] = new_ref
            remap[key] = new_ref
        rows.append(t.rows)
        offset += t.rows.shape[0]
    merged = EmbeddingTable(dim=dim, rows=np.vstack(rows), index=index)
    for seq in sequences:
        seq.items = [remap[r.key] for r in seq.items]
    return merged, sequences


def cmd_synth(args):
    try:
        spec = SyntheticSpec.parse(args.spec)
        if args.seed is not None:
            spec.seed = args.seed
    except FileNotFoundError:
        print(f"synth: spec file not found: {args.spec}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except InvalidSpecError as e:
        print(f"synth: invalid spec: {e}", file=sys.stderr)
        return EXIT_BAD_INPUT
    domains = write_synthetic_corpus(spec, args.out)
    log.info("wrote %d domains under %s", len(domains), args.out)
    return EXIT_OK


def cmd_pretrain(args):
    try:
        config = load_train_config(args.config)
        if args.seed is not None:
            config.seed = args.seed
        table, sequences = _load_pooled(args.data)
        sequences = five_core_filter(sequences)
        run_pretrain(table, sequences, config, ckpt_path=args.out,
                     resume_from=args.resume)
    except FileNotFoundError as e:
        print(f"pretrain: {e}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except (CorpusFormatError, MissingEmbeddingError, InvalidSpecError) as e:
        print(f"pretrain: bad input: {e}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except (ConfigError, CheckpointError) as e:
        print(f"pretrain: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def cmd_finetune(args):
    try:
        config = load_train_config(args.config)
        if args.seed is not None:
            config.seed = args.seed
        table, sequences = load_domain_dir(args.data)
        sequences = five_core_filter(sequences)
        ckpt_tensors = None
        if not args.from_scratch:
            if args.ckpt is None:
                raise NotPretrainedError(
                    "--ckpt is required unless --from-scratch is given")
            ckpt_tensors = load_checkpoint(args.ckpt)
        boundaries = None
        if args.tail_boundaries:
            boundaries = [float(b) for b in args.tail_boundaries.split(",")]
        result = run_finetune(
            table, sequences, args.mode, config,
            ckpt_tensors=ckpt_tensors, from_scratch=args.from_scratch,
            eval_only=args.eval_only, tail_boundaries=boundaries,
        )
        write_report_tsv(result.report, args.report)
        write_report_json(result.report, args.report + ".json")
        if args.out and not args.eval_only:
            save_checkpoint(args.out, model_to_tensors(result.model,
                                                       epoch=result.best_epoch,
                                                       best_metric=result.report.ndcg[10]))
    except FileNotFoundError as e:
        print(f"finetune: {e}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except (CorpusFormatError, MissingEmbeddingError) as e:
        print(f"finetune: bad input: {e}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except EmptyTestSetError as e:
        print(f"finetune: {e}", file=sys.stderr)
        return EXIT_EMPTY
    except (ConfigError, CheckpointError, NotPretrainedError, UniSRecError) as e:
        print(f"finetune: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


TINY_GRADCHECK = dict(d_w=12, d_v=8, n_experts=3, n_layers=1, n_heads=2,
                      n_max=8, batch=4)


GRADCHECK_SEED = 7
GRADCHECK_EPS = 2e-4


def build_tiny_gradcheck_loss(seed=GRADCHECK_SEED):
    """Full pre-training loss on the tiny config; returns (loss_fn, params, model).

    Matrix parameters are scaled up 10x from their training-time init so the
    check probes a generic point: with std-0.02 weights many ReLU
    pre-activations sit near the kink, where central differences are
    unreliable at any step size.
    """
    from .corpus import generate_synthetic_corpus

    tiny = TINY_GRADCHECK
    spec = SyntheticSpec(domains=2, items_per_domain=12, users_per_domain=4,
                         topics=3, dim=tiny["d_w"], seq_len_min=5, seq_len_max=8,
                         seed=seed)
    table, per_domain = generate_synthetic_corpus(spec)
    sequences = [s for seqs in per_domain.values() for s in seqs]

    streams = RngStreams(seed)
    config = TrainConfig(d_v=tiny["d_v"], n_experts=tiny["n_experts"],
                         n_layers=tiny["n_layers"], n_heads=tiny["n_heads"],
                         n_max=tiny["n_max"], dropout=0.0,
                         batch_size=tiny["batch"])
    model = UniSRecModel(config.model_config(table.dim), streams)
    for p in model.params.values():
        if p.name and (".W" in p.name or p.name == "pos.P"):
            p.data = p.data * 10.0
    instances = extract_instances(sequences, config.n_max)
    batch = next(assemble_batches(instances, table, tiny["batch"],
                                  streams.stream(STREAM_SHUFFLE),
                                  streams.stream(STREAM_ITEM_DROP)))

    def loss_fn():
        # Noise and dropout stay off so repeated calls are bit-identical.
        return pretrain_step(batch, model, config.tau, config.lam,
                             noise_active=False, train=False)

    params = [model.params[n] for n in sorted(model.params)]
    return loss_fn, params, model


def cmd_gradcheck(args):
    try:
        if args.config:
            load_train_config(args.config)  # validated; tiny shapes stay pinned
        seed = GRADCHECK_SEED if args.seed is None else args.seed
        loss_fn, params, _ = build_tiny_gradcheck_loss(seed=seed)
        scale = 1.1 if args.corrupt_gradients else 1.0
        report = finite_diff_check(loss_fn, params, eps=GRADCHECK_EPS,
                                   corrupt_scale=scale)
        print(report.summary())
        return EXIT_OK if report.passed else EXIT_VERIFY
    except FileNotFoundError as e:
        print(f"gradcheck: {e}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except ConfigError as e:
        print(f"gradcheck: {e}", file=sys.stderr)
        return EXIT_CONFIG


def main(argv=None):
    _setup_logging()
    parser = argparse.ArgumentParser(prog="unisrec")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic multi-domain corpus")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain", help="contrastive multi-domain pre-training")
    p.add_argument("--config", required=True)
    p.add_argument("--data", action="append", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="parameter-efficient target-domain fine-tuning")
    p.add_argument("--ckpt", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=["inductive", "transductive"], required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--from-scratch", action="store_true")
    p.add_argument("--eval-only", action="store_true")
    p.add_argument("--tail-boundaries", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full loss")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--corrupt-gradients", action="store_true",
                   help="negative control: verify the check fails on bad gradients")
    p.set_defaults(func=cmd_gradcheck)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
