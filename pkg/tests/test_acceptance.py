"""Acceptance gate: every top-level criterion runs here at its stated
tolerance and prints one pass/fail line."""

import hashlib
import json
import subprocess
import time
from pathlib import Path

import numpy as np
import pytest

from unisrec import autodiff as ad
from unisrec import cli
from unisrec.corpus import (
    SyntheticSpec,
    five_core_filter,
    generate_synthetic_corpus,
    load_embedding_table,
)
from unisrec.evaluate import evaluate, metrics_from_rank, rank_of_ground_truth
from unisrec.finetune import INDUCTIVE, TRANSDUCTIVE, make_freeze_plan
from unisrec.model import ModelConfig, UniSRecModel
from unisrec.numeric import finite_diff_check
from unisrec.pretrain import seq_item_loss, seq_seq_loss
from unisrec.rng import RngStreams
from unisrec.trainer import (
    TrainConfig,
    model_from_tensors,
    model_to_tensors,
    run_finetune,
    run_pretrain,
)

from conftest import unit_rows
from oracles import mp_infonce, sort_rank_oracle


def report_line(name, passed, detail=""):
    status = "PASS" if passed else "FAIL"
    print(f"\nACCEPTANCE {name}: {status}" + (f" ({detail})" if detail else ""))
    assert passed, f"{name}: {detail}"


# -- 1. gradient correctness ------------------------------------------------


def test_gradient_correctness():
    t0 = time.monotonic()
    loss_fn, params, _ = cli.build_tiny_gradcheck_loss()
    result = finite_diff_check(loss_fn, params, eps=cli.GRADCHECK_EPS, tol=1e-4)
    elapsed = time.monotonic() - t0
    report_line(
        "gradient-correctness",
        result.passed and result.max_rel_err <= 1e-4 and elapsed < 60,
        f"max rel err {result.max_rel_err:.2e} over {result.checked} coords in {elapsed:.1f}s",
    )


# -- 2. loss oracles --------------------------------------------------------


def test_loss_oracles():
    gen = np.random.default_rng(2024)
    worst = 0.0
    nonneg = True
    with ad.default_dtype(np.float64):
        for _ in range(50):
            s = unit_rows(gen, 8, 16)
            v = unit_rows(gen, 8, 16)
            s_aug = unit_rows(gen, 8, 16)

            got_si = float(seq_item_loss(s, v, 0.07).data)
            want_si = float(mp_infonce((s @ v.T).tolist(), tau=0.07))
            worst = max(worst, abs(got_si - want_si))

            got_ss = float(seq_seq_loss(s, s_aug, 0.07).data)
            pos = np.einsum("ij,ij->i", s, s_aug)
            want_ss = float(mp_infonce((s @ s.T).tolist(), pos_sims=pos.tolist(), tau=0.07))
            worst = max(worst, abs(got_ss - want_ss))
            nonneg = nonneg and got_ss >= -1e-12 and got_si >= -1e-12
    report_line(
        "loss-oracles", worst < 1e-6 and nonneg,
        f"worst abs err {worst:.2e} over 50 batches, nonnegativity {'held' if nonneg else 'VIOLATED'}",
    )


# -- 3. metric oracles ------------------------------------------------------


def test_metric_oracles():
    gen = np.random.default_rng(7)
    mismatches = 0
    for trial in range(1000):
        n = int(gen.integers(1, 60))
        if trial % 3 == 0:
            scores = gen.choice([0.0, 0.25, 0.5, 1.0], size=n)  # engineered ties
        else:
            scores = gen.standard_normal(n)
        gt = int(gen.integers(0, n))
        rank = rank_of_ground_truth(scores, gt)
        if rank != sort_rank_oracle(scores.tolist(), gt):
            mismatches += 1
        hit10, ndcg10 = metrics_from_rank(rank, 10)
        hit50, ndcg50 = metrics_from_rank(rank, 50)
        if not (ndcg10 <= hit10 and ndcg50 <= hit50 and hit10 <= hit50):
            mismatches += 1
    report_line("metric-oracles", mismatches == 0,
                f"{mismatches} mismatches on 1000 vectors (incl. ties)")


# -- 4. transfer benefit ----------------------------------------------------

TRANSFER_TOPICS = 8
TRANSFER_CYCLE_P = 0.8


def transfer_transition():
    t = TRANSFER_TOPICS
    m = np.full((t, t), (1.0 - TRANSFER_CYCLE_P) / (t - 1))
    np.fill_diagonal(m, 0.0)
    for i in range(t):
        m[i, (i + 1) % t] = TRANSFER_CYCLE_P
    return m / m.sum(axis=1, keepdims=True)


TRANSFER_MODEL = dict(d_v=32, n_experts=4, n_layers=1, n_heads=2, n_max=16,
                      dropout=0.1, batch_size=256)
TRANSFER_PT_EPOCHS = 6
TRANSFER_FT_EPOCHS = 1
TRANSFER_FT_LR = 0.0003
TRANSFER_NOISE = 0.5


@pytest.mark.slow
def test_transfer_benefit():
    t0 = time.monotonic()
    spec = SyntheticSpec(domains=4, items_per_domain=1000, users_per_domain=2000,
                         topics=TRANSFER_TOPICS, dim=24, noise_std=TRANSFER_NOISE,
                         seed=11)
    table, per_domain = generate_synthetic_corpus(spec, transition=transfer_transition())
    source = five_core_filter(
        [s for d in ("dom0", "dom1", "dom2") for s in per_domain[d]]
    )
    target = five_core_filter(per_domain["dom3"])

    pre_cfg = TrainConfig(**TRANSFER_MODEL, lr=0.001,
                          pretrain_epochs=TRANSFER_PT_EPOCHS, seed=0)
    model, _ = run_pretrain(table, source, pre_cfg)
    ckpt = model_to_tensors(model)

    improvements = []
    for seed in range(5):
        ft_cfg = TrainConfig(**TRANSFER_MODEL, lr=TRANSFER_FT_LR,
                             finetune_epochs=TRANSFER_FT_EPOCHS, patience=10,
                             seed=seed)
        pre = run_finetune(table, target, INDUCTIVE, ft_cfg, ckpt_tensors=ckpt)
        scratch = run_finetune(table, target, INDUCTIVE, ft_cfg, from_scratch=True)
        improvements.append(pre.report.recall[10] - scratch.report.recall[10])
    wins = sum(1 for d in improvements if d > 0)
    mean = float(np.mean(improvements))
    elapsed = time.monotonic() - t0
    report_line(
        "transfer-benefit",
        wins >= 4 and mean > 0 and elapsed < 15 * 60,
        f"wins {wins}/5, mean improvement {mean:+.4f}, {elapsed:.0f}s",
    )


# -- 5. freeze contract -----------------------------------------------------


def small_corpus():
    spec = SyntheticSpec(domains=2, items_per_domain=25, users_per_domain=20,
                         topics=3, dim=12, seq_len_min=6, seq_len_max=10, seed=2)
    return generate_synthetic_corpus(spec)


def small_config(**kwargs):
    base = dict(lr=0.003, batch_size=16, pretrain_epochs=1, finetune_epochs=5,
                patience=10, negatives_k=5, d_v=8, n_experts=2, n_layers=1,
                n_heads=2, n_max=8, dropout=0.1, seed=0)
    base.update(kwargs)
    return TrainConfig(**base)


def tensor_hash(data):
    return hashlib.sha256(np.ascontiguousarray(data).tobytes()).hexdigest()


def test_freeze_contract():
    table, per_domain = small_corpus()
    config = small_config()
    model, _ = run_pretrain(table, per_domain["dom0"], config)
    ckpt = model_to_tensors(model)
    violations = []
    for mode in (INDUCTIVE, TRANSDUCTIVE):
        result = run_finetune(table, per_domain["dom1"], mode, config,
                              ckpt_tensors=ckpt)
        plan = make_freeze_plan(result.model, mode, config.adaptor_only_whitening)
        for name in plan.frozen:
            if tensor_hash(result.model.params[name].data) != tensor_hash(ckpt[name]):
                violations.append((mode, name))
    report_line("freeze-contract", not violations,
                f"{len(violations)} frozen tensors changed across 5 epochs x 2 modes")


# -- 6. transductive zero-ID reduction --------------------------------------


def test_zero_id_reduction():
    table, per_domain = small_corpus()
    from unisrec.corpus import leave_one_out_split

    split = leave_one_out_split(five_core_filter(per_domain["dom0"]))
    model = UniSRecModel(
        ModelConfig(d_w=table.dim, d_v=8, n_experts=2, n_layers=1, n_heads=2,
                    n_max=8, dropout=0.0),
        RngStreams(4),
        n_id_items=len(table.items_in_domain("dom0")),
    )
    assert np.all(model.params["id_embed.E"].data == 0.0)  # zero-initialized
    ind = evaluate(model, split.test, table, "dom0", INDUCTIVE)
    trans = evaluate(model, split.test, table, "dom0", TRANSDUCTIVE)
    same = (ind.recall == trans.recall and ind.ndcg == trans.ndcg
            and ind.user_count == trans.user_count)
    report_line("zero-id-reduction", same,
                f"inductive {ind.recall} == transductive {trans.recall}")


# -- 7. CLI determinism -----------------------------------------------------


def test_cli_determinism(tmp_path):
    spec = tmp_path / "spec.txt"
    spec.write_text(
        "domains = 2\nitems_per_domain = 12\nusers_per_domain = 15\n"
        "topics = 3\ndim = 12\nseq_len_min = 6\nseq_len_max = 10\nseed = 4\n"
    )
    cfg = tmp_path / "train.cfg"
    cfg.write_text(
        "lr = 0.003\nbatch_size = 16\npretrain_epochs = 1\nfinetune_epochs = 1\n"
        "patience = 2\nnegatives_k = 5\nd_v = 8\nn_experts = 2\nn_layers = 1\n"
        "n_heads = 2\nn_max = 8\ndropout = 0.1\n"
    )
    blobs = []
    for run in ("a", "b"):
        corpus = tmp_path / f"corpus_{run}"
        pre = tmp_path / f"pre_{run}.ckpt"
        ft = tmp_path / f"ft_{run}.ckpt"
        report = tmp_path / f"report_{run}.tsv"
        assert cli.main(["synth", "--spec", str(spec), "--out", str(corpus),
                         "--seed", "9"]) == 0
        assert cli.main(["pretrain", "--config", str(cfg),
                         "--data", str(corpus / "dom0"),
                         "--data", str(corpus / "dom1"),
                         "--out", str(pre), "--seed", "9"]) == 0
        assert cli.main(["finetune", "--ckpt", str(pre),
                         "--data", str(corpus / "dom1"),
                         "--mode", "inductive", "--config", str(cfg),
                         "--report", str(report), "--out", str(ft),
                         "--seed", "9"]) == 0
        blobs.append(tuple(
            p.read_bytes()
            for p in (corpus / "dom0" / "embeddings.bin", pre, ft, report,
                      Path(str(report) + ".json"))
        ))
    report_line("cli-determinism", blobs[0] == blobs[1],
                "synth+pretrain+finetune artifacts byte-identical across runs")


# -- 8. random-model calibration --------------------------------------------


def test_random_model_calibration():
    spec = SyntheticSpec(domains=1, items_per_domain=250, users_per_domain=500,
                         topics=1, dim=16, seq_len_min=5, seq_len_max=9, seed=6)
    table, per_domain = generate_synthetic_corpus(spec)
    from unisrec.corpus import leave_one_out_split

    split = leave_one_out_split(per_domain["dom0"])
    model = UniSRecModel(
        ModelConfig(d_w=16, d_v=8, n_experts=2, n_layers=1, n_heads=2,
                    n_max=8, dropout=0.0),
        RngStreams(13),
    )
    report = evaluate(model, split.test, table, "dom0", INDUCTIVE)
    p = 10 / spec.items_per_domain
    sigma = float(np.sqrt(p * (1 - p) / report.user_count))
    dev = abs(report.recall[10] - p)
    report_line(
        "random-model-calibration", dev <= 3 * sigma,
        f"Recall@10 {report.recall[10]:.4f} vs {p:.4f} "
        f"(|dev| {dev:.4f} <= 3 sigma {3 * sigma:.4f}, {report.user_count} users)",
    )


# -- secondary: embedding utility round-trip --------------------------------


EMBED_UTIL = Path(__file__).resolve().parent.parent / "embed_util"


def test_embed_util_round_trip(tmp_path):
    cli_js = EMBED_UTIL / "dist" / "cli.js"
    if not cli_js.exists():
        build = subprocess.run(["npx", "tsc"], cwd=EMBED_UTIL,
                               capture_output=True, text=True)
        assert build.returncode == 0, build.stderr
    header = "domain\ttoken\ttitle\tcategories\tbrand\tdescription"
    rows = [
        f"shop\titem{i}\tProduct {i}\tcat{i % 4} goods\tBrand{i % 3}\t"
        for i in range(20)
    ]
    raw = tmp_path / "raw_items.tsv"
    raw.write_text(header + "\n" + "\n".join(rows) + "\n")

    dim = 64
    out = tmp_path / "emb"
    run = subprocess.run(
        ["node", str(cli_js), "extract", "--in", str(raw), "--out", str(out),
         "--word-drop", "0", "--seed", "1", "--dim", str(dim)],
        capture_output=True, text=True,
    )
    assert run.returncode == 0, run.stderr
    table = load_embedding_table(out / "item_index.tsv", out / "embeddings.bin")
    identical = all(
        table.vector(ref).tobytes() == table.rows[ref.aug_row].tobytes()
        for ref in table.index.values()
    )
    report_line(
        "embed-util-round-trip",
        table.dim == dim and table.rows.shape == (40, dim)
        and len(table.index) == 20 and identical,
        f"20 items -> {table.rows.shape} at dim {table.dim}, "
        f"aug channel identical at ratio 0: {identical}",
    )
