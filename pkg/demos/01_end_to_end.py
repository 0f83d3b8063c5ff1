"""End-to-end walkthrough: synthesize a two-domain corpus, pre-train on one
domain, fine-tune on the other in both modes, and print the test reports.

Run:  python3 demos/01_end_to_end.py
Takes about half a minute on a laptop.
"""

from unisrec.corpus import SyntheticSpec, five_core_filter, generate_synthetic_corpus
from unisrec.trainer import TrainConfig, model_to_tensors, run_finetune, run_pretrain

spec = SyntheticSpec(
    domains=2, items_per_domain=60, users_per_domain=40,
    topics=4, dim=16, seq_len_min=6, seq_len_max=12, seed=1,
)
table, per_domain = generate_synthetic_corpus(spec)
source = five_core_filter(per_domain["dom0"])
target = five_core_filter(per_domain["dom1"])
print(f"source: {len(source)} sequences, target: {len(target)} sequences")

config = TrainConfig(
    lr=0.003, batch_size=32, pretrain_epochs=3, finetune_epochs=3,
    patience=5, negatives_k=20,
    d_v=16, n_experts=2, n_layers=1, n_heads=2, n_max=12, dropout=0.1,
)

print("\n-- pre-training on dom0 --")
model, losses = run_pretrain(table, source, config,
                             progress=lambda e, l: print(f"epoch {e}: loss {l:.3f}"))
checkpoint = model_to_tensors(model)

for mode in ("inductive", "transductive"):
    print(f"\n-- fine-tuning on dom1 ({mode}) --")
    result = run_finetune(table, target, mode, config, ckpt_tensors=checkpoint)
    report = result.report
    print(f"best epoch {result.best_epoch}, "
          f"valid NDCG@10 history {[f'{v:.3f}' for v in result.valid_history]}")
    for n in sorted(report.recall):
        print(f"Recall@{n} {report.recall[n]:.4f}   NDCG@{n} {report.ndcg[n]:.4f}")
