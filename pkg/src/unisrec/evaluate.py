"""Full-ranking leave-one-out evaluation: Recall@N, NDCG@N, and the
long-tail popularity-group breakdown."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import EmptyTestSetError, InvalidParameterError
from .finetune import TRANSDUCTIVE

DEFAULT_NS = (10, 50)
DEFAULT_TAIL_BOUNDARIES = (0, 5, 20, 50)


@dataclass
class GroupStats:
    count: int
    recall10: float
    improvement: float | None = None  # vs a named baseline report


@dataclass
class MetricsReport:
    recall: dict  # N -> value
    ndcg: dict  # N -> value
    user_count: int
    per_group: dict = field(default_factory=dict)  # "[lo, hi)" -> GroupStats

    def validate(self):
        ns = sorted(self.recall)
        for a, b in zip(ns, ns[1:]):
            assert self.recall[a] <= self.recall[b] + 1e-12
        for n in ns:
            assert self.ndcg[n] <= self.recall[n] + 1e-12


def rank_of_ground_truth(scores, gt_index):
    """1-based rank with pessimistic ties (ground truth after equal scores)."""
    scores = np.asarray(scores)
    if not 0 <= gt_index < scores.shape[0]:
        raise InvalidParameterError(f"gt index {gt_index} out of range")
    if not np.isfinite(scores).all():
        raise InvalidParameterError("non-finite scores")
    gt = scores[gt_index]
    higher = int((scores > gt).sum())
    equal = int((scores == gt).sum()) - 1  # exclude the ground truth itself
    return 1 + higher + equal


def metrics_from_rank(rank, n):
    """Per-user contributions: hit indicator and single-relevant-item NDCG."""
    if rank < 1:
        raise InvalidParameterError("rank must be >= 1")
    if rank > n:
        return 0.0, 0.0
    return 1.0, 1.0 / np.log2(rank + 1)


def _score_all_items(model, instances, table, domain, mode, batch_size=512):
    """Scores of every domain item for each instance; returns (scores, refs)."""
    refs = table.items_in_domain(domain)
    item_vecs = np.stack([table.vector(r) for r in refs])
    with ad.no_grad():
        v = model.encode_items(item_vecs, train=False, noise_active=False).data
        if mode == TRANSDUCTIVE:
            v = v + model.params["id_embed.E"].data
        all_scores = np.empty((len(instances), len(refs)), dtype=v.dtype)
        for start in range(0, len(instances), batch_size):
            chunk = instances[start:start + batch_size]
            contexts = [np.stack([table.vector(r) for r in inst.context]) for inst in chunk]
            id_indices = None
            if mode == TRANSDUCTIVE:
                pos_of = {r.key: i for i, r in enumerate(refs)}
                id_indices = [[pos_of[r.key] for r in inst.context] for inst in chunk]
            s = model.encode_contexts(contexts, train=False, noise_active=False,
                                      id_indices=id_indices).data
            all_scores[start:start + len(chunk)] = s @ v.T
    return all_scores, refs


def evaluate(model, instances, table, domain, mode, ns=DEFAULT_NS,
             train_popularity=None, tail_boundaries=None, baseline=None):
    """Average Recall@N / NDCG@N over `instances` with full ranking.

    `train_popularity`: optional {(domain, token): train interaction count}
    enabling the long-tail breakdown.
    """
    if not instances:
        raise EmptyTestSetError("no test users to evaluate")
    scores, refs = _score_all_items(model, instances, table, domain, mode)
    pos_of = {r.key: i for i, r in enumerate(refs)}
    ranks = np.empty(len(instances), dtype=np.int64)
    for i, inst in enumerate(instances):
        ranks[i] = rank_of_ground_truth(scores[i], pos_of[inst.target.key])

    recall, ndcg = {}, {}
    for n in ns:
        contribs = [metrics_from_rank(r, n) for r in ranks]
        recall[n] = float(np.mean([c[0] for c in contribs]))
        ndcg[n] = float(np.mean([c[1] for c in contribs]))
    report = MetricsReport(recall=recall, ndcg=ndcg, user_count=len(instances))
    if tail_boundaries is not None:
        if train_popularity is None:
            raise InvalidParameterError("long-tail breakdown needs train popularity counts")
        report.per_group = long_tail_report(
            instances, ranks, train_popularity, tail_boundaries, baseline=baseline
        )
    report.validate()
    return report


def long_tail_report(instances, ranks, train_popularity, boundaries, baseline=None):
    """Group test instances by ground-truth training popularity.

    `boundaries` are strictly increasing cut points; buckets are half-open
    [b_i, b_{i+1}) with a final [b_last, inf). `baseline` is a prior report
    whose per-group Recall@10 anchors the improvement ratios.
    """
    bs = list(boundaries)
    if any(a >= b for a, b in zip(bs, bs[1:])):
        raise InvalidParameterError("boundaries must be strictly increasing")
    edges = bs + [np.inf]
    labels = [
        f"[{edges[i]:g}, {edges[i + 1]:g})" for i in range(len(edges) - 1)
    ]
    hits = {lab: [] for lab in labels}
    for inst, rank in zip(instances, ranks):
        pop = train_popularity.get(inst.target.key, 0)
        for i in range(len(edges) - 1):
            if edges[i] <= pop < edges[i + 1]:
                hits[labels[i]].append(1.0 if rank <= 10 else 0.0)
                break
    out = {}
    for lab in labels:
        vals = hits[lab]
        r10 = float(np.mean(vals)) if vals else 0.0
        improvement = None
        if baseline is not None and lab in baseline.per_group:
            base = baseline.per_group[lab].recall10
            improvement = (r10 - base) / base if base > 0 else None
        out[lab] = GroupStats(count=len(vals), recall10=r10, improvement=improvement)
    return out


def train_popularity_counts(train_sequences):
    """Training-set interaction count per (domain, token)."""
    counts = {}
    for seq in train_sequences:
        for ref in seq.items:
            counts[ref.key] = counts.get(ref.key, 0) + 1
    return counts


def _fmt(x):
    return f"{x:.6f}"  # round-half-even via IEEE formatting


def write_report_tsv(report: MetricsReport, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write("metric\tN\tvalue\n")
        for n in sorted(report.recall):
            f.write(f"recall\t{n}\t{_fmt(report.recall[n])}\n")
        for n in sorted(report.ndcg):
            f.write(f"ndcg\t{n}\t{_fmt(report.ndcg[n])}\n")


def write_report_json(report: MetricsReport, path):
    doc = {
        "user_count": report.user_count,
        "recall": {str(n): _fmt(v) for n, v in sorted(report.recall.items())},
        "ndcg": {str(n): _fmt(v) for n, v in sorted(report.ndcg.items())},
    }
    if report.per_group:
        doc["per_group"] = {
            lab: {
                "count": g.count,
                "recall10": _fmt(g.recall10),
                "improvement": None if g.improvement is None else _fmt(g.improvement),
            }
            for lab, g in report.per_group.items()
        }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")
