import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from unisrec.corpus import EvalInstance, ItemRef
from unisrec.errors import EmptyTestSetError, InvalidParameterError
from unisrec.evaluate import (
    GroupStats,
    MetricsReport,
    evaluate,
    long_tail_report,
    metrics_from_rank,
    rank_of_ground_truth,
    train_popularity_counts,
    write_report_json,
    write_report_tsv,
)
from unisrec.finetune import INDUCTIVE
from unisrec.model import ModelConfig, UniSRecModel
from unisrec.rng import RngStreams

from oracles import ndcg_contrib_oracle, sort_rank_oracle


class TestRank:
    def test_top_score_is_rank_one(self):
        assert rank_of_ground_truth([0.1, 0.9, 0.5], 1) == 1

    def test_lowest_is_last(self):
        assert rank_of_ground_truth([0.1, 0.9, 0.5], 0) == 3

    def test_tie_is_pessimistic(self):
        # Both ties rank ahead of the ground truth.
        assert rank_of_ground_truth([0.5, 0.5, 0.5], 1) == 3

    def test_single_item(self):
        assert rank_of_ground_truth([2.0], 0) == 1

    def test_out_of_range_index(self):
        with pytest.raises(InvalidParameterError):
            rank_of_ground_truth([1.0, 2.0], 2)

    def test_non_finite_scores(self):
        with pytest.raises(InvalidParameterError):
            rank_of_ground_truth([1.0, np.nan], 0)

    def test_thousand_random_vectors_match_sort_oracle(self):
        gen = np.random.default_rng(0)
        for _ in range(1000):
            n = int(gen.integers(1, 40))
            scores = gen.standard_normal(n)
            gt = int(gen.integers(0, n))
            assert rank_of_ground_truth(scores, gt) == sort_rank_oracle(
                scores.tolist(), gt
            )

    def test_engineered_ties_match_sort_oracle(self):
        gen = np.random.default_rng(1)
        for _ in range(300):
            n = int(gen.integers(2, 20))
            # Few distinct values force many exact ties.
            scores = gen.choice([0.0, 0.5, 1.0], size=n)
            gt = int(gen.integers(0, n))
            assert rank_of_ground_truth(scores, gt) == sort_rank_oracle(
                scores.tolist(), gt
            )

    @given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=30),
           st.data())
    @settings(max_examples=200, deadline=None)
    def test_monotone_transform_invariance(self, scores, data):
        gt = data.draw(st.integers(0, len(scores) - 1))
        base = rank_of_ground_truth(scores, gt)
        # Scaling by a power of two is exact in floating point, so the
        # transform is strictly monotone with no tie creation/destruction.
        scaled = rank_of_ground_truth([4.0 * x for x in scores], gt)
        assert base == scaled


class TestMetricContribs:
    def test_rank_one(self):
        assert metrics_from_rank(1, 10) == (1.0, 1.0)

    def test_rank_two_ndcg(self):
        hit, ndcg = metrics_from_rank(2, 10)
        assert hit == 1.0
        assert abs(ndcg - 0.6309297535714575) < 1e-12
        assert abs(ndcg - float(ndcg_contrib_oracle(2, 10))) < 1e-12

    def test_outside_cutoff_is_zero(self):
        assert metrics_from_rank(11, 10) == (0.0, 0.0)

    def test_boundary_rank_counts(self):
        hit, ndcg = metrics_from_rank(10, 10)
        assert hit == 1.0
        assert abs(ndcg - float(ndcg_contrib_oracle(10, 10))) < 1e-12

    def test_bad_rank(self):
        with pytest.raises(InvalidParameterError):
            metrics_from_rank(0, 10)

    @given(st.integers(1, 100))
    @settings(max_examples=100, deadline=None)
    def test_ndcg_never_exceeds_hit(self, rank):
        hit, ndcg = metrics_from_rank(rank, 50)
        assert 0.0 <= ndcg <= hit <= 1.0

    def test_monotone_decreasing_in_rank(self):
        vals = [metrics_from_rank(r, 50)[1] for r in range(1, 51)]
        assert all(a > b for a, b in zip(vals, vals[1:]))


def toy_instances(table, per_domain, domain="dom0", k=8):
    seqs = per_domain[domain][:k]
    return [EvalInstance(s.user, s.domain, s.items[:-1], s.items[-1]) for s in seqs]


@pytest.fixture(scope="module")
def model(tiny_corpus):
    table, _ = tiny_corpus
    return UniSRecModel(
        ModelConfig(d_w=table.dim, d_v=8, n_experts=2, n_layers=1,
                    n_heads=2, n_max=8, dropout=0.0),
        RngStreams(9),
    )


class TestEvaluate:
    def test_report_invariants(self, tiny_corpus, model):
        table, per_domain = tiny_corpus
        report = evaluate(model, toy_instances(table, per_domain), table,
                          "dom0", INDUCTIVE)
        assert report.user_count == 8
        assert set(report.recall) == {10, 50}
        assert report.recall[10] <= report.recall[50]
        assert report.ndcg[10] <= report.recall[10]
        # 30 items in the domain: every target ranks within 50.
        assert report.recall[50] == 1.0

    def test_matches_brute_force_per_user(self, tiny_corpus, model):
        table, per_domain = tiny_corpus
        instances = toy_instances(table, per_domain)
        report = evaluate(model, instances, table, "dom0", INDUCTIVE, ns=(10,))
        refs = table.items_in_domain("dom0")
        hits, gains = [], []
        for inst in instances:
            import unisrec.autodiff as ad
            with ad.no_grad():
                v = model.encode_items(
                    np.stack([table.vector(r) for r in refs]),
                    train=False, noise_active=False).data
                s = model.encode_contexts(
                    [np.stack([table.vector(r) for r in inst.context])],
                    train=False, noise_active=False).data[0]
            scores = (v @ s).tolist()
            gt = next(i for i, r in enumerate(refs) if r.key == inst.target.key)
            rank = sort_rank_oracle(scores, gt)
            hits.append(1.0 if rank <= 10 else 0.0)
            gains.append(float(ndcg_contrib_oracle(rank, 10)))
        assert abs(report.recall[10] - np.mean(hits)) < 1e-9
        assert abs(report.ndcg[10] - np.mean(gains)) < 1e-9

    def test_empty_test_set(self, tiny_corpus, model):
        table, _ = tiny_corpus
        with pytest.raises(EmptyTestSetError):
            evaluate(model, [], table, "dom0", INDUCTIVE)

    def test_tail_requires_popularity(self, tiny_corpus, model):
        table, per_domain = tiny_corpus
        with pytest.raises(InvalidParameterError):
            evaluate(model, toy_instances(table, per_domain), table, "dom0",
                     INDUCTIVE, tail_boundaries=(0, 5))


class TestLongTail:
    def refs(self, n):
        return [ItemRef(f"t{i}", "d", i) for i in range(n)]

    def instances_with_ranks(self):
        refs = self.refs(4)
        instances = [EvalInstance(f"u{i}", "d", [refs[0]], refs[i])
                     for i in range(4)]
        ranks = np.array([1, 3, 11, 2])
        pop = {("d", "t0"): 0, ("d", "t1"): 3, ("d", "t2"): 7, ("d", "t3"): 100}
        return instances, ranks, pop

    def test_bucket_partition(self):
        instances, ranks, pop = self.instances_with_ranks()
        out = long_tail_report(instances, ranks, pop, (0, 5, 20))
        assert sorted(out) == ["[0, 5)", "[20, inf)", "[5, 20)"]
        assert sum(g.count for g in out.values()) == len(instances)
        assert out["[0, 5)"].count == 2 and out["[0, 5)"].recall10 == 1.0
        assert out["[5, 20)"].recall10 == 0.0
        assert out["[20, inf)"].recall10 == 1.0

    def test_improvement_vs_baseline(self):
        instances, ranks, pop = self.instances_with_ranks()
        base = MetricsReport(recall={10: 0.5}, ndcg={10: 0.3}, user_count=4,
                             per_group={"[0, 5)": GroupStats(2, 0.5)})
        out = long_tail_report(instances, ranks, pop, (0, 5, 20), baseline=base)
        assert abs(out["[0, 5)"].improvement - 1.0) < 1e-12
        assert out["[5, 20)"].improvement is None

    def test_non_increasing_boundaries_rejected(self):
        instances, ranks, pop = self.instances_with_ranks()
        with pytest.raises(InvalidParameterError):
            long_tail_report(instances, ranks, pop, (0, 5, 5))

    def test_popularity_counts(self):
        from unisrec.corpus import InteractionSequence
        refs = self.refs(2)
        seqs = [InteractionSequence("u", "d", [refs[0], refs[1], refs[0]], [1, 2, 3])]
        counts = train_popularity_counts(seqs)
        assert counts == {("d", "t0"): 2, ("d", "t1"): 1}


class TestReportFiles:
    def report(self):
        return MetricsReport(recall={10: 0.12345678, 50: 0.5},
                             ndcg={10: 0.1, 50: 0.25}, user_count=7)

    def test_tsv_layout_and_rounding(self, tmp_path):
        path = tmp_path / "report.tsv"
        write_report_tsv(self.report(), path)
        lines = path.read_text().splitlines()
        assert lines[0] == "metric\tN\tvalue"
        assert lines[1] == "recall\t10\t0.123457"  # six decimals
        assert lines[2] == "recall\t50\t0.500000"
        assert len(lines) == 5

    def test_json_schema(self, tmp_path):
        path = tmp_path / "report.json"
        write_report_json(self.report(), path)
        doc = json.loads(path.read_text())
        assert doc["user_count"] == 7
        assert doc["recall"] == {"10": "0.123457", "50": "0.500000"}
        assert doc["ndcg"]["50"] == "0.250000"

    def test_json_per_group(self, tmp_path):
        report = self.report()
        report.per_group = {"[0, 5)": GroupStats(3, 0.5, improvement=0.25)}
        path = tmp_path / "report.json"
        write_report_json(report, path)
        doc = json.loads(path.read_text())
        assert doc["per_group"]["[0, 5)"] == {
            "count": 3, "recall10": "0.500000", "improvement": "0.250000",
        }
