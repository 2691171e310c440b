import json
import time

import numpy as np
import pytest

from hashdistill.codes import pack_signs, quantize, unpack_signs
from hashdistill.errors import InvalidInputError
from hashdistill.retrieval import (
    EvalReport,
    average_precision,
    build_index,
    evaluate,
    load_index,
    rank,
    read_report,
    save_index,
    write_p_at_top_csv,
    write_pr_csv,
    write_report,
)

# ---------------------------------------------------------------------------
# Brute-force reference evaluator, written before the implementation.
# Operates on unpacked +-1 arrays with plain loops and python sorting; the
# packed implementation must agree with it exactly.
# ---------------------------------------------------------------------------


def bf_hamming(a, b):
    return int(sum(1 for u, v in zip(a, b) if u != v))


def bf_rank(db_signs, query_signs, m):
    distances = [bf_hamming(row, query_signs) for row in db_signs]
    order = sorted(range(len(db_signs)), key=lambda i: (distances[i], i))
    return [(i, distances[i]) for i in order[:m]]


def bf_average_precision(flags):
    relevant = sum(flags)
    if relevant == 0:
        return 0.0
    total, seen = 0.0, 0
    for k, flag in enumerate(flags, start=1):
        if flag:
            seen += 1
            total += seen / k
    return total / relevant


def bf_relevant(query_label, db_label):
    return any(a == 1.0 and b == 1.0 for a, b in zip(query_label, db_label))


def bf_evaluate(db_signs, db_labels, query_signs, query_labels, m, top_ranks):
    n, k = len(db_signs), len(db_signs[0])
    ap_values = []
    p_at_top = {rank_m: [] for rank_m in top_ranks}
    tp_at_radius = [0] * (k + 1)
    retrieved_at_radius = [0] * (k + 1)
    total_relevant = 0
    for q_signs, q_label in zip(query_signs, query_labels):
        ranked = bf_rank(db_signs, q_signs, n)
        rel = [bf_relevant(q_label, db_labels[i]) for i, _ in ranked]
        ap_values.append(bf_average_precision(rel[:m]))
        for rank_m in top_ranks:
            denom = min(rank_m, n)
            p_at_top[rank_m].append(sum(rel[:rank_m]) / denom)
        for (idx, dist), flag in zip(ranked, rel):
            total_relevant += flag
            for radius in range(dist, k + 1):
                retrieved_at_radius[radius] += 1
                tp_at_radius[radius] += flag
    curve = []
    for radius in range(k + 1):
        ret = retrieved_at_radius[radius]
        precision = tp_at_radius[radius] / ret if ret else 1.0
        recall = tp_at_radius[radius] / total_relevant if total_relevant else 0.0
        curve.append((recall, precision))
    return (
        sum(ap_values) / len(ap_values),
        curve,
        [(rank_m, sum(vals) / len(vals)) for rank_m, vals in p_at_top.items()],
    )


def random_signs(rng, n, k):
    return rng.choice([-1.0, 1.0], size=(n, k))


def make_index(signs, labels):
    return build_index(pack_signs(signs), labels, code_length=signs.shape[1])


class TestBuildIndex:
    def test_empty_index_queries_error(self):
        index = build_index(np.zeros((0, 1), dtype=np.uint64), np.zeros((0, 3)), code_length=16)
        assert index.size == 0
        query = quantize(np.ones(16))
        with pytest.raises(InvalidInputError):
            rank(index, query, 5)

    def test_length_mismatch(self):
        rng = np.random.default_rng(3)
        signs = random_signs(rng, 4, 16)
        with pytest.raises(InvalidInputError):
            build_index(pack_signs(signs), np.ones((5, 2)), code_length=16)

    def test_round_trip_persistence(self, tmp_path):
        rng = np.random.default_rng(5)
        signs = random_signs(rng, 50, 24)
        labels = np.zeros((50, 4))
        labels[np.arange(50), rng.integers(0, 4, 50)] = 1.0
        index = make_index(signs, labels)
        codes_path = tmp_path / "db.codes"
        labels_path = tmp_path / "db.labels.csv"
        save_index(index, codes_path, labels_path)
        loaded = load_index(codes_path, labels_path)
        np.testing.assert_array_equal(loaded.words, index.words)
        np.testing.assert_array_equal(loaded.labels, index.labels)
        assert loaded.code_length == 24

    def test_thousand_codes_load_quickly(self, tmp_path):
        rng = np.random.default_rng(7)
        signs = random_signs(rng, 1000, 64)
        labels = np.ones((1000, 1))
        index = make_index(signs, labels)
        codes_path = tmp_path / "db.codes"
        labels_path = tmp_path / "db.labels.bin"
        save_index(index, codes_path, labels_path)
        start = time.perf_counter()
        load_index(codes_path, labels_path)
        assert time.perf_counter() - start < 1.0


class TestRank:
    def test_exact_match_comes_first(self):
        rng = np.random.default_rng(11)
        signs = random_signs(rng, 20, 16)
        signs[7] = signs[3]  # duplicate; id 3 must win the tie
        index = make_index(signs, np.ones((20, 1)))
        hits = rank(index, quantize(signs[3]), 3)
        assert hits[0] == (3, 0)
        assert hits[1] == (7, 0)

    def test_m_larger_than_database_returns_full_ranking(self):
        rng = np.random.default_rng(13)
        signs = random_signs(rng, 10, 8)
        index = make_index(signs, np.ones((10, 1)))
        hits = rank(index, quantize(signs[0]), 50)
        assert len(hits) == 10

    def test_matches_naive_sort_oracle_with_ties(self):
        rng = np.random.default_rng(17)
        signs = random_signs(rng, 100, 16)
        index = make_index(signs, np.ones((100, 1)))
        for _ in range(20):
            query = rng.choice([-1.0, 1.0], size=16)
            for m in (100, 17, 1):  # full ranking and partial cuts with ties
                expected = bf_rank(signs, query, m)
                actual = rank(index, quantize(query), m)
                assert actual == expected

    def test_code_length_mismatch(self):
        rng = np.random.default_rng(19)
        index = make_index(random_signs(rng, 5, 16), np.ones((5, 1)))
        with pytest.raises(InvalidInputError):
            rank(index, quantize(np.ones(24)), 3)


class TestAveragePrecision:
    def test_all_relevant(self):
        assert average_precision([1, 1, 1, 1]) == pytest.approx(1.0)

    def test_none_relevant(self):
        assert average_precision([0, 0, 0]) == 0.0

    def test_hand_enumerated_case(self):
        assert average_precision([1, 0, 1]) == pytest.approx(5 / 6)

    def test_matches_oracle_on_random_flags(self):
        rng = np.random.default_rng(23)
        for _ in range(200):
            flags = (rng.random(rng.integers(1, 40)) < 0.3).astype(int).tolist()
            assert average_precision(flags) == pytest.approx(bf_average_precision(flags), abs=1e-15)


class TestEvaluate:
    def test_single_class_identical_codes_give_perfect_map(self):
        rng = np.random.default_rng(29)
        signs = np.tile(rng.choice([-1.0, 1.0], size=16), (30, 1))
        labels = np.ones((30, 1))
        index = make_index(signs, labels)
        report = evaluate(index, pack_signs(signs[:5]), labels[:5], m=10)
        assert report.map_at_m == pytest.approx(1.0)

    def test_multi_label_single_shared_class_counts(self):
        signs = np.array([[1.0, 1, 1, 1], [-1.0, -1, -1, -1]])
        db_labels = np.array([[1.0, 0, 0], [0.0, 1, 0]])
        index = make_index(signs, db_labels)
        query_labels = np.array([[0.0, 1, 1]])  # shares class 1 with db item 1 only
        report = evaluate(index, pack_signs(signs[:1]), query_labels, m=2)
        # ranked: item 0 (distance 0, irrelevant), item 1 (distance 4, relevant)
        assert report.map_at_m == pytest.approx(0.5)

    def test_matches_brute_force_evaluator(self):
        """20 random 50-query x 200-item instances agree with the reference
        evaluator exactly (mAP, PR curve, P@Top)."""
        rng = np.random.default_rng(31)
        top_ranks = (1, 5, 20, 300)
        for trial in range(20):
            k = int(rng.choice([8, 16]))
            n_cls = int(rng.integers(2, 5))
            db_signs = random_signs(rng, 200, k)
            q_signs = random_signs(rng, 50, k)
            db_labels = (rng.random((200, n_cls)) < 0.4).astype(float)
            db_labels[db_labels.sum(axis=1) == 0, 0] = 1.0
            q_labels = (rng.random((50, n_cls)) < 0.4).astype(float)
            q_labels[q_labels.sum(axis=1) == 0, 0] = 1.0
            index = make_index(db_signs, db_labels)
            report = evaluate(index, pack_signs(q_signs), q_labels, m=100, top_ranks=top_ranks)
            bf_map, bf_curve, bf_ptop = bf_evaluate(
                db_signs, db_labels, q_signs, q_labels, 100, top_ranks
            )
            assert report.map_at_m == pytest.approx(bf_map, abs=1e-12)
            assert len(report.pr_curve) == k + 1
            for (recall, precision), (bf_r, bf_p) in zip(report.pr_curve, bf_curve):
                assert recall == pytest.approx(bf_r, abs=1e-12)
                assert precision == pytest.approx(bf_p, abs=1e-12)
            for (m_a, p_a), (m_b, p_b) in zip(report.p_at_top, bf_ptop):
                assert m_a == m_b
                assert p_a == pytest.approx(p_b, abs=1e-12)

    def test_pr_curve_recall_non_decreasing(self):
        rng = np.random.default_rng(37)
        db_signs = random_signs(rng, 100, 16)
        labels = (rng.random((100, 3)) < 0.5).astype(float)
        labels[labels.sum(axis=1) == 0, 0] = 1.0
        index = make_index(db_signs, labels)
        report = evaluate(index, pack_signs(db_signs[:10]), labels[:10], m=50)
        recalls = [r for r, _ in report.pr_curve]
        assert all(a <= b + 1e-15 for a, b in zip(recalls, recalls[1:]))
        assert all(0.0 <= r <= 1.0 for r in recalls)
        assert all(0.0 <= p <= 1.0 for _, p in report.pr_curve)
        assert recalls[-1] == pytest.approx(1.0)  # radius K retrieves everything

    def test_empty_query_set_rejected(self):
        rng = np.random.default_rng(41)
        index = make_index(random_signs(rng, 10, 8), np.ones((10, 1)))
        with pytest.raises(InvalidInputError):
            evaluate(index, np.zeros((0, 1), dtype=np.uint64), np.zeros((0, 1)), m=5)


class TestReportFiles:
    def _report(self):
        rng = np.random.default_rng(43)
        signs = random_signs(rng, 40, 8)
        labels = (rng.random((40, 2)) < 0.5).astype(float)
        labels[labels.sum(axis=1) == 0, 0] = 1.0
        index = make_index(signs, labels)
        return evaluate(index, pack_signs(signs[:8]), labels[:8], m=20)

    def test_json_round_trip(self, tmp_path):
        report = self._report()
        path = tmp_path / "report.json"
        write_report(report, path)
        loaded = read_report(path)
        assert isinstance(loaded, EvalReport)
        assert loaded.map_at_m == report.map_at_m
        assert loaded.pr_curve == report.pr_curve
        assert loaded.p_at_top == report.p_at_top
        assert loaded.m == report.m

    def test_rewrite_is_byte_identical(self, tmp_path):
        report = self._report()
        first = tmp_path / "a.json"
        second = tmp_path / "b.json"
        write_report(report, first)
        write_report(read_report(first), second)
        assert first.read_bytes() == second.read_bytes()

    def test_csv_exports(self, tmp_path):
        report = self._report()
        pr_path = tmp_path / "pr.csv"
        top_path = tmp_path / "top.csv"
        write_pr_csv(report, pr_path)
        write_p_at_top_csv(report, top_path)
        pr_lines = pr_path.read_text().splitlines()
        assert pr_lines[0] == "radius,recall,precision"
        assert len(pr_lines) == 1 + len(report.pr_curve)
        top_lines = top_path.read_text().splitlines()
        assert top_lines[0] == "rank,precision"
        assert len(top_lines) == 1 + len(report.p_at_top)


class TestThroughput:
    def test_packed_scan_beats_unpacked_scan(self):
        """Packed-popcount ranking must be at least 5x faster than an
        unpacked per-element comparison scan at N=1e5, K=64."""
        rng = np.random.default_rng(47)
        n, k = 100_000, 64
        signs = random_signs(rng, n, k)
        words = pack_signs(signs)
        index = build_index(words, np.ones((n, 1)), code_length=k)
        query = quantize(rng.choice([-1.0, 1.0], size=k))
        query_signs = unpack_signs(query.words, k)

        def packed():
            return rank(index, query, 10)

        def unpacked():
            distances = (signs != query_signs).sum(axis=1)
            order = np.lexsort((np.arange(n), distances))
            return [(int(i), int(distances[i])) for i in order[:10]]

        assert [h[0] for h in packed()] == [h[0] for h in unpacked()]
        t_packed = min(_time(packed) for _ in range(3))
        t_unpacked = min(_time(unpacked) for _ in range(3))
        assert t_unpacked / t_packed >= 5.0


def _time(fn):
    start = time.perf_counter()
    fn()
    return time.perf_counter() - start
