"""Bit-packed Hamming retrieval: database index, ranking, and metrics.

Ranking is an exhaustive packed XOR + popcount scan, totally ordered by
(distance, database id) so results are reproducible despite pervasive
Hamming ties. Evaluation reports mAP@M, a PR curve swept over integer
Hamming radii 0..K (ball-retrieval semantics), and precision at
configured top ranks.

Conventions pinned here: a database item is relevant to a query when
they share at least one label; AP@M normalizes by the number of
relevant items inside the top-M cut (zero relevant items gives AP 0);
an empty Hamming ball has precision 1 by convention; P@Top-m divides by
min(m, database size).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .codes import BinaryCode, hamming_to_all, read_codes, words_per_code, write_codes
from .data import read_labels, write_labels
from .errors import InvalidInputError

DEFAULT_TOP_RANKS = (1, 5, 10, 20, 50, 100)


@dataclass(frozen=True)
class RetrievalIndex:
    """Immutable searchable database of packed codes and multi-hot labels."""

    words: np.ndarray
    labels: np.ndarray
    code_length: int

    @property
    def size(self):
        return self.words.shape[0]

    @property
    def n_classes(self):
        return self.labels.shape[1]


@dataclass(frozen=True)
class EvalReport:
    """Retrieval quality summary for one query set against one index."""

    map_at_m: float
    pr_curve: list
    p_at_top: list
    m: int


def build_index(codes, labels, code_length=None):
    """Assemble an index from packed words (or BinaryCode list) and labels."""
    if isinstance(codes, np.ndarray):
        if code_length is None:
            raise InvalidInputError("code_length is required with packed word input")
        words = np.ascontiguousarray(codes, dtype=np.uint64)
        if words.ndim != 2 or words.shape[1] != words_per_code(code_length):
            raise InvalidInputError(
                f"packed words shape {words.shape} does not match"
                f" code_length {code_length}"
            )
    else:
        code_list = list(codes)
        if not code_list:
            if code_length is None:
                raise InvalidInputError("code_length is required for an empty index")
            words = np.zeros((0, words_per_code(code_length)), dtype=np.uint64)
        else:
            lengths = {c.length for c in code_list}
            if len(lengths) != 1:
                raise InvalidInputError(f"codes have mixed lengths: {sorted(lengths)}")
            inferred = lengths.pop()
            if code_length is not None and code_length != inferred:
                raise InvalidInputError(
                    f"code_length {code_length} does not match codes of length {inferred}"
                )
            code_length = inferred
            words = np.stack([c.words for c in code_list])
    label_arr = np.asarray(labels, dtype=np.float64)
    if label_arr.ndim != 2:
        raise InvalidInputError(f"labels must be 2-D, got shape {label_arr.shape}")
    if label_arr.shape[0] != words.shape[0]:
        raise InvalidInputError(
            f"{words.shape[0]} codes but {label_arr.shape[0]} label rows"
        )
    if not np.all((label_arr == 0.0) | (label_arr == 1.0)):
        raise InvalidInputError("labels must be 0/1 multi-hot rows")
    return RetrievalIndex(words=words, labels=label_arr, code_length=int(code_length))


def rank(index, query, m):
    """Top-m database ids by Hamming distance, ties broken by ascending id."""
    if not isinstance(query, BinaryCode):
        raise InvalidInputError(f"query must be a BinaryCode, got {type(query).__name__}")
    if query.length != index.code_length:
        raise InvalidInputError(
            f"query length {query.length} does not match index length {index.code_length}"
        )
    if index.size == 0:
        raise InvalidInputError("cannot rank against an empty index")
    if m < 1:
        raise InvalidInputError(f"m must be >= 1, got {m}")
    distances = hamming_to_all(query.words, index.words)
    n = index.size
    if m >= n:
        order = np.lexsort((np.arange(n), distances))
    else:
        # narrow to the candidates at or below the m-th smallest distance,
        # then order only those; ids at the cut distance tie-break correctly
        # because flatnonzero yields ascending ids
        cut = np.partition(distances, m - 1)[m - 1]
        candidates = np.flatnonzero(distances <= cut)
        local = np.lexsort((candidates, distances[candidates]))[:m]
        order = candidates[local]
    return [(int(i), int(distances[i])) for i in order]


def average_precision(flags):
    """AP over a ranked relevance-flag list, normalized by its relevant count."""
    arr = np.asarray(flags, dtype=np.float64)
    if arr.ndim != 1:
        raise InvalidInputError(f"flags must be 1-D, got shape {arr.shape}")
    if not np.all((arr == 0.0) | (arr == 1.0)):
        raise InvalidInputError("flags must be 0/1 values")
    relevant = arr.sum()
    if relevant == 0:
        return 0.0
    cumulative = np.cumsum(arr)
    ranks = np.arange(1, arr.size + 1)
    return float((cumulative[arr == 1.0] / ranks[arr == 1.0]).sum() / relevant)


def _query_words(queries, code_length):
    if isinstance(queries, np.ndarray):
        words = np.ascontiguousarray(queries, dtype=np.uint64)
        if words.ndim != 2 or words.shape[1] != words_per_code(code_length):
            raise InvalidInputError(
                f"query words shape {words.shape} does not match code_length {code_length}"
            )
        return words
    code_list = list(queries)
    if any(c.length != code_length for c in code_list):
        raise InvalidInputError("query code length does not match index")
    if not code_list:
        return np.zeros((0, words_per_code(code_length)), dtype=np.uint64)
    return np.stack([c.words for c in code_list])


def evaluate(index, queries, query_labels, m, top_ranks=DEFAULT_TOP_RANKS):
    """Score a query set: mAP@m, Hamming-radius PR curve, and P@Top ranks."""
    if index.size == 0:
        raise InvalidInputError("cannot evaluate against an empty index")
    if m < 1:
        raise InvalidInputError(f"m must be >= 1, got {m}")
    words = _query_words(queries, index.code_length)
    labels = np.asarray(query_labels, dtype=np.float64)
    if words.shape[0] == 0:
        raise InvalidInputError("empty query set")
    if labels.shape != (words.shape[0], index.n_classes):
        raise InvalidInputError(
            f"query labels shape {labels.shape} does not match"
            f" ({words.shape[0]}, {index.n_classes})"
        )
    k = index.code_length
    n = index.size
    ids = np.arange(n)
    ap_values = np.empty(words.shape[0])
    p_at_top_sums = np.zeros(len(top_ranks))
    retrieved_by_distance = np.zeros(k + 1, dtype=np.int64)
    relevant_by_distance = np.zeros(k + 1, dtype=np.int64)
    total_relevant = 0
    for q, (q_words, q_label) in enumerate(zip(words, labels)):
        distances = hamming_to_all(q_words, index.words)
        relevant = (index.labels @ q_label) > 0
        order = np.lexsort((ids, distances))
        ordered_flags = relevant[order]
        ap_values[q] = average_precision(ordered_flags[:m].astype(np.float64))
        for t, top in enumerate(top_ranks):
            p_at_top_sums[t] += ordered_flags[:top].sum() / min(top, n)
        retrieved_by_distance += np.bincount(distances, minlength=k + 1)
        relevant_by_distance += np.bincount(distances[relevant], minlength=k + 1)
        total_relevant += int(relevant.sum())
    retrieved_cum = np.cumsum(retrieved_by_distance)
    relevant_cum = np.cumsum(relevant_by_distance)
    pr_curve = []
    for radius in range(k + 1):
        retrieved = retrieved_cum[radius]
        true_positives = relevant_cum[radius]
        precision = float(true_positives / retrieved) if retrieved else 1.0
        recall = float(true_positives / total_relevant) if total_relevant else 0.0
        pr_curve.append((recall, precision))
    p_at_top = [
        (int(top), float(p_at_top_sums[t] / words.shape[0]))
        for t, top in enumerate(top_ranks)
    ]
    return EvalReport(
        map_at_m=float(ap_values.mean()), pr_curve=pr_curve, p_at_top=p_at_top, m=int(m)
    )


def save_index(index, codes_path, labels_path):
    """Persist an index as a code file plus a label-table sidecar."""
    if index.size == 0:
        raise InvalidInputError("refusing to persist an empty index")
    write_codes(codes_path, index.words, index.code_length)
    write_labels(labels_path, index.labels)


def load_index(codes_path, labels_path):
    """Load an index persisted by ``save_index``."""
    words, code_length = read_codes(codes_path)
    labels = read_labels(labels_path)
    return build_index(words, labels, code_length=code_length)


def write_report(report, path):
    """Write an EvalReport as deterministic, human-readable JSON."""
    payload = {
        "m": report.m,
        "map_at_m": report.map_at_m,
        "pr_curve": [[recall, precision] for recall, precision in report.pr_curve],
        "p_at_top": [[rank_m, precision] for rank_m, precision in report.p_at_top],
    }
    with open(path, "w", encoding="ascii") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_report(path):
    """Load an EvalReport written by ``write_report``."""
    with open(path, "r", encoding="ascii") as fh:
        payload = json.load(fh)
    return EvalReport(
        map_at_m=float(payload["map_at_m"]),
        pr_curve=[(float(r), float(p)) for r, p in payload["pr_curve"]],
        p_at_top=[(int(t), float(p)) for t, p in payload["p_at_top"]],
        m=int(payload["m"]),
    )


def write_pr_csv(report, path):
    """Flat CSV of the PR curve, one row per Hamming radius."""
    lines = ["radius,recall,precision"]
    for radius, (recall, precision) in enumerate(report.pr_curve):
        lines.append(f"{radius},{recall!r},{precision!r}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def write_p_at_top_csv(report, path):
    """Flat CSV of precision at each configured top rank."""
    lines = ["rank,precision"]
    for rank_m, precision in report.p_at_top:
        lines.append(f"{rank_m},{precision!r}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
