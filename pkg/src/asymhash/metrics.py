"""Retrieval metrics: AP/MAP over Hamming rankings, P@k, R@k, PR by radius."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .index import PackedCodeMatrix, hamming_to_all


class UndefinedMetricError(ValueError):
    pass


@dataclass
class RankedRelevance:
    """Relevance flags of one query's ranked list and the total relevant count in the database."""

    flags: np.ndarray
    n_relevant: int

    def __post_init__(self):
        self.flags = np.asarray(self.flags, dtype=bool)
        if int(self.flags.sum()) > self.n_relevant:
            raise ValueError("more relevant items ranked than exist in the database")


def average_precision(rel: RankedRelevance, truncated: bool = False) -> float:
    """Mean precision at the rank of each relevant hit, divided by n_relevant.

    With ``truncated=True`` the precision is instead averaged over the first
    n_relevant rank positions, whether or not they hold a hit.
    """
    if rel.n_relevant < 1:
        raise UndefinedMetricError("average precision needs at least one relevant item")
    hits = np.cumsum(rel.flags)
    ranks = np.arange(1, len(rel.flags) + 1)
    if truncated:
        top = min(rel.n_relevant, len(rel.flags))
        return math.fsum(hits[:top] / ranks[:top]) / rel.n_relevant
    return math.fsum((hits / ranks)[rel.flags]) / rel.n_relevant


def mean_average_precision(queries: list[RankedRelevance], truncated: bool = False) -> float:
    if not queries:
        raise UndefinedMetricError("MAP over an empty query set")
    return math.fsum(average_precision(q, truncated) for q in queries) / len(queries)


def precision_at_k(rel: RankedRelevance, k: int) -> float:
    """Relevant hits among the top k, over k (k stays the denominator on short lists)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return int(rel.flags[:k].sum()) / k


def recall_at_k(rel: RankedRelevance, k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    if rel.n_relevant < 1:
        raise UndefinedMetricError("recall needs at least one relevant item")
    return int(rel.flags[:k].sum()) / rel.n_relevant


@dataclass(frozen=True)
class PRPoint:
    radius: int
    precision: float
    recall: float
    defined: bool


def _distance_rows(query_codes: PackedCodeMatrix, db_codes: PackedCodeMatrix):
    for i in range(query_codes.n):
        yield hamming_to_all(query_codes[i], db_codes)


def _keep_mask(n, exclude, i):
    keep = np.ones(n, dtype=bool)
    if exclude is not None and exclude[i] >= 0:
        keep[exclude[i]] = False
    return keep


def ranked_relevance(
    query_codes: PackedCodeMatrix,
    db_codes: PackedCodeMatrix,
    query_labels,
    db_labels,
    exclude=None,
) -> list[RankedRelevance]:
    """Full Hamming rankings (ties by database index) turned into relevance lists.

    ``exclude[i]`` names a database row dropped from query i's ranking, used
    when queries are drawn from the database itself; -1 keeps every row.
    Queries without any relevant database item are skipped.
    """
    db_labels = np.asarray(db_labels)
    out = []
    for i, dist in enumerate(_distance_rows(query_codes, db_codes)):
        keep = _keep_mask(len(db_labels), exclude, i)
        order = np.flatnonzero(keep)
        order = order[np.argsort(dist[order], kind="stable")]
        flags = db_labels[order] == query_labels[i]
        if flags.any():
            out.append(RankedRelevance(flags, int(flags.sum())))
    return out


def pr_curve_by_radius(
    query_codes: PackedCodeMatrix,
    db_codes: PackedCodeMatrix,
    relevance: np.ndarray,
    exclude=None,
) -> list[PRPoint]:
    """Precision and recall of everything within Hamming radius r, r = 0..K.

    ``relevance`` is an m x n boolean matrix. Recall is averaged over every
    query with at least one relevant item; precision only over the queries
    that retrieve something at that radius. A radius where no query
    retrieves anything is reported with ``defined=False`` and NaN precision.
    """
    K = db_codes.bits
    relevance = np.asarray(relevance, dtype=bool)
    prec_sum = np.zeros(K + 1)
    prec_count = np.zeros(K + 1, dtype=np.int64)
    rec_sum = np.zeros(K + 1)
    used = 0
    for i, dist in enumerate(_distance_rows(query_codes, db_codes)):
        keep = _keep_mask(db_codes.n, exclude, i)
        rel = relevance[i] & keep
        if not rel.any():
            continue
        used += 1
        retrieved = np.cumsum(np.bincount(dist[keep], minlength=K + 1))
        hits = np.cumsum(np.bincount(dist[rel], minlength=K + 1))
        some = retrieved > 0
        prec_sum[some] += hits[some] / retrieved[some]
        prec_count += some
        rec_sum += hits / rel.sum()
    if used == 0:
        raise UndefinedMetricError("no query has a relevant database item")
    points = []
    for r in range(K + 1):
        defined = bool(prec_count[r] > 0)
        precision = prec_sum[r] / prec_count[r] if defined else float("nan")
        points.append(PRPoint(r, float(precision), float(rec_sum[r] / used), defined))
    return points


def write_metrics_csv(rows, path) -> None:
    """rows: iterable of (metric, k_or_radius, value)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "k_or_radius", "value"])
        for metric, k, value in rows:
            w.writerow([metric, "" if k is None else k, repr(float(value))])


def write_pr_csv(points: list[PRPoint], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["radius", "precision", "recall", "defined"])
        for p in points:
            prec = repr(p.precision) if p.defined else ""
            w.writerow([p.radius, prec, repr(p.recall), int(p.defined)])
