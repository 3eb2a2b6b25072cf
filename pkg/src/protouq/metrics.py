"""Retrieval metrics, correlation, removal curves, and information measures.

Rank conventions used throughout: ranks are 1-based positions after
sorting a gallery by descending similarity, ties broken by ascending
gallery index.  A query's rank is the best (smallest) rank among its
positives.  t2v treats each text column as a query over the vision rows;
v2t treats each vision row as a query over the text columns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .embed import PairSet, SimilarityMatrix
from .errors import (
    EmptyVector,
    InvalidConfig,
    InvalidCounts,
    LengthMismatch,
    MissingPositive,
    NotADistribution,
    TooManyRemoved,
    ZeroVariance,
)

T2V = "t2v"
V2T = "v2t"
DIRECTIONS = (T2V, V2T)

GALLERY_SIDE = "gallery"
QUERY_SIDE = "query"

UNCERTAINTY_MODE = "uncertainty"
RANDOM_MODE = "random"

_DIST_TOL = 1e-9


@dataclass(frozen=True)
class RetrievalReport:
    """Standard retrieval numbers for one direction.

    r1/r5/r10 are percentages in [0, 100]; mdr is the median rank (the
    lower middle for an even query count) and mnr the mean rank.
    """

    direction: str
    r1: float
    r5: float
    r10: float
    mdr: float
    mnr: float
    n_queries: int


def _values_of(m) -> np.ndarray:
    values = m.values if isinstance(m, SimilarityMatrix) else np.asarray(m, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
        raise LengthMismatch("similarity matrix must be 2-D and nonempty")
    return values


def _rank_of_best_positive(scores: np.ndarray, positives: np.ndarray) -> int:
    """1-based rank of the best positive under desc-score, asc-index order."""
    best = None
    for p in positives:
        s = scores[p]
        rank = int(np.count_nonzero(scores > s)) + int(np.count_nonzero(scores[:p] == s)) + 1
        if best is None or rank < best:
            best = rank
    return best


def retrieval_ranks(m, pairs: PairSet, direction: str) -> np.ndarray:
    """Rank of every query's best positive, in query-index order."""
    values = _values_of(m)
    if direction not in DIRECTIONS:
        raise InvalidConfig(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    n_vision, n_text = values.shape
    pairs.check_against(n_vision, n_text)
    if direction == T2V:
        by_query = pairs.visions_of()
        n_queries = n_text
        column = True
    else:
        by_query = pairs.texts_of()
        n_queries = n_vision
        column = False
    ranks = np.empty(n_queries, dtype=np.int64)
    for q in range(n_queries):
        positives = by_query.get(q)
        if positives is None:
            raise MissingPositive(f"query {q} ({direction}) has no positive")
        scores = values[:, q] if column else values[q, :]
        ranks[q] = _rank_of_best_positive(scores, positives)
    return ranks


def evaluate_retrieval(m, pairs: PairSet, direction: str) -> RetrievalReport:
    """R@1/5/10, median and mean rank for one retrieval direction."""
    ranks = retrieval_ranks(m, pairs, direction)
    n = ranks.size
    sorted_ranks = np.sort(ranks)
    return RetrievalReport(
        direction=direction,
        r1=100.0 * float(np.count_nonzero(ranks <= 1)) / n,
        r5=100.0 * float(np.count_nonzero(ranks <= 5)) / n,
        r10=100.0 * float(np.count_nonzero(ranks <= 10)) / n,
        mdr=float(sorted_ranks[(n - 1) // 2]),
        mnr=float(ranks.mean()),
        n_queries=n,
    )


def pearson(x, y) -> float:
    """Sample Pearson correlation, clamped to [-1, 1]."""
    a = np.asarray(x, dtype=np.float64).ravel()
    b = np.asarray(y, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise LengthMismatch(f"lengths differ: {a.shape[0]} vs {b.shape[0]}")
    if a.size < 2:
        raise LengthMismatch("correlation needs at least 2 observations")
    ac = a - a.mean()
    bc = b - b.mean()
    va = float(np.dot(ac, ac))
    vb = float(np.dot(bc, bc))
    if va == 0.0 or vb == 0.0:
        raise ZeroVariance("correlation is undefined for a constant vector")
    return float(np.clip(np.dot(ac, bc) / math.sqrt(va * vb), -1.0, 1.0))


# ---- removal curves ----


@dataclass(frozen=True)
class RemovalPoint:
    removed: int
    r1_t2v: float
    r1_v2t: float


@dataclass(frozen=True)
class RemovalCurve:
    mode: str
    side: str
    points: tuple[RemovalPoint, ...]


def _pair_subset_r1(values: np.ndarray, kept: list[tuple[int, int]], direction: str) -> float:
    """R@1 over surviving pairs; every surviving pair is one query.

    The gallery shrinks to the instances still referenced on the gallery
    side, and each query is scored by its best-ranked surviving positive,
    so with one pair per query this matches evaluate_retrieval exactly.
    """
    if direction == T2V:
        gallery = sorted({v for v, _ in kept})
        gallery_pos = {g: i for i, g in enumerate(gallery)}
        positives_of: dict[int, list[int]] = {}
        for v, t in kept:
            positives_of.setdefault(t, []).append(gallery_pos[v])
        hits = 0
        for v, t in kept:
            scores = values[gallery, t]
            rank = _rank_of_best_positive(scores, np.array(sorted(positives_of[t])))
            hits += rank == 1
    else:
        gallery = sorted({t for _, t in kept})
        gallery_pos = {g: i for i, g in enumerate(gallery)}
        positives_of = {}
        for v, t in kept:
            positives_of.setdefault(v, []).append(gallery_pos[t])
        hits = 0
        for v, t in kept:
            scores = values[v, gallery]
            rank = _rank_of_best_positive(scores, np.array(sorted(positives_of[v])))
            hits += rank == 1
    return 100.0 * hits / len(kept)


def removal_curve(
    m,
    u_v,
    u_t,
    pairs: PairSet,
    counts,
    mode: str = UNCERTAINTY_MODE,
    seed: int = 0,
    side: str = GALLERY_SIDE,
) -> RemovalCurve:
    """R@1 after deleting whole pairs, either by uncertainty or at random.

    In uncertainty mode the pairs with the highest uncertainty on the
    relevant side leave first; by default that is the gallery side of each
    direction (vision for t2v, text for v2t), and side="query" flips it.
    Ties fall back to ascending pair index.  In random mode the removed
    pairs are a seeded uniform draw, redrawn per count and shared by both
    directions.  A removed pair takes its query with it, so the point at
    count r scores exactly n_pairs - r queries per direction.
    """
    values = _values_of(m)
    u_v = np.asarray(u_v, dtype=np.float64).ravel()
    u_t = np.asarray(u_t, dtype=np.float64).ravel()
    if u_v.size != values.shape[0] or u_t.size != values.shape[1]:
        raise LengthMismatch("uncertainty vectors must match the matrix shape")
    if mode not in (UNCERTAINTY_MODE, RANDOM_MODE):
        raise InvalidConfig(f"unknown removal mode {mode!r}")
    if side not in (GALLERY_SIDE, QUERY_SIDE):
        raise InvalidConfig(f"unknown removal side {side!r}")
    pairs.check_against(*values.shape)
    counts = [int(c) for c in counts]
    if any(c < 0 for c in counts):
        raise InvalidConfig("removal counts must be nonnegative")
    if any(b <= a for a, b in zip(counts, counts[1:])):
        raise InvalidConfig("removal counts must be strictly increasing")
    n_pairs = len(pairs)
    if counts and counts[-1] >= n_pairs:
        raise TooManyRemoved(
            f"cannot remove {counts[-1]} of {n_pairs} pairs and still have queries"
        )

    pair_list = list(pairs.pairs)
    vs = pairs.vision_indices
    ts = pairs.text_indices

    def ordered_survivors(direction: str, r: int) -> list[tuple[int, int]]:
        if r == 0:
            return pair_list
        if mode == RANDOM_MODE:
            rng = np.random.default_rng([seed, r])
            removed = set(map(int, rng.permutation(n_pairs)[:r]))
        else:
            vision_is_key = (direction == T2V) == (side == GALLERY_SIDE)
            key = u_v[vs] if vision_is_key else u_t[ts]
            order = np.argsort(-key, kind="stable")
            removed = set(map(int, order[:r]))
        return [p for i, p in enumerate(pair_list) if i not in removed]

    points = []
    for r in counts:
        kept_t2v = ordered_survivors(T2V, r)
        kept_v2t = kept_t2v if mode == RANDOM_MODE else ordered_survivors(V2T, r)
        points.append(
            RemovalPoint(
                removed=r,
                r1_t2v=_pair_subset_r1(values, kept_t2v, T2V),
                r1_v2t=_pair_subset_r1(values, kept_v2t, V2T),
            )
        )
    return RemovalCurve(mode=mode, side=side, points=tuple(points))


# ---- information measures ----


def _check_distribution(p: np.ndarray, name: str) -> np.ndarray:
    if p.size == 0:
        raise EmptyVector(f"{name} has no entries")
    if np.any(p < 0.0) or not np.all(np.isfinite(p)):
        raise NotADistribution(f"{name} has negative or non-finite entries")
    total = float(p.sum())
    if abs(total - 1.0) > _DIST_TOL:
        raise NotADistribution(f"{name} sums to {total}, not 1")
    return p


def entropy(p) -> float:
    """Shannon entropy in nats, with 0 log 0 taken as 0."""
    arr = _check_distribution(np.asarray(p, dtype=np.float64).ravel(), "p")
    nz = arr[arr > 0.0]
    return float(-np.sum(nz * np.log(nz)))


def jsd(p, q) -> float:
    """Jensen-Shannon divergence in bits; symmetric and within [0, 1]."""
    a = np.asarray(p, dtype=np.float64).ravel()
    b = np.asarray(q, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise LengthMismatch(f"lengths differ: {a.shape[0]} vs {b.shape[0]}")
    a = _check_distribution(a, "p")
    b = _check_distribution(b, "q")
    mid = 0.5 * (a + b)

    def _kl_to_mid(x: np.ndarray) -> float:
        mask = x > 0.0
        return float(np.sum(x[mask] * np.log2(x[mask] / mid[mask])))

    return float(np.clip(0.5 * _kl_to_mid(a) + 0.5 * _kl_to_mid(b), 0.0, 1.0))


def softmax(logits) -> np.ndarray:
    """Stable softmax of a 1-D array of logits."""
    arr = np.asarray(logits, dtype=np.float64).ravel()
    if arr.size == 0:
        raise EmptyVector("softmax of an empty vector is undefined")
    shifted = arr - arr.max()
    e = np.exp(shifted)
    return e / e.sum()


def msvd_collision_logprob(n_captions: int, batch: int, group: int) -> float:
    """Log probability that a uniformly drawn batch hits distinct groups.

    A corpus of n_captions captions is partitioned into groups of size
    ``group`` (captions describing the same item).  Drawing ``batch``
    captions one by one without replacement, the chance that none of them
    collides with an earlier draw's group telescopes into

        sum_{i=1}^{batch} [ log(n - group (i - 1)) - log(n - (i - 1)) ].
    """
    if batch < 1 or group < 1:
        raise InvalidCounts(f"batch and group must be >= 1, got {batch} and {group}")
    if n_captions < batch * group:
        raise InvalidCounts(
            f"need n_captions >= batch * group, got {n_captions} < {batch * group}"
        )
    i = np.arange(batch, dtype=np.float64)
    return float(np.sum(np.log(n_captions - group * i) - np.log(n_captions - i)))
