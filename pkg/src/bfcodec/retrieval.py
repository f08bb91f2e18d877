"""Content-based retrieval: ranking, re-ranking, and the AP/MAP/MRA metrics.

Global descriptors are compared with Euclidean distance; the top-k
candidates can be re-ranked by ratio-test match counts against stored
local features.  Average precision is computed in exact rationals.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import ConfigError, FormatError, InsufficientCandidates, IoError, UndefinedAP
from .features import FrameFeatures
from .geometry import match_features

DEFAULT_TOP_K = 200


@dataclass
class RankedList:
    """Database ids best-first, with per-position relevance flags."""

    ids: np.ndarray                # (Z,) int64, unique
    relevance: np.ndarray          # (Z,) bool, aligned with ids
    candidate_count: int = 0       # leading block eligible for re-ranking

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.relevance = np.asarray(self.relevance, dtype=bool)
        if self.ids.shape != self.relevance.shape:
            raise ConfigError("ids and relevance must align")
        if len(np.unique(self.ids)) != self.ids.shape[0]:
            raise ConfigError("ranked ids must be unique")

    def __len__(self) -> int:
        return int(self.ids.shape[0])


@dataclass
class RetrievalDatabase:
    """Fixed database of global descriptors with optional stored local features."""

    ids: np.ndarray                          # (Z,) int64
    globals: np.ndarray                      # (Z, V) float64
    local_features: list[FrameFeatures] | None = None
    relevance: dict[int, set] = field(default_factory=dict)

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.globals = np.asarray(self.globals, dtype=np.float64)
        if self.globals.shape[0] != self.ids.shape[0]:
            raise ConfigError("one global descriptor per database id required")
        if self.local_features is not None and len(self.local_features) != len(self.ids):
            raise ConfigError("one stored feature set per database id required")

    def __len__(self) -> int:
        return int(self.ids.shape[0])

    def relevant_for(self, query_id) -> set:
        return set(self.relevance.get(query_id, set()))


def retrieve(
    query_global: np.ndarray,
    db: RetrievalDatabase,
    k: int = DEFAULT_TOP_K,
    relevant_ids=frozenset(),
) -> RankedList:
    """Rank the database by ascending Euclidean distance (ties by ascending id)."""
    q = np.asarray(query_global, dtype=np.float64)
    dist = np.sqrt(((db.globals - q[None, :]) ** 2).sum(axis=1))
    order = np.lexsort((db.ids, dist))
    ids = db.ids[order]
    rel = np.isin(ids, np.fromiter(relevant_ids, dtype=np.int64, count=len(relevant_ids)))
    return RankedList(ids=ids, relevance=rel, candidate_count=min(k, len(ids)))


def rerank(query_features: FrameFeatures, ranked: RankedList, db: RetrievalDatabase, ratio=0.7) -> RankedList:
    """Reorder the top-k block by descending ratio-test match count.

    Ties keep the global-stage order; ids beyond the candidate block are
    untouched.  Candidates whose stored set is too small for the ratio
    test score zero matches.
    """
    if db.local_features is None:
        raise ConfigError("database stores no local features to re-rank with")
    k = ranked.candidate_count
    if k == 0 or len(query_features) == 0:
        return ranked
    pos = {int(db.ids[i]): i for i in range(len(db.ids))}
    counts = np.zeros(k, dtype=np.int64)
    for c in range(k):
        stored = db.local_features[pos[int(ranked.ids[c])]]
        try:
            counts[c] = len(match_features(query_features, stored, ratio))
        except InsufficientCandidates:
            counts[c] = 0
    order = np.argsort(-counts, kind="stable")
    ids = np.concatenate([ranked.ids[:k][order], ranked.ids[k:]])
    rel = np.concatenate([ranked.relevance[:k][order], ranked.relevance[k:]])
    return RankedList(ids=ids, relevance=rel, candidate_count=k)


# --- metrics -----------------------------------------------------------------------

def average_precision(ranked: RankedList) -> float:
    """AP over the full list: mean of precision-at-k at each relevant rank."""
    return float(average_precision_exact(ranked))


def average_precision_exact(ranked: RankedList) -> Fraction:
    """AP as an exact rational, for oracle tests."""
    r_total = int(ranked.relevance.sum())
    if r_total == 0:
        raise UndefinedAP("ranking holds no relevant documents")
    acc = Fraction(0)
    seen = 0
    for pos, rel in enumerate(ranked.relevance, start=1):
        if rel:
            seen += 1
            acc += Fraction(seen, pos)
    return acc / r_total


def mean_average_precision(per_query_aps) -> float:
    """Two-level mean: per-query mean over frames, then mean over queries."""
    if isinstance(per_query_aps, dict):
        groups = list(per_query_aps.values())
    else:
        groups = list(per_query_aps)
    if not groups:
        raise ConfigError("no queries")
    means = []
    for g in groups:
        g = list(g)
        if not g:
            raise ConfigError("every query needs at least one frame AP")
        means.append(sum(g) / len(g))
    return sum(means) / len(means)


def median_rank_aggregate(rankings: list[RankedList]) -> RankedList:
    """Fuse per-frame rankings of one query by each item's median position.

    Even counts take the lower median; the fused list is ascending by
    (median rank, id).
    """
    if not rankings:
        raise ConfigError("no rankings to aggregate")
    base = rankings[0]
    z = len(base)
    id_sorted = np.sort(base.ids)
    positions = np.empty((len(rankings), z), dtype=np.int64)
    for r, ranking in enumerate(rankings):
        if not np.array_equal(np.sort(ranking.ids), id_sorted):
            raise ConfigError("all rankings must cover the same database")
        # argsort of unique ids gives, per ascending id, its index in the list
        positions[r] = np.argsort(ranking.ids) + 1
    scores = np.sort(positions, axis=0)[(len(rankings) - 1) // 2]
    order = np.lexsort((id_sorted, scores))
    fused_ids = id_sorted[order]
    rel_lookup = {int(i): bool(r) for i, r in zip(base.ids, base.relevance)}
    fused_rel = np.array([rel_lookup[int(i)] for i in fused_ids], dtype=bool)
    return RankedList(ids=fused_ids, relevance=fused_rel, candidate_count=base.candidate_count)


# --- relevance map file --------------------------------------------------------------

def write_relevance(relevance: dict, path) -> int:
    doc = {str(q): sorted(int(i) for i in ids) for q, ids in relevance.items()}
    try:
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return len(doc)


def read_relevance(path) -> dict[int, set]:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"bad relevance JSON: {exc}") from exc
    return {int(q): set(int(i) for i in ids) for q, ids in doc.items()}
