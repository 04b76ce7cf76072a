"""Semantic-evidence counts for link-prediction queries.

Three integer signals are computed from the train split alone:

* ``s_rel`` -- how many train triples pair the query relation with the answer,
* ``s_ent`` -- how many directed paths of length one or two join query head
  and answer,
* ``s_tri`` -- how similar the answer is to the known train answers of the
  query, where similarity counts shared incoming ``(entity, relation)`` pairs.

Inverse-relation queries ``(x, r^-1, a)`` are scored on the reversed train
graph, which is the same as reading the base triples with head and tail
swapped.
"""

from __future__ import annotations

import weakref
from collections import Counter, defaultdict
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import KGDataError
from .kg import QuerySet, TripleStore
from .validation import check_queries, check_triples

ENTITY_PATH_MODES = ("directed", "augmented")
BUCKET_MODES = ("three_even", "two_zero_split")


class EvidenceIndex:
    """Lookup tables over one orientation of a triple set."""

    def __init__(self, triples: np.ndarray):
        self.answers: dict[tuple[int, int], set[int]] = defaultdict(set)
        self.in_pairs: dict[int, set[tuple[int, int]]] = defaultdict(set)
        self.rel_tail: Counter = Counter()
        self.out_deg: dict[int, Counter] = defaultdict(Counter)
        self.in_deg: dict[int, Counter] = defaultdict(Counter)
        for h, r, t in np.asarray(triples).tolist():
            self.answers[(h, r)].add(t)
            self.in_pairs[t].add((h, r))
            self.rel_tail[(r, t)] += 1
            # Counts distinct relations per ordered entity pair.
            self.out_deg[h][t] += 1
            self.in_deg[t][h] += 1

    def s_rel(self, r: int, t: int) -> int:
        return self.rel_tail.get((r, t), 0)

    def s_ent(self, h: int, t: int) -> int:
        out_h = self.out_deg.get(h)
        in_t = self.in_deg.get(t)
        if not out_h or not in_t:
            return 0
        direct = out_h.get(t, 0)
        if len(out_h) > len(in_t):
            two_hop = sum(c * out_h.get(k, 0) for k, c in in_t.items())
        else:
            two_hop = sum(c * in_t.get(k, 0) for k, c in out_h.items())
        return direct + two_hop

    def sim(self, t: int, t_prime: int) -> int:
        a = self.in_pairs.get(t)
        b = self.in_pairs.get(t_prime)
        if not a or not b:
            return 0
        return len(a & b)

    def s_tri(self, h: int, r: int, t: int) -> int:
        known = self.answers.get((h, r))
        pairs = self.in_pairs.get(t)
        if not known or not pairs:
            return 0
        if len(pairs) < len(known):
            # sum_{t'} |P(t) & P(t')| == sum_{p in P(t)} |known & answers(p)|
            total = sum(len(known & self.answers[p]) for p in pairs)
            if t in known:
                total -= len(pairs)
            return total
        return sum(len(pairs & self.in_pairs[x]) for x in known if x != t and x in self.in_pairs)


class _StoreEvidence:
    def __init__(self, train: np.ndarray, n_relations: int, entity_paths: str):
        if entity_paths not in ENTITY_PATH_MODES:
            raise ValueError(f"entity_paths must be one of {ENTITY_PATH_MODES}, got {entity_paths!r}")
        self.n_relations = n_relations
        self.entity_paths = entity_paths
        self.forward = EvidenceIndex(train)
        self.backward = EvidenceIndex(train[:, [2, 1, 0]])
        if entity_paths == "augmented":
            inv = train[:, [2, 1, 0]].copy()
            inv[:, 1] += n_relations
            self.paths = EvidenceIndex(np.concatenate([train, inv]))
        else:
            self.paths = None

    def _orient(self, r: int):
        if r >= self.n_relations:
            return self.backward, r - self.n_relations
        return self.forward, r

    def s_rel(self, h, r, t):
        index, base = self._orient(r)
        return index.s_rel(base, t)

    def s_ent(self, h, r, t):
        if self.paths is not None:
            return self.paths.s_ent(h, t)
        index, _ = self._orient(r)
        return index.s_ent(h, t)

    def s_tri(self, h, r, t):
        index, base = self._orient(r)
        return index.s_tri(h, base, t)

    def scores(self, queries: np.ndarray) -> np.ndarray:
        out = np.empty((len(queries), 3), dtype=np.int64)
        for i, (h, r, t) in enumerate(np.asarray(queries).tolist()):
            out[i] = (self.s_rel(h, r, t), self.s_ent(h, r, t), self.s_tri(h, r, t))
        return out


_cache: "weakref.WeakKeyDictionary[TripleStore, dict]" = weakref.WeakKeyDictionary()


def _evidence(store: TripleStore, entity_paths: str = "directed") -> _StoreEvidence:
    per_store = _cache.setdefault(store, {})
    if entity_paths not in per_store:
        per_store[entity_paths] = _StoreEvidence(store.train, store.n_relations, entity_paths)
    return per_store[entity_paths]


def s_rel(query, store: TripleStore) -> int:
    """Number of train triples ``(x, r, t)`` for query ``(h, r, t)``."""
    h, r, t = query
    return _evidence(store).s_rel(h, r, t)


def s_ent(query, store: TripleStore, entity_paths: str = "directed") -> int:
    """Distinct train paths of length 1 or 2 from ``h`` to ``t``."""
    h, r, t = query
    return _evidence(store, entity_paths).s_ent(h, r, t)


def sim(t: int, t_prime: int, store: TripleStore) -> int:
    """Shared incoming ``(entity, relation)`` pairs of two entities in train."""
    return _evidence(store).forward.sim(t, t_prime)


def s_tri(query, store: TripleStore) -> int:
    """Sum of ``sim(t, t')`` over the other train answers ``t'`` of ``(h, r)``."""
    h, r, t = query
    return _evidence(store).s_tri(h, r, t)


def evidence_scores(store: TripleStore, queries, entity_paths: str = "directed") -> np.ndarray:
    """``(m, 3)`` array of ``[s_rel, s_ent, s_tri]`` per query."""
    if isinstance(queries, QuerySet):
        queries = queries.triples
    return _evidence(store, entity_paths).scores(queries)


class SemanticEvidence(TransformerMixin, BaseEstimator):
    """Transform queries into their ``[s_rel, s_ent, s_tri]`` evidence counts.

    Parameters
    ----------
    entity_paths : {"directed", "augmented"}
        ``"directed"`` follows train edges in their stored direction only;
        ``"augmented"`` also walks inverse edges when counting paths.
    n_relations : int, optional
        Number of base relations.  Needed only when fitting on a raw triple
        array; inferred from the store otherwise.

    Examples
    --------
    >>> se = SemanticEvidence().fit(store)          # doctest: +SKIP
    >>> se.transform(store.build_query_set("test"))  # doctest: +SKIP
    """

    def __init__(self, entity_paths="directed", n_relations=None):
        self.entity_paths = entity_paths
        self.n_relations = n_relations

    def fit(self, X, y=None):
        if isinstance(X, TripleStore):
            train, n_rel = X.train, X.n_relations
        else:
            train = check_triples(X)
            n_rel = self.n_relations
            if n_rel is None:
                n_rel = int(train[:, 1].max()) + 1 if len(train) else 0
            elif len(train) and train[:, 1].max() >= n_rel:
                raise KGDataError("train triples must use base relation ids < n_relations")
        self.n_relations_ = n_rel
        self.index_ = _StoreEvidence(train, n_rel, self.entity_paths)
        self.n_features_in_ = 3
        return self

    def transform(self, X):
        check_is_fitted(self, "index_")
        if isinstance(X, QuerySet):
            X = X.triples
        q = check_queries(X, 2 * self.n_relations_)
        return self.index_.scores(q)

    def get_feature_names_out(self, input_features=None):
        return np.array(["s_rel", "s_ent", "s_tri"], dtype=object)


@dataclass
class BucketAssignment:
    """Bucket label per value plus per-bucket value range and size.

    ``lo``/``hi`` are the smallest and largest member values (``None`` for an
    empty bucket).
    """

    labels: np.ndarray
    lo: list
    hi: list
    counts: list

    @property
    def n_buckets(self) -> int:
        return len(self.counts)


def bucketize(values, mode: str = "three_even") -> BucketAssignment:
    """Split metric values into ordered evidence ranges.

    ``three_even`` sorts ascending (stable on input order) and cuts into
    three near-equal parts; a boundary that would split a run of equal values
    is pushed forward past the run, and the remaining items are re-divided
    evenly among the buckets still to fill.  ``two_zero_split`` separates
    zero from positive values.
    """
    v = np.asarray(values)
    if v.ndim != 1 or len(v) == 0:
        raise ValueError("bucketize needs a non-empty 1-d sequence of values")
    if mode not in BUCKET_MODES:
        raise ValueError(f"mode must be one of {BUCKET_MODES}, got {mode!r}")

    if mode == "two_zero_split":
        labels = (v >= 1).astype(np.int64)
    else:
        n_buckets = 3
        order = np.argsort(v, kind="stable")
        ranked = v[order]
        n = len(v)
        bounds = [0]
        for k in range(1, n_buckets):
            start = bounds[-1]
            b = start + -(-(n - start) // (n_buckets - k + 1))
            while 0 < b < n and ranked[b] == ranked[b - 1]:
                b += 1
            bounds.append(min(b, n))
        bounds.append(n)
        sorted_labels = np.zeros(n, dtype=np.int64)
        for k in range(n_buckets):
            sorted_labels[bounds[k]:bounds[k + 1]] = k
        labels = np.empty(n, dtype=np.int64)
        labels[order] = sorted_labels

    n_buckets = 2 if mode == "two_zero_split" else 3
    lo, hi, counts = [], [], []
    for k in range(n_buckets):
        members = v[labels == k]
        counts.append(int(len(members)))
        lo.append(members.min().item() if len(members) else None)
        hi.append(members.max().item() if len(members) else None)
    return BucketAssignment(labels, lo, hi, counts)
