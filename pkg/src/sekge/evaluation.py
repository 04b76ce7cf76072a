"""Filtered ranking, link-prediction metrics and evidence-stratified reports."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .autodiff import no_grad
from .encoder import Edges
from .evidence import bucketize
from .exceptions import KGDataError
from .kg import QuerySet, TripleStore, build_query_set

RANK_COLUMNS = ["query_index", "head", "relation", "tail", "direction", "rank"]
SE_COLUMNS = ["query_index", "head", "relation", "tail", "direction", "s_rel", "s_ent", "s_tri"]
BUCKET_COLUMNS = ["se_name", "bucket", "lo", "hi", "count", "mean_rank"]
SE_NAMES = ("s_rel", "s_ent", "s_tri")


def filtered_rank(logits, target: int, filter_out=(), tie_eps: float = 0.0) -> float:
    """Tie-averaged rank of ``target`` among candidates not in ``filter_out``.

    With ``g`` candidates scoring strictly higher and ``q`` others tied with
    the target, the rank is ``g + q / 2 + 1``.
    """
    s = np.asarray(logits)
    filter_out = np.fromiter(filter_out, dtype=np.int64) if not isinstance(filter_out, np.ndarray) \
        else filter_out.astype(np.int64)
    if np.any(filter_out == target):
        raise ValueError(f"target {target} is in the filter set")
    keep = np.ones(len(s), dtype=bool)
    keep[filter_out] = False
    keep[target] = False
    st = s[target]
    others = s[keep]
    if tie_eps:
        greater = int(np.count_nonzero(others > st + tie_eps))
        ties = int(np.count_nonzero(np.abs(others - st) <= tie_eps))
    else:
        greater = int(np.count_nonzero(others > st))
        ties = int(np.count_nonzero(others == st))
    return greater + ties / 2.0 + 1.0


@dataclass
class MetricReport:
    mrr: float
    mr: float
    hits1: float
    hits3: float
    hits10: float

    @classmethod
    def from_ranks(cls, ranks) -> "MetricReport":
        r = np.asarray(ranks, dtype=np.float64)
        if r.size == 0:
            raise ValueError("no ranks to aggregate")
        return cls(
            mrr=float(np.mean(1.0 / r)), mr=float(np.mean(r)),
            hits1=float(np.mean(r <= 1)), hits3=float(np.mean(r <= 3)),
            hits10=float(np.mean(r <= 10)),
        )

    def as_dict(self) -> dict:
        return asdict(self)

    def __str__(self):
        return (f"MRR {self.mrr:.4f}  MR {self.mr:.1f}  H@1 {self.hits1:.4f}  "
                f"H@3 {self.hits3:.4f}  H@10 {self.hits10:.4f}")


@dataclass
class RankTable:
    """One filtered rank per directed query, in query-set order."""

    queries: QuerySet
    ranks: np.ndarray
    model_tag: str = ""

    def report(self) -> MetricReport:
        return MetricReport.from_ranks(self.ranks)

    def write_csv(self, path, store: TripleStore):
        write_rows(path, RANK_COLUMNS, (
            [i, *_labels(store, q), d, _fmt_rank(rk)]
            for i, (q, d, rk) in enumerate(zip(self.queries.triples.tolist(),
                                               self.queries.directions, self.ranks))
        ))


def _fmt_rank(r: float) -> str:
    return str(int(r)) if float(r).is_integer() else repr(float(r))


def _labels(store: TripleStore, q):
    h, r, t = q
    v = store.vocab
    return v.entity_name(h), v.relation_name(r), v.entity_name(t)


def write_rows(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def rank_queries(model, store: TripleStore, queries: QuerySet, batch_size: int = 512,
                 tie_eps: float = 0.0) -> np.ndarray:
    """Eval-mode filtered ranks on the full augmented train graph."""
    edges = Edges.from_triples(store.aug_edges)
    ranks = np.empty(len(queries), dtype=np.float64)
    with no_grad():
        ent, rel = model.encode(edges, training=False)
        for start in range(0, len(queries), batch_size):
            q = queries.triples[start:start + batch_size]
            logits = model.logits(ent, rel, q[:, 0], q[:, 1], training=False).data
            for i, (h, r, t) in enumerate(q.tolist()):
                known = store.filtered_candidates(h, r)
                known.discard(t)
                ranks[start + i] = filtered_rank(
                    logits[i], t, np.fromiter(known, dtype=np.int64, count=len(known)), tie_eps
                )
    return ranks


def evaluate(model, store: TripleStore, split: str = "test", batch_size: int = 512,
             tie_eps: float = 0.0) -> tuple[MetricReport, RankTable]:
    queries = build_query_set(store, split)
    if len(queries) == 0:
        raise KGDataError(f"split {split!r} is empty")
    table = RankTable(queries, rank_queries(model, store, queries, batch_size, tie_eps))
    return table.report(), table


def write_se_csv(path, store: TripleStore, queries: QuerySet, scores: np.ndarray):
    write_rows(path, SE_COLUMNS, (
        [i, *_labels(store, q), d, *s]
        for i, (q, d, s) in enumerate(zip(queries.triples.tolist(), queries.directions,
                                          scores.tolist()))
    ))


def _read_csv(path, required) -> list[dict]:
    path = Path(path)
    if not path.is_file():
        raise KGDataError(f"file not found: {path}")
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in required if c not in (reader.fieldnames or [])]
        if missing:
            raise KGDataError(f"{path}: missing column(s) {', '.join(missing)}")
        return list(reader)


def read_ranks(path) -> tuple[np.ndarray, np.ndarray]:
    rows = _read_csv(path, ["query_index", "rank"])
    idx = np.array([int(r["query_index"]) for r in rows], dtype=np.int64)
    ranks = np.array([float(r["rank"]) for r in rows], dtype=np.float64)
    return idx, ranks


def read_se(path) -> tuple[np.ndarray, np.ndarray]:
    rows = _read_csv(path, ["query_index", *SE_NAMES])
    idx = np.array([int(r["query_index"]) for r in rows], dtype=np.int64)
    se = np.array([[int(r[k]) for k in SE_NAMES] for r in rows], dtype=np.int64).reshape(-1, 3)
    return idx, se


def _align(rank_idx, ranks, se_idx, se):
    ro, so = np.argsort(rank_idx, kind="stable"), np.argsort(se_idx, kind="stable")
    a, b = rank_idx[ro], se_idx[so]
    n = min(len(a), len(b))
    diff = np.flatnonzero(a[:n] != b[:n])
    if len(diff) or len(a) != len(b):
        pos = int(diff[0]) if len(diff) else n
        ra = a[pos] if pos < len(a) else "<end>"
        sb = b[pos] if pos < len(b) else "<end>"
        raise KGDataError(
            f"rank and SE files diverge at sorted position {pos}: "
            f"ranks query_index={ra}, SE query_index={sb}"
        )
    return ranks[ro], se[so]


def bucket_report(ranks, se, mode: str = "three_even") -> list[dict]:
    """Per-metric, per-bucket count, value range and mean rank.

    ``ranks`` is ``(m,)``; ``se`` is ``(m, 3)`` with columns
    ``s_rel, s_ent, s_tri`` aligned to ``ranks``.
    """
    ranks = np.asarray(ranks, dtype=np.float64)
    se = np.asarray(se).reshape(-1, 3)
    if len(ranks) != len(se):
        raise KGDataError(f"{len(ranks)} ranks vs {len(se)} SE rows")
    rows = []
    for j, name in enumerate(SE_NAMES):
        b = bucketize(se[:, j], mode)
        for k in range(b.n_buckets):
            members = ranks[b.labels == k]
            rows.append({
                "se_name": name, "bucket": k, "lo": b.lo[k], "hi": b.hi[k],
                "count": b.counts[k],
                "mean_rank": float(members.mean()) if len(members) else None,
            })
    return rows


def bucket_report_files(ranks_path, se_path, mode: str = "three_even") -> list[dict]:
    ranks, se = _align(*read_ranks(ranks_path), *read_se(se_path))
    return bucket_report(ranks, se, mode)


def write_bucket_report(path_or_file, rows):
    def fmt(v):
        if v is None:
            return ""
        return repr(v) if isinstance(v, float) else v

    data = ([fmt(r[c]) for c in BUCKET_COLUMNS] for r in rows)
    if hasattr(path_or_file, "write"):
        w = csv.writer(path_or_file, lineterminator="\n")
        w.writerow(BUCKET_COLUMNS)
        w.writerows(data)
    else:
        write_rows(path_or_file, BUCKET_COLUMNS, data)
