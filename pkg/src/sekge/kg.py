"""Triple ingestion, vocabularies, neighbor indices and query construction.

Relation ids live in ``[0, 2R)``: id ``r`` is a base relation and ``r + R``
is its inverse, so inversion is a single addition modulo ``2R``.
"""

from __future__ import annotations

import csv
import hashlib
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import KGDataError

logger = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")


@dataclass
class Vocab:
    """Dense id assignment for entity and base-relation labels."""

    entity_names: list[str] = field(default_factory=list)
    relation_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self._ent = {name: i for i, name in enumerate(self.entity_names)}
        self._rel = {name: i for i, name in enumerate(self.relation_names)}

    @property
    def n_entities(self) -> int:
        return len(self.entity_names)

    @property
    def n_relations(self) -> int:
        return len(self.relation_names)

    def add_entity(self, name: str) -> int:
        idx = self._ent.get(name)
        if idx is None:
            idx = len(self.entity_names)
            self._ent[name] = idx
            self.entity_names.append(name)
        return idx

    def add_relation(self, name: str) -> int:
        idx = self._rel.get(name)
        if idx is None:
            idx = len(self.relation_names)
            self._rel[name] = idx
            self.relation_names.append(name)
        return idx

    def entity_id(self, name: str) -> int:
        return self._ent[name]

    def relation_id(self, name: str) -> int:
        return self._rel[name]

    def query_relation_id(self, name: str) -> int:
        """Like :meth:`relation_id`, but a trailing ``^-1`` selects the inverse."""
        if name.endswith("^-1") and name not in self._rel:
            return self._rel[name[:-3]] + self.n_relations
        return self._rel[name]

    def entity_name(self, idx: int) -> str:
        return self.entity_names[idx]

    def relation_name(self, idx: int) -> str:
        n = self.n_relations
        if idx >= n:
            return self.relation_names[idx - n] + "^-1"
        return self.relation_names[idx]

    def inverse(self, rel: int) -> int:
        return (rel + self.n_relations) % (2 * self.n_relations)

    def digest(self) -> tuple[str, str]:
        """SHA-256 of the entity and relation label lists (order-sensitive)."""
        ent = hashlib.sha256("\n".join(self.entity_names).encode("utf-8")).hexdigest()
        rel = hashlib.sha256("\n".join(self.relation_names).encode("utf-8")).hexdigest()
        return ent, rel


def _csr(keys: np.ndarray, values: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    order = np.argsort(keys, kind="stable")
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(keys, minlength=n), out=ptr[1:])
    return ptr, values[order]


@dataclass
class QuerySet:
    """Directed queries ``(head, relation, answer)``; inverse relations allowed."""

    triples: np.ndarray
    n_relations: int

    def __len__(self) -> int:
        return len(self.triples)

    @property
    def heads(self) -> np.ndarray:
        return self.triples[:, 0]

    @property
    def relations(self) -> np.ndarray:
        return self.triples[:, 1]

    @property
    def answers(self) -> np.ndarray:
        return self.triples[:, 2]

    @property
    def directions(self) -> np.ndarray:
        """``"tail"`` for base-relation queries, ``"head"`` for inverse ones."""
        return np.where(self.triples[:, 1] >= self.n_relations, "head", "tail")


class TripleStore:
    """Deduplicated split triples plus the indices built over the train split.

    Splits are ``(m, 3)`` int64 arrays of ``(head, base_relation, tail)``.
    The store is immutable after construction.
    """

    def __init__(self, vocab: Vocab, train, valid=None, test=None):
        self.vocab = vocab
        self.n_entities = vocab.n_entities
        self.n_relations = vocab.n_relations
        empty = np.zeros((0, 3), dtype=np.int64)
        self.splits = {
            "train": _as_triples(train),
            "valid": empty if valid is None else _as_triples(valid),
            "test": empty if test is None else _as_triples(test),
        }
        tr = self.train
        n = self.n_entities
        # in_index[e] lists (h, r) with (h, r, e) in train; out_index[e] lists (r, t).
        self.in_ptr, self.in_pairs = _csr(tr[:, 2], tr[:, [0, 1]], n)
        self.out_ptr, self.out_pairs = _csr(tr[:, 0], tr[:, [1, 2]], n)
        # Inverse edges never collide with base edges because their relation
        # ids are disjoint, so the augmented graph is exactly 2 * |train|.
        inv = tr[:, [2, 1, 0]].copy()
        inv[:, 1] += self.n_relations
        self.aug_edges = np.concatenate([tr, inv]) if len(tr) else empty
        self._filter = None

    @property
    def train(self) -> np.ndarray:
        return self.splits["train"]

    @property
    def valid(self) -> np.ndarray:
        return self.splits["valid"]

    @property
    def test(self) -> np.ndarray:
        return self.splits["test"]

    def in_neighbors(self, entity: int) -> np.ndarray:
        return self.in_pairs[self.in_ptr[entity]:self.in_ptr[entity + 1]]

    def out_neighbors(self, entity: int) -> np.ndarray:
        return self.out_pairs[self.out_ptr[entity]:self.out_ptr[entity + 1]]

    def edge_twins(self) -> np.ndarray:
        """Index of the inverse twin of every edge in ``aug_edges``."""
        m = len(self.train)
        return np.concatenate([np.arange(m, 2 * m), np.arange(m)])

    def build_query_set(self, split: str) -> QuerySet:
        return build_query_set(self, split)

    def _filter_index(self) -> dict:
        if self._filter is None:
            index: dict[tuple[int, int], set[int]] = {}
            R = self.n_relations
            for split in SPLITS:
                for h, r, t in self.splits[split].tolist():
                    index.setdefault((h, r), set()).add(t)
                    index.setdefault((t, r + R), set()).add(h)
            self._filter = index
        return self._filter

    def filtered_candidates(self, head: int, relation: int) -> set[int]:
        """All true answers of ``(head, relation, ?)`` over train, valid and test."""
        if not 0 <= head < self.n_entities:
            raise KGDataError(f"unknown entity id {head}")
        if not 0 <= relation < 2 * self.n_relations:
            raise KGDataError(f"unknown relation id {relation}")
        return set(self._filter_index().get((head, relation), ()))

    def stats(self) -> list[dict]:
        rows = []
        for split in SPLITS:
            t = self.splits[split]
            rows.append({
                "split": split,
                "triples": len(t),
                "entities_seen": len(np.unique(t[:, [0, 2]])) if len(t) else 0,
                "relations_seen": len(np.unique(t[:, 1])) if len(t) else 0,
            })
        rows.append({
            "split": "all",
            "triples": sum(r["triples"] for r in rows),
            "entities_seen": self.n_entities,
            "relations_seen": self.n_relations,
        })
        return rows

    def stats_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(
            buf, ["split", "triples", "entities_seen", "relations_seen"], lineterminator="\n"
        )
        writer.writeheader()
        writer.writerows(self.stats())
        return buf.getvalue()


def _as_triples(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.int64)
    if arr.size == 0:
        return np.zeros((0, 3), dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise KGDataError(f"expected an (m, 3) triple array, got shape {arr.shape}")
    return arr


def _read_split(path: Path) -> list[tuple[str, str, str, int]]:
    if not path.is_file():
        raise KGDataError(f"missing split file: {path}")
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise KGDataError(
                    f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}"
                )
            rows.append((parts[0], parts[1], parts[2], lineno))
    return rows


def ingest(data_dir) -> TripleStore:
    """Read ``train.txt``, ``valid.txt`` and ``test.txt`` from ``data_dir``.

    Ids are assigned by first appearance scanning train, then valid, then
    test.  Intra-split duplicates are dropped with a logged count.
    """
    data_dir = Path(data_dir)
    raw = {split: _read_split(data_dir / f"{split}.txt") for split in SPLITS}
    if not raw["train"]:
        raise KGDataError(f"empty split: {data_dir / 'train.txt'}")

    vocab = Vocab()
    arrays = {}
    for split in SPLITS:
        seen = set()
        ids = []
        dropped = 0
        for h, r, t, lineno in raw[split]:
            if split == "train":
                triple = (vocab.add_entity(h), vocab.add_relation(r), vocab.add_entity(t))
            else:
                try:
                    triple = (vocab.entity_id(h), vocab.relation_id(r), vocab.entity_id(t))
                except KeyError as exc:
                    raise KGDataError(
                        f"{data_dir / (split + '.txt')}:{lineno}: {exc.args[0]!r} does not "
                        f"occur in train: {h}\t{r}\t{t}"
                    ) from None
            if triple in seen:
                dropped += 1
                continue
            seen.add(triple)
            ids.append(triple)
        if dropped:
            logger.warning("%s: dropped %d duplicate triples", split, dropped)
        arrays[split] = np.array(ids, dtype=np.int64).reshape(-1, 3)

    store = TripleStore(vocab, arrays["train"], arrays["valid"], arrays["test"])
    for row in store.stats():
        logger.info("%(split)s: %(triples)d triples", row)
    return store


def build_query_set(store: TripleStore, split: str) -> QuerySet:
    """Emit ``(h, r, t)`` and ``(t, r^-1, h)`` for every triple, interleaved."""
    if split not in SPLITS:
        raise KGDataError(f"unknown split {split!r}")
    t = store.splits[split]
    q = np.empty((2 * len(t), 3), dtype=np.int64)
    q[0::2] = t
    q[1::2, 0] = t[:, 2]
    q[1::2, 1] = t[:, 1] + store.n_relations
    q[1::2, 2] = t[:, 0]
    return QuerySet(q, store.n_relations)


def from_labeled_triples(train, valid=(), test=()) -> TripleStore:
    """Build a store from in-memory ``(head, relation, tail)`` label tuples."""
    vocab = Vocab()
    tr = [(vocab.add_entity(h), vocab.add_relation(r), vocab.add_entity(t)) for h, r, t in train]

    def lookup(split, rows):
        out = []
        for row in rows:
            try:
                out.append((vocab.entity_id(row[0]), vocab.relation_id(row[1]), vocab.entity_id(row[2])))
            except KeyError as exc:
                raise KGDataError(f"{split} triple {tuple(row)}: {exc.args[0]!r} does not occur in train") from None
        return out

    return TripleStore(vocab, _dedup(tr), _dedup(lookup("valid", valid)), _dedup(lookup("test", test)))


def _dedup(triples):
    return list(dict.fromkeys(triples))


def subsample_by_degree(store: TripleStore, n_entities: int) -> TripleStore:
    """Keep the ``n_entities`` highest-degree entities and their induced triples.

    Degree counts train edges in both directions.  Valid/test triples whose
    entities or relations fall outside the induced train graph are dropped.
    """
    tr = store.train
    degree = np.bincount(tr[:, 0], minlength=store.n_entities) + np.bincount(
        tr[:, 2], minlength=store.n_entities
    )
    keep = np.zeros(store.n_entities, dtype=bool)
    keep[np.argsort(-degree, kind="stable")[:n_entities]] = True
    names = store.vocab

    def induced(t):
        m = keep[t[:, 0]] & keep[t[:, 2]]
        return [(names.entity_names[h], names.relation_names[r], names.entity_names[x])
                for h, r, x in t[m].tolist()]

    train = induced(tr)
    ents = {h for h, _, _ in train} | {t for _, _, t in train}
    rels = {r for _, r, _ in train}

    def known(rows):
        return [x for x in rows if x[0] in ents and x[2] in ents and x[1] in rels]

    return from_labeled_triples(train, known(induced(store.valid)), known(induced(store.test)))
