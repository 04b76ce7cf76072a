import numpy as np
import pytest

from sekge.kg import build_query_set, from_labeled_triples, ingest, subsample_by_degree
from sekge.exceptions import KGDataError

from helpers import random_kg, write_split_dir

TRAIN = [("a", "likes", "b"), ("b", "likes", "c"), ("a", "knows", "c"), ("c", "knows", "c")]
VALID = [("a", "likes", "c")]
TEST = [("b", "knows", "a"), ("a", "likes", "c")]


@pytest.fixture
def data_dir(tmp_path):
    return write_split_dir(tmp_path, TRAIN, VALID, TEST)


def test_ingest_ids_follow_first_appearance(data_dir):
    store = ingest(data_dir)
    assert store.vocab.entity_names == ["a", "b", "c"]
    assert store.vocab.relation_names == ["likes", "knows"]
    assert store.train.tolist() == [[0, 0, 1], [1, 0, 2], [0, 1, 2], [2, 1, 2]]
    assert store.test.tolist() == [[1, 1, 0], [0, 0, 2]]


def test_ingest_is_deterministic(data_dir):
    a, b = ingest(data_dir), ingest(data_dir)
    assert a.vocab.digest() == b.vocab.digest()
    for split in ("train", "valid", "test"):
        assert np.array_equal(a.splits[split], b.splits[split])
    assert np.array_equal(a.in_pairs, b.in_pairs) and np.array_equal(a.out_pairs, b.out_pairs)


def test_vocab_lookup_roundtrip(data_dir):
    v = ingest(data_dir).vocab
    for i in range(v.n_entities):
        assert v.entity_id(v.entity_name(i)) == i
    for r in range(2 * v.n_relations):
        assert v.query_relation_id(v.relation_name(r)) == r
        assert v.inverse(v.inverse(r)) == r


def test_duplicates_dropped_within_split(tmp_path, caplog):
    write_split_dir(tmp_path, TRAIN + TRAIN[:2], VALID, TEST)
    store = ingest(tmp_path)
    assert len(store.train) == 4
    assert "dropped 2 duplicate" in caplog.text


def test_cross_split_duplicates_are_kept(tmp_path):
    write_split_dir(tmp_path, TRAIN, TRAIN[:1], TEST)
    assert len(ingest(tmp_path).valid) == 1


@pytest.mark.parametrize("bad, match", [
    ({"train": []}, "empty split"),
    ({"test": [("a", "likes", "zzz")]}, "does not occur in train"),
    ({"valid": [("a", "hates", "b")]}, "does not occur in train"),
])
def test_ingest_errors(tmp_path, bad, match):
    splits = {"train": TRAIN, "valid": VALID, "test": TEST, **bad}
    write_split_dir(tmp_path, splits["train"], splits["valid"], splits["test"])
    with pytest.raises(KGDataError, match=match):
        ingest(tmp_path)


def test_ingest_malformed_line_reports_line_number(tmp_path):
    write_split_dir(tmp_path, TRAIN, VALID, TEST)
    with open(tmp_path / "train.txt", "a") as fh:
        fh.write("x\ty\n")
    with pytest.raises(KGDataError, match=r"train.txt:5"):
        ingest(tmp_path)


def test_ingest_missing_file(tmp_path):
    write_split_dir(tmp_path, TRAIN, VALID, TEST)
    (tmp_path / "valid.txt").unlink()
    with pytest.raises(KGDataError, match="missing split file"):
        ingest(tmp_path)


def test_query_set_single_triple():
    store = from_labeled_triples([("a", "r", "b")], test=[("a", "r", "b")])
    q = build_query_set(store, "test")
    assert q.triples.tolist() == [[0, 0, 1], [1, 1, 0]]
    assert list(q.directions) == ["tail", "head"]


def test_query_set_empty_split():
    store = from_labeled_triples([("a", "r", "b")])
    assert len(build_query_set(store, "valid")) == 0


def test_query_set_doubles_split_size():
    store = random_kg(np.random.default_rng(3))
    for split in ("train", "valid", "test"):
        q = build_query_set(store, split)
        assert len(q) == 2 * len(store.splits[split])
        assert q.relations.max(initial=0) < 2 * store.n_relations


def test_augmented_graph_and_twins():
    store = random_kg(np.random.default_rng(4))
    m = len(store.train)
    assert len(store.aug_edges) == 2 * m
    twins = store.edge_twins()
    aug = store.aug_edges
    inv = aug[twins]
    assert np.array_equal(inv[:, 0], aug[:, 2]) and np.array_equal(inv[:, 2], aug[:, 0])
    assert np.array_equal((inv[:, 1] + store.n_relations) % (2 * store.n_relations), aug[:, 1])


def test_self_loops_permitted():
    store = from_labeled_triples([("a", "r", "a")])
    assert store.aug_edges.tolist() == [[0, 0, 0], [0, 1, 0]]


def test_in_out_index_consistency():
    store = random_kg(np.random.default_rng(5))
    train = {tuple(x) for x in store.train.tolist()}
    from_in = {(h, r, t) for t in range(store.n_entities) for h, r in store.in_neighbors(t).tolist()}
    from_out = {(h, r, t) for h in range(store.n_entities) for r, t in store.out_neighbors(h).tolist()}
    assert from_in == train == from_out


def test_filtered_candidates_match_brute_force():
    rng = np.random.default_rng(6)
    for _ in range(5):
        store = random_kg(rng, n_entities=20, n_relations=4, n_triples=150)
        R = store.n_relations
        everything = np.concatenate([store.train, store.valid, store.test]).tolist()
        for h in range(store.n_entities):
            for r in range(2 * R):
                if r < R:
                    expect = {t for (a, b, t) in everything if a == h and b == r}
                else:
                    expect = {a for (a, b, t) in everything if t == h and b == r - R}
                assert store.filtered_candidates(h, r) == expect


def test_filtered_candidates_unions_splits_and_rejects_unknown():
    store = from_labeled_triples([("a", "r", "b"), ("c", "r", "a")], [("a", "r", "c")], [("c", "r", "b")])
    assert store.filtered_candidates(0, 0) == {1, 2}
    assert store.filtered_candidates(2, 0) == {0, 1}
    with pytest.raises(KGDataError):
        store.filtered_candidates(99, 0)
    with pytest.raises(KGDataError):
        store.filtered_candidates(0, 2)


def test_stats_csv(data_dir):
    text = ingest(data_dir).stats_csv().splitlines()
    assert text[0] == "split,triples,entities_seen,relations_seen"
    assert text[1] == "train,4,3,2"
    assert text[-1] == "all,7,3,2"


def test_subsample_keeps_top_degree_entities():
    store = random_kg(np.random.default_rng(8), n_entities=50, n_triples=400)
    sub = subsample_by_degree(store, 10)
    assert sub.n_entities <= 10
    for split in ("valid", "test"):
        assert sub.splits[split].max(initial=0) < sub.n_entities


def test_labeled_triples_reject_unseen_labels():
    with pytest.raises(KGDataError, match="does not occur in train"):
        from_labeled_triples([("a", "r", "b")], test=[("a", "r", "c")])
