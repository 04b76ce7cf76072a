import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from sekge.estimators import SEGNN
from sekge.exceptions import KGDataError
from sekge.kg import build_query_set
from sekge.training import Checkpoint

from helpers import CUBE_CONFIG, cube_kg


def test_params_roundtrip_and_clone():
    est = SEGNN(n=16, lr=0.01)
    params = est.get_params()
    assert params["n"] == 16 and params["lr"] == 0.01 and params["patience"] == 10
    twin = clone(est)
    assert twin.get_params() == params
    est.set_params(layers=1)
    assert est.get_config().layers == 1


def test_unfitted_raises():
    with pytest.raises(NotFittedError):
        SEGNN().predict(np.zeros((1, 2), dtype=int))


def test_fit_requires_store():
    with pytest.raises(KGDataError):
        SEGNN(n=8).fit(np.zeros((3, 3), dtype=int))


def test_fit_predict_score_on_cube(tmp_path):
    store = cube_kg()
    est = SEGNN(**CUBE_CONFIG).fit(store, out_dir=tmp_path)
    assert est.score() == est.checkpoint_.valid_mrr >= 0.9
    q = build_query_set(store, "valid").triples
    assert est.decision_function(q).shape == (len(q), store.n_entities)
    assert est.score(q) == pytest.approx(est.score(split="valid"))
    ranks = est.rank(q)
    assert np.all(ranks >= 1)
    assert est.predict(q[:, :2]).shape == (len(q),)

    again = SEGNN.from_checkpoint(Checkpoint.load(tmp_path), store)
    np.testing.assert_array_equal(again.decision_function(q), est.decision_function(q))
    assert again.get_params() == est.get_params()


def test_query_ids_are_range_checked():
    est = SEGNN(**{**CUBE_CONFIG, "epochs": 1}).fit(cube_kg())
    with pytest.raises(KGDataError):
        est.decision_function(np.array([[0, 6]]))
