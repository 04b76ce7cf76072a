"""Input validation helpers shared by the estimators."""

import numpy as np

from .exceptions import KGDataError


def check_triples(X, n_entities=None, n_relations=None) -> np.ndarray:
    """Coerce ``X`` to an ``(m, 3)`` int64 array and range-check its ids."""
    arr = np.asarray(X)
    if arr.size == 0:
        return np.zeros((0, 3), dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise KGDataError(f"expected an (m, 3) array of triples, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.equal(np.mod(arr, 1), 0)):
            raise KGDataError("triple ids must be integers")
    arr = arr.astype(np.int64)
    if arr.min() < 0:
        raise KGDataError("triple ids must be non-negative")
    if n_entities is not None and arr[:, [0, 2]].max() >= n_entities:
        raise KGDataError(f"entity id out of range [0, {n_entities})")
    if n_relations is not None and arr[:, 1].max() >= n_relations:
        raise KGDataError(f"relation id out of range [0, {n_relations})")
    return arr


def check_queries(X, n_query_relations, n_entities=None) -> np.ndarray:
    """Queries are triples whose relation may be inverse: ids in ``[0, 2R)``."""
    return check_triples(X, n_entities=n_entities, n_relations=n_query_relations)
