"""Scikit-learn style estimator around the encoder/decoder training loop."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .autodiff import no_grad
from .config import TrainConfig
from .encoder import Edges
from .evaluation import evaluate, filtered_rank
from .exceptions import KGDataError
from .kg import QuerySet, TripleStore
from .training import Checkpoint, fit
from .validation import check_queries

_CONFIG_FIELDS = tuple(f for f in TrainConfig.__dataclass_fields__ if f != "data_dir")


class SEGNN(BaseEstimator):
    """Link predictor trained with 1-N scoring and early stopping.

    Every keyword mirrors a :class:`~sekge.config.TrainConfig` field, so
    ``get_params``/``set_params`` and ``sklearn.base.clone`` work as usual.
    ``fit`` takes a :class:`~sekge.kg.TripleStore` (the valid split drives
    early stopping).  Query arrays passed to the prediction methods are
    ``(m, 2)`` ``(head, relation)`` or ``(m, 3)`` triples whose relation id
    may be inverse (``>= n_relations``).

    Attributes
    ----------
    checkpoint_ : Checkpoint
        Best state seen during training.
    model_ : SEGNNModel
        Model rebuilt from ``checkpoint_``.
    history_ : list of dict
        One row per epoch: ``epoch, loss, valid_mrr, elapsed_s``.
    """

    def __init__(
        self,
        n=200,
        layers=2,
        composition="mul",
        activation="tanh",
        lr=3e-4,
        beta1=0.9,
        beta2=0.999,
        adam_eps=1e-8,
        batch_size=256,
        epochs=500,
        label_smoothing=0.1,
        edge_removal_rate=0.2,
        leakage_removal=True,
        message_dropout=0.1,
        input_dropout=0.2,
        feature_dropout=0.2,
        hidden_dropout=0.3,
        conv_channels=32,
        kernel_size=3,
        reshape_rows=0,
        bn_momentum=0.1,
        seed=0,
        eval_every=1,
        patience=10,
        eval_batch_size=512,
        dtype="float32",
    ):
        self.n = n
        self.layers = layers
        self.composition = composition
        self.activation = activation
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.adam_eps = adam_eps
        self.batch_size = batch_size
        self.epochs = epochs
        self.label_smoothing = label_smoothing
        self.edge_removal_rate = edge_removal_rate
        self.leakage_removal = leakage_removal
        self.message_dropout = message_dropout
        self.input_dropout = input_dropout
        self.feature_dropout = feature_dropout
        self.hidden_dropout = hidden_dropout
        self.conv_channels = conv_channels
        self.kernel_size = kernel_size
        self.reshape_rows = reshape_rows
        self.bn_momentum = bn_momentum
        self.seed = seed
        self.eval_every = eval_every
        self.patience = patience
        self.eval_batch_size = eval_batch_size
        self.dtype = dtype

    def get_config(self) -> TrainConfig:
        return TrainConfig(**{k: getattr(self, k) for k in _CONFIG_FIELDS})

    def fit(self, X, y=None, out_dir=None):
        if not isinstance(X, TripleStore):
            raise KGDataError("SEGNN.fit expects a TripleStore with train and valid splits")
        self.checkpoint_ = fit(X, self.get_config(), out_dir=out_dir)
        self._attach(X)
        return self

    @classmethod
    def from_checkpoint(cls, checkpoint: Checkpoint, store: TripleStore) -> "SEGNN":
        checkpoint.check_store(store)
        cfg = checkpoint.config
        est = cls(**{k: getattr(cfg, k) for k in _CONFIG_FIELDS})
        est.checkpoint_ = checkpoint
        est._attach(store)
        return est

    def _attach(self, store):
        self.store_ = store
        self.model_ = self.checkpoint_.build_model()
        self.history_ = self.checkpoint_.log
        self.n_entities_ = store.n_entities
        self.n_relations_ = store.n_relations
        with no_grad():
            self._tables = self.model_.encode(Edges.from_triples(store.aug_edges))

    def _queries(self, X):
        if isinstance(X, QuerySet):
            X = X.triples
        arr = np.asarray(X)
        if arr.ndim == 2 and arr.shape[1] == 2:
            arr = np.column_stack([arr, np.zeros(len(arr), dtype=np.int64)])
        return check_queries(arr, 2 * self.n_relations_, self.n_entities_)

    def decision_function(self, X) -> np.ndarray:
        """Eval-mode logits ``(m, |E|)`` for each query."""
        check_is_fitted(self, "model_")
        q = self._queries(X)
        ent, rel = self._tables
        with no_grad():
            return self.model_.logits(ent, rel, q[:, 0], q[:, 1]).data.copy()

    def predict(self, X) -> np.ndarray:
        """Highest-scoring entity per query (raw, not filtered)."""
        return self.decision_function(X).argmax(axis=1)

    def rank(self, X) -> np.ndarray:
        """Filtered tie-averaged rank of each query's answer."""
        q = self._queries(X)
        logits = self.decision_function(q)
        out = np.empty(len(q))
        for i, (h, r, t) in enumerate(q.tolist()):
            known = self.store_.filtered_candidates(h, r)
            known.discard(t)
            out[i] = filtered_rank(logits[i], t, np.fromiter(known, dtype=np.int64, count=len(known)))
        return out

    def score(self, X=None, y=None, split: str = "valid") -> float:
        """Filtered MRR on ``X`` if given, else on the store's ``split``."""
        check_is_fitted(self, "model_")
        if X is None:
            report, _ = evaluate(self.model_, self.store_, split, self.eval_batch_size)
            return report.mrr
        return float(np.mean(1.0 / self.rank(X)))
