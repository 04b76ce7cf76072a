"""1-N training with leakage-free aggregation graphs, early stopping, checkpoints."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Adam, Tensor, backward, load_tensor, ops, save_tensor
from .config import RESERVED_PREFIX, TrainConfig, build_config, parse_lines
from .encoder import Edges
from .evaluation import evaluate
from .exceptions import KGDataError, TrainingError
from .kg import TripleStore
from .model import SEGNNModel

logger = logging.getLogger(__name__)

LOG_COLUMNS = ["epoch", "loss", "valid_mrr", "elapsed_s"]


def bce_loss(logits, targets, label_smoothing: float = 0.0) -> Tensor:
    """Mean BCE over all candidates with smoothed multi-hot targets.

    ``targets`` is ``(|E|,)`` or ``(B, |E|)`` of 0/1; every row needs at
    least one positive.
    """
    y = np.asarray(targets, dtype=np.float64)
    rows = y.reshape(-1, y.shape[-1])
    if np.any(rows.sum(axis=1) == 0):
        raise TrainingError("query without any true answer in its target vector")
    n = y.shape[-1]
    smoothed = y * (1.0 - label_smoothing) + label_smoothing / n
    return ops.bce_with_logits(logits, smoothed)


@dataclass
class QueryGroups:
    """Train queries grouped by ``(head, relation)`` over the augmented graph.

    Group ``g`` owns augmented edges ``edge_order[ptr[g]:ptr[g+1]]``; the
    tails of those edges are exactly the group's answers.
    """

    heads: np.ndarray
    relations: np.ndarray
    ptr: np.ndarray
    edge_order: np.ndarray
    tails: np.ndarray

    @classmethod
    def from_store(cls, store: TripleStore) -> "QueryGroups":
        aug = store.aug_edges
        key = aug[:, 0] * (2 * store.n_relations) + aug[:, 1]
        order = np.argsort(key, kind="stable")
        uniq, starts = np.unique(key[order], return_index=True)
        ptr = np.append(starts, len(order)).astype(np.int64)
        first = order[starts]
        return cls(aug[first, 0], aug[first, 1], ptr, order, aug[order, 2])

    def __len__(self):
        return len(self.heads)

    def edges_of(self, groups) -> np.ndarray:
        return np.concatenate(
            [self.edge_order[self.ptr[g]:self.ptr[g + 1]] for g in groups]
        ) if len(groups) else np.zeros(0, dtype=np.int64)

    def targets(self, groups, n_entities: int) -> np.ndarray:
        y = np.zeros((len(groups), n_entities), dtype=np.float64)
        for i, g in enumerate(groups):
            y[i, self.tails[self.ptr[g]:self.ptr[g + 1]]] = 1.0
        return y


def aggregation_mask(store: TripleStore, groups: QueryGroups, batch, config: TrainConfig,
                     rng: np.random.Generator, twins: np.ndarray | None = None) -> np.ndarray:
    """Boolean keep-mask over ``store.aug_edges`` for one training batch.

    Each edge is dropped independently with probability
    ``edge_removal_rate``; with ``leakage_removal`` every edge answering a
    batch query, together with its inverse twin, is dropped as well.
    """
    m = len(store.aug_edges)
    if config.edge_removal_rate > 0:
        keep = rng.random(m) >= config.edge_removal_rate
    else:
        keep = np.ones(m, dtype=bool)
    if config.leakage_removal:
        twins = store.edge_twins() if twins is None else twins
        hit = groups.edges_of(batch)
        keep[hit] = False
        keep[twins[hit]] = False
    return keep


def _batches(n: int, size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    return [perm[i:i + size] for i in range(0, n, size)]


def train_epoch(model: SEGNNModel, store: TripleStore, optimizer: Adam, config: TrainConfig,
                rng: np.random.Generator, groups: QueryGroups | None = None,
                on_batch=None, epoch: int = 0) -> float:
    """One pass over all train query groups; returns the mean batch loss.

    ``on_batch(batch_index, heads, relations, keep_mask)`` is called with the
    aggregation keep-mask of every batch before its forward pass.
    """
    groups = QueryGroups.from_store(store) if groups is None else groups
    twins = store.edge_twins()
    aug = store.aug_edges
    losses = []
    for b, batch in enumerate(_batches(len(groups), config.batch_size, rng)):
        keep = aggregation_mask(store, groups, batch, config, rng, twins)
        heads, rels = groups.heads[batch], groups.relations[batch]
        if on_batch is not None:
            on_batch(b, heads, rels, keep)
        edges = Edges.from_triples(aug[keep])
        logits = model.forward(edges, heads, rels, training=True, rng=rng)
        loss = bce_loss(logits, groups.targets(batch, store.n_entities), config.label_smoothing)
        value = float(loss.data)
        if not math.isfinite(value):
            raise TrainingError(f"non-finite loss at epoch {epoch} batch {b} (seed {config.seed})")
        optimizer.zero_grad()
        backward(loss)
        optimizer.step()
        losses.append(value)
    return float(np.mean(losses)) if losses else 0.0


def make_optimizer(model: SEGNNModel, config: TrainConfig) -> Adam:
    return Adam(model.params, lr=config.lr, betas=(config.beta1, config.beta2), eps=config.adam_eps)


@dataclass
class Checkpoint:
    """Config, parameter/buffer arrays and run metadata of a trained model."""

    config: TrainConfig
    state: dict[str, np.ndarray]
    meta: dict[str, str] = field(default_factory=dict)
    log: list = field(default_factory=list, repr=False)

    @property
    def valid_mrr(self) -> float:
        return float(self.meta.get("valid_mrr", "nan"))

    @property
    def epoch(self) -> int:
        return int(self.meta.get("epoch", "0"))

    def build_model(self) -> SEGNNModel:
        model = SEGNNModel(self.config, int(self.meta["n_entities"]), int(self.meta["n_relations"]))
        model.load_state_dict(self.state)
        return model

    def check_store(self, store: TripleStore):
        ent, rel = store.vocab.digest()
        if ent != self.meta.get("entity_vocab_sha256") or rel != self.meta.get("relation_vocab_sha256"):
            raise KGDataError("checkpoint vocabulary does not match the ingested data")

    def manifest_lines(self) -> list[str]:
        lines = self.config.to_lines()
        lines += [f"{RESERVED_PREFIX}{k}={v}" for k, v in self.meta.items()]
        lines.append(f"{RESERVED_PREFIX}tensors={','.join(sorted(self.state))}")
        return lines

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name, arr in self.state.items():
            save_tensor(directory / f"{name}.bin", arr)
        (directory / "manifest.txt").write_text("\n".join(self.manifest_lines()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, directory) -> "Checkpoint":
        directory = Path(directory)
        manifest = directory / "manifest.txt"
        if not manifest.is_file():
            raise KGDataError(f"no manifest.txt in {directory}")
        entries = parse_lines(manifest.read_text(encoding="utf-8").splitlines())
        config = build_config(entries, require=())
        meta = {k[len(RESERVED_PREFIX):]: v for k, v in entries.items() if k.startswith(RESERVED_PREFIX)}
        names = [n for n in meta.pop("tensors", "").split(",") if n]
        state = {n: load_tensor(directory / f"{n}.bin") for n in names}
        return cls(config, state, meta)


def _make_checkpoint(model: SEGNNModel, store: TripleStore, config: TrainConfig,
                     epoch: int, valid_mrr: float) -> Checkpoint:
    ent, rel = store.vocab.digest()
    meta = {
        "epoch": str(epoch),
        "valid_mrr": repr(float(valid_mrr)),
        "n_entities": str(store.n_entities),
        "n_relations": str(store.n_relations),
        "entity_vocab_sha256": ent,
        "relation_vocab_sha256": rel,
        "stacking": "vertical",
        "signature": config.signature(),
        "format": "1",
    }
    return Checkpoint(config, model.state_dict(), meta)


def fit(store: TripleStore, config: TrainConfig, out_dir=None, log_path=None,
        on_epoch=None) -> Checkpoint:
    """Train with early stopping on filtered valid MRR; return the best checkpoint.

    Evaluation runs every ``eval_every`` epochs (and after the last epoch);
    training stops once ``patience`` consecutive evaluations fail to improve
    on the best MRR so far.  ``patience=0`` therefore stops after the first
    evaluation.
    """
    if len(store.valid) == 0:
        raise KGDataError("valid split is empty; early stopping needs it")
    model = SEGNNModel(config, store.n_entities, store.n_relations)
    optimizer = make_optimizer(model, config)
    rng = np.random.default_rng([config.seed, 1])
    groups = QueryGroups.from_store(store)

    best: Checkpoint | None = None
    stale = 0
    log_rows = []
    start = time.perf_counter()
    for epoch in range(1, config.epochs + 1):
        loss = train_epoch(model, store, optimizer, config, rng, groups, epoch=epoch)
        mrr = None
        if epoch % config.eval_every == 0 or epoch == config.epochs:
            report, _ = evaluate(model, store, "valid", config.eval_batch_size)
            mrr = report.mrr
            if best is None or mrr > best.valid_mrr:
                best = _make_checkpoint(model, store, config, epoch, mrr)
                stale = 0
            else:
                stale += 1
            logger.info("epoch %d loss %.6f valid %s", epoch, loss, report)
        row = {"epoch": epoch, "loss": loss, "valid_mrr": mrr,
               "elapsed_s": time.perf_counter() - start}
        log_rows.append(row)
        if on_epoch is not None:
            on_epoch(row)
        if mrr is not None and stale >= config.patience:
            break

    if best is None:
        report, _ = evaluate(model, store, "valid", config.eval_batch_size)
        best = _make_checkpoint(model, store, config, 0, report.mrr)
    if out_dir is not None:
        best.save(out_dir)
        log_path = Path(out_dir) / "train_log.csv" if log_path is None else log_path
    if log_path is not None:
        write_log(log_path, log_rows)
    best.log = log_rows
    return best


def write_log(path, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for r in rows:
            w.writerow([
                r["epoch"], repr(r["loss"]),
                "" if r["valid_mrr"] is None else repr(r["valid_mrr"]),
                f"{r['elapsed_s']:.3f}",
            ])
