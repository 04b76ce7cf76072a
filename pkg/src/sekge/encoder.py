"""Evidence-aware graph encoder.

Each layer runs three attention-weighted neighbor aggregations over edges
``(src, rel, dst)`` (messages flow from ``src`` into ``dst``):

* ``rel``: messages are the connecting relation embeddings,
* ``ent``: messages are the neighbor entity embeddings,
* ``tri``: messages are a composition of neighbor entity and relation.

Attention is a per-destination softmax of the dot product between message
and the destination's current embedding.  The three branch outputs are added
to the layer input.  Weight matrices act on row vectors (``x @ W``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, ops

BRANCHES = ("rel", "ent", "tri")
COMPOSITIONS = ("add", "mul", "mlp")
ACTIVATIONS = {"tanh": ops.tanh, "relu": ops.relu}


@dataclass
class Edges:
    """Aggregation edge list; messages flow ``src -> dst`` labelled ``rel``."""

    src: np.ndarray
    rel: np.ndarray
    dst: np.ndarray

    @classmethod
    def from_triples(cls, triples: np.ndarray) -> "Edges":
        t = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        return cls(t[:, 0].copy(), t[:, 1].copy(), t[:, 2].copy())

    def __len__(self):
        return len(self.src)


def xavier_uniform(rng: np.random.Generator, shape, dtype) -> np.ndarray:
    fan_out, fan_in = shape[0], int(np.prod(shape[1:]))
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def compose(e: Tensor, r: Tensor, composition: str, W_phi: Tensor | None = None) -> Tensor:
    if composition == "add":
        return ops.add(e, r)
    if composition == "mul":
        return ops.mul(e, r)
    if composition == "mlp":
        if W_phi is None:
            raise ValueError("mlp composition needs a weight matrix")
        return ops.tanh(ops.matmul(ops.concat([e, r], axis=1), W_phi))
    raise ValueError(f"unknown composition {composition!r}; expected one of {COMPOSITIONS}")


def aggregate_branch(branch: str, e: Tensor, r: Tensor, edges: Edges, W: Tensor,
                     composition: str = "mul", activation: str = "tanh",
                     W_phi: Tensor | None = None, _cache: dict | None = None):
    """Attention-weighted neighbor message for every entity.

    Returns ``(s, alpha)``: ``s`` is ``(n_entities, n)`` with zero rows for
    entities without incoming edges, ``alpha`` the per-edge attention.
    """
    if branch not in BRANCHES:
        raise ValueError(f"unknown branch {branch!r}; expected one of {BRANCHES}")
    cache = {} if _cache is None else _cache
    n_entities = e.shape[0]
    if branch == "rel" or branch == "tri":
        if "r_src" not in cache:
            cache["r_src"] = ops.gather(r, edges.rel)
    if branch == "ent" or branch == "tri":
        if "e_src" not in cache:
            cache["e_src"] = ops.gather(e, edges.src)
    if "e_dst" not in cache:
        cache["e_dst"] = ops.gather(e, edges.dst)

    if branch == "rel":
        msg = cache["r_src"]
    elif branch == "ent":
        msg = cache["e_src"]
    else:
        msg = compose(cache["e_src"], cache["r_src"], composition, W_phi)

    scores = ops.sum(ops.mul(msg, cache["e_dst"]), axis=1)
    alpha = ops.segment_softmax(scores, edges.dst, n_entities)
    weighted = ops.mul(msg, ops.reshape(alpha, (-1, 1)))
    pooled = ops.scatter_add(weighted, edges.dst, n_entities)
    s = ACTIVATIONS[activation](ops.matmul(pooled, W))
    return s, alpha.data


class SEGNNEncoder:
    """Parameters and forward pass of the multi-layer encoder.

    ``n_query_relations`` counts base plus inverse relations (``2R``).
    """

    def __init__(self, n_entities: int, n_query_relations: int, dim: int, layers: int = 2,
                 composition: str = "mul", activation: str = "tanh",
                 message_dropout: float = 0.1, rng=None, dtype=np.float32):
        if dim <= 0 or layers < 1:
            raise ValueError("embedding dim must be positive and layers >= 1")
        if composition not in COMPOSITIONS:
            raise ValueError(f"unknown composition {composition!r}; expected one of {COMPOSITIONS}")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}; expected one of {tuple(ACTIVATIONS)}")
        rng = np.random.default_rng(0) if rng is None else rng
        self.n_entities = n_entities
        self.n_query_relations = n_query_relations
        self.dim = dim
        self.layers = layers
        self.composition = composition
        self.activation = activation
        self.message_dropout = message_dropout
        self.attention: dict[tuple[int, str], np.ndarray] = {}

        p = {"entity_emb": xavier_uniform(rng, (n_entities, dim), dtype)}
        for l in range(layers):
            p[f"relation_emb.{l}"] = xavier_uniform(rng, (n_query_relations, dim), dtype)
            for b in BRANCHES:
                p[f"W_{b}.{l}"] = xavier_uniform(rng, (dim, dim), dtype)
            if composition == "mlp":
                p[f"W_phi.{l}"] = xavier_uniform(rng, (2 * dim, dim), dtype)
        p["W_out"] = xavier_uniform(rng, (layers * dim, dim), dtype)
        self.params = {k: Tensor(v, requires_grad=True, name=k) for k, v in p.items()}

    def layer_forward(self, layer: int, e: Tensor, edges: Edges, training: bool = False,
                      rng=None) -> Tensor:
        """One residual layer: ``e + s_rel + s_ent + s_tri``."""
        r = self.params[f"relation_emb.{layer}"]
        W_phi = self.params.get(f"W_phi.{layer}")
        cache: dict = {}
        out = e
        for b in BRANCHES:
            s, alpha = aggregate_branch(
                b, e, r, edges, self.params[f"W_{b}.{layer}"],
                self.composition, self.activation, W_phi, _cache=cache,
            )
            self.attention[(layer, b)] = alpha
            if training and self.message_dropout > 0:
                s = ops.dropout(s, self.message_dropout, rng, training=True)
            out = ops.add(out, s)
        return out

    def encode(self, edges: Edges, training: bool = False, rng=None) -> tuple[Tensor, Tensor]:
        """Output entity table ``(|E|, n)`` and relation table ``(2R, n)``."""
        e = self.params["entity_emb"]
        for l in range(self.layers):
            e = self.layer_forward(l, e, edges, training, rng)
        rel = [self.params[f"relation_emb.{l}"] for l in range(self.layers)]
        stacked = rel[0] if self.layers == 1 else ops.concat(rel, axis=1)
        return e, ops.matmul(stacked, self.params["W_out"])
