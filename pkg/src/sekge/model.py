"""Encoder plus decoder as one parameter set."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, ops
from .config import TrainConfig
from .decoder import ConvEDecoder
from .encoder import Edges, SEGNNEncoder


class SEGNNModel:
    def __init__(self, config: TrainConfig, n_entities: int, n_relations: int):
        self.config = config
        self.n_entities = n_entities
        self.n_relations = n_relations
        dtype = np.dtype(config.dtype)
        init = np.random.default_rng(config.seed)
        self.encoder = SEGNNEncoder(
            n_entities, 2 * n_relations, config.n, config.layers, config.composition,
            config.activation, config.message_dropout, rng=init, dtype=dtype,
        )
        reshape = (config.reshape_rows, config.n // config.reshape_rows) if config.reshape_rows else None
        self.decoder = ConvEDecoder(
            n_entities, config.n, reshape, config.conv_channels, config.kernel_size,
            config.input_dropout, config.feature_dropout, config.hidden_dropout,
            config.bn_momentum, rng=init, dtype=dtype,
        )

    @property
    def params(self) -> dict[str, Tensor]:
        out = {f"encoder.{k}": v for k, v in self.encoder.params.items()}
        out.update({f"decoder.{k}": v for k, v in self.decoder.params.items()})
        return out

    @property
    def buffers(self) -> dict[str, np.ndarray]:
        return {f"decoder.{k}": v for k, v in self.decoder.buffers.items()}

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {k: v.data.copy() for k, v in self.params.items()}
        state.update({k: v.copy() for k, v in self.buffers.items()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]):
        params, buffers = self.params, self.buffers
        expected = set(params) | set(buffers)
        if set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise ValueError(f"state mismatch: missing={missing} unexpected={extra}")
        for k, t in params.items():
            if state[k].shape != t.data.shape:
                raise ValueError(f"{k}: shape {state[k].shape} != {t.data.shape}")
            t.data[...] = state[k]
        for k, b in buffers.items():
            b[...] = state[k]

    def encode(self, edges: Edges, training=False, rng=None):
        return self.encoder.encode(edges, training, rng)

    def logits(self, ent: Tensor, rel: Tensor, heads, relations, training=False, rng=None) -> Tensor:
        h = ops.gather(ent, np.asarray(heads))
        r = ops.gather(rel, np.asarray(relations))
        q = self.decoder.query_embed(h, r, training, rng)
        return self.decoder.score_all(q, ent)

    def forward(self, edges: Edges, heads, relations, training=False, rng=None) -> Tensor:
        ent, rel = self.encode(edges, training, rng)
        return self.logits(ent, rel, heads, relations, training, rng)
