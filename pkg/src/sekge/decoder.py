"""Convolutional query decoder with 1-N dot-product scoring."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, ops
from .encoder import xavier_uniform


def default_reshape(n: int) -> tuple[int, int]:
    """Factor ``n = d1 * d2`` with ``d1`` the divisor closest to ``sqrt(n / 2)``."""
    target = np.sqrt(n / 2.0)
    divisors = [d for d in range(1, n + 1) if n % d == 0]
    d1 = min(divisors, key=lambda d: (abs(d - target), d))
    return d1, n // d1


class ConvEDecoder:
    """Stack ``h`` and ``r`` as a ``2*d1 x d2`` image, convolve, project to ``n``.

    The two maps are stacked vertically (``h`` on top).  Convolution uses
    zero padding that preserves the image extent.
    """

    def __init__(self, n_entities: int, dim: int, reshape=None, channels: int = 32,
                 kernel_size: int = 3, input_dropout: float = 0.2, feature_dropout: float = 0.2,
                 hidden_dropout: float = 0.3, bn_momentum: float = 0.1, rng=None,
                 dtype=np.float32):
        d1, d2 = default_reshape(dim) if reshape is None else reshape
        if d1 * d2 != dim:
            raise ValueError(f"reshape {d1}x{d2} does not match embedding dim {dim}")
        if channels <= 0 or kernel_size <= 0:
            raise ValueError("channels and kernel_size must be positive")
        if kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd for extent-preserving padding")
        rng = np.random.default_rng(1) if rng is None else rng
        self.dim = dim
        self.d1, self.d2 = d1, d2
        self.channels = channels
        self.kernel_size = kernel_size
        self.input_dropout = input_dropout
        self.feature_dropout = feature_dropout
        self.hidden_dropout = hidden_dropout
        self.bn_momentum = bn_momentum
        flat = channels * 2 * d1 * d2
        k = kernel_size
        p = {
            "conv.weight": xavier_uniform(rng, (channels, 1, k, k), dtype),
            "conv.bias": np.zeros(channels, dtype),
            "fc.weight": xavier_uniform(rng, (flat, dim), dtype),
            "fc.bias": np.zeros(dim, dtype),
            "entity_bias": np.zeros(n_entities, dtype),
        }
        for name, size in (("bn0", 1), ("bn1", channels), ("bn2", dim)):
            p[f"{name}.gamma"] = np.ones(size, dtype)
            p[f"{name}.beta"] = np.zeros(size, dtype)
        self.params = {k_: Tensor(v, requires_grad=True, name=k_) for k_, v in p.items()}
        self.buffers = {}
        for name, size in (("bn0", 1), ("bn1", channels), ("bn2", dim)):
            self.buffers[f"{name}.running_mean"] = np.zeros(size, dtype)
            self.buffers[f"{name}.running_var"] = np.ones(size, dtype)

    def _bn(self, name, x, training):
        return ops.batch_norm(
            x, self.params[f"{name}.gamma"], self.params[f"{name}.beta"],
            self.buffers[f"{name}.running_mean"], self.buffers[f"{name}.running_var"],
            training=training, momentum=self.bn_momentum,
        )

    def query_embed(self, h: Tensor, r: Tensor, training: bool = False, rng=None) -> Tensor:
        """``(B, n)`` head and relation rows to ``(B, n)`` query embeddings."""
        B = h.shape[0]
        img = ops.reshape(ops.concat([h, r], axis=1), (B, 1, 2 * self.d1, self.d2))
        x = self._bn("bn0", img, training)
        x = ops.dropout(x, self.input_dropout, rng, training)
        x = ops.conv2d(x, self.params["conv.weight"], self.params["conv.bias"],
                       padding=self.kernel_size // 2)
        x = ops.relu(self._bn("bn1", x, training))
        x = ops.dropout(x, self.feature_dropout, rng, training, channelwise=True)
        x = ops.reshape(x, (B, -1))
        x = ops.add(ops.matmul(x, self.params["fc.weight"]), self.params["fc.bias"])
        x = ops.dropout(x, self.hidden_dropout, rng, training)
        return ops.relu(self._bn("bn2", x, training))

    def score_all(self, q: Tensor, entity_table: Tensor) -> Tensor:
        """Logits ``q . e_t + bias_t`` against every entity; ``(B, |E|)``."""
        return ops.add(ops.matmul(q, ops.transpose(entity_table)), self.params["entity_bias"])
