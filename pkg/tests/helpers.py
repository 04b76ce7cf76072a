"""Finite-difference oracle and small fixtures shared across test modules."""

import numpy as np

from sekge.autodiff import Tensor, backward, no_grad, ops
from sekge.kg import from_labeled_triples

FD_STEP = 1e-5
FD_RTOL = 1e-4


def numerical_grad(f, arrays, step=FD_STEP):
    """Central differences of scalar ``f(*arrays)`` w.r.t. every array."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            orig = a[i]
            a[i] = orig + step
            fp = f(*arrays)
            a[i] = orig - step
            fm = f(*arrays)
            a[i] = orig
            g[i] = (fp - fm) / (2 * step)
        grads.append(g)
    return grads


# Blocks whose true gradient is exactly zero (a bias feeding a train-mode
# batch norm) only show finite-difference noise; they are measured against
# this fraction of the whole gradient's norm instead of their own.
NOISE_FLOOR = 1e-6


def rel_error(a, b, floor=1e-12):
    a, b = np.ravel(a), np.ravel(b)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / denom)


def check_grad(build, arrays, seed=0):
    """Compare tape gradients of ``sum(build(*tensors) * W)`` with central differences.

    ``build`` maps Tensors to an output Tensor; ``W`` is a fixed random
    projection so that every output element contributes.  Returns the
    largest relative error over the inputs.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    with no_grad():
        shape = build(*[Tensor(a, dtype=np.float64) for a in arrays]).shape
    W = np.random.default_rng(seed).normal(size=shape)

    def scalar(*arrs):
        with no_grad():
            out = build(*[Tensor(a, dtype=np.float64) for a in arrs])
        return float(np.sum(out.data * W))

    leaves = [Tensor(a, requires_grad=True, dtype=np.float64) for a in arrays]
    out = build(*leaves)
    loss = ops.sum(ops.mul(out, Tensor(W, dtype=np.float64)))
    backward(loss)
    numeric = numerical_grad(scalar, arrays)
    tape = [np.zeros_like(n) if leaf.grad is None else leaf.grad for leaf, n in zip(leaves, numeric)]
    scale = np.linalg.norm(np.concatenate([np.ravel(n) for n in numeric]))
    floor = max(NOISE_FLOOR * scale, 1e-12)
    return max(rel_error(t, n, floor) for t, n in zip(tape, numeric))


def random_kg(rng, n_entities=50, n_relations=10, n_triples=500, holdout=0.1):
    """Random store; valid/test draw only ids already present in train."""
    ids = set()
    target = min(int(rng.integers(1, n_triples + 1)), n_entities * n_entities * n_relations)
    while len(ids) < target:
        ids.add((int(rng.integers(n_entities)), int(rng.integers(n_relations)),
                 int(rng.integers(n_entities))))
    triples = sorted(ids, key=lambda _: rng.random())
    k = int(len(triples) * holdout)
    train = triples[2 * k:] or triples[:1]
    held = triples[:2 * k] if len(triples) > 1 else []
    ents = {h for h, _, _ in train} | {t for _, _, t in train}
    rels = {r for _, r, _ in train}
    held = [x for x in held if x[0] in ents and x[2] in ents and x[1] in rels and x not in train]
    lab = lambda x: (f"e{x[0]}", f"r{x[1]}", f"e{x[2]}")  # noqa: E731
    half = len(held) // 2
    return from_labeled_triples([lab(x) for x in train], [lab(x) for x in held[:half]],
                                [lab(x) for x in held[half:]])


def write_split_dir(path, train, valid=(), test=()):
    for name, rows in (("train", train), ("valid", valid), ("test", test)):
        with open(path / f"{name}.txt", "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write("\t".join(row) + "\n")
    return path


def cube_triples():
    """Noiseless 8-entity / 3-relation KG: ``flip_k`` links vertices of a
    3-bit cube that differ in bit ``k``.

    Each held-out triple's mirror stays in train, so every valid and test
    answer is implied by training patterns.
    """
    triples = [(f"v{i}", f"flip{k}", f"v{i ^ (1 << k)}") for i in range(8) for k in range(3)]
    held = [("v0", "flip0", "v1"), ("v6", "flip1", "v4"), ("v3", "flip2", "v7"), ("v5", "flip0", "v4")]
    train = [t for t in triples if t not in held]
    return train, held[:2], held[2:]


def cube_kg():
    return from_labeled_triples(*cube_triples())


CUBE_CONFIG = dict(
    n=16, lr=0.01, epochs=200, batch_size=8, label_smoothing=0.0, edge_removal_rate=0.0,
    message_dropout=0.0, input_dropout=0.0, feature_dropout=0.0, hidden_dropout=0.0,
    conv_channels=8, eval_every=5, patience=200, seed=0,
)
