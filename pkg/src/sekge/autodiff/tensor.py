"""Dense tensors with a reverse-mode gradient tape."""

from __future__ import annotations

import contextlib
import threading

import numpy as np

from ..exceptions import ShapeError

_state = threading.local()

DEFAULT_DTYPE = np.float32


def _get(name, default):
    return getattr(_state, name, default)


class Tape:
    """Ordered record of primitive applications.

    Records are appended in execution order, which is a topological order,
    so replaying them backwards visits every node after all its consumers.
    """

    def __init__(self):
        self.records: list[tuple[Tensor, tuple, object]] = []

    def record(self, out, parents, backward_fn):
        self.records.append((out, parents, backward_fn))

    def clear(self):
        self.records.clear()

    def __len__(self):
        return len(self.records)


def current_tape() -> Tape:
    tape = _get("tape", None)
    if tape is None:
        tape = _state.tape = Tape()
    return tape


def is_grad_enabled() -> bool:
    return _get("grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable recording for the enclosed block (evaluation, optimizer updates)."""
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    """Row-major numpy array plus an optional accumulated gradient."""

    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype.kind == "f" else DEFAULT_DTYPE
        self.data = np.array(data, dtype=dtype, copy=True)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._leaf = True

    @classmethod
    def _from_op(cls, data: np.ndarray, requires_grad: bool) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = requires_grad
        out.grad = None
        out.name = None
        out._leaf = not requires_grad
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self):
        return self.data.item()

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self):
        return len(self.data)

    # Operator sugar; implementations live in ops.
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.gather(self, index)

    @property
    def T(self):
        from . import ops
        return ops.transpose(self)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if dtype is None and isinstance(x, np.ndarray) and x.dtype.kind == "f":
        dtype = x.dtype
    return Tensor(x, dtype=dtype)


def make_result(data: np.ndarray, parents: tuple, backward_fn) -> Tensor:
    """Wrap a primitive's forward value and record it on the tape if needed.

    ``backward_fn(grad_out)`` returns one gradient (or ``None``) per parent.
    """
    needs = is_grad_enabled() and any(p.requires_grad for p in parents)
    out = Tensor._from_op(data, needs)
    if needs:
        current_tape().record(out, parents, backward_fn)
    return out


def backward(loss: Tensor, tape: Tape | None = None) -> None:
    """Populate ``.grad`` of every requires-grad leaf reachable from ``loss``.

    Gradients accumulate into existing ``.grad`` arrays.  The tape is cleared
    afterwards.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = current_tape() if tape is None else tape
    grads: dict[int, np.ndarray] = {}
    if loss.requires_grad:
        if loss._leaf:
            _accumulate(loss, np.ones_like(loss.data))
        else:
            grads[id(loss)] = np.ones_like(loss.data)
        for out, parents, fn in reversed(tape.records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for parent, pg in zip(parents, fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.data.shape:
                    raise ShapeError(
                        f"gradient shape {pg.shape} does not match operand {parent.data.shape}"
                    )
                if parent._leaf:
                    _accumulate(parent, pg)
                else:
                    key = id(parent)
                    prev = grads.get(key)
                    grads[key] = pg if prev is None else prev + pg
    tape.clear()


def _accumulate(leaf: Tensor, g: np.ndarray):
    g = g.astype(leaf.data.dtype, copy=False)
    if leaf.grad is None:
        leaf.grad = g.copy()
    else:
        leaf.grad += g
