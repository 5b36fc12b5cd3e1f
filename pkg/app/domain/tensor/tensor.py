"""Dense tensors and a reverse-mode tape.

Every differentiable operation is a registered primitive with a forward rule
and a backward rule (``PRIMITIVES``). While a :class:`Tape` is active, each
primitive application is appended to it as an entry; ``Tape.backward`` walks
the entries in reverse and accumulates input gradients.
"""
from __future__ import annotations

import contextvars
import itertools
import logging
from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.core.exceptions import ValidationException

logger = logging.getLogger(__name__)

_ids = itertools.count()
_active_tape: contextvars.ContextVar[Optional["Tape"]] = contextvars.ContextVar("active_tape", default=None)


class Tensor:
    """Immutable dense value; ``requires_grad`` marks a leaf whose gradient is wanted."""

    __slots__ = ("data", "requires_grad", "id", "__weakref__")

    def __init__(self, data: Any, requires_grad: bool = False, dtype: Any = None):
        if dtype is None:
            src = np.asarray(data)
            dtype = src.dtype if np.issubdtype(src.dtype, np.floating) else np.float64
        self._init(np.array(data, dtype=dtype, copy=True), requires_grad)

    def _init(self, arr: np.ndarray, requires_grad: bool) -> None:
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.id = next(_ids)

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool = False) -> "Tensor":
        t = cls.__new__(cls)
        t._init(np.ascontiguousarray(arr), requires_grad)
        return t

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else float("nan")

    def __add__(self, other: "Tensor") -> "Tensor":
        return apply("add", self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return apply("sub", self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return apply("mul", self, other)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


def constant(data: Any, dtype: Any = None) -> Tensor:
    return Tensor(data, requires_grad=False, dtype=dtype)


def parameter(data: Any, dtype: Any = None) -> Tensor:
    return Tensor(data, requires_grad=True, dtype=dtype)


ForwardRule = Callable[..., Tuple[np.ndarray, Any]]
BackwardRule = Callable[..., Sequence[Optional[np.ndarray]]]


@dataclass(frozen=True)
class Primitive:
    name: str
    forward: ForwardRule  # (*arrays, **attrs) -> (output, ctx)
    backward: BackwardRule  # (grad_out, ctx, *arrays, **attrs) -> per-input grads (None = no gradient)


PRIMITIVES: Dict[str, Primitive] = {}


def primitive(name: str, backward: BackwardRule) -> Callable[[ForwardRule], ForwardRule]:
    def register(fwd: ForwardRule) -> ForwardRule:
        PRIMITIVES[name] = Primitive(name, fwd, backward)
        return fwd

    return register


@dataclass
class TapeEntry:
    op: str
    inputs: Tuple[int, ...]
    output: int
    attrs: Dict[str, Any]
    ctx: Any = None


class Gradients(Mapping):
    """Gradient map keyed by tensor (or tensor id)."""

    def __init__(self, grads: Dict[int, np.ndarray]):
        self._grads = grads

    @staticmethod
    def _key(key: Union[Tensor, int]) -> int:
        return key.id if isinstance(key, Tensor) else int(key)

    def __getitem__(self, key: Union[Tensor, int]) -> np.ndarray:
        return self._grads[self._key(key)]

    def __contains__(self, key: object) -> bool:
        if isinstance(key, (Tensor, int)):
            return self._key(key) in self._grads
        return False

    def __iter__(self) -> Iterator[int]:
        return iter(self._grads)

    def __len__(self) -> int:
        return len(self._grads)


@dataclass
class Tape:
    """Ordered record of primitive applications. Single owner; never shared across threads."""

    entries: List[TapeEntry] = field(default_factory=list)
    tensors: Dict[int, Tensor] = field(default_factory=dict)
    _produced: set = field(default_factory=set)
    _token: Any = None

    def __enter__(self) -> "Tape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc: Any) -> None:
        _active_tape.reset(self._token)
        self._token = None

    def watch(self, *tensors: Tensor) -> None:
        for t in tensors:
            self.tensors.setdefault(t.id, t)

    def record(self, op: str, inputs: Sequence[Tensor], output: Tensor, attrs: Dict[str, Any], ctx: Any) -> None:
        self.watch(*inputs)
        self.tensors[output.id] = output
        self._produced.add(output.id)
        self.entries.append(TapeEntry(op, tuple(t.id for t in inputs), output.id, attrs, ctx))

    @property
    def leaves(self) -> List[Tensor]:
        return [t for tid, t in self.tensors.items() if t.requires_grad and tid not in self._produced]

    def backward(self, loss: Tensor) -> Gradients:
        """Gradient of a scalar loss for every requires_grad leaf on the tape."""
        if loss.size != 1:
            raise ValidationException(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.id not in self.tensors:
            raise ValidationException("loss was not produced on this tape")
        grads: Dict[int, np.ndarray] = {loss.id: np.ones_like(loss.data)}
        for entry in reversed(self.entries):
            g = grads.get(entry.output)
            if g is None:
                continue
            prim = PRIMITIVES[entry.op]
            arrays = [self.tensors[i].data for i in entry.inputs]
            in_grads = prim.backward(g, entry.ctx, *arrays, **entry.attrs)
            for tid, ig in zip(entry.inputs, in_grads):
                if ig is None or not self.tensors[tid].requires_grad:
                    continue
                grads[tid] = grads[tid] + ig if tid in grads else ig
        out = {}
        for leaf in self.leaves:
            out[leaf.id] = grads.get(leaf.id, np.zeros_like(leaf.data))
        return Gradients(out)

    def replay(self, leaf_values: Optional[Mapping[Union[Tensor, int], np.ndarray]] = None) -> Dict[int, np.ndarray]:
        """Re-run every recorded forward rule, substituting the given leaf values."""
        values: Dict[int, np.ndarray] = {tid: t.data for tid, t in self.tensors.items() if tid not in self._produced}
        for key, value in (leaf_values or {}).items():
            tid = key.id if isinstance(key, Tensor) else int(key)
            values[tid] = np.asarray(value, dtype=self.tensors[tid].dtype)
        for entry in self.entries:
            prim = PRIMITIVES[entry.op]
            out, _ = prim.forward(*(values[i] for i in entry.inputs), **entry.attrs)
            values[entry.output] = out
        return values


def active_tape() -> Optional[Tape]:
    return _active_tape.get()


def apply(op: str, *inputs: Tensor, **attrs: Any) -> Tensor:
    """Run a primitive forward and record it on the active tape, if any."""
    prim = PRIMITIVES[op]
    out, ctx = prim.forward(*(t.data for t in inputs), **attrs)
    result = Tensor._wrap(out, requires_grad=any(t.requires_grad for t in inputs))
    tape = _active_tape.get()
    if tape is not None:
        tape.record(op, inputs, result, attrs, ctx)
    return result
