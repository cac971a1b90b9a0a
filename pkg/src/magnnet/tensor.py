"""Minimal dense float64 kernel with reverse-mode autodiff and Adam.

Everything is sized for tiny networks (a few thousand parameters), so ops
favour clarity over throughput: each op records itself on an implicit tape
(the parent links of the output tensor) and `backward` replays the tape in
reverse topological order.  All storage is numpy float64; any op producing
NaN/Inf raises NumericError immediately.
"""

from __future__ import annotations

import base64
import json
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ShapeError

_grad_enabled = True

# Finite stand-in for -inf logits: exp(x - max) underflows to exactly 0.0
# so masked probabilities come out exactly zero without Inf entering data.
NEG_INF_LOGIT = -1e30


@contextmanager
def no_grad():
    """Disable tape recording (rollout / evaluation fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _check_finite(data: np.ndarray) -> None:
    if not np.all(np.isfinite(data)):
        raise NumericError("non-finite value produced")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    # sugar used throughout the model code
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def param(data, rng=None) -> Tensor:
    """Leaf parameter tensor."""
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn) -> Tensor:
    _check_finite(np.asarray(data))
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# forward ops
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape[-1] != b.data.shape[0]:
        raise ShapeError(f"matmul: {a.data.shape} @ {b.data.shape}")
    out_data = a.data @ b.data

    def bwd(g):
        return g @ b.data.T, a.data.T @ g

    return _make(out_data, (a, b), bwd)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out_data = a.data + b.data
    except ValueError as e:
        raise ShapeError(f"add: {a.data.shape} + {b.data.shape}") from e

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(out_data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), -_unbroadcast(g, b.data.shape)

    return _make(out_data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def bwd(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), bwd)


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    keep = x.data > 0.0
    return _make(x.data * keep, (x,), lambda g: (g * keep,))


def exp(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out_data = np.exp(x.data)
    return _make(out_data, (x,), lambda g: (g * out_data,))


def log(x: Tensor) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0.0):
        raise NumericError("log of non-positive value")
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,))


def square(x: Tensor) -> Tensor:
    x = as_tensor(x)
    return _make(x.data ** 2, (x,), lambda g: (2.0 * g * x.data,))


def tsum(x: Tensor) -> Tensor:
    x = as_tensor(x)
    return _make(x.data.sum(), (x,), lambda g: (np.full_like(x.data, float(g)),))


def mean(x: Tensor) -> Tensor:
    x = as_tensor(x)
    n = x.data.size
    return _make(x.data.mean(), (x,),
                 lambda g: (np.full_like(x.data, float(g) / n),))


def minimum(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.data <= b.data  # ties route gradient to a

    def bwd(g):
        return (_unbroadcast(g * take_a, a.data.shape),
                _unbroadcast(g * ~take_a, b.data.shape))

    return _make(np.minimum(a.data, b.data), (a, b), bwd)


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    x = as_tensor(x)
    inside = (x.data > lo) & (x.data < hi)
    return _make(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out_data, tuple(tensors), bwd)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    x = as_tensor(x)

    def bwd(g):
        full = np.zeros_like(x.data)
        full[start:stop] = g
        return (full,)

    return _make(x.data[start:stop], (x,), bwd)


def reshape(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)
    return _make(x.data.reshape(shape), (x,),
                 lambda g: (g.reshape(x.data.shape),))


def gather_rows(x: Tensor, idx) -> Tensor:
    """out[i] = x[i, idx[i]] for a 2-D input."""
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.intp)
    rows = np.arange(x.data.shape[0])

    def bwd(g):
        full = np.zeros_like(x.data)
        full[rows, idx] = g
        return (full,)

    return _make(x.data[rows, idx], (x,), bwd)


def softmax_rows(x: Tensor) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * s).sum(axis=-1, keepdims=True)
        return ((g - dot) * s,)

    return _make(s, (x,), bwd)


def masked_softmax(logits: Tensor, mask) -> Tensor:
    """Row softmax with masked entries forced to exactly zero probability.

    `mask` is a boolean array (True = valid) and is not differentiated.
    """
    logits = as_tensor(logits)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != logits.data.shape:
        raise ShapeError(f"mask {mask.shape} vs logits {logits.data.shape}")
    if not mask.any(axis=-1).all():
        raise ShapeError("masked_softmax: a row has no valid entry")
    z = np.where(mask, logits.data, NEG_INF_LOGIT)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * s).sum(axis=-1, keepdims=True)
        return ((g - dot) * s * mask,)

    return _make(s, (logits,), bwd)


def entropy_rows(probs: Tensor) -> Tensor:
    """Per-row Shannon entropy (natural log); zero entries contribute zero."""
    probs = as_tensor(probs)
    p = probs.data
    pos = p > 0.0
    logp = np.where(pos, np.log(np.where(pos, p, 1.0)), 0.0)
    h = -(p * logp).sum(axis=-1)

    def bwd(g):
        return (np.where(pos, -(logp + 1.0), 0.0) * np.expand_dims(g, -1),)

    return _make(h, (probs,), bwd)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def backward(out: Tensor, params=None):
    """Reverse-accumulate gradients of a scalar `out`.

    Sets `.grad` on every reachable leaf with requires_grad.  When `params`
    is given, returns their gradients in order, with zeros for leaves the
    output does not depend on.
    """
    if out.data.size != 1:
        raise ShapeError(f"backward needs a scalar output, got {out.data.shape}")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(out, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(out): np.ones_like(out.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad and node._backward_fn is None:
            node.grad = g if node.grad is None else node.grad + g
        if node._backward_fn is None:
            continue
        parent_grads = node._backward_fn(g)
        for p, pg in zip(node._parents, parent_grads):
            if not p.requires_grad:
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = np.array(pg, dtype=np.float64, copy=True)

    if params is not None:
        return [p.grad if p.grad is not None else np.zeros_like(p.data)
                for p in params]
    return None


def zero_grads(params) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params: list[Tensor], grads: list[np.ndarray],
              state: AdamState) -> AdamState:
    """One bias-corrected Adam update, in place on `params`."""
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericError("NaN/Inf gradient passed to adam_step")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return state


# ---------------------------------------------------------------------------
# init + checkpoints
# ---------------------------------------------------------------------------

def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int,
                   gain: float = 1.0) -> np.ndarray:
    limit = gain * np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def save_checkpoint(path, named_params: dict, manifest: dict | None = None):
    """Write parameters as a JSON manifest with base64 float64 payloads.

    Round trip is bit-exact: arrays are serialized as raw little-endian
    float64 bytes.
    """
    blob = {"manifest": manifest or {}, "params": {}}
    for name, value in named_params.items():
        arr = value.data if isinstance(value, Tensor) else np.asarray(value)
        arr = np.ascontiguousarray(arr, dtype="<f8")
        blob["params"][name] = {
            "shape": list(arr.shape),
            "dtype": "<f8",
            "data_b64": base64.b64encode(arr.tobytes()).decode("ascii"),
        }
    with open(path, "w") as f:
        json.dump(blob, f)


def load_checkpoint(path):
    """Inverse of save_checkpoint: returns (dict name -> ndarray, manifest)."""
    with open(path) as f:
        blob = json.load(f)
    params = {}
    for name, rec in blob["params"].items():
        raw = base64.b64decode(rec["data_b64"])
        arr = np.frombuffer(raw, dtype=rec["dtype"]).reshape(rec["shape"])
        params[name] = arr.astype(np.float64).copy()
    return params, blob.get("manifest", {})
