"""Minimal reverse-mode differentiation over float64 numpy arrays.

Every operation computes its forward result eagerly and, when given a Tape,
records a closure for the reverse pass. Passing tape=None runs the same
forward math without recording, which is how target-network and serving
paths stay cheap.

Tensors are treated as immutable once created; the optimizer mutates
parameter arrays in place only between tapes.
"""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from . import _kernels


class Tensor:
    __slots__ = ("data",)

    def __init__(self, data):
        self.data = np.asarray(data, dtype=np.float64)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape})"


class Tape:
    """Ordered record of primitive ops; supports exactly one reverse pass each."""

    def __init__(self):
        self._nodes: list[tuple[Tensor, Callable]] = []

    def record(self, out: Tensor, backward_fn: Callable) -> None:
        self._nodes.append((out, backward_fn))

    def __len__(self) -> int:
        return len(self._nodes)


class ParamStore:
    """Named parameter tensors; names unique, shapes fixed after creation."""

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}

    def add(self, name: str, array) -> Tensor:
        if name in self._tensors:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(array, dtype=np.float64))
        self._tensors[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return list(self._tensors)

    def items(self) -> Iterable[tuple[str, Tensor]]:
        return self._tensors.items()

    def subset(self, prefixes: tuple[str, ...]) -> "ParamStore":
        """View over parameters whose name starts with one of the prefixes
        (shares the underlying tensors)."""
        view = ParamStore.__new__(ParamStore)
        view._tensors = {
            name: t for name, t in self._tensors.items()
            if name.startswith(prefixes)
        }
        return view

    def copy(self) -> "ParamStore":
        clone = ParamStore()
        for name, t in self._tensors.items():
            clone.add(name, t.data.copy())
        return clone


def _accum(grads: dict[int, np.ndarray], t: Tensor, g: np.ndarray) -> None:
    key = id(t)
    if key in grads:
        grads[key] += g
    else:
        grads[key] = g.astype(np.float64, copy=True)


def backward(tape: Tape, loss: Tensor, params: ParamStore) -> dict[str, np.ndarray]:
    """Reverse pass from a scalar loss; returns one gradient per parameter
    (zeros for parameters the loss never touched)."""
    if loss.data.shape != ():
        raise ValueError(f"loss must be a scalar, got shape {loss.data.shape}")
    if not len(tape):
        raise ValueError("tape is empty")
    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
    for out, backward_fn in reversed(tape._nodes):
        g = grads.get(id(out))
        if g is None:
            continue
        backward_fn(g, grads)
    return {
        name: grads.get(id(t), np.zeros_like(t.data)).reshape(t.data.shape)
        for name, t in params.items()
    }


# ---------------------------------------------------------------------------
# primitive operations


def _rec(tape: Tape | None, out: Tensor, bw: Callable) -> Tensor:
    if tape is not None:
        tape.record(out, bw)
    return out


def affine(x: Tensor, w: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    if x.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise ValueError(f"affine shape mismatch: x{x.shape} @ w{w.shape}")
    if b.data.shape != (w.data.shape[1],):
        raise ValueError(f"affine bias shape {b.shape} != ({w.data.shape[1]},)")
    out = Tensor(x.data @ w.data + b.data)

    def bw(g, grads):
        _accum(grads, x, g @ w.data.T)
        _accum(grads, w, x.data.T @ g)
        _accum(grads, b, g.sum(axis=0))

    return _rec(tape, out, bw)


def matmul(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    if a.data.shape[-1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)

    def bw(g, grads):
        _accum(grads, a, g @ b.data.T)
        _accum(grads, b, a.data.T @ g)

    return _rec(tape, out, bw)


def transpose(x: Tensor, tape: Tape | None = None) -> Tensor:
    out = Tensor(x.data.T)

    def bw(g, grads):
        _accum(grads, x, g.T)

    return _rec(tape, out, bw)


def add(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"add shape mismatch: {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data)

    def bw(g, grads):
        _accum(grads, a, g)
        _accum(grads, b, g)

    return _rec(tape, out, bw)


def sub(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"sub shape mismatch: {a.shape} vs {b.shape}")
    out = Tensor(a.data - b.data)

    def bw(g, grads):
        _accum(grads, a, g)
        _accum(grads, b, -g)

    return _rec(tape, out, bw)


def mul(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"mul shape mismatch: {a.shape} vs {b.shape}")
    out = Tensor(a.data * b.data)

    def bw(g, grads):
        _accum(grads, a, g * b.data)
        _accum(grads, b, g * a.data)

    return _rec(tape, out, bw)


def scale(x: Tensor, c: float, tape: Tape | None = None) -> Tensor:
    out = Tensor(x.data * c)

    def bw(g, grads):
        _accum(grads, x, g * c)

    return _rec(tape, out, bw)


def add_const(x: Tensor, c: np.ndarray, tape: Tape | None = None) -> Tensor:
    """x + c with c constant (no gradient to c); c may broadcast."""
    out = Tensor(x.data + c)

    def bw(g, grads):
        _accum(grads, x, g)

    return _rec(tape, out, bw)


def mul_const(x: Tensor, c: np.ndarray, tape: Tape | None = None) -> Tensor:
    """x * c with c constant; c may broadcast."""
    out = Tensor(x.data * c)

    def bw(g, grads):
        _accum(grads, x, g * c)

    return _rec(tape, out, bw)


def relu(x: Tensor, tape: Tape | None = None) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0))

    def bw(g, grads):
        _accum(grads, x, g * (x.data > 0.0))

    return _rec(tape, out, bw)


def sigmoid(x: Tensor, tape: Tape | None = None) -> Tensor:
    d = x.data
    out_data = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                        np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    # keep the open interval even where float64 would round to 0 or 1
    out = Tensor(np.clip(out_data, 1e-15, 1.0 - 1e-15))

    def bw(g, grads):
        _accum(grads, x, g * out.data * (1.0 - out.data))

    return _rec(tape, out, bw)


def softmax(x: Tensor, tape: Tape | None = None) -> Tensor:
    """Row-wise softmax (1-D input treated as a single row)."""
    d = x.data if x.data.ndim == 2 else x.data[None, :]
    shifted = d - d.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)
    out = Tensor(y if x.data.ndim == 2 else y[0])

    def bw(g, grads):
        g2 = g if g.ndim == 2 else g[None, :]
        dot = (g2 * y).sum(axis=1, keepdims=True)
        gx = (g2 - dot) * y
        _accum(grads, x, gx if x.data.ndim == 2 else gx[0])

    return _rec(tape, out, bw)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor,
               tape: Tape | None = None, eps: float = 1e-8) -> Tensor:
    if x.data.ndim != 2 or x.data.shape[1] == 0:
        raise ValueError(f"layer_norm needs nonempty 2-D rows, got shape {x.shape}")
    mean = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv
    out = Tensor(xhat * gamma.data + beta.data)

    def bw(g, grads):
        n = x.data.shape[1]
        gg = g * gamma.data
        gx = inv * (gg - gg.mean(axis=1, keepdims=True)
                    - xhat * (gg * xhat).mean(axis=1, keepdims=True))
        _accum(grads, x, gx)
        _accum(grads, gamma, (g * xhat).sum(axis=0))
        _accum(grads, beta, g.sum(axis=0))

    return _rec(tape, out, bw)


def mean_pool(x: Tensor, tape: Tape | None = None) -> Tensor:
    """Mean over rows -> (1, d)."""
    if x.data.ndim != 2 or x.data.shape[0] == 0:
        raise ValueError(f"mean_pool needs nonempty 2-D input, got shape {x.shape}")
    n = x.data.shape[0]
    out = Tensor(x.data.mean(axis=0, keepdims=True))

    def bw(g, grads):
        _accum(grads, x, np.repeat(g / n, n, axis=0))

    return _rec(tape, out, bw)


def square(x: Tensor, tape: Tape | None = None) -> Tensor:
    out = Tensor(x.data * x.data)

    def bw(g, grads):
        _accum(grads, x, 2.0 * x.data * g)

    return _rec(tape, out, bw)


def mean_all(x: Tensor, tape: Tape | None = None) -> Tensor:
    out = Tensor(np.float64(x.data.mean()))

    def bw(g, grads):
        _accum(grads, x, np.full_like(x.data, g / x.data.size))

    return _rec(tape, out, bw)


def sum_all(x: Tensor, tape: Tape | None = None) -> Tensor:
    out = Tensor(np.float64(x.data.sum()))

    def bw(g, grads):
        _accum(grads, x, np.full_like(x.data, g))

    return _rec(tape, out, bw)


def gather_rows(x: Tensor, idx, tape: Tape | None = None) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    out = Tensor(x.data[idx])

    def bw(g, grads):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        _accum(grads, x, gx)

    return _rec(tape, out, bw)


def slice_cols(x: Tensor, start: int, stop: int, tape: Tape | None = None) -> Tensor:
    out = Tensor(x.data[:, start:stop])

    def bw(g, grads):
        gx = np.zeros_like(x.data)
        gx[:, start:stop] = g
        _accum(grads, x, gx)

    return _rec(tape, out, bw)


def concat_rows(tensors: list[Tensor], tape: Tape | None = None) -> Tensor:
    out = Tensor(np.concatenate([t.data for t in tensors], axis=0))
    sizes = [t.data.shape[0] for t in tensors]

    def bw(g, grads):
        offset = 0
        for t, n in zip(tensors, sizes):
            _accum(grads, t, g[offset:offset + n])
            offset += n

    return _rec(tape, out, bw)


def concat_cols(tensors: list[Tensor], tape: Tape | None = None) -> Tensor:
    out = Tensor(np.concatenate([t.data for t in tensors], axis=1))
    sizes = [t.data.shape[1] for t in tensors]

    def bw(g, grads):
        offset = 0
        for t, n in zip(tensors, sizes):
            _accum(grads, t, g[:, offset:offset + n])
            offset += n

    return _rec(tape, out, bw)


def scatter_message(x: Tensor, src: np.ndarray, dst: np.ndarray, w: np.ndarray,
                    n_out: int, tape: Tape | None = None) -> Tensor:
    """out[dst[e]] += w[e] * x[src[e]]; edge lists and weights are constants."""
    out = Tensor(_kernels.scatter_rows_add(src, dst, w, x.data, n_out))

    def bw(g, grads):
        _accum(grads, x, _kernels.scatter_rows_add(dst, src, w, g, x.data.shape[0]))

    return _rec(tape, out, bw)


_FORWARD_KINDS = {
    "affine": (affine, 3),
    "relu": (relu, 1),
    "sigmoid": (sigmoid, 1),
    "softmax": (softmax, 1),
    "layer_norm": (layer_norm, 3),
    "mean_pool": (mean_pool, 1),
}

_PARAM_OPERANDS = {"affine": ("w", "b"), "layer_norm": ("gamma", "beta")}


def forward_op(kind: str, inputs: list[Tensor], params: ParamStore | None = None,
               tape: Tape | None = None) -> Tensor:
    """Dispatch a standard layer by name; weight operands not present in
    ``inputs`` are pulled from ``params`` by their conventional names."""
    if kind not in _FORWARD_KINDS:
        raise ValueError(f"unknown op kind {kind!r}")
    fn, arity = _FORWARD_KINDS[kind]
    operands = list(inputs)
    if len(operands) < arity and params is not None:
        for name in _PARAM_OPERANDS.get(kind, ())[len(operands) - 1:]:
            operands.append(params[name])
    if len(operands) != arity:
        raise ValueError(f"{kind} expects {arity} operands, got {len(operands)}")
    return fn(*operands, tape=tape)


# ---------------------------------------------------------------------------
# multi-head attention


def attention_core(x: Tensor, wq: Tensor, wk: Tensor, wv: Tensor, wo: Tensor,
                   heads: int, bias: np.ndarray | None = None,
                   tape: Tape | None = None) -> Tensor:
    """Scaled dot-product attention over rows of x; ``bias`` is an additive
    constant on the pre-softmax scores (used for masking and for batching
    independent sequences block-diagonally)."""
    n, d = x.data.shape
    if d % heads != 0:
        raise ValueError(f"model dim {d} not divisible by {heads} heads")
    dh = d // heads
    q = matmul(x, wq, tape)
    k = matmul(x, wk, tape)
    v = matmul(x, wv, tape)
    outs = []
    for h in range(heads):
        qh = slice_cols(q, h * dh, (h + 1) * dh, tape)
        kh = slice_cols(k, h * dh, (h + 1) * dh, tape)
        vh = slice_cols(v, h * dh, (h + 1) * dh, tape)
        scores = scale(matmul(qh, transpose(kh, tape), tape), 1.0 / np.sqrt(dh), tape)
        if bias is not None:
            scores = add_const(scores, bias, tape)
        outs.append(matmul(softmax(scores, tape), vh, tape))
    merged = outs[0] if heads == 1 else concat_cols(outs, tape)
    return matmul(merged, wo, tape)


MASKED_BIAS = -1e30


def multi_head_attention(seq: Tensor, params: ParamStore, mask=None,
                         tape: Tape | None = None, heads: int = 2,
                         prefix: str = "attn/") -> Tensor:
    """Single attention layer; ``mask[i]`` False hides position i: it gets
    zero attention weight as a key and its output row is zeroed."""
    n = seq.data.shape[0]
    if mask is None:
        mask_arr = np.ones(n, dtype=bool)
    else:
        mask_arr = np.asarray(mask, dtype=bool)
    if not mask_arr.any():
        raise ValueError("all positions masked")
    bias = None
    if not mask_arr.all():
        bias = np.where(mask_arr, 0.0, MASKED_BIAS)
    out = attention_core(seq, params[prefix + "wq"], params[prefix + "wk"],
                         params[prefix + "wv"], params[prefix + "wo"],
                         heads, bias, tape)
    if not mask_arr.all():
        out = mul_const(out, mask_arr[:, None].astype(np.float64), tape)
    return out
