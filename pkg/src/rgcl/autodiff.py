"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every trainable computation in this package runs through this module. The
design is deliberately small: a ``Tensor`` wraps a numpy float64 array and an
optional handle into a ``Tape``; ops are plain functions that compute values
eagerly and, when any operand is tracked, append a record with the local
vector-Jacobian rules. ``backward`` replays the records in reverse and
accumulates gradients wherever a node fans out.

A tape is built during a single forward pass and consumed by a single
backward pass; reusing a consumed tape is an error rather than a silent
no-op. Broadcasting is restricted to the few shapes the model actually
needs: identical shapes, a scalar against anything, and a trailing
singleton column ``[n, 1]`` against ``[n, d]`` (the attribution-weighting
pattern).
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

# Rows whose L2 norm falls below this threshold pass through l2_normalize
# unchanged (gradient treated as identity there).
NORM_EPS = 1e-12


class NumericError(RuntimeError):
    """A computation received or produced values it cannot work with."""


class Tensor:
    """A dense float64 array, optionally tracked on a tape.

    Untracked tensors behave as constants: ops on them produce untracked
    results, so the same forward code serves training and inference.
    """

    __slots__ = ("values", "tape", "node_id")

    def __init__(self, values, tape: "Tape | None" = None, node_id: int | None = None):
        self.values = np.asarray(values, dtype=np.float64)
        self.tape = tape
        self.node_id = node_id

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def item(self) -> float:
        if self.values.size != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return float(self.values.reshape(()))

    def __repr__(self) -> str:
        extra = "" if self.tape is None else f", node={self.node_id}"
        return f"Tensor(shape={self.shape}{extra})"


def const(values) -> Tensor:
    """Wrap raw values as an untracked (constant) tensor."""
    return Tensor(values)


class _Record:
    __slots__ = ("out_id", "inputs")

    def __init__(self, out_id: int, inputs: tuple):
        self.out_id = out_id
        # inputs: tuple of (input node_id, vjp callable grad_out -> grad_in)
        self.inputs = inputs


class Tape:
    """Ordered log of one forward pass, replayed once by ``backward``."""

    def __init__(self):
        self._records: list[_Record] = []
        self._shapes: dict[int, tuple[int, ...]] = {}
        self._next_id = 0
        self._consumed = False

    @property
    def consumed(self) -> bool:
        return self._consumed

    @property
    def num_records(self) -> int:
        return len(self._records)

    def leaf(self, values) -> Tensor:
        """Register an input node (typically a parameter) on this tape."""
        if self._consumed:
            raise RuntimeError("tape already consumed; build a fresh tape per forward pass")
        return self._node(np.asarray(values, dtype=np.float64))

    def _node(self, values: np.ndarray) -> Tensor:
        node_id = self._next_id
        self._next_id += 1
        self._shapes[node_id] = values.shape
        return Tensor(values, tape=self, node_id=node_id)

    def _emit(self, values: np.ndarray, parents: Sequence[tuple[Tensor, Callable]]) -> Tensor:
        if self._consumed:
            raise RuntimeError("tape already consumed; build a fresh tape per forward pass")
        out = self._node(values)
        self._records.append(
            _Record(out.node_id, tuple((t.node_id, vjp) for t, vjp in parents))
        )
        return out


class GradientStore:
    """Gradients keyed by tape node, indexable with the tensors themselves."""

    def __init__(self, tape: Tape, grads: dict[int, np.ndarray]):
        self._tape = tape
        self._grads = grads

    def __getitem__(self, t: Tensor) -> np.ndarray:
        if t.tape is not self._tape or t.node_id is None:
            raise ValueError("tensor is not tracked on this tape")
        g = self._grads.get(t.node_id)
        if g is None:
            # Reachable-from-nothing nodes (e.g. an unused parameter) get a
            # well-defined zero gradient of the right shape.
            return np.zeros(self._tape._shapes[t.node_id])
        return g


def backward(tape: Tape, loss: Tensor) -> GradientStore:
    """Reverse sweep: d(loss)/d(node) for every node on the tape.

    ``loss`` must be a scalar recorded on ``tape``. Consumes the tape; a
    second call raises rather than silently recomputing.
    """
    if loss.tape is not tape or loss.node_id is None:
        raise ValueError("loss is not tracked on this tape")
    if loss.values.size != 1:
        raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
    if tape._consumed:
        raise RuntimeError("tape already consumed by a previous backward")
    tape._consumed = True

    grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.values)}
    for rec in reversed(tape._records):
        g = grads.get(rec.out_id)
        if g is None:
            continue  # node does not influence the loss
        for node_id, vjp in rec.inputs:
            contrib = vjp(g)
            prev = grads.get(node_id)
            # accumulation at fan-in; fresh array so views are never mutated
            grads[node_id] = contrib if prev is None else prev + contrib
    return GradientStore(tape, grads)


# ---------------------------------------------------------------------------
# op plumbing


def _emit(values: np.ndarray, parents: Sequence[tuple[Tensor, Callable]]) -> Tensor:
    """Create the result tensor, recording it if any parent is tracked."""
    tracked = [(t, vjp) for t, vjp in parents if t.tape is not None]
    if not tracked:
        return Tensor(values)
    tapes = {t.tape for t, _ in tracked}
    if len(tapes) != 1:
        raise ValueError("operands are recorded on different tapes")
    return tracked[0][0].tape._emit(values, tracked)


def _check_broadcast(sa: tuple, sb: tuple) -> None:
    if sa == sb or sa == () or sb == ():
        return
    if len(sa) == 2 and len(sb) == 2 and sa[0] == sb[0] and (sa[1] == 1 or sb[1] == 1):
        return
    raise ValueError(f"unsupported broadcast between shapes {sa} and {sb}")


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum())
    return g.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# elementwise and linear-algebra ops


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a.shape, b.shape)
    out = a.values + b.values
    return _emit(out, [
        (a, lambda g, sa=a.shape: _reduce_to(g, sa)),
        (b, lambda g, sb=b.shape: _reduce_to(g, sb)),
    ])


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a.shape, b.shape)
    out = a.values - b.values
    return _emit(out, [
        (a, lambda g, sa=a.shape: _reduce_to(g, sa)),
        (b, lambda g, sb=b.shape: _reduce_to(-g, sb)),
    ])


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with the restricted broadcast rules."""
    _check_broadcast(a.shape, b.shape)
    av, bv = a.values, b.values
    out = av * bv
    return _emit(out, [
        (a, lambda g, sa=a.shape: _reduce_to(g * bv, sa)),
        (b, lambda g, sb=b.shape: _reduce_to(g * av, sb)),
    ])


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _emit(a.values * s, [(a, lambda g: g * s)])


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if len(a.shape) != 2 or len(b.shape) != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    av, bv = a.values, b.values
    return _emit(av @ bv, [
        (a, lambda g: g @ bv.T),
        (b, lambda g: av.T @ g),
    ])


def transpose(a: Tensor) -> Tensor:
    if len(a.shape) != 2:
        raise ValueError(f"transpose expects a matrix, got shape {a.shape}")
    return _emit(a.values.T.copy(), [(a, lambda g: g.T)])


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a length-d bias row to every row of an [n, d] matrix."""
    if len(x.shape) != 2 or b.shape != (x.shape[1],):
        raise ValueError(f"add_bias shape mismatch: {x.shape} + {b.shape}")
    return _emit(x.values + b.values, [
        (x, lambda g: g),
        (b, lambda g: g.sum(axis=0)),
    ])


def relu(a: Tensor) -> Tensor:
    av = a.values
    mask = av > 0.0
    # np.maximum (unlike np.where) lets NaN through, so poisoned values
    # surface as a numeric error downstream instead of vanishing
    return _emit(np.maximum(av, 0.0), [(a, lambda g: g * mask)])


def sigmoid(a: Tensor) -> Tensor:
    # Split by sign for stability at large |x|.
    av = a.values
    out = np.empty_like(av)
    pos = av >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-av[pos]))
    ex = np.exp(av[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _emit(out, [(a, lambda g: g * out * (1.0 - out))])


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.values)
    return _emit(out, [(a, lambda g: g * out)])


def log(a: Tensor) -> Tensor:
    av = a.values
    return _emit(np.log(av), [(a, lambda g: g / av)])


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp into [lo, hi]; gradient passes through inside, zero outside."""
    if not lo < hi:
        raise ValueError(f"clip requires lo < hi, got [{lo}, {hi}]")
    av = a.values
    mask = (av >= lo) & (av <= hi)
    return _emit(np.clip(av, lo, hi), [(a, lambda g: g * mask)])


def softmax(a: Tensor, axis: int = 0) -> Tensor:
    """Max-subtracted softmax along ``axis``. Rejects NaN input."""
    av = a.values
    if np.isnan(av).any():
        raise NumericError("softmax received NaN input")
    shifted = av - av.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g, out=out, axis=axis):
        return out * (g - (g * out).sum(axis=axis, keepdims=True))

    return _emit(out, [(a, vjp)])


def logsumexp(a: Tensor) -> Tensor:
    """Stable log-sum-exp over all elements, returning a scalar tensor."""
    av = a.values
    if av.size == 0:
        raise ValueError("logsumexp of an empty tensor")
    if np.isnan(av).any():
        raise NumericError("logsumexp received NaN input")
    m = av.max()
    e = np.exp(av - m)
    z = e.sum()
    out = np.asarray(m + np.log(z))

    def vjp(g, w=e / z, shape=av.shape):
        return float(g) * w.reshape(shape)

    return _emit(out, [(a, vjp)])


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _emit(np.asarray(a.values.sum()), [
        (a, lambda g: np.broadcast_to(g, shape).astype(np.float64).copy() if shape else np.asarray(g)),
    ])


# ---------------------------------------------------------------------------
# row indexing / segment ops (message passing and pooling live on these)


def gather_rows(a: Tensor, index) -> Tensor:
    """Select rows of an [n, d] matrix; duplicates allowed."""
    if len(a.shape) != 2:
        raise ValueError(f"gather_rows expects a matrix, got shape {a.shape}")
    idx = np.asarray(index, dtype=np.int64).reshape(-1)
    n = a.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ValueError(f"gather_rows index out of range for {n} rows")
    shape = a.shape

    def vjp(g, idx=idx, shape=shape):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return out

    return _emit(a.values[idx], [(a, vjp)])


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    """Stack matrices with equal column counts along axis 0."""
    if not parts:
        raise ValueError("concat_rows of an empty sequence")
    cols = {p.shape[1] for p in parts if len(p.shape) == 2}
    if len(cols) != 1 or any(len(p.shape) != 2 for p in parts):
        raise ValueError("concat_rows requires matrices with matching column counts")
    out = np.concatenate([p.values for p in parts], axis=0)
    parents = []
    offset = 0
    for p in parts:
        lo, hi = offset, offset + p.shape[0]
        parents.append((p, lambda g, lo=lo, hi=hi: g[lo:hi]))
        offset = hi
    return _emit(out, parents)


def _check_segments(values: Tensor, segment_ids, num_segments: int) -> np.ndarray:
    if len(values.shape) != 2:
        raise ValueError(f"segment ops expect [n, d] values, got shape {values.shape}")
    ids = np.asarray(segment_ids, dtype=np.int64).reshape(-1)
    if ids.shape[0] != values.shape[0]:
        raise ValueError("segment_ids length must match the number of rows")
    if ids.size and (ids.min() < 0 or ids.max() >= num_segments):
        raise ValueError(f"segment id out of range for {num_segments} segments")
    return ids


def segment_sum(values: Tensor, segment_ids, num_segments: int) -> Tensor:
    """Row s of the result is the sum of rows with segment id s (zeros if none)."""
    ids = _check_segments(values, segment_ids, num_segments)
    out = np.zeros((num_segments, values.shape[1]))
    np.add.at(out, ids, values.values)
    return _emit(out, [(values, lambda g, ids=ids: g[ids])])


def segment_mean(values: Tensor, segment_ids, num_segments: int) -> Tensor:
    """Per-segment mean; empty segments yield zero rows."""
    ids = _check_segments(values, segment_ids, num_segments)
    counts = np.bincount(ids, minlength=num_segments).astype(np.float64)
    denom = np.maximum(counts, 1.0)[:, None]
    out = np.zeros((num_segments, values.shape[1]))
    np.add.at(out, ids, values.values)
    out /= denom

    def vjp(g, ids=ids, denom=denom):
        return g[ids] / denom[ids]

    return _emit(out, [(values, vjp)])


def l2_normalize(a: Tensor) -> Tensor:
    """Normalize each row to unit L2 norm; rows below NORM_EPS pass through."""
    if len(a.shape) != 2:
        raise ValueError(f"l2_normalize expects a matrix, got shape {a.shape}")
    av = a.values
    norms = np.sqrt((av * av).sum(axis=1, keepdims=True))
    small = norms < NORM_EPS
    safe = np.where(small, 1.0, norms)
    out = np.where(small, av, av / safe)

    def vjp(g, out=out, safe=safe, small=small):
        dots = (g * out).sum(axis=1, keepdims=True)
        gx = (g - out * dots) / safe
        return np.where(small, g, gx)

    return _emit(out, [(a, vjp)])
