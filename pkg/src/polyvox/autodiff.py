"""Reverse-mode automatic differentiation over dense float64 tensors.

Define-by-run: while a :class:`Tape` is active, every operation whose inputs
are tracked records a node with a backward rule. The tape is rebuilt each
training step. Node creation order is a topological order, so ``backward``
walks nodes in strictly decreasing creation order.

Conventions fixed here:
  * float64 everywhere;
  * conv1d uses cross-correlation (no kernel flip) with zero same-padding;
  * elementwise binary ops broadcast only over a leading batch axis
    (use :func:`expand` for anything else);
  * LSTM gate order is (i, f, g, o).
"""

from __future__ import annotations

import hashlib
from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels

DTYPE = np.float64


class ContractError(ValueError):
    """An operation was called outside its contract (shapes, modes, ranges)."""


class ConfigError(ValueError):
    """A configuration value is invalid or inconsistent."""


class DomainError(ValueError):
    """A numeric input is outside the mathematical domain of the op."""


# ---------------------------------------------------------------------------
# Seeded RNG
# ---------------------------------------------------------------------------


class SeededRng:
    """Deterministic random stream (PCG64). Identical seeds give identical
    streams across runs and platforms.

    ``child(*tags)`` derives an independent stream from the same seed; tags
    are hashed with SHA-256 so derivation is platform-stable.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def child(self, *tags) -> "SeededRng":
        h = hashlib.sha256(repr((self.seed,) + tuple(tags)).encode())
        return SeededRng(int.from_bytes(h.digest()[:8], "little"))

    def normal(self, shape, scale=1.0):
        return self._gen.normal(0.0, scale, size=shape).astype(DTYPE)

    def uniform(self, shape, low=0.0, high=1.0):
        return self._gen.uniform(low, high, size=shape).astype(DTYPE)

    def integers(self, low, high, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def choice(self, items, size=None, replace=True):
        return self._gen.choice(items, size=size, replace=replace)

    def shuffle(self, seq: list):
        self._gen.shuffle(seq)


# ---------------------------------------------------------------------------
# Tensor and tape
# ---------------------------------------------------------------------------

_ACTIVE_TAPE: Optional["Tape"] = None


class Tensor:
    """Dense float64 array with optional gradient and tape linkage."""

    __slots__ = ("data", "requires_grad", "grad", "node_id", "tape", "_slot")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.node_id: Optional[int] = None
        self.tape: Optional["Tape"] = None
        self._slot = 0

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE, copy=True)
        else:
            self.grad += g

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar (kept thin; the functional ops do the work)
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)


class Tape:
    """Ordered record of operations; creation order is topological order."""

    def __init__(self):
        self.nodes: list[tuple[tuple[Tensor, ...], tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise ContractError("nested tapes are not supported")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def _record(self, outputs, parents, backward_fn):
        nid = len(self.nodes)
        self.nodes.append((outputs, parents, backward_fn))
        for slot, out in enumerate(outputs):
            out.node_id = nid
            out.tape = self
            out._slot = slot


def active_tape() -> Optional[Tape]:
    return _ACTIVE_TAPE


def _tracked(t: Tensor) -> bool:
    return t.requires_grad or (t.tape is _ACTIVE_TAPE and t.node_id is not None)


def _maybe_record(out, parents, backward_fn) -> None:
    """Record on the active tape if any parent participates in the graph.

    ``backward_fn(grads_out) -> tuple`` returns one gradient array (or None)
    per parent, aligned with ``parents``. ``grads_out`` is a tuple with one
    array per output (never None; unused outputs get zeros).
    """
    tape = _ACTIVE_TAPE
    if tape is None:
        return
    if not any(_tracked(p) for p in parents):
        return
    outputs = out if isinstance(out, tuple) else (out,)
    tape._record(outputs, tuple(parents), backward_fn)


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires_grad leaf reachable from ``loss``.

    Repeated calls without clearing grads accumulate.
    """
    if loss.data.size != 1:
        raise ContractError(
            f"backward requires a scalar loss, got shape {loss.data.shape}"
        )
    tape = loss.tape
    if tape is None or loss.node_id is None:
        raise ContractError("loss is not recorded on a tape")
    grads: dict[int, list[Optional[np.ndarray]]] = {}
    grads[loss.node_id] = [None] * len(tape.nodes[loss.node_id][0])
    grads[loss.node_id][loss._slot] = np.ones_like(loss.data)
    for nid in range(loss.node_id, -1, -1):
        slot_grads = grads.pop(nid, None)
        if slot_grads is None:
            continue
        outputs, parents, backward_fn = tape.nodes[nid]
        gout = tuple(
            g if g is not None else np.zeros_like(o.data)
            for g, o in zip(slot_grads, outputs)
        )
        parent_grads = backward_fn(gout)
        for p, g in zip(parents, parent_grads):
            if g is None:
                continue
            if p.tape is tape and p.node_id is not None and p.node_id < nid:
                bucket = grads.setdefault(p.node_id, [None] * len(tape.nodes[p.node_id][0]))
                if bucket[p._slot] is None:
                    bucket[p._slot] = np.array(g, dtype=DTYPE, copy=True)
                else:
                    bucket[p._slot] += g
            elif p.requires_grad:
                p.accumulate_grad(g)


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _binary_broadcast(name, a: Tensor, b: Tensor):
    """Validate elementwise shapes: equal, scalar, or leading-axis broadcast.

    Returns (reduce_a, reduce_b): how to reduce an output-shaped gradient
    back onto each operand (None = no reduction needed).
    """
    sa, sb = a.data.shape, b.data.shape
    if sa == sb:
        return None, None
    if b.data.size == 1 and b.data.ndim == 0:
        return None, "full"
    if a.data.size == 1 and a.data.ndim == 0:
        return "full", None
    if sb == sa[1:]:
        return None, "lead"
    if sa == sb[1:]:
        return "lead", None
    raise ContractError(f"{name}: shapes {sa} and {sb} are not conformable")


def _reduce_grad(g: np.ndarray, how):
    if how is None:
        return g
    if how == "full":
        return g.sum()
    return g.sum(axis=0)


# ---------------------------------------------------------------------------
# Elementary ops
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ra, rb = _binary_broadcast("add", a, b)
    out = Tensor(a.data + b.data)
    _maybe_record(
        out,
        (a, b),
        lambda gs: (_reduce_grad(gs[0], ra), _reduce_grad(gs[0], rb)),
    )
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ra, rb = _binary_broadcast("sub", a, b)
    out = Tensor(a.data - b.data)
    _maybe_record(
        out,
        (a, b),
        lambda gs: (_reduce_grad(gs[0], ra), _reduce_grad(-gs[0], rb)),
    )
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ra, rb = _binary_broadcast("mul", a, b)
    out = Tensor(a.data * b.data)
    _maybe_record(
        out,
        (a, b),
        lambda gs: (
            _reduce_grad(gs[0] * b.data, ra),
            _reduce_grad(gs[0] * a.data, rb),
        ),
    )
    return out


def scale(a, s: float) -> Tensor:
    a = as_tensor(a)
    s = float(s)
    out = Tensor(a.data * s)
    _maybe_record(out, (a,), lambda gs: (gs[0] * s,))
    return out


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    da, db = a.data, b.data
    if da.ndim < 2 or db.ndim < 2:
        raise ContractError(
            f"matmul: operands must be >= 2-D, got {da.shape} @ {db.shape}"
        )
    if da.shape[-1] != db.shape[-2]:
        raise ContractError(f"matmul: inner dims differ, {da.shape} @ {db.shape}")
    if db.ndim > 2 and da.shape[:-2] != db.shape[:-2]:
        raise ContractError(f"matmul: batch dims differ, {da.shape} @ {db.shape}")
    out = Tensor(np.matmul(da, db))

    def bwd(gs):
        g = gs[0]
        ga = np.matmul(g, np.swapaxes(db, -1, -2))
        if db.ndim == 2 and da.ndim > 2:
            gb = np.matmul(
                da.reshape(-1, da.shape[-1]).T, g.reshape(-1, g.shape[-1])
            )
        else:
            gb = np.matmul(np.swapaxes(da, -1, -2), g)
        return ga, gb

    _maybe_record(out, (a, b), bwd)
    return out


def affine(x, w, b=None) -> Tensor:
    """Fused ``x @ w + b`` with b broadcast over leading axes."""
    x, w = as_tensor(x), as_tensor(w)
    xd, wd = x.data, w.data
    if xd.shape[-1] != wd.shape[0] or wd.ndim != 2:
        raise ContractError(f"affine: shapes {xd.shape} @ {wd.shape}")
    y = np.matmul(xd, wd)
    if b is None:
        out = Tensor(y)

        def bwd(gs):
            g = gs[0]
            gx = np.matmul(g, wd.T)
            gw = np.matmul(xd.reshape(-1, xd.shape[-1]).T, g.reshape(-1, g.shape[-1]))
            return gx, gw

        _maybe_record(out, (x, w), bwd)
        return out
    b = as_tensor(b)
    if b.data.shape != (wd.shape[1],):
        raise ContractError(f"affine: bias shape {b.data.shape} vs {wd.shape}")
    out = Tensor(y + b.data)

    def bwd_b(gs):
        g = gs[0]
        gx = np.matmul(g, wd.T)
        g2 = g.reshape(-1, g.shape[-1])
        gw = np.matmul(xd.reshape(-1, xd.shape[-1]).T, g2)
        return gx, gw, g2.sum(axis=0)

    _maybe_record(out, (x, w, b), bwd_b)
    return out


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("concat: empty input list")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(gs):
        return tuple(np.array_split(gs[0], splits, axis=axis))

    _maybe_record(out, tuple(tensors), bwd)
    return out


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("stack: empty input list")
    out = Tensor(np.stack([t.data for t in tensors], axis=axis))

    def bwd(gs):
        return tuple(np.moveaxis(gs[0], axis, 0))

    _maybe_record(out, tuple(tensors), bwd)
    return out


def slice_(x, key) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data[key])

    def bwd(gs):
        gx = np.zeros_like(x.data)
        np.add.at(gx, key, gs[0])
        return (gx,)

    _maybe_record(out, (x,), bwd)
    return out


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data.reshape(shape))
    _maybe_record(out, (x,), lambda gs: (gs[0].reshape(x.data.shape),))
    return out


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = Tensor(np.ascontiguousarray(x.data.transpose(axes)))
    _maybe_record(out, (x,), lambda gs: (gs[0].transpose(inv),))
    return out


def expand(x, axis: int, n: int) -> Tensor:
    """Repeat a size-1 axis n times (explicit broadcast with summed backward)."""
    x = as_tensor(x)
    if x.data.shape[axis] != 1:
        raise ContractError(f"expand: axis {axis} of {x.data.shape} is not size 1")
    reps = [1] * x.data.ndim
    reps[axis] = n
    out = Tensor(np.tile(x.data, reps))
    _maybe_record(out, (x,), lambda gs: (gs[0].sum(axis=axis, keepdims=True),))
    return out


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    d = x.data
    y = np.empty_like(d)
    pos = d >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    y[~pos] = ex / (1.0 + ex)
    out = Tensor(y)
    _maybe_record(out, (x,), lambda gs: (gs[0] * y * (1.0 - y),))
    return out


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    out = Tensor(y)
    _maybe_record(out, (x,), lambda gs: (gs[0] * (1.0 - y * y),))
    return out


def relu(x) -> Tensor:
    x = as_tensor(x)
    y = np.maximum(x.data, 0.0)
    out = Tensor(y)
    _maybe_record(out, (x,), lambda gs: (gs[0] * (x.data > 0),))
    return out


def exp(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data > 709.0):
        raise DomainError("exp: input exceeds float64 range (max 709)")
    y = np.exp(x.data)
    out = Tensor(y)
    _maybe_record(out, (x,), lambda gs: (gs[0] * y,))
    return out


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def bwd(gs):
        g = gs[0]
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    _maybe_record(out, (x,), bwd)
    return out


def masked_softmax(x, mask: np.ndarray, axis: int = -1) -> Tensor:
    """Softmax over positions where mask is truthy; masked positions get 0."""
    x = as_tensor(x)
    m = np.asarray(mask, dtype=bool)
    if m.shape != x.data.shape:
        raise ContractError(
            f"masked_softmax: mask shape {m.shape} vs input {x.data.shape}"
        )
    if not m.any(axis=axis).all():
        raise ContractError("masked_softmax: a row is fully masked")
    neg = np.where(m, x.data, -np.inf)
    z = neg - neg.max(axis=axis, keepdims=True)
    e = np.exp(z, where=np.isfinite(z), out=np.zeros_like(z))
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def bwd(gs):
        g = gs[0]
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    _maybe_record(out, (x,), bwd)
    return out


def embedding_lookup(table, ids) -> Tensor:
    table = as_tensor(table)
    idx = np.asarray(ids)
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise ContractError(
            f"embedding_lookup: id out of range [0, {table.data.shape[0]})"
        )
    out = Tensor(table.data[idx])

    def bwd(gs):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, gs[0])
        return (gt,)

    _maybe_record(out, (table,), bwd)
    return out


def sum_(x, axis=None) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.sum(x.data, axis=axis))

    def bwd(gs):
        g = gs[0]
        if axis is None:
            return (np.full_like(x.data, float(g)),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.data.shape).copy(),)

    _maybe_record(out, (x,), bwd)
    return out


def mean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.mean(x.data, axis=axis))
    if axis is None:
        n = x.data.size
    elif isinstance(axis, tuple):
        n = int(np.prod([x.data.shape[a] for a in axis]))
    else:
        n = x.data.shape[axis]

    def bwd(gs):
        g = gs[0]
        if axis is None:
            return (np.full_like(x.data, float(g) / n),)
        return (np.broadcast_to(np.expand_dims(g / n, axis), x.data.shape).copy(),)

    _maybe_record(out, (x,), bwd)
    return out


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def mse_loss(pred, target, mask: Optional[np.ndarray] = None) -> Tensor:
    """Mean squared error over unmasked elements.

    ``mask`` (if given) has pred's leading dims; trailing feature dims are
    all kept or dropped together.
    """
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.data.shape != target.data.shape:
        raise ContractError(
            f"mse_loss: shapes {pred.data.shape} vs {target.data.shape}"
        )
    diff = pred.data - target.data
    if mask is None:
        denom = diff.size
        out = Tensor(np.array(np.sum(diff * diff) / denom))
        _maybe_record(out, (pred, target), lambda gs: (
            gs[0] * 2.0 * diff / denom, gs[0] * (-2.0) * diff / denom))
        return out
    m = np.asarray(mask, dtype=DTYPE)
    while m.ndim < diff.ndim:
        m = m[..., None]
    denom = float(np.broadcast_to(m, diff.shape).sum())
    if denom == 0:
        raise ContractError("mse_loss: mask excludes every element")
    md = diff * m
    out = Tensor(np.array(np.sum(md * diff) / denom))
    _maybe_record(out, (pred, target), lambda gs: (
        gs[0] * 2.0 * md / denom, gs[0] * (-2.0) * md / denom))
    return out


def binary_cross_entropy(probs, target) -> Tensor:
    """BCE on probabilities; inputs must lie strictly inside (0, 1)."""
    probs, target = as_tensor(probs), as_tensor(target)
    p, t = probs.data, np.asarray(target.data, dtype=DTYPE)
    if p.shape != t.shape:
        raise ContractError(f"binary_cross_entropy: shapes {p.shape} vs {t.shape}")
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        raise DomainError("binary_cross_entropy: probabilities must be in (0, 1)")
    n = p.size
    out = Tensor(np.array(-(t * np.log(p) + (1 - t) * np.log1p(-p)).sum() / n))
    _maybe_record(
        out, (probs,), lambda gs: (gs[0] * ((p - t) / (p * (1 - p))) / n,)
    )
    return out


def bce_with_logits(
    logits, target, pos_weight: float = 1.0, mask: Optional[np.ndarray] = None
) -> Tensor:
    """Numerically stable BCE from logits, mean over unmasked positions."""
    logits = as_tensor(logits)
    z = logits.data
    t = np.asarray(target, dtype=DTYPE)
    if z.shape != t.shape:
        raise ContractError(f"bce_with_logits: shapes {z.shape} vs {t.shape}")
    m = np.ones_like(z) if mask is None else np.asarray(mask, dtype=DTYPE)
    denom = float(m.sum())
    if denom == 0:
        raise ContractError("bce_with_logits: mask excludes every element")
    softplus = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
    # softplus(-z) = softplus(z) - z
    per = pos_weight * t * (softplus - z) + (1.0 - t) * softplus
    out = Tensor(np.array((per * m).sum() / denom))

    def bwd(gs):
        sig = np.empty_like(z)
        pos = z >= 0
        sig[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        sig[~pos] = ez / (1.0 + ez)
        g = (pos_weight * t * (sig - 1.0) + (1.0 - t) * sig) * m / denom
        return (gs[0] * g,)

    _maybe_record(out, (logits,), bwd)
    return out


def cross_entropy_with_logits(
    logits, labels, mask: Optional[np.ndarray] = None
) -> Tensor:
    """Mean cross-entropy of integer labels given logits over the last axis."""
    logits = as_tensor(logits)
    z = logits.data
    lab = np.asarray(labels)
    if lab.shape != z.shape[:-1]:
        raise ContractError(
            f"cross_entropy_with_logits: labels {lab.shape} vs logits {z.shape}"
        )
    s = z.shape[-1]
    if lab.size and (lab.min() < 0 or lab.max() >= s):
        raise ContractError(f"cross_entropy_with_logits: label out of range [0, {s})")
    m = np.ones(lab.shape, dtype=DTYPE) if mask is None else np.asarray(mask, dtype=DTYPE)
    denom = float(m.sum())
    if denom == 0:
        raise ContractError("cross_entropy_with_logits: mask excludes every element")
    zmax = z.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z - zmax).sum(axis=-1)) + zmax[..., 0]
    picked = np.take_along_axis(z, lab[..., None], axis=-1)[..., 0]
    out = Tensor(np.array(((lse - picked) * m).sum() / denom))

    def bwd(gs):
        p = np.exp(z - zmax)
        p /= p.sum(axis=-1, keepdims=True)
        onehot = np.zeros_like(z)
        np.put_along_axis(onehot, lab[..., None], 1.0, axis=-1)
        return (gs[0] * (p - onehot) * (m / denom)[..., None],)

    _maybe_record(out, (logits,), bwd)
    return out


# ---------------------------------------------------------------------------
# Structured ops
# ---------------------------------------------------------------------------


def conv1d_grouped(x, w, bias, groups: int = 1) -> Tensor:
    """Grouped 1-D convolution (cross-correlation), zero same-padding.

    x: [B, C_in, T]; w: [C_out, C_in/groups, k] with k odd; bias: [C_out].
    Output channel block g reads only input channel block g.
    """
    x, w = as_tensor(x), as_tensor(w)
    bias = as_tensor(bias) if bias is not None else None
    if x.data.ndim != 3 or w.data.ndim != 3:
        raise ContractError(
            f"conv1d_grouped: need x[B,C,T] and w[O,C/g,k], got {x.data.shape}, {w.data.shape}"
        )
    b, c_in, t = x.data.shape
    c_out, c_in_g, k = w.data.shape
    if k % 2 != 1:
        raise ConfigError(f"conv1d_grouped: kernel size {k} must be odd")
    if c_in % groups or c_out % groups:
        raise ConfigError(
            f"conv1d_grouped: channels ({c_in} in, {c_out} out) not divisible by groups={groups}"
        )
    if c_in_g != c_in // groups:
        raise ContractError(
            f"conv1d_grouped: weight expects {c_in_g} in-channels per group, input has {c_in // groups}"
        )
    if bias is not None and bias.data.shape != (c_out,):
        raise ContractError(f"conv1d_grouped: bias shape {bias.data.shape} vs ({c_out},)")
    pad = (k - 1) // 2
    x_pad = np.zeros((b, c_in, t + k - 1), dtype=DTYPE)
    x_pad[:, :, pad : pad + t] = x.data
    bias_arr = bias.data if bias is not None else np.zeros(c_out, dtype=DTYPE)
    out = Tensor(kernels.conv1d_forward(x_pad, w.data, bias_arr, groups))

    def bwd(gs):
        dx_pad, dw, db = kernels.conv1d_backward(x_pad, w.data, gs[0], groups)
        dx = dx_pad[:, :, pad : pad + t]
        if bias is None:
            return dx, dw
        return dx, dw, db

    parents = (x, w) if bias is None else (x, w, bias)
    _maybe_record(out, parents, bwd)
    return out


class BatchNormState:
    """Running statistics for one batch-norm site."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.running_mean = np.zeros(channels, dtype=DTYPE)
        self.running_var = np.ones(channels, dtype=DTYPE)
        self.initialized = False

    def copy(self) -> "BatchNormState":
        s = BatchNormState(self.channels, self.momentum, self.eps)
        s.running_mean = self.running_mean.copy()
        s.running_var = self.running_var.copy()
        s.initialized = self.initialized
        return s


def batch_norm_1d(
    x, gamma, beta, state: BatchNormState, mode: str,
    mask: Optional[np.ndarray] = None,
) -> Tensor:
    """Per-channel batch norm over (B, T) for x of shape [B, C, T].

    Train mode normalizes with the biased batch variance and updates running
    stats (unbiased variance) with the state's momentum. Eval mode uses the
    running stats. ``mask`` ([B, T] or [B, C, T]) limits statistics to real
    positions.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.data.ndim != 3:
        raise ContractError(f"batch_norm_1d: need [B, C, T], got {x.data.shape}")
    b, c, t = x.data.shape
    if state.channels != c or gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ConfigError(
            f"batch_norm_1d: channel mismatch (x has {c}, state {state.channels}, "
            f"gamma {gamma.data.shape}, beta {beta.data.shape})"
        )
    if mode not in ("train", "eval"):
        raise ConfigError(f"batch_norm_1d: unknown mode {mode!r}")
    eps = state.eps

    if mode == "eval":
        if not state.initialized:
            raise ContractError("batch_norm_1d: eval before any train update")
        inv = 1.0 / np.sqrt(state.running_var + eps)
        xhat = (x.data - state.running_mean[None, :, None]) * inv[None, :, None]
        out = Tensor(gamma.data[None, :, None] * xhat + beta.data[None, :, None])

        def bwd_eval(gs):
            g = gs[0]
            gx = g * (gamma.data * inv)[None, :, None]
            return gx, (g * xhat).sum(axis=(0, 2)), g.sum(axis=(0, 2))

        _maybe_record(out, (x, gamma, beta), bwd_eval)
        return out

    if mask is None:
        m = np.ones((b, 1, t), dtype=DTYPE)
    else:
        m = np.asarray(mask, dtype=DTYPE)
        if m.ndim == 2:
            m = m[:, None, :]
        if m.shape not in ((b, 1, t), (b, c, t)):
            raise ContractError(f"batch_norm_1d: mask shape {m.shape} vs x {x.data.shape}")
    counts = np.broadcast_to(m, (b, c, t)).sum(axis=(0, 2))
    if counts.min() < 2:
        raise ContractError("batch_norm_1d: train mode needs >= 2 values per channel")
    mu = (x.data * m).sum(axis=(0, 2)) / counts
    diff = (x.data - mu[None, :, None]) * m
    var = (diff * diff).sum(axis=(0, 2)) / counts
    inv = 1.0 / np.sqrt(var + eps)
    xhat = diff * inv[None, :, None]
    out = Tensor(gamma.data[None, :, None] * xhat + beta.data[None, :, None])

    mom = state.momentum
    unbiased = var * counts / np.maximum(counts - 1.0, 1.0)
    if state.initialized:
        state.running_mean = (1 - mom) * state.running_mean + mom * mu
        state.running_var = (1 - mom) * state.running_var + mom * unbiased
    else:
        state.running_mean = mu.copy()
        state.running_var = unbiased.copy()
        state.initialized = True

    def bwd_train(gs):
        g = gs[0] * m
        sum_g = g.sum(axis=(0, 2))
        sum_gx = (g * xhat).sum(axis=(0, 2))
        gx = (gamma.data * inv)[None, :, None] * (
            g
            - (sum_g / counts)[None, :, None] * m
            - xhat * (sum_gx / counts)[None, :, None]
        )
        return gx, sum_gx, sum_g

    _maybe_record(out, (x, gamma, beta), bwd_train)
    return out


def dropout(x, rate: float, rng: SeededRng, mode: str) -> Tensor:
    """Inverted dropout: train zeroes with probability rate and rescales
    survivors by 1/(1-rate); eval is the identity."""
    x = as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout: rate {rate} outside [0, 1)")
    if mode not in ("train", "eval"):
        raise ConfigError(f"dropout: unknown mode {mode!r}")
    if mode == "eval" or rate == 0.0:
        out = Tensor(x.data)
        _maybe_record(out, (x,), lambda gs: (gs[0],))
        return out
    keep = (rng.uniform(x.data.shape) >= rate).astype(DTYPE) / (1.0 - rate)
    out = Tensor(x.data * keep)
    _maybe_record(out, (x,), lambda gs: (gs[0] * keep,))
    return out


def lstm_cell(x, h, c, w, b) -> tuple[Tensor, Tensor]:
    """One LSTM step. Gate order (i, f, g, o); w: [I+H, 4H]; b: [4H].

    i, f, o pass through sigmoid, the candidate g through tanh:
    c' = f*c + i*g; h' = o*tanh(c').
    """
    x, h, c, w, b = as_tensor(x), as_tensor(h), as_tensor(c), as_tensor(w), as_tensor(b)
    bsz, i_dim = x.data.shape
    hsz = h.data.shape[1]
    if h.data.shape != (bsz, hsz) or c.data.shape != (bsz, hsz):
        raise ContractError(
            f"lstm_cell: state shapes {h.data.shape}, {c.data.shape} vs batch {bsz}"
        )
    if w.data.shape != (i_dim + hsz, 4 * hsz) or b.data.shape != (4 * hsz,):
        raise ContractError(
            f"lstm_cell: weight {w.data.shape}, bias {b.data.shape} inconsistent "
            f"with input {i_dim} and hidden {hsz}"
        )
    xh = np.concatenate([x.data, h.data], axis=1)
    z = xh @ w.data + b.data
    zi, zf, zg, zo = np.split(z, 4, axis=1)

    def sig(v):
        outv = np.empty_like(v)
        p = v >= 0
        outv[p] = 1.0 / (1.0 + np.exp(-v[p]))
        e = np.exp(v[~p])
        outv[~p] = e / (1.0 + e)
        return outv

    gi, gf, go = sig(zi), sig(zf), sig(zo)
    gg = np.tanh(zg)
    c_new = gf * c.data + gi * gg
    tc = np.tanh(c_new)
    h_new = go * tc
    h_out, c_out = Tensor(h_new), Tensor(c_new)

    def bwd(gs):
        dh, dc_up = gs
        dc = dc_up + dh * go * (1.0 - tc * tc)
        d_zo = dh * tc * go * (1.0 - go)
        d_zi = dc * gg * gi * (1.0 - gi)
        d_zf = dc * c.data * gf * (1.0 - gf)
        d_zg = dc * gi * (1.0 - gg * gg)
        dz = np.concatenate([d_zi, d_zf, d_zg, d_zo], axis=1)
        dxh = dz @ w.data.T
        dw = xh.T @ dz
        db = dz.sum(axis=0)
        return dxh[:, :i_dim], dxh[:, i_dim:], dc * gf, dw, db

    _maybe_record((h_out, c_out), (x, h, c, w, b), bwd)
    return h_out, c_out


def gradient_reverse(x, lam: float) -> Tensor:
    """Identity forward; backward multiplies the upstream gradient by -lam."""
    x = as_tensor(x)
    if lam < 0:
        raise ConfigError(f"gradient_reverse: lambda {lam} must be >= 0")
    out = Tensor(x.data)
    _maybe_record(out, (x,), lambda gs: (gs[0] * (-lam),))
    return out


def clamp_grad(x, bound: float) -> Tensor:
    """Identity forward; backward clamps the gradient elementwise to
    [-bound, bound]."""
    x = as_tensor(x)
    if bound <= 0:
        raise ConfigError(f"clamp_grad: bound {bound} must be positive")
    out = Tensor(x.data)
    if np.isinf(bound):
        _maybe_record(out, (x,), lambda gs: (gs[0],))
    else:
        _maybe_record(out, (x,), lambda gs: (np.clip(gs[0], -bound, bound),))
    return out
