"""Dense float64 tensors with reverse-mode differentiation on an explicit tape.

Every operation appends a node (parent ids + local-gradient closure) to the
owning Tape; creation order is a topological order, so backward() is a single
reverse sweep that visits each reachable node exactly once. Gradients
accumulate into Parameter.grad; callers zero them between steps.
"""

from __future__ import annotations

import itertools

import numpy as np


class ShapeMismatch(ValueError):
    def __init__(self, op: str, a, b):
        super().__init__(f"{op}: incompatible shapes {tuple(a)} and {tuple(b)}")


class NonScalarLoss(ValueError):
    pass


_param_ids = itertools.count()


class Parameter:
    """A trainable array with an accumulating gradient and a unique id."""

    __slots__ = ("value", "grad", "id")

    def __init__(self, value, pid: int | None = None):
        self.value = np.array(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.id = next(_param_ids) if pid is None else int(pid)

    def zero_grad(self):
        self.grad.fill(0.0)

    def __repr__(self):
        return f"Parameter(id={self.id}, shape={self.value.shape})"


class _Node:
    __slots__ = ("parents", "backward", "sink")

    def __init__(self, parents, backward, sink):
        self.parents = parents
        self.backward = backward
        self.sink = sink


class Tape:
    """Recorded computation; one tape per training step, one owner thread."""

    def __init__(self):
        self._nodes: list[_Node] = []
        self._leaves: dict[int, Tensor] = {}

    def record(self, data, parents, backward, sink=None) -> "Tensor":
        """Append a node and return its output tensor.

        `backward` maps the output gradient to one gradient (or None) per
        parent; it is the extension point for custom operations.
        """
        for p in parents:
            if p.tape is not self:
                raise ValueError("tensors from different tapes cannot be combined")
        node = _Node(tuple(p.node for p in parents), backward, sink)
        self._nodes.append(node)
        return Tensor(np.asarray(data, dtype=np.float64), self, len(self._nodes) - 1)

    def const(self, data) -> "Tensor":
        return self.record(data, (), None)

    def leaf(self, param: Parameter) -> "Tensor":
        """A graph input whose gradient accumulates into param.grad."""
        t = self._leaves.get(param.id)
        if t is None:
            t = self.record(param.value, (), None, sink=param)
            self._leaves[param.id] = t
        return t


class Tensor:
    __slots__ = ("data", "tape", "node")

    def __init__(self, data, tape, node):
        self.data = data
        self.tape = tape
        self.node = node

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    def _lift(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return self.tape.const(np.asarray(other, dtype=np.float64))

    # ---- elementwise arithmetic ----

    def __add__(self, other):
        b = self._lift(other)
        if self.shape == b.shape:
            return self.tape.record(
                self.data + b.data, (self, b), lambda g: (g, g)
            )
        if len(self.shape) == 2 and b.shape == (self.shape[1],):  # bias row broadcast
            return self.tape.record(
                self.data + b.data, (self, b), lambda g: (g, g.sum(axis=0))
            )
        raise ShapeMismatch("add", self.shape, b.shape)

    __radd__ = __add__

    def __sub__(self, other):
        b = self._lift(other)
        if self.shape != b.shape:
            raise ShapeMismatch("sub", self.shape, b.shape)
        return self.tape.record(self.data - b.data, (self, b), lambda g: (g, -g))

    def __rsub__(self, other):
        return self._lift(other).__sub__(self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            c = float(other)
            return self.tape.record(self.data * c, (self,), lambda g: (g * c,))
        b = self._lift(other)
        if self.shape != b.shape:
            raise ShapeMismatch("mul", self.shape, b.shape)
        a_data, b_data = self.data, b.data
        return self.tape.record(
            a_data * b_data, (self, b), lambda g: (g * b_data, g * a_data)
        )

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __matmul__(self, other):
        b = self._lift(other)
        if len(self.shape) != 2 or len(b.shape) != 2 or self.shape[1] != b.shape[0]:
            raise ShapeMismatch("matmul", self.shape, b.shape)
        a_data, b_data = self.data, b.data
        return self.tape.record(
            a_data @ b_data,
            (self, b),
            lambda g: (g @ b_data.T, a_data.T @ g),
        )

    # ---- elementwise nonlinearities ----

    def relu(self):
        mask = self.data > 0
        return self.tape.record(self.data * mask, (self,), lambda g: (g * mask,))

    def sigmoid(self):
        s = 1.0 / (1.0 + np.exp(-self.data))
        return self.tape.record(s, (self,), lambda g: (g * s * (1.0 - s),))

    def tanh(self):
        t = np.tanh(self.data)
        return self.tape.record(t, (self,), lambda g: (g * (1.0 - t * t),))

    def exp(self):
        e = np.exp(self.data)
        return self.tape.record(e, (self,), lambda g: (g * e,))

    def log(self):
        x = self.data
        return self.tape.record(np.log(x), (self,), lambda g: (g / x,))

    # ---- shape ----

    def reshape(self, shape):
        old = self.data.shape
        return self.tape.record(
            self.data.reshape(shape), (self,), lambda g: (g.reshape(old),)
        )

    def transpose(self):
        if len(self.shape) != 2:
            raise ShapeMismatch("transpose", self.shape, self.shape)
        return self.tape.record(self.data.T, (self,), lambda g: (g.T,))

    # ---- reductions ----

    def sum(self):
        shape = self.data.shape
        return self.tape.record(
            self.data.sum(), (self,), lambda g: (np.broadcast_to(g, shape).copy(),)
        )

    def mean(self):
        shape = self.data.shape
        n = self.data.size
        return self.tape.record(
            self.data.mean(), (self,), lambda g: (np.broadcast_to(g / n, shape).copy(),)
        )

    def mean_rows(self):
        """Column means of a 2-d tensor: (n, d) -> (d,)."""
        if len(self.shape) != 2:
            raise ShapeMismatch("mean_rows", self.shape, self.shape)
        n = self.shape[0]
        return self.tape.record(
            self.data.mean(axis=0),
            (self,),
            lambda g: (np.broadcast_to(g / n, (n, len(g))).copy(),),
        )


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ValueError("concat of no tensors")
    tape = tensors[0].tape
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return tape.record(
        np.concatenate([t.data for t in tensors], axis=axis), tensors, backward
    )


def gather_cols(t: Tensor, idx) -> Tensor:
    """Differentiable column gather: (n, K) -> (n, len(idx))."""
    idx = np.asarray(idx, dtype=np.int64)
    n, k = t.data.shape

    def backward(g):
        full = np.zeros((n, k))
        np.add.at(full, (slice(None), idx), g)
        return (full,)

    return t.tape.record(t.data[:, idx], (t,), backward)


def mse(a: Tensor, b) -> Tensor:
    """Mean squared error over all elements; either side may be constant."""
    b = a._lift(b)
    if a.shape != b.shape:
        raise ShapeMismatch("mse", a.shape, b.shape)
    diff = a.data - b.data
    n = max(diff.size, 1)

    def backward(g):
        d = (2.0 / n) * diff * g
        return (d, -d)

    return a.tape.record(np.mean(diff * diff) if diff.size else 0.0, (a, b), backward)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy of integer labels under softmax(logits).

    logits is (n, K); labels is an (n,) integer array (a single int and a
    (K,) logit vector are also accepted).
    """
    t = logits
    if len(t.shape) == 1:
        t = t.reshape((1, -1))
        labels = [labels]
    labels = np.asarray(labels, dtype=np.int64)
    n, k = t.data.shape
    if labels.shape != (n,):
        raise ShapeMismatch("softmax_cross_entropy", t.data.shape, labels.shape)
    if (labels < 0).any() or (labels >= k).any():
        raise ValueError("label outside logit range")
    logp = _log_softmax(t.data)
    loss = -logp[np.arange(n), labels].mean()

    def backward(g):
        grad = np.exp(logp)
        grad[np.arange(n), labels] -= 1.0
        return (grad * (g / n),)

    return t.tape.record(loss, (t,), backward)


def soft_cross_entropy(logits: Tensor, target_probs) -> Tensor:
    """Mean cross-entropy against fixed target distributions (not differentiated)."""
    p = np.asarray(target_probs, dtype=np.float64)
    n, k = logits.data.shape
    if p.shape != (n, k):
        raise ShapeMismatch("soft_cross_entropy", logits.data.shape, p.shape)
    logp = _log_softmax(logits.data)
    loss = -(p * logp).sum(axis=1).mean()

    def backward(g):
        return ((np.exp(logp) - p) * (g / n),)

    return logits.tape.record(loss, (logits,), backward)


def l2_normalize_rows(t: Tensor, eps: float = 1e-12) -> Tensor:
    """Scale each row of a 2-d tensor to unit Euclidean norm."""
    if len(t.shape) != 2:
        raise ShapeMismatch("l2_normalize_rows", t.shape, t.shape)
    r = np.maximum(np.linalg.norm(t.data, axis=1, keepdims=True), eps)
    z = t.data / r

    def backward(g):
        return ((g - (g * z).sum(axis=1, keepdims=True) * z) / r,)

    return t.tape.record(z, (t,), backward)


def conv2d_dense(x: Tensor, kernel: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Dense 2-d cross-correlation with zero padding.

    x is (C_in, H, W), kernel is (C_out, C_in, kh, kw); output is
    (C_out, H_out, W_out) with H_out = (H + 2*pad - kh)//stride + 1.
    """
    if len(x.shape) != 3 or len(kernel.shape) != 4 or x.shape[0] != kernel.shape[1]:
        raise ShapeMismatch("conv2d_dense", x.shape, kernel.shape)
    cin, h, w = x.shape
    cout, _, kh, kw = kernel.shape
    if h + 2 * pad < kh or w + 2 * pad < kw:
        raise ShapeMismatch("conv2d_dense", x.shape, kernel.shape)
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    patches = windows[:, ::stride, ::stride]  # (C_in, Ho, Wo, kh, kw)
    out = np.einsum("oikl,ihwkl->ohw", kernel.data, patches)
    ho, wo = out.shape[1], out.shape[2]
    k_data = kernel.data

    def backward(g):
        gk = np.einsum("ohw,ihwkl->oikl", g, patches)
        gxp = np.zeros_like(xp)
        for ky in range(kh):
            for kx in range(kw):
                gxp[:, ky : ky + stride * ho : stride, kx : kx + stride * wo : stride] += np.einsum(
                    "ohw,oi->ihw", g, k_data[:, :, ky, kx]
                )
        gx = gxp[:, pad : pad + h, pad : pad + w] if pad else gxp
        return (gx, gk)

    return x.tape.record(out, (x, kernel), backward)


def max_pool2d(x: Tensor, size: int) -> Tensor:
    """Non-overlapping max pooling over size x size blocks of (C, H, W)."""
    c, h, w = x.shape
    if h % size or w % size:
        raise ShapeMismatch("max_pool2d", x.shape, (size, size))
    ho, wo = h // size, w // size
    blocks = x.data.reshape(c, ho, size, wo, size).transpose(0, 1, 3, 2, 4).reshape(
        c, ho, wo, size * size
    )
    arg = blocks.argmax(axis=3)
    out = np.take_along_axis(blocks, arg[..., None], axis=3)[..., 0]

    def backward(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=3)
        gx = gb.reshape(c, ho, wo, size, size).transpose(0, 1, 3, 2, 4).reshape(c, h, w)
        return (gx,)

    return x.tape.record(out, (x,), backward)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(parameter) into every reachable Parameter.grad."""
    if not isinstance(loss, Tensor) or loss.data.shape != ():
        shape = getattr(getattr(loss, "data", loss), "shape", None)
        raise NonScalarLoss(f"loss must be a scalar tensor, got shape {shape}")
    tape = loss.tape
    grads: dict[int, np.ndarray] = {loss.node: np.array(1.0)}
    for nid in range(loss.node, -1, -1):
        g = grads.pop(nid, None)
        if g is None:
            continue
        node = tape._nodes[nid]
        if node.sink is not None:
            node.sink.grad += g
        if node.backward is None:
            continue
        for pid, pg in zip(node.parents, node.backward(g)):
            if pg is None:
                continue
            if pid in grads:
                grads[pid] = grads[pid] + pg
            else:
                grads[pid] = pg
