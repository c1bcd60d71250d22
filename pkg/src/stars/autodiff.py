"""Minimal reverse-mode automatic differentiation over dense float64 tensors.

Just enough machinery for small MLPs, the losses used by the trainer, and
Adam: a `Tensor` wraps a numpy array plus an optional gradient, a `Tape`
records primitive operations in execution order, and `Tape.backward` walks
the record in reverse. Everything is 64-bit and deterministic; stochastic
operations (gaussian sampling) take their noise as an explicit input.
"""

from __future__ import annotations

import numpy as np

_LOG_2PI = float(np.log(2.0 * np.pi))


class Tensor:
    """A dense float64 array with an optional accumulated gradient."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        else:
            self.grad.fill(0.0)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def param(data):
    """A trainable tensor (gradient will be tracked)."""
    return Tensor(data, requires_grad=True)


def _accumulate(t, g):
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _bias_reduce(g, shape):
    # reverse broadcasting over the leading batch dimension only
    if g.shape == shape:
        return g
    return g.sum(axis=0, keepdims=True).reshape(shape)


class Tape:
    """Ordered record of primitive operations for one forward/backward pass.

    Operands always precede their results, so the backward pass is a single
    reverse sweep visiting each node exactly once. Gradients accumulate with
    `+=`, so a tensor feeding several operations receives the sum of all
    path gradients.
    """

    def __init__(self):
        self._nodes = []

    def __len__(self):
        return len(self._nodes)

    def _record(self, out, inputs, backward):
        if any(t.requires_grad for t in inputs):
            out.requires_grad = True
            self._nodes.append((out, inputs, backward))
        return out

    # ---- primitives ----------------------------------------------------

    def matmul(self, a, b):
        if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
            raise ValueError(
                f"matmul: incompatible shapes {a.data.shape} and {b.data.shape}"
            )
        out = Tensor(a.data @ b.data)

        def backward(g):
            if a.requires_grad:
                _accumulate(a, g @ b.data.T)
            if b.requires_grad:
                _accumulate(b, a.data.T @ g)

        return self._record(out, (a, b), backward)

    def affine(self, x, w, b):
        """x @ w + b with b broadcast over the batch dimension."""
        if x.data.shape[1] != w.data.shape[0]:
            raise ValueError(
                f"affine: incompatible shapes {x.data.shape} and {w.data.shape}"
            )
        out = Tensor(x.data @ w.data + b.data)

        def backward(g):
            if x.requires_grad:
                _accumulate(x, g @ w.data.T)
            if w.requires_grad:
                _accumulate(w, x.data.T @ g)
            if b.requires_grad:
                _accumulate(b, _bias_reduce(g, b.data.shape))

        return self._record(out, (x, w, b), backward)

    def _elementwise_pair(self, a, b, op):
        if a.data.shape != b.data.shape and not (
            b.data.ndim == a.data.ndim and b.data.shape[0] == 1
            and b.data.shape[1:] == a.data.shape[1:]
        ):
            raise ValueError(
                f"{op}: incompatible shapes {a.data.shape} and {b.data.shape}"
            )

    def add(self, a, b):
        self._elementwise_pair(a, b, "add")
        out = Tensor(a.data + b.data)

        def backward(g):
            if a.requires_grad:
                _accumulate(a, g)
            if b.requires_grad:
                _accumulate(b, _bias_reduce(g, b.data.shape))

        return self._record(out, (a, b), backward)

    def sub(self, a, b):
        self._elementwise_pair(a, b, "sub")
        out = Tensor(a.data - b.data)

        def backward(g):
            if a.requires_grad:
                _accumulate(a, g)
            if b.requires_grad:
                _accumulate(b, -_bias_reduce(g, b.data.shape))

        return self._record(out, (a, b), backward)

    def mul(self, a, b):
        self._elementwise_pair(a, b, "mul")
        out = Tensor(a.data * b.data)

        def backward(g):
            if a.requires_grad:
                _accumulate(a, g * b.data)
            if b.requires_grad:
                _accumulate(b, _bias_reduce(g * a.data, b.data.shape))

        return self._record(out, (a, b), backward)

    def scale(self, a, c):
        c = float(c)
        out = Tensor(a.data * c)

        def backward(g):
            if a.requires_grad:
                _accumulate(a, g * c)

        return self._record(out, (a,), backward)

    def add_const(self, a, c):
        c = float(c)
        out = Tensor(a.data + c)

        def backward(g):
            if a.requires_grad:
                _accumulate(a, g)

        return self._record(out, (a,), backward)

    def tanh(self, a):
        y = np.tanh(a.data)
        out = Tensor(y)

        def backward(g):
            if a.requires_grad:
                _accumulate(a, g * (1.0 - y * y))

        return self._record(out, (a,), backward)

    def relu(self, a):
        """max(0, x), elementwise."""
        out = Tensor(np.maximum(a.data, 0.0))

        def backward(g):
            if a.requires_grad:
                _accumulate(a, g * (a.data > 0.0))

        return self._record(out, (a,), backward)

    def exp(self, a):
        y = np.exp(a.data)
        out = Tensor(y)

        def backward(g):
            if a.requires_grad:
                _accumulate(a, g * y)

        return self._record(out, (a,), backward)

    def log(self, a):
        out = Tensor(np.log(a.data))

        def backward(g):
            if a.requires_grad:
                _accumulate(a, g / a.data)

        return self._record(out, (a,), backward)

    def square(self, a):
        out = Tensor(a.data * a.data)

        def backward(g):
            if a.requires_grad:
                _accumulate(a, g * (2.0 * a.data))

        return self._record(out, (a,), backward)

    def sum(self, a, axis=None):
        """Full-reduction to a scalar, or row-wise with axis=1 (keepdims)."""
        if axis is None:
            out = Tensor(a.data.sum())
        elif axis == 1:
            out = Tensor(a.data.sum(axis=1, keepdims=True))
        else:
            raise ValueError(f"sum: unsupported axis {axis}")

        def backward(g):
            if a.requires_grad:
                _accumulate(a, np.broadcast_to(g, a.data.shape))

        return self._record(out, (a,), backward)

    def mean(self, a):
        n = a.data.size
        out = Tensor(a.data.sum() / n)

        def backward(g):
            if a.requires_grad:
                _accumulate(a, np.full(a.data.shape, float(g) / n))

        return self._record(out, (a,), backward)

    def concat(self, tensors, axis):
        if axis not in (0, 1):
            raise ValueError(f"concat: unsupported axis {axis}")
        out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
        sizes = [t.data.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)

        def backward(g):
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    piece = g[lo:hi] if axis == 0 else g[:, lo:hi]
                    _accumulate(t, piece)

        return self._record(out, tuple(tensors), backward)

    def slice_rows(self, a, start, stop):
        out = Tensor(a.data[start:stop])

        def backward(g):
            if a.requires_grad:
                full = np.zeros_like(a.data)
                full[start:stop] = g
                _accumulate(a, full)

        return self._record(out, (a,), backward)

    def slice_cols(self, a, start, stop):
        out = Tensor(a.data[:, start:stop])

        def backward(g):
            if a.requires_grad:
                full = np.zeros_like(a.data)
                full[:, start:stop] = g
                _accumulate(a, full)

        return self._record(out, (a,), backward)

    def reshape(self, a, shape):
        out = Tensor(a.data.reshape(shape))

        def backward(g):
            if a.requires_grad:
                _accumulate(a, g.reshape(a.data.shape))

        return self._record(out, (a,), backward)

    def gather_rows(self, a, idx):
        idx = np.asarray(idx, dtype=np.intp)
        out = Tensor(a.data[idx])

        def backward(g):
            if a.requires_grad:
                full = np.zeros_like(a.data)
                np.add.at(full, idx, g)
                _accumulate(a, full)

        return self._record(out, (a,), backward)

    def sq_dist(self, a, b):
        """Row-wise squared euclidean distance, shape (n, 1)."""
        if a.data.shape != b.data.shape:
            raise ValueError(
                f"sq_dist: incompatible shapes {a.data.shape} and {b.data.shape}"
            )
        diff = a.data - b.data
        out = Tensor((diff * diff).sum(axis=1, keepdims=True))

        def backward(g):
            if a.requires_grad:
                _accumulate(a, 2.0 * diff * g)
            if b.requires_grad:
                _accumulate(b, -2.0 * diff * g)

        return self._record(out, (a, b), backward)

    def clamp(self, a, lo, hi):
        out = Tensor(np.clip(a.data, lo, hi))
        inside = (a.data > lo) & (a.data < hi)

        def backward(g):
            if a.requires_grad:
                _accumulate(a, g * inside)

        return self._record(out, (a,), backward)

    def minimum(self, a, b):
        self._elementwise_pair(a, b, "minimum")
        take_a = a.data <= b.data
        out = Tensor(np.where(take_a, a.data, b.data))

        def backward(g):
            if a.requires_grad:
                _accumulate(a, g * take_a)
            if b.requires_grad:
                _accumulate(b, _bias_reduce(g * ~take_a, b.data.shape))

        return self._record(out, (a, b), backward)

    def gauss_logp(self, mean, logstd, x):
        """Diagonal gaussian log-density of x, summed over columns -> (n, 1)."""
        std = np.exp(logstd.data)
        z = (x.data - mean.data) / std
        per = -0.5 * z * z - logstd.data - 0.5 * _LOG_2PI
        out = Tensor(per.sum(axis=1, keepdims=True))

        def backward(g):
            if mean.requires_grad:
                _accumulate(mean, g * z / std)
            if logstd.requires_grad:
                _accumulate(logstd, g * (z * z - 1.0))
            if x.requires_grad:
                _accumulate(x, -g * z / std)

        return self._record(out, (mean, logstd, x), backward)

    def gauss_sample(self, mean, logstd, noise):
        """Reparameterized draw mean + exp(logstd) * noise; noise is a constant."""
        std = np.exp(logstd.data)
        out = Tensor(mean.data + std * noise)

        def backward(g):
            if mean.requires_grad:
                _accumulate(mean, g)
            if logstd.requires_grad:
                _accumulate(logstd, g * std * noise)

        return self._record(out, (mean, logstd), backward)

    # ---- backward pass --------------------------------------------------

    def backward(self, loss):
        if loss.data.ndim != 0 and loss.data.size != 1:
            raise ValueError(f"backward: loss must be scalar, got shape {loss.data.shape}")
        _accumulate(loss, np.ones_like(loss.data))
        for out, _inputs, fn in reversed(self._nodes):
            if out.grad is not None:
                fn(out.grad)


class Adam:
    """Adam with bias correction over a fixed list of parameter tensors.

    All parameters share one step counter. `step` applies the update and
    zeroes the gradients in place; a parameter whose gradient was never
    populated is an error.
    """

    def __init__(self, params, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        for p in self.params:
            if p.grad is None:
                raise ValueError("adam: parameter has no gradient")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            g.fill(0.0)


# ---- checkpoint format ---------------------------------------------------
#
# Byte layout (documented in README as well):
#   line 1:              b"STARS-CKPT v1\n"
#   per named parameter: b"<name> <dim0,dim1,...>\n" then prod(shape)
#                        raw little-endian float64 values, row-major.

CHECKPOINT_MAGIC = "STARS-CKPT v1"


def save_checkpoint(path, named_arrays):
    """Write named float64 arrays in the STARS-CKPT v1 layout."""
    with open(path, "wb") as fh:
        fh.write((CHECKPOINT_MAGIC + "\n").encode("ascii"))
        for name, arr in named_arrays.items():
            if any(ch.isspace() for ch in name):
                raise ValueError(f"checkpoint: invalid parameter name {name!r}")
            arr = np.asarray(arr, dtype=np.float64)
            shape_csv = ",".join(str(d) for d in arr.shape)
            fh.write(f"{name} {shape_csv}\n".encode("ascii"))
            fh.write(arr.astype("<f8").tobytes(order="C"))


def _read_line(fh):
    buf = bytearray()
    while True:
        ch = fh.read(1)
        if not ch:
            return None if not buf else buf.decode("ascii")
        if ch == b"\n":
            return buf.decode("ascii")
        buf.extend(ch)


def load_checkpoint(path):
    """Read a STARS-CKPT v1 file back into an ordered {name: array} dict."""
    out = {}
    with open(path, "rb") as fh:
        magic = _read_line(fh)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"checkpoint: bad header {magic!r} in {path}")
        while True:
            header = _read_line(fh)
            if header is None:
                break
            name, shape_csv = header.split(" ")
            shape = tuple(int(d) for d in shape_csv.split(",")) if shape_csv else ()
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise ValueError(f"checkpoint: truncated data for {name!r}")
            out[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return out
