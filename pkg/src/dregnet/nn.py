"""Differentiable layers, network topology, and reverse-mode gradients.

Layers cache what their backward pass needs on a small stack, so a shared
layer can be evaluated once per branch of a dual-path network and then
unwound in reverse order. Parameter gradients accumulate across backward
passes until ``zero_grads``; that accumulation is what makes weights shared
between branches receive the sum of both branches' contributions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .tensor import ShapeError, Tensor, conv2d_raw, conv_output_size, _conv_windows


class LayerError(RuntimeError):
    """Layer used outside its forward/backward contract."""


class Layer:
    """Base class for differentiable nodes in a linear-chain network."""

    kind = "base"
    is_dual = False

    def __init__(self):
        self._cache: list = []

    def params(self) -> dict[str, Tensor]:
        return {}

    def grads(self) -> dict[str, Tensor]:
        return {}

    def set_param(self, name: str, value: Tensor) -> None:
        raise KeyError(f"{self.kind} layer has no parameter {name!r}")

    def zero_grads(self) -> None:
        pass

    def forward(self, x: np.ndarray, cache: bool = True) -> np.ndarray:
        raise NotImplementedError

    def backward(self, gout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def out_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        raise NotImplementedError

    def flops(self, in_shape: tuple[int, ...]) -> float:
        """Rough per-example forward+backward flop count at this input shape."""
        raise NotImplementedError

    def clone(self) -> "Layer":
        raise NotImplementedError

    def _pop_cache(self):
        if not self._cache:
            raise LayerError(f"backward called without forward on {self.kind} layer")
        return self._cache.pop()

    def _require_param(self, value: Tensor, shape: tuple[int, ...], name: str) -> np.ndarray:
        if value.shape != shape:
            raise ShapeError(f"{name} expects shape {shape}, got {value.shape}")
        return np.array(value.data)


def _init_weights(rng, shape, fan_in):
    std = np.sqrt(1.0 / fan_in)
    return rng.normal(0.0, std, size=shape)


class Dense(Layer):
    """Fully connected layer: y = x W^T + b, with W shaped (out, in)."""

    kind = "dense"

    def __init__(self, in_dim, out_dim, *, bias=True, w=None, b=None, rng=None):
        super().__init__()
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)
        if w is not None:
            self.w = np.array(w, dtype=np.float64).reshape(out_dim, in_dim)
        elif rng is not None:
            self.w = _init_weights(rng, (out_dim, in_dim), in_dim)
        else:
            self.w = np.zeros((out_dim, in_dim))
        self.b = None
        if bias:
            self.b = np.zeros(out_dim) if b is None else np.array(b, dtype=np.float64).reshape(out_dim)
        self._gw = np.zeros_like(self.w)
        self._gb = np.zeros_like(self.b) if self.b is not None else None

    def params(self):
        out = {"w": Tensor(self.w)}
        if self.b is not None:
            out["b"] = Tensor(self.b)
        return out

    def grads(self):
        out = {"w": Tensor(self._gw)}
        if self.b is not None:
            out["b"] = Tensor(self._gb)
        return out

    def set_param(self, name, value):
        if name == "w":
            self.w = self._require_param(value, self.w.shape, "w")
        elif name == "b" and self.b is not None:
            self.b = self._require_param(value, self.b.shape, "b")
        else:
            super().set_param(name, value)

    def zero_grads(self):
        self._gw[:] = 0.0
        if self._gb is not None:
            self._gb[:] = 0.0

    def forward(self, x, cache=True):
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(f"dense expects (N, {self.in_dim}), got {x.shape}")
        y = x @ self.w.T
        if self.b is not None:
            y = y + self.b
        if cache:
            self._cache.append(x)
        return y

    def backward(self, gout):
        x = self._pop_cache()
        self._gw += gout.T @ x
        if self._gb is not None:
            self._gb += gout.sum(axis=0)
        return gout @ self.w

    def out_shape(self, in_shape):
        if in_shape != (self.in_dim,):
            raise ShapeError(f"dense expects ({self.in_dim},), got {in_shape}")
        return (self.out_dim,)

    def flops(self, in_shape):
        return 6.0 * self.in_dim * self.out_dim

    def clone(self):
        return Dense(self.in_dim, self.out_dim, bias=self.b is not None,
                     w=self.w.copy(), b=None if self.b is None else self.b.copy())


class Conv2d(Layer):
    """2-D cross-correlation layer over NCHW batches."""

    kind = "conv2d"

    def __init__(self, in_ch, out_ch, kernel, *, stride=1, padding=0,
                 bias=False, w=None, b=None, rng=None):
        super().__init__()
        self.in_ch = int(in_ch)
        self.out_ch = int(out_ch)
        self.kernel = int(kernel)
        self.stride = int(stride)
        self.padding = int(padding)
        shape = (out_ch, in_ch, kernel, kernel)
        if w is not None:
            self.w = np.array(w, dtype=np.float64).reshape(shape)
        elif rng is not None:
            self.w = _init_weights(rng, shape, in_ch * kernel * kernel)
        else:
            self.w = np.zeros(shape)
        self.b = None
        if bias:
            self.b = np.zeros(out_ch) if b is None else np.array(b, dtype=np.float64).reshape(out_ch)
        self._gw = np.zeros_like(self.w)
        self._gb = np.zeros_like(self.b) if self.b is not None else None

    def params(self):
        out = {"w": Tensor(self.w)}
        if self.b is not None:
            out["b"] = Tensor(self.b)
        return out

    def grads(self):
        out = {"w": Tensor(self._gw)}
        if self.b is not None:
            out["b"] = Tensor(self._gb)
        return out

    def set_param(self, name, value):
        if name == "w":
            self.w = self._require_param(value, self.w.shape, "w")
        elif name == "b" and self.b is not None:
            self.b = self._require_param(value, self.b.shape, "b")
        else:
            super().set_param(name, value)

    def zero_grads(self):
        self._gw[:] = 0.0
        if self._gb is not None:
            self._gb[:] = 0.0

    def forward(self, x, cache=True):
        y = conv2d_raw(x, self.w, self.stride, self.padding)
        if self.b is not None:
            y = y + self.b[None, :, None, None]
        if cache:
            self._cache.append(x)
        return y

    def backward(self, gout):
        x = self._pop_cache()
        k, s, p = self.kernel, self.stride, self.padding
        _, _, oh, ow = gout.shape
        windows = _conv_windows(x, k, k, s, p, oh, ow)
        self._gw += np.einsum("nchwkl,nfhw->fckl", windows, gout, optimize=True)
        if self._gb is not None:
            self._gb += gout.sum(axis=(0, 2, 3))
        cols = np.einsum("fckl,nfhw->nchwkl", self.w, gout, optimize=True)
        n, c, h, wd = x.shape
        dxp = np.zeros((n, c, h + 2 * p, wd + 2 * p))
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + s * oh:s, j:j + s * ow:s] += cols[:, :, :, :, i, j]
        return dxp[:, :, p:p + h, p:p + wd]

    def out_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.in_ch:
            raise ShapeError(f"conv expects {self.in_ch} channels, got {c}")
        oh = conv_output_size(h, self.kernel, self.stride, self.padding)
        ow = conv_output_size(w, self.kernel, self.stride, self.padding)
        return (self.out_ch, oh, ow)

    def flops(self, in_shape):
        _, oh, ow = self.out_shape(in_shape)
        macs = self.out_ch * oh * ow * self.in_ch * self.kernel * self.kernel
        return 6.0 * macs

    def clone(self):
        return Conv2d(self.in_ch, self.out_ch, self.kernel, stride=self.stride,
                      padding=self.padding, bias=self.b is not None,
                      w=self.w.copy(), b=None if self.b is None else self.b.copy())


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, cache=True):
        if cache:
            self._cache.append(x > 0.0)
        return np.maximum(x, 0.0)

    def backward(self, gout):
        mask = self._pop_cache()
        return gout * mask

    def out_shape(self, in_shape):
        return in_shape

    def flops(self, in_shape):
        return 3.0 * float(np.prod(in_shape))

    def clone(self):
        return ReLU()


class AvgPool2d(Layer):
    """Average pooling with a square window; stride defaults to the window."""

    kind = "avgpool"

    def __init__(self, pool, stride=None):
        super().__init__()
        self.pool = int(pool)
        self.stride = int(stride) if stride is not None else self.pool

    def forward(self, x, cache=True):
        k, s = self.pool, self.stride
        oh = conv_output_size(x.shape[2], k, s, 0)
        ow = conv_output_size(x.shape[3], k, s, 0)
        windows = _conv_windows(x, k, k, s, 0, oh, ow)
        if cache:
            self._cache.append(x.shape)
        return windows.mean(axis=(4, 5))

    def backward(self, gout):
        in_shape = self._pop_cache()
        k, s = self.pool, self.stride
        n, c, oh, ow = gout.shape
        dx = np.zeros(in_shape)
        g = gout / (k * k)
        for i in range(k):
            for j in range(k):
                dx[:, :, i:i + s * oh:s, j:j + s * ow:s] += g
        return dx

    def out_shape(self, in_shape):
        c, h, w = in_shape
        return (c, conv_output_size(h, self.pool, self.stride, 0),
                conv_output_size(w, self.pool, self.stride, 0))

    def flops(self, in_shape):
        return 2.0 * float(np.prod(in_shape))

    def clone(self):
        return AvgPool2d(self.pool, self.stride)


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, cache=True):
        if cache:
            self._cache.append(x.shape)
        return x.reshape(x.shape[0], -1)

    def backward(self, gout):
        return gout.reshape(self._pop_cache())

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def flops(self, in_shape):
        return 0.0

    def clone(self):
        return Flatten()


class ResidualBlock(Layer):
    """Skip connection around a short chain of layers: y = x + body(x)."""

    kind = "residual"

    def __init__(self, body: Sequence[Layer]):
        super().__init__()
        self.body = list(body)

    def params(self):
        out = {}
        for i, layer in enumerate(self.body):
            for name, t in layer.params().items():
                out[f"b{i}.{name}"] = t
        return out

    def grads(self):
        out = {}
        for i, layer in enumerate(self.body):
            for name, t in layer.grads().items():
                out[f"b{i}.{name}"] = t
        return out

    def set_param(self, name, value):
        idx, _, rest = name.partition(".")
        self.body[int(idx[1:])].set_param(rest, value)

    def zero_grads(self):
        for layer in self.body:
            layer.zero_grads()

    def forward(self, x, cache=True):
        y = x
        for layer in self.body:
            y = layer.forward(y, cache)
        if y.shape != x.shape:
            raise ShapeError(
                f"residual body changed shape {x.shape} -> {y.shape}")
        return x + y

    def backward(self, gout):
        g = gout
        for layer in reversed(self.body):
            g = layer.backward(g)
        return gout + g

    def out_shape(self, in_shape):
        shape = in_shape
        for layer in self.body:
            shape = layer.out_shape(shape)
        if shape != in_shape:
            raise ShapeError("residual body must preserve shape")
        return in_shape

    def flops(self, in_shape):
        total = 2.0 * float(np.prod(in_shape))
        shape = in_shape
        for layer in self.body:
            total += layer.flops(shape)
            shape = layer.out_shape(shape)
        return total

    def clone(self):
        return ResidualBlock([layer.clone() for layer in self.body])


class PairedLogits(NamedTuple):
    """Per-branch logits of a dual-path forward pass."""

    r: Tensor
    l: Tensor


@dataclass
class LossBreakdown:
    """Composite loss parts: per-branch data losses and the raw (unscaled)

    weight-difference penalty. ``total`` is l_r + l_l - lambda*l_dreg_raw
    for dual networks and just the single data loss otherwise (in l_r).
    """

    l_r: float
    l_l: float | None
    l_dreg_raw: float | None
    total: float

    @classmethod
    def single(cls, loss: float) -> "LossBreakdown":
        return cls(l_r=loss, l_l=None, l_dreg_raw=None, total=loss)

    @classmethod
    def dual(cls, l_r: float, l_l: float, l_dreg_raw: float, lam: float) -> "LossBreakdown":
        if l_dreg_raw < 0:
            raise ValueError("weight-difference penalty cannot be negative")
        return cls(l_r=l_r, l_l=l_l, l_dreg_raw=l_dreg_raw,
                   total=l_r + l_l - lam * l_dreg_raw)


class Network:
    """Ordered chain of layers with at most one dual-weight layer.

    When a dual layer is present, forward computes the shared prefix once,
    then evaluates the remainder once per weight branch; backward unwinds
    both branches and sums their contributions into the shared parameters.
    """

    def __init__(self, layers: Sequence[Layer]):
        self.layers = list(layers)
        duals = [i for i, l in enumerate(self.layers) if l.is_dual]
        if len(duals) > 1:
            raise ValueError("at most one dual-weight layer is supported")
        self._dual_index = duals[0] if duals else None

    @property
    def dual_index(self) -> int | None:
        return self._dual_index

    @property
    def has_dual(self) -> bool:
        return self._dual_index is not None

    def forward(self, x: Tensor, cache: bool = False):
        """Evaluate the network; returns logits, or per-branch PairedLogits."""
        h = x.data
        if self._dual_index is None:
            for layer in self.layers:
                h = layer.forward(h, cache)
            return Tensor(h)
        i = self._dual_index
        for layer in self.layers[:i]:
            h = layer.forward(h, cache)
        tail = self.layers[i + 1:]
        zr = self.layers[i].forward_branch(h, "r", cache)
        for layer in tail:
            zr = layer.forward(zr, cache)
        zl = self.layers[i].forward_branch(h, "l", cache)
        for layer in tail:
            zl = layer.forward(zl, cache)
        return PairedLogits(Tensor(zr), Tensor(zl))

    def backward(self, upstream: Tensor) -> None:
        """Single-path reverse pass; accumulates parameter gradients."""
        if self.has_dual:
            raise LayerError("dual-path network needs backward_dual")
        g = upstream.data
        for layer in reversed(self.layers):
            g = layer.backward(g)

    def backward_dual(self, upstream_r: Tensor, upstream_l: Tensor) -> None:
        """Reverse pass through both branches.

        The L branch is unwound first (its activations were cached last),
        then the R branch; the two input-side gradients are summed before
        flowing through the shared prefix.
        """
        i = self._dual_index
        if i is None:
            raise LayerError("network has no dual-weight layer")
        tail = self.layers[i + 1:]
        g = upstream_l.data
        for layer in reversed(tail):
            g = layer.backward(g)
        gin_l = self.layers[i].backward_branch(g, "l")
        g = upstream_r.data
        for layer in reversed(tail):
            g = layer.backward(g)
        gin_r = self.layers[i].backward_branch(g, "r")
        g = gin_r + gin_l
        for layer in reversed(self.layers[:i]):
            g = layer.backward(g)

    def param_items(self) -> list[tuple[str, Tensor]]:
        out = []
        for i, layer in enumerate(self.layers):
            for name, t in layer.params().items():
                out.append((f"{i}.{name}", t))
        return out

    def grad_items(self) -> list[tuple[str, Tensor]]:
        out = []
        for i, layer in enumerate(self.layers):
            for name, t in layer.grads().items():
                out.append((f"{i}.{name}", t))
        return out

    def set_param(self, key: str, value: Tensor) -> None:
        idx, _, name = key.partition(".")
        self.layers[int(idx)].set_param(name, value)

    def get_param(self, key: str) -> Tensor:
        idx, _, name = key.partition(".")
        return self.layers[int(idx)].params()[name]

    def layer_of(self, key: str) -> Layer:
        return self.layers[int(key.partition(".")[0])]

    def zero_grads(self) -> None:
        for layer in self.layers:
            layer.zero_grads()

    def clone(self) -> "Network":
        return Network([layer.clone() for layer in self.layers])

    def count_params(self) -> int:
        return sum(t.size for _, t in self.param_items())

    def check_shapes(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        """Verify adjacent layers compose; returns the output shape."""
        shape = tuple(in_shape)
        for layer in self.layers:
            shape = layer.out_shape(shape)
        return shape

    def flops(self, in_shape: tuple[int, ...]) -> float:
        total, shape = 0.0, tuple(in_shape)
        for layer in self.layers:
            total += layer.flops(shape)
            shape = layer.out_shape(shape)
        total += 8.0 * shape[0]  # softmax cross-entropy
        return total

    def duplicated_fraction(self, in_shape: tuple[int, ...]) -> float:
        """Fraction of per-step flops above the dual-layer split point.

        This is the work the dual evaluation repeats: the dual layer itself,
        every layer after it, and the loss.
        """
        if not self.has_dual:
            raise LayerError("network has no dual-weight layer")
        total, extra = 0.0, 0.0
        shape = tuple(in_shape)
        for i, layer in enumerate(self.layers):
            cost = layer.flops(shape)
            total += cost
            if i >= self._dual_index:
                extra += cost
            shape = layer.out_shape(shape)
        loss_cost = 8.0 * shape[0]
        return (extra + loss_cost) / (total + loss_cost)


def softmax(logits: Tensor) -> Tensor:
    z = logits.data
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return Tensor(e / e.sum(axis=1, keepdims=True))


def _check_labels(labels, num_classes):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1:
        raise ShapeError("labels must be a 1-D integer array")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes})")
    return labels


def cross_entropy(logits: Tensor, labels) -> float:
    """Mean softmax cross-entropy of logits (N, C) against integer labels."""
    return cross_entropy_grad(logits, labels)[0]


def cross_entropy_grad(logits: Tensor, labels) -> tuple[float, Tensor]:
    """Loss together with its gradient w.r.t. the logits (already /N)."""
    z = logits.data
    if z.ndim != 2:
        raise ShapeError("logits must be (N, C)")
    n, c = z.shape
    labels = _check_labels(labels, c)
    m = z.max(axis=1, keepdims=True)
    shifted = z - m
    lse = np.log(np.exp(shifted).sum(axis=1)) + m[:, 0]
    loss = float(np.mean(lse - z[np.arange(n), labels]))
    p = softmax(logits).data.copy()
    p[np.arange(n), labels] -= 1.0
    return loss, Tensor(p / n)


def finite_diff_grad(net: Network, loss_fn: Callable[[Network], float],
                     key: str, epsilon: float = 1e-5) -> Tensor:
    """Central-difference gradient of loss_fn w.r.t. one parameter tensor.

    Independent of the analytic backward pass; used as its oracle.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    base = np.array(net.get_param(key).data)
    grad = np.zeros_like(base)
    flat = base.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + epsilon
        net.set_param(key, Tensor(base))
        up = loss_fn(net)
        flat[i] = orig - epsilon
        net.set_param(key, Tensor(base))
        down = loss_fn(net)
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * epsilon)
    net.set_param(key, Tensor(base))
    return Tensor(grad)
