"""Dual-weight layer, its loss term, update rule, and inference-path selection.

One layer of a network carries two weight sets (called R and L). Both are
trained on the data loss of their own path while a penalty rewards growing
the Frobenius distance between them; at inference time the path with the
higher validation accuracy survives and the network is an ordinary
single-weight model again.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import Conv2d, Dense, Layer, LossBreakdown, Network, PairedLogits, cross_entropy_grad
from .tensor import ShapeError, Tensor, frobenius_sq

BRANCHES = ("r", "l")


def init_dreg(base_weights: Tensor, epsilon_init: float, rng_seed: int) -> tuple[Tensor, Tensor]:
    """Split one weight tensor into a slightly distinctive pair.

    The R set keeps the base values; the L set is perturbed by Gaussian
    noise scaled to epsilon_init times the empirical spread of the base
    weights, so the pair starts close but never identical.
    """
    if epsilon_init <= 0:
        raise ValueError("epsilon_init must be strictly positive")
    base = base_weights.data
    sigma = float(base.std())
    if sigma == 0.0:
        sigma = 1.0
    rng = np.random.default_rng(rng_seed)
    noise = rng.standard_normal(base.shape)
    return Tensor(base), Tensor(base + epsilon_init * sigma * noise)


def dreg_loss(w_r: Tensor, w_l: Tensor) -> float:
    """Unscaled penalty ||w_r - w_l||_F^2; the caller applies -lambda."""
    if w_r.shape != w_l.shape:
        raise ShapeError(f"weight pair shapes differ: {w_r.shape} vs {w_l.shape}")
    return frobenius_sq(w_r - w_l)


def dreg_grad(w_r: Tensor, w_l: Tensor) -> tuple[Tensor, Tensor]:
    """Gradients of the unscaled penalty w.r.t. each weight set."""
    if w_r.shape != w_l.shape:
        raise ShapeError(f"weight pair shapes differ: {w_r.shape} vs {w_l.shape}")
    g = 2.0 * (w_r.data - w_l.data)
    return Tensor(g), Tensor(-g)


def dreg_update(layer: "DRegLayer", grad_ce_r: Tensor, grad_ce_l: Tensor,
                eta: float, lam: float) -> tuple[Tensor, Tensor]:
    """One update of the dual weight pair.

    Each set descends the composite-loss gradient of its own path:
    w_r' = w_r - eta*g_r + 2*lam*eta*(w_r - w_l), and symmetrically for
    w_l. Both new values are computed from the pre-update pair, which is
    what makes the per-step difference identity hold exactly.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    w_r, w_l = layer.w_r, layer.w_l
    if grad_ce_r.shape != w_r.shape or grad_ce_l.shape != w_l.shape:
        raise ShapeError("gradient shapes must match the weight pair")
    pen_r, pen_l = dreg_grad(Tensor(w_r), Tensor(w_l))
    new_r = Tensor(w_r - eta * (grad_ce_r.data - lam * pen_r.data))
    new_l = Tensor(w_l - eta * (grad_ce_l.data - lam * pen_l.data))
    layer.set_pair(new_r, new_l)
    return new_r, new_l


class DRegLayer(Layer):
    """Wrapper giving one dense or conv layer two weight sets.

    The wrapped layer's bias (when present) stays shared between branches,
    so a selected single path has exactly the base layer's parameter count.
    Branch activations are cached per forward call, which lets the network
    evaluate shared downstream layers once per branch.
    """

    kind = "dreg"
    is_dual = True

    def __init__(self, inner: Layer, epsilon_init: float, rng_seed: int,
                 position_index: int = 1):
        super().__init__()
        if inner.kind not in ("dense", "conv2d"):
            raise ValueError(f"cannot make a {inner.kind} layer dual-weight")
        self.inner_kind = inner.kind
        self.position_index = int(position_index)
        w_r, w_l = init_dreg(inner.params()["w"], epsilon_init, rng_seed)
        self._branch = {
            "r": _bias_free_copy(inner, w_r.data),
            "l": _bias_free_copy(inner, w_l.data),
        }
        self.b = None
        if inner.b is not None:
            self.b = inner.b.copy()
            self._gb = np.zeros_like(self.b)

    @property
    def w_r(self) -> np.ndarray:
        return self._branch["r"].w

    @property
    def w_l(self) -> np.ndarray:
        return self._branch["l"].w

    def branch_diff(self) -> np.ndarray:
        return self.w_r - self.w_l

    def set_pair(self, w_r: Tensor, w_l: Tensor) -> None:
        self._branch["r"].set_param("w", w_r)
        self._branch["l"].set_param("w", w_l)

    def params(self):
        out = {"w_r": Tensor(self.w_r), "w_l": Tensor(self.w_l)}
        if self.b is not None:
            out["b"] = Tensor(self.b)
        return out

    def grads(self):
        out = {"w_r": self._branch["r"].grads()["w"],
               "w_l": self._branch["l"].grads()["w"]}
        if self.b is not None:
            out["b"] = Tensor(self._gb)
        return out

    def set_param(self, name, value):
        if name == "w_r":
            self._branch["r"].set_param("w", value)
        elif name == "w_l":
            self._branch["l"].set_param("w", value)
        elif name == "b" and self.b is not None:
            self.b = self._require_param(value, self.b.shape, "b")
        else:
            super().set_param(name, value)

    def zero_grads(self):
        for branch in self._branch.values():
            branch.zero_grads()
        if self.b is not None:
            self._gb[:] = 0.0

    def forward_branch(self, x: np.ndarray, which: str, cache: bool = True) -> np.ndarray:
        y = self._branch[which].forward(x, cache)
        if self.b is not None:
            y = y + (self.b if self.inner_kind == "dense" else self.b[None, :, None, None])
        return y

    def backward_branch(self, gout: np.ndarray, which: str) -> np.ndarray:
        if self.b is not None:
            self._gb += gout.sum(axis=0) if self.inner_kind == "dense" \
                else gout.sum(axis=(0, 2, 3))
        return self._branch[which].backward(gout)

    def forward(self, x, cache=True):
        raise RuntimeError("dual-weight layer is evaluated per branch")

    def backward(self, gout):
        raise RuntimeError("dual-weight layer is unwound per branch")

    def out_shape(self, in_shape):
        return self._branch["r"].out_shape(in_shape)

    def flops(self, in_shape):
        # single-branch cost; the network accounts for the duplication
        return self._branch["r"].flops(in_shape)

    def clone(self):
        dup = DRegLayer.__new__(DRegLayer)
        Layer.__init__(dup)
        dup.inner_kind = self.inner_kind
        dup.position_index = self.position_index
        dup._branch = {k: v.clone() for k, v in self._branch.items()}
        dup.b = None if self.b is None else self.b.copy()
        if dup.b is not None:
            dup._gb = np.zeros_like(dup.b)
        return dup

    def to_single(self, which: str) -> Layer:
        """Plain layer keeping only one weight set (plus the shared bias)."""
        branch = self._branch[which]
        if self.inner_kind == "dense":
            return Dense(branch.in_dim, branch.out_dim, bias=self.b is not None,
                         w=branch.w.copy(), b=None if self.b is None else self.b.copy())
        return Conv2d(branch.in_ch, branch.out_ch, branch.kernel,
                      stride=branch.stride, padding=branch.padding,
                      bias=self.b is not None, w=branch.w.copy(),
                      b=None if self.b is None else self.b.copy())


def _bias_free_copy(inner: Layer, w: np.ndarray) -> Layer:
    if inner.kind == "dense":
        return Dense(inner.in_dim, inner.out_dim, bias=False, w=w.copy())
    return Conv2d(inner.in_ch, inner.out_ch, inner.kernel, stride=inner.stride,
                  padding=inner.padding, bias=False, w=w.copy())


def eligible_positions(net: Network) -> list[int]:
    """Indices of layers the dual-weight wrapper may replace.

    Top-level dense/conv layers qualify, except the final parameterized
    layer (the output head stays single). Layers inside residual blocks
    are not wrapped.
    """
    param_indices = [i for i, layer in enumerate(net.layers)
                     if layer.kind in ("dense", "conv2d")]
    return param_indices[:-1]


def resolve_position(net: Network, position: str) -> int:
    """Map a 'Block-Rk' name (k-th eligible layer from the output) to an index."""
    name = position.strip().lower().replace("_", "-")
    if not name.startswith("block-r"):
        raise ValueError(f"unknown position {position!r}; expected Block-Rk")
    try:
        k = int(name[len("block-r"):])
    except ValueError:
        raise ValueError(f"unknown position {position!r}; expected Block-Rk") from None
    eligible = eligible_positions(net)
    if not 1 <= k <= len(eligible):
        raise ValueError(
            f"position {position!r} out of range; network has "
            f"{len(eligible)} eligible layers")
    return eligible[-k]


def attach_dreg(net: Network, position: str, epsilon_init: float,
                rng_seed: int) -> Network:
    """Return a copy of net with the named layer made dual-weight."""
    if net.has_dual:
        raise ValueError("network already has a dual-weight layer")
    idx = resolve_position(net, position)
    k = len(eligible_positions(net)) - eligible_positions(net).index(idx)
    layers = [layer.clone() for layer in net.layers]
    layers[idx] = DRegLayer(layers[idx], epsilon_init, rng_seed, position_index=k)
    return Network(layers)


def dual_loss_and_grads(logits: PairedLogits, labels, net: Network,
                        lam: float) -> tuple[LossBreakdown, Tensor, Tensor]:
    """Composite loss of a dual forward pass plus per-branch logit gradients.

    The weight-difference penalty depends only on the dual layer's weights,
    so the upstream gradients fed to backward are exactly the per-branch
    cross-entropy gradients.
    """
    layer = net.layers[net.dual_index]
    l_r, d_r = cross_entropy_grad(logits.r, labels)
    l_l, d_l = cross_entropy_grad(logits.l, labels)
    raw = dreg_loss(Tensor(layer.w_r), Tensor(layer.w_l))
    return LossBreakdown.dual(l_r, l_l, raw, lam), d_r, d_l


def compute_gradients(net: Network, inputs: Tensor, labels, lam: float = 0.0) -> LossBreakdown:
    """Forward + backward over one batch; leaves mean gradients in the net.

    Handles both single-path and dual-path networks. Only the data losses
    produce backpropagated gradients; the weight-difference term acts in
    weight space at update time.
    """
    net.zero_grads()
    out = net.forward(inputs, cache=True)
    if net.has_dual:
        breakdown, d_r, d_l = dual_loss_and_grads(out, labels, net, lam)
        net.backward_dual(d_r, d_l)
        return breakdown
    loss, dlogits = cross_entropy_grad(out, labels)
    net.backward(dlogits)
    return LossBreakdown.single(loss)


@dataclass
class StepRecord:
    """Snapshot of one dual-weight update, for the decomposition check."""

    diff_before: np.ndarray
    diff_after: np.ndarray
    delta_r: np.ndarray
    delta_l: np.ndarray


@dataclass
class DRegTrace:
    """Recorded per-step dual-layer state of a training run."""

    lam: float
    eta: float
    steps: list[StepRecord] = field(default_factory=list)

    def record(self, diff_before, diff_after, delta_r, delta_l) -> None:
        self.steps.append(StepRecord(np.array(diff_before), np.array(diff_after),
                                     np.array(delta_r), np.array(delta_l)))

    def diff_norms(self) -> list[float]:
        return [float(np.sqrt((s.diff_after ** 2).sum())) for s in self.steps]


def distinctiveness_decomposition_check(trace: DRegTrace) -> float:
    """Largest residual of the per-step difference identity over a trace.

    Each recorded step must satisfy
    D_t = (1 + 4*lam*eta) * D_{t-1} - (delta_r - delta_l)
    where the deltas are the applied data-driven update steps; the residual
    is the Frobenius norm of the violation.
    """
    if not trace.steps:
        raise ValueError("trace has no recorded steps")
    growth = 1.0 + 4.0 * trace.lam * trace.eta
    worst = 0.0
    for s in trace.steps:
        predicted = growth * s.diff_before - (s.delta_r - s.delta_l)
        worst = max(worst, float(np.sqrt(((s.diff_after - predicted) ** 2).sum())))
    return worst


def path_accuracies(net: Network, inputs: Tensor, labels) -> tuple[float, float]:
    """Validation accuracy of each branch of a dual network."""
    logits = net.forward(inputs, cache=False)
    labels = np.asarray(labels)
    acc_r = float(np.mean(logits.r.data.argmax(axis=1) == labels))
    acc_l = float(np.mean(logits.l.data.argmax(axis=1) == labels))
    return acc_r, acc_l


def collapse_dual(net: Network, which: str) -> Network:
    """Single-path copy of a dual network keeping one named weight set."""
    if not net.has_dual:
        raise ValueError("network has no dual-weight layer")
    if which not in ("r", "l"):
        raise ValueError(f"branch must be 'r' or 'l', got {which!r}")
    layers = []
    for layer in net.layers:
        layers.append(layer.to_single(which) if layer.is_dual else layer.clone())
    return Network(layers)


def select_inference_path(net: Network, inputs: Tensor, labels) -> Network:
    """Collapse a dual network to the branch with higher validation accuracy.

    Ties go to R. No parameter value changes; one weight set is dropped.
    """
    if np.asarray(labels).size == 0:
        raise ValueError("validation set is empty")
    acc_r, acc_l = path_accuracies(net, inputs, labels)
    return collapse_dual(net, "r" if acc_r >= acc_l else "l")
