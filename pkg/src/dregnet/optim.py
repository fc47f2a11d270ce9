"""Parameter update rules: vanilla and momentum minibatch SGD.

Shared weights follow the plain rules; the dual-weight layer's data
gradients go through the same momentum accumulator, and the
weight-difference term is added outside it afterwards, so the per-step
difference identity stays exact. A config flag routes the difference term
through the accumulator instead, for experiments.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dreg as _dreg
from .tensor import ShapeError, Tensor


@dataclass
class MomentumState:
    """Per-parameter velocity buffers for the momentum recursion."""

    beta: float
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.beta < 1.0:
            raise ValueError("beta must lie in [0, 1)")

    def velocity(self, key: str, shape: tuple[int, ...]) -> np.ndarray:
        buf = self.v.get(key)
        if buf is None:
            buf = np.zeros(shape)
            self.v[key] = buf
        elif buf.shape != tuple(shape):
            raise ShapeError(f"velocity for {key!r} has shape {buf.shape}, "
                             f"parameter has {shape}")
        return buf


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one training run.

    lam is the weight-difference coefficient (0 disables the pressure);
    batch_size must split evenly across the simulated devices.
    """

    eta: float = 0.1
    beta: float = 0.9
    lam: float = 0.1
    batch_size: int = 32
    devices: int = 1
    epochs: int = 10
    seed: int = 0
    dreg_through_momentum: bool = False

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError("beta must lie in [0, 1)")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.batch_size <= 0 or self.devices <= 0:
            raise ValueError("batch_size and devices must be positive")
        if self.batch_size % self.devices:
            raise ValueError("batch_size must be divisible by devices")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")


def sgd_step(param: Tensor, grad: Tensor, eta: float) -> Tensor:
    """param - eta*grad, where grad is already the minibatch mean."""
    if param.shape != grad.shape:
        raise ShapeError(f"param {param.shape} vs grad {grad.shape}")
    return Tensor(param.data - eta * grad.data)


def momentum_step(param: Tensor, grad: Tensor, state: MomentumState,
                  eta: float, key: str = "param") -> tuple[Tensor, MomentumState]:
    """v' = beta*v + grad; param' = param - eta*v'. Mutates the state buffer."""
    if param.shape != grad.shape:
        raise ShapeError(f"param {param.shape} vs grad {grad.shape}")
    v = state.velocity(key, param.shape)
    v_new = state.beta * v + grad.data
    state.v[key] = v_new
    return Tensor(param.data - eta * v_new), state


@dataclass
class DualStepInfo:
    """What one update did to the dual layer, for the step-identity trace."""

    diff_before: np.ndarray
    diff_after: np.ndarray
    delta_r: np.ndarray
    delta_l: np.ndarray


def apply_update(net, grads, config: TrainConfig, state: MomentumState):
    """Update every parameter of net in place; returns DualStepInfo or None.

    grads may be None to use the gradients accumulated in the network.
    Shared weights take a momentum step. The dual layer's two data
    gradients take the momentum recursion first; the difference term is
    then applied on top from the pre-update weight pair.
    """
    if abs(state.beta - config.beta) > 0.0:
        raise ValueError("momentum state beta does not match config beta")
    params = dict(net.param_items())
    grads = dict(net.grad_items()) if grads is None else dict(grads)
    if set(grads) != set(params):
        raise ValueError("gradient/parameter count mismatch")

    info = None
    dual_keys: set[str] = set()
    if net.has_dual:
        i = net.dual_index
        layer = net.layers[i]
        key_r, key_l = f"{i}.w_r", f"{i}.w_l"
        dual_keys = {key_r, key_l}
        diff_before = layer.branch_diff().copy()
        g_r = grads[key_r].data
        g_l = grads[key_l].data
        lam_outside = config.lam
        if config.dreg_through_momentum:
            pen_r, pen_l = _dreg.dreg_grad(Tensor(layer.w_r), Tensor(layer.w_l))
            g_r = g_r - config.lam * pen_r.data
            g_l = g_l - config.lam * pen_l.data
            lam_outside = 0.0
        v_r = config.beta * state.velocity(key_r, g_r.shape) + g_r
        v_l = config.beta * state.velocity(key_l, g_l.shape) + g_l
        state.v[key_r], state.v[key_l] = v_r, v_l
        _dreg.dreg_update(layer, Tensor(v_r), Tensor(v_l), config.eta, lam_outside)
        info = DualStepInfo(diff_before=diff_before,
                            diff_after=layer.branch_diff().copy(),
                            delta_r=config.eta * v_r, delta_l=config.eta * v_l)

    for key, p in params.items():
        if key in dual_keys:
            continue
        new_p, _ = momentum_step(p, grads[key], state, config.eta, key=key)
        net.set_param(key, new_p)
    return info
