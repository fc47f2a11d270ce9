"""Slow reference implementations used to cross-check the engine.

Everything here is written independently of the fast paths: the convolution
walks the output grid with explicit loops instead of strided views, and the
vanilla trainer applies the plain SGD rule inline instead of going through
the optimizer. Keep it that way; these routines are only trustworthy as
oracles while they share no code with what they check.
"""

from __future__ import annotations

import numpy as np


def conv2d_bruteforce(x: np.ndarray, w: np.ndarray, stride: int = 1,
                      padding: int = 0) -> np.ndarray:
    """Cross-correlation of x (N,C,H,W) with w (F,C,KH,KW), quadruple loop."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError("expected 4-D input and kernel")
    n, c, h, wd = x.shape
    f, cw, kh, kw = w.shape
    if cw != c:
        raise ValueError(f"channel mismatch: input {c}, kernel {cw}")
    if (h + 2 * padding - kh) % stride or (wd + 2 * padding - kw) % stride:
        raise ValueError("kernel does not tile the padded input exactly")
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wd + 2 * padding - kw) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ValueError("kernel larger than padded input")
    xp = np.zeros((n, c, h + 2 * padding, wd + 2 * padding))
    xp[:, :, padding:padding + h, padding:padding + wd] = x
    out = np.zeros((n, f, oh, ow))
    for ni in range(n):
        for fi in range(f):
            for oi in range(oh):
                for oj in range(ow):
                    acc = 0.0
                    for ci in range(c):
                        for ki in range(kh):
                            for kj in range(kw):
                                acc += (xp[ni, ci, oi * stride + ki, oj * stride + kj]
                                        * w[fi, ci, ki, kj])
                    out[ni, fi, oi, oj] = acc
    return out


def vanilla_sgd_step(net, batch_x, batch_y, eta: float) -> None:
    """One plain SGD step on a single-path network, update rule inlined.

    Serves as the reference route when checking that the dual-weight
    machinery at lambda=0 reduces to ordinary training.
    """
    from .nn import cross_entropy_grad

    net.zero_grads()
    logits = net.forward(batch_x, cache=True)
    _, dlogits = cross_entropy_grad(logits, batch_y)
    net.backward(dlogits)
    for (key, p), (_, g) in zip(net.param_items(), net.grad_items()):
        net.set_param(key, p - eta * g)


def momentum_reference(grads, beta: float, eta: float) -> list[np.ndarray]:
    """Replay the momentum recursion v' = beta*v + g, step = eta*v'.

    Returns the per-step parameter deltas for a given gradient sequence.
    """
    v = np.zeros_like(np.asarray(grads[0], dtype=np.float64))
    deltas = []
    for g in grads:
        v = beta * v + np.asarray(g, dtype=np.float64)
        deltas.append(eta * v.copy())
    return deltas
