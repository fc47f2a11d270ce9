"""Small reference architectures assembled from the layer zoo."""

from __future__ import annotations

import numpy as np

from .nn import Conv2d, Dense, Flatten, Network, ReLU, ResidualBlock

ARCHS = ("mlp", "conv")


def input_shape_for(arch: str, feature_dim: int) -> tuple[int, ...]:
    """Per-example input shape a network of this arch expects.

    Flat feature vectors feed the mlp directly; the conv arch views them as
    single-channel square images, so the feature count must be a square.
    """
    if arch == "mlp":
        return (feature_dim,)
    side = int(round(np.sqrt(feature_dim)))
    if side * side != feature_dim:
        raise ValueError(f"conv arch needs a square feature count, got {feature_dim}")
    return (1, side, side)


def reshape_for(arch: str, x: np.ndarray) -> np.ndarray:
    if arch == "mlp":
        return x.reshape(x.shape[0], -1)
    if x.ndim == 4:
        return x
    shape = input_shape_for(arch, x.shape[1])
    return x.reshape((x.shape[0],) + shape)


def build_network(arch: str, width: int, depth: int, residual: bool,
                  in_shape: tuple[int, ...], num_classes: int, seed: int) -> Network:
    """Construct a single-path network of the named architecture.

    mlp: depth hidden (dense + relu) blocks of the given width, then an
    output head. conv: depth (3x3 conv + relu) blocks with `width` channels
    and padding 1, then flatten + dense head. With residual=True one extra
    shape-preserving skip block is appended after the stack.
    """
    if arch not in ARCHS:
        raise ValueError(f"unknown arch {arch!r}; expected one of {ARCHS}")
    if width < 1 or depth < 1:
        raise ValueError("width and depth must be positive")
    rng = np.random.default_rng(seed)
    layers = []
    if arch == "mlp":
        (dim,) = in_shape
        prev = dim
        for _ in range(depth):
            layers.append(Dense(prev, width, bias=True, rng=rng))
            layers.append(ReLU())
            prev = width
        if residual:
            layers.append(ResidualBlock([Dense(width, width, bias=True, rng=rng),
                                         ReLU()]))
        layers.append(Dense(prev, num_classes, bias=True, rng=rng))
    else:
        c, h, w = in_shape
        prev = c
        for _ in range(depth):
            layers.append(Conv2d(prev, width, 3, padding=1, bias=False, rng=rng))
            layers.append(ReLU())
            prev = width
        if residual:
            layers.append(ResidualBlock([
                Conv2d(width, width, 3, padding=1, bias=False, rng=rng), ReLU()]))
        layers.append(Flatten())
        layers.append(Dense(prev * h * w, num_classes, bias=True, rng=rng))
    net = Network(layers)
    net.check_shapes(in_shape)
    return net
