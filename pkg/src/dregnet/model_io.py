"""Self-describing binary model files.

Layout: 8-byte magic, uint32 format version, uint32 header length, a JSON
header listing the layers (kind, constructor settings, parameter names and
shapes), then the parameter payloads as row-major little-endian float64 in
header order.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .dreg import DRegLayer
from .nn import AvgPool2d, Conv2d, Dense, Flatten, Network, ReLU, ResidualBlock
from .tensor import Tensor

MAGIC = b"DREGMDL\x00"
VERSION = 1


class ModelFormatError(ValueError):
    """File is not a valid model of a supported version."""


def _layer_spec(layer) -> dict:
    spec: dict = {"kind": layer.kind}
    if layer.kind == "dense":
        spec["settings"] = {"in_dim": layer.in_dim, "out_dim": layer.out_dim,
                            "bias": layer.b is not None}
    elif layer.kind == "conv2d":
        spec["settings"] = {"in_ch": layer.in_ch, "out_ch": layer.out_ch,
                            "kernel": layer.kernel, "stride": layer.stride,
                            "padding": layer.padding, "bias": layer.b is not None}
    elif layer.kind == "avgpool":
        spec["settings"] = {"pool": layer.pool, "stride": layer.stride}
    elif layer.kind in ("relu", "flatten"):
        spec["settings"] = {}
    elif layer.kind == "residual":
        spec["settings"] = {"body": [_layer_spec(sub) for sub in layer.body]}
    elif layer.kind == "dreg":
        inner = layer.to_single("r")
        spec["settings"] = {"inner": _layer_spec(inner)}
    else:
        raise ModelFormatError(f"cannot serialize layer kind {layer.kind!r}")
    spec["params"] = [{"name": name, "shape": list(t.shape)}
                      for name, t in layer.params().items()]
    return spec


def _build_layer(spec: dict):
    kind = spec["kind"]
    s = spec.get("settings", {})
    if kind == "dense":
        return Dense(s["in_dim"], s["out_dim"], bias=s["bias"])
    if kind == "conv2d":
        return Conv2d(s["in_ch"], s["out_ch"], s["kernel"], stride=s["stride"],
                      padding=s["padding"], bias=s["bias"])
    if kind == "relu":
        return ReLU()
    if kind == "flatten":
        return Flatten()
    if kind == "avgpool":
        return AvgPool2d(s["pool"], s["stride"])
    if kind == "residual":
        return ResidualBlock([_build_layer(sub) for sub in s["body"]])
    if kind == "dreg":
        return DRegLayer(_build_layer(s["inner"]), epsilon_init=1e-12, rng_seed=0)
    raise ModelFormatError(f"unknown layer kind {kind!r} in model file")


def save_model(net: Network, path: str, meta: dict | None = None) -> None:
    """Serialize a network; meta is free-form JSON stored in the header."""
    header = {
        "layers": [_layer_spec(layer) for layer in net.layers],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(blob)))
        fh.write(blob)
        for _, tensor in net.param_items():
            fh.write(np.ascontiguousarray(tensor.data, dtype="<f8").tobytes())


def load_model(path: str) -> tuple[Network, dict]:
    """Read a model file back into a Network; returns (net, meta)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 8 or blob[:len(MAGIC)] != MAGIC:
        raise ModelFormatError(f"{path}: not a model file (bad magic)")
    version, header_len = struct.unpack_from("<II", blob, len(MAGIC))
    if version != VERSION:
        raise ModelFormatError(f"{path}: unsupported format version {version}")
    start = len(MAGIC) + 8
    if len(blob) < start + header_len:
        raise ModelFormatError(f"{path}: truncated header")
    header = json.loads(blob[start:start + header_len].decode("utf-8"))
    net = Network([_build_layer(spec) for spec in header["layers"]])
    offset = start + header_len
    for (key, current), spec in zip(net.param_items(),
                                    (p for layer in header["layers"]
                                     for p in layer["params"])):
        shape = tuple(spec["shape"])
        if shape != current.shape:
            raise ModelFormatError(f"{path}: header/param shape mismatch at {key}")
        count = int(np.prod(shape))
        end = offset + 8 * count
        if end > len(blob):
            raise ModelFormatError(f"{path}: truncated payload at {key}")
        values = np.frombuffer(blob[offset:end], dtype="<f8").reshape(shape)
        net.set_param(key, Tensor(values))
        offset = end
    if offset != len(blob):
        raise ModelFormatError(f"{path}: trailing bytes after payloads")
    return net, header.get("meta", {})
