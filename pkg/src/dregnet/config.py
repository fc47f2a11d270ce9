"""Flat key-value run configuration: parsing, defaults, resolved sidecars.

The format is one `section.key = value` assignment per line, with # line
comments. Unknown keys are rejected so that sweep configs stay diffable
against the documented key set.
"""

from __future__ import annotations

import os


class ConfigError(ValueError):
    """Malformed config text or an unknown/invalid key."""


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _str(text: str) -> str:
    return text.strip()


# key -> (parser, default); the resolved config carries every key.
SCHEMA: dict[str, tuple] = {
    "model.arch": (_str, "mlp"),
    "model.width": (int, 16),
    "model.depth": (int, 1),
    "model.residual": (_bool, False),
    "dreg.enabled": (_bool, False),
    "dreg.lambda": (float, 0.1),
    "dreg.position": (_str, "Block-R1"),
    "dreg.epsilon_init": (float, 0.01),
    "optim.eta": (float, 0.1),
    "optim.beta": (float, 0.9),
    "data.source": (_str, "blobs"),
    "data.path": (_str, ""),
    "data.seed": (int, 0),
    "data.batch_size": (int, 32),
    "data.devices": (int, 1),
    "data.classes": (int, 4),
    "data.n_per_class": (int, 100),
    "data.separation": (float, 8.0),
    "data.dim": (int, 16),
    "data.noise_std": (float, 0.5),
    "data.val_fraction": (float, 0.2),
    "run.epochs": (int, 10),
    "run.out_dir": (_str, "runs/out"),
    "run.seed": (int, 0),
    "sweep.lambda": (_str, "0.001,0.01,0.1,1,0"),
    "sweep.momentum": (_str, "0,0.5,0.9"),
    "sweep.position": (_str, ""),
    "sweep.batch_size": (_str, ""),
}

_CHOICES = {
    "model.arch": ("mlp", "conv"),
    "data.source": ("blobs", "spirals", "idx"),
}


def parse_config(text: str) -> dict:
    """Parse config text and apply defaults; returns a fully resolved dict."""
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        parser, _ = SCHEMA[key]
        try:
            values[key] = parser(val.strip())
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    resolved = {key: default for key, (_, default) in SCHEMA.items()}
    resolved.update(values)
    _validate(resolved)
    return resolved


def _validate(cfg: dict) -> None:
    for key, choices in _CHOICES.items():
        if cfg[key] not in choices:
            raise ConfigError(f"{key} must be one of {choices}, got {cfg[key]!r}")
    if cfg["data.source"] == "idx" and not cfg["data.path"]:
        raise ConfigError("data.source=idx requires data.path")
    if not 0.0 < cfg["data.val_fraction"] < 1.0:
        raise ConfigError("data.val_fraction must lie in (0, 1)")


def load_config(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def format_config(cfg: dict) -> str:
    """Render a resolved config back to the flat format, keys sorted."""
    lines = []
    for key in sorted(cfg):
        value = cfg[key]
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def write_resolved(cfg: dict, out_dir: str) -> str:
    """Write the fully resolved config sidecar; returns its path."""
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "config.resolved")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_config(cfg))
    return path


def parse_axis_values(text: str, kind: str) -> list:
    """Split a comma-separated sweep axis list into typed values."""
    items = [item.strip() for item in text.split(",") if item.strip()]
    if kind in ("lambda", "momentum"):
        return [float(item) for item in items]
    if kind == "batch-size":
        return [int(item) for item in items]
    return items
