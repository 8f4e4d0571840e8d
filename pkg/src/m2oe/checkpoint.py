"""Plain-text checkpoint format.

    M2OE-CKPT v1
    key=value key=value ...          (the full ModelConfig)
    <parameter name>
    <space-separated shape>
    <space-separated values, 17 significant digits>
    ... one three-line block per parameter, in model order
"""

from __future__ import annotations

import os

import numpy as np

from .config import ModelConfig
from .errors import ConfigError, FormatError
from .model import M2oE

MAGIC = "M2OE-CKPT"
VERSION = "v1"


def save_checkpoint(model: M2oE, path) -> None:
    lines = [f"{MAGIC} {VERSION}", " ".join(f"{k}={v}" for k, v in model.config.to_pairs())]
    for name, p in model.named_parameters():
        lines.append(name)
        lines.append(" ".join(str(n) for n in p.values.shape))
        lines.append(" ".join(format(float(v), ".17g") for v in p.values.reshape(-1)))
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def _parse_header(line: str, path: str) -> None:
    parts = line.split()
    if len(parts) != 2 or parts[0] != MAGIC:
        raise FormatError(f"{path}: not an M2oE checkpoint (header {line[:40]!r})")
    if parts[1] != VERSION:
        raise FormatError(f"{path}: checkpoint version {parts[1]} is not supported (expected {VERSION})")


def load_checkpoint(path) -> M2oE:
    path = os.fspath(path)
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise FormatError(f"{path}: empty checkpoint")
    _parse_header(lines[0], path)
    if len(lines) < 2:
        raise FormatError(f"{path}: truncated checkpoint (no config line)")
    try:
        pairs = [tuple(tok.split("=", 1)) for tok in lines[1].split()]
        if any(len(p) != 2 for p in pairs):
            raise FormatError(f"{path}: malformed config line")
        config = ModelConfig.from_pairs(pairs, source=path)
    except ConfigError as exc:
        raise FormatError(f"{path}: bad config in checkpoint: {exc}") from None

    body = lines[2:]
    if len(body) % 3:
        raise FormatError(f"{path}: truncated checkpoint (dangling parameter block)")
    state = {}
    for i in range(0, len(body), 3):
        name, shape_line, value_line = body[i:i + 3]
        try:
            shape = tuple(int(s) for s in shape_line.split())
            values = np.array([float(v) for v in value_line.split()], dtype=np.float64)
        except ValueError:
            raise FormatError(f"{path}: unreadable block for parameter {name!r}") from None
        if values.size != int(np.prod(shape)):
            raise FormatError(f"{path}: parameter {name!r} has {values.size} values for shape {shape}")
        state[name] = values.reshape(shape)

    model = M2oE(config)
    expected = [name for name, _ in model.named_parameters()]
    missing = [n for n in expected if n not in state]
    if missing:
        raise FormatError(f"{path}: truncated checkpoint, missing {len(missing)} parameters "
                          f"starting at {missing[0]!r}")
    unexpected = sorted(set(state) - set(expected))
    if unexpected:
        raise FormatError(f"{path}: unexpected parameters {unexpected[:3]}")
    try:
        model.load_state_dict(state)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    return model
