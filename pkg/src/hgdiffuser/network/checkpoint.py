"""Binary checkpoints.

Layout: ``b"HGDF"``, uint32 format version, uint32 header length, UTF-8 JSON
header (network config, parameter count, free-form metadata), then the flat
parameter vector as little-endian float64. A ``.json`` sidecar repeats the
header for humans and tools.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import ParseError, ShapeMismatch, VersionError
from .params import NetworkConfig, Params, param_count

MAGIC = b"HGDF"
FORMAT_VERSION = 1


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def save_params(path, params: Params, meta: dict | None = None) -> None:
    header = {
        "config": params.cfg.to_dict(),
        "count": params.size,
        "seed": params.seed,
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(params.flat.astype("<f8").tobytes())
    sidecar_path(path).write_text(json.dumps(header, indent=1, sort_keys=True) + "\n")


def read_header(path) -> tuple[dict, int]:
    """(header, byte offset of the data block)."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(12)
        if len(head) < 12 or head[:4] != MAGIC:
            raise ParseError(path, "magic", "not a checkpoint file")
        version, n = struct.unpack("<II", head[4:])
        if version != FORMAT_VERSION:
            raise VersionError(path, "version", f"checkpoint version {version}, expected {FORMAT_VERSION}")
        try:
            header = json.loads(fh.read(n).decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ParseError(path, "header", str(exc)) from exc
    return header, 12 + n


def load_params(path, config: NetworkConfig | None = None) -> tuple[Params, dict]:
    """Params and the free-form metadata; ``config`` if given must match the file."""
    path = Path(path)
    header, offset = read_header(path)
    cfg = NetworkConfig.from_dict(header["config"])
    if config is not None and config != cfg:
        raise ShapeMismatch(f"{path}: checkpoint config {cfg} differs from requested {config}")
    data = np.frombuffer(path.read_bytes()[offset:], dtype="<f8").astype(np.float64)
    if data.size != param_count(cfg) or header.get("count") != data.size:
        raise ShapeMismatch(f"{path}: {data.size} values stored, config needs {param_count(cfg)}")
    return Params(cfg, data, header.get("seed")), header.get("meta", {})
