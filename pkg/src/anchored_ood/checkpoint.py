"""Binary checkpoint format for :class:`~anchored_ood.nn.MlpModel`.

Layout::

    bytes 0..15   magic  b"ANCHOREDMLP\\x00CK01"
    bytes 16..23  uint64 little-endian length L of the metadata block
    next L bytes  UTF-8 text, one ``key=value`` per line, keys sorted
    remainder     float64 little-endian parameters W0, b0, W1, b1, ...
                  each flattened row-major

Metadata keys: ``format_version``, ``layer_sizes`` (comma separated),
``activation``, ``num_classes``, ``init_seed``, ``anchored`` and
``num_params``.  Unknown keys are preserved on read in ``extra``.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Dict, Tuple

import numpy as np

from .errors import CheckpointError
from .nn import MlpModel

MAGIC = b"ANCHOREDMLP\x00CK01"
FORMAT_VERSION = 1
assert len(MAGIC) == 16


def dumps(model: MlpModel, anchored: bool, extra: Dict[str, str] | None = None) -> bytes:
    meta = {
        "format_version": str(FORMAT_VERSION),
        "layer_sizes": ",".join(str(s) for s in model.layer_sizes),
        "activation": model.activation,
        "num_classes": str(model.num_classes),
        "init_seed": str(model.init_seed),
        "anchored": "true" if anchored else "false",
        "num_params": str(sum(p.size for p in model.params())),
    }
    for k, v in (extra or {}).items():
        if "=" in k or "\n" in k or "\n" in str(v):
            raise CheckpointError(f"metadata entry {k!r} is not encodable")
        meta.setdefault(k, str(v))
    text = "".join(f"{k}={meta[k]}\n" for k in sorted(meta)).encode("utf-8")
    body = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in model.params())
    return MAGIC + struct.pack("<Q", len(text)) + text + body


def loads(blob: bytes) -> Tuple[MlpModel, Dict[str, str]]:
    """Inverse of :func:`dumps`; returns ``(model, metadata)``."""
    if len(blob) < 24 or blob[:16] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic header)")
    (n_meta,) = struct.unpack("<Q", blob[16:24])
    if 24 + n_meta > len(blob):
        raise CheckpointError("truncated metadata block")
    meta = {}
    for line in blob[24 : 24 + n_meta].decode("utf-8").splitlines():
        key, sep, value = line.partition("=")
        if not sep:
            raise CheckpointError(f"malformed metadata line {line!r}")
        meta[key] = value
    if int(meta.get("format_version", -1)) != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format_version {meta.get('format_version')}")
    try:
        sizes = tuple(int(s) for s in meta["layer_sizes"].split(","))
        seed = int(meta["init_seed"])
        activation = meta["activation"]
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"incomplete metadata: {exc}") from exc

    if (len(blob) - 24 - n_meta) % 8:
        raise CheckpointError("parameter block is not a whole number of float64 values")
    data = np.frombuffer(blob, dtype="<f8", offset=24 + n_meta)
    shapes = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        shapes.extend(((fan_in, fan_out), (fan_out,)))
    expected = sum(int(np.prod(s)) for s in shapes)
    if data.size != expected:
        raise CheckpointError(f"parameter block holds {data.size} floats, expected {expected}")
    params, pos = [], 0
    for shape in shapes:
        size = int(np.prod(shape))
        params.append(data[pos : pos + size].astype(np.float64).reshape(shape))
        pos += size
    model = MlpModel(sizes, params[0::2], params[1::2], activation, seed)
    return model, meta


def save(path, model: MlpModel, anchored: bool, extra: Dict[str, str] | None = None) -> None:
    Path(path).write_bytes(dumps(model, anchored, extra))


def load(path) -> Tuple[MlpModel, Dict[str, str]]:
    return loads(Path(path).read_bytes())
