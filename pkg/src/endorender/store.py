"""Parameter registry and the binary checkpoint format.

Checkpoint layout (little-endian)::

    8 bytes   magic b"ENDOCKPT"
    8 bytes   uint64 header length H
    H bytes   UTF-8 JSON header {"format", "config", "step", "params": [...]}
    padding   zeros up to an 8-byte boundary
    data      raw float64 arrays at the offsets listed in the header,
              offsets relative to the start of the data block
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"ENDOCKPT"
FORMAT_VERSION = 1

# parameter-name prefix -> reporting group
GROUPS = {
    "hash.": "hash",
    "mlp.": "mlp",
    "light.log_L0": "L0",
    "light.log_n": "n_exp",
    "light.log_q": "q_exp",
    "light.log_gamma": "gamma",
}


def group_of(name: str) -> str:
    for prefix, group in GROUPS.items():
        if name.startswith(prefix):
            return group
    return name


class ParamStore:
    """Named float64 arrays with same-shape gradient slots."""

    def __init__(self, params: dict[str, np.ndarray] | None = None, step: int = 0):
        self.values: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.step = step
        for name, value in (params or {}).items():
            self.add(name, value)

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self.values:
            raise KeyError(f"parameter {name!r} already registered")
        v = np.array(value, dtype=np.float64)
        self.values[name] = v
        self.grads[name] = np.zeros_like(v)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def names(self) -> list[str]:
        return list(self.values)

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def groups(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {}
        for name in self.values:
            out.setdefault(group_of(name), []).append(name)
        return out

    def copy(self) -> "ParamStore":
        other = ParamStore(step=self.step)
        for name, v in self.values.items():
            other.add(name, v.copy())
        return other

    def equals(self, other: "ParamStore") -> bool:
        return (self.names() == other.names()
                and all(np.array_equal(self.values[k], other.values[k]) for k in self.values))


def save_checkpoint(path: str | Path, store: ParamStore, config: dict) -> None:
    entries, offset = [], 0
    for name, v in store.values.items():
        entries.append({"name": name, "shape": list(v.shape), "offset": offset})
        offset += v.size * 8
    header = json.dumps({"format": FORMAT_VERSION, "config": config, "step": store.step,
                         "params": entries}, sort_keys=True).encode("utf-8")
    pad = (-(len(MAGIC) + 8 + len(header))) % 8
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        f.write(b"\0" * pad)
        for v in store.values.values():
            f.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[ParamStore, dict]:
    """Return ``(store, config)``; raises :class:`CheckpointError` on corrupt files."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic at offset 0")
    if len(raw) < 16:
        raise CheckpointError(f"{path}: truncated header length at offset 8")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    if 16 + hlen > len(raw):
        raise CheckpointError(f"{path}: header length {hlen} at offset 8 exceeds file size")
    try:
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    except UnicodeDecodeError as e:
        raise CheckpointError(f"{path}: header is not UTF-8 at offset {16 + e.start}") from e
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{path}: header parse error at offset {16 + e.pos}: {e.msg}") from e
    if not isinstance(header, dict) or header.get("format") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported header at offset 16")
    for key in ("config", "params"):
        if key not in header:
            raise CheckpointError(f"{path}: header at offset 16 lacks {key!r}")

    data_start = 16 + hlen + (-(16 + hlen)) % 8
    store = ParamStore(step=int(header.get("step", 0)))
    for e in header["params"]:
        shape = tuple(e["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        begin = data_start + int(e["offset"])
        if begin + count * 8 > len(raw):
            raise CheckpointError(f"{path}: parameter {e['name']!r} at offset {begin} runs past end of file")
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=begin).reshape(shape)
        store.add(e["name"], arr.astype(np.float64))
    return store, header["config"]
