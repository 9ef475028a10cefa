"""Diagnostics CSV files and binary checkpoints.

The checkpoint layout is documented byte by byte in
``docs/checkpoint_format.md``; keep the two in sync.
"""

from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fields import State, XNorms
from .functionals import DiagnosticsRow
from .spectral import Grid

DIAGNOSTICS_SCHEMA = 1
CHECKPOINT_MAGIC = b"KSNSCKPT"
CHECKPOINT_VERSION = 1
_MASK64 = (1 << 64) - 1


# -- diagnostics ---------------------------------------------------------------------


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return format(v, ".17g")


class DiagnosticsWriter:
    """Append-only CSV writer; every row is flushed, so a crash leaves a valid prefix.

    Args:
        path: Output file.
        append: Continue an existing file (resume) instead of truncating it.
            An existing footer is dropped before appending.
    """

    def __init__(self, path, append: bool = False):
        self.path = Path(path)
        self.columns = DiagnosticsRow.columns()
        if append and self.path.exists():
            text = self.path.read_text(encoding="utf-8")
            lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
            if not lines or lines[0].split(",") != self.columns:
                raise ValueError(f"{self.path} is not a diagnostics file with the current schema")
            self.path.write_text("\n".join(lines) + "\n", encoding="utf-8")
            self._fh = open(self.path, "a", encoding="utf-8", newline="")
        else:
            self._fh = open(self.path, "w", encoding="utf-8", newline="")
            self._fh.write(",".join(self.columns) + "\n")
            self._fh.flush()

    def write_row(self, row: DiagnosticsRow) -> None:
        self._fh.write(",".join(format_value(v) for v in row.values()) + "\n")
        self._fh.flush()

    def write_footer(self, payload: dict) -> None:
        self._fh.write("# " + json.dumps(payload, sort_keys=True, allow_nan=True) + "\n")
        self._fh.flush()

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass
class Diagnostics:
    columns: list
    data: np.ndarray
    footer: dict | None

    def column(self, name: str) -> np.ndarray:
        return self.data[:, self.columns.index(name)]


def read_diagnostics(path) -> Diagnostics:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    footer = None
    body = []
    for ln in lines:
        if ln.startswith("# "):
            footer = json.loads(ln[2:])
        elif ln:
            body.append(ln)
    if not body:
        raise ValueError(f"{path} has no header line")
    columns = body[0].split(",")
    rows = [[float(x) for x in ln.split(",")] for ln in body[1:]]
    data = np.array(rows, float).reshape(len(rows), len(columns))
    return Diagnostics(columns, data, footer)


# -- checkpoints ----------------------------------------------------------------------


@dataclass
class Checkpoint:
    state: State
    step: int
    config_hash: bytes
    config_text: str
    running: XNorms | None
    rng_state: dict | None
    positivity_count: int = 0


class CheckpointError(ValueError):
    pass


def _u128(value: int) -> bytes:
    return struct.pack("<QQ", value & _MASK64, (value >> 64) & _MASK64)


def _read_u128(buf: bytes, off: int) -> tuple[int, int]:
    lo, hi = struct.unpack_from("<QQ", buf, off)
    return lo | (hi << 64), off + 16


def encode_checkpoint(ck: Checkpoint) -> bytes:
    state = ck.state
    g = state.grid
    parts = [
        CHECKPOINT_MAGIC,
        struct.pack("<IIddQQ", CHECKPOINT_VERSION, g.N, g.L, state.time, ck.step, ck.positivity_count),
    ]
    if len(ck.config_hash) != 32:
        raise CheckpointError("config hash must be 32 bytes")
    parts.append(ck.config_hash)
    cfg_bytes = ck.config_text.encode("utf-8")
    parts.append(struct.pack("<I", len(cfg_bytes)))
    parts.append(cfg_bytes)
    if ck.running is None:
        parts.append(struct.pack("<I", 0) + struct.pack("<4d", *([math.nan] * 4)))
    else:
        parts.append(struct.pack("<I", 1) + struct.pack("<4d", *ck.running))
    if ck.rng_state is None:
        parts.append(struct.pack("<I", 0) + bytes(64))
    else:
        bg = ck.rng_state["bit_generator"]
        if bg["bit_generator"] != "PCG64":
            raise CheckpointError("only PCG64 streams can be checkpointed")
        parts.append(struct.pack("<I", 1))
        parts.append(struct.pack("<QIQ", ck.rng_state["seed"], ck.rng_state["J"], ck.rng_state["steps"]))
        parts.append(_u128(int(bg["state"]["state"])))
        parts.append(_u128(int(bg["state"]["inc"])))
        parts.append(struct.pack("<II", int(bg["has_uint32"]), int(bg["uinteger"])))
        parts.append(bytes(4))
    rows, cols = g.spectral_shape
    parts.append(struct.pack("<II", rows, cols))
    parts.append(np.ascontiguousarray(state.density_hat, dtype="<c16").tobytes())
    parts.append(np.ascontiguousarray(state.velocity_hat, dtype="<c16").tobytes())
    blob = b"".join(parts)
    return blob + struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF)


def decode_checkpoint(blob: bytes) -> Checkpoint:
    if len(blob) < 8 or blob[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic bytes)")
    (crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != crc:
        raise CheckpointError("checkpoint checksum mismatch (file is truncated or corrupted)")
    off = 8
    version, N, L, time, step, pos_count = struct.unpack_from("<IIddQQ", blob, off)
    off += struct.calcsize("<IIddQQ")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    config_hash = blob[off : off + 32]
    off += 32
    (clen,) = struct.unpack_from("<I", blob, off)
    off += 4
    config_text = blob[off : off + clen].decode("utf-8")
    off += clen
    (has_running,) = struct.unpack_from("<I", blob, off)
    off += 4
    sups = struct.unpack_from("<4d", blob, off)
    off += 32
    running = XNorms(*sups) if has_running else None
    (has_rng,) = struct.unpack_from("<I", blob, off)
    off += 4
    rng_state = None
    if has_rng:
        seed, J, steps = struct.unpack_from("<QIQ", blob, off)
        off += struct.calcsize("<QIQ")
        st, off = _read_u128(blob, off)
        inc, off = _read_u128(blob, off)
        has32, uinteger = struct.unpack_from("<II", blob, off)
        off += 12
        rng_state = {
            "seed": seed,
            "J": J,
            "steps": steps,
            "bit_generator": {
                "bit_generator": "PCG64",
                "state": {"state": st, "inc": inc},
                "has_uint32": has32,
                "uinteger": uinteger,
            },
        }
    else:
        off += 64
    rows, cols = struct.unpack_from("<II", blob, off)
    off += 8
    grid = Grid(N, L)
    if (rows, cols) != grid.spectral_shape:
        raise CheckpointError(f"spectral shape {(rows, cols)} does not match N={N}")
    count = rows * cols
    nh = np.frombuffer(blob, dtype="<c16", count=count, offset=off).reshape(rows, cols).astype(complex)
    off += 16 * count
    uh = np.frombuffer(blob, dtype="<c16", count=2 * count, offset=off).reshape(2, rows, cols).astype(complex)
    off += 32 * count
    if off != len(blob) - 4:
        raise CheckpointError("checkpoint has trailing bytes")
    return Checkpoint(State(grid, time, nh, uh), step, config_hash, config_text, running, rng_state, pos_count)


def write_checkpoint(path, ck: Checkpoint) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode_checkpoint(ck))
    tmp.replace(path)


def read_checkpoint(path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())


def write_snapshot(path, state: State) -> None:
    """Plot-ready physical fields ``(x, y, n, c, u, v)`` as ``.npz``."""
    g = state.grid
    u = state.velocity
    np.savez(path, time=state.time, x=g.x, y=g.y, n=state.density, c=state.chemical, u=u[0], v=u[1])
