"""Binary checkpoint format for discriminator and generator parameters.

Layout (all integers little-endian)::

    offset  size  field
    0       8     magic b"ATKGECKP"
    8       4     u32 format version (currently 1)
    12      16    model tag, ASCII, NUL padded
    28      4     u32 |E|
    32      4     u32 |R|
    36      4     u32 bucket count
    40      4     u32 d
    44      4     norm, ASCII, NUL padded ("l1" / "l2")
    48      8     f64 temporal fraction (gamma)
    56      4     u32 flags; bit 0 set when a generator section follows
    60      4     u32 byte length L of the JSON manifest
    64      L     UTF-8 JSON manifest (sorted keys)
    64+L    ...   tables as little-endian float64, row-major, in manifest order

The manifest lists the model tables as ``[name, rows, cols]`` triples under
``"model"``; when the flag is set, ``"generator"`` holds ``backbone``,
``dim`` and its own table list, whose data follows the model tables. Free
form run metadata (best epoch, effective config) sits under ``"meta"``.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import DataError
from .generator import Generator
from .models import ModelKind, TKGEModel, build_model
from .numerics import rng_stream

MAGIC = b"ATKGECKP"
VERSION = 1
FLAG_GENERATOR = 1
_HEADER = struct.Struct("<8sI16sIIII4sdII")


class CheckpointError(DataError):
    """Malformed, truncated or incompatible checkpoint."""


@dataclass
class Checkpoint:
    model: TKGEModel
    generator: Generator | None = None
    meta: dict = field(default_factory=dict)

    @property
    def kind(self) -> ModelKind:
        return self.model.kind

    def check_compatible(self, n_entities: int, n_relations: int, n_buckets: int):
        m = self.model
        have = (m.n_entities, m.n_relations, m.n_buckets)
        want = (int(n_entities), int(n_relations), int(n_buckets))
        if have != want:
            raise CheckpointError(
                f"checkpoint was trained for |E|={have[0]}, |R|={have[1]}, buckets={have[2]} "
                f"but the dataset has |E|={want[0]}, |R|={want[1]}, buckets={want[2]}"
            )


def _pad(text: str, width: int) -> bytes:
    raw = text.encode("ascii")
    if len(raw) > width:
        raise CheckpointError(f"{text!r} does not fit in {width} bytes")
    return raw.ljust(width, b"\0")


def _table_list(tables):
    return [[name, t.rows, t.dim] for name, t in tables.items()]


def dumps(model: TKGEModel, generator: Generator | None = None, meta: dict | None = None) -> bytes:
    manifest = {"model": _table_list(model.tables), "meta": meta or {}}
    if generator is not None:
        manifest["generator"] = {
            "backbone": generator.backbone,
            "dim": generator.dim,
            "tables": _table_list(generator.tables),
        }
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    kind = model.kind
    header = _HEADER.pack(
        MAGIC,
        VERSION,
        _pad(kind.tag, 16),
        model.n_entities,
        model.n_relations,
        model.n_buckets,
        model.dim,
        _pad(kind.norm, 4),
        float(kind.de_fraction),
        FLAG_GENERATOR if generator is not None else 0,
        len(blob),
    )
    parts = [header, blob]
    groups = [model.tables] + ([generator.tables] if generator is not None else [])
    for tables in groups:
        for t in tables.values():
            parts.append(np.ascontiguousarray(t.values, dtype="<f8").tobytes())
    return b"".join(parts)


def _fill(tables, listing, buf, offset, where):
    if [n for n, _, _ in listing] != list(tables):
        raise CheckpointError(f"{where} table list {[n for n, _, _ in listing]} does not match {list(tables)}")
    for name, rows, cols in listing:
        t = tables[name]
        if (rows, cols) != t.values.shape:
            raise CheckpointError(f"{where} table {name!r} has shape {(rows, cols)}, expected {t.values.shape}")
        nbytes = rows * cols * 8
        if offset + nbytes > len(buf):
            raise CheckpointError("checkpoint is truncated")
        t.values[...] = np.frombuffer(buf, dtype="<f8", count=rows * cols, offset=offset).reshape(rows, cols)
        offset += nbytes
    return offset


def loads(buf: bytes) -> Checkpoint:
    if len(buf) < _HEADER.size:
        raise CheckpointError("file too short for a checkpoint header")
    magic, version, tag, n_e, n_r, n_b, dim, norm, frac, flags, mlen = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = _HEADER.size
    try:
        manifest = json.loads(buf[start:start + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt manifest: {exc}") from None
    try:
        kind = ModelKind(tag.rstrip(b"\0").decode("ascii"), norm.rstrip(b"\0").decode("ascii"), frac)
    except ValueError as exc:
        raise CheckpointError(str(exc)) from None
    # parameters are overwritten below; the throwaway init only fixes shapes
    scratch = rng_stream(0, "checkpoint")
    model = build_model(kind, n_e, n_r, n_b, dim, scratch)
    offset = _fill(model.tables, manifest["model"], buf, start + mlen, "model")
    generator = None
    if flags & FLAG_GENERATOR:
        g = manifest.get("generator")
        if g is None:
            raise CheckpointError("generator flag set but manifest has no generator section")
        generator = Generator(n_e, n_r, n_b, int(g["dim"]), scratch, backbone=g["backbone"])
        offset = _fill(generator.tables, g["tables"], buf, offset, "generator")
    if offset != len(buf):
        raise CheckpointError(f"{len(buf) - offset} trailing bytes after the last table")
    return Checkpoint(model, generator, manifest.get("meta", {}))


def save(path, model: TKGEModel, generator: Generator | None = None, meta: dict | None = None) -> Path:
    path = Path(path)
    path.write_bytes(dumps(model, generator, meta))
    return path


def load(path) -> Checkpoint:
    return loads(Path(path).read_bytes())
