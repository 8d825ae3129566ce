"""On-disk formats.

Dataset file
    One instance per line: ``instance_id,scene_id,truth_identity,f_1,...,f_D``.
    ``truth_identity`` is -1 when withheld. Floats are written with ``repr`` so
    they reload bit-exactly.

Truth sidecar
    CSV with header ``instance_id,truth_identity``.

Memory snapshot (``memory.snap``)
    Little-endian. Header: 5-byte magic ``CGPS1``, uint32 D, uint32 N_a. Body:
    N_a int64 instance ids, N_a*D float64 features (row-major), N_a int64
    cluster assignments (-1 for unclustered).

Report, trajectory and ablation tables
    CSV with a header row naming the dataclass fields, one row per record.
"""

from __future__ import annotations

import csv
import dataclasses
import struct
import typing
from pathlib import Path
from typing import Iterable, Sequence, TypeVar

import numpy as np

from .core import NORM_TOL, FeatureMemory, Instance, is_unit

MAGIC = b"CGPS1"
_HEADER = struct.Struct("<5sII")

T = TypeVar("T")


class FormatError(ValueError):
    """A file exists but does not follow its documented layout."""


class DimensionMismatch(FormatError):
    def __init__(self, expected: int, found: int):
        super().__init__(f"dimension mismatch: expected D={expected}, found D={found}")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


# -- dataset ---------------------------------------------------------------

def write_dataset(path, instances: Iterable[Instance], include_truth: bool = False) -> None:
    with open(path, "w", newline="") as fh:
        for inst in instances:
            truth = inst.truth_identity if include_truth and inst.truth_identity is not None else -1
            fh.write(",".join([str(inst.instance_id), str(inst.scene_id), str(truth)]
                              + [repr(float(x)) for x in inst.feature]) + "\n")


def read_dataset(path, dims: int | None = None) -> list[Instance]:
    """Parse a dataset file; every error names the offending line."""
    out: list[Instance] = []
    seen: set[int] = set()
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) < 4:
                raise FormatError(f"{path}:{lineno}: expected id, scene, truth and at least one feature")
            try:
                iid, sid, truth = (int(p) for p in parts[:3])
                feat = np.array([float(p) for p in parts[3:]])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
            if dims is None:
                dims = feat.size
            elif feat.size != dims:
                raise DimensionMismatch(dims, feat.size)
            if not np.all(np.isfinite(feat)) or not is_unit(feat, NORM_TOL):
                raise FormatError(f"{path}:{lineno}: feature must be finite and L2-normalized")
            if iid in seen:
                raise FormatError(f"{path}:{lineno}: duplicate instance id {iid}")
            seen.add(iid)
            out.append(Instance(iid, sid, feat, None if truth < 0 else truth))
    if not out:
        raise FormatError(f"{path}: no instances")
    return out


def write_truth(path, ids: Sequence[int], truth: Sequence[int]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["instance_id", "truth_identity"])
        w.writerows([int(i), int(t)] for i, t in zip(ids, truth))


def read_truth(path) -> dict[int, int]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["instance_id", "truth_identity"]:
            raise FormatError(f"{path}: header must be instance_id,truth_identity")
        try:
            return {int(r["instance_id"]): int(r["truth_identity"]) for r in reader}
        except (TypeError, ValueError) as exc:
            raise FormatError(f"{path}:{reader.line_num}: {exc}") from None


# -- memory snapshot -------------------------------------------------------

def write_snapshot(path, memory: FeatureMemory) -> None:
    n, d = memory.count, memory.dims
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, d, n))
        fh.write(memory.ids.astype("<i8").tobytes())
        fh.write(memory.features.astype("<f8").tobytes())
        fh.write(memory.assignment.astype("<i8").tobytes())


def read_snapshot(path) -> FeatureMemory:
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(blob)} bytes)")
    magic, d, n = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad header field 'magic' ({magic!r}, expected {MAGIC!r})")
    if d == 0:
        raise FormatError(f"{path}: bad header field 'D' (0)")
    expected = _HEADER.size + 8 * n * (d + 2)
    if len(blob) != expected:
        raise FormatError(f"{path}: header field 'N_a'={n} with D={d} needs {expected} bytes, "
                          f"file has {len(blob)}")
    off = _HEADER.size
    ids = np.frombuffer(blob, "<i8", n, off)
    off += 8 * n
    feats = np.frombuffer(blob, "<f8", n * d, off).reshape(n, d)
    off += 8 * n * d
    assign = np.frombuffer(blob, "<i8", n, off)
    try:
        return FeatureMemory(ids.astype(np.int64), feats.astype(np.float64), assign.astype(np.int64))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


# -- tables ----------------------------------------------------------------

def write_rows(path, rows: Sequence, cls: type | None = None) -> None:
    """Write dataclass records as CSV; the header follows field order."""
    cls = cls or type(rows[0])
    names = [f.name for f in dataclasses.fields(cls)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for r in rows:
            w.writerow([_fmt(getattr(r, k)) for k in names])


def _parse(text: str, tp):
    origin = typing.get_origin(tp)
    if origin is typing.Union or (origin is not None and type(None) in typing.get_args(tp)):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        return None if text == "" else _parse(text, args[0])
    if tp is bool:
        if text not in ("0", "1"):
            raise ValueError(f"expected 0 or 1, got {text!r}")
        return text == "1"
    if tp is int:
        return int(text)
    if tp is float:
        return float(text)
    return text


def read_rows(path, cls: type[T]) -> list[T]:
    hints = typing.get_type_hints(cls)
    names = [f.name for f in dataclasses.fields(cls)]
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != names:
            raise FormatError(f"{path}: header {header} does not match {names}")
        out = []
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(names):
                raise FormatError(f"{path}:{lineno}: expected {len(names)} fields, got {len(rec)}")
            try:
                out.append(cls(**{k: _parse(v, hints[k]) for k, v in zip(names, rec)}))
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    return out

