"""File formats: PLY point clouds, correspondence lists, transform JSON.

PLY support covers ASCII and binary-little-endian files with float or
double x/y/z vertex properties; unknown properties are skipped with a
warning. Writing always uses double precision so coordinates round-trip
losslessly. Output helpers write to a temporary file and rename, so a
failing command never leaves a partial artifact behind.
"""

from __future__ import annotations

import contextlib
import json
import os
import struct
import tempfile
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .geometry import PointCloud, RigidTransform
from .matching import Correspondence

TRANSFORM_SCHEMA_VERSION = 1


class ParseError(ValueError):
    """Malformed input file; message carries location context."""


_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


@dataclass
class _Element:
    name: str
    count: int
    properties: list  # ("scalar", type, name) or ("list", count_t, item_t, name)


def _parse_header(raw: bytes, path: str):
    end = raw.find(b"end_header")
    if end < 0:
        raise ParseError(f"{path}: missing end_header in PLY header")
    newline = raw.find(b"\n", end)
    if newline < 0:
        raise ParseError(f"{path}: header not terminated by newline")
    body_offset = newline + 1
    try:
        lines = raw[:newline].decode("ascii").splitlines()
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: PLY header is not ASCII") from exc
    if not lines or lines[0].strip() != "ply":
        raise ParseError(f"{path}: missing 'ply' magic line")

    fmt = None
    elements: list[_Element] = []
    for line in lines[1:]:
        parts = line.split()
        if not parts or parts[0] == "comment" or parts[0] == "obj_info":
            continue
        if parts[0] == "format":
            if len(parts) != 3:
                raise ParseError(f"{path}: malformed format line {line!r}")
            fmt = parts[1]
        elif parts[0] == "element":
            if len(parts) != 3:
                raise ParseError(f"{path}: malformed element line {line!r}")
            try:
                elements.append(_Element(parts[1], int(parts[2]), []))
            except ValueError as exc:
                raise ParseError(f"{path}: bad element count in {line!r}") from exc
        elif parts[0] == "property":
            if not elements:
                raise ParseError(f"{path}: property before any element")
            if parts[1] == "list":
                if len(parts) != 5:
                    raise ParseError(f"{path}: malformed list property {line!r}")
                elements[-1].properties.append(("list", parts[2], parts[3], parts[4]))
            else:
                if len(parts) != 3:
                    raise ParseError(f"{path}: malformed property {line!r}")
                elements[-1].properties.append(("scalar", parts[1], parts[2]))
        else:
            raise ParseError(f"{path}: unrecognized header line {line!r}")

    if fmt is None:
        raise ParseError(f"{path}: PLY header missing format line")
    if fmt not in ("ascii", "binary_little_endian"):
        raise ParseError(f"{path}: unsupported PLY format {fmt!r}")
    return fmt, elements, body_offset


def _ply_dtype(type_name: str, path: str) -> np.dtype:
    try:
        return np.dtype("<" + _PLY_TYPES[type_name])
    except KeyError:
        raise ParseError(f"{path}: unknown PLY type {type_name!r}") from None


def _read_binary_element(raw: bytes, offset: int, elem: _Element, path: str):
    """Returns (structured array or None, new offset). List properties force
    the slow row walk; scalar-only elements map straight onto a dtype."""
    if all(p[0] == "scalar" for p in elem.properties):
        for p in elem.properties:
            if p[1] not in _PLY_TYPES:
                raise ParseError(f"{path}: unknown PLY type {p[1]!r}")
        try:
            dtype = np.dtype([(p[2], "<" + _PLY_TYPES[p[1]])
                              for p in elem.properties])
        except ValueError as exc:
            raise ParseError(f"{path}: bad property layout in element "
                             f"'{elem.name}': {exc}") from exc
        nbytes = dtype.itemsize * elem.count
        if offset + nbytes > len(raw):
            have = (len(raw) - offset) // dtype.itemsize
            raise ParseError(
                f"{path}: truncated at byte {len(raw)}: element "
                f"'{elem.name}' expects {elem.count} rows, found {have}")
        data = np.frombuffer(raw, dtype=dtype, count=elem.count, offset=offset)
        return data, offset + nbytes

    for row in range(elem.count):
        for prop in elem.properties:
            if prop[0] == "scalar":
                size = _ply_dtype(prop[1], path).itemsize
                offset += size
            else:
                count_dt = _ply_dtype(prop[1], path)
                item_dt = _ply_dtype(prop[2], path)
                if offset + count_dt.itemsize > len(raw):
                    raise ParseError(
                        f"{path}: truncated at byte {len(raw)} in element "
                        f"'{elem.name}' row {row}")
                n_items = int(np.frombuffer(raw, count_dt, 1, offset)[0])
                offset += count_dt.itemsize + n_items * item_dt.itemsize
            if offset > len(raw):
                raise ParseError(
                    f"{path}: truncated at byte {len(raw)} in element "
                    f"'{elem.name}' row {row}")
    return None, offset


def read_ply(path) -> PointCloud:
    """Read x/y/z coordinates from an ASCII or binary-little-endian PLY."""
    path = Path(path)
    raw = path.read_bytes()
    fmt, elements, offset = _parse_header(raw, str(path))

    vertex = next((e for e in elements if e.name == "vertex"), None)
    if vertex is None:
        raise ParseError(f"{path}: no vertex element")
    prop_names = [p[-1] for p in vertex.properties]
    for axis in ("x", "y", "z"):
        if axis not in prop_names:
            raise ParseError(f"{path}: vertex element lacks property '{axis}'")
        kind = next(p for p in vertex.properties if p[-1] == axis)
        if kind[0] != "scalar" or kind[1] not in ("float", "float32",
                                                  "double", "float64"):
            raise ParseError(f"{path}: vertex property '{axis}' must be "
                             "a float or double scalar")
    extras = [n for n in prop_names if n not in ("x", "y", "z")]
    if extras:
        warnings.warn(f"{path}: ignoring vertex properties {extras}",
                      stacklevel=2)

    if fmt == "ascii":
        try:
            text = raw[offset:].decode("ascii")
        except UnicodeDecodeError as exc:
            raise ParseError(f"{path}: ASCII body contains non-ASCII bytes") from exc
        rows = [ln.split() for ln in text.splitlines() if ln.strip()]
        cursor = 0
        coords = None
        for elem in elements:
            if len(rows) - cursor < elem.count:
                raise ParseError(
                    f"{path}: truncated body: element '{elem.name}' expects "
                    f"{elem.count} rows, found {len(rows) - cursor}")
            if elem.name == "vertex":
                block = rows[cursor:cursor + elem.count]
                idx = [prop_names.index(a) for a in ("x", "y", "z")]
                try:
                    coords = np.array([[float(r[i]) for i in idx]
                                       for r in block]).reshape(-1, 3)
                except (ValueError, IndexError) as exc:
                    raise ParseError(f"{path}: malformed vertex row") from exc
                break  # later elements are irrelevant for the cloud
            cursor += elem.count
        return PointCloud(coords, id=path.stem)

    coords = None
    for elem in elements:
        data, offset = _read_binary_element(raw, offset, elem, str(path))
        if elem.name == "vertex":
            coords = np.stack([data["x"].astype(np.float64),
                               data["y"].astype(np.float64),
                               data["z"].astype(np.float64)], axis=1)
            break
    return PointCloud(coords, id=path.stem)


def write_ply(cloud: PointCloud, path, binary: bool = False) -> None:
    """Write a cloud with double-precision x/y/z (lossless round trip)."""
    path = Path(path)
    header = [
        "ply",
        "format binary_little_endian 1.0" if binary else "format ascii 1.0",
        f"element vertex {len(cloud)}",
        "property double x",
        "property double y",
        "property double z",
        "end_header",
    ]
    if binary:
        body = cloud.points.astype("<f8").tobytes()
        path.write_bytes(("\n".join(header) + "\n").encode("ascii") + body)
    else:
        rows = "\n".join(" ".join(f"{v:.17g}" for v in p) for p in cloud.points)
        text = "\n".join(header) + ("\n" + rows if len(cloud) else "") + "\n"
        path.write_text(text, encoding="ascii")


@dataclass(frozen=True)
class CorrespondenceRecords:
    """Matches plus the optional per-match columns the text format carries."""

    matches: tuple[Correspondence, ...]
    inlier_probs: NDArray[np.float64] | None = None
    labels: NDArray[np.bool_] | None = None


def read_correspondences(path) -> CorrespondenceRecords:
    """Parse `p q distance [inlier_prob] [label]` lines (uniform width)."""
    path = Path(path)
    matches: list[Correspondence] = []
    probs: list[float] = []
    labels: list[bool] = []
    width = None
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if width is None:
                width = len(parts)
                if width not in (3, 4, 5):
                    raise ParseError(f"{path}:{lineno}: expected 3-5 columns, "
                                     f"got {width}")
            elif len(parts) != width:
                raise ParseError(f"{path}:{lineno}: expected {width} columns, "
                                 f"got {len(parts)}")
            try:
                p, q = int(parts[0]), int(parts[1])
                dist = float(parts[2])
                if width >= 4:
                    probs.append(float(parts[3]))
                if width == 5:
                    labels.append(bool(int(parts[4])))
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: malformed value") from exc
            try:
                matches.append(Correspondence(p, q, dist))
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
    return CorrespondenceRecords(
        matches=tuple(matches),
        inlier_probs=np.array(probs) if probs else None,
        labels=np.array(labels, dtype=bool) if labels else None,
    )


def write_correspondences(path, matches, inlier_probs=None, labels=None) -> None:
    if inlier_probs is not None and len(inlier_probs) != len(matches):
        raise ValueError("one inlier probability per match required")
    if labels is not None and len(labels) != len(matches):
        raise ValueError("one label per match required")
    lines = []
    for i, c in enumerate(matches):
        row = f"{c.p} {c.q} {c.descriptor_distance:.17g}"
        if inlier_probs is not None:
            row += f" {inlier_probs[i]:.17g}"
        if labels is not None:
            row += f" {int(labels[i])}"
        lines.append(row)
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""),
                          encoding="ascii")


def write_transform(t: RigidTransform, path, consensus_size=None) -> None:
    """Transform JSON: row-major 3x3 rotation plus translation vector."""
    payload = {
        "schema_version": TRANSFORM_SCHEMA_VERSION,
        "rotation": [[float(v) for v in row] for row in t.rotation],
        "translation": [float(v) for v in t.translation],
    }
    if consensus_size is not None:
        payload["consensus_size"] = int(consensus_size)
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="ascii")


def read_transform(path):
    """Returns (RigidTransform, consensus_size or None)."""
    data = json.loads(Path(path).read_text(encoding="ascii"))
    try:
        t = RigidTransform(np.array(data["rotation"], dtype=np.float64),
                           np.array(data["translation"], dtype=np.float64))
    except (KeyError, ValueError) as exc:
        raise ParseError(f"{path}: invalid transform JSON: {exc}") from exc
    return t, data.get("consensus_size")


@contextlib.contextmanager
def atomic_output(path):
    """Yield a temp path in the target directory; rename it in on success.

    On error the temp file is removed, so partial outputs never appear
    under the requested name.
    """
    path = Path(path)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent or Path("."),
                                    prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    tmp = Path(tmp_name)
    try:
        yield tmp
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(OSError):
            tmp.unlink()
        raise
