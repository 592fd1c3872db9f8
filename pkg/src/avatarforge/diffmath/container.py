"""Binary container files: a magic tag, a JSON header, then float64 blocks.

Layout: 4 ASCII magic bytes, a little-endian uint32 header length, the
UTF-8 JSON header, then each array as raw little-endian float64 in the
order declared by the header's ``arrays`` list (name + shape per entry).
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from ..errors import FormatError

FIELD_MAGIC = "AVF1"
BODY_MAGIC = "AVB1"
SHAPE_CODEBOOK_MAGIC = "AVC1"
POSE_CODEBOOK_MAGIC = "AVP1"


def save_container(path, magic: str, header: dict, arrays: dict) -> None:
    """Write atomically (temp file + rename) so rerunning never corrupts."""
    if len(magic) != 4:
        raise FormatError(f"magic must be 4 characters, got {magic!r}")
    header = dict(header)
    header["arrays"] = [
        {"name": name, "shape": list(np.asarray(a).shape)}
        for name, a in arrays.items()
    ]
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = os.fspath(path)
    dirname = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=dirname, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(magic.encode("ascii"))
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            for a in arrays.values():
                fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_container(path, magic: str) -> tuple[dict, dict]:
    path = os.fspath(path)
    with open(path, "rb") as fh:
        raw_magic = fh.read(4)
        if raw_magic != magic.encode("ascii"):
            raise FormatError(
                f"{path}: expected magic {magic!r}, found {raw_magic!r}")
        size_bytes = fh.read(4)
        if len(size_bytes) != 4:
            raise FormatError(f"{path}: truncated header length")
        (hlen,) = struct.unpack("<I", size_bytes)
        blob = fh.read(hlen)
        if len(blob) != hlen:
            raise FormatError(f"{path}: truncated header")
        try:
            header = json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"{path}: bad header JSON ({exc})") from exc
        if "arrays" not in header:
            raise FormatError(f"{path}: header missing 'arrays'")
        arrays = {}
        for entry in header["arrays"]:
            shape = tuple(int(s) for s in entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise FormatError(
                    f"{path}: truncated data block for {entry['name']!r}")
            arrays[entry["name"]] = np.frombuffer(
                buf, dtype="<f8").astype(np.float64).reshape(shape)
    return header, arrays
