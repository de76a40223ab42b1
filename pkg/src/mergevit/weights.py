"""Named-tensor weight files.

Layout::

    b"TMWT0001"                  8-byte magic
    header_len                   little-endian uint64
    header                       UTF-8 text, header_len bytes
    payload                      contiguous little-endian float32 data

The header has one line per tensor, tab separated::

    <name>\\tf32\\t<d0>,<d1>,...\\t<byte offset into payload>

Tensors are stored in header order, back to back, and must cover the
payload exactly.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import LayoutError, MagicError, MissingTensorError, ShapeMismatchError, TruncatedError, WeightFileError

MAGIC = b"TMWT0001"
_LE_F32 = np.dtype("<f4")


@dataclass(frozen=True)
class TensorEntry:
    name: str
    shape: tuple[int, ...]
    offset: int

    @property
    def nbytes(self) -> int:
        return 4 * int(np.prod(self.shape, dtype=np.int64))


def encode_header(entries: list[TensorEntry]) -> bytes:
    lines = []
    for e in entries:
        if any(c in e.name for c in "\t\n"):
            raise WeightFileError(f"tensor name {e.name!r} contains a tab or newline")
        lines.append(f"{e.name}\tf32\t{','.join(map(str, e.shape))}\t{e.offset}\n")
    return "".join(lines).encode("utf-8")


def parse_header(text: str) -> list[TensorEntry]:
    entries = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise LayoutError(f"header line {lineno}: expected 4 tab-separated fields, got {len(parts)}")
        name, dtype, shape_s, offset_s = parts
        if dtype != "f32":
            raise LayoutError(f"header line {lineno}: unsupported dtype {dtype!r}")
        try:
            shape = tuple(int(s) for s in shape_s.split(",")) if shape_s else ()
            offset = int(offset_s)
        except ValueError:
            raise LayoutError(f"header line {lineno}: malformed shape or offset") from None
        if any(s < 0 for s in shape) or offset < 0:
            raise LayoutError(f"header line {lineno}: negative shape or offset")
        entries.append(TensorEntry(name, shape, offset))
    return entries


def _check_layout(entries: list[TensorEntry], payload_len: int) -> None:
    seen = set()
    for e in entries:
        if e.name in seen:
            raise LayoutError(f"tensor {e.name!r} declared more than once")
        seen.add(e.name)
    cursor = 0
    for e in sorted(entries, key=lambda e: e.offset):
        if e.offset < cursor:
            raise LayoutError(f"tensor {e.name!r} at offset {e.offset} overlaps the previous tensor")
        if e.offset > cursor:
            raise LayoutError(f"gap before tensor {e.name!r} at offset {e.offset}")
        cursor = e.offset + e.nbytes
    if [e.offset for e in entries] != sorted(e.offset for e in entries):
        raise LayoutError("tensor offsets are not in ascending order")
    if cursor > payload_len:
        raise TruncatedError(f"payload holds {payload_len} bytes, header declares {cursor}")
    if cursor < payload_len:
        raise LayoutError(f"payload has {payload_len - cursor} trailing bytes not covered by any tensor")


def atomic_write(path: str | os.PathLike, chunks) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            for chunk in chunks:
                f.write(chunk)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_weights(params: dict[str, np.ndarray], path) -> None:
    entries, offset = [], 0
    arrays = []
    for name, value in params.items():
        arr = np.ascontiguousarray(value, dtype=_LE_F32)
        entries.append(TensorEntry(name, tuple(arr.shape), offset))
        arrays.append(arr)
        offset += arr.nbytes
    header = encode_header(entries)
    chunks = [MAGIC, struct.pack("<Q", len(header)), header]
    chunks += [memoryview(a).cast("B") for a in arrays]
    atomic_write(path, chunks)


def load_weights(path, expected: dict[str, tuple] | None = None) -> dict[str, np.ndarray]:
    """Read a weight file; optionally check it against ``{name: shape}``.

    Nothing is returned unless the whole file validates.
    """
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 8 or blob[:8] != MAGIC:
        raise MagicError(f"{path}: not a weight file (bad magic {blob[:8]!r})")
    if len(blob) < 16:
        raise TruncatedError(f"{path}: file ends inside the header length field")
    (header_len,) = struct.unpack("<Q", blob[8:16])
    if 16 + header_len > len(blob):
        raise TruncatedError(f"{path}: header declares {header_len} bytes, file is too short")
    try:
        text = blob[16 : 16 + header_len].decode("utf-8")
    except UnicodeDecodeError:
        raise LayoutError(f"{path}: header is not valid UTF-8") from None
    entries = parse_header(text)
    payload = memoryview(blob)[16 + header_len :]
    _check_layout(entries, len(payload))

    if expected is not None:
        names = {e.name for e in entries}
        missing = [n for n in expected if n not in names]
        if missing:
            raise MissingTensorError(f"{path}: missing tensor(s) {', '.join(missing[:5])}"
                                     + (f" and {len(missing) - 5} more" if len(missing) > 5 else ""))
        for e in entries:
            if e.name in expected and tuple(expected[e.name]) != e.shape:
                raise ShapeMismatchError(f"{path}: tensor {e.name!r} has shape {e.shape}, expected {tuple(expected[e.name])}")

    params = {}
    for e in entries:
        raw = np.frombuffer(payload, dtype=_LE_F32, count=e.nbytes // 4, offset=e.offset)
        params[e.name] = raw.astype(np.float32).reshape(e.shape)
    return params
