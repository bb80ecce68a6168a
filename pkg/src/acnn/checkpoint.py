"""Binary checkpoint format (little-endian).

    magic    b"ACNN"
    version  u32   (currently 1)
    count    u32
    count x entry:
        name_len u16, name (UTF-8)
        dtype    u8    0 = f32, 1 = u8 (opaque bytes, used for metadata text)
        rank     u8
        dims     u32 x rank
        payload  row-major
"""

import os
import struct
import tempfile

import numpy as np

from .errors import ParseError

MAGIC = b"ACNN"
VERSION = 1
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("u1")}
TAGS = {np.dtype("<f4"): 0, np.dtype("u1"): 1}


def _encode(name, arr):
    arr = np.asarray(arr)
    if arr.dtype == np.uint8:
        tag, arr = 1, np.array(arr, dtype="u1", order="C")
    else:
        tag, arr = 0, np.array(arr, dtype="<f4", order="C")
    raw = name.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValueError(f"entry name too long: {name[:40]}...")
    head = struct.pack("<H", len(raw)) + raw + struct.pack("<BB", tag, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes(order="C")


def dumps(entries):
    """Serialize a name -> array mapping; float arrays are stored as f32."""
    out = [MAGIC, struct.pack("<II", VERSION, len(entries))]
    out += [_encode(name, arr) for name, arr in entries.items()]
    return b"".join(out)


def loads(blob):
    view = memoryview(blob)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise ParseError(f"checkpoint truncated at byte {pos}")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise ParseError("not an ACNN checkpoint (bad magic)")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise ParseError(f"unsupported checkpoint version {version}")
    entries = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = bytes(take(nlen)).decode("utf-8")
        tag, rank = struct.unpack("<BB", take(2))
        if tag not in DTYPES:
            raise ParseError(f"entry {name!r}: unknown dtype tag {tag}")
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        dt = DTYPES[tag]
        size = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        arr = np.frombuffer(bytes(take(size)), dtype=dt).reshape(dims)
        entries[name] = arr.astype(dt.newbyteorder("=")) if tag == 0 else arr.copy()
    if pos != len(view):
        raise ParseError(f"{len(view) - pos} trailing bytes after last entry")
    return entries


def atomic_write_bytes(path, data):
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_checkpoint(path, entries):
    atomic_write_bytes(path, dumps(entries))


def read_checkpoint(path):
    with open(path, "rb") as fh:
        return loads(fh.read())


def text_entry(text):
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8)


def entry_text(arr):
    return bytes(np.asarray(arr, dtype=np.uint8)).decode("utf-8")
