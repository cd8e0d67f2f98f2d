"""Named-tensor dump format shared by checkpoints and datasets.

Layout (little-endian): the 5-byte magic ``BEVX1``, then for each tensor
until end of file: name length (u16), UTF-8 name, rank (u8), dims (u32
each), float32 payload in row-major order.
"""

import struct

import numpy as np

MAGIC = b"BEVX1"


class DumpFormatError(ValueError):
    pass


def encode(tensors):
    """Serialize an ordered mapping ``name -> array`` to bytes."""
    parts = [MAGIC]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise DumpFormatError(f"tensor name too long: {name[:40]}...")
        if arr.ndim > 0xFF:
            raise DumpFormatError(f"{name}: rank {arr.ndim} exceeds 255")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def decode(buf):
    """Parse bytes into a dict ``name -> float32 array`` (insertion-ordered)."""
    if buf[:5] != MAGIC:
        raise DumpFormatError("bad magic, not a BEVX1 tensor dump")
    out = {}
    pos = 5
    try:
        while pos < len(buf):
            (nlen,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", buf, pos)
            pos += 4 * rank
            count = int(np.prod(dims, dtype=np.int64))
            if pos + 4 * count > len(buf):
                raise DumpFormatError(f"{name}: truncated payload")
            out[name] = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).reshape(dims).copy()
            pos += 4 * count
    except struct.error as exc:
        raise DumpFormatError(f"truncated dump at byte {pos}") from exc
    return out


def save(path, tensors):
    with open(path, "wb") as fh:
        fh.write(encode(tensors))


def load(path):
    with open(path, "rb") as fh:
        return decode(fh.read())


def text_to_array(text):
    """Pack UTF-8 text as a rank-1 tensor of byte values (exact in float32)."""
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.float32)


def array_to_text(arr):
    return np.asarray(arr).astype(np.uint8).tobytes().decode("utf-8")
