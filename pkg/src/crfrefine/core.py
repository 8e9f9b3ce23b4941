"""Dense per-pixel containers, softmax/argmax/log primitives and file I/O.

Arrays are plain numpy arrays:

* score / probability fields: float32, shape (H, W, C), row-major, channel-minor
* images: uint8, shape (H, W, 3)
* label maps: integer, shape (H, W), with a reserved void label (255)
"""
import os
import struct
import tempfile

import numpy as np

VOID_LABEL = 255
PROB_FLOOR = 1e-8

TENSOR_MAGIC = b"CRFT"
TENSOR_VERSION = 1
_HEADER = struct.Struct("<4sIIII")
# largest element count we agree to allocate from an untrusted header
MAX_ELEMENTS = 1 << 31


class FormatError(ValueError):
    """Base class for malformed files."""


class MagicError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class DimensionError(FormatError):
    pass


def as_tensor3(data, name="tensor"):
    """Validate ``data`` as a finite (H, W, C) float32 array and return it."""
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim != 3:
        raise ValueError(f"{name}: expected 3 dims (H, W, C), got shape {arr.shape}")
    if 0 in arr.shape:
        raise DimensionError(f"{name}: zero dimension in shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        bad = np.argwhere(~np.isfinite(arr))[0]
        raise ValueError(f"{name}: non-finite value at (y, x, c) = {tuple(int(i) for i in bad)}")
    return arr


def as_image(data):
    img = np.asarray(data)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"image: expected shape (H, W, 3), got {img.shape}")
    if 0 in img.shape:
        raise DimensionError(f"image: zero dimension in shape {img.shape}")
    if img.dtype != np.uint8:
        if np.any(img < 0) or np.any(img > 255):
            raise ValueError("image: values outside [0, 255]")
        img = img.astype(np.uint8)
    return img


def check_labels(labels, num_classes=None, void_label=VOID_LABEL):
    """Validate a label map; every non-void label must be < ``num_classes``."""
    lab = np.asarray(labels)
    if lab.ndim != 2:
        raise ValueError(f"label map: expected 2 dims, got shape {lab.shape}")
    if 0 in lab.shape:
        raise DimensionError(f"label map: zero dimension in shape {lab.shape}")
    if not np.issubdtype(lab.dtype, np.integer):
        raise ValueError(f"label map: integer dtype required, got {lab.dtype}")
    if np.any(lab < 0):
        raise ValueError("label map: negative label")
    if num_classes is not None:
        bad = (lab != void_label) & (lab >= num_classes)
        if np.any(bad):
            y, x = np.argwhere(bad)[0]
            raise ValueError(
                f"label map: label {int(lab[y, x])} at ({y}, {x}) out of range for {num_classes} classes"
            )
    return lab


def softmax_channels(scores):
    """Per-pixel softmax over the channel axis, with max subtraction."""
    s = as_tensor3(scores, "scores")
    z = s - s.max(axis=2, keepdims=True)
    e = np.exp(z)
    return (e / e.sum(axis=2, keepdims=True)).astype(np.float32)


def argmax_channels(field):
    """Per-pixel label of the largest channel; ties go to the lowest index."""
    f = np.asarray(field)
    if f.ndim != 3:
        raise ValueError(f"expected (H, W, C) field, got shape {f.shape}")
    if f.shape[2] == 0:
        raise ValueError("argmax over zero channels")
    # np.argmax returns the first occurrence of the maximum
    return np.argmax(f, axis=2).astype(np.uint16)


def neg_log(p, floor=PROB_FLOOR):
    """Elementwise ``-log(max(p, floor))``; the unary of a probability field."""
    if floor <= 0:
        raise ValueError("floor must be positive")
    p = np.asarray(p, dtype=np.float32)
    return (-np.log(np.maximum(p, np.float32(floor)))).astype(np.float32)


def is_prob_field(q, atol=1e-5):
    q = np.asarray(q)
    return bool(np.all(q >= 0) and np.allclose(q.sum(axis=2), 1.0, atol=atol))


# --------------------------------------------------------------------------
# file I/O
# --------------------------------------------------------------------------

def atomic_write(path, payload):
    """Write bytes to ``path`` via a temp file in the same directory + rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def tensor_to_bytes(tensor):
    t = np.asarray(tensor)
    if t.ndim != 3 or 0 in t.shape:
        raise DimensionError(f"tensor: need non-empty (H, W, C), got shape {t.shape}")
    h, w, c = t.shape
    body = np.ascontiguousarray(t, dtype="<f4").tobytes()
    return _HEADER.pack(TENSOR_MAGIC, TENSOR_VERSION, h, w, c) + body


def tensor_from_bytes(buf):
    if len(buf) < _HEADER.size:
        raise TruncatedError(f"tensor: header needs {_HEADER.size} bytes, file has {len(buf)}")
    magic, version, h, w, c = _HEADER.unpack_from(buf)
    if magic != TENSOR_MAGIC:
        raise MagicError(f"tensor: bad magic {magic!r}, expected {TENSOR_MAGIC!r}")
    if version != TENSOR_VERSION:
        raise FormatError(f"tensor: unsupported version {version}")
    if h == 0 or w == 0 or c == 0:
        raise DimensionError(f"tensor: zero dimension {h}x{w}x{c}")
    count = h * w * c
    if count > MAX_ELEMENTS:
        raise DimensionError(f"tensor: {h}x{w}x{c} exceeds {MAX_ELEMENTS} elements")
    need = _HEADER.size + 4 * count
    if len(buf) < need:
        raise TruncatedError(f"tensor: payload needs {need} bytes, file has {len(buf)}")
    if len(buf) > need:
        raise FormatError(f"tensor: {len(buf) - need} trailing bytes")
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=_HEADER.size)
    return data.astype(np.float32).reshape(h, w, c)


def save_tensor(path, tensor):
    atomic_write(path, tensor_to_bytes(tensor))


def load_tensor(path):
    with open(path, "rb") as fh:
        return tensor_from_bytes(fh.read())


def _netpbm_bytes(magic, arr):
    h, w = arr.shape[:2]
    return f"{magic}\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(arr, np.uint8).tobytes()


def _parse_netpbm(buf, magic, channels):
    if buf[:2] != magic.encode("ascii"):
        raise MagicError(f"netpbm: bad magic {buf[:2]!r}, expected {magic!r}")
    # header: magic, width, height, maxval separated by whitespace; '#' starts a comment
    tokens = []
    pos = 2
    while len(tokens) < 3:
        if pos >= len(buf):
            raise TruncatedError("netpbm: truncated header")
        ch = buf[pos:pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            end = buf.find(b"\n", pos)
            if end < 0:
                raise TruncatedError("netpbm: truncated header comment")
            pos = end + 1
        else:
            start = pos
            while pos < len(buf) and not buf[pos:pos + 1].isspace():
                pos += 1
            tok = buf[start:pos]
            if not tok.isdigit():
                raise FormatError(f"netpbm: bad header token {tok!r}")
            tokens.append(int(tok))
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise TruncatedError("netpbm: missing whitespace after header")
    pos += 1
    w, h, maxval = tokens
    if w == 0 or h == 0:
        raise DimensionError(f"netpbm: zero dimension {w}x{h}")
    if w * h * channels > MAX_ELEMENTS:
        raise DimensionError(f"netpbm: {w}x{h} too large")
    if maxval != 255:
        raise FormatError(f"netpbm: maxval {maxval} unsupported (need 255)")
    need = w * h * channels
    if len(buf) - pos < need:
        raise TruncatedError(f"netpbm: payload needs {need} bytes, has {len(buf) - pos}")
    data = np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos)
    shape = (h, w, channels) if channels > 1 else (h, w)
    return data.reshape(shape).copy()


def save_image(path, image):
    atomic_write(path, _netpbm_bytes("P6", as_image(image)))


def load_image(path):
    with open(path, "rb") as fh:
        return _parse_netpbm(fh.read(), "P6", 3)


def save_labels(path, labels):
    lab = check_labels(labels)
    if lab.max() > 255:
        raise ValueError("label map: PGM storage holds labels up to 255")
    atomic_write(path, _netpbm_bytes("P5", lab.astype(np.uint8)))


def load_labels(path):
    with open(path, "rb") as fh:
        return _parse_netpbm(fh.read(), "P5", 1).astype(np.uint16)
