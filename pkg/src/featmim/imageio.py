"""Binary PPM (P6) / PGM (P5) reading and writing.

The only supported image formats: dependency-free and bit-exact. Pixels are
scaled to [0, 1] on read; training normalization (x - mean) / std is applied
per channel on top.
"""

import os

import numpy as np

from .errors import DataError


def _tokens(blob, count):
    """First `count` ASCII header tokens, honouring '#' comments.

    Returns (tokens, payload_offset); the payload starts one whitespace
    byte after the last token.
    """
    toks = []
    i = 0
    n = len(blob)
    while len(toks) < count:
        while i < n and blob[i:i + 1].isspace():
            i += 1
        if i < n and blob[i:i + 1] == b"#":
            while i < n and blob[i] != 0x0A:
                i += 1
            continue
        start = i
        while i < n and not blob[i:i + 1].isspace():
            i += 1
        if start == i:
            raise DataError("truncated image header")
        toks.append(blob[start:i])
    if i >= n or not blob[i:i + 1].isspace():
        raise DataError("missing whitespace after image header")
    return toks, i + 1


def read_pnm(path):
    """Read a binary PGM/PPM file as float32 [C, H, W] in [0, 1]."""
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise DataError(f"cannot read image {path}: {e}") from None
    if blob[:2] == b"P5":
        channels = 1
    elif blob[:2] == b"P6":
        channels = 3
    else:
        raise DataError(f"{path}: not a binary PGM (P5) or PPM (P6) file")
    toks, off = _tokens(blob, 4)
    try:
        width, height, maxval = int(toks[1]), int(toks[2]), int(toks[3])
    except ValueError as e:
        raise DataError(f"{path}: malformed header: {e}") from None
    if width < 1 or height < 1:
        raise DataError(f"{path}: bad dimensions {width}x{height}")
    if not 1 <= maxval <= 255:
        raise DataError(f"{path}: unsupported maxval {maxval} (single-byte samples only)")
    payload = blob[off:]
    need = width * height * channels
    if len(payload) < need:
        raise DataError(f"{path}: payload holds {len(payload)} bytes, expected {need}")
    raw = np.frombuffer(payload[:need], dtype=np.uint8)
    img = raw.reshape(height, width, channels).transpose(2, 0, 1)
    return img.astype(np.float32) / np.float32(maxval)


def _quantize(arr):
    x = np.clip(np.asarray(arr, dtype=np.float64), 0.0, 1.0)
    return np.floor(x * 255.0 + 0.5).astype(np.uint8)


def write_pgm(path, array):
    """Write [H, W] or [1, H, W] values in [0, 1] as a binary PGM."""
    arr = np.asarray(array)
    if arr.ndim == 3:
        if arr.shape[0] != 1:
            raise DataError("PGM needs a single channel")
        arr = arr[0]
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(_quantize(arr).tobytes())


def write_ppm(path, array):
    """Write [3, H, W] values in [0, 1] as a binary PPM."""
    arr = np.asarray(array)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise DataError("PPM needs shape [3, H, W]")
    h, w = arr.shape[1:]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(_quantize(arr).transpose(1, 2, 0).tobytes())


def normalize(image, mean=0.5, std=0.5):
    """Per-channel (x - mean) / std; mean/std may be scalars or per-channel."""
    mean = np.asarray(mean, dtype=np.float32).reshape(-1, 1, 1)
    std = np.asarray(std, dtype=np.float32).reshape(-1, 1, 1)
    if np.any(std == 0):
        raise DataError("normalization std must be nonzero")
    return (image - mean) / std


def load_images(directory, mean=0.5, std=0.5):
    """Load every .pgm/.ppm file in a directory, sorted by filename.

    Returns [(image_id, float32 [C, H, W])], normalized; the id is the
    file name without extension.
    """
    try:
        names = sorted(n for n in os.listdir(directory)
                       if n.lower().endswith((".pgm", ".ppm")))
    except OSError as e:
        raise DataError(f"cannot list image directory {directory}: {e}") from None
    out = []
    for name in names:
        img = read_pnm(os.path.join(directory, name))
        out.append((os.path.splitext(name)[0], normalize(img, mean, std)))
    return out
