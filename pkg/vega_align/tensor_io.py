"""
vega-align - Tensor and image files

Self-describing binary tensors:

    magic (4 bytes) | u32 rank | u32 extent * rank | little-endian payload

Magic selects the payload type: ``VEGT`` float32 (dataset targets and
actions), ``VEGD`` float64 (checkpoint parameters and optimizer moments),
``VEGU`` uint64 (step counters and generator state). Images are binary
PPM (P6, 8-bit) read and written through Pillow.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DatasetError

DTYPE_BY_MAGIC: dict[bytes, np.dtype] = {
    b"VEGT": np.dtype("<f4"),
    b"VEGD": np.dtype("<f8"),
    b"VEGU": np.dtype("<u8"),
}
MAGIC_BY_KIND: dict[str, bytes] = {"f32": b"VEGT", "f64": b"VEGD", "u64": b"VEGU"}


def encode_tensor(array: np.ndarray, kind: str = "f32") -> bytes:
    """Serialize an array; ``kind`` is one of f32, f64, u64."""
    if kind not in MAGIC_BY_KIND:
        raise ValueError(f"unknown tensor kind {kind!r}; expected one of {sorted(MAGIC_BY_KIND)}")
    magic = MAGIC_BY_KIND[kind]
    arr = np.array(array, dtype=DTYPE_BY_MAGIC[magic], order="C")
    header = magic + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.tobytes()


def decode_tensor(data: bytes, source: str = "<bytes>") -> np.ndarray:
    """Parse tensor bytes. Returns float64 for VEGT/VEGD and uint64 for VEGU."""
    if len(data) < 8:
        raise DatasetError(f"{source}: tensor header truncated ({len(data)} bytes)")
    magic = data[:4]
    if magic not in DTYPE_BY_MAGIC:
        raise DatasetError(f"{source}: bad tensor magic {magic!r}")
    dtype = DTYPE_BY_MAGIC[magic]
    (rank,) = struct.unpack_from("<I", data, 4)
    offset = 8 + 4 * rank
    if len(data) < offset:
        raise DatasetError(f"{source}: tensor header truncated (rank {rank})")
    shape = struct.unpack_from(f"<{rank}I", data, 8)
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    payload = data[offset:]
    if len(payload) != expected:
        raise DatasetError(
            f"{source}: tensor payload has {len(payload)} bytes, expected {expected} "
            f"for shape {tuple(shape)}"
        )
    arr = np.frombuffer(payload, dtype=dtype).reshape(shape)
    if magic == b"VEGU":
        return arr.astype(np.uint64)
    return arr.astype(np.float64)


def write_tensor(path: str | Path, array: np.ndarray, kind: str = "f32") -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(encode_tensor(array, kind))


def read_tensor(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"{path}: tensor file missing")
    return decode_tensor(path.read_bytes(), source=str(path))


def quantize_image(image: np.ndarray) -> np.ndarray:
    """Round a [0,1] float image (3xHxW) to the 8-bit grid it will have on disk."""
    return to_uint8(image).transpose(2, 0, 1).astype(np.float64) / 255.0


def to_uint8(image: np.ndarray) -> np.ndarray:
    """3xHxW float in [0,1] -> HxWx3 uint8."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"expected a 3xHxW image, got shape {image.shape}")
    clipped = np.clip(image, 0.0, 1.0)
    return np.rint(clipped * 255.0).astype(np.uint8).transpose(1, 2, 0)


def write_ppm(path: str | Path, image: np.ndarray) -> None:
    """Write a 3xHxW [0,1] image as binary PPM."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(image)).save(path, format="PPM")


def read_ppm(path: str | Path) -> np.ndarray:
    """Read a binary PPM into a 3xHxW float64 image on the 8-bit grid."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"{path}: image file missing")
    try:
        with Image.open(path) as img:
            img.load()
            fmt, mode = img.format, img.mode
            pixels = np.asarray(img, dtype=np.uint8)
    except (OSError, UnidentifiedImageError, SyntaxError, ValueError) as exc:
        raise DatasetError(f"{path}: truncated or unreadable image ({exc})") from exc
    if fmt != "PPM" or mode != "RGB":
        raise DatasetError(f"{path}: expected an 8-bit RGB PPM, got {fmt}/{mode}")
    return pixels.transpose(2, 0, 1).astype(np.float64) / 255.0
