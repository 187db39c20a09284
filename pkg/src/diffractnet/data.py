"""IDX ingestion (Fashion-MNIST, EMNIST) and image-to-field encoding.

IDX layout: bytes ``00 00 <type> <rank>``, then ``rank`` big-endian uint32
dimension sizes, then the row-major payload. Only unsigned-byte payloads
(type ``0x08``) are accepted. Gzipped files are decompressed transparently.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from diffractnet.field import ComplexField, GridGeometry

IDX_UBYTE = 0x08
IMAGE_SIDE = 28


class IdxFormatError(ValueError):
    pass


@dataclass(frozen=True)
class IdxHeader:
    magic: bytes
    dims: tuple[int, ...]

    @property
    def type_code(self) -> int:
        return self.magic[2]

    @property
    def rank(self) -> int:
        return self.magic[3]


def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def parse_idx_header(raw: bytes) -> tuple[IdxHeader, int]:
    if len(raw) < 4:
        raise IdxFormatError("file too short for an IDX header")
    magic = raw[:4]
    if magic[0] != 0 or magic[1] != 0:
        raise IdxFormatError(f"bad IDX magic {magic.hex()}")
    if magic[2] != IDX_UBYTE:
        raise IdxFormatError(f"unsupported IDX element type 0x{magic[2]:02x}; only unsigned bytes")
    rank = magic[3]
    if rank < 1:
        raise IdxFormatError("IDX rank must be at least 1")
    end = 4 + 4 * rank
    if len(raw) < end:
        raise IdxFormatError("file too short for its IDX dimension list")
    dims = struct.unpack(f">{rank}I", raw[4:end])
    return IdxHeader(bytes(magic), tuple(dims)), end


def load_idx(path) -> np.ndarray:
    """Parse an IDX file into a ``uint8`` array shaped by its header dims."""
    raw = _read_bytes(path)
    header, offset = parse_idx_header(raw)
    expected = int(np.prod(header.dims, dtype=np.int64))
    payload = raw[offset:]
    if len(payload) != expected:
        raise IdxFormatError(
            f"{path}: payload has {len(payload)} bytes, header dims {header.dims} need {expected}"
        )
    return np.frombuffer(payload, dtype=np.uint8).reshape(header.dims).copy()


def idx_bytes(array: np.ndarray) -> bytes:
    array = np.ascontiguousarray(array)
    if array.dtype != np.uint8:
        raise ValueError("only uint8 arrays can be written as IDX")
    header = bytes([0, 0, IDX_UBYTE, array.ndim]) + struct.pack(f">{array.ndim}I", *array.shape)
    return header + array.tobytes()


def write_idx(path, array: np.ndarray) -> None:
    data = idx_bytes(array)
    if str(path).endswith(".gz"):
        data = gzip.compress(data, mtime=0)
    Path(path).write_bytes(data)


@dataclass(frozen=True, eq=False)
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        if self.images.ndim != 3:
            raise ValueError(f"images must be (M, H, W), got shape {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise ValueError(
                f"image count {len(self.images)} does not match label count {len(self.labels)}"
            )
        if len(self.labels) and int(self.labels.max()) >= self.num_classes:
            raise ValueError(
                f"label {int(self.labels.max())} out of range for {self.num_classes} classes"
            )

    def __len__(self):
        return len(self.labels)

    def subset(self, n: int | None) -> Dataset:
        """First ``n`` samples; ``None`` or 0 keeps everything."""
        if not n or n >= len(self):
            return self
        return Dataset(self.images[:n], self.labels[:n], self.num_classes)


def load_dataset(images_path, labels_path, num_classes: int, orientation_fix: bool = False) -> Dataset:
    for p in (images_path, labels_path):
        if not Path(p).is_file():
            raise FileNotFoundError(f"dataset file not found: {p}")
    images = load_idx(images_path)
    labels = load_idx(labels_path)
    if images.ndim != 3:
        raise IdxFormatError(f"{images_path}: expected rank-3 image file, got rank {images.ndim}")
    if labels.ndim != 1:
        raise IdxFormatError(f"{labels_path}: expected rank-1 label file, got rank {labels.ndim}")
    if orientation_fix:
        # EMNIST stores images transposed relative to MNIST
        images = np.ascontiguousarray(images.transpose(0, 2, 1))
    return Dataset(images, labels.astype(np.int64), num_classes)


def encode_images(images: np.ndarray, geometry: GridGeometry) -> np.ndarray:
    """Batched :func:`to_input_field`; returns a ``(B, ny, nx)`` complex array."""
    images = np.asarray(images)
    if images.ndim == 2:
        images = images[None]
    h, w = images.shape[-2:]
    ny, nx = geometry.shape
    if ny < h or nx < w:
        raise ValueError(f"grid {nx}x{ny} is smaller than the {w}x{h} image")
    y0, x0 = (ny - h) // 2, (nx - w) // 2
    amp = images.astype(np.float64) / 255.0
    energy = np.sum(amp * amp, axis=(-2, -1), keepdims=True)
    amp = amp / np.sqrt(np.where(energy > 0, energy, 1.0))
    out = np.zeros((len(images), ny, nx), dtype=np.complex128)
    out[:, y0 : y0 + h, x0 : x0 + w] = amp
    return out


def to_input_field(image: np.ndarray, geometry: GridGeometry) -> ComplexField:
    """Unit-energy real amplitude field with the image centered on the grid."""
    return ComplexField(geometry, encode_images(image, geometry)[0])


def batches(dataset, batch_size: int, seed) -> list[np.ndarray]:
    """Seeded permutation of sample indices cut into consecutive batches."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    n = dataset if isinstance(dataset, (int, np.integer)) else len(dataset)
    order = np.random.default_rng(seed).permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) graymap with maxval <= 255 into a ``uint8`` array."""
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PGM header")
        tokens.append(raw[start:pos])
    pos += 1
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ValueError(f"{path}: malformed PGM header")
    if not 0 < maxval <= 255:
        raise ValueError(f"{path}: only 8-bit PGM input is supported (maxval {maxval})")
    payload = raw[pos : pos + width * height]
    if len(payload) != width * height:
        raise ValueError(f"{path}: PGM payload is truncated")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width).copy()


def write_pgm16(path, values: np.ndarray) -> None:
    """16-bit P5 graymap, linearly scaled so the maximum maps to 65535."""
    values = np.asarray(values, dtype=np.float64)
    peak = values.max() if values.size else 0.0
    if peak > 0:
        scaled = np.rint(np.clip(values, 0, None) / peak * 65535.0).astype(">u2")
    else:
        scaled = np.zeros(values.shape, dtype=">u2")
    h, w = values.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n65535\n".encode("ascii") + scaled.tobytes())
