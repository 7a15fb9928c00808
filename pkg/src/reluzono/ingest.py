"""
Reading IDX image archives and turning them into binary tasks.

The IDX container is a 4 byte magic number (two zero bytes, an element
type code, the rank), one big-endian 4 byte size per dimension and then
the payload in C order:

    0x08 unsigned byte    0x09 signed byte    0x0B int16
    0x0C int32            0x0D float32        0x0E float64

Files ending in .gz are decompressed transparently.

`build_binary_task` keeps the examples of two classes, scales pixels to
[0, 1], projects onto the leading principal components of the kept set
and whitens them, then takes the first n examples in file order.
"""
import gzip
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.decomposition import PCA

from .data import Dataset
from .errors import BadMagic, InvalidParameter, NotEnoughExamples, TruncatedPayload, UnsupportedElementType

logger = logging.getLogger(__name__)

ELEMENT_TYPES: dict[int, np.dtype] = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


@dataclass(frozen=True, eq=False)
class IdxTensor:
    dims: tuple[int, ...]
    data: np.ndarray
    type_code: int = 0x08

    def __post_init__(self) -> None:
        if int(np.prod(self.dims)) != self.data.size:
            raise InvalidParameter(f"dims {self.dims} do not match {self.data.size} elements")

    @property
    def rank(self) -> int:
        return len(self.dims)

    def array(self) -> np.ndarray:
        """The payload shaped by `dims`, in native byte order."""
        return self.data.reshape(self.dims).astype(self.data.dtype.newbyteorder("="))


def _open(path: Path) -> bytes:
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as f:
            return f.read()
    return path.read_bytes()


def parse_idx(raw: bytes) -> IdxTensor:
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise BadMagic("IDX data must start with two zero bytes")
    type_code, rank = raw[2], raw[3]
    if rank == 0:
        raise BadMagic("IDX rank must be at least 1")
    if type_code not in ELEMENT_TYPES:
        raise UnsupportedElementType(f"element type 0x{type_code:02X} is not a standard IDX type")
    header_end = 4 + 4 * rank
    if len(raw) < header_end:
        raise TruncatedPayload("IDX header ends before all dimension sizes")
    dims = struct.unpack_from(f">{rank}I", raw, 4)
    dtype = ELEMENT_TYPES[type_code]
    count = int(np.prod(dims))
    if len(raw) - header_end < count * dtype.itemsize:
        raise TruncatedPayload(f"payload holds {len(raw) - header_end} bytes, dims {dims} need {count * dtype.itemsize}")
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=header_end)
    return IdxTensor(tuple(int(d) for d in dims), data, type_code)


def read_idx(path: str | Path) -> IdxTensor:
    return parse_idx(_open(Path(path)))


def encode_idx(array: np.ndarray, type_code: int = 0x08) -> bytes:
    array = np.asarray(array)
    if type_code not in ELEMENT_TYPES:
        raise UnsupportedElementType(f"element type 0x{type_code:02X} is not a standard IDX type")
    if array.ndim == 0:
        raise InvalidParameter("IDX needs rank >= 1")
    header = bytes([0, 0, type_code, array.ndim]) + struct.pack(f">{array.ndim}I", *array.shape)
    return header + np.ascontiguousarray(array, dtype=ELEMENT_TYPES[type_code]).tobytes()


def write_idx(array: np.ndarray, path: str | Path, type_code: int = 0x08) -> None:
    path = Path(path)
    raw = encode_idx(array, type_code)
    if path.suffix == ".gz":
        with gzip.open(path, "wb") as f:
            f.write(raw)
    else:
        path.write_bytes(raw)


@dataclass(frozen=True, eq=False)
class WhiteningPCA:
    """
    Principal components of a set of flattened images, fit by scikit-learn.

    `components` rows are orthonormal, each flipped so its largest-magnitude
    loading is positive; `scale` is the per-component standard deviation.
    """

    mean: np.ndarray
    components: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray, n_components: int) -> "WhiteningPCA":
        n, d = X.shape
        if n < 2:
            raise NotEnoughExamples("PCA needs at least two examples")
        if not 1 <= n_components <= min(n, d):
            raise InvalidParameter(f"asked for {n_components} components, only {min(n, d)} exist")
        pca = PCA(n_components=n_components, whiten=True, svd_solver="full").fit(X)
        std = np.sqrt(pca.explained_variance_)
        if np.any(std <= 1e-12 * max(1.0, float(std.max(initial=0.0)))):
            raise InvalidParameter("the data has fewer nonzero principal components than requested")
        # the sign of each component is arbitrary; pin it down
        components = pca.components_.copy()
        rows = np.arange(components.shape[0])
        signs = np.sign(components[rows, np.abs(components).argmax(axis=1)])
        components *= np.where(signs == 0, 1.0, signs)[:, None]
        return cls(pca.mean_.copy(), components, std)

    def project(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean) @ self.components.T

    def transform(self, X: np.ndarray) -> np.ndarray:
        return self.project(X) / self.scale

    def reconstruct(self, Z: np.ndarray) -> np.ndarray:
        """Inverse of `project` (exact when all components are kept)."""
        return Z @ self.components + self.mean


def binary_pixels(images: IdxTensor, labels: IdxTensor, class_a: int, class_b: int) -> tuple[np.ndarray, np.ndarray]:
    """Flattened [0, 1] pixels and 0/1 labels of the examples in the two classes, in file order."""
    if labels.rank != 1:
        raise InvalidParameter(f"labels must have rank 1, got {labels.rank}")
    if images.rank != 3 or images.dims[0] != labels.dims[0]:
        raise InvalidParameter(f"images must be rank 3 with {labels.dims[0]} entries, got dims {images.dims}")
    if class_a == class_b:
        raise InvalidParameter("the two classes must differ")
    y_all = labels.array().astype(int)
    keep = np.flatnonzero((y_all == class_a) | (y_all == class_b))
    pixels = images.array().reshape(images.dims[0], -1)[keep].astype(float) / 255.0
    return pixels, (y_all[keep] == class_b).astype(float)


def build_binary_task(
    images: IdxTensor,
    labels: IdxTensor,
    class_a: int,
    class_b: int,
    pca_dims: int,
    n: int,
) -> Dataset:
    """
    A whitened two-class dataset: PCA is fit on every example of the two
    classes, then the first `n` of them are returned with class_a -> 0 and
    class_b -> 1.
    """
    if pca_dims < 1 or n < 1:
        raise InvalidParameter("pca_dims and n must be positive")
    pixels, y = binary_pixels(images, labels, class_a, class_b)
    if pixels.shape[0] < n:
        raise NotEnoughExamples(f"only {pixels.shape[0]} examples of classes {class_a}/{class_b}, need {n}")
    pca = WhiteningPCA.fit(pixels, pca_dims)
    x = pca.transform(pixels[:n])
    logger.info("binary task %d vs %d: %d of %d examples, %d components", class_a, class_b, n, pixels.shape[0], pca_dims)
    return Dataset(x, y[:n], use_bias=True)
