"""Vector datasets, benchmark file formats and distance kernels.

All metrics are oriented so that a smaller value means "closer":
squared L2, negated inner product, and ``1 - cosine``.  Every distance in
the package goes through :func:`distances`, so a scalar call and a batched
call on the same pair produce bit-identical results.
"""

from __future__ import annotations

import enum
import os
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

__all__ = [
    "Metric",
    "VectorSet",
    "GroundTruth",
    "FormatError",
    "read_fvecs",
    "write_fvecs",
    "read_ivecs",
    "write_ivecs",
    "generate_synthetic",
    "distance",
    "distances",
    "brute_force_knn",
    "compute_ground_truth",
]


class FormatError(ValueError):
    """Raised when a binary vector file is malformed."""


class Metric(enum.IntEnum):
    L2 = 0
    INNER_PRODUCT = 1
    COSINE = 2

    @classmethod
    def parse(cls, value) -> "Metric":
        if isinstance(value, Metric):
            return value
        if isinstance(value, (int, np.integer)):
            return cls(int(value))
        key = str(value).strip().lower().replace("-", "_")
        aliases = {
            "l2": cls.L2,
            "euclidean": cls.L2,
            "ip": cls.INNER_PRODUCT,
            "inner_product": cls.INNER_PRODUCT,
            "innerproduct": cls.INNER_PRODUCT,
            "dot": cls.INNER_PRODUCT,
            "cosine": cls.COSINE,
            "cos": cls.COSINE,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown metric {value!r}") from None


@dataclass(frozen=True, eq=False)
class VectorSet:
    """A dense ``count x dim`` float32 matrix with an optional metric tag.

    An empty set read from an empty file has shape ``(0, 0)`` and reports
    ``dim`` as ``None`` since the dimensionality is unknown.
    """

    data: np.ndarray
    metric: Optional[Metric] = None

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 2:
            raise ValueError(f"vector data must be 2-D, got shape {data.shape}")
        if data.shape[0] > 0 and data.shape[1] < 1:
            raise ValueError("dim must be >= 1")
        if data.size and not np.all(np.isfinite(data)):
            raise ValueError("vector data contains non-finite values")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        if self.metric is not None:
            object.__setattr__(self, "metric", Metric.parse(self.metric))

    @property
    def count(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> Optional[int]:
        if self.data.shape[1] == 0:
            return None
        return self.data.shape[1]

    def __len__(self) -> int:
        return self.count

    def __getitem__(self, i) -> np.ndarray:
        return self.data[i]

    def with_metric(self, metric) -> "VectorSet":
        return VectorSet(self.data, Metric.parse(metric))

    def __eq__(self, other) -> bool:
        if not isinstance(other, VectorSet):
            return NotImplemented
        return (
            self.metric == other.metric
            and self.data.shape == other.data.shape
            and np.array_equal(self.data, other.data)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Per-query true neighbor ids, closest first."""

    ids: np.ndarray

    def __post_init__(self):
        ids = np.ascontiguousarray(self.ids, dtype=np.int64)
        if ids.ndim != 2:
            raise ValueError(f"ground truth must be 2-D, got shape {ids.shape}")
        ids.setflags(write=False)
        object.__setattr__(self, "ids", ids)

    @property
    def num_queries(self) -> int:
        return self.ids.shape[0]

    @property
    def k_gt(self) -> int:
        return self.ids.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, GroundTruth):
            return NotImplemented
        return self.ids.shape == other.ids.shape and np.array_equal(self.ids, other.ids)

    __hash__ = None


# -- binary containers -------------------------------------------------------


def _read_records(path: os.PathLike, kind: str) -> Tuple[np.ndarray, int]:
    """Split an xvecs file into a (records, width) int32 view.

    Returns the raw ``(n, 1 + width)`` little-endian int32 matrix.
    """
    raw = np.fromfile(path, dtype="<i4") if os.path.getsize(path) % 4 == 0 else None
    if raw is None:
        raw = _fallback_scan(path, kind)
    if raw.size == 0:
        return raw.reshape(0, 1), 0
    width = int(raw[0])
    if width < 1:
        raise FormatError(f"{kind}: record 0 declares non-positive length {width}")
    stride = width + 1
    if raw.size % stride == 0:
        rows = raw.reshape(-1, stride)
        bad = np.nonzero(rows[:, 0] != width)[0]
        if bad.size == 0:
            return rows, width
    _fallback_scan(path, kind)
    # _fallback_scan always raises when the file is inconsistent
    raise AssertionError("unreachable")  # pragma: no cover


def _fallback_scan(path: os.PathLike, kind: str) -> np.ndarray:
    """Walk the file record by record to pinpoint the first defect."""
    blob = open(path, "rb").read()
    offset = 0
    width = None
    index = 0
    while offset < len(blob):
        if offset + 4 > len(blob):
            raise FormatError(f"{kind}: truncated record header at byte offset {offset}")
        n = int.from_bytes(blob[offset:offset + 4], "little", signed=True)
        if width is None:
            if n < 1:
                raise FormatError(f"{kind}: record 0 declares non-positive length {n}")
            width = n
        elif n != width:
            raise FormatError(
                f"{kind}: inconsistent dimension in record {index}: {n} != {width}"
            )
        end = offset + 4 + 4 * n
        if end > len(blob):
            raise FormatError(
                f"{kind}: truncated record {index} at byte offset {offset} "
                f"(needs {end - offset} bytes, {len(blob) - offset} available)"
            )
        offset = end
        index += 1
    return np.frombuffer(blob, dtype="<i4")


def read_fvecs(path: os.PathLike) -> VectorSet:
    rows, width = _read_records(path, "fvecs")
    if width == 0:
        return VectorSet(np.zeros((0, 0), dtype=np.float32))
    return VectorSet(rows[:, 1:].copy().view("<f4").astype(np.float32))


def write_fvecs(path: os.PathLike, vectors) -> None:
    data = vectors.data if isinstance(vectors, VectorSet) else np.asarray(vectors)
    data = np.ascontiguousarray(data, dtype="<f4")
    with open(path, "wb") as fh:
        if data.shape[0] == 0:
            return
        header = np.full((data.shape[0], 1), data.shape[1], dtype="<i4")
        fh.write(np.hstack([header, data.view("<i4")]).tobytes())


def read_ivecs(path: os.PathLike) -> GroundTruth:
    rows, width = _read_records(path, "ivecs")
    if width == 0:
        return GroundTruth(np.zeros((0, 0), dtype=np.int64))
    return GroundTruth(rows[:, 1:].astype(np.int64))


def write_ivecs(path: os.PathLike, gt) -> None:
    ids = gt.ids if isinstance(gt, GroundTruth) else np.asarray(gt)
    ids = np.ascontiguousarray(ids, dtype="<i4")
    with open(path, "wb") as fh:
        if ids.shape[0] == 0:
            return
        header = np.full((ids.shape[0], 1), ids.shape[1], dtype="<i4")
        fh.write(np.hstack([header, ids]).tobytes())


def generate_synthetic(n: int, d: int, seed: int, distribution: str = "uniform01",
                       metric=Metric.L2) -> VectorSet:
    if n < 0 or d < 1:
        raise ValueError(f"need n >= 0 and d >= 1, got n={n}, d={d}")
    rng = np.random.default_rng(seed)
    if distribution == "uniform01":
        data = rng.random((n, d), dtype=np.float32)
    elif distribution == "gaussian":
        data = rng.standard_normal((n, d), dtype=np.float32)
    else:
        raise ValueError(f"unknown distribution {distribution!r}")
    return VectorSet(data, metric)


# -- distances ---------------------------------------------------------------


def distances(metric, query, rows) -> np.ndarray:
    """Distances from ``query`` to each row of ``rows`` (float64).

    Inputs are rounded to float32 first unless ``rows`` is already float64,
    which lets hot loops pass a cached ``data.astype(float64)`` copy and still
    get bit-identical results.
    """
    if metric.__class__ is not Metric:
        metric = Metric.parse(metric)
    q = np.asarray(query, dtype=np.float32).astype(np.float64)
    x = rows if isinstance(rows, np.ndarray) and rows.dtype == np.float64 else \
        np.asarray(rows, dtype=np.float32).astype(np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if q.ndim != 1 or x.shape[1] != q.shape[0]:
        raise ValueError(f"dimension mismatch: query {q.shape} vs rows {x.shape}")
    if metric is Metric.L2:
        diff = x - q
        return (diff * diff).sum(axis=1)
    dots = (x * q).sum(axis=1)
    if metric is Metric.INNER_PRODUCT:
        return -dots
    qn = np.sqrt((q * q).sum())
    xn = np.sqrt((x * x).sum(axis=1))
    if qn == 0.0 or np.any(xn == 0.0):
        raise ValueError("cosine distance is undefined for zero vectors")
    return 1.0 - dots / (xn * qn)


def distance(metric, a, b) -> float:
    a = np.asarray(a, dtype=np.float32)
    b = np.asarray(b, dtype=np.float32)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(distances(metric, a, b[None, :])[0])


def brute_force_knn(base: VectorSet, query, k: int) -> List[Tuple[int, float]]:
    """Exact k nearest neighbours sorted by ``(distance, id)``."""
    if k > base.count:
        raise ValueError(f"k={k} exceeds base count {base.count}")
    if k <= 0:
        return []
    d = distances(base.metric if base.metric is not None else Metric.L2, query, base.data)
    ids = np.arange(base.count)
    order = np.lexsort((ids, d))[:k]
    return [(int(i), float(d[i])) for i in order]


def compute_ground_truth(base: VectorSet, queries: VectorSet, k: int) -> GroundTruth:
    rows = [[i for i, _ in brute_force_knn(base, q, k)] for q in queries.data]
    return GroundTruth(np.asarray(rows, dtype=np.int64).reshape(len(rows), k))
