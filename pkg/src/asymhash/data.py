"""Feature/label datasets, similarity supervision and the AHF1 feature file."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import seeding

FEATURE_MAGIC = b"AHF1"
FEATURE_VERSION = 1
_HEADER = struct.Struct("<4sIIII")


class FeatureFormatError(ValueError):
    """Raised when a feature file cannot be parsed.

    ``offset`` is a byte offset for binary files and a 1-based line number
    for CSV files.
    """

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        where = f" (offset {offset})" if offset is not None else ""
        super().__init__(message + where)


class MagicMismatchError(FeatureFormatError):
    pass


class HeaderError(FeatureFormatError):
    pass


class LabelRangeError(FeatureFormatError):
    pass


class NonFiniteFeatureError(FeatureFormatError):
    pass


@dataclass
class FeatureDataset:
    """n feature vectors of dimension d, each with a class label in [0, C)."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D array")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("labels must have one entry per feature row")
        if self.n < 1 or self.d < 1 or self.num_classes < 1:
            raise ValueError("dataset needs n >= 1, d >= 1 and C >= 1")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain NaN or Inf")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def one_hot(self) -> np.ndarray:
        return one_hot(self.labels, self.num_classes)

    def subset(self, index) -> FeatureDataset:
        return FeatureDataset(self.features[index], self.labels[index], self.num_classes)


@dataclass(frozen=True)
class IndexSets:
    """Database index set ``gamma`` (0..n-1) and sampled query subset ``omega``."""

    n: int
    omega: np.ndarray

    @property
    def gamma(self) -> np.ndarray:
        return np.arange(self.n)

    @property
    def m(self) -> int:
        return len(self.omega)


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((len(labels), num_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def build_similarity_matrix(query_labels, db_labels) -> np.ndarray:
    """m x n matrix with +1 where the labels agree and -1 elsewhere."""
    q = np.asarray(query_labels)
    d = np.asarray(db_labels)
    return np.where(q[:, None] == d[None, :], 1.0, -1.0)


def sample_query_indices(n: int, m: int, seed: int) -> IndexSets:
    """Draw a uniform random m-subset of range(n), sorted ascending."""
    if not 1 <= m <= n:
        raise ValueError(f"need 1 <= m <= n, got m={m}, n={n}")
    rng = np.random.default_rng(seed)
    omega = np.sort(rng.choice(n, size=m, replace=False))
    return IndexSets(n=n, omega=omega)


def _class_centers(rng, num_classes, dim, distance):
    if num_classes == 1:
        return np.zeros((1, dim))
    if num_classes <= dim:
        # orthonormal directions: every pair sits exactly sqrt(2) apart
        q, _ = np.linalg.qr(rng.standard_normal((dim, num_classes)))
        return q.T * (distance / np.sqrt(2.0))
    centers = rng.standard_normal((num_classes, dim))
    gaps = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=-1)
    closest = gaps[np.triu_indices(num_classes, 1)].min()
    return centers * (distance / closest)


def generate_synthetic(
    num_classes: int,
    per_class: int,
    dim: int,
    separation: float = 6.0,
    noise_sigma: float = 1.0,
    seed: int = 0,
    query_per_class: int = 0,
):
    """Gaussian clusters standing in for backbone features.

    Class centers are placed so that every pair is at least
    ``separation * noise_sigma`` apart; samples add isotropic noise with
    standard deviation ``noise_sigma``. Features are rounded to float32
    precision so the binary file format round-trips them exactly.

    When ``query_per_class`` is positive a second, held-out dataset drawn
    from the same centers is returned as well: ``(database, queries)``.
    """
    if num_classes < 1 or per_class < 1 or dim < 1:
        raise ValueError("classes, per_class and dim must be positive")
    if separation < 0 or noise_sigma <= 0:
        raise ValueError("need separation >= 0 and noise_sigma > 0")
    centers = _class_centers(
        seeding.rng_for(seed, seeding.DATA_CENTERS), num_classes, dim, separation * noise_sigma
    )

    def draw(count, stream):
        rng = seeding.rng_for(seed, stream)
        labels = np.repeat(np.arange(num_classes), count)
        feats = centers[labels] + noise_sigma * rng.standard_normal((len(labels), dim))
        feats = feats.astype(np.float32).astype(np.float64)
        return FeatureDataset(feats, labels, num_classes)

    database = draw(per_class, seeding.DATA_NOISE)
    if query_per_class <= 0:
        return database
    return database, draw(query_per_class, seeding.QUERY_NOISE)


def _infer_format(path: Path, fmt: str | None) -> str:
    if fmt is not None:
        if fmt not in ("binary", "csv"):
            raise ValueError(f"unknown feature format {fmt!r}")
        return fmt
    return "csv" if path.suffix.lower() == ".csv" else "binary"


def save_features(ds: FeatureDataset, path, fmt: str | None = None) -> None:
    """Write ``ds`` as AHF1 binary (features stored as float32) or CSV.

    The CSV variant starts with a ``# classes=C`` line, then the header
    ``label,f0,...`` and one row per sample with 17 significant digits.
    """
    if not str(path):
        raise OSError("empty output path")
    path = Path(path)
    fmt = _infer_format(path, fmt)
    if fmt == "binary":
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, ds.n, ds.d, ds.num_classes))
            fh.write(ds.labels.astype("<u4").tobytes())
            fh.write(ds.features.astype("<f4").tobytes())
        return
    lines = [f"# classes={ds.num_classes}", ",".join(["label"] + [f"f{j}" for j in range(ds.d)])]
    for label, row in zip(ds.labels, ds.features):
        lines.append(",".join([str(int(label))] + [f"{v:.17g}" for v in row]))
    path.write_text("\n".join(lines) + "\n")


def load_features(path, fmt: str | None = None) -> FeatureDataset:
    path = Path(path)
    fmt = _infer_format(path, fmt)
    if fmt == "binary":
        return _load_binary(path.read_bytes())
    return _load_csv(path.read_text().splitlines())


def _load_binary(buf: bytes) -> FeatureDataset:
    if len(buf) < 4 or buf[:4] != FEATURE_MAGIC:
        raise MagicMismatchError(f"expected magic {FEATURE_MAGIC!r}, got {buf[:4]!r}", 0)
    if len(buf) < _HEADER.size:
        raise HeaderError("truncated header", len(buf))
    _, version, n, d, num_classes = _HEADER.unpack_from(buf)
    if version != FEATURE_VERSION:
        raise HeaderError(f"unsupported version {version}", 4)
    if n < 1 or d < 1 or num_classes < 1:
        raise HeaderError(f"invalid header n={n} d={d} C={num_classes}", 8)
    expected = _HEADER.size + 4 * n + 4 * n * d
    if len(buf) != expected:
        raise HeaderError(f"file is {len(buf)} bytes, header implies {expected}", len(buf))
    labels = np.frombuffer(buf, dtype="<u4", count=n, offset=_HEADER.size)
    bad = np.flatnonzero(labels >= num_classes)
    if bad.size:
        raise LabelRangeError(
            f"label {labels[bad[0]]} >= C={num_classes}", _HEADER.size + 4 * int(bad[0])
        )
    feat_offset = _HEADER.size + 4 * n
    feats = np.frombuffer(buf, dtype="<f4", count=n * d, offset=feat_offset)
    bad = np.flatnonzero(~np.isfinite(feats))
    if bad.size:
        raise NonFiniteFeatureError("non-finite feature value", feat_offset + 4 * int(bad[0]))
    return FeatureDataset(feats.reshape(n, d).astype(np.float64), labels.astype(np.int64), num_classes)


def _load_csv(lines: list[str]) -> FeatureDataset:
    num_classes = None
    lineno = 0
    while lineno < len(lines) and lines[lineno].startswith("#"):
        key, _, value = lines[lineno][1:].strip().partition("=")
        if key.strip() == "classes":
            try:
                num_classes = int(value)
            except ValueError:
                raise HeaderError(f"bad classes value {value!r}", lineno + 1) from None
        lineno += 1
    if lineno >= len(lines):
        raise HeaderError("missing header line", lineno + 1)
    header = lines[lineno].strip().split(",")
    d = len(header) - 1
    if header[0] != "label" or d < 1 or header[1:] != [f"f{j}" for j in range(d)]:
        raise HeaderError("header must be 'label,f0,...,f{d-1}'", lineno + 1)

    labels, rows = [], []
    for i in range(lineno + 1, len(lines)):
        line = lines[i].strip()
        if not line:
            continue
        fields = line.split(",")
        if len(fields) != d + 1:
            raise FeatureFormatError(f"expected {d + 1} fields, got {len(fields)}", i + 1)
        try:
            label = int(fields[0])
            row = [float(v) for v in fields[1:]]
        except ValueError as exc:
            raise FeatureFormatError(str(exc), i + 1) from None
        if label < 0 or (num_classes is not None and label >= num_classes):
            raise LabelRangeError(f"label {label} outside [0, {num_classes})", i + 1)
        if not all(np.isfinite(row)):
            raise NonFiniteFeatureError("non-finite feature value", i + 1)
        labels.append(label)
        rows.append(row)
    if not rows:
        raise HeaderError("no samples", len(lines))
    if num_classes is None:
        num_classes = max(labels) + 1
    return FeatureDataset(np.array(rows), np.array(labels), num_classes)
