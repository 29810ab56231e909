"""Dataset containers, binary formats, and the synthetic generator.

Two little-endian file formats live here. AAGF holds embedding records
(one frame or a frame window per sample, plus label, history, and an
optional description embedding); AAGC holds the per-class text table.
Both are versioned, written atomically, and round-trip bit-exactly.

The synthetic generator builds desk-scale datasets whose labels are a
known function of the inputs, so learnability and ablation direction
can be asserted rather than eyeballed.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, FormatError
from .fileio import atomic_write_bytes

AAGF_MAGIC = b"AAGF"
AAGC_MAGIC = b"AAGC"
AAGF_VERSION = 1
AAGC_VERSION = 1

# header: magic, version, flags, n_samples, d_ft, d_txt, n_classes,
# history_len, frames, delta_ms, depth_source, reserved
_HEADER = struct.Struct("<4sHHQIIIIIIB7s")
_FLAG_DESC = 1

DEPTH_SOURCES = {"absent": 0, "gt": 1, "estimated": 2}
_DEPTH_SOURCE_NAMES = {v: k for k, v in DEPTH_SOURCES.items()}

LABEL_RULES = ("history_determined", "rgb_cluster_determined", "mixed")


@dataclass
class DatasetMeta:
    """Header fields shared by every record in one AAGF file."""

    d_ft: int
    d_txt: int
    n_classes: int
    history_len: int
    frames: int = 1
    delta_ms: int = 1000
    depth_source: str = "gt"

    def __post_init__(self):
        for name in ("d_ft", "d_txt", "n_classes", "frames"):
            if getattr(self, name) < 1:
                raise ConfigError(f"dataset meta: {name} must be positive")
        if self.history_len < 0 or self.delta_ms < 0:
            raise ConfigError("dataset meta: history_len and delta_ms must be >= 0")
        if self.depth_source not in DEPTH_SOURCES:
            raise ConfigError(
                f"dataset meta: depth_source must be one of {tuple(DEPTH_SOURCES)}, "
                f"got {self.depth_source!r}"
            )


@dataclass
class EmbeddingRecord:
    """One sample: precomputed embeddings plus label and action history."""

    sample_id: int
    label: int
    history: np.ndarray
    rgb: np.ndarray
    depth: np.ndarray
    desc_embedding: np.ndarray | None = None


@dataclass
class ClassTextTable:
    """Per-class text embeddings and names, indexed by class id."""

    rows: np.ndarray
    names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.rows = np.ascontiguousarray(self.rows, dtype="<f4")
        if self.rows.ndim != 2:
            raise FormatError(f"class table rows must be 2-D, got shape {self.rows.shape}")
        if len(self.names) != self.rows.shape[0]:
            raise FormatError(
                f"class table has {self.rows.shape[0]} rows but {len(self.names)} names"
            )
        if not np.all(np.isfinite(self.rows)):
            raise DataError("class table rows must be finite")

    @property
    def n_classes(self):
        return self.rows.shape[0]

    @property
    def d_txt(self):
        return self.rows.shape[1]


def _check_record(rec, meta, index):
    where = f"record {index} (sample {rec.sample_id})"
    if rec.rgb.shape != (meta.frames, meta.d_ft) or rec.depth.shape != (meta.frames, meta.d_ft):
        raise FormatError(
            f"{where}: rgb/depth shapes {rec.rgb.shape}/{rec.depth.shape} "
            f"do not match header ({meta.frames}, {meta.d_ft})"
        )
    if rec.history.shape != (meta.history_len,):
        raise FormatError(
            f"{where}: history length {rec.history.shape} does not match "
            f"header {meta.history_len}"
        )
    if not 0 <= rec.label < meta.n_classes:
        raise DataError(f"{where}: label {rec.label} outside [0, {meta.n_classes})")
    if rec.history.size and (
        rec.history.min() < -1 or rec.history.max() >= meta.n_classes
    ):
        raise DataError(f"{where}: history ids outside [-1, {meta.n_classes})")
    if rec.desc_embedding is not None and rec.desc_embedding.shape != (meta.d_txt,):
        raise FormatError(
            f"{where}: desc_embedding width {rec.desc_embedding.shape} "
            f"does not match header d_txt {meta.d_txt}"
        )


def write_aagf(path, records, meta):
    """Serialize records under the given header; atomic, little-endian."""
    records = list(records)
    has_desc = bool(records) and records[0].desc_embedding is not None
    chunks = [
        _HEADER.pack(
            AAGF_MAGIC,
            AAGF_VERSION,
            _FLAG_DESC if has_desc else 0,
            len(records),
            meta.d_ft,
            meta.d_txt,
            meta.n_classes,
            meta.history_len,
            meta.frames,
            meta.delta_ms,
            DEPTH_SOURCES[meta.depth_source],
            b"\x00" * 7,
        )
    ]
    for i, rec in enumerate(records):
        if (rec.desc_embedding is not None) != has_desc:
            raise FormatError(
                f"record {i} (sample {rec.sample_id}): desc_embedding presence "
                "differs from the rest of the file"
            )
        _check_record(rec, meta, i)
        chunks.append(struct.pack("<QI", rec.sample_id, rec.label))
        chunks.append(np.ascontiguousarray(rec.history, dtype="<i4").tobytes())
        chunks.append(np.ascontiguousarray(rec.rgb, dtype="<f4").tobytes())
        chunks.append(np.ascontiguousarray(rec.depth, dtype="<f4").tobytes())
        if has_desc:
            chunks.append(np.ascontiguousarray(rec.desc_embedding, dtype="<f4").tobytes())
    atomic_write_bytes(path, b"".join(chunks))


def read_aagf(path):
    """Parse an AAGF file back into (records, meta); validates everything."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header, {len(raw)} of {_HEADER.size} bytes")
    (magic, version, flags, n_samples, d_ft, d_txt, n_classes, history_len,
     frames, delta_ms, depth_code, _reserved) = _HEADER.unpack_from(raw, 0)
    if magic != AAGF_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {AAGF_MAGIC!r}")
    if version != AAGF_VERSION:
        raise FormatError(f"{path}: unsupported AAGF version {version}")
    if flags & ~_FLAG_DESC:
        raise FormatError(f"{path}: unknown flag bits 0x{flags:04x}")
    if depth_code not in _DEPTH_SOURCE_NAMES:
        raise FormatError(f"{path}: unknown depth_source code {depth_code}")
    meta = DatasetMeta(
        d_ft=d_ft,
        d_txt=d_txt,
        n_classes=n_classes,
        history_len=history_len,
        frames=frames,
        delta_ms=delta_ms,
        depth_source=_DEPTH_SOURCE_NAMES[depth_code],
    )
    has_desc = bool(flags & _FLAG_DESC)
    frame_bytes = 4 * frames * d_ft
    record_size = 8 + 4 + 4 * history_len + 2 * frame_bytes + (4 * d_txt if has_desc else 0)
    expected = _HEADER.size + n_samples * record_size
    if len(raw) != expected:
        raise FormatError(
            f"{path}: truncated at byte {len(raw)}, expected {expected} bytes "
            f"for {n_samples} records"
        )
    records = []
    offset = _HEADER.size
    for i in range(n_samples):
        sample_id, label = struct.unpack_from("<QI", raw, offset)
        offset += 12
        history = np.frombuffer(raw, dtype="<i4", count=history_len, offset=offset).copy()
        offset += 4 * history_len
        rgb = np.frombuffer(raw, dtype="<f4", count=frames * d_ft, offset=offset)
        rgb = rgb.reshape(frames, d_ft).copy()
        offset += frame_bytes
        depth = np.frombuffer(raw, dtype="<f4", count=frames * d_ft, offset=offset)
        depth = depth.reshape(frames, d_ft).copy()
        offset += frame_bytes
        desc = None
        if has_desc:
            desc = np.frombuffer(raw, dtype="<f4", count=d_txt, offset=offset).copy()
            offset += 4 * d_txt
        rec = EmbeddingRecord(sample_id, label, history, rgb, depth, desc)
        _check_record(rec, meta, i)
        records.append(rec)
    return records, meta


def save_class_table(path, table):
    chunks = [
        struct.pack("<4sHII", AAGC_MAGIC, AAGC_VERSION, table.n_classes, table.d_txt),
        np.ascontiguousarray(table.rows, dtype="<f4").tobytes(),
    ]
    for name in table.names:
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise FormatError(f"class name too long ({len(encoded)} bytes): {name[:40]}...")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
    atomic_write_bytes(path, b"".join(chunks))


def load_class_table(path):
    with open(path, "rb") as f:
        raw = f.read()
    head = struct.Struct("<4sHII")
    if len(raw) < head.size:
        raise FormatError(f"{path}: truncated header, {len(raw)} of {head.size} bytes")
    magic, version, n_classes, d_txt = head.unpack_from(raw, 0)
    if magic != AAGC_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {AAGC_MAGIC!r}")
    if version != AAGC_VERSION:
        raise FormatError(f"{path}: unsupported AAGC version {version}")
    offset = head.size
    row_bytes = 4 * n_classes * d_txt
    if len(raw) < offset + row_bytes:
        raise FormatError(f"{path}: truncated at byte {len(raw)} while reading rows")
    rows = np.frombuffer(raw, dtype="<f4", count=n_classes * d_txt, offset=offset)
    rows = rows.reshape(n_classes, d_txt).copy()
    offset += row_bytes
    names = []
    for _ in range(n_classes):
        if len(raw) < offset + 2:
            raise FormatError(f"{path}: truncated at byte {len(raw)} while reading names")
        (length,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        if len(raw) < offset + length:
            raise FormatError(f"{path}: truncated at byte {len(raw)} inside a name")
        names.append(raw[offset : offset + length].decode("utf-8"))
        offset += length
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes after names")
    return ClassTextTable(rows=rows, names=names)


def check_table_matches(meta, table):
    """Cross-validate a class table against a dataset header."""
    if table.n_classes != meta.n_classes:
        raise DataError(
            f"class table has {table.n_classes} classes, dataset header says "
            f"{meta.n_classes}"
        )
    if table.d_txt != meta.d_txt:
        raise DataError(
            f"class table width {table.d_txt} does not match dataset d_txt {meta.d_txt}"
        )


# ---------------------------------------------------------------------------
# synthetic data


@dataclass
class SyntheticSpec:
    """Recipe for a generated dataset with a known label rule."""

    n_classes: int
    d_ft: int
    d_txt: int
    history_len: int
    n_samples: int
    label_rule: str = "history_determined"
    noise_sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.label_rule not in LABEL_RULES:
            raise ConfigError(
                f"label_rule must be one of {LABEL_RULES}, got {self.label_rule!r}"
            )
        for name in ("n_classes", "d_ft", "d_txt", "n_samples"):
            if getattr(self, name) < 1:
                raise ConfigError(f"synthetic spec: {name} must be positive")
        if self.n_samples < self.n_classes:
            raise ConfigError(
                f"synthetic spec: n_samples ({self.n_samples}) must be >= "
                f"n_classes ({self.n_classes})"
            )
        if self.noise_sigma < 0:
            raise ConfigError("synthetic spec: noise_sigma must be >= 0")
        if self.history_len < 1 and self.label_rule != "rgb_cluster_determined":
            raise ConfigError(
                f"label_rule {self.label_rule!r} needs history_len >= 1"
            )
        if self.history_len < 0:
            raise ConfigError("synthetic spec: history_len must be >= 0")

    @classmethod
    def from_dict(cls, obj):
        if not isinstance(obj, dict):
            raise ConfigError("synthetic spec must be a JSON object")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"synthetic spec: unknown keys {sorted(unknown)}")
        missing = {"n_classes", "d_ft", "d_txt", "history_len", "n_samples"} - set(obj)
        if missing:
            raise ConfigError(f"synthetic spec: missing keys {sorted(missing)}")
        return cls(**obj)


def _unit_rows(rng, n, d):
    rows = rng.normal(size=(n, d))
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    while (norms < 1e-8).any():
        bad = norms[:, 0] < 1e-8
        rows[bad] = rng.normal(size=(int(bad.sum()), d))
        norms = np.linalg.norm(rows, axis=1, keepdims=True)
    return rows / norms


def generate_synthetic(spec):
    """Build (train, val, table, meta) deterministically from a SyntheticSpec.

    Label rules: history_determined maps the last history id through a
    fixed permutation (visual features are pure noise);
    rgb_cluster_determined labels by the Gaussian blob the visual
    features were drawn from (history is uniform noise); mixed needs
    both. After the 80/20 split, train samples are patched so every
    class appears at least once whenever the split is large enough;
    the patch rewrites a sample's inputs, never just its label, so the
    label rule stays exact.
    """
    rng = np.random.default_rng(spec.seed)
    c, n = spec.n_classes, spec.n_samples
    table = ClassTextTable(
        rows=_unit_rows(rng, c, spec.d_txt),
        names=[f"class_{i:02d}" for i in range(c)],
    )
    perm = rng.permutation(c)
    centroids_rgb = _unit_rows(rng, c, spec.d_ft)
    centroids_depth = _unit_rows(rng, c, spec.d_ft)

    histories = rng.integers(0, c, size=(n, spec.history_len), dtype=np.int64)
    clusters = rng.integers(0, c, size=n)
    visual_noise = rng.normal(size=(2, n, spec.d_ft))

    def sample_inputs(i):
        if spec.label_rule == "history_determined":
            rgb = visual_noise[0, i]
            depth = visual_noise[1, i]
            label = int(perm[histories[i, -1]])
        else:
            k = clusters[i]
            rgb = centroids_rgb[k] + spec.noise_sigma * visual_noise[0, i]
            depth = centroids_depth[k] + spec.noise_sigma * visual_noise[1, i]
            if spec.label_rule == "rgb_cluster_determined":
                label = int(k)
            else:
                label = int((perm[histories[i, -1]] + k) % c)
        return rgb, depth, label

    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        labels[i] = sample_inputs(i)[2]

    order = rng.permutation(n)
    n_val = max(1, n // 5)
    val_idx = order[:n_val]
    train_idx = order[n_val:]

    # Guarantee class coverage in train by rewriting inputs, largest
    # classes donating samples first.
    if train_idx.size >= c:
        counts = np.bincount(labels[train_idx], minlength=c)
        candidates = sorted(train_idx.tolist())
        for k in range(c):
            if counts[k]:
                continue
            # donate from the currently largest class; one always has >= 2
            # samples while any class is missing and train size >= n_classes
            i = max(candidates, key=lambda j: counts[labels[j]])
            counts[labels[i]] -= 1
            if spec.label_rule == "history_determined":
                histories[i, -1] = int(np.argwhere(perm == k)[0, 0])
            elif spec.label_rule == "rgb_cluster_determined":
                clusters[i] = k
            else:
                clusters[i] = (k - perm[histories[i, -1]]) % c
            labels[i] = sample_inputs(i)[2]
            assert labels[i] == k
            counts[k] += 1

    def build(i):
        rgb, depth, label = sample_inputs(i)
        hist = histories[i]
        if spec.history_len:
            desc = table.rows[hist].mean(axis=0).astype("<f4")
        else:
            desc = np.zeros(spec.d_txt, dtype="<f4")
        return EmbeddingRecord(
            sample_id=int(i),
            label=label,
            history=hist.astype("<i4"),
            rgb=rgb.reshape(1, -1).astype("<f4"),
            depth=depth.reshape(1, -1).astype("<f4"),
            desc_embedding=desc,
        )

    train = [build(i) for i in sorted(train_idx.tolist())]
    val = [build(i) for i in sorted(val_idx.tolist())]
    meta = DatasetMeta(
        d_ft=spec.d_ft,
        d_txt=spec.d_txt,
        n_classes=c,
        history_len=spec.history_len,
        frames=1,
        delta_ms=1000,
        depth_source="gt",
    )
    return train, val, table, meta
