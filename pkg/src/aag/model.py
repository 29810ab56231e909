"""The anticipation model: projections, fusion strategies, classifier.

A forward pass projects the RGB and depth embeddings to width D, fuses
them (cross-attention by default), encodes the action history into a
text-side vector, projects that to D as well, fuses the two modalities,
and applies a linear classifier. Video input first collapses each
w-frame window to a single feature row with a positional-encoded
self-attention stack and a CLS token.

Parameters live in an insertion-ordered registry keyed by dotted names;
that order is the checkpoint layout. Only parameters reachable under
the configured strategies are created.
"""

import json
import struct
from dataclasses import dataclass, fields
from typing import NamedTuple

import numpy as np

from .attention import (
    build_encoder_stack,
    encoder_stack_forward,
    glorot_uniform,
    prepend_cls,
    sinusoidal_pe,
)
from .errors import AAGError, ConfigError, DataError, FormatError, UsageError
from .fileio import atomic_write_bytes
from .numerics import (
    Parameter,
    add,
    concat_cols,
    concat_rows,
    matmul,
    mean_rows,
    mul,
    softmax,
    tensor,
)

VISUAL_FUSIONS = (
    "none_rgb_only",
    "concat",
    "sum",
    "soft_attention",
    "self_attention",
    "cross_q_rgb",
    "cross_q_depth",
)
HISTORY_STRATEGIES = ("none", "concat", "transformer", "description")
MULTIMODAL_FUSIONS = ("concat", "sum", "self_attn_three", "self_attn_vis_text")
MODES = ("anticipation", "recognition")
INPUTS = ("frame", "video")

AAGM_MAGIC = b"AAGM"
AAGM_VERSION = 1

_INT_FIELDS = (
    "d", "d_ft", "d_txt", "n_classes", "history_len", "fusion_layers",
    "fusion_heads", "video_layers", "video_heads", "window", "seed",
)
_STR_FIELDS = (
    "visual_fusion", "history_strategy", "multimodal_fusion", "mode",
    "input", "attn_scale", "activation",
)


@dataclass
class ModelConfig:
    """Architecture hyperparameters; validated eagerly and serialized whole."""

    d_ft: int
    d_txt: int
    n_classes: int
    d: int = 768
    history_len: int = 3
    fusion_layers: int = 2
    fusion_heads: int = 4
    video_layers: int = 3
    video_heads: int = 8
    window: int = 16
    visual_fusion: str = "cross_q_rgb"
    history_strategy: str = "concat"
    multimodal_fusion: str = "self_attn_vis_text"
    mode: str = "anticipation"
    input: str = "frame"
    attn_scale: str = "per_head"
    activation: str = "gelu"
    dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("d", "d_ft", "d_txt", "n_classes", "fusion_layers",
                     "fusion_heads", "video_layers", "video_heads", "window"):
            if getattr(self, name) < 1:
                raise ConfigError(f"model config: {name} must be >= 1")
        if self.history_len < 0:
            raise ConfigError("model config: history_len must be >= 0")
        if self.seed < 0:
            raise ConfigError("model config: seed must be >= 0")
        if self.d % self.fusion_heads:
            raise ConfigError(
                f"model config: d ({self.d}) must be divisible by fusion_heads "
                f"({self.fusion_heads})"
            )
        for name, allowed in (
            ("visual_fusion", VISUAL_FUSIONS),
            ("history_strategy", HISTORY_STRATEGIES),
            ("multimodal_fusion", MULTIMODAL_FUSIONS),
            ("mode", MODES),
            ("input", INPUTS),
            ("attn_scale", ("per_head", "full_d")),
            ("activation", ("gelu", "relu")),
        ):
            if getattr(self, name) not in allowed:
                raise ConfigError(
                    f"model config: {name} must be one of {allowed}, "
                    f"got {getattr(self, name)!r}"
                )
        if self.history_strategy == "transformer":
            if self.history_len < 1:
                raise ConfigError(
                    "model config: transformer history needs history_len >= 1"
                )
            if self.d_txt % self.fusion_heads:
                raise ConfigError(
                    f"model config: transformer history runs at width d_txt "
                    f"({self.d_txt}), which must be divisible by fusion_heads "
                    f"({self.fusion_heads})"
                )
        if self.input == "video":
            if self.d_ft % 2:
                raise ConfigError(
                    "model config: video input needs even d_ft for the "
                    "sinusoidal positions"
                )
            if self.d_ft % self.video_heads:
                raise ConfigError(
                    f"model config: the video stack runs at width d_ft "
                    f"({self.d_ft}), which must be divisible by video_heads "
                    f"({self.video_heads})"
                )
        if self.dropout != 0.0:
            raise ConfigError(
                "model config: only dropout = 0.0 is supported (forward passes "
                "are deterministic by contract)"
            )

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, obj):
        if not isinstance(obj, dict):
            raise ConfigError("model config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"model config: unknown keys {sorted(unknown)}")
        missing = {"d_ft", "d_txt", "n_classes"} - set(obj)
        if missing:
            raise ConfigError(f"model config: missing keys {sorted(missing)}")
        clean = {}
        for key, value in obj.items():
            if key in _INT_FIELDS:
                if isinstance(value, bool) or not isinstance(value, int):
                    raise ConfigError(f"model config: {key} must be an integer")
            elif key in _STR_FIELDS:
                if not isinstance(value, str):
                    raise ConfigError(f"model config: {key} must be a string")
            elif key == "dropout":
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ConfigError("model config: dropout must be a number")
                value = float(value)
            clean[key] = value
        return cls(**clean)

    @property
    def needs_depth(self):
        return (
            self.multimodal_fusion == "self_attn_three"
            or self.visual_fusion != "none_rgb_only"
        )

    @property
    def history_width(self):
        if self.history_strategy == "concat":
            return self.history_len * self.d_txt
        return self.d_txt


class Affine(NamedTuple):
    w: Parameter
    b: Parameter


class AAGParameters:
    """All trainable state for one model, in checkpoint order."""

    def __init__(self, config):
        self.config = config
        self.registry = {}
        rng = np.random.default_rng(config.seed)
        d = config.d

        self.proj_rgb = self._affine(rng, "proj_rgb", config.d_ft, d)
        self.proj_depth = None
        if config.needs_depth:
            self.proj_depth = self._affine(rng, "proj_depth", config.d_ft, d)

        self.visual_stack = None
        self.visual_concat = None
        if config.multimodal_fusion != "self_attn_three":
            if config.visual_fusion in ("cross_q_rgb", "cross_q_depth"):
                self.visual_stack = build_encoder_stack(
                    self.registry, rng, "visual", d, config.fusion_heads,
                    config.fusion_layers, "cross",
                )
            elif config.visual_fusion == "self_attention":
                self.visual_stack = build_encoder_stack(
                    self.registry, rng, "visual", d, config.fusion_heads,
                    config.fusion_layers, "self",
                )
            elif config.visual_fusion == "concat":
                self.visual_concat = self._affine(rng, "visual_concat", 2 * d, d)

        self.history_stack = None
        if config.history_strategy == "transformer":
            self.history_stack = build_encoder_stack(
                self.registry, rng, "history", config.d_txt, config.fusion_heads,
                config.fusion_layers, "self",
            )

        self.proj_txt = self._affine(rng, "proj_txt", config.history_width, d)

        self.multimodal_stack = None
        self.multimodal_concat = None
        if config.multimodal_fusion in ("self_attn_vis_text", "self_attn_three"):
            self.multimodal_stack = build_encoder_stack(
                self.registry, rng, "multimodal", d, config.fusion_heads,
                config.fusion_layers, "self",
            )
        elif config.multimodal_fusion == "concat":
            self.multimodal_concat = self._affine(rng, "multimodal_concat", 2 * d, d)

        self.video_stack = None
        self.video_cls = None
        if config.input == "video":
            self.video_stack = build_encoder_stack(
                self.registry, rng, "video", config.d_ft, config.video_heads,
                config.video_layers, "self",
            )
            self.video_cls = Parameter(
                "video.cls", rng.normal(0.0, 0.02, size=(1, config.d_ft))
            )
            self.registry[self.video_cls.name] = self.video_cls

        self.classifier = self._affine(rng, "classifier", d, config.n_classes)

    def _affine(self, rng, name, d_in, d_out):
        w = Parameter(f"{name}.w", glorot_uniform(rng, d_in, d_out))
        b = Parameter(f"{name}.b", np.zeros((1, d_out)))
        self.registry[w.name] = w
        self.registry[b.name] = b
        return Affine(w, b)

    def parameters(self):
        return list(self.registry.values())

    @property
    def n_parameters(self):
        return sum(p.value.data.size for p in self.registry.values())


@dataclass
class HistoryEncoding:
    """What the history encoder consumes: ids or a description vector."""

    strategy: str
    ids: np.ndarray | None = None
    description: np.ndarray | None = None


def pad_history(ids, n):
    """Last n ids, left-padded with -1; adapts any source length to n."""
    tail = [int(i) for i in ids][-n:] if n else []
    return np.array([-1] * (n - len(tail)) + tail, dtype=np.int64)


def roll_history(buffer, predicted, n):
    """FIFO update of the rolling action buffer (most recent last)."""
    return (list(buffer) + [int(predicted)])[-n:] if n else []


def project(m, affine):
    """Affine projection of a row batch: m @ W + b."""
    return add(matmul(m, affine.w.value), affine.b.value)


def fuse_visual(m_rgb, m_depth, params, attn_sink=None):
    """Combine projected RGB and depth rows into m_vis (1 x D)."""
    cfg = params.config
    strategy = cfg.visual_fusion
    kw = dict(activation=cfg.activation, attn_scale=cfg.attn_scale, attn_sink=attn_sink)
    if strategy == "none_rgb_only":
        return m_rgb
    if strategy == "sum":
        return add(m_rgb, m_depth)
    if strategy == "soft_attention":
        return mul(m_rgb, softmax(m_depth, axis=-1))
    if strategy == "concat":
        return project(concat_cols([m_rgb, m_depth]), params.visual_concat)
    if strategy == "self_attention":
        out = encoder_stack_forward(
            concat_rows([m_rgb, m_depth]), params.visual_stack, **kw
        )
        return mean_rows(out)
    if strategy == "cross_q_rgb":
        return encoder_stack_forward(m_rgb, params.visual_stack, kv=m_depth, **kw)
    if strategy == "cross_q_depth":
        return encoder_stack_forward(m_depth, params.visual_stack, kv=m_rgb, **kw)
    raise ConfigError(f"unknown visual fusion strategy {strategy!r}")


def encode_history(h, table, params, attn_sink=None):
    """Turn the action history into the raw text-side vector."""
    cfg = params.config
    if h.strategy == "none":
        return tensor(np.zeros((1, cfg.d_txt)))
    if h.strategy == "description":
        if h.description is None:
            raise UsageError("description history strategy needs a description payload")
        desc = np.asarray(h.description, dtype=np.float64).reshape(1, -1)
        if desc.shape[1] != cfg.d_txt:
            raise DataError(
                f"description embedding width {desc.shape[1]} != d_txt {cfg.d_txt}"
            )
        if not np.all(np.isfinite(desc)):
            raise DataError("description embedding contains non-finite values")
        return tensor(desc)
    if h.ids is None:
        raise UsageError(f"history strategy {h.strategy!r} needs class ids")
    ids = np.asarray(h.ids, dtype=np.int64)
    if ids.shape != (cfg.history_len,):
        raise UsageError(
            f"history must hold exactly {cfg.history_len} ids, got shape {ids.shape}"
        )
    if ids.size and (ids.min() < -1 or ids.max() >= table.n_classes):
        bad = ids[(ids < -1) | (ids >= table.n_classes)][0]
        raise DataError(f"history id {bad} outside [-1, {table.n_classes})")
    rows = np.zeros((cfg.history_len, cfg.d_txt))
    present = ids >= 0
    rows[present] = table.rows[ids[present]]
    if h.strategy == "concat":
        return tensor(rows.reshape(1, -1))
    if h.strategy == "transformer":
        out = encoder_stack_forward(
            tensor(rows), params.history_stack,
            activation=cfg.activation, attn_scale=cfg.attn_scale, attn_sink=attn_sink,
        )
        return mean_rows(out)
    raise ConfigError(f"unknown history strategy {h.strategy!r}")


def fuse_multimodal(m_vis, m_txt, params, rgb_depth=None, attn_sink=None):
    """Pool the visual and text rows into one 1 x D embedding."""
    cfg = params.config
    strategy = cfg.multimodal_fusion
    kw = dict(activation=cfg.activation, attn_scale=cfg.attn_scale, attn_sink=attn_sink)
    if strategy == "sum":
        return add(m_vis, m_txt)
    if strategy == "concat":
        return project(concat_cols([m_vis, m_txt]), params.multimodal_concat)
    if strategy == "self_attn_vis_text":
        out = encoder_stack_forward(
            concat_rows([m_vis, m_txt]), params.multimodal_stack, **kw
        )
        return mean_rows(out)
    if strategy == "self_attn_three":
        if rgb_depth is None:
            raise UsageError("self_attn_three needs the projected rgb and depth rows")
        m_rgb, m_depth = rgb_depth
        out = encoder_stack_forward(
            concat_rows([m_rgb, m_depth, m_txt]), params.multimodal_stack, **kw
        )
        return mean_rows(out)
    raise ConfigError(f"unknown multimodal fusion strategy {strategy!r}")


def classify(pooled, params):
    return project(pooled, params.classifier)


def temporal_aggregate(frames, stack, cls, activation="gelu", attn_scale="per_head",
                       attn_sink=None):
    """Collapse a w x d_ft window to 1 x d_ft via PE + CLS + self-attention."""
    if frames.ndim != 2 or frames.shape[0] == 0:
        raise DataError(f"temporal_aggregate: need a non-empty frame window, "
                        f"got shape {frames.shape}")
    w, d_ft = frames.shape
    x = add(frames, sinusoidal_pe(w, d_ft))
    x = prepend_cls(x, cls)
    out = encoder_stack_forward(x, stack, activation=activation,
                                attn_scale=attn_scale, attn_sink=attn_sink)
    selector = np.zeros((1, w + 1))
    selector[0, 0] = 1.0
    return matmul(tensor(selector), out)


def check_meta_compatible(config, meta):
    """Reject dataset headers the model cannot consume."""
    if meta.d_ft != config.d_ft:
        raise DataError(f"dataset d_ft {meta.d_ft} != model d_ft {config.d_ft}")
    if meta.d_txt != config.d_txt:
        raise DataError(f"dataset d_txt {meta.d_txt} != model d_txt {config.d_txt}")
    if meta.n_classes != config.n_classes:
        raise DataError(
            f"dataset has {meta.n_classes} classes, model expects {config.n_classes}"
        )
    expected = config.window if config.input == "video" else 1
    if meta.frames != expected:
        raise DataError(
            f"dataset frames {meta.frames} != expected {expected} for "
            f"{config.input} input"
        )
    if meta.depth_source == "absent" and config.needs_depth:
        raise DataError(
            "dataset has no depth channel; only visual_fusion=none_rgb_only "
            "configs may consume it"
        )


def forward(record, table, params, attn_sink=None):
    """Logits (1 x n_classes) for one record; errors carry the sample id."""
    cfg = params.config
    try:
        if table.n_classes != cfg.n_classes or table.d_txt != cfg.d_txt:
            raise DataError(
                f"class table ({table.n_classes}, {table.d_txt}) does not match "
                f"model ({cfg.n_classes}, {cfg.d_txt})"
            )
        expected = cfg.window if cfg.input == "video" else 1
        if record.rgb.shape != (expected, cfg.d_ft):
            raise DataError(
                f"rgb shape {record.rgb.shape} != expected ({expected}, {cfg.d_ft})"
            )
        if record.depth.shape != record.rgb.shape:
            raise DataError(
                f"depth shape {record.depth.shape} != rgb shape {record.rgb.shape}"
            )
        kw = dict(activation=cfg.activation, attn_scale=cfg.attn_scale,
                  attn_sink=attn_sink)
        if cfg.input == "video":
            rgb_ft = temporal_aggregate(tensor(record.rgb), params.video_stack,
                                        params.video_cls, **kw)
            depth_ft = None
            if cfg.needs_depth:
                depth_ft = temporal_aggregate(tensor(record.depth), params.video_stack,
                                              params.video_cls, **kw)
        else:
            rgb_ft = tensor(record.rgb)
            depth_ft = tensor(record.depth) if cfg.needs_depth else None

        m_rgb = project(rgb_ft, params.proj_rgb)
        m_depth = project(depth_ft, params.proj_depth) if cfg.needs_depth else None

        if cfg.history_strategy == "description":
            if record.desc_embedding is None:
                raise DataError("record has no description embedding")
            h = HistoryEncoding("description", description=record.desc_embedding)
        elif cfg.history_strategy == "none":
            h = HistoryEncoding("none")
        else:
            h = HistoryEncoding(cfg.history_strategy,
                                ids=pad_history(record.history, cfg.history_len))
        m_txt = project(encode_history(h, table, params, attn_sink), params.proj_txt)

        if cfg.multimodal_fusion == "self_attn_three":
            pooled = fuse_multimodal(None, m_txt, params,
                                     rgb_depth=(m_rgb, m_depth), attn_sink=attn_sink)
        else:
            m_vis = fuse_visual(m_rgb, m_depth, params, attn_sink)
            pooled = fuse_multimodal(m_vis, m_txt, params, attn_sink=attn_sink)
        return classify(pooled, params)
    except AAGError as e:
        raise type(e)(f"sample {record.sample_id}: {e}") from e


def forward_batch(records, table, params):
    """Logits (B x n_classes) for a batch, rows in record order."""
    if not records:
        raise UsageError("forward_batch: empty batch")
    return concat_rows([forward(r, table, params) for r in records])


# ---------------------------------------------------------------------------
# checkpoints


def save_model(path, params):
    """Write config + registry to an AAGM file; float32, little-endian."""
    cfg_json = json.dumps(params.config.to_dict()).encode("utf-8")
    chunks = [
        struct.pack("<4sH", AAGM_MAGIC, AAGM_VERSION),
        struct.pack("<I", len(cfg_json)),
        cfg_json,
        struct.pack("<I", len(params.registry)),
    ]
    for name, p in params.registry.items():
        encoded = name.encode("utf-8")
        arr = p.value.data
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    atomic_write_bytes(path, b"".join(chunks))


def load_model(path):
    """Rebuild AAGParameters from an AAGM file; layout checked exactly."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 10:
        raise FormatError(f"{path}: truncated header, {len(raw)} bytes")
    magic, version = struct.unpack_from("<4sH", raw, 0)
    if magic != AAGM_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {AAGM_MAGIC!r}")
    if version != AAGM_VERSION:
        raise FormatError(f"{path}: unsupported AAGM version {version}")
    (cfg_len,) = struct.unpack_from("<I", raw, 6)
    offset = 10
    if len(raw) < offset + cfg_len + 4:
        raise FormatError(f"{path}: truncated at byte {len(raw)} inside config")
    try:
        cfg_obj = json.loads(raw[offset : offset + cfg_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: config block is not valid JSON: {e}") from e
    config = ModelConfig.from_dict(cfg_obj)
    offset += cfg_len
    (n_params,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    params = AAGParameters(config)
    if n_params != len(params.registry):
        raise FormatError(
            f"{path}: file holds {n_params} parameters, config implies "
            f"{len(params.registry)}"
        )
    for name, p in params.registry.items():
        if len(raw) < offset + 2:
            raise FormatError(f"{path}: truncated at byte {len(raw)} before {name}")
        (name_len,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        stored = raw[offset : offset + name_len].decode("utf-8")
        offset += name_len
        if stored != name:
            raise FormatError(
                f"{path}: parameter order mismatch, file has {stored!r} where "
                f"the config expects {name!r}"
            )
        if len(raw) < offset + 1:
            raise FormatError(f"{path}: truncated at byte {len(raw)} in {name}")
        (ndim,) = struct.unpack_from("<B", raw, offset)
        offset += 1
        if len(raw) < offset + 4 * ndim:
            raise FormatError(f"{path}: truncated at byte {len(raw)} in {name}")
        shape = struct.unpack_from(f"<{ndim}I", raw, offset)
        offset += 4 * ndim
        if shape != p.value.data.shape:
            raise FormatError(
                f"{path}: parameter {name} has shape {shape}, expected "
                f"{p.value.data.shape}"
            )
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        if len(raw) < offset + 4 * count:
            raise FormatError(f"{path}: truncated at byte {len(raw)} in {name} data")
        data = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
        offset += 4 * count
        p.value.data = data.reshape(shape).astype(p.value.data.dtype)
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes")
    return params
