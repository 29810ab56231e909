"""Multi-head attention and pre-norm transformer encoder blocks.

Layers come in two wirings: self-attention (keys and values from the
running stream) and cross-attention (keys and values from a second
sequence, fed unchanged into every layer). Heads are realized by
column-slicing one fused projection per role; a W_O projection merges
them back to width D. No masking, no KV cache, dropout fixed at zero.
"""

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError, UsageError
from .numerics import (
    Parameter,
    add,
    concat_cols,
    concat_rows,
    gelu,
    layer_norm,
    matmul,
    relu,
    scale,
    slice_cols,
    softmax,
    tensor,
    transpose,
)

ACTIVATIONS = {"gelu": gelu, "relu": relu}
ATTN_SCALES = ("per_head", "full_d")


def glorot_uniform(rng, fan_in, fan_out):
    """Glorot-uniform weight matrix of shape (fan_in, fan_out)."""
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@dataclass
class MHAParams:
    """Query/key/value/output projections for one attention block."""

    w_q: Parameter
    w_k: Parameter
    w_v: Parameter
    w_o: Parameter
    n_heads: int

    def __post_init__(self):
        d = self.w_q.value.shape[0]
        for p in (self.w_q, self.w_k, self.w_v, self.w_o):
            if p.value.shape != (d, d):
                raise ConfigError(
                    f"attention projection {p.name} must be {d}x{d}, got {p.value.shape}"
                )
        if self.n_heads < 1 or d % self.n_heads != 0:
            raise ConfigError(f"n_heads={self.n_heads} must divide width {d}")

    @property
    def d(self):
        return self.w_q.value.shape[0]


@dataclass
class EncoderLayer:
    """Pre-norm encoder layer: attention and FFN sublayers with residuals."""

    mha: MHAParams
    ffn_in: Parameter
    ffn_b1: Parameter
    ffn_out: Parameter
    ffn_b2: Parameter
    norm1_gamma: Parameter
    norm1_beta: Parameter
    norm2_gamma: Parameter
    norm2_beta: Parameter


@dataclass
class EncoderStack:
    """Ordered encoder layers sharing one wiring mode."""

    layers: list
    mode: str

    def __post_init__(self):
        if self.mode not in ("self", "cross"):
            raise ConfigError(f"encoder mode must be self or cross, got {self.mode!r}")


def build_mha_params(registry, rng, prefix, d, n_heads):
    def weight(suffix):
        p = Parameter(f"{prefix}.{suffix}", glorot_uniform(rng, d, d))
        registry[p.name] = p
        return p

    return MHAParams(weight("w_q"), weight("w_k"), weight("w_v"), weight("w_o"), n_heads)


def build_encoder_layer(registry, rng, prefix, d, n_heads, d_ff=None):
    if d_ff is None:
        d_ff = 4 * d

    def param(suffix, data):
        p = Parameter(f"{prefix}.{suffix}", data)
        registry[p.name] = p
        return p

    return EncoderLayer(
        mha=build_mha_params(registry, rng, f"{prefix}.mha", d, n_heads),
        ffn_in=param("ffn_in", glorot_uniform(rng, d, d_ff)),
        ffn_b1=param("ffn_b1", np.zeros((1, d_ff))),
        ffn_out=param("ffn_out", glorot_uniform(rng, d_ff, d)),
        ffn_b2=param("ffn_b2", np.zeros((1, d))),
        norm1_gamma=param("norm1_gamma", np.ones(d)),
        norm1_beta=param("norm1_beta", np.zeros(d)),
        norm2_gamma=param("norm2_gamma", np.ones(d)),
        norm2_beta=param("norm2_beta", np.zeros(d)),
    )


def build_encoder_stack(registry, rng, prefix, d, n_heads, n_layers, mode):
    if n_layers < 1:
        raise ConfigError(f"encoder stack needs at least one layer, got {n_layers}")
    layers = [
        build_encoder_layer(registry, rng, f"{prefix}.layer{i}", d, n_heads)
        for i in range(n_layers)
    ]
    return EncoderStack(layers=layers, mode=mode)


def multi_head_attention(q_in, kv_in, p, attn_scale="per_head", attn_sink=None):
    """softmax(Q_h K_h^T / sqrt(d_k)) V_h per head, heads merged through W_O.

    Queries come from q_in, keys and values from kv_in; self-attention is
    the kv_in == q_in special case. `attn_sink`, if given, is a list that
    receives one float32 copy of each head's attention map.
    """
    d = p.d
    if q_in.shape[-1] != d or kv_in.shape[-1] != d:
        raise ShapeError(
            f"attention expects width {d}, got {q_in.shape} / {kv_in.shape}"
        )
    if attn_scale not in ATTN_SCALES:
        raise ConfigError(f"attn_scale must be one of {ATTN_SCALES}, got {attn_scale!r}")
    q = matmul(q_in, p.w_q.value)
    k = matmul(kv_in, p.w_k.value)
    v = matmul(kv_in, p.w_v.value)
    dk = d // p.n_heads
    inv = 1.0 / math.sqrt(dk if attn_scale == "per_head" else d)
    heads = []
    for h in range(p.n_heads):
        lo, hi = h * dk, (h + 1) * dk
        scores = scale(matmul(slice_cols(q, lo, hi), transpose(slice_cols(k, lo, hi))), inv)
        attn = softmax(scores, axis=-1)
        if attn_sink is not None:
            attn_sink.append(np.asarray(attn.data, dtype=np.float32).copy())
        heads.append(matmul(attn, slice_cols(v, lo, hi)))
    merged = heads[0] if len(heads) == 1 else concat_cols(heads)
    return matmul(merged, p.w_o.value)


def encoder_layer_forward(
    x, layer, kv=None, activation="gelu", attn_scale="per_head", attn_sink=None
):
    """x + MHA(norm1(x), kv or norm1(x)), then + FFN(norm2(.))."""
    if activation not in ACTIVATIONS:
        raise ConfigError(f"activation must be one of {tuple(ACTIVATIONS)}, got {activation!r}")
    act = ACTIVATIONS[activation]
    normed = layer_norm(x, layer.norm1_gamma.value, layer.norm1_beta.value)
    attended = multi_head_attention(
        normed, normed if kv is None else kv, layer.mha, attn_scale, attn_sink
    )
    h = add(x, attended)
    normed2 = layer_norm(h, layer.norm2_gamma.value, layer.norm2_beta.value)
    hidden = act(add(matmul(normed2, layer.ffn_in.value), layer.ffn_b1.value))
    ffn = add(matmul(hidden, layer.ffn_out.value), layer.ffn_b2.value)
    return add(h, ffn)


def encoder_stack_forward(
    x, stack, kv=None, activation="gelu", attn_scale="per_head", attn_sink=None
):
    """Run every layer; cross mode feeds the same kv sequence to each."""
    if stack.mode == "cross" and kv is None:
        raise UsageError("cross-attention stack requires a kv sequence")
    if stack.mode == "self" and kv is not None:
        raise UsageError("self-attention stack does not take a kv sequence")
    for layer in stack.layers:
        x = encoder_layer_forward(x, layer, kv, activation, attn_scale, attn_sink)
    return x


def sinusoidal_pe(length, d):
    """PE[pos, 2i] = sin(pos / 10000^(2i/d)), PE[pos, 2i+1] = cos(same)."""
    if d % 2 != 0:
        raise ConfigError(f"sinusoidal positions need an even width, got {d}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    freq = np.exp(np.arange(0, d, 2, dtype=np.float64) * (-math.log(10000.0) / d))
    pe = np.empty((length, d), dtype=np.float64)
    pe[:, 0::2] = np.sin(pos * freq)
    pe[:, 1::2] = np.cos(pos * freq)
    return tensor(pe)


def prepend_cls(seq, cls):
    """Row 0 becomes the CLS parameter; the sequence follows unchanged."""
    if seq.ndim != 2 or seq.shape[1] != cls.value.shape[1]:
        raise ShapeError(
            f"cannot prepend {cls.value.shape} CLS to sequence {seq.shape}"
        )
    return concat_rows([cls.value, seq])


def dump_attention_maps(path, maps):
    """Write attention maps as 32-bit little-endian records for inspection.

    Layout: u32 map count, then per map u32 rows, u32 cols, rows*cols
    float32 values, row-major. All fields little-endian.
    """
    with open(path, "wb") as f:
        f.write(struct.pack("<I", len(maps)))
        for m in maps:
            m = np.asarray(m, dtype="<f4")
            if m.ndim != 2:
                raise UsageError(f"attention map must be 2-D, got shape {m.shape}")
            f.write(struct.pack("<II", m.shape[0], m.shape[1]))
            f.write(m.tobytes(order="C"))


def load_attention_maps(path):
    """Read maps written by dump_attention_maps."""
    with open(path, "rb") as f:
        raw = f.read()
    (count,) = struct.unpack_from("<I", raw, 0)
    offset = 4
    maps = []
    for _ in range(count):
        rows, cols = struct.unpack_from("<II", raw, offset)
        offset += 8
        m = np.frombuffer(raw, dtype="<f4", count=rows * cols, offset=offset)
        offset += 4 * rows * cols
        maps.append(m.reshape(rows, cols).copy())
    return maps
