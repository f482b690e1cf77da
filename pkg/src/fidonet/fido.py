"""Per-channel feature-importance pipeline.

Each acoustic domain (spectrogram, filterbank, encoder embedding) passes
through its own multi-head self-attention block so the model can weight
salient regions right after extraction. Spectrogram and filterbank
outputs are then fused along the feature axis into a conv block, the
embedding branch is reduced by an adapter layer, and the two halves are
concatenated into the channel's fused representation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import CNN_CHANNELS, ModelConfig
from .dsp import DOMAIN_FB, DOMAIN_PS, DOMAIN_WS, FeatureTensor, LfbParams, init_lfb
from .errors import ShapeError
from .numerics import (
    Parameter,
    Tensor,
    concat,
    conv2d_same,
    matmul,
    mean_axis,
    reshape,
    softmax,
    transpose,
)
from .numerics.ops import layer_norm_rows


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape, dtype) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


@dataclass
class MhsaParams:
    """Projection matrices of one multi-head self-attention block."""

    w_q: Parameter
    w_k: Parameter
    w_v: Parameter
    w_o: Parameter
    heads: int

    @classmethod
    def init(cls, rng, d: int, heads: int, prefix: str, dtype) -> "MhsaParams":
        if d % heads != 0:
            raise ShapeError(f"width {d} not divisible by {heads} heads")
        mk = lambda tag: Parameter(xavier_uniform(rng, d, d, (d, d), dtype), f"{prefix}.{tag}")
        return cls(mk("w_q"), mk("w_k"), mk("w_v"), mk("w_o"), heads)

    @property
    def dim(self) -> int:
        return self.w_q.shape[0]

    @property
    def d_k(self) -> int:
        return self.dim // self.heads

    def parameters(self) -> list[Parameter]:
        return [self.w_q, self.w_k, self.w_v, self.w_o]


def mhsa_forward(
    x: FeatureTensor, p: MhsaParams, return_attn: bool = False
) -> FeatureTensor | tuple[FeatureTensor, np.ndarray]:
    """Scaled dot-product self-attention with H parallel heads.

    No positional encoding: the block is permutation-equivariant over
    frames, and frame order information enters later through the conv
    block.
    """
    t, d = x.data.shape
    if d != p.dim:
        raise ShapeError(f"input width {d} != attention width {p.dim}")
    h, d_k = p.heads, p.d_k

    def split_heads(m: Tensor) -> Tensor:
        return transpose(reshape(m, (t, h, d_k)), (1, 0, 2))  # (H, T, d_k)

    q = split_heads(matmul(x.data, p.w_q))
    k = split_heads(matmul(x.data, p.w_k))
    v = split_heads(matmul(x.data, p.w_v))
    scores = matmul(q, transpose(k, (0, 2, 1))) * (1.0 / math.sqrt(d_k))
    attn = softmax(scores)  # (H, T, T), rows sum to 1
    heads_out = matmul(attn, v)  # (H, T, d_k)
    merged = reshape(transpose(heads_out, (1, 0, 2)), (t, d))
    out = FeatureTensor(matmul(merged, p.w_o), x.domain)
    if return_attn:
        return out, attn.data
    return out


def concat_features(a: FeatureTensor, b: FeatureTensor) -> FeatureTensor:
    """Row-aligned feature-axis concatenation, `a`'s columns first."""
    if a.data.shape[0] != b.data.shape[0]:
        raise ShapeError(
            f"frame mismatch concatenating {a.domain} ({a.data.shape[0]} frames) "
            f"with {b.domain} ({b.data.shape[0]} frames)"
        )
    if b.data.shape[1] == 0:
        return FeatureTensor(a.data, f"{a.domain}+{b.domain}")
    return FeatureTensor(concat([a.data, b.data], axis=1), f"{a.domain}+{b.domain}")


@dataclass
class CnnParams:
    """Four 3x3 conv layers with feature-axis stride 2 and a final mean
    pool over the remaining feature positions."""

    weights: list[Parameter]
    biases: list[Parameter]

    @classmethod
    def init(cls, rng, prefix: str, dtype) -> "CnnParams":
        weights, biases = [], []
        c_in = 1
        for i, c_out in enumerate(CNN_CHANNELS, start=1):
            fan_in, fan_out = c_in * 9, c_out * 9
            weights.append(
                Parameter(
                    xavier_uniform(rng, fan_in, fan_out, (c_out, c_in, 3, 3), dtype),
                    f"{prefix}.conv{i}.w",
                )
            )
            biases.append(Parameter(np.zeros(c_out, dtype=dtype), f"{prefix}.conv{i}.b"))
            c_in = c_out
        return cls(weights, biases)

    def parameters(self) -> list[Parameter]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out


def cnn_forward(x: Tensor, p: CnnParams) -> Tensor:
    """(T, F) -> (T, 128): time extent preserved, features strided down."""
    if x.ndim != 2 or x.shape[0] < 1:
        raise ShapeError(f"cnn_forward expects a non-empty 2-D tensor, got {x.shape}")
    t = x.shape[0]
    h = reshape(x, (1, t, x.shape[1]))
    for w, b in zip(p.weights, p.biases):
        h = conv2d_same(h, w, b, stride_f=2).relu()
    pooled = mean_axis(h, axis=2)  # (C, T)
    return transpose(pooled)


@dataclass
class AdapterParams:
    """Single dense+ReLU layer aligning the embedding branch with the
    conv output width."""

    w: Parameter
    b: Parameter

    @classmethod
    def init(cls, rng, d_in: int, d_out: int, prefix: str, dtype) -> "AdapterParams":
        return cls(
            Parameter(xavier_uniform(rng, d_in, d_out, (d_in, d_out), dtype), f"{prefix}.w"),
            Parameter(np.zeros(d_out, dtype=dtype), f"{prefix}.b"),
        )

    def parameters(self) -> list[Parameter]:
        return [self.w, self.b]


def adapter_forward(x: Tensor, p: AdapterParams) -> Tensor:
    return (matmul(x, p.w) + p.b).relu()


@dataclass
class DomainProjection:
    """Per-domain linear map to the shared width of the temporal mode."""

    w: Parameter
    b: Parameter

    @classmethod
    def init(cls, rng, d_in: int, d_out: int, prefix: str, dtype) -> "DomainProjection":
        return cls(
            Parameter(xavier_uniform(rng, d_in, d_out, (d_in, d_out), dtype), f"{prefix}.w"),
            Parameter(np.zeros(d_out, dtype=dtype), f"{prefix}.b"),
        )

    def parameters(self) -> list[Parameter]:
        return [self.w, self.b]


@dataclass
class FidoChannelParams:
    """All trainable state of one audio channel's feature pipeline."""

    mhsa_ps: MhsaParams
    mhsa_fb: MhsaParams
    mhsa_ws: MhsaParams
    cnn: CnnParams
    adapter: AdapterParams
    lfb: LfbParams
    projections: dict[str, DomainProjection] = field(default_factory=dict)
    layer_norm: bool = False

    @classmethod
    def init(cls, rng, cfg: ModelConfig, prefix: str) -> "FidoChannelParams":
        dtype = cfg.np_dtype
        params = cls(
            mhsa_ps=MhsaParams.init(rng, cfg.d_ps, cfg.heads, f"{prefix}.ps.mhsa", dtype),
            mhsa_fb=MhsaParams.init(rng, cfg.d_fb, cfg.heads, f"{prefix}.fb.mhsa", dtype),
            mhsa_ws=MhsaParams.init(rng, cfg.d_ws, cfg.heads, f"{prefix}.ws.mhsa", dtype),
            cnn=CnnParams.init(rng, f"{prefix}.cnn", dtype),
            adapter=AdapterParams.init(
                rng, cfg.d_ws, cfg.adapter_dim, f"{prefix}.adapter", dtype
            ),
            lfb=init_lfb(0, cfg.n_filters, cfg.kernel_len, dtype, f"{prefix}.lfb"),
            layer_norm=cfg.layer_norm,
        )
        if cfg.concat_mode == "temporal":
            for dom, d_in in ((DOMAIN_PS, cfg.d_ps), (DOMAIN_FB, cfg.d_fb), (DOMAIN_WS, cfg.d_ws)):
                params.projections[dom] = DomainProjection.init(
                    rng, d_in, cfg.temporal_width, f"{prefix}.proj.{dom}", dtype
                )
        return params

    def parameters(self) -> list[Parameter]:
        out = list(self.lfb.parameters())
        for m in (self.mhsa_ps, self.mhsa_fb, self.mhsa_ws):
            out.extend(m.parameters())
        out.extend(self.cnn.parameters())
        out.extend(self.adapter.parameters())
        for dom in sorted(self.projections):
            out.extend(self.projections[dom].parameters())
        return out


def _check_domains(ps: FeatureTensor, fb: FeatureTensor, ws: FeatureTensor) -> None:
    got = (ps.domain, fb.domain, ws.domain)
    if got != (DOMAIN_PS, DOMAIN_FB, DOMAIN_WS):
        raise ShapeError(f"expected (ps, fb, ws) inputs, got domains {got}")
    frames = {f.domain: f.data.shape[0] for f in (ps, fb, ws)}
    if len(set(frames.values())) != 1:
        raise ShapeError(f"frame counts differ across domains: {frames}")


def _attend(x: FeatureTensor, p: MhsaParams, normalize: bool) -> FeatureTensor:
    if normalize:
        x = FeatureTensor(layer_norm_rows(x.data), x.domain)
    return mhsa_forward(x, p)


def fido_channel_forward(
    ps: FeatureTensor, fb: FeatureTensor, ws: FeatureTensor, p: FidoChannelParams
) -> Tensor:
    """Feature-based fusion: (T, d_*) inputs -> (T, 256) channel output."""
    _check_domains(ps, fb, ws)
    ps_a = _attend(ps, p.mhsa_ps, p.layer_norm)
    fb_a = _attend(fb, p.mhsa_fb, p.layer_norm)
    ws_a = _attend(ws, p.mhsa_ws, p.layer_norm)
    fused = concat_features(ps_a, fb_a)
    conv_out = cnn_forward(fused.data, p.cnn)
    adapt_out = adapter_forward(ws_a.data, p.adapter)
    return concat([conv_out, adapt_out], axis=1)


def temporal_stack(
    ps: FeatureTensor, fb: FeatureTensor, ws: FeatureTensor, p: FidoChannelParams
) -> Tensor:
    """Project each domain's attention output to the shared width and
    stack along time: spectrogram rows, then filterbank, then embedding."""
    _check_domains(ps, fb, ws)
    if not p.projections:
        raise ShapeError("channel was not initialized for temporal concatenation")
    stacked = []
    for feat, mhsa in ((ps, p.mhsa_ps), (fb, p.mhsa_fb), (ws, p.mhsa_ws)):
        att = _attend(feat, mhsa, p.layer_norm)
        proj = p.projections[feat.domain]
        stacked.append(matmul(att.data, proj.w) + proj.b)
    return concat(stacked, axis=0)


def temporal_concat_forward(
    ps: FeatureTensor, fb: FeatureTensor, ws: FeatureTensor, p: FidoChannelParams
) -> Tensor:
    """Ablation mode: stack domains along time, (T, d_*) -> (3T, 128)."""
    return cnn_forward(temporal_stack(ps, fb, ws, p), p.cnn)
