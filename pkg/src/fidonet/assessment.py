"""Assessment stage: BLSTM with attention pooling and task heads.

Both channels' fused features are concatenated along the feature axis
and scored frame by frame; utterance-level intelligibility and HASPI
come from the mean of frame scores, and the enhancement-system class
from the attention-pooled embedding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .dsp import DOMAIN_FB, DOMAIN_PS, DOMAIN_WS, FeatureTensor, WaveContext, lfb_forward
from .errors import ShapeError
from .fido import (
    FidoChannelParams,
    xavier_uniform,
    fido_channel_forward,
    temporal_concat_forward,
)
from .numerics import (
    Parameter,
    Tensor,
    bilstm,
    concat,
    matmul,
    reshape,
    softmax,
    transpose,
)

N_CLASSES = 10


@dataclass
class BlstmParams:
    """One bidirectional LSTM layer plus dense projection and the
    scalar frame-attention vector."""

    fw_w_ih: Parameter
    fw_w_hh: Parameter
    fw_b: Parameter
    bw_w_ih: Parameter
    bw_w_hh: Parameter
    bw_b: Parameter
    dense_w: Parameter
    dense_b: Parameter
    attn_w: Parameter
    hidden: int

    @classmethod
    def init(cls, rng, d_in: int, hidden: int, dense_dim: int, prefix: str, dtype) -> "BlstmParams":
        def gates(tag_in, tag_hh, tag_b, d):
            w_ih = Parameter(
                xavier_uniform(rng, d, 4 * hidden, (d, 4 * hidden), dtype), f"{prefix}.{tag_in}"
            )
            w_hh = Parameter(
                xavier_uniform(rng, hidden, 4 * hidden, (hidden, 4 * hidden), dtype),
                f"{prefix}.{tag_hh}",
            )
            b = Parameter(np.zeros(4 * hidden, dtype=dtype), f"{prefix}.{tag_b}")
            return w_ih, w_hh, b

        fw = gates("fw.w_ih", "fw.w_hh", "fw.b", d_in)
        bw = gates("bw.w_ih", "bw.w_hh", "bw.b", d_in)
        dense_w = Parameter(
            xavier_uniform(rng, 2 * hidden, dense_dim, (2 * hidden, dense_dim), dtype),
            f"{prefix}.dense.w",
        )
        dense_b = Parameter(np.zeros(dense_dim, dtype=dtype), f"{prefix}.dense.b")
        attn_w = Parameter(
            xavier_uniform(rng, dense_dim, 1, (dense_dim, 1), dtype), f"{prefix}.attn.w"
        )
        return cls(*fw, *bw, dense_w, dense_b, attn_w, hidden)

    def parameters(self) -> list[Parameter]:
        return [
            self.fw_w_ih, self.fw_w_hh, self.fw_b,
            self.bw_w_ih, self.bw_w_hh, self.bw_b,
            self.dense_w, self.dense_b, self.attn_w,
        ]


def blstm_attention_forward(
    x: Tensor, p: BlstmParams
) -> tuple[Tensor, Tensor, np.ndarray]:
    """(T, d) -> per-frame features (T, dense_dim) and attention-pooled
    summary (1, dense_dim); also returns the attention weights."""
    if x.ndim != 2 or x.shape[0] == 0:
        raise ShapeError(f"blstm_attention_forward needs a non-empty sequence, got {x.shape}")
    h = bilstm(
        x, p.fw_w_ih, p.fw_w_hh, p.fw_b, p.bw_w_ih, p.bw_w_hh, p.bw_b
    )  # (T, 2*hidden)
    frames = (matmul(h, p.dense_w) + p.dense_b).relu()  # (T, dense_dim)
    # No bias on the attention logits: softmax is shift-invariant, so a
    # bias would be an untrainable null direction.
    scores = matmul(frames, p.attn_w)  # (T, 1)
    alpha = transpose(softmax(transpose(scores)))  # softmax over time, (T, 1)
    pooled = matmul(transpose(alpha), frames)  # (1, dense_dim)
    return frames, pooled, alpha.data


@dataclass
class HeadParams:
    """Frame scorers (one neuron per task) and the 10-way class head."""

    int_w: Parameter
    int_b: Parameter
    haspi_w: Parameter
    haspi_b: Parameter
    cls_w: Parameter
    cls_b: Parameter

    @classmethod
    def init(cls, rng, dense_dim: int, prefix: str, dtype) -> "HeadParams":
        def scorer(tag):
            w = Parameter(xavier_uniform(rng, dense_dim, 1, (dense_dim, 1), dtype), f"{prefix}.{tag}.w")
            b = Parameter(np.zeros(1, dtype=dtype), f"{prefix}.{tag}.b")
            return w, b

        int_w, int_b = scorer("int")
        haspi_w, haspi_b = scorer("haspi")
        cls_w = Parameter(
            xavier_uniform(rng, dense_dim, N_CLASSES, (dense_dim, N_CLASSES), dtype),
            f"{prefix}.cls.w",
        )
        cls_b = Parameter(np.zeros(N_CLASSES, dtype=dtype), f"{prefix}.cls.b")
        return cls(int_w, int_b, haspi_w, haspi_b, cls_w, cls_b)

    def parameters(self) -> list[Parameter]:
        return [self.int_w, self.int_b, self.haspi_w, self.haspi_b, self.cls_w, self.cls_b]


@dataclass(frozen=True)
class Prediction:
    """Materialized model output for one utterance."""

    intelligibility: float  # 0..100
    haspi: float  # 0..1
    class_probs: np.ndarray  # (10,), sums to 1
    frame_int: np.ndarray  # (T,), 0..100
    frame_haspi: np.ndarray  # (T,), 0..1


@dataclass
class ForwardOut:
    """Graph handles kept alive for the loss; `prediction` materializes
    the user-facing values."""

    frame_int_sig: Tensor  # (T, 1) in (0, 1)
    frame_haspi_sig: Tensor  # (T, 1)
    utt_int_sig: Tensor  # scalar in (0, 1)
    utt_haspi_sig: Tensor  # scalar
    class_logits: Tensor  # (10,)
    pooled: Tensor  # (1, dense_dim)
    attention: np.ndarray  # (T, 1) frame-attention weights

    def prediction(self) -> Prediction:
        logits = self.class_logits.data.astype(np.float64)
        shifted = logits - logits.max()
        probs = np.exp(shifted)
        probs /= probs.sum()
        return Prediction(
            intelligibility=float(self.utt_int_sig.data) * 100.0,
            haspi=float(self.utt_haspi_sig.data),
            class_probs=probs,
            frame_int=self.frame_int_sig.data.reshape(-1) * 100.0,
            frame_haspi=self.frame_haspi_sig.data.reshape(-1).copy(),
        )


def task_forward(frames: Tensor, pooled: Tensor, p: HeadParams, attention: np.ndarray) -> ForwardOut:
    s_int = (matmul(frames, p.int_w) + p.int_b).sigmoid()
    s_haspi = (matmul(frames, p.haspi_w) + p.haspi_b).sigmoid()
    logits = reshape(matmul(pooled, p.cls_w) + p.cls_b, (N_CLASSES,))
    return ForwardOut(
        frame_int_sig=s_int,
        frame_haspi_sig=s_haspi,
        utt_int_sig=s_int.mean(),
        utt_haspi_sig=s_haspi.mean(),
        class_logits=logits,
        pooled=pooled,
        attention=attention,
    )


@dataclass(frozen=True)
class FeatureBundle:
    """Resolved per-utterance inputs for both channels."""

    ps_left: np.ndarray
    ps_right: np.ndarray
    wave_left: WaveContext
    wave_right: WaveContext
    ws_left: np.ndarray
    ws_right: np.ndarray


class MbiNetPlus:
    """Two per-channel feature pipelines feeding one assessment stage."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        rng = np.random.default_rng(seed)
        dtype = config.np_dtype
        self.left = FidoChannelParams.init(rng, config, "left.fido")
        self.right = FidoChannelParams.init(rng, config, "right.fido")
        self.blstm = BlstmParams.init(
            rng,
            2 * config.channel_width,
            config.blstm_hidden,
            config.dense_dim,
            "assess.blstm",
            dtype,
        )
        self.heads = HeadParams.init(rng, config.dense_dim, "heads", dtype)

    def parameters(self) -> dict[str, Parameter]:
        out: dict[str, Parameter] = {}
        for p in (
            self.left.parameters()
            + self.right.parameters()
            + self.blstm.parameters()
            + self.heads.parameters()
        ):
            if p.name in out:
                raise ShapeError(f"duplicate parameter name {p.name!r}")
            out[p.name] = p
        return out

    def _channel(self, params: FidoChannelParams, ps: np.ndarray, ctx: WaveContext, ws: np.ndarray) -> Tensor:
        dtype = self.config.np_dtype
        ps_ft = FeatureTensor(Tensor(np.ascontiguousarray(ps, dtype=dtype)), DOMAIN_PS)
        ws_ft = FeatureTensor(Tensor(np.ascontiguousarray(ws, dtype=dtype)), DOMAIN_WS)
        fb_ft = lfb_forward(ctx, params.lfb, dtype=dtype)
        if self.config.concat_mode == "feature":
            return fido_channel_forward(ps_ft, fb_ft, ws_ft, params)
        return temporal_concat_forward(ps_ft, fb_ft, ws_ft, params)

    def forward(self, bundle: FeatureBundle) -> ForwardOut:
        left = self._channel(self.left, bundle.ps_left, bundle.wave_left, bundle.ws_left)
        right = self._channel(self.right, bundle.ps_right, bundle.wave_right, bundle.ws_right)
        fused = concat([left, right], axis=1)
        frames, pooled, attention = blstm_attention_forward(fused, self.blstm)
        return task_forward(frames, pooled, self.heads, attention)

    def predict(self, bundle: FeatureBundle) -> Prediction:
        return self.forward(bundle).prediction()
