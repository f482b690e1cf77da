"""Acoustic embedding providers.

The trained assessment model consumes encoder embeddings through one
interface with two implementations: a loader for precomputed embedding
files (written by the offline exporter) and a deterministic surrogate
encoder used in tests and desk-scale runs.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dsp import (
    CLIP_FRAMES,
    CLIP_SAMPLES,
    DOMAIN_WS,
    FeatureTensor,
    StftConfig,
    Waveform,
    power_spectrogram,
)
from .errors import ConfigError, EmbeddingError, ShapeError
from .numerics import Tensor

logger = logging.getLogger(__name__)

EMB_MAGIC = b"FIDOEMB1"
EMB_VERSION = 1
EMB_DTYPE_F32 = 0
_HEADER = struct.Struct("<8sIIII")  # magic, version, T, d, dtype_code

N_MELS = 80
_LOGMEL_FLOOR = 1e-10


@dataclass(frozen=True)
class ProviderConfig:
    """Which embedding source to use and its dimensionality."""

    kind: str = "surrogate"  # "file" | "surrogate"
    d_ws: int = 1280
    seed: int = 0  # surrogate only
    embedding_dir: str | None = None  # file only

    def __post_init__(self):
        if self.kind not in ("file", "surrogate"):
            raise ConfigError(f"unknown provider kind {self.kind!r}")
        if self.kind == "file" and not self.embedding_dir:
            raise ConfigError("file provider requires embedding_dir")


def write_embedding(path: str | Path, emb: np.ndarray) -> None:
    """Write a T x d float32 embedding in the binary interchange format."""
    emb = np.ascontiguousarray(emb, dtype="<f4")
    if emb.ndim != 2:
        raise ShapeError(f"embedding must be 2-D, got shape {emb.shape}")
    t, d = emb.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(EMB_MAGIC, EMB_VERSION, t, d, EMB_DTYPE_F32))
        fh.write(emb.tobytes())


def read_embedding_header(path: str | Path) -> dict:
    """Parse and validate only the fixed-size header."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise EmbeddingError(f"cannot read embedding file {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise EmbeddingError(f"{path}: file shorter than header ({len(raw)} bytes)")
    magic, version, t, d, dtype_code = _HEADER.unpack_from(raw)
    if magic != EMB_MAGIC:
        raise EmbeddingError(f"{path}: bad magic {magic!r}")
    if version != EMB_VERSION:
        raise EmbeddingError(f"{path}: unsupported version {version}")
    if dtype_code != EMB_DTYPE_F32:
        raise EmbeddingError(f"{path}: unsupported dtype code {dtype_code}")
    return {
        "path": str(path),
        "version": version,
        "frames": t,
        "dim": d,
        "dtype": "f32",
        "payload_bytes": len(raw) - _HEADER.size,
    }


def load_embedding(path: str | Path, dtype=np.float32) -> FeatureTensor:
    """Load an embedding file into a T x d feature tensor."""
    path = Path(path)
    header = read_embedding_header(path)
    t, d = header["frames"], header["dim"]
    expected = t * d * 4
    actual = header["payload_bytes"]
    if actual != expected:
        raise EmbeddingError(
            f"{path}: truncated payload, expected {expected} bytes, got {actual}"
        )
    raw = path.read_bytes()[_HEADER.size :]
    emb = np.frombuffer(raw, dtype="<f4").reshape(t, d)
    if not np.all(np.isfinite(emb)):
        raise EmbeddingError(f"{path}: non-finite values in payload")
    if t != CLIP_FRAMES:
        logger.warning(
            "%s: %d frames instead of %d; downstream fusion will reject it",
            path,
            t,
            CLIP_FRAMES,
        )
    return FeatureTensor(Tensor(emb.astype(dtype)), DOMAIN_WS)


def mel_filterbank(n_mels: int = N_MELS, n_fft: int = 512, sample_rate: int = 16000) -> np.ndarray:
    """Triangular mel filters over rfft bins, 0 Hz to Nyquist."""

    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    n_bins = n_fft // 2 + 1
    freqs = np.linspace(0, sample_rate / 2, n_bins)
    pts = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2), n_mels + 2))
    bank = np.zeros((n_mels, n_bins))
    for i in range(n_mels):
        lo, ctr, hi = pts[i], pts[i + 1], pts[i + 2]
        up = (freqs - lo) / (ctr - lo)
        down = (hi - freqs) / (hi - ctr)
        bank[i] = np.maximum(0.0, np.minimum(up, down))
    return bank


def logmel(w: Waveform, dtype=np.float64) -> np.ndarray:
    """80-bin log10 mel spectrogram at the shared 50 frames/s framing."""
    if len(w) != CLIP_SAMPLES:
        raise ShapeError(f"logmel expects a {CLIP_SAMPLES}-sample clip, got {len(w)}")
    power = power_spectrogram(w, StftConfig())
    mel = power @ mel_filterbank().T
    return np.log10(np.maximum(mel, _LOGMEL_FLOOR)).astype(dtype)


def surrogate_encode(
    w: Waveform, cfg: ProviderConfig, dtype=np.float32
) -> FeatureTensor:
    """Deterministic stand-in encoder: log-mel, seeded projection, tanh."""
    feats = logmel(w)
    proj = _surrogate_projection(cfg.seed, cfg.d_ws)
    out = np.tanh(feats @ proj).astype(dtype)
    return FeatureTensor(Tensor(out), DOMAIN_WS)


def _surrogate_projection(seed: int, d_ws: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, 0.02, size=(N_MELS, d_ws))


@dataclass
class FileProvider:
    """Resolves embeddings from `<embedding_dir>/<emb_id>.<l|r>.femb`."""

    embedding_dir: Path
    dtype: type = np.float32

    def load(self, emb_id: str, channel: str) -> FeatureTensor:
        suffix = {"left": "l", "right": "r"}[channel]
        return load_embedding(
            Path(self.embedding_dir) / f"{emb_id}.{suffix}.femb", dtype=self.dtype
        )

    def ws_features(self, emb_id: str, channel: str, wave: Waveform) -> FeatureTensor:
        del wave
        return self.load(emb_id, channel)


@dataclass
class SurrogateProvider:
    """Deterministic test encoder; depends only on (samples, seed)."""

    config: ProviderConfig
    dtype: type = np.float32
    _cache: dict = field(default_factory=dict, repr=False)

    def ws_features(self, emb_id: str, channel: str, wave: Waveform) -> FeatureTensor:
        del emb_id, channel
        return surrogate_encode(wave, self.config, dtype=self.dtype)


def make_provider(cfg: ProviderConfig, dtype=np.float32):
    if cfg.kind == "file":
        return FileProvider(Path(cfg.embedding_dir), dtype=dtype)
    return SurrogateProvider(cfg, dtype=dtype)
