"""Waveform ingestion and the two signal-domain feature extractors.

Everything is frame-aligned to 50 frames/s at 16 kHz (hop 320), the rate
the downstream embedding encoder produces, so a padded 7 s clip always
yields exactly 350 frames in every domain.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.fft
from scipy.io import wavfile
from scipy.signal import get_window, resample_poly

from .errors import AudioError, ConfigError, ShapeError
from .numerics import Parameter, Tensor, custom_op

logger = logging.getLogger(__name__)

SAMPLE_RATE = 16000
CLIP_SECONDS = 7
CLIP_SAMPLES = SAMPLE_RATE * CLIP_SECONDS  # 112000
FRAMES_PER_SECOND = 50
HOP = SAMPLE_RATE // FRAMES_PER_SECOND  # 320
CLIP_FRAMES = CLIP_SAMPLES // HOP  # 350

SUPPORTED_RATES = (16000, 32000, 44100, 48000)

DOMAIN_PS = "ps"
DOMAIN_FB = "fb"
DOMAIN_WS = "ws"


@dataclass(frozen=True)
class FeatureTensor:
    """Time-major T x d feature matrix tagged with its domain."""

    data: Tensor
    domain: str

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray  # float64, |s| <= 1 after ingestion
    sample_rate: int
    channel: str  # "left" | "right"

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class StftConfig:
    n_fft: int = 512
    hop: int = HOP
    window: str = "hann"
    center: bool = True

    def __post_init__(self):
        if self.window != "hann":
            raise ConfigError(f"unsupported window {self.window!r}")
        if not self.center:
            raise ConfigError("only centered framing is implemented")
        if self.hop <= 0 or CLIP_SAMPLES % self.hop != 0:
            raise ConfigError(f"hop {self.hop} must divide {CLIP_SAMPLES}")
        if SAMPLE_RATE // self.hop != FRAMES_PER_SECOND or SAMPLE_RATE % self.hop:
            raise ConfigError(
                f"hop {self.hop} breaks the {FRAMES_PER_SECOND} frames/s alignment"
            )
        if self.n_fft < self.hop:
            logger.warning(
                "n_fft %d < hop %d leaves gaps between analysis windows",
                self.n_fft,
                self.hop,
            )

    @property
    def n_bins(self) -> int:
        """Retained bin count (Nyquist dropped so heads divide evenly)."""
        return self.n_fft // 2


def ingest(path: str | Path) -> tuple[Waveform, Waveform]:
    """Read a PCM WAV file into left/right 16 kHz waveforms.

    Mono files are duplicated to both channels; other rates in
    SUPPORTED_RATES are brought to 16 kHz by polyphase windowed-sinc
    resampling. Samples are peak-normalized only when they exceed 1.0.
    """
    path = Path(path)
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise AudioError(f"audio file not found: {path}") from None
    except Exception as exc:
        raise AudioError(f"unreadable audio file {path}: {exc}") from exc

    if data.size == 0:
        raise AudioError(f"zero-length audio: {path}")
    if rate not in SUPPORTED_RATES:
        raise AudioError(f"unsupported sample rate {rate} in {path}")

    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise AudioError(f"unsupported encoding {data.dtype} in {path} (PCM16/float32 only)")

    if samples.ndim == 1:
        left = right = samples
    elif samples.ndim == 2 and samples.shape[1] in (1, 2):
        left = samples[:, 0]
        right = samples[:, -1]
    else:
        raise AudioError(f"unsupported channel layout {samples.shape} in {path}")

    def finish(x: np.ndarray, channel: str) -> Waveform:
        if rate != SAMPLE_RATE:
            g = math.gcd(SAMPLE_RATE, rate)
            x = resample_poly(x, SAMPLE_RATE // g, rate // g)
        peak = np.abs(x).max()
        if peak > 1.0:
            x = x / peak
        return Waveform(np.ascontiguousarray(x), SAMPLE_RATE, channel)

    return finish(left, "left"), finish(right, "right")


def pad_to_7s(w: Waveform) -> Waveform:
    """Right-pad with zeros to exactly 7 s; longer inputs are truncated."""
    if w.sample_rate != SAMPLE_RATE:
        raise AudioError(f"waveform must be {SAMPLE_RATE} Hz, got {w.sample_rate}")
    x = w.samples
    if len(x) >= CLIP_SAMPLES:
        out = x[:CLIP_SAMPLES]
    else:
        out = np.concatenate([x, np.zeros(CLIP_SAMPLES - len(x), dtype=x.dtype)])
    return Waveform(np.ascontiguousarray(out), SAMPLE_RATE, w.channel)


def _frame_signal(x: np.ndarray, n_fft: int, hop: int) -> np.ndarray:
    """Centered frames, one per hop, truncated to len(x)//hop frames."""
    n_frames = len(x) // hop
    half = n_fft // 2
    padded = np.pad(x, (half, half), mode="reflect")
    stride = padded.strides[0]
    frames = np.lib.stride_tricks.as_strided(
        padded,
        shape=(n_frames, n_fft),
        strides=(stride * hop, stride),
        writeable=False,
    )
    return np.ascontiguousarray(frames)


def power_spectrogram(w: Waveform, cfg: StftConfig | None = None) -> np.ndarray:
    """Magnitude-squared STFT, all n_fft//2+1 bins, float64."""
    cfg = cfg or StftConfig()
    frames = _frame_signal(w.samples, cfg.n_fft, cfg.hop)
    win = get_window("hann", cfg.n_fft, fftbins=True)
    spec = np.fft.rfft(frames * win, axis=1)
    return (spec.real**2 + spec.imag**2).astype(np.float64)


def stft_power(
    w: Waveform, cfg: StftConfig | None = None, dtype=np.float32
) -> FeatureTensor:
    """Log-compressed power spectrogram, T x n_fft//2 (Nyquist dropped)."""
    cfg = cfg or StftConfig()
    if len(w) != CLIP_SAMPLES:
        raise ShapeError(f"stft_power expects a {CLIP_SAMPLES}-sample clip, got {len(w)}")
    power = power_spectrogram(w, cfg)[:, : cfg.n_bins]
    feats = np.log1p(power).astype(dtype)
    return FeatureTensor(Tensor(feats), DOMAIN_PS)


# -- learnable filterbank ------------------------------------------------

LOW_FLOOR_HZ = 25.0
BAND_FLOOR_HZ = 50.0
MAX_HZ = 7999.0
INIT_LOW_HZ = 30.0
INIT_HIGH_HZ = 7800.0


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@dataclass
class LfbParams:
    """Learnable band-pass filterbank (windowed-sinc kernels).

    The stored parameters are unconstrained; effective cutoffs are
    low = LOW_FLOOR_HZ + |low_hz| and high = low + BAND_FLOOR_HZ +
    |band_hz| clamped to MAX_HZ, which keeps 0 < low < high < 8000 under
    any gradient update.
    """

    low_hz: Parameter
    band_hz: Parameter
    n_filters: int
    kernel_len: int
    sample_rate: int = SAMPLE_RATE

    def parameters(self) -> list[Parameter]:
        return [self.low_hz, self.band_hz]

    def cutoffs(self) -> tuple[np.ndarray, np.ndarray]:
        low = LOW_FLOOR_HZ + np.abs(self.low_hz.data)
        high = np.minimum(low + BAND_FLOOR_HZ + np.abs(self.band_hz.data), MAX_HZ)
        return low, high


def init_lfb(
    seed: int,
    n_filters: int = 128,
    kernel_len: int = 251,
    dtype=np.float32,
    name_prefix: str = "lfb",
) -> LfbParams:
    """Mel-spaced initialization spanning 30 Hz to 7.8 kHz.

    The construction is deterministic; the seed is accepted for
    interface symmetry with the other initializers.
    """
    del seed  # deterministic construction
    if kernel_len % 2 == 0:
        raise ConfigError(f"kernel_len must be odd, got {kernel_len}")
    mel_pts = np.linspace(_hz_to_mel(INIT_LOW_HZ), _hz_to_mel(INIT_HIGH_HZ), n_filters + 1)
    pts = _mel_to_hz(mel_pts)
    pts[0] = INIT_LOW_HZ
    pts[-1] = INIT_HIGH_HZ
    lows = pts[:-1]
    bands = np.diff(pts)
    # Keep the unconstrained values strictly off the |.| kink.
    p_low = np.maximum(lows - LOW_FLOOR_HZ, 1.0)
    p_band = np.maximum(bands - BAND_FLOOR_HZ, 1.0)
    return LfbParams(
        low_hz=Parameter(p_low.astype(dtype), f"{name_prefix}.low_hz"),
        band_hz=Parameter(p_band.astype(dtype), f"{name_prefix}.band_hz"),
        n_filters=n_filters,
        kernel_len=kernel_len,
    )


@dataclass(frozen=True)
class WaveContext:
    """Per-waveform FFT workspace reused across training steps."""

    samples: np.ndarray  # float64 or float32
    spectrum: np.ndarray  # rfft(samples, nfft)
    nfft: int

    @classmethod
    def from_waveform(cls, w: Waveform, kernel_len: int, dtype=np.float32) -> "WaveContext":
        x = w.samples.astype(dtype)
        if len(x) % HOP != 0:
            raise ShapeError(f"waveform length {len(x)} not a multiple of hop {HOP}")
        nfft = scipy.fft.next_fast_len(len(x) + kernel_len - 1)
        return cls(x, scipy.fft.rfft(x, nfft), nfft)


def build_sinc_kernels(
    low_hz: np.ndarray, high_hz: np.ndarray, kernel_len: int, sample_rate: int = SAMPLE_RATE
) -> np.ndarray:
    """Hamming-windowed sinc band-pass kernels, one row per filter."""
    c = (kernel_len - 1) // 2
    n = np.arange(kernel_len, dtype=np.float64) - c  # symmetric sample offsets
    f1 = np.asarray(low_hz, dtype=np.float64)[:, None] / sample_rate
    f2 = np.asarray(high_hz, dtype=np.float64)[:, None] / sample_rate
    win = np.hamming(kernel_len)
    kern = np.empty((len(f1), kernel_len), dtype=np.float64)
    nz = n != 0
    kern[:, nz] = (np.sin(2 * np.pi * f2 * n[nz]) - np.sin(2 * np.pi * f1 * n[nz])) / (
        np.pi * n[nz]
    )
    kern[:, ~nz] = 2.0 * (f2 - f1)
    return kern * win


def lfb_forward(w: Waveform | WaveContext, p: LfbParams, dtype=np.float32) -> FeatureTensor:
    """Filterbank log-energies per 320-sample frame, T x n_filters.

    Differentiable with respect to the cutoff parameters; the waveform
    itself is treated as a constant.
    """
    ctx = (
        w
        if isinstance(w, WaveContext)
        else WaveContext.from_waveform(w, p.kernel_len, dtype=dtype)
    )
    return _lfb_energy_op(p, ctx)


# Narrow-band energies of unit-scale audio are tiny (bandwidth fraction
# of the total power); the fixed gain lifts them into a range comparable
# to the log-compressed spectrogram so the filterbank branch neither
# vanishes numerically nor starves of gradient.
_ENERGY_FLOOR = 1e-12
_ENERGY_GAIN = 1e4


def _lfb_energy_op(p: LfbParams, ctx: WaveContext) -> FeatureTensor:
    dtype = p.low_hz.data.dtype
    n = len(ctx.samples)
    t_frames = n // HOP
    c = (p.kernel_len - 1) // 2

    p_low = p.low_hz.data.astype(np.float64)
    p_band = p.band_hz.data.astype(np.float64)
    low = LOW_FLOOR_HZ + np.abs(p_low)
    high_raw = low + BAND_FLOOR_HZ + np.abs(p_band)
    high = np.minimum(high_raw, MAX_HZ)

    kernels = build_sinc_kernels(low, high, p.kernel_len, p.sample_rate).astype(dtype)
    kf = scipy.fft.rfft(kernels, ctx.nfft, axis=1)
    full = scipy.fft.irfft(ctx.spectrum[None, :] * kf, ctx.nfft, axis=1)
    y = full[:, c : c + n].astype(dtype)  # same-length conv output

    frames = y.reshape(p.n_filters, t_frames, HOP)
    energy = (frames**2).mean(axis=2)  # (n_filters, T)
    scaled = (energy + _ENERGY_FLOOR) * _ENERGY_GAIN
    out = np.log1p(scaled).T.astype(dtype)  # (T, n_filters)

    def vjp(g: np.ndarray):
        de = g.T * (_ENERGY_GAIN / (1.0 + scaled))  # (n_filters, T)
        dy = ((2.0 / HOP) * frames * de[:, :, None]).astype(dtype)
        dy = dy.reshape(p.n_filters, n)
        # Kernel gradient r[i, j] = sum_s dy[i, s] * x[s + c - j]: a
        # correlation of x with dy evaluated at lags j-c.
        gf = scipy.fft.rfft(dy, ctx.nfft, axis=1)
        corr = scipy.fft.irfft(ctx.spectrum[None, :].conj() * gf, ctx.nfft, axis=1)
        lags = (np.arange(p.kernel_len) - c) % ctx.nfft
        dk = corr[:, lags].astype(np.float64)  # (n_filters, kernel_len)

        offs = np.arange(p.kernel_len, dtype=np.float64) - c
        win = np.hamming(p.kernel_len)
        f1 = low[:, None] / p.sample_rate
        f2 = high[:, None] / p.sample_rate
        dkw = dk * win
        d_f2 = (dkw * 2.0 * np.cos(2 * np.pi * f2 * offs)).sum(axis=1)
        d_f1 = (dkw * -2.0 * np.cos(2 * np.pi * f1 * offs)).sum(axis=1)
        d_high = d_f2 / p.sample_rate
        d_low_direct = d_f1 / p.sample_rate
        open_band = (high_raw < MAX_HZ).astype(np.float64)
        g_low = np.sign(p_low) * (d_low_direct + open_band * d_high)
        g_band = np.sign(p_band) * open_band * d_high
        return g_low.astype(dtype), g_band.astype(dtype)

    out_t = custom_op(out, (p.low_hz, p.band_hz), vjp)
    return FeatureTensor(out_t, DOMAIN_FB)
