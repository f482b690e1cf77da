"""Feature resolution: records -> per-utterance model inputs.

Static features (spectrogram, embeddings) are computed once per record
and cached; the filterbank input is kept as an FFT workspace because its
filters are trainable and must be re-convolved inside the graph on every
step.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .assessment import FeatureBundle
from .config import ModelConfig
from .data import UtteranceRecord
from .dsp import StftConfig, WaveContext, ingest, pad_to_7s, stft_power
from .errors import DataError, FidonetError
from .providers import logmel

logger = logging.getLogger(__name__)


class FeatureCache:
    """On-disk cache of static features keyed by audio content hash."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def content_key(audio_path: Path, kind: str, detail: str) -> str:
        digest = hashlib.sha256()
        digest.update(Path(audio_path).read_bytes())
        digest.update(f"|{kind}|{detail}".encode())
        return digest.hexdigest()[:24]

    def path_for(self, key: str) -> Path:
        return self.root / f"{key}.npy"

    def get(self, key: str) -> np.ndarray | None:
        p = self.path_for(key)
        return np.load(p) if p.exists() else None

    def put(self, key: str, value: np.ndarray) -> Path:
        p = self.path_for(key)
        np.save(p, value)
        return p


def extract_static_features(
    records: list[UtteranceRecord], cache: FeatureCache, n_fft: int = 512
) -> dict:
    """Materialize spectrogram and log-mel caches for `records`.

    Filterbank features are deliberately not cached: they depend on
    trainable filters and are recomputed in-graph each step.
    """
    cfg = StftConfig(n_fft=n_fft)
    index = {}
    for rec in records:
        left, right = (pad_to_7s(w) for w in ingest(rec.audio_path))
        entry = {}
        for channel, wave in (("l", left), ("r", right)):
            ps_key = cache.content_key(rec.audio_path, f"ps.{channel}", f"n_fft={n_fft}")
            if cache.get(ps_key) is None:
                cache.put(ps_key, stft_power(wave, cfg, dtype=np.float32).data.data)
            mel_key = cache.content_key(rec.audio_path, f"logmel.{channel}", "n_mels=80")
            if cache.get(mel_key) is None:
                cache.put(mel_key, logmel(wave).astype(np.float32))
            entry[f"ps_{channel}"] = ps_key
            entry[f"logmel_{channel}"] = mel_key
        index[rec.id] = entry
    (cache.root / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True))
    return index


@dataclass
class FeatureResolver:
    """Loads audio and assembles FeatureBundles through one provider."""

    model_config: ModelConfig
    provider: object  # anything with ws_features(emb_id, channel, wave)
    cache: dict[str, FeatureBundle] = field(default_factory=dict)

    def resolve(self, rec: UtteranceRecord) -> FeatureBundle:
        cached = self.cache.get(rec.id)
        if cached is not None:
            return cached
        cfg = self.model_config
        dtype = cfg.np_dtype
        stft_cfg = StftConfig(n_fft=cfg.n_fft)
        left, right = (pad_to_7s(w) for w in ingest(rec.audio_path))

        def side(wave, channel):
            ps = stft_power(wave, stft_cfg, dtype=dtype).data.data
            ctx = WaveContext.from_waveform(wave, cfg.kernel_len, dtype=dtype)
            ws = self.provider.ws_features(rec.embedding_id(channel), channel, wave)
            return ps, ctx, np.ascontiguousarray(ws.data.data, dtype=dtype)

        ps_l, ctx_l, ws_l = side(left, "left")
        ps_r, ctx_r, ws_r = side(right, "right")
        bundle = FeatureBundle(ps_l, ps_r, ctx_l, ctx_r, ws_l, ws_r)
        self.cache[rec.id] = bundle
        return bundle

    def resolve_all(self, records: list[UtteranceRecord]) -> dict[str, FeatureBundle]:
        """Resolve every record, collecting all failures before aborting."""
        bundles: dict[str, FeatureBundle] = {}
        failures: list[str] = []
        for rec in records:
            try:
                bundles[rec.id] = self.resolve(rec)
            except FidonetError as exc:
                failures.append(f"{rec.id}: {exc}")
        if failures:
            raise DataError(
                "feature resolution failed for "
                f"{len(failures)} utterance(s):\n  " + "\n  ".join(failures)
            )
        return bundles
