"""Manifest ingestion and the seeded synthetic corpus generator.

The canonical manifest is JSON lines with keys
`id,audio,emb_l,emb_r,intelligibility,haspi,ha_class,track,split`
(embedding ids are optional when the surrogate provider is configured).
Audio paths may be relative to the manifest's directory.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import DataError, ManifestError

logger = logging.getLogger(__name__)

REQUIRED_KEYS = ("id", "audio", "intelligibility", "haspi", "ha_class", "track", "split")
OPTIONAL_KEYS = ("emb_l", "emb_r")
SPLITS = ("train", "dev", "test")


@dataclass(frozen=True)
class UtteranceRecord:
    id: str
    audio_path: Path
    intelligibility: float  # 0..100
    haspi: float  # 0..1
    ha_class: int  # 0..9
    track: int  # 1..3
    split: str  # train | dev | test
    emb_l: str | None = None
    emb_r: str | None = None

    def embedding_id(self, channel: str) -> str:
        chosen = self.emb_l if channel == "left" else self.emb_r
        return chosen if chosen else self.id


@dataclass
class Manifest:
    records: list[UtteranceRecord]
    source: Path | None = None
    track_counts: Counter = field(default_factory=Counter)

    def __len__(self) -> int:
        return len(self.records)

    def subset(self, split: str) -> "Manifest":
        recs = [r for r in self.records if r.split == split]
        return Manifest(recs, self.source, Counter(r.track for r in recs))


def _record_from_dict(raw: dict, line_no: int, base: Path) -> UtteranceRecord:
    missing = [k for k in REQUIRED_KEYS if k not in raw]
    if missing:
        raise ManifestError(f"line {line_no}: missing key(s) {', '.join(missing)}")
    unknown = set(raw) - set(REQUIRED_KEYS) - set(OPTIONAL_KEYS)
    if unknown:
        logger.warning("line %d: ignoring unknown key(s) %s", line_no, ", ".join(sorted(unknown)))

    def err(msg):
        raise ManifestError(f"line {line_no}: {msg}")

    try:
        intel = float(raw["intelligibility"])
        haspi = float(raw["haspi"])
        ha_class = int(raw["ha_class"])
        track = int(raw["track"])
    except (TypeError, ValueError) as exc:
        err(f"non-numeric label ({exc})")
    if not 0.0 <= intel <= 100.0:
        err(f"intelligibility {intel} outside [0, 100]")
    if not 0.0 <= haspi <= 1.0:
        err(f"haspi {haspi} outside [0, 1]")
    if not 0 <= ha_class <= 9:
        err(f"ha_class {ha_class} outside 0..9")
    if track not in (1, 2, 3):
        err(f"track {track} not in {{1,2,3}}")
    if raw["split"] not in SPLITS:
        err(f"split {raw['split']!r} not in {SPLITS}")
    if not isinstance(raw["id"], str) or not raw["id"]:
        err("id must be a non-empty string")
    if not isinstance(raw["audio"], str) or not raw["audio"]:
        err("audio must be a non-empty path string")

    audio = Path(raw["audio"])
    if not audio.is_absolute():
        audio = base / audio
    return UtteranceRecord(
        id=raw["id"],
        audio_path=audio,
        intelligibility=intel,
        haspi=haspi,
        ha_class=ha_class,
        track=track,
        split=raw["split"],
        emb_l=raw.get("emb_l"),
        emb_r=raw.get("emb_r"),
    )


def parse_manifest(path: str | Path) -> Manifest:
    """Parse and validate a JSON-lines manifest."""
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    records: list[UtteranceRecord] = []
    seen: set[str] = set()
    base = path.parent
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"line {line_no}: invalid JSON ({exc})") from exc
            if not isinstance(raw, dict):
                raise ManifestError(f"line {line_no}: record must be a JSON object")
            rec = _record_from_dict(raw, line_no, base)
            if rec.id in seen:
                raise ManifestError(f"line {line_no}: duplicate id {rec.id!r}")
            seen.add(rec.id)
            records.append(rec)
    counts = Counter(r.track for r in records)
    logger.info(
        "parsed %s: %d records (track counts: %s)",
        path,
        len(records),
        dict(sorted(counts.items())),
    )
    return Manifest(records, path, counts)


# -- synthetic corpus ----------------------------------------------------

_SYNTH_SR = 16000
_SNR_RANGE_DB = (-10.0, 20.0)
_TONE_AMP = 0.25


def synth_label(snr_db: float) -> float:
    """Pseudo intelligibility: monotone sigmoid of SNR, rounded to 0.1."""
    raw = 100.0 / (1.0 + np.exp(-(0.5 * snr_db - 2.0)))
    return float(np.round(np.clip(raw, 0.0, 100.0), 1))


def _class_tone_hz(ha_class: int) -> float:
    # One octave every 2.5 classes keeps the ten classes spectrally apart.
    return 250.0 * 2.0 ** (ha_class / 2.5)


def synth_corpus(seed: int, n: int, out_dir: str | Path) -> Manifest:
    """Generate n stereo tone+noise WAVs with SNR-monotone pseudo-labels.

    Fully reproducible from (seed, n): same seed gives byte-identical
    WAVs and manifest. Every fourth record lands in the dev split.
    """
    if n < 1:
        raise DataError("synth_corpus needs n >= 1")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write_probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise DataError(f"output directory not writable: {out_dir} ({exc})") from exc

    rng = np.random.default_rng(seed)
    records = []
    lines = []
    for i in range(n):
        ha_class = i % 10
        seconds = float(rng.uniform(2.0, 7.0))
        snr_db = float(rng.uniform(*_SNR_RANGE_DB))
        freq = _class_tone_hz(ha_class) * float(rng.uniform(0.97, 1.03))

        n_samp = int(round(seconds * _SYNTH_SR))
        t = np.arange(n_samp) / _SYNTH_SR
        tone = _TONE_AMP * np.sin(2 * np.pi * freq * t)
        tone_power = _TONE_AMP**2 / 2.0
        noise_sigma = np.sqrt(tone_power / 10.0 ** (snr_db / 10.0))
        stereo = np.stack(
            [tone + noise_sigma * rng.standard_normal(n_samp) for _ in range(2)], axis=1
        )
        peak = np.abs(stereo).max()
        if peak > 0.99:
            stereo *= 0.99 / peak
        pcm = np.clip(stereo * 32767.0, -32768, 32767).astype(np.int16)

        rec_id = f"synth-{i:04d}"
        wav_name = f"{rec_id}.wav"
        wavfile.write(out_dir / wav_name, _SYNTH_SR, pcm)

        intel = synth_label(snr_db)
        row = {
            "id": rec_id,
            "audio": wav_name,
            "intelligibility": intel,
            "haspi": round(intel / 100.0, 3),
            "ha_class": ha_class,
            "track": (i % 3) + 1,
            "split": "dev" if i % 4 == 3 else "train",
        }
        lines.append(json.dumps(row, sort_keys=True))
        records.append(_record_from_dict(row, i + 1, out_dir))

    manifest_path = out_dir / "manifest.jsonl"
    manifest_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return Manifest(records, manifest_path, Counter(r.track for r in records))


def batches(
    manifest: Manifest, batch_size: int, seed: int, epoch: int
) -> list[list[UtteranceRecord]]:
    """Seeded per-epoch shuffle into groups of `batch_size`."""
    if batch_size < 1:
        raise DataError("batch_size must be >= 1")
    rng = np.random.default_rng([seed, epoch])
    order = rng.permutation(len(manifest.records))
    shuffled = [manifest.records[i] for i in order]
    return [shuffled[i : i + batch_size] for i in range(0, len(shuffled), batch_size)]
