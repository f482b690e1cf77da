"""Multi-task training loop, loss, and checkpoint serialization.

The total objective is a weighted sum of the intelligibility MSE, the
HASPI MSE, and the cross-entropy of the enhancement-system class. Both
regression tasks are trained on a [0, 1] scale (intelligibility labels
divided by 100) so the components stay comparable, and each carries an
auxiliary frame-level term in which every frame targets the utterance
label.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .assessment import ForwardOut, MbiNetPlus, Prediction
from .config import (
    LossWeights,
    ModelConfig,
    TrainConfig,
    config_to_dict,
    configs_from_dict,
)
from .data import Manifest, batches
from .errors import CheckpointError, DataError, NumericError
from .numerics import AdamState, Tensor, adam_step, cross_entropy_logits
from .pipeline import FeatureResolver
from .providers import make_provider

logger = logging.getLogger(__name__)

CKPT_MAGIC = b"FIDOCKP1"
CKPT_VERSION = 1


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    l_int: float
    l_haspi: float
    l_ce: float


def _check_labels(intelligibility: float, haspi: float, ha_class: int) -> None:
    if not 0.0 <= intelligibility <= 100.0:
        raise DataError(f"intelligibility label {intelligibility} outside [0, 100]")
    if not 0.0 <= haspi <= 1.0:
        raise DataError(f"haspi label {haspi} outside [0, 1]")
    if not 0 <= int(ha_class) <= 9:
        raise DataError(f"ha_class label {ha_class} outside 0..9")


def multitask_loss(
    pred: Prediction,
    record,
    weights: LossWeights = LossWeights(),
    frame_loss_weight: float = 1.0,
) -> LossBreakdown:
    """Loss of a materialized prediction (reporting/verification path)."""
    _check_labels(record.intelligibility, record.haspi, record.ha_class)
    y_int = record.intelligibility / 100.0
    y_haspi = record.haspi
    l_int = (pred.intelligibility / 100.0 - y_int) ** 2 + frame_loss_weight * float(
        np.mean((pred.frame_int / 100.0 - y_int) ** 2)
    )
    l_haspi = (pred.haspi - y_haspi) ** 2 + frame_loss_weight * float(
        np.mean((pred.frame_haspi - y_haspi) ** 2)
    )
    l_ce = float(-np.log(pred.class_probs[int(record.ha_class)]))
    total = weights.gamma1 * l_int + weights.gamma2 * l_haspi + weights.gamma3 * l_ce
    return LossBreakdown(total, l_int, l_haspi, l_ce)


def loss_graph(
    fwd: ForwardOut,
    record,
    weights: LossWeights = LossWeights(),
    frame_loss_weight: float = 1.0,
) -> tuple[Tensor, LossBreakdown]:
    """Differentiable loss over a live forward graph."""
    _check_labels(record.intelligibility, record.haspi, record.ha_class)
    y_int = record.intelligibility / 100.0
    y_haspi = record.haspi

    def mse_pair(utt_sig: Tensor, frame_sig: Tensor, target: float) -> Tensor:
        utt_err = utt_sig - target
        frame_err = frame_sig - target
        return utt_err * utt_err + frame_loss_weight * (frame_err * frame_err).mean()

    l_int = mse_pair(fwd.utt_int_sig, fwd.frame_int_sig, y_int)
    l_haspi = mse_pair(fwd.utt_haspi_sig, fwd.frame_haspi_sig, y_haspi)
    l_ce = cross_entropy_logits(fwd.class_logits, int(record.ha_class))
    total = weights.gamma1 * l_int + weights.gamma2 * l_haspi + weights.gamma3 * l_ce
    breakdown = LossBreakdown(
        float(total.data), float(l_int.data), float(l_haspi.data), float(l_ce.data)
    )
    return total, breakdown


# -- checkpoints ----------------------------------------------------------


def save_checkpoint(
    model: MbiNetPlus,
    path: str | Path,
    train_config: TrainConfig | None = None,
    epoch: int = 0,
    loss_trace: list | None = None,
) -> Path:
    """Versioned binary checkpoint: JSON header + raw little-endian blobs."""
    path = Path(path)
    params = model.parameters()
    header = {
        "format_version": CKPT_VERSION,
        "dtype": model.config.dtype,
        "model_seed": model.seed,
        "epoch": epoch,
        "loss_trace": loss_trace or [],
        "config": config_to_dict(model.config, train_config or TrainConfig()),
        "params": [{"name": n, "shape": list(p.shape)} for n, p in params.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    wire_dtype = "<f4" if model.config.dtype == "f32" else "<f8"
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for p in params.values():
            fh.write(np.ascontiguousarray(p.data, dtype=wire_dtype).tobytes())
    return path


def load_checkpoint(
    path: str | Path, expected_model: ModelConfig | None = None
) -> tuple[MbiNetPlus, TrainConfig, int, list]:
    """Rebuild a model from a checkpoint; bit-exact forward behavior."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < 12 or raw[:8] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    (hlen,) = struct.unpack_from("<I", raw, 8)
    if len(raw) < 12 + hlen:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[12 : 12 + hlen])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
    if header.get("format_version") != CKPT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported format version {header.get('format_version')}"
        )

    model_cfg, train_cfg = configs_from_dict(header["config"])
    if expected_model is not None and expected_model != model_cfg:
        _explain_config_mismatch(path, expected_model, model_cfg)

    model = MbiNetPlus(model_cfg, seed=header.get("model_seed", train_cfg.seed))
    params = model.parameters()
    stored = header["params"]
    stored_names = [e["name"] for e in stored]
    if stored_names != list(params.keys()):
        extra = set(stored_names).symmetric_difference(params.keys())
        raise CheckpointError(f"{path}: parameter set mismatch ({sorted(extra)[:4]} ...)")

    wire_dtype = np.dtype("<f4" if header["dtype"] == "f32" else "<f8")
    offset = 12 + hlen
    for entry in stored:
        p = params[entry["name"]]
        shape = tuple(entry["shape"])
        if shape != p.shape:
            raise CheckpointError(
                f"{path}: parameter {entry['name']!r} has shape {shape}, "
                f"model expects {p.shape}"
            )
        nbytes = int(np.prod(shape)) * wire_dtype.itemsize
        chunk = raw[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(
                f"{path}: truncated payload at parameter {entry['name']!r}"
            )
        p.data = np.frombuffer(chunk, dtype=wire_dtype).reshape(shape).astype(
            model.config.np_dtype
        )
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return model, train_cfg, header.get("epoch", 0), header.get("loss_trace", [])


def _explain_config_mismatch(path, expected: ModelConfig, found: ModelConfig):
    for f in dataclasses.fields(ModelConfig):
        a, b = getattr(expected, f.name), getattr(found, f.name)
        if a != b:
            raise CheckpointError(
                f"{path}: checkpoint was built with {f.name}={b}, requested {f.name}={a}"
            )
    raise CheckpointError(f"{path}: model config mismatch")


# -- the training loop ----------------------------------------------------


@dataclass
class TrainResult:
    model: MbiNetPlus
    checkpoint_path: Path | None
    best_epoch: int
    best_dev_rmse: float
    loss_trace: list[list[float]]
    epoch_log: list[dict]


def write_loss_trace(trace: list[list[float]], path: Path) -> None:
    lines = ["step,total,L_int,L_haspi,L_ce"]
    for step, total, li, lh, lce in trace:
        lines.append(
            f"{int(step)},{float(total)!r},{float(li)!r},{float(lh)!r},{float(lce)!r}"
        )
    path.write_text("\n".join(lines) + "\n")


def _dev_rmse(model: MbiNetPlus, records, bundles) -> float:
    errs = [
        model.predict(bundles[r.id]).intelligibility - r.intelligibility for r in records
    ]
    return float(np.sqrt(np.mean(np.square(errs)))) if errs else math.nan


def train(
    model_config: ModelConfig,
    train_config: TrainConfig,
    train_manifest: Manifest,
    dev_manifest: Manifest,
    out_dir: str | Path | None = None,
) -> TrainResult:
    """Seeded multi-epoch training with best-dev-RMSE checkpointing."""
    if not train_manifest.records:
        raise DataError("training manifest has no records")
    cfg = train_config
    provider = make_provider(cfg.provider, dtype=model_config.np_dtype)
    resolver = FeatureResolver(model_config, provider)
    all_records = {r.id: r for r in train_manifest.records + dev_manifest.records}
    bundles = resolver.resolve_all(list(all_records.values()))

    model = MbiNetPlus(model_config, seed=cfg.seed)
    params = list(model.parameters().values())
    adam = AdamState(lr=cfg.lr)

    trace: list[list[float]] = []
    epoch_log: list[dict] = []
    best_rmse = math.inf
    best_epoch = -1
    best_snapshot: dict[str, np.ndarray] | None = None
    patience_left = cfg.early_stop_patience
    step = 0

    for epoch in range(cfg.epochs):
        epoch_totals = []
        for batch in batches(train_manifest, cfg.batch_size, cfg.seed, epoch):
            breakdowns = []
            for rec in batch:
                total, br = loss_graph(
                    model.forward(bundles[rec.id]), rec, cfg.loss_weights, cfg.frame_loss_weight
                )
                if not math.isfinite(br.total):
                    raise NumericError(
                        f"non-finite loss at step {step + 1} (utterance {rec.id})"
                    )
                total.backward()
                breakdowns.append(br)
            scale = 1.0 / len(batch)
            for p in params:
                if p.grad is None:
                    raise NumericError(f"parameter {p.name!r} received no gradient")
                if scale != 1.0:
                    p.grad *= scale
            if cfg.grad_clip is not None:
                _clip_global_norm(params, cfg.grad_clip)
            adam_step(params, adam)
            step += 1
            mean = lambda f: float(np.mean([getattr(b, f) for b in breakdowns]))
            row = [step, mean("total"), mean("l_int"), mean("l_haspi"), mean("l_ce")]
            trace.append(row)
            epoch_totals.append(row[1])

        train_loss = float(np.mean(epoch_totals))
        dev_rmse = _dev_rmse(model, dev_manifest.records, bundles)
        epoch_log.append({"epoch": epoch, "train_loss": train_loss, "dev_rmse": dev_rmse})
        logger.info("epoch %d: train loss %.6f, dev RMSE %.3f", epoch, train_loss, dev_rmse)

        if math.isfinite(dev_rmse) and dev_rmse < best_rmse:
            best_rmse = dev_rmse
            best_epoch = epoch
            best_snapshot = {n: p.data.copy() for n, p in model.parameters().items()}
            patience_left = cfg.early_stop_patience
        else:
            patience_left -= 1
            if patience_left <= 0:
                logger.info("early stop: no dev improvement for %d epochs", cfg.early_stop_patience)
                break
        if cfg.target_train_loss is not None and train_loss < cfg.target_train_loss:
            logger.info("early stop: train loss %.6f below target", train_loss)
            break

    if best_snapshot is not None:
        for name, p in model.parameters().items():
            p.data = best_snapshot[name]

    checkpoint_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        checkpoint_path = save_checkpoint(
            model, out_dir / "checkpoint.ckpt", cfg, max(best_epoch, 0), trace
        )
        write_loss_trace(trace, out_dir / "loss_trace.csv")
    return TrainResult(model, checkpoint_path, best_epoch, best_rmse, trace, epoch_log)


def _clip_global_norm(params, max_norm: float) -> None:
    total = math.sqrt(sum(float(np.sum(p.grad**2)) for p in params))
    if total > max_norm:
        scale = max_norm / total
        for p in params:
            p.grad *= scale
