"""Command-line interface.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric
failure. Every run logs its fully resolved configuration and writes all
outputs under the directory given with --out.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import (
    ModelConfig,
    TrainConfig,
    config_to_dict,
    load_config_file,
)
from .data import parse_manifest, synth_corpus
from .errors import ConfigError, DataError, NumericError, ShapeError
from .evaluation import ablate_concat, attention_stats, evaluate_checkpoint
from .pipeline import FeatureCache, extract_static_features
from .providers import ProviderConfig, read_embedding_header
from .training import load_checkpoint, train, write_loss_trace

logger = logging.getLogger("fidonet")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="fidonet", description=__doc__)
    parser.add_argument("--version", action="version", version=f"fidonet {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--config", help="TOML/JSON config file")
        p.add_argument("--seed", type=int, help="override seed")
        p.add_argument("--provider", choices=["file", "surrogate"], help="embedding source")
        p.add_argument("--emb-dir", help="embedding directory (file provider)")
        p.add_argument(
            "--concat", choices=["feature", "temporal"], help="fusion strategy override"
        )
        p.add_argument(
            "--stft",
            metavar="N_FFT,HOP",
            help="STFT override; the hop must preserve 50 frames/s",
        )

    p = sub.add_parser("synth-data", help="generate a synthetic labeled corpus")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("extract", help="materialize static feature caches")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stft", metavar="N_FFT,HOP")

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--manifest", required=True, help="JSON-lines manifest with splits")
    common(p)

    p = sub.add_parser("predict", help="write per-utterance predictions")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    common(p)

    p = sub.add_parser("evaluate", help="score a checkpoint against labels")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--track", choices=["1", "2", "3", "all"], default="all")
    common(p)

    p = sub.add_parser("ablate", help="twin-run concatenation-strategy comparison")
    p.add_argument("--manifest", required=True)
    common(p)

    p = sub.add_parser("attn-stats", help="attention mean/std analysis CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--domain", choices=["ps"], default="ps")
    p.add_argument("--channel", choices=["left", "right"], default="left")
    common(p)

    p = sub.add_parser("inspect-emb", help="print embedding file headers")
    p.add_argument("paths", nargs="+", help="embedding files to inspect")

    return parser


def _resolve_configs(args) -> tuple[ModelConfig, TrainConfig]:
    if getattr(args, "config", None):
        model_cfg, train_cfg = load_config_file(args.config)
    else:
        model_cfg, train_cfg = ModelConfig(), TrainConfig()

    if getattr(args, "stft", None):
        try:
            n_fft, hop = (int(v) for v in args.stft.split(","))
        except ValueError:
            raise ConfigError(f"--stft expects 'n_fft,hop', got {args.stft!r}") from None
        if hop != 320:
            raise ConfigError(f"--stft hop {hop} breaks the 50 frames/s alignment")
        model_cfg = dataclasses.replace(model_cfg, n_fft=n_fft)
    if getattr(args, "concat", None):
        model_cfg = dataclasses.replace(model_cfg, concat_mode=args.concat)
    if getattr(args, "seed", None) is not None:
        train_cfg = dataclasses.replace(train_cfg, seed=args.seed)
    provider = train_cfg.provider
    if getattr(args, "provider", None):
        provider = dataclasses.replace(provider, kind=args.provider)
    if getattr(args, "emb_dir", None):
        provider = dataclasses.replace(provider, embedding_dir=args.emb_dir)
    if provider is not train_cfg.provider:
        # Re-run the dataclass validation with the merged fields.
        provider = ProviderConfig(**dataclasses.asdict(provider))
        train_cfg = dataclasses.replace(train_cfg, provider=provider)
    return model_cfg, train_cfg


def _log_resolved(model_cfg, train_cfg, out_dir: Path, extra: dict):
    doc = config_to_dict(model_cfg, train_cfg)
    doc["run"] = extra
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "resolved_config.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n"
    )
    logger.info("resolved config: %s", json.dumps(doc, sort_keys=True))


def _cmd_synth_data(args) -> int:
    manifest = synth_corpus(args.seed, args.n, args.out)
    logger.info("wrote %d utterances under %s", len(manifest), args.out)
    print(manifest.source)
    return 0


def _cmd_extract(args) -> int:
    manifest = parse_manifest(args.manifest)
    n_fft = 512
    if args.stft:
        n_fft = int(args.stft.split(",")[0])
    cache = FeatureCache(Path(args.out) / "cache")
    index = extract_static_features(manifest.records, cache, n_fft=n_fft)
    logger.info("cached features for %d records under %s", len(index), cache.root)
    print(cache.root)
    return 0


def _cmd_train(args) -> int:
    model_cfg, train_cfg = _resolve_configs(args)
    out_dir = Path(args.out)
    manifest = parse_manifest(args.manifest)
    train_split = manifest.subset("train")
    dev_split = manifest.subset("dev")
    if not dev_split.records:
        logger.warning("manifest has no dev split; selecting on the training records")
        dev_split = train_split
    _log_resolved(
        model_cfg, train_cfg, out_dir, {"command": "train", "manifest": str(args.manifest)}
    )
    result = train(model_cfg, train_cfg, train_split, dev_split, out_dir)
    logger.info(
        "best dev RMSE %.3f at epoch %d; checkpoint %s",
        result.best_dev_rmse,
        result.best_epoch,
        result.checkpoint_path,
    )
    print(result.checkpoint_path)
    return 0


def _cmd_predict(args) -> int:
    model_cfg, train_cfg = _resolve_configs(args)
    out_dir = Path(args.out)
    manifest = parse_manifest(args.manifest)
    _log_resolved(
        model_cfg, train_cfg, out_dir,
        {"command": "predict", "manifest": str(args.manifest), "checkpoint": args.checkpoint},
    )
    from .pipeline import FeatureResolver
    from .providers import make_provider

    model, ckpt_train_cfg, _, _ = load_checkpoint(args.checkpoint)
    provider_cfg = train_cfg.provider if args.provider or args.emb_dir else ckpt_train_cfg.provider
    provider = make_provider(provider_cfg, dtype=model.config.np_dtype)
    resolver = FeatureResolver(model.config, provider)
    bundles = resolver.resolve_all(manifest.records)
    out_path = out_dir / "predictions.jsonl"
    with open(out_path, "w") as fh:
        for rec in manifest.records:
            pred = model.predict(bundles[rec.id])
            fh.write(
                json.dumps(
                    {
                        "id": rec.id,
                        "intelligibility": round(pred.intelligibility, 4),
                        "haspi": round(pred.haspi, 6),
                        "class": int(pred.class_probs.argmax()),
                    }
                )
                + "\n"
            )
    logger.info("wrote %s", out_path)
    print(out_path)
    return 0


def _cmd_evaluate(args) -> int:
    model_cfg, train_cfg = _resolve_configs(args)
    out_dir = Path(args.out)
    manifest = parse_manifest(args.manifest)
    if args.track != "all":
        track = int(args.track)
        records = [r for r in manifest.records if r.track == track]
        manifest = dataclasses.replace(manifest, records=records)
    _log_resolved(
        model_cfg, train_cfg, out_dir,
        {"command": "evaluate", "manifest": str(args.manifest), "track": args.track,
         "checkpoint": args.checkpoint},
    )
    provider_cfg = train_cfg.provider if (args.provider or args.emb_dir) else None
    report, _ = evaluate_checkpoint(args.checkpoint, manifest, provider_cfg, out_dir)
    print(json.dumps(report.to_dict()["tracks"], indent=2, sort_keys=True))
    return 0


def _cmd_ablate(args) -> int:
    model_cfg, train_cfg = _resolve_configs(args)
    out_dir = Path(args.out)
    manifest = parse_manifest(args.manifest)
    train_split = manifest.subset("train")
    dev_split = manifest.subset("dev")
    if not dev_split.records:
        dev_split = train_split
    _log_resolved(
        model_cfg, train_cfg, out_dir, {"command": "ablate", "manifest": str(args.manifest)}
    )
    doc = ablate_concat(model_cfg, train_cfg, train_split, dev_split, out_dir)
    print(json.dumps(doc["rows"], indent=2, sort_keys=True))
    return 0


def _cmd_attn_stats(args) -> int:
    model_cfg, train_cfg = _resolve_configs(args)
    out_dir = Path(args.out)
    manifest = parse_manifest(args.manifest)
    _log_resolved(
        model_cfg, train_cfg, out_dir,
        {"command": "attn-stats", "manifest": str(args.manifest), "domain": args.domain},
    )
    out_path = attention_stats(
        args.checkpoint, manifest, out_dir / "attention_stats.csv",
        domain=args.domain, channel=args.channel,
    )
    print(out_path)
    return 0


def _cmd_inspect_emb(args) -> int:
    for path in args.paths:
        header = read_embedding_header(path)
        print(json.dumps(header, sort_keys=True))
    return 0


_HANDLERS = {
    "synth-data": _cmd_synth_data,
    "extract": _cmd_extract,
    "train": _cmd_train,
    "predict": _cmd_predict,
    "evaluate": _cmd_evaluate,
    "ablate": _cmd_ablate,
    "attn-stats": _cmd_attn_stats,
    "inspect-emb": _cmd_inspect_emb,
}


def main(argv=None) -> int:
    logging.basicConfig(
        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        logging.getLogger().setLevel(logging.DEBUG if args.verbose else logging.INFO)
        return _HANDLERS[args.command](args)
    except ConfigError as exc:
        logger.error("usage error: %s", exc)
        return 1
    except DataError as exc:
        logger.error("data error: %s", exc)
        return 2
    except ShapeError as exc:
        logger.error("data error: %s", exc)
        return 2
    except NumericError as exc:
        logger.error("numeric failure: %s", exc)
        return 3


if __name__ == "__main__":
    sys.exit(main())
