"""
Command-line entry point: simulate, augment, extract, train, predict, evaluate, score.

Exit codes: 0 success, 1 validation error, 2 I/O error.
"""

import argparse
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import structlog
from pydantic import ValidationError

from app.core.config import Settings, load_settings, parse_overrides
from app.core.exceptions import ConfigurationError, SeldError, StorageError
from app.core.logging import setup_logging
from app.schemas.audio import StftConfig
from app.schemas.labels import ClassMap
from app.schemas.loss import LossConfig, LossWeights, SdeLossKind
from app.schemas.metrics import MetricThresholds
from app.schemas.representation import DecodeConfig, FormatKind, ReprFormat
from app.schemas.scene import SceneSpec, SourceKind
from app.schemas.training import ModelConfig, TrainConfig

logger = structlog.get_logger()

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2

_WEIGHT_NAME = {
    FormatKind.SED_DOA: "beta",
    FormatKind.SED_SDE: "gamma",
    FormatKind.SED_SCE: "eta",
    FormatKind.SED_DOA_SDE: "lambda",
}


def _classes(settings: Settings) -> ClassMap:
    return ClassMap.from_names(settings.CLASS_NAMES)


def _existing_dir(path: Path, what: str) -> Path:
    if not path.is_dir():
        raise StorageError(f"{what} directory not found", str(path))
    return path


def parse_variant_ids(text: str, include_z_flip: bool = False) -> List[int]:
    """``0..7`` ranges and ``0,4,5`` lists."""
    limit = 16 if include_z_flip else 8
    ids: List[int] = []
    try:
        for part in text.split(","):
            part = part.strip()
            if ".." in part:
                low, high = (int(v) for v in part.split("..", 1))
                ids.extend(range(low, high + 1))
            elif part:
                ids.append(int(part))
    except ValueError:
        raise ConfigurationError(f"cannot parse variant list '{text}'") from None
    bad = [i for i in ids if not 0 <= i < limit]
    if bad or not ids:
        raise ConfigurationError(f"variants must lie in 0..{limit - 1}, got '{text}'")
    return ids


def _parse_weights(text: str, kind: FormatKind) -> LossWeights:
    try:
        values = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise ConfigurationError(f"cannot parse loss weights '{text}'") from None
    name = _WEIGHT_NAME.get(kind)
    if name is None:
        raise ConfigurationError(f"{kind.value} takes no loss weights")
    return LossWeights(**{name: values})


# Subcommands


def cmd_simulate(args: argparse.Namespace, settings: Settings) -> int:
    from app.services.simulator import render_dataset

    spec = SceneSpec(
        seed=args.seed,
        duration=args.duration,
        n_events=args.events,
        classes=_classes(settings),
        distance_range=(args.distance_min, args.distance_max),
        polyphony_max=args.polyphony,
        source_kind=SourceKind(args.source),
        sample_rate=settings.SAMPLE_RATE,
        label_hop=settings.LABEL_HOP,
        moving=args.moving,
        allow_same_class_overlap=args.same_class_overlap,
    )
    render_dataset(spec, args.clips, args.out, master_seed=args.seed, max_workers=args.workers)
    print(f"wrote {args.clips} clips to {args.out}")
    return EXIT_OK


def cmd_augment(args: argparse.Namespace, settings: Settings) -> int:
    from app.services.augmentation import augment_directory

    ids = parse_variant_ids(args.variants, args.z_flip)
    written = augment_directory(
        _existing_dir(args.input, "input"),
        args.out,
        ids,
        _classes(settings),
        label_hop=settings.LABEL_HOP,
        include_z_flip=args.z_flip,
        max_workers=args.workers,
    )
    print(f"wrote {len(written)} augmented clips to {args.out}")
    return EXIT_OK


def cmd_extract(args: argparse.Namespace, settings: Settings) -> int:
    from app.services.features import extract_directory

    written = extract_directory(
        _existing_dir(args.input, "input"),
        args.out,
        StftConfig.from_settings(settings),
        expected_rate=settings.SAMPLE_RATE,
        max_workers=args.workers,
    )
    print(f"wrote {len(written)} feature files to {args.out}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace, settings: Settings) -> int:
    from app.services.model import SeldModel, save_checkpoint
    from app.services.training import build_dataset, train, write_history

    kind = FormatKind(args.format)
    classes = _classes(settings)
    fmt = ReprFormat.for_kind(kind, classes.n_classes)

    loss = LossConfig.recommended(kind)
    if args.weights:
        loss = loss.model_copy(update={"weights": _parse_weights(args.weights, kind)})
    if args.sde_loss:
        loss = loss.model_copy(update={"sde_kind": SdeLossKind(args.sde_loss)})

    cfg = TrainConfig(
        batch_size=args.batch_size,
        total_steps=args.steps,
        peak_lr=args.lr,
        seed=args.seed,
        loss=loss,
        step_multiplier=TrainConfig.format_step_multiplier(kind) if args.scaled_schedule else 1.0,
        log_every=args.log_every,
    )
    dataset = build_dataset(
        _existing_dir(args.data, "dataset"),
        fmt,
        StftConfig.from_settings(settings),
        classes,
        label_hop=settings.LABEL_HOP,
        sample_rate=settings.SAMPLE_RATE,
        augment=args.augment,
        max_workers=args.workers,
    )
    model = SeldModel(ModelConfig(format=fmt, n_mels=settings.N_MELS))
    result = train(model, dataset, cfg)
    save_checkpoint(args.out, model, extra={"steps": cfg.effective_steps, "final_loss": result.final_loss})
    if args.history:
        write_history(args.history, result)
    print(f"initial_loss={result.initial_loss:.6f} final_loss={result.final_loss:.6f}")
    return EXIT_OK


def cmd_predict(args: argparse.Namespace, settings: Settings) -> int:
    from app.services.model import load_checkpoint
    from app.services.prediction import predict_directory

    if args.joint:
        model = load_checkpoint(args.joint[0], expected_format=FormatKind.SED_DOA)
        sde_model = load_checkpoint(args.joint[1], expected_format=FormatKind.SED_SDE)
    elif args.checkpoint:
        model = load_checkpoint(args.checkpoint)
        sde_model = None
    else:
        raise ConfigurationError("predict needs --checkpoint or --joint DOA_CKPT SDE_CKPT")

    manifest = predict_directory(
        _existing_dir(args.input, "input"),
        args.out,
        model,
        StftConfig.from_settings(settings),
        DecodeConfig.from_settings(settings),
        _classes(settings),
        label_hop=settings.LABEL_HOP,
        sde_model=sde_model,
        save_raw=args.save_raw,
        max_workers=args.workers,
    )
    print(f"wrote {len(manifest)} prediction files to {args.out}")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace, settings: Settings) -> int:
    from app.services.evaluation import evaluate_paths, format_kv, format_text

    overrides: Dict[str, object] = {"use_angular": not args.no_angular, "use_distance": not args.no_distance}
    if args.angular_threshold is not None:
        overrides["angular_deg"] = args.angular_threshold
    if args.distance_threshold is not None:
        overrides["relative_distance"] = args.distance_threshold
    thr = MetricThresholds.from_settings(settings, **overrides)

    classes = _classes(settings)
    report = evaluate_paths(args.gt, args.pred, classes, thr, label_hop=settings.LABEL_HOP, duration=args.duration)
    output = format_kv(report, classes) if args.format == "kv" else format_text(report, classes)
    sys.stdout.write(output)
    return EXIT_OK


def cmd_score(args: argparse.Namespace, settings: Settings) -> int:
    from app.services.metrics import reference_scores, sed_sde_score, seld_score

    if args.reference:
        for row in reference_scores():
            print(
                f"{row['table']:<22} {row['system']:<34} {row['score_name']}="
                f"{row['computed']:.3f} (reported {row['reported']:.3f})"
            )
        return EXIT_OK

    if args.f1 is None or args.rde is None:
        raise ConfigurationError("score needs --f1 and --rde (plus --doae for the SELD score)")
    if not 0.0 <= args.f1 <= 1.0:
        raise ConfigurationError(f"F1 must lie in [0, 1], got {args.f1}")
    if args.rde < 0:
        raise ConfigurationError(f"RDE must be nonnegative, got {args.rde}")

    if args.doae is not None:
        if not 0.0 <= args.doae <= 180.0:
            raise ConfigurationError(f"DOAE must lie in [0, 180], got {args.doae}")
        print(f"seld_score={seld_score(args.f1, args.doae, args.rde):.3f}")
    print(f"sed_sde_score={sed_sde_score(args.f1, args.rde):.3f}")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    """Usage errors are validation errors (exit 1)."""

    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="seld",
        description="3D sound event localization and detection toolkit",
        allow_abbrev=False,
    )
    defaults = Settings.model_fields
    parser.add_argument(
        "--version",
        action="version",
        version=f"{defaults['APP_NAME'].default} {defaults['VERSION'].default}",
    )
    parser.add_argument("--config", type=Path, default=None, help="KEY=VALUE settings file")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override one setting (repeatable)",
    )
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")
    parser.add_argument("--workers", type=int, default=None, help="Worker pool size for per-file work")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("simulate", help="Render a synthetic FOA dataset", allow_abbrev=False)
    p.add_argument("--out", type=Path, required=True, help="Output directory")
    p.add_argument("--clips", type=int, default=20, help="Number of clips")
    p.add_argument("--seed", type=int, default=0, help="Master seed")
    p.add_argument("--duration", type=float, default=10.0, help="Clip length in seconds")
    p.add_argument("--events", type=int, default=4, help="Events per clip")
    p.add_argument("--polyphony", type=int, default=2, help="Maximum simultaneous events")
    p.add_argument("--distance-min", type=float, default=0.5, help="Closest source in meters")
    p.add_argument("--distance-max", type=float, default=4.0, help="Farthest source in meters")
    p.add_argument("--source", choices=[k.value for k in SourceKind], default=SourceKind.NOISE_BURST.value)
    p.add_argument("--moving", action="store_true", help="Sources move at constant angular speed")
    p.add_argument("--same-class-overlap", action="store_true", help="Allow overlapping events of one class")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("augment", help="Apply ACS variants to WAV+CSV pairs", allow_abbrev=False)
    p.add_argument("--in", dest="input", type=Path, required=True, help="Directory of WAV+CSV pairs")
    p.add_argument("--out", type=Path, required=True, help="Output directory")
    p.add_argument("--variants", default="0..7", help="Variant ids, e.g. 0..7 or 1,4,6")
    p.add_argument("--z-flip", action="store_true", help="Enable variants 8..15 (Z negated)")
    p.set_defaults(handler=cmd_augment)

    p = sub.add_parser("extract", help="Compute log-mel + intensity-vector features", allow_abbrev=False)
    p.add_argument("--in", dest="input", type=Path, required=True, help="Directory of WAV files")
    p.add_argument("--out", type=Path, required=True, help="Directory for .npy features")
    p.set_defaults(handler=cmd_extract)

    p = sub.add_parser("train", help="Train a model on a dataset directory", allow_abbrev=False)
    p.add_argument("--data", type=Path, required=True, help="Directory of WAV+CSV pairs")
    p.add_argument("--format", choices=[k.value for k in FormatKind], required=True, help="Output representation")
    p.add_argument("--out", type=Path, required=True, help="Checkpoint path")
    p.add_argument("--steps", type=int, default=2000, help="Optimizer steps")
    p.add_argument("--batch-size", type=int, default=8, help="Clips per step")
    p.add_argument("--lr", type=float, default=1e-3, help="Peak learning rate")
    p.add_argument("--seed", type=int, default=0, help="Training seed")
    p.add_argument("--weights", default=None, help="Comma-separated loss weights for the format")
    p.add_argument("--sde-loss", choices=[k.value for k in SdeLossKind], default=None, help="Distance objective")
    p.add_argument(
        "--augment",
        action="store_true",
        help="Expand the dataset with the 8 ACS variants (ignored for sed-sde)",
    )
    p.add_argument("--scaled-schedule", action="store_true", help="Shorten SED-SDE runs to 100/360 of the steps")
    p.add_argument("--log-every", type=int, default=50, help="Log every N steps")
    p.add_argument("--history", type=Path, default=None, help="CSV file for the per-step loss history")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("predict", help="Predict events for a directory of WAV files", allow_abbrev=False)
    p.add_argument("--checkpoint", type=Path, default=None, help="Model checkpoint")
    p.add_argument(
        "--joint",
        nargs=2,
        type=Path,
        metavar=("DOA_CKPT", "SDE_CKPT"),
        default=None,
        help="SED-DOA and SED-SDE checkpoints combined at inference",
    )
    p.add_argument("--in", dest="input", type=Path, required=True, help="Directory of WAV files")
    p.add_argument("--out", type=Path, required=True, help="Directory for prediction CSVs")
    p.add_argument("--save-raw", action="store_true", help="Also write raw branch outputs (.npz)")
    p.set_defaults(handler=cmd_predict)

    p = sub.add_parser("evaluate", help="Score predictions against ground truth", allow_abbrev=False)
    p.add_argument("--gt", type=Path, required=True, help="Ground-truth CSV or directory")
    p.add_argument("--pred", type=Path, required=True, help="Prediction CSV or directory")
    p.add_argument("--format", choices=["text", "kv"], default="text", help="Report layout")
    p.add_argument("--no-angular", action="store_true", help="Ignore the angular threshold")
    p.add_argument("--no-distance", action="store_true", help="Ignore the relative distance threshold")
    p.add_argument("--angular-threshold", type=float, default=None, help="Degrees")
    p.add_argument("--distance-threshold", type=float, default=None, help="Relative distance error")
    p.add_argument("--duration", type=float, default=None, help="Clip length in seconds (else inferred)")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("score", help="Composite scores from F1/DOAE/RDE values", allow_abbrev=False)
    p.add_argument("--f1", type=float, default=None, help="Location-dependent F1")
    p.add_argument("--doae", type=float, default=None, help="DOA error in degrees")
    p.add_argument("--rde", type=float, default=None, help="Relative distance error")
    p.add_argument("--reference", action="store_true", help="Print published rows with recomputed scores")
    p.set_defaults(handler=cmd_score)

    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Parse ``argv``, run the subcommand and return its exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        settings = load_settings(args.config, parse_overrides(args.overrides))
    except ConfigurationError as e:
        print(f"error: {e.message}", file=sys.stderr)
        return e.exit_code

    setup_logging(args.log_level or settings.LOG_LEVEL, settings.LOG_FORMAT, settings.LOG_FILE)
    logger.info("Command started", app=settings.APP_NAME, version=settings.VERSION, command=args.command)
    if args.workers is None:
        args.workers = settings.MAX_WORKERS
    handler: Callable[[argparse.Namespace, Settings], int] = args.handler

    try:
        return handler(args, settings)
    except SeldError as e:
        logger.error("Command failed", command=args.command, error=e.message, exit_code=e.exit_code)
        print(f"error: {e.message}", file=sys.stderr)
        return e.exit_code
    except ValidationError as e:
        logger.error("Invalid arguments", command=args.command, error=str(e))
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as e:
        logger.error("I/O failure", command=args.command, error=str(e))
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
