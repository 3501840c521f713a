"""
vega-align - Command line

    vega-align <subcommand> [--config c.json] [--seed N] [--out DIR] [--log-level L]

Exit codes: 0 success, 1 validation or usage error, 2 runtime failure.
All outputs are written under ``--out``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from collections.abc import Callable, Sequence
from pathlib import Path
from typing import Any, NoReturn

from .analysis import analyze_encoders
from .checkpoint import CheckpointKind, load_checkpoint, save_checkpoint
from .config import DEFAULT_SEEDS, TrainConfig
from .dataset import SPLITS, SceneDataset, build_dataset, load_dataset, write_dataset
from .encoder import EncoderParams, init_encoder
from .errors import ConfigurationError
from .experiments import (
    CONVERGENCE_HEADER,
    CURVE_HEADER,
    FRACTION_HEADER,
    LAMBDA_HEADER,
    TEACHER_HEADER,
    TEACHER_METRICS,
    VARIANT_HEADER,
    VARIANT_METRICS,
    ExperimentData,
    convergence_curves,
    data_sweep_summary,
    depth_probe,
    encoder_variant_experiment,
    summarize,
    summary_header,
    sweep_data_fraction,
    sweep_lambda,
    teacher_ablation,
    training_curves,
    write_rows,
)
from .fit3d import fit3d_finetune, mean_consistency
from .gradcheck import GRADCHECK_SEEDS, run_gradient_suite
from .metrics_log import MetricsLog
from .rng import derive_seed
from .trainer import evaluate, teacher_checkpoint, train

logger = logging.getLogger("vega_align")

CONSISTENCY_SCENES = 20


class VegaArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with code 1."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ─── Shared loading ───────────────────────────────────────


def load_config(args: argparse.Namespace) -> TrainConfig:
    if args.config is None:
        config = TrainConfig()
    else:
        path = Path(args.config)
        if not path.exists():
            raise ConfigurationError(f"{path}: config file missing")
        config = TrainConfig.from_json_file(path)
    if args.seed is not None:
        config = config.model_copy(update={"seed": args.seed})
    return config


def load_teacher(path: str | None, config: TrainConfig) -> EncoderParams | None:
    path = path or config.teacher_checkpoint
    if path is None:
        return None
    ckpt = load_checkpoint(path)
    if ckpt.kind is not CheckpointKind.TEACHER:
        raise ConfigurationError(f"{path}: expected a teacher checkpoint, got {ckpt.kind.value}")
    return ckpt.encoder_params().copy(frozen=True)


def load_split(root: str | Path, split: str) -> SceneDataset:
    return load_dataset(Path(root) / split)


def load_experiment_data(root: str | Path) -> ExperimentData:
    return ExperimentData(
        train=load_split(root, "train"),
        eval_easy=load_split(root, "eval_easy"),
        eval_hard=load_split(root, "eval_hard"),
    )


def existing_config(value: str) -> str:
    """argparse type for --config; a missing file is a usage error."""
    if not Path(value).is_file():
        raise argparse.ArgumentTypeError(f"{value}: config file missing")
    return value


def parse_seeds(value: str | None) -> tuple[int, ...]:
    if value is None:
        return DEFAULT_SEEDS
    try:
        return tuple(int(s) for s in value.split(",") if s.strip())
    except ValueError as exc:
        raise ConfigurationError(
            f"--seeds must be comma-separated integers, got {value!r}"
        ) from exc


def write_json(path: Path, payload: dict[str, Any]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _require_teacher(args: argparse.Namespace, config: TrainConfig) -> EncoderParams:
    teacher = load_teacher(args.teacher, config)
    if teacher is None:
        raise ConfigurationError("--teacher (or teacher_checkpoint in the config) is required")
    return teacher


# ─── Subcommands ──────────────────────────────────────────


def cmd_gen_data(args: argparse.Namespace, config: TrainConfig) -> int:
    out = Path(args.out) / "data"
    for split in SPLITS:
        write_dataset(build_dataset(config.data, config.encoder, split), out / split)
    logger.info(f"Wrote {len(SPLITS)} splits to {out}")
    return 0


def cmd_train_teacher(args: argparse.Namespace, config: TrainConfig) -> int:
    out = Path(args.out)
    train_data = load_split(args.data, "train")
    held_out = load_split(args.data, "eval_easy").scenes(CONSISTENCY_SCENES)
    focal = config.data.focal_length

    seed = derive_seed(config.fit3d.seed, "teacher", config.encoder.seed)
    base = init_encoder(config.encoder, seed=seed)
    before = mean_consistency(base, held_out, focal)
    result = fit3d_finetune(base, train_data, config.fit3d)
    after = mean_consistency(result.teacher, held_out, focal)

    save_checkpoint(out / "teacher.vegc", teacher_checkpoint(result.teacher))
    with open(out / "teacher_log.csv", "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(("step", "l1_loss"))
        for step, loss in enumerate(result.losses, start=1):
            writer.writerow((step, repr(loss)))
    write_json(
        out / "teacher_report.json",
        {
            "initial_l1": result.losses[0],
            "final_l1": result.losses[-1],
            "consistency_before": before,
            "consistency_after": after,
            "held_out_scenes": len(held_out),
            "teacher_digest": result.teacher.digest(),
        },
    )
    logger.info(f"Teacher consistency {before:.4f} -> {after:.4f}; wrote {out / 'teacher.vegc'}")
    return 0


def cmd_train(args: argparse.Namespace, config: TrainConfig) -> int:
    out = Path(args.out)
    data = load_experiment_data(args.data)
    teacher = load_teacher(args.teacher, config)
    resume = load_checkpoint(args.resume) if args.resume else None
    metrics = None
    if resume is not None and (out / "metrics.csv").exists():
        metrics = MetricsLog.read_csv(
            out / "metrics.csv", config.align_lambda, config.alignment_enabled
        )

    result = train(config, data.train, data.eval_easy, data.eval_hard, teacher, resume, metrics)
    save_checkpoint(out / "checkpoint.vegc", result.checkpoint)
    save_checkpoint(out / "inference.vegc", result.inference_checkpoint())
    result.metrics.write_csv(out / "metrics.csv")
    print(json.dumps(result.metrics.stats(), sort_keys=True))
    return 0


def cmd_eval(args: argparse.Namespace, config: TrainConfig) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    report = evaluate(ckpt, load_dataset(args.data), config.tau)
    payload = {**report.to_dict(), "checkpoint": str(args.checkpoint), "tau": config.tau}
    write_json(Path(args.out) / "eval.json", payload)
    print(json.dumps(payload, sort_keys=True))
    return 0


def cmd_analyze(args: argparse.Namespace, config: TrainConfig) -> int:
    encoders: dict[str, EncoderParams] = {}
    teacher = load_teacher(args.teacher, config)
    if teacher is not None:
        encoders["teacher"] = teacher
    for entry in args.encoder or []:
        name, sep, path = entry.partition("=")
        if not sep or not name:
            raise ConfigurationError(f"--encoder expects name=path, got {entry!r}")
        encoders[name] = load_checkpoint(path).encoder_params()
    if not encoders:
        encoders["plain"] = init_encoder(config.encoder)
    result = analyze_encoders(
        encoders,
        load_dataset(args.data),
        Path(args.out),
        k=config.analysis_clusters,
        num_images=args.images,
        seed=config.seed,
    )
    print(json.dumps({"names": result.names, "ari_matrix": result.ari_matrix.tolist()}))
    return 0


def _sweep(
    args: argparse.Namespace,
    config: TrainConfig,
    run: Callable[..., list[dict[str, Any]]],
    name: str,
    header: Sequence[str],
    summary: Callable[[list[dict[str, Any]]], list[dict[str, Any]]] | None,
    summary_cols: Sequence[str] = (),
) -> int:
    out = Path(args.out)
    rows = run(config, load_experiment_data(args.data), _require_teacher(args, config),
               seeds=parse_seeds(args.seeds))
    write_rows(out / f"{name}.csv", header, rows)
    if summary is not None:
        write_rows(out / f"{name}_summary.csv", summary_cols, summary(rows))
    logger.info(f"Wrote {len(rows)} rows to {out / f'{name}.csv'}")
    return 0


def cmd_sweep_lambda(args: argparse.Namespace, config: TrainConfig) -> int:
    return _sweep(
        args, config, sweep_lambda, "sweep_lambda", LAMBDA_HEADER,
        lambda rows: summarize(rows, ("align_lambda",)), summary_header(("align_lambda",)),
    )


def cmd_sweep_data(args: argparse.Namespace, config: TrainConfig) -> int:
    keys = ("data_fraction", "variant")
    return _sweep(
        args, config, sweep_data_fraction, "sweep_data", FRACTION_HEADER,
        data_sweep_summary, (*summary_header(keys), "easy_gap", "hard_gap"),
    )


def cmd_variants(args: argparse.Namespace, config: TrainConfig) -> int:
    return _sweep(
        args, config, encoder_variant_experiment, "variants", VARIANT_HEADER,
        lambda rows: summarize(rows, ("variant",), VARIANT_METRICS),
        summary_header(("variant",), VARIANT_METRICS),
    )


def cmd_teacher_ablation(args: argparse.Namespace, config: TrainConfig) -> int:
    return _sweep(
        args, config, teacher_ablation, "teacher_ablation", TEACHER_HEADER,
        lambda rows: summarize(rows, ("teacher",), TEACHER_METRICS),
        summary_header(("teacher",), TEACHER_METRICS),
    )


def cmd_curves(args: argparse.Namespace, config: TrainConfig) -> int:
    return _sweep(args, config, training_curves, "curves", CURVE_HEADER, None)


def cmd_convergence(args: argparse.Namespace, config: TrainConfig) -> int:
    return _sweep(args, config, convergence_curves, "convergence", CONVERGENCE_HEADER, None)


def cmd_probe(args: argparse.Namespace, config: TrainConfig) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    result = depth_probe(
        ckpt.encoder_params(), load_split(args.data, "train"), load_split(args.data, "eval_easy"),
        block=args.block,
    )
    payload = {**result.to_dict(), "checkpoint": str(args.checkpoint), "block": args.block}
    write_json(Path(args.out) / "probe.json", payload)
    print(json.dumps(payload, sort_keys=True))
    return 0


def cmd_gradcheck(args: argparse.Namespace, config: TrainConfig) -> int:
    seeds = GRADCHECK_SEEDS if args.seeds is None else parse_seeds(args.seeds)
    report = run_gradient_suite(seeds)
    report.write_csv(Path(args.out) / "gradcheck.csv")
    print(f"worst relative error: {report.worst_error:.3e}")
    return 0 if report.passed else 2


COMMANDS: dict[str, Callable[[argparse.Namespace, TrainConfig], int]] = {
    "gen-data": cmd_gen_data,
    "train-teacher": cmd_train_teacher,
    "train": cmd_train,
    "eval": cmd_eval,
    "analyze": cmd_analyze,
    "sweep-lambda": cmd_sweep_lambda,
    "sweep-data": cmd_sweep_data,
    "variants": cmd_variants,
    "teacher-ablation": cmd_teacher_ablation,
    "curves": cmd_curves,
    "convergence": cmd_convergence,
    "probe": cmd_probe,
    "gradcheck": cmd_gradcheck,
}


# ─── Parser ───────────────────────────────────────────────


def build_parser() -> VegaArgumentParser:
    common = VegaArgumentParser(add_help=False)
    common.add_argument(
        "--config", type=existing_config, help="JSON TrainConfig; defaults apply when omitted"
    )
    common.add_argument("--seed", type=int, help="override TrainConfig.seed")
    common.add_argument("--out", default="runs", help="output directory (default: runs)")
    common.add_argument(
        "--log-level", default="INFO", choices=("DEBUG", "INFO", "WARNING", "ERROR")
    )

    parser = VegaArgumentParser(prog="vega-align", description="Spatial alignment experiments")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=VegaArgumentParser)

    sub.add_parser("gen-data", parents=[common], help="render train / eval_easy / eval_hard")

    p = sub.add_parser("train-teacher", parents=[common], help="fine-tune the 3D-aware teacher")
    p.add_argument("--data", required=True, help="dataset root written by gen-data")

    p = sub.add_parser("train", parents=[common], help="train student, head and projector")
    p.add_argument("--data", required=True)
    p.add_argument("--teacher")
    p.add_argument("--resume", help="training checkpoint to continue from")

    p = sub.add_parser("eval", parents=[common], help="success-proxy rate on one split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="a single split directory")

    p = sub.add_parser("analyze", parents=[common], help="PCA images and ARI matrix")
    p.add_argument("--data", required=True, help="a single split directory")
    p.add_argument("--teacher")
    p.add_argument("--encoder", action="append", metavar="NAME=PATH")
    p.add_argument("--images", type=int, default=4)

    for name, help_text in (
        ("sweep-lambda", "aligned runs over the lambda grid"),
        ("sweep-data", "aligned vs. baseline per data fraction"),
        ("variants", "plain/teacher init x frozen/unfrozen student"),
        ("teacher-ablation", "no teacher vs. plain teacher vs. fine-tuned teacher"),
        ("curves", "eval rates per logged step"),
        ("convergence", "action loss per logged step, plain vs. teacher init"),
    ):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("--data", required=True)
        p.add_argument("--teacher")
        p.add_argument("--seeds", help="comma-separated seeds (default 0,1,2,3,4)")

    p = sub.add_parser("probe", parents=[common], help="linear depth probe on student tokens")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--block", type=int, default=-2)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    p.add_argument("--seeds", help="comma-separated seeds (default 0..19)")
    return parser


def cli_dispatch(argv: Sequence[str]) -> int:
    try:
        args = build_parser().parse_args(list(argv))
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        config = load_config(args)
        return COMMANDS[args.command](args, config)
    except ValueError as exc:
        logger.error(f"{args.command}: {exc}")
        return 1
    except Exception as exc:
        logger.error(f"{args.command} failed: {type(exc).__name__}: {exc}")
        return 2


def main(argv: Sequence[str] | None = None) -> int:
    return cli_dispatch(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
