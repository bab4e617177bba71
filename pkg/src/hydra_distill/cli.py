"""Command-line experiment runner.

Subcommands: ``train-ensemble``, ``distill``, ``evaluate``,
``uncertainty-grid``. Exit status is 0 on success, 2 for configuration
errors (including refusals to overwrite without ``--force``), and 3 for
runtime errors (missing checkpoints, training divergence, bad files).
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from .config import RunRecord, load_config
from .exceptions import ConfigError, HydraDistillError
from .experiment import (
    build_ensemble,
    build_student,
    build_dataset,
    default_grid_bounds,
    evaluate_model,
    load_model,
    prepare_data,
    shift_specs,
    write_evaluation_report,
    write_per_example_dump,
    write_table,
    write_uncertainty_grid,
    EVAL_COLUMNS,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _refuse_existing(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise ConfigError(
            f"{path} already exists; pass --force to overwrite"
        )


def _write_curves(path, history, phase_boundary: int | None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if phase_boundary is not None:
            fh.write(f"# phase_boundary_epoch={phase_boundary}\n")
        fh.write("epoch\tphase\ttrain_loss\tval_loss\n")
        for rec in history:
            fh.write(
                f"{rec.epoch}\t{rec.phase}\t{format(rec.train_loss, '.10g')}\t"
                f"{format(rec.val_loss, '.10g')}\n"
            )


def _summary_rows(model, task, data):
    from .experiment import evaluate_cell

    rows = []
    for split_name, dataset in (("validation", data.val), ("test", data.test)):
        cell, _ = evaluate_cell(model, task, dataset, data.scaler)
        rows.append([split_name] + [cell.get(col) for col in EVAL_COLUMNS[3:]])
    return rows


def _check_feature_dim(what: str, model, dataset) -> None:
    expected = getattr(model, "n_features_in_", None)
    if expected is not None and expected != dataset.n_features:
        raise ConfigError(
            f"{what} expects {expected} input features but the dataset "
            f"has {dataset.n_features}"
        )


def cmd_train_ensemble(args) -> int:
    config = load_config(args.config, args.seed)
    out = Path(args.out)
    _refuse_existing(out / "manifest.json", args.force)
    record = RunRecord(command="train-ensemble", config_digest=config.digest)
    t0 = time.perf_counter()
    data = prepare_data(config)
    ensemble = build_ensemble(config)
    ensemble.fit(data.train.x, data.train.y,
                 validation_data=(data.val.x, data.val.y))
    record.timings_sec["train"] = time.perf_counter() - t0
    out.mkdir(parents=True, exist_ok=True)
    ensemble.save(out, extra_meta={"config_digest": config.digest})
    write_table(
        out / "summary.tsv",
        ["split"] + EVAL_COLUMNS[3:],
        _summary_rows(ensemble, config.task, data),
    )
    record.artifacts = [str(out)]
    record.save(out / "run_record.json")
    print(f"trained {ensemble.n_members_} members -> {out} "
          f"(config digest {config.digest[:12]})")
    return EXIT_OK


def cmd_distill(args) -> int:
    config = load_config(args.config, args.seed)
    method = args.method or config.student.get("method", "hydra")
    if method not in ("kd", "hydra"):
        raise ConfigError(f"unknown method {method!r}")
    teacher, teacher_task, teacher_kind = load_model(args.teacher)
    if teacher_kind != "ensemble":
        raise ConfigError(f"{args.teacher} is not an ensemble directory")
    if teacher_task != config.task:
        raise ConfigError(
            f"teacher task {teacher_task!r} does not match config task "
            f"{config.task!r}"
        )
    out = Path(args.out)
    student_path = out / ("student" if method == "hydra" else "student.json")
    _refuse_existing(student_path, args.force)
    record = RunRecord(command=f"distill-{method}", config_digest=config.digest)
    data = prepare_data(config)
    _check_feature_dim("teacher", teacher, data.train)
    student = build_student(config, method, teacher)
    t0 = time.perf_counter()
    student.fit(data.train.x, data.train.y,
                validation_data=(data.val.x, data.val.y))
    record.timings_sec["train"] = time.perf_counter() - t0
    out.mkdir(parents=True, exist_ok=True)
    student.save(student_path, extra_meta={"config_digest": config.digest})
    _write_curves(
        out / "curves.tsv",
        student.history_,
        getattr(student, "phase_boundary_", None),
    )
    write_table(
        out / "summary.tsv",
        ["split"] + EVAL_COLUMNS[3:],
        _summary_rows(student, config.task, data),
    )
    record.artifacts = [str(student_path), str(out / "curves.tsv")]
    record.save(out / "run_record.json")
    print(f"distilled {method} student -> {student_path}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    config = load_config(args.config, args.seed)
    model, task, kind = load_model(args.model)
    if task != config.task:
        raise ConfigError(
            f"model task {task!r} does not match config task {config.task!r}"
        )
    teacher = None
    if args.teacher is not None:
        teacher, teacher_task, teacher_kind = load_model(args.teacher)
        if teacher_kind != "ensemble" or teacher_task != task:
            raise ConfigError(
                f"--teacher must be an ensemble for task {task!r}"
            )
        teacher = teacher if task == "classification" else None
        if teacher is None:
            print("warning: mu_gap is classification-only; ignoring --teacher",
                  file=sys.stderr)
    else:
        print("warning: no --teacher given; mu_gap column omitted",
              file=sys.stderr)
    out = Path(args.out)
    _refuse_existing(out / "report.tsv", args.force)
    data = prepare_data(config)
    _check_feature_dim("model", model, data.test)
    specs = shift_specs(config)
    record = RunRecord(command="evaluate", config_digest=config.digest)
    t0 = time.perf_counter()
    cells, per_example_rows = evaluate_model(
        model, task, kind, data.test, specs, data.scaler, teacher
    )
    record.timings_sec["evaluate"] = time.perf_counter() - t0
    out.mkdir(parents=True, exist_ok=True)
    write_evaluation_report(out / "report.tsv", cells,
                            include_mu_gap=teacher is not None)
    record.artifacts = [str(out / "report.tsv")]
    if args.per_example:
        write_per_example_dump(out / "per_example.tsv", per_example_rows)
        record.artifacts.append(str(out / "per_example.tsv"))
    record.cells = cells
    record.save(out / "run_record.json")
    print(f"evaluated {kind} over {len(specs)} shift cells -> "
          f"{out / 'report.tsv'}")
    return EXIT_OK


def cmd_uncertainty_grid(args) -> int:
    model, task, kind = load_model(args.model)
    out = Path(args.out)
    _refuse_existing(out, args.force)
    if args.bounds is not None:
        bounds = (args.bounds[0], args.bounds[1])
    elif args.config is not None:
        config = load_config(args.config, args.seed)
        bounds = default_grid_bounds(build_dataset(config))
    else:
        raise ConfigError("either --bounds or --config is required")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_uncertainty_grid(out, model, bounds, args.resolution)
    print(f"{kind} uncertainty grid ({args.resolution}x{args.resolution}) -> {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hydra-distill",
        description="Train ensembles, distill them into single- or "
                    "multi-headed students, and evaluate under shift.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train-ensemble", help="train and persist an ensemble")
    train.add_argument("--config", required=True)
    train.add_argument("--out", required=True)
    train.add_argument("--force", action="store_true")
    train.add_argument("--seed", type=int, default=None)
    train.set_defaults(func=cmd_train_ensemble)

    distill = sub.add_parser("distill", help="distill an ensemble into a student")
    distill.add_argument("--config", required=True)
    distill.add_argument("--teacher", required=True)
    distill.add_argument("--out", required=True)
    distill.add_argument("--method", choices=("kd", "hydra"), default=None)
    distill.add_argument("--force", action="store_true")
    distill.add_argument("--seed", type=int, default=None)
    distill.set_defaults(func=cmd_distill)

    evaluate = sub.add_parser("evaluate", help="score a model across a shift sweep")
    evaluate.add_argument("--config", required=True)
    evaluate.add_argument("--model", required=True)
    evaluate.add_argument("--teacher", default=None)
    evaluate.add_argument("--out", required=True)
    evaluate.add_argument("--per-example", action="store_true",
                          help="also dump per-example metric rows")
    evaluate.add_argument("--force", action="store_true")
    evaluate.add_argument("--seed", type=int, default=None)
    evaluate.set_defaults(func=cmd_evaluate)

    grid = sub.add_parser(
        "uncertainty-grid",
        help="dump total/expected/model uncertainty over a 2-D lattice",
    )
    grid.add_argument("--model", required=True)
    grid.add_argument("--out", required=True)
    grid.add_argument("--bounds", type=float, nargs=2, default=None,
                      metavar=("LO", "HI"))
    grid.add_argument("--resolution", type=int, default=50)
    grid.add_argument("--config", default=None)
    grid.add_argument("--force", action="store_true")
    grid.add_argument("--seed", type=int, default=None)
    grid.set_defaults(func=cmd_uncertainty_grid)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except HydraDistillError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
