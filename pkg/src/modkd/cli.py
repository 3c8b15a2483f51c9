"""Command-line surface: gen-data, train, evaluate, elect, compare, plot.

Exit codes: 0 success, 2 usage error, 3 broken data or integrity failure,
4 numerical failure. Every command that creates an output directory writes
exactly one run_manifest.json there (command, resolved configuration,
dataset fingerprint, artifact paths, wall-clock timings). Output paths are
never overwritten unless --force is given. All randomness flows through
explicit --seed flags.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import evaluator as ev
from . import svg
from .backbone import load_checkpoint
from .configio import build_configs, parse_config_file
from .election import ElectionRecord, append_record, compute_dice_matrix, elect, read_records
from .errors import DataError, NumericalError
from .trainer import run as train_run


@dataclass
class RunManifest:
    command: str
    resolved_config: dict
    dataset_fingerprint: str
    artifacts: dict
    timings: dict = field(default_factory=dict)

    def write(self, out_dir: Path):
        (Path(out_dir) / "run_manifest.json").write_text(
            json.dumps(asdict(self), indent=1, sort_keys=True) + "\n"
        )


def _prepare_out(path, force: bool, kind="directory") -> Path:
    path = Path(path)
    if path.exists():
        occupied = path.is_file() or any(path.iterdir()) if path.is_dir() else True
        if occupied and not force:
            raise DataError(f"output {kind} {path} already exists; pass --force to overwrite")
    if kind == "directory":
        path.mkdir(parents=True, exist_ok=True)
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _parse_assignment(raw: str, what: str, key_type=int):
    try:
        key, value = raw.split("=", 1)
        return key_type(key), value
    except ValueError as e:
        raise DataError(f"malformed {what} '{raw}', expected KEY=VALUE") from e


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    t0 = time.perf_counter()
    out = _prepare_out(args.out, args.force)
    spec = ds.DatasetSpec(
        n_modalities=args.modalities,
        n_tasks=args.tasks,
        spatial_dims=args.dims,
        side_length=args.side,
        n_cases=args.cases,
        seed=args.seed,
    )
    teachers = {}
    for raw in args.teacher or []:
        k, v = _parse_assignment(raw, "--teacher")
        teachers[k] = int(v)
    if not teachers:
        teachers = {k: (k - 1) % args.modalities + 1 for k in range(1, args.tasks + 1)}
    plan = ds.InformativenessPlan(
        teacher_of_task=teachers,
        signal_contrast=args.signal,
        distractor_contrast=args.distractor,
        noise_sigma=args.noise,
    )
    try:
        manifest_path = ds.generate(spec, plan, out)
    except ValueError as e:
        raise DataError(f"invalid dataset spec: {e}") from e
    fingerprint = ds.fingerprint(manifest_path)
    RunManifest(
        command="gen-data",
        resolved_config={
            "spec": asdict(spec),
            "plan": {
                "teacher_of_task": teachers,
                "signal_contrast": plan.signal_contrast,
                "distractor_contrast": plan.distractor_contrast,
                "noise_sigma": plan.noise_sigma,
            },
        },
        dataset_fingerprint=fingerprint,
        artifacts={"manifest": str(manifest_path)},
        timings={"wall_seconds": time.perf_counter() - t0},
    ).write(out)
    print(f"dataset: {manifest_path}")
    print(f"fingerprint: {fingerprint}")
    return 0


def cmd_train(args) -> int:
    t0 = time.perf_counter()
    manifest = ds.read_manifest(args.data)
    file_cfg = parse_config_file(args.config) if args.config else {}
    overrides = {
        "model": {"seed": args.seed},
        "train": {
            "iterations": args.iterations,
            "election_interval": args.election_interval,
            "teacher_mode": args.teacher_mode,
            "seed": args.seed,
        },
        "loss": {"alpha": args.alpha, "p_norm": args.p_norm},
    }
    model_cfg, train_cfg = build_configs(manifest, file_cfg, overrides)
    out = _prepare_out(args.out, args.force)
    train_run(manifest, model_cfg, train_cfg, out)
    RunManifest(
        command="train",
        resolved_config=json.loads(json.dumps({
            "model": asdict(model_cfg),
            "train": asdict(train_cfg),
        })),
        dataset_fingerprint=ds.fingerprint(manifest),
        artifacts={
            "config_snapshot": str(out / "config.snapshot"),
            "losses_csv": str(out / "losses.csv"),
            "election_log": str(out / "elections.log"),
            "final_checkpoint": str(out / "ckpt_final.bin"),
        },
        timings={"wall_seconds": time.perf_counter() - t0},
    ).write(out)
    print(f"run directory: {out}")
    return 0


def _resolve_split(args, manifest, ckpt_path):
    """Pick evaluation ids; split parameters fall back to the run snapshot."""
    seed = args.split_seed
    fraction = args.validation_fraction
    snapshot = Path(ckpt_path).parent / "config.snapshot"
    if (seed is None or fraction is None) and snapshot.exists():
        snap = parse_config_file(snapshot)
        if seed is None:
            seed = snap.get("train", {}).get("seed", 0)
        if fraction is None:
            fraction = snap.get("train", {}).get("validation_fraction", 0.2)
    seed = 0 if seed is None else seed
    fraction = 0.2 if fraction is None else fraction
    if args.split == "all":
        return list(manifest["cases"])
    train_ids, val_ids = ds.split(manifest, fraction, seed)
    return train_ids if args.split == "train" else val_ids


def _load_model_for_data(ckpt, manifest):
    params, iteration = load_checkpoint(ckpt)
    cfg = params.config
    if (
        cfg.n_modalities != manifest["n_modalities"]
        or cfg.n_tasks != manifest["n_tasks"]
        or cfg.spatial_dims != manifest["dims"]
    ):
        raise DataError("checkpoint geometry does not match the dataset manifest")
    return params, iteration


def cmd_evaluate(args) -> int:
    t0 = time.perf_counter()
    manifest = ds.read_manifest(args.data)
    params, _ = _load_model_for_data(args.ckpt, manifest)
    ids = _resolve_split(args, manifest, args.ckpt)
    out = _prepare_out(args.out, args.force)
    ids, x, y = ds.load_arrays(manifest, ids)
    report = ev.evaluate(params, ids, x, y, threshold=args.threshold)
    ev.write_detail_csv(report, out / "report_detail.csv")
    ev.write_aggregate_csv(report, out / "report_aggregate.csv")
    RunManifest(
        command="evaluate",
        resolved_config={
            "ckpt": str(args.ckpt),
            "split": args.split,
            "threshold": args.threshold,
            "cases": ids,
        },
        dataset_fingerprint=ds.fingerprint(manifest),
        artifacts={
            "detail": str(out / "report_detail.csv"),
            "aggregate": str(out / "report_aggregate.csv"),
        },
        timings={"wall_seconds": time.perf_counter() - t0},
    ).write(out)
    grand = report.grand_average()
    for task in sorted(grand):
        print(f"task {task}: average dice {grand[task]:.4f}")
    print(f"reports: {out}")
    return 0


def cmd_elect(args) -> int:
    manifest = ds.read_manifest(args.data)
    params, iteration = _load_model_for_data(args.ckpt, manifest)
    ids = _resolve_split(args, manifest, args.ckpt)
    _, x, y = ds.load_arrays(manifest, ids)
    matrix = compute_dice_matrix(params, x, y)
    chosen = elect(matrix, args.mode, elected_at=iteration)
    record = ElectionRecord(iteration=iteration, dice_matrix=matrix, chosen=chosen)
    if args.out:
        out = _prepare_out(args.out, args.force, kind="file")
        append_record(out, record)
        print(f"election record: {out}")
    else:
        print(json.dumps({
            "iteration": iteration,
            "dice_matrix": [[float(v) for v in row] for row in matrix],
            "per_task": list(chosen.per_task),
            "unique": list(chosen.unique),
            "mode": chosen.mode,
        }))
    return 0


def cmd_compare(args) -> int:
    rows_a = ev.read_detail_csv(args.report_a)
    rows_b = ev.read_detail_csv(args.report_b)
    map_a = {(c, cid, t): v for c, cid, t, v in rows_a}
    map_b = {(c, cid, t): v for c, cid, t, v in rows_b}
    if len(map_a) != len(rows_a) or len(map_b) != len(rows_b):
        raise DataError("duplicate (combination, case, task) keys in a report")
    if set(map_a) != set(map_b):
        raise DataError("reports are misaligned: (combination, case, task) keys differ")
    keys = sorted(map_a)
    a = [map_a[k] for k in keys]
    b = [map_b[k] for k in keys]
    t, p = ev.paired_ttest_one_tailed(a, b)
    print(f"t={t:.6g} p={p:.6g} n={len(keys)}")
    return 0


def _read_aggregate_averages(path) -> dict[int, float]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no aggregate report at {path}")
    lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    if len(lines) < 2:
        raise DataError(f"{path}: empty aggregate report")
    header = lines[0].split(",")
    if header[0] != "combination" or len(header) < 2:
        raise DataError(f"{path}: missing task columns in header")
    avg = [ln for ln in lines[1:] if ln.startswith("average,")]
    if not avg:
        raise DataError(f"{path}: no average row")
    values = avg[0].split(",")[1:]
    return {k + 1: float(v) for k, v in enumerate(values)}


def cmd_plot(args) -> int:
    out = _prepare_out(args.out, args.force, kind="file")
    if args.kind == "alpha":
        if not args.report:
            raise DataError("--kind alpha needs at least one --report ALPHA=PATH")
        points: dict[float, dict[int, float]] = {}
        for raw in args.report:
            alpha, path = _parse_assignment(raw, "--report", key_type=float)
            points[alpha] = _read_aggregate_averages(path)
        tasks = sorted(next(iter(points.values())))
        alphas = sorted(points)
        series = [
            (f"task {t}", [(a, points[a][t]) for a in alphas])
            for t in tasks
        ]
        markers = []
        for raw in args.l2_report or []:
            alpha, path = _parse_assignment(raw, "--l2-report", key_type=float)
            l2 = _read_aggregate_averages(path)
            for t in tasks:
                markers.append((f"task {t}", [(alpha, l2[t])]))
        doc = svg.line_chart(
            series, xticks=alphas, markers=markers,
            title="Validation Dice vs distillation weight",
            xlabel="alpha", ylabel="dice",
        )
    elif args.kind == "teachers":
        if not args.log:
            raise DataError("--kind teachers needs --log")
        records = read_records(args.log)
        if not records:
            raise DataError(f"{args.log}: empty election log")
        fractions = ev.teacher_percentages(records)
        labels = [f"mod {m}" for m in sorted(fractions)]
        values = [fractions[m] for m in sorted(fractions)]
        doc = svg.bar_chart(
            labels, values,
            title="Fraction of elections per modality",
            xlabel="modality", ylabel="fraction",
        )
    else:  # losses
        if not args.csv:
            raise DataError("--kind losses needs --csv")
        path = Path(args.csv)
        if not path.exists():
            raise DataError(f"no loss csv at {path}")
        lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
        if len(lines) < 2:
            raise DataError(f"{path}: empty loss csv")
        header = lines[0].split(",")
        needed = ("iteration", "task_loss", "ckd_loss", "total_loss")
        if any(col not in header for col in needed):
            raise DataError(f"{path}: missing columns, need {needed}")
        col = {name: header.index(name) for name in needed}
        series = {name: [] for name in needed[1:]}
        for ln in lines[1:]:
            parts = ln.split(",")
            it = float(parts[col["iteration"]])
            for name in needed[1:]:
                series[name].append((it, float(parts[col[name]])))
        doc = svg.line_chart(
            [(name, pts) for name, pts in series.items()],
            title="Training losses", xlabel="iteration", ylabel="loss",
        )
    with open(out, "w") as f:
        f.write(doc)
    print(f"wrote {out}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="modkd",
        description="Missing-modality segmentation lab: data, training, evaluation, plots.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic phantom dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--modalities", type=int, default=4)
    g.add_argument("--tasks", type=int, default=3)
    g.add_argument("--dims", type=int, default=3, choices=(2, 3))
    g.add_argument("--side", type=int, default=32)
    g.add_argument("--cases", type=int, default=60)
    g.add_argument("--seed", type=int, default=7)
    g.add_argument("--teacher", action="append", metavar="TASK=MODALITY",
                   help="planted informative modality per task (repeatable)")
    g.add_argument("--signal", type=float, default=1.0)
    g.add_argument("--distractor", type=float, default=0.2)
    g.add_argument("--noise", type=float, default=0.1)
    g.add_argument("--force", action="store_true")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model on a dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config", help="INI config file ([model]/[train]/[loss] sections)")
    t.add_argument("--alpha", type=float)
    t.add_argument("--p-norm", type=int, choices=(1, 2), dest="p_norm")
    t.add_argument("--teacher-mode", choices=("multi", "single"), dest="teacher_mode")
    t.add_argument("--iterations", type=int)
    t.add_argument("--election-interval", type=int, dest="election_interval")
    t.add_argument("--seed", type=int)
    t.add_argument("--force", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="evaluate a checkpoint over all availability combinations")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", choices=("train", "val", "all"), default="val")
    e.add_argument("--out", required=True)
    e.add_argument("--threshold", type=float, default=0.5)
    e.add_argument("--split-seed", type=int, dest="split_seed")
    e.add_argument("--validation-fraction", type=float, dest="validation_fraction")
    e.add_argument("--force", action="store_true")
    e.set_defaults(func=cmd_evaluate)

    el = sub.add_parser("elect", help="one-off teacher election from a checkpoint")
    el.add_argument("--ckpt", required=True)
    el.add_argument("--data", required=True)
    el.add_argument("--split", choices=("train", "val", "all"), default="val")
    el.add_argument("--mode", choices=("multi", "single"), default="multi")
    el.add_argument("--split-seed", type=int, dest="split_seed")
    el.add_argument("--validation-fraction", type=float, dest="validation_fraction")
    el.add_argument("--out")
    el.add_argument("--force", action="store_true")
    el.set_defaults(func=cmd_elect)

    c = sub.add_parser("compare", help="one-tailed paired t-test between two detail reports")
    c.add_argument("--report-a", required=True, dest="report_a")
    c.add_argument("--report-b", required=True, dest="report_b")
    c.set_defaults(func=cmd_compare)

    pl = sub.add_parser("plot", help="emit a static SVG chart")
    pl.add_argument("--kind", choices=("alpha", "teachers", "losses"), required=True)
    pl.add_argument("--out", required=True)
    pl.add_argument("--report", action="append", metavar="ALPHA=AGGREGATE_CSV")
    pl.add_argument("--l2-report", action="append", dest="l2_report", metavar="ALPHA=AGGREGATE_CSV")
    pl.add_argument("--log", help="elections.log for --kind teachers")
    pl.add_argument("--csv", help="losses.csv for --kind losses")
    pl.add_argument("--force", action="store_true")
    pl.set_defaults(func=cmd_plot)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
