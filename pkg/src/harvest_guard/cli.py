"""Command-line entry point.

Subcommands: gen-data, train-slip, eval-slip, train-grasp, compensate,
simulate, report. Exit codes: 0 success, 1 validation problem (including
bad flags), 2 I/O failure. Generating and training commands require
--seed; nothing is ever seeded from the clock. The HARVEST_GUARD_LOG
environment variable (error, info, debug) sets stderr log verbosity.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ValidationError
from .fsm import DEFAULT_TIMING, Stage, Variant, read_episode_log, write_episode_log
from .geometry import (
    CompensationMode,
    CompensationParams,
    compensate_rows,
    mean_abs_error,
    read_alignment_csv,
    write_records_csv,
)
from .grasp import GraspClass, read_grasp_csv, train_grasp_classifier, classify_grasp
from .lstm import LstmArch, TrainConfig, evaluate, lstm_train
from .metrics import (
    ConfusionMatrix,
    SuccessTally,
    aggregate_cycle_times,
    confusion_metrics,
    macro_f1,
    success_rates,
    write_report,
)
from .model_io import load_model, save_model
from .slip_windows import (
    SlipLabel,
    class_counts,
    prepare_splits,
    stratified_split_counts,
    windows_from_slip_csv,
)
from .world import (
    EpisodeWorld,
    ScenarioConfig,
    gen_grasp_dataset,
    gen_slip_dataset,
    load_config,
    run_episodes,
    save_config,
)

log = logging.getLogger("harvest_guard")


class UsageError(ValidationError):
    """Bad command line; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on bad flags; route through the
    # validation path instead so 2 stays reserved for I/O failures
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(f"{self.prog}: {message}")


def _setup_logging() -> None:
    level_name = os.environ.get("HARVEST_GUARD_LOG", "error")
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level_name not in levels:
        raise ValidationError(
            f"HARVEST_GUARD_LOG must be one of {sorted(levels)}, got {level_name!r}"
        )
    logging.basicConfig(stream=sys.stderr, level=levels[level_name], format="%(levelname)s %(message)s")


def _parse_counts(text: str) -> tuple[int, int, int]:
    parts = text.split(",")
    if len(parts) != 3:
        raise UsageError(f"--counts needs three comma-separated integers, got {text!r}")
    try:
        a, b, c = (int(p) for p in parts)
    except ValueError:
        raise UsageError(f"--counts needs integers, got {text!r}") from None
    return a, b, c


def _load_scenario(path: str | None) -> ScenarioConfig:
    return load_config(path) if path else ScenarioConfig()


def build_parser() -> _Parser:
    parser = _Parser(prog="harvest-guard", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a SlipData or GraspData CSV")
    p.add_argument("--kind", choices=("slip", "grasp"), required=True)
    p.add_argument("--counts", required=True, help="slip: window labels normal,slipping,slipped; grasp: rows ripe,empty,unripe")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--config", help="scenario INI file (defaults used when omitted)")

    p = sub.add_parser("train-slip", help="train the slip classifier on a SlipData CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="model file destination")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    p.add_argument("--lr", type=float, default=TrainConfig.learning_rate)
    p.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)
    p.add_argument("--ratio", type=float, default=0.7, help="train fraction of the stratified split")
    p.add_argument("--oversample-first", action="store_true", help="oversample before splitting instead of after")
    p.add_argument("--layers", type=int, default=LstmArch.n_layers)
    p.add_argument("--hidden", type=int, default=LstmArch.hidden_size)

    p = sub.add_parser("eval-slip", help="evaluate a slip model on a SlipData CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", help="optional per-class metrics report")
    p.add_argument("--format", choices=("csv", "jsonlines"), default="csv")
    p.add_argument("--split-ratio", type=float, help="evaluate only the validation side of this split")
    p.add_argument("--split-seed", type=int, help="seed of the split to reproduce (with --split-ratio)")

    p = sub.add_parser("train-grasp", help="train the grasp classifier on a GraspData CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="model file destination")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--ratio", type=float, default=0.7)

    p = sub.add_parser("compensate", help="replay an alignment audit CSV through the compensation rule")
    p.add_argument("--input", required=True, help="CSV with xs,ys,zs,xe,ye,ze[,dx_w,dy_w]")
    p.add_argument("--out", required=True, help="per-trial record CSV destination")
    p.add_argument("--kx", type=float, default=1.0)
    p.add_argument("--ky", type=float, default=0.5)
    p.add_argument("--threshold", type=float, default=10.0)
    p.add_argument("--mode", choices=("per-axis", "either"), default="either")

    p = sub.add_parser("simulate", help="run fault-injection harvest episodes")
    p.add_argument("--config", help="scenario INI file")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--episodes", type=int, help="override episode count from the config")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--deterministic", action="store_true", help="stage durations at their means")
    p.add_argument("--slip-model", help="use this slip model instead of ground-truth monitoring")
    p.add_argument("--grasp-model", help="use this grasp model instead of ground-truth monitoring")

    p = sub.add_parser("report", help="aggregate an episode log into a summary report")
    p.add_argument("--episodes", required=True, help="episode JSONL log")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("csv", "jsonlines"), default="csv")

    return parser


def _cmd_gen_data(args: argparse.Namespace) -> int:
    config = _load_scenario(args.config)
    counts = _parse_counts(args.counts)
    if args.kind == "slip":
        gen_slip_dataset(args.out, config, counts, args.seed)
    else:
        gen_grasp_dataset(args.out, config, counts, args.seed)
    log.info("wrote %s dataset with counts %s to %s", args.kind, counts, args.out)
    print(f"{args.out}: {args.kind} dataset, counts {counts[0]},{counts[1]},{counts[2]}")
    return 0


def _cmd_train_slip(args: argparse.Namespace) -> int:
    windows = windows_from_slip_csv(args.data)
    if not windows:
        raise ValidationError(f"{args.data}: no windows (episodes need at least 8 frames)")
    counts = class_counts(windows)
    log.info("loaded %d windows, counts %s", len(windows), {k.name: v for k, v in sorted(counts.items())})
    train, val = prepare_splits(windows, args.ratio, args.seed, oversample_first=args.oversample_first)
    arch = LstmArch(n_layers=args.layers, hidden_size=args.hidden)
    model = lstm_train(
        train,
        val,
        TrainConfig(epochs=args.epochs, learning_rate=args.lr, batch_size=args.batch_size, seed=args.seed),
        arch,
    )
    model.metadata["split_ratio"] = args.ratio
    model.metadata["oversample_first"] = bool(args.oversample_first)
    save_model(args.out, model)
    final_loss = model.metadata["train_loss"][-1]
    summary = f"trained on {len(train)} windows ({args.epochs} epochs); final loss {final_loss:.4f}"
    val_hist = model.metadata.get("val_accuracy")
    if val_hist:
        summary += f"; best val accuracy {max(val_hist):.4f} (epoch {model.metadata['best_epoch']})"
    print(summary)
    print(f"model saved to {args.out}")
    return 0


_SLIP_CLASS_NAMES = tuple(l.name.lower() for l in SlipLabel)


def _cmd_eval_slip(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    windows = windows_from_slip_csv(args.data)
    if (args.split_ratio is None) != (args.split_seed is None):
        raise UsageError("--split-ratio and --split-seed go together")
    if args.split_ratio is not None:
        _, windows = prepare_splits(windows, args.split_ratio, args.split_seed)
    if not windows:
        raise ValidationError(f"{args.data}: nothing to evaluate")
    pred, true = evaluate(model, windows)
    cm = ConfusionMatrix.from_pairs(true.tolist(), pred.tolist(), _SLIP_CLASS_NAMES)
    per_class = confusion_metrics(cm)
    rows = [
        {"class": name, "precision": m.precision, "recall": m.recall, "f1": m.f1}
        for name, m in per_class.items()
    ]
    for row in rows:
        print(f"{row['class']:>9}: precision {row['precision']:.4f} recall {row['recall']:.4f} f1 {row['f1']:.4f}")
    print(f"macro-F1: {macro_f1(cm):.4f}")
    if args.out:
        write_report(args.out, rows, fmt=args.format)
        log.info("wrote metrics report to %s", args.out)
    return 0


def _cmd_train_grasp(args: argparse.Namespace) -> int:
    rows = read_grasp_csv(args.data)
    if not rows:
        raise ValidationError(f"{args.data}: empty dataset")
    by_class: dict[GraspClass, list] = {}
    for obs, label in rows:
        by_class.setdefault(label, []).append(obs)
    rng = np.random.default_rng(args.seed)
    train_rows, val_rows = [], []
    for label in sorted(by_class, key=int):
        group = by_class[label]
        n_train = stratified_split_counts([len(group)], args.ratio)[0][0]
        order = rng.permutation(len(group))
        train_rows.extend((group[i], label) for i in order[:n_train])
        val_rows.extend((group[i], label) for i in order[n_train:])
    model = train_grasp_classifier(
        [o for o, _ in train_rows], [l for _, l in train_rows], args.lr, args.epochs, args.seed
    )
    save_model(args.out, model)
    if val_rows:
        pred = [int(classify_grasp(model, o)[0]) for o, _ in val_rows]
        true = [int(l) for _, l in val_rows]
        cm = ConfusionMatrix.from_pairs(true, pred, tuple(c.name.lower() for c in GraspClass))
        for name, m in confusion_metrics(cm).items():
            print(f"{name:>12}: precision {m.precision:.2f} recall {m.recall:.2f} f1 {m.f1:.2f}")
    print(f"model saved to {args.out}")
    return 0


def _cmd_compensate(args: argparse.Namespace) -> int:
    mode = CompensationMode.EITHER_AXIS_BOTH if args.mode == "either" else CompensationMode.PER_AXIS
    params = CompensationParams(threshold_t=args.threshold, k_x=args.kx, k_y=args.ky, mode=mode)
    rows = read_alignment_csv(args.input)
    records = compensate_rows(rows, params)
    write_records_csv(records, args.out)

    dx = [r.visual_err.dx for r in records]
    dy = [r.visual_err.dy for r in records]
    print(f"trials: {len(records)}  compensated: {sum(1 for r in records if r.compensated is not None)}")
    print(f"mean |dx|: {mean_abs_error(dx):.2f} mm  mean |dy|: {mean_abs_error(dy):.2f} mm")
    physical = [(r.physical_err_x, r.physical_err_y) for r in records if r.physical_err_x is not None]
    if physical:
        print(
            f"mean |dx_w|: {mean_abs_error([p[0] for p in physical]):.2f} mm  "
            f"mean |dy_w|: {mean_abs_error([p[1] for p in physical]):.2f} mm"
        )
    resid = [(r.residual_x, r.residual_y) for r in records if r.residual_x is not None]
    if resid:
        print(
            f"mean |e_x|: {mean_abs_error([p[0] for p in resid]):.2f} mm  "
            f"mean |e_y|: {mean_abs_error([p[1] for p in resid]):.2f} mm"
        )
    log.info("wrote %d records to %s", len(records), args.out)
    return 0


# outcome names reconstructed from a log's structure: abort markers beat
# recovery markers beat the default
def _outcome_of(records: list[dict[str, object]]) -> str:
    variants = {(r["stage"], r["variant"]) for r in records}
    if (Stage.SNAP_OFF.value, Variant.SLIPPED_ABORT.value) in variants:
        return "aborted-slipped"
    if (Stage.DEFLATING.value, Variant.EMPTY_GRASP_RESPONSE.value) in variants or (
        Stage.DEFLATING.value,
        Variant.MISGRASP_RESPONSE.value,
    ) in variants:
        return "aborted-empty-or-misgrasp"
    if (Stage.SNAP_OFF.value, Variant.SLIPPING_RECOVERY.value) in variants:
        return "recovered-after-slip"
    return "picked-and-placed"


def _cmd_simulate(args: argparse.Namespace) -> int:
    config = _load_scenario(args.config)
    n = args.episodes if args.episodes is not None else config.episodes
    if n < 1:
        raise ValidationError(f"need at least one episode, got {n}")
    slip_model = load_model(args.slip_model) if args.slip_model else None
    grasp_model = load_model(args.grasp_model) if args.grasp_model else None
    world = EpisodeWorld(config, slip_model=slip_model, grasp_model=grasp_model)
    episodes = run_episodes(world, n, DEFAULT_TIMING, deterministic=args.deterministic, master_seed=args.seed)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_episode_log(out_dir / "episodes.jsonl", episodes)
    save_config(out_dir / "scenario.ini", config)

    rows = _summary_rows([(ep.outcome.value, ep.total_s) for ep in episodes])
    write_report(out_dir / "summary.csv", rows, fmt="csv")
    for row in rows:
        print(f"{row['outcome']}: n={row['n']} mean {row['mean_s']:.3f} s std {row['std_s']:.3f} s")
    print(f"episode log: {out_dir / 'episodes.jsonl'}")
    return 0


def _summary_rows(outcome_totals: list[tuple[str, float]]) -> list[dict[str, object]]:
    aggregates = aggregate_cycle_times(outcome_totals)
    return [
        {"outcome": outcome, "n": agg.n, "mean_s": agg.mean_s, "std_s": agg.std_s}
        for outcome, agg in aggregates.items()
    ]


def _cmd_report(args: argparse.Namespace) -> int:
    lines = read_episode_log(args.episodes)
    if not lines:
        raise ValidationError(f"{args.episodes}: empty log")
    by_episode: dict[object, list[dict[str, object]]] = {}
    for rec in lines:
        by_episode.setdefault(rec["episode_id"], []).append(rec)
    outcome_totals = []
    for _, records in sorted(by_episode.items(), key=lambda kv: kv[0]):
        total = sum(float(r["duration_s"]) for r in records)
        outcome_totals.append((_outcome_of(records), total))
    rows = _summary_rows(outcome_totals)
    write_report(args.out, rows, fmt=args.format)
    for row in rows:
        print(f"{row['outcome']}: n={row['n']} mean {row['mean_s']:.3f} s std {row['std_s']:.3f} s")
    return 0


_HANDLERS = {
    "gen-data": _cmd_gen_data,
    "train-slip": _cmd_train_slip,
    "eval-slip": _cmd_eval_slip,
    "train-grasp": _cmd_train_grasp,
    "compensate": _cmd_compensate,
    "simulate": _cmd_simulate,
    "report": _cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    try:
        _setup_logging()
        parser = build_parser()
        args = parser.parse_args(argv)
        return _HANDLERS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValidationError as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        log.error("%s", exc)
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
