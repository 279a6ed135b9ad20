"""Command-line entry points: train, eval, sweep, plot, inspect-checkpoint."""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import checkpoint as ckpt_io
from .config import ConfigError, RunConfig, build_policy, config_from_dict, load_config
from .diffcore import ShapeError
from .drift import DISABLED_EXPERIMENT_DRIFT, disabled_set, eval_grid, single_cell
from .evalharness import MetricsSummary, run_eval, summarize, write_records
from .plotting import plot_summaries
from .trainer import train

OUTPUT_ROOT_ENV = "AAP_OUTPUT_ROOT"


class UsageError(Exception):
    pass


def resolve_out(path: str) -> Path:
    """Relative output paths are placed under $AAP_OUTPUT_ROOT when it is set."""
    p = Path(path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not p.is_absolute():
        return Path(root) / p
    return p


def _parse_cell(text: str) -> tuple[float, float]:
    try:
        dm, dr = (float(x) for x in text.split(","))
    except ValueError:
        raise UsageError(f"--drift-cell expects 'dm,dr', got {text!r}") from None
    return dm, dr


def _eval_cells(run: RunConfig, disable: str | None, drift_cell: str | None):
    side = disable or run.eval.disable
    disabled = frozenset()
    if side != "none":
        if not run.task_spec.is_nav2d:
            raise UsageError("--disable applies to the nav2d task only")
        disabled = disabled_set(side)
    regime = run.regime("eval")
    if drift_cell is not None:
        dm, dr = _parse_cell(drift_cell)
        return [single_cell(dm, dr, regime, disabled)]
    if disabled:
        # disabled-action experiments use one fixed drift setting
        return [single_cell(*DISABLED_EXPERIMENT_DRIFT, regime, disabled)]
    return eval_grid(regime, disabled)


def _load_for_eval(paths: list[str], config: str | None, allow_mismatch: bool):
    checkpoints = [ckpt_io.load(p) for p in paths]
    run = load_config(config) if config else config_from_dict(checkpoints[0].config)
    for path, ck in zip(paths, checkpoints):
        if ck.config_hash != run.config_hash() and not allow_mismatch:
            raise UsageError(f"{path}: config hash {ck.config_hash} does not match "
                             f"{run.config_hash()} (pass --allow-hash-mismatch to override)")
    return run, checkpoints


def evaluate(run: RunConfig, checkpoints, out: Path, disable=None, drift_cell=None,
             episodes: int | None = None) -> MetricsSummary:
    cells = _eval_cells(run, disable, drift_cell)
    records = []
    for ck in checkpoints:
        seed = int(ck.extra.get("seed", 0))
        policy = build_policy(run, seed)
        try:
            policy.load_state_dict(ck.params())
        except (KeyError, ShapeError) as exc:
            raise ckpt_io.CheckpointError(f"checkpoint does not fit the {run.variant} model: {exc}") from None
        records.extend(run_eval(policy, run.task_spec, cells, episodes or run.eval.episodes, seed,
                                run.eval.seed, run.eval.batch, run.noise, run.env_overrides))
    summary = summarize(records, cells)
    out.mkdir(parents=True, exist_ok=True)
    write_records(out / "records.jsonl", records)
    (out / "summary.csv").write_text(summary.to_csv())
    return summary


def _seeds(run: RunConfig, seed: int | None) -> list[int]:
    return [seed] if seed is not None else list(run.seeds)


def _train_all(run: RunConfig, args) -> list[Path]:
    out = resolve_out(args.out or run.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(run.to_ini())
    finals = []
    for s in _seeds(run, args.seed):
        seed_dir = out / f"seed_{s}"
        resume = getattr(args, "resume", None)
        finals.append(train(run, s, seed_dir, workers=args.workers, resume=resume,
                            progress=None if args.quiet else sys.stderr))
    return finals


def cmd_train(args) -> int:
    run = load_config(args.config)
    if args.dry_run:
        print(run.to_ini(), end="")
        print(f"# config_hash = {run.config_hash()}")
        return 0
    for path in _train_all(run, args):
        print(path)
    return 0


def cmd_eval(args) -> int:
    run, checkpoints = _load_for_eval(args.checkpoint, args.config, args.allow_hash_mismatch)
    out = resolve_out(args.out)
    summary = evaluate(run, checkpoints, out, args.disable, args.drift_cell, args.episodes)
    print(out / "summary.csv")
    _print_table(summary)
    return 0


def cmd_sweep(args) -> int:
    run = load_config(args.config)
    if args.dry_run:
        print(run.to_ini(), end="")
        print(f"# eval cells = {len(_eval_cells(run, args.disable, args.drift_cell))}")
        return 0
    finals = _train_all(run, args)
    out = resolve_out(args.out or run.out) / (f"eval_{args.disable}" if args.disable else "eval")
    summary = evaluate(run, [ckpt_io.load(p) for p in finals], out, args.disable, args.drift_cell,
                       args.episodes)
    print(out / "summary.csv")
    _print_table(summary)
    return 0


def cmd_plot(args) -> int:
    summaries = [MetricsSummary.from_csv(Path(p).read_text()) for p in args.summaries]
    labels = args.labels or [Path(p).parent.name or Path(p).stem for p in args.summaries]
    svg, table = plot_summaries(summaries, labels, resolve_out(args.out), args.metric)
    print(svg)
    print(table)
    return 0


def cmd_inspect(args) -> int:
    print(json.dumps(ckpt_io.describe(ckpt_io.load(args.checkpoint)), indent=2, sort_keys=True))
    return 0


def _print_table(summary: MetricsSummary) -> None:
    print(f"{'dm':>7} {'dr':>7} {'seen':>4} {'SR':>12} {'SPL':>12} {'ADR':>6} {'DAU':>7}")
    for c in summary.cells:
        print(f"{c['drift_dm']:7.3g} {c['drift_dr']:7.4g} {int(c['seen']):4d} "
              f"{c['sr_mean']:5.3f}±{c['sr_std']:5.3f} {c['spl_mean']:5.3f}±{c['spl_std']:5.3f} "
              f"{c['adr_mean']:6.3f} {c['dau_mean']:7.2f}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aap", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common_train(p):
        p.add_argument("--config", required=True, help="run configuration (INI)")
        p.add_argument("--seed", type=int, help="train only this seed instead of run.seeds")
        p.add_argument("--out", help="output directory (default: run.out)")
        p.add_argument("--workers", type=int, default=1, help="environment worker processes")
        p.add_argument("--dry-run", action="store_true", help="validate and print the effective config")
        p.add_argument("--quiet", action="store_true", help="no progress lines on stderr")

    def common_eval(p):
        p.add_argument("--disable", choices=("left", "right"), help="disable a rotation family (nav2d)")
        p.add_argument("--drift-cell", help="evaluate a single cell 'dm,dr'")
        p.add_argument("--episodes", type=int, help="episodes per cell (default: eval.episodes)")

    p = sub.add_parser("train", help="train every seed of a config")
    common_train(p)
    p.add_argument("--resume", help="continue from a checkpoint (requires --seed)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate checkpoints over a drift grid")
    p.add_argument("--checkpoint", nargs="+", required=True, help="one checkpoint per training seed")
    p.add_argument("--config", help="run configuration (default: the one stored in the checkpoint)")
    p.add_argument("--out", required=True, help="output directory for records and summary")
    p.add_argument("--allow-hash-mismatch", action="store_true",
                   help="evaluate even if the checkpoint config hash differs")
    common_eval(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="train every seed, then evaluate the drift grid")
    common_train(p)
    common_eval(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("plot", help="chart metric versus drift from summary files")
    p.add_argument("summaries", nargs="+", help="summary.csv files sharing one drift grid")
    p.add_argument("--labels", nargs="+", help="legend label per summary")
    p.add_argument("--metric", default="sr", help="metric column prefix (default: sr)")
    p.add_argument("--out", required=True, help="output SVG path (table written next to it)")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("inspect-checkpoint", help="print a checkpoint manifest summary")
    p.add_argument("checkpoint")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "resume", None) and args.seed is None:
        print("error: --resume requires --seed", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ckpt_io.CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
