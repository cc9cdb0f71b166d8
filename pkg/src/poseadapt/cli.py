"""Experiment runner: pretrain a base model, adapt it over target streams
across a (scheme, seed, steps) grid, and aggregate the results.

Subcommands
    pretrain --config C --out DIR
        Generate the source dataset, train the base model, write
        checkpoint.bin / body.txt / pretrain_metrics.csv.
    adapt --config C --out DIR [--checkpoint F] [--scheme S ...]
          [--seed N ...] [--steps T ...] [--frames N] [--second-order M]
        Run the grid; one diagnostics CSV per run plus summary.csv and
        scatter.csv.
    report --runs DIR [--out DIR] [--check-acceptance] [--margin PCT]
        Aggregate medians/IQRs per (scheme, steps) into plot-ready CSV and
        a text summary; optionally assert the expected scheme ordering.

Exit codes: 0 ok, 1 invalid input, 2 numerical failure, 3 acceptance
assertion failed.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys

import numpy as np

from . import __version__
from .adaptation import SCHEMES, AdaptConfig, adapt_stream
from .autodiff import NumericalError
from .body import default_body, forward_kinematics, save_body
from .config import (
    ExperimentConfig,
    RunGrid,
    config_hash,
    dump_config,
    load_config,
)
from .metrics import MetricsReport
from .pretrain import pretrain
from .regressor import load_weights, predict, save_weights
from .worldsim import make_source_dataset, make_target_stream

from dataclasses import replace


class AcceptanceFailure(Exception):
    """A configured result-ordering assertion did not hold."""


def _atomic_write(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _fmt(v) -> str:
    return repr(float(v))


def _source_dataset(cfg: ExperimentConfig):
    n = cfg.pretrain.n_train + cfg.pretrain.n_val
    return make_source_dataset(cfg.source, n, seed=cfg.pretrain.seed)


def cmd_pretrain(args) -> int:
    cfg = load_config(args.config)
    out = args.out
    os.makedirs(out, exist_ok=True)
    body = default_body(cfg.source.n_joints)
    dataset = _source_dataset(cfg)
    weights, metrics = pretrain(dataset, body, cfg.pretrain, hidden=cfg.hidden)
    save_weights(weights, os.path.join(out, "checkpoint.bin"))
    save_body(body, os.path.join(out, "body.txt"))
    _atomic_write(os.path.join(out, "config_used.ini"), dump_config(cfg))

    buf = io.StringIO()
    buf.write(f"# poseadapt-pretrain v={__version__} config={config_hash(cfg)}\n")
    writer = csv.writer(buf)
    cols = ["steps", "final_train_loss", "val_mpjpe", "val_pa_mpjpe", "val_pck",
            "random_init_val_mpjpe"]
    writer.writerow(cols)
    writer.writerow([metrics["steps"]] + [_fmt(metrics[c]) for c in cols[1:]])
    _atomic_write(os.path.join(out, "pretrain_metrics.csv"), buf.getvalue())
    print(f"checkpoint written to {out}; val mpjpe {metrics['val_mpjpe']:.4f}")
    return 0


_RUN_COLUMNS = [
    "frame", "scheme", "steps", "seed",
    "reproj", "prior", "replay", "frame_total",
    "motion", "teacher", "temporal_total",
    "reproj_norm", "mpjpe", "pa_mpjpe", "wall_ms",
]


def _run_name(scheme: str, steps: int, seed: int) -> str:
    return f"run_{scheme}_T{steps}_seed{seed}.csv"


def _write_run_csv(path, cfg_hash, scheme, steps, seed, breakdowns, reports, walls):
    buf = io.StringIO()
    buf.write(
        f"# poseadapt-run v={__version__} config={cfg_hash} "
        f"scheme={scheme} steps={steps} seed={seed} frames={len(breakdowns)}\n"
    )
    writer = csv.writer(buf)
    writer.writerow(_RUN_COLUMNS)
    for i, (bd, m, pa, wall) in enumerate(zip(
        breakdowns, reports.mpjpe_per_frame, reports.pa_mpjpe_per_frame, walls
    )):
        writer.writerow([
            i, scheme, steps, seed,
            _fmt(bd.reprojection), _fmt(bd.prior), _fmt(bd.source_replay),
            _fmt(bd.frame_total), _fmt(bd.motion), _fmt(bd.teacher),
            _fmt(bd.temporal_total), _fmt(bd.reproj_norm), _fmt(m), _fmt(pa),
            _fmt(wall),
        ])
    _atomic_write(path, buf.getvalue())


def cmd_adapt(args) -> int:
    cfg = load_config(args.config)
    grid = cfg.grid
    if args.scheme:
        grid = replace(grid, schemes=tuple(args.scheme))
    if args.seed:
        grid = replace(grid, seeds=tuple(args.seed))
    if args.steps:
        grid = replace(grid, steps=tuple(args.steps))
    if args.frames:
        grid = replace(grid, n_frames=args.frames)
    adapt_cfg = cfg.adapt
    if args.second_order:
        adapt_cfg = replace(adapt_cfg, second_order=args.second_order)
    cfg = ExperimentConfig(
        hidden=cfg.hidden, source=cfg.source, target=cfg.target,
        pretrain=cfg.pretrain, adapt=adapt_cfg, grid=grid,
    )
    chash = config_hash(cfg)

    ckpt = args.checkpoint or os.path.join(args.out, "checkpoint.bin")
    if not os.path.exists(ckpt):
        raise ValueError(f"checkpoint not found: {ckpt}")
    base = load_weights(ckpt)
    body = default_body(cfg.source.n_joints)
    dataset = _source_dataset(cfg)

    runs_dir = os.path.join(args.out, "runs")
    os.makedirs(runs_dir, exist_ok=True)
    _atomic_write(os.path.join(args.out, "config_used.ini"), dump_config(cfg))

    summary_rows = []
    scatter_rows = []
    streams: dict[int, list] = {}
    for scheme in grid.schemes:
        for steps in grid.steps:
            for seed in grid.seeds:
                if seed not in streams:
                    streams[seed] = make_target_stream(cfg.target, grid.n_frames, seed=seed)
                stream = streams[seed]
                run_cfg = replace(adapt_cfg, scheme=scheme, n_steps=steps, seed=seed)
                result = adapt_stream(base, stream, dataset, run_cfg, body)
                preds = [
                    forward_kinematics(body, p.shape, p.pose)
                    for p in result.predictions
                ]
                report = MetricsReport.from_frames(preds, [f.joints3d for f in stream])
                k = cfg.source.n_joints
                breakdowns = [
                    _WithNorm(bd, bd.reprojection / k) for bd in result.breakdowns
                ]
                _write_run_csv(
                    os.path.join(runs_dir, _run_name(scheme, steps, seed)),
                    chash, scheme, steps, seed, breakdowns, report, result.wall_ms,
                )
                summary_rows.append([
                    scheme, steps, seed, grid.n_frames,
                    _fmt(report.mpjpe), _fmt(report.pa_mpjpe), _fmt(report.pck),
                ])
                if scheme in ("B1", "B3", "Final"):
                    for i, bd in enumerate(breakdowns):
                        scatter_rows.append([
                            scheme, steps, seed, i, _fmt(bd.reproj_norm),
                            _fmt(report.mpjpe_per_frame[i]),
                        ])
                print(f"run {scheme} T={steps} seed={seed}: {report.summary()}")

    buf = io.StringIO()
    buf.write(f"# poseadapt-summary v={__version__} config={chash}\n")
    writer = csv.writer(buf)
    writer.writerow(["scheme", "steps", "seed", "frames", "mpjpe", "pa_mpjpe", "pck"])
    writer.writerows(summary_rows)
    _atomic_write(os.path.join(args.out, "summary.csv"), buf.getvalue())

    buf = io.StringIO()
    buf.write(f"# poseadapt-scatter v={__version__} config={chash}\n")
    writer = csv.writer(buf)
    writer.writerow(["scheme", "steps", "seed", "frame", "reproj_norm", "mpjpe"])
    writer.writerows(scatter_rows)
    _atomic_write(os.path.join(args.out, "scatter.csv"), buf.getvalue())
    return 0


class _WithNorm:
    """LossBreakdown plus the keypoint-normalized 2D loss used in reports."""

    __slots__ = ("_bd", "reproj_norm")

    def __init__(self, bd, reproj_norm):
        self._bd = bd
        self.reproj_norm = float(reproj_norm)

    def __getattr__(self, name):
        return getattr(self._bd, name)


def _read_run_csv(path):
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("# poseadapt-run"):
            raise ValueError(f"{path}: row 1: not a run CSV")
        reader = csv.reader(fh)
        cols = next(reader, None)
        if cols != _RUN_COLUMNS:
            raise ValueError(f"{path}: row 2: unexpected columns {cols}")
        rows = []
        for n, row in enumerate(reader, start=3):
            if len(row) != len(cols):
                raise ValueError(f"{path}: row {n}: expected {len(cols)} fields")
            try:
                rows.append({
                    "scheme": row[1], "steps": int(row[2]), "seed": int(row[3]),
                    "mpjpe": float(row[12]), "pa_mpjpe": float(row[13]),
                })
            except ValueError as e:
                raise ValueError(f"{path}: row {n}: {e}") from None
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return rows


def cmd_report(args) -> int:
    runs_dir = os.path.join(args.runs, "runs") if os.path.isdir(
        os.path.join(args.runs, "runs")) else args.runs
    files = sorted(
        f for f in os.listdir(runs_dir)
        if f.startswith("run_") and f.endswith(".csv")
    )
    if not files:
        raise ValueError(f"no run CSVs found in {runs_dir}")

    # stream-level value per run, grouped by (scheme, steps)
    groups: dict[tuple[str, int], dict[str, list[float]]] = {}
    for name in files:
        rows = _read_run_csv(os.path.join(runs_dir, name))
        scheme, steps = rows[0]["scheme"], rows[0]["steps"]
        g = groups.setdefault((scheme, steps), {"mpjpe": [], "pa_mpjpe": []})
        g["mpjpe"].append(float(np.mean([r["mpjpe"] for r in rows])))
        g["pa_mpjpe"].append(float(np.mean([r["pa_mpjpe"] for r in rows])))

    out = args.out or os.path.join(args.runs, "report")
    os.makedirs(out, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["scheme", "steps", "metric", "n_runs", "median", "q25", "q75"])
    lines = ["scheme ordering by median stream MPJPE", ""]
    for (scheme, steps) in sorted(groups):
        for metric in ("mpjpe", "pa_mpjpe"):
            vals = np.array(groups[(scheme, steps)][metric])
            writer.writerow([
                scheme, steps, metric, vals.size,
                _fmt(np.median(vals)),
                _fmt(np.percentile(vals, 25)), _fmt(np.percentile(vals, 75)),
            ])
        med = np.median(groups[(scheme, steps)]["mpjpe"])
        lines.append(f"  {scheme:<12} T={steps:<2} median mpjpe={med:.4f} "
                     f"(n={len(groups[(scheme, steps)]['mpjpe'])})")
    _atomic_write(os.path.join(out, "aggregate.csv"), buf.getvalue())
    _atomic_write(os.path.join(out, "summary.txt"), "\n".join(lines) + "\n")
    print("\n".join(lines))

    if args.check_acceptance:
        margin = args.margin / 100.0

        def median_of(scheme, steps=1):
            if (scheme, steps) not in groups:
                raise ValueError(f"acceptance check needs scheme {scheme} at T={steps}")
            return float(np.median(groups[(scheme, steps)]["mpjpe"]))

        final = median_of("Final")
        for other in ("B1", "B3"):
            o = median_of(other)
            if not final < o * (1.0 - margin):
                raise AcceptanceFailure(
                    f"Final median mpjpe {final:.4f} is not {args.margin:g}% "
                    f"below {other} ({o:.4f})"
                )
        print(f"acceptance ordering holds (margin {args.margin:g}%)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="poseadapt", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    pre = sub.add_parser("pretrain", help="train the base model on source data")
    pre.add_argument("--config", default=None, help="config file (defaults apply)")
    pre.add_argument("--out", default="results", help="output directory")
    pre.set_defaults(func=cmd_pretrain)

    ad_ = sub.add_parser("adapt", help="run the adaptation grid")
    ad_.add_argument("--config", default=None)
    ad_.add_argument("--out", default="results")
    ad_.add_argument("--checkpoint", default=None,
                     help="base checkpoint (default: OUT/checkpoint.bin)")
    ad_.add_argument("--scheme", action="append", choices=list(SCHEMES),
                     help="scheme to run (repeatable; default from config)")
    ad_.add_argument("--seed", action="append", type=int)
    ad_.add_argument("--steps", action="append", type=int,
                     help="inner iteration count T (repeatable)")
    ad_.add_argument("--frames", type=int, default=None)
    ad_.add_argument("--second-order", choices=["exact", "first"], default=None)
    ad_.set_defaults(func=cmd_adapt)

    rep = sub.add_parser("report", help="aggregate run CSVs")
    rep.add_argument("--runs", required=True, help="directory with run CSVs")
    rep.add_argument("--out", default=None)
    rep.add_argument("--check-acceptance", action="store_true")
    rep.add_argument("--margin", type=float, default=5.0,
                     help="required relative margin in percent")
    rep.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except AcceptanceFailure as e:
        print(f"acceptance failure: {e}", file=sys.stderr)
        return 3
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 2
    except (ValueError, OSError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
