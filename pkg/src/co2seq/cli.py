"""Command-line entry point ``co2seq``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, SimConfig, parse_config, preset
from .driver import SimulationError, pretrain, relative_error_report, run_direct, run_hybrid
from .fileio import list_snapshots, read_snapshot, render_heatmap


def _load_config(args) -> SimConfig:
    if args.config:
        cfg = parse_config(args.config)
    else:
        cfg = preset(args.preset)
    changes = {}
    if getattr(args, "out", None):
        changes["output_dir"] = args.out
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "steps", None) is not None:
        changes["steps"] = args.steps
    return cfg.replace(**changes) if changes else cfg


def _cmd_run(args, runner) -> int:
    cfg = _load_config(args)
    if cfg.output_dir is None:
        cfg = cfg.replace(output_dir=f"{runner.__name__.replace('_', '-')}-out")
    kw = {"checkpoint": args.checkpoint} if runner is run_hybrid else {}
    traj = runner(cfg, **kw)
    print(f"{traj.solver}: {traj.saturation_steps} saturation steps, "
          f"{traj.pressure_updates} pressure updates -> {traj.output_dir}")
    return 0


def _cmd_pretrain(args) -> int:
    cfg = _load_config(args)
    path = Path(args.checkpoint or "checkpoint.txt")
    _, _, hist = pretrain(cfg, path)
    print(f"pretrained {cfg.pretrain_epochs} epochs, loss {hist[0]:.4e} -> {hist[-1]:.4e}; "
          f"checkpoint written to {path}")
    return 0


def _cmd_compare(args) -> int:
    a_files = list_snapshots(args.a, args.kind)
    b_files = list_snapshots(args.b, args.kind)
    b_by_name = {p.name: p for p in b_files}
    common = [p for p in a_files if p.name in b_by_name]
    if not common:
        print(f"no matching {args.kind} snapshots in {args.a} and {args.b}", file=sys.stderr)
        return 1
    print("step,max,mean,l2,frac_under_5,frac_under_20")
    for pa in common:
        sa = read_snapshot(pa)
        sb = read_snapshot(b_by_name[pa.name])
        # the Dirichlet boundary is zero in both; compare the interior only
        rep = relative_error_report(sa.grid[1:-1, 1:-1], sb.grid[1:-1, 1:-1])
        print(f"{sa.step},{rep.max:.6g},{rep.mean:.6g},{rep.l2:.6g},"
              f"{rep.frac_under_5:.6f},{rep.frac_under_20:.6f}")
    return 0


def _cmd_render(args) -> int:
    snap = read_snapshot(args.snapshot)
    out = args.out or str(Path(args.snapshot).with_suffix(".ppm" if args.color else ".pgm"))
    render_heatmap(snap, out, color=args.color)
    print(out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="co2seq", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def sim_args(sp, checkpoint_help=None):
        sp.add_argument("--config", help="INI config file")
        sp.add_argument("--preset", default="uniform", choices=["uniform", "nonuniform"],
                        help="defaults when no --config is given")
        sp.add_argument("--out", help="output directory (overrides the config)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--steps", type=int)
        if checkpoint_help:
            sp.add_argument("--checkpoint", help=checkpoint_help)

    sim_args(sub.add_parser("run-direct", help="saturation + direct pressure solve"))
    sim_args(sub.add_parser("run-hybrid", help="saturation + network pressure solve"),
             "start from this pretrained checkpoint instead of pretraining")
    sim_args(sub.add_parser("pretrain", help="pretrain the network and write a checkpoint"),
             "checkpoint path to write (default checkpoint.txt)")

    cp = sub.add_parser("compare", help="relative error between two trajectory directories")
    cp.add_argument("a")
    cp.add_argument("b", help="reference trajectory")
    cp.add_argument("--kind", default="pressure", choices=["pressure", "saturation"])

    rp = sub.add_parser("render", help="render a snapshot CSV as a PGM/PPM heatmap")
    rp.add_argument("snapshot")
    rp.add_argument("--out")
    rp.add_argument("--color", action="store_true", help="blue-white-red PPM instead of gray PGM")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run-direct":
            return _cmd_run(args, run_direct)
        if args.command == "run-hybrid":
            return _cmd_run(args, run_hybrid)
        if args.command == "pretrain":
            return _cmd_pretrain(args)
        if args.command == "compare":
            return _cmd_compare(args)
        return _cmd_render(args)
    except (ConfigError, SimulationError, FileNotFoundError, ValueError) as exc:
        print(f"co2seq: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
