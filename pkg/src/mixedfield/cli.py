"""Command-line entry points: ``simulate`` for Monte Carlo presets and
``analyze`` for the closed-form interference sweeps."""

from __future__ import annotations

import argparse
import logging
import sys

from .harness import (
    ALL_SCHEMES,
    ANALYSIS_PRESETS,
    MONTE_CARLO_PRESETS,
    ExperimentSpec,
    run_experiment,
)


def _add_common(parser):
    parser.add_argument("--preset", required=True, help="experiment preset name")
    parser.add_argument("--scenario", default=None, help="scenario description file (YAML)")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--small", action="store_true", help="desk-scale profile (N=65, 5 drops)")
    parser.add_argument("--plots", action="store_true", help="render figures from the CSV outputs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mixedfield")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="Monte Carlo benchmark runs")
    _add_common(sim)
    sim.add_argument(
        "--schemes",
        default="RA+BF,FA+BF,RA+ZF,FA+ZF",
        help=f"comma-separated subset of {','.join(ALL_SCHEMES)}",
    )
    sim.add_argument("--drops", type=int, default=None, help="Monte Carlo drops per sweep point")

    ana = sub.add_parser("analyze", help="closed-form interference sweeps")
    _add_common(ana)
    return parser


def render_plots(out_dir):
    "Render one PNG per CSV in the output directory (requires matplotlib)."
    import csv
    from pathlib import Path

    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        logging.getLogger(__name__).warning("matplotlib not installed; skipping plots")
        return
    for path in sorted(Path(out_dir).glob("*.csv")):
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = list(reader)
        if not rows or len(header) < 2:
            continue
        numeric = []
        for row in rows:
            try:
                numeric.append([float(v) for v in row[-(len(header) - 1):]])
            except ValueError:
                numeric = None
                break
        fig, ax = plt.subplots(figsize=(7, 4.5))
        if numeric is None:  # results.csv-style with a leading scheme column
            schemes = sorted({row[0] for row in rows})
            for scheme in schemes:
                pts = [(float(r[1]), float(r[2])) for r in rows if r[0] == scheme]
                pts.sort()
                ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=scheme)
            ax.set_xlabel(header[1])
            ax.set_ylabel(header[2])
            ax.legend()
        else:
            xs = [row[0] for row in numeric]
            for col in range(1, len(header) - 1):
                ax.plot(xs, [row[col] for row in numeric], label=header[col + 1])
            ax.set_xlabel(header[1])
            ax.legend(fontsize=8)
        ax.grid(alpha=0.3)
        fig.tight_layout()
        fig.savefig(path.with_suffix(".png"), dpi=130)
        plt.close(fig)


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.command == "simulate":
        if args.preset not in MONTE_CARLO_PRESETS:
            print(f"simulate expects one of {MONTE_CARLO_PRESETS}", file=sys.stderr)
            return 2
        schemes = tuple(s.strip() for s in args.schemes.split(",") if s.strip())
        spec = ExperimentSpec(
            preset=args.preset,
            out_dir=args.out,
            scenario_path=args.scenario,
            schemes=schemes,
            monte_carlo_drops=args.drops if args.drops else (5 if args.small else 20),
            seed=args.seed,
            small=args.small,
        )
    else:
        if args.preset not in ANALYSIS_PRESETS:
            print(f"analyze expects one of {ANALYSIS_PRESETS}", file=sys.stderr)
            return 2
        spec = ExperimentSpec(
            preset=args.preset,
            out_dir=args.out,
            scenario_path=args.scenario,
            seed=args.seed,
            small=args.small,
        )
    try:
        _, failures = run_experiment(spec)
    except Exception:
        logging.getLogger(__name__).exception("run failed")
        return 1
    if args.plots:
        render_plots(args.out)
    return 0 if failures == 0 else 1


if __name__ == "__main__":
    sys.exit(main())
