"""``mgbench`` command line.

Exit codes: 0 success, 1 config or problem error, 2 I/O error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .bench import (
    EXPERIMENTS,
    apply_quick,
    load_config,
    run_ablations,
    run_gauss_w2,
    run_gm_benchmark,
    run_single,
)
from .errors import NumericError, ParameterError

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mgbench", description="Midpoint-guidance posterior sampling benchmarks.")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", type=Path, help="JSON config (keys as in BenchmarkConfig)")
    p.add_argument("--out", type=Path, required=True, help="output CSV")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--quick", action="store_true", help="30 replicates, 1000 samples, 2000 slices")
    p.add_argument("--problem", type=Path, help="problem JSON for the 'sample' experiment")
    p.add_argument("--plot", type=Path, help="also render the results as a PNG (needs matplotlib)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _plot(summary: dict, experiment: str, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    if experiment == "gauss-w2":
        etas = summary["etas"]
        ax.plot(etas, summary["mean"], marker="o")
        ax.fill_between(etas, summary["q10"], summary["q90"], alpha=0.3)
        ax.set_xlabel("eta")
        ax.set_ylabel("W2")
    else:
        cells = list(summary["cells"].values())
        labels = [f"{c['method']}\n{c['eta']}" for c in cells]
        ax.errorbar(range(len(cells)), [c["mean"] for c in cells], yerr=[c["ci95"] for c in cells], fmt="o")
        ax.set_xticks(range(len(cells)), labels, fontsize=7)
        ax.set_ylabel("sliced Wasserstein")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s")
    try:
        cfg = load_config(args.config, experiment=args.experiment, seed=args.seed, workers=args.workers)
        if args.quick:
            cfg = apply_quick(cfg)
        if args.experiment == "sample":
            if args.problem is None:
                raise ParameterError("the 'sample' experiment needs --problem")
            run_single(cfg, args.problem, args.out)
            return EXIT_OK
        if args.experiment == "gauss-w2":
            summary = run_gauss_w2(cfg, args.out)
        elif args.experiment.startswith("ablate"):
            summary = run_ablations(cfg, args.out)
        else:
            summary = run_gm_benchmark(cfg, args.out)
        if args.plot is not None:
            _plot(summary, args.experiment, args.plot)
    except ParameterError as exc:
        print(f"mgbench: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"mgbench: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericError, FloatingPointError) as exc:
        print(f"mgbench: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
