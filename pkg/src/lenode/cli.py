"""Command-line entry points: generate, fit, simulate, forecast, benchmark."""

import argparse
import datetime as dt
import logging
import sys
from pathlib import Path

from . import bench, langevin, market_data, pipeline

log = logging.getLogger("lenode")


def _load_matrix(path):
    return market_data.to_daily_matrix(market_data.load_hourly_csv(path))


def cmd_generate(args):
    with open(args.spec, encoding="utf-8") as fh:
        spec = market_data.SyntheticSpec.from_json(fh.read())
    matrix = market_data.generate_synthetic(spec)
    market_data.save_matrix_csv(matrix, args.out)
    log.info("wrote %d days to %s", matrix.num_days, args.out)


def cmd_fit(args):
    matrix = _load_matrix(args.data)
    if args.train_end:
        matrix, _ = market_data.split(matrix, dt.date.fromisoformat(args.train_end))
    model = langevin.fit_model(matrix, grid_size=args.grid_size,
                               standardize=not args.unstandardized,
                               drift_corrected=not args.raw_diffusion)
    langevin.save_model(model, args.out)
    log.info("fitted on %d days; %d eigenvalues clamped", matrix.num_days,
             model.diffusion.clamped_eigenvalues)


def cmd_simulate(args):
    model = langevin.load_model(args.model)
    matrix = _load_matrix(args.data)
    t0 = dt.date.fromisoformat(args.init)
    ens = langevin.simulate(model, matrix.row(t0), args.days, args.paths, args.seed, t0=t0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    langevin.write_ensemble_csv(ens, out / "ensemble.csv")
    langevin.write_stats_json(langevin.ensemble_stats(ens), out / "stats.json", t0=t0)
    log.info("simulated %d paths over %d days into %s", args.paths, args.days, out)


def cmd_forecast(args):
    cfg = pipeline.ScenarioConfig.from_json(args.config)
    model = langevin.load_model(args.model or cfg.model_path)
    matrix = _load_matrix(args.data or cfg.data_path)
    out = Path(args.out)
    if args.sweep:
        ps = range(1, cfg.p + 1)
        for res in pipeline.run_sweep(cfg, matrix, model, ps=ps):
            res.write(out / f"p{res.config.p}")
    else:
        pipeline.run_scenario(cfg, matrix, model).write(out)
    log.info("forecasts written to %s", out)


def cmd_benchmark(args):
    pooled, per_p = bench.load_runs(args.runs)
    payload = bench.write_report(args.out, pooled, per_p, bins=args.bins)
    for row in bench.compare_methods(bench.build_report(pooled, args.bins)):
        print("{}\t{}\t{}\tmae={:.4f}\tiqr=[{:.4f}, {:.4f}]".format(*row))
    return payload


def build_parser():
    parser = argparse.ArgumentParser(prog="lenode", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="synthetic prices from a JSON spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("fit", help="estimate drift and diffusion into model.json")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--train-end", help="last training date (YYYY-MM-DD)")
    p.add_argument("--grid-size", type=int, default=1000)
    p.add_argument("--unstandardized", action="store_true",
                   help="apply the Scott factor in raw price units")
    p.add_argument("--raw-diffusion", action="store_true",
                   help="do not remove the drift from increments when estimating D2")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="Euler-Maruyama ensemble from an observed day")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--init", required=True)
    p.add_argument("--days", type=int, default=9)
    p.add_argument("--paths", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("forecast", help="run one scenario (or a p-sweep)")
    p.add_argument("--config", required=True)
    p.add_argument("--data")
    p.add_argument("--model")
    p.add_argument("--out", required=True)
    p.add_argument("--sweep", action="store_true", help="run p = 1..config.p, one subdir each")
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("benchmark", help="MAE / IQR / histograms over run directories")
    p.add_argument("--runs", required=True)
    p.add_argument("--bins", type=int, default=bench.DEFAULT_BINS)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
