"""Command-line driver: catalog generation, experiment presets, service.

All commands are deterministic under a fixed --seed and write plain
structured files (JSON lines manifest, CSV game tables, JSON summaries)
that diff cleanly across runs.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import simulate
from .catalog import generate_catalog, load_catalog, save_catalog
from .session import SessionConfig
from .simulate import UserModel, summarize

GAME_CSV_COLUMNS = "method,target,status,iterations,final weights (w0..wM-1)"

PRESETS = ("compare-methods", "scaling", "weights", "consistency")


def _int_list(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mindseek",
        description="Interactive query-free retrieval: simulation and service tooling.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write a synthetic catalog manifest")
    gen.add_argument("--n", type=int, default=500, help="item count")
    gen.add_argument("--channels", type=int, default=5, help="feature channel count")
    gen.add_argument("--dims", type=_int_list, default=[6], help="dims, scalar or per-channel CSV")
    gen.add_argument("--clusters", type=_int_list, default=[16], help="clusters per channel")
    gen.add_argument("--separation", type=str, default="1.0", help="cluster separation per channel")
    gen.add_argument("--noise", type=str, default="0.25", help="within-cluster noise per channel")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True, help="manifest path to write")

    exp = sub.add_parser(
        "experiment",
        help="run a simulation preset",
        description=(
            "Presets: compare-methods, scaling, weights, consistency. "
            f"games.csv columns: {GAME_CSV_COLUMNS}. "
            "summary.json carries the aggregate metrics for the preset."
        ),
    )
    exp.add_argument("preset", choices=PRESETS)
    exp.add_argument("--catalog", help="catalog manifest; omitted -> preset synthesizes one")
    exp.add_argument("--games", type=int, default=None, help="games per condition")
    exp.add_argument("--sizes", type=_int_list, default=[250, 500, 1000, 2000])
    exp.add_argument("--n-display", type=int, default=8)
    exp.add_argument("--method", default="reweight", choices=("reweight", "fixed_weight", "late_fusion"))
    exp.add_argument(
        "--user",
        default=None,
        choices=("ideal", "random", "noisy"),
        help="default: noisy with --channel-bias 0 for compare-methods, ideal otherwise",
    )
    exp.add_argument("--temperature", type=float, default=simulate.DEFAULT_TEMPERATURE)
    exp.add_argument("--epsilon", type=float, default=simulate.DEFAULT_EPSILON)
    exp.add_argument("--channel-bias", type=int, default=None)
    exp.add_argument("--max-iters", type=int, default=50)
    exp.add_argument("--seed", type=int, default=0)
    exp.add_argument("--targets", type=int, default=10, help="targets for the consistency preset")
    exp.add_argument("--sessions-per-target", type=int, default=5)
    exp.add_argument("--out", required=True, help="output directory")

    srv = sub.add_parser("serve", help="run the HTTP session service")
    srv.add_argument("--config", help="service config JSON")
    srv.add_argument("--catalog", help="override catalog manifest path")
    srv.add_argument("--port", type=int, default=None)
    srv.add_argument("--host", default=None)

    return parser


def _scalar_or_list(text: str, m: int):
    vals = [float(v) for v in text.split(",") if v]
    if len(vals) == 1:
        return vals[0]
    return vals


def cmd_generate(args: argparse.Namespace) -> int:
    dims = args.dims if len(args.dims) > 1 else args.dims[0]
    clusters = args.clusters if len(args.clusters) > 1 else args.clusters[0]
    catalog = generate_catalog(
        args.n,
        args.channels,
        dims,
        clusters=clusters,
        separation=_scalar_or_list(args.separation, args.channels),
        noise=_scalar_or_list(args.noise, args.channels),
        seed=args.seed,
    )
    save_catalog(catalog, args.out)
    print(
        f"wrote {catalog.n_items} items x {catalog.n_channels} channels "
        f"to {args.out} (seed {args.seed})"
    )
    return 0


def _user_model(args: argparse.Namespace) -> UserModel:
    kind = args.user
    bias = args.channel_bias
    if kind is None:
        if args.preset == "compare-methods":
            kind = "noisy"
            bias = 0 if bias is None else bias
        else:
            kind = "ideal"
    return UserModel(
        kind,
        temperature=args.temperature,
        epsilon=args.epsilon,
        channel_bias=bias,
    )


def _write_games_csv(path: Path, records: list[simulate.GameRecord]) -> None:
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        n_weights = records[0].final_weights.size if records else 0
        writer.writerow(
            ["method", "target", "status", "iterations"]
            + [f"w{j}" for j in range(n_weights)]
        )
        for rec in records:
            writer.writerow(
                [rec.method, rec.target, rec.status, rec.iterations]
                + [repr(float(w)) for w in rec.final_weights]
            )


def _report_dict(records: list[simulate.GameRecord]) -> dict:
    report = summarize(records)
    return {
        "n_games": report.n_games,
        "counts": report.counts,
        "success_rate": report.success_rate,
        "mean_iterations": report.mean_iterations,
        "cumulative": [float(v) for v in report.cumulative],
        "mean_weights": [float(v) for v in report.mean_weights],
    }


def cmd_experiment(args: argparse.Namespace) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = SessionConfig(n_display=args.n_display, max_iterations=args.max_iters)
    summary: dict = {"preset": args.preset, "seed": args.seed}
    all_records: list[simulate.GameRecord] = []

    if args.preset == "scaling":
        games = args.games or 100
        result = simulate.scaling_experiment(
            args.sizes, games, _user_model(args), config, seed=args.seed
        )
        summary["rows"] = [
            {"n_items": n, "mean_iterations": et}
            for n, et in zip(result.sizes, result.mean_iterations)
        ]
        summary["fit"] = {
            "slope": result.slope,
            "intercept": result.intercept,
            "r_squared": result.r_squared,
        }

    elif args.preset == "compare-methods":
        games = args.games or 200
        catalog = (
            load_catalog(args.catalog)
            if args.catalog
            else simulate.dominant_channel_catalog(n=1000, m=8, seed=args.seed)
        )
        by_method = simulate.compare_methods(
            catalog, games=games, user=_user_model(args), config=config, seed=args.seed
        )
        summary["methods"] = {}
        for method, records in by_method.items():
            summary["methods"][method] = _report_dict(records)
            all_records.extend(records)

    elif args.preset == "weights":
        games = args.games or 124
        catalog = (
            load_catalog(args.catalog)
            if args.catalog
            else simulate.dominant_channel_catalog(n=500, m=5, seed=args.seed)
        )
        report = simulate.weight_experiment(
            catalog, games=games, user=_user_model(args), config=config, seed=args.seed
        )
        summary["channels"] = list(report.channel_names)
        summary["mean_weights"] = [float(v) for v in report.mean_weights]
        summary["solo_mean_iterations"] = [float(v) for v in report.solo_mean_iterations]
        all_records.extend(report.records)

    elif args.preset == "consistency":
        catalog = (
            load_catalog(args.catalog)
            if args.catalog
            else generate_catalog(500, 5, 6, clusters=16, seed=args.seed)
        )
        rng = np.random.default_rng(args.seed)
        targets = [int(t) for t in rng.choice(catalog.n_items, size=args.targets, replace=False)]
        rows = simulate.consistency_experiment(
            catalog,
            targets,
            args.sessions_per_target,
            user=_user_model(args),
            config=config,
            seed=args.seed,
        )
        summary["rows"] = [
            {
                "target": row.target,
                "mean_iterations": row.mean_iterations,
                "std_iterations": row.std_iterations,
            }
            for row in rows
        ]

    if all_records:
        _write_games_csv(out_dir / "games.csv", all_records)
    (out_dir / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(f"{args.preset}: wrote {out_dir / 'summary.json'}")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import ServiceConfig, create_app

    config = ServiceConfig.from_file(args.config)
    if args.catalog:
        config.catalog_path = args.catalog
    if args.port is not None:
        config.port = args.port
    if args.host is not None:
        config.host = args.host
    app = create_app(config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="warning")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "generate":
            return cmd_generate(args)
        if args.command == "experiment":
            return cmd_experiment(args)
        if args.command == "serve":
            return cmd_serve(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
