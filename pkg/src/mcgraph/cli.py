"""Command-line front end wiring config files and flags to the pipeline.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric abort.
Diagnostics go to stderr; results go to files or stdout. Every artifact
embeds the effective config (file values overridden by flags) and the seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import attention as att
from . import dataset as ds
from . import evaluate as ev
from . import recommend as rec
from .contrastive import train as train_embeddings
from .contrastive import write_loss_trace
from .graph import build_views

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

TS_CHOICES = (40, 60, 80, 100)
SWEEP_KINDS = ("sensitivity", "dims", "ts", "criteria")


def _write_json(payload: dict, path: Path) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n",
                    encoding="utf-8")


def _int_list(text: str, flag: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ValueError(f"{flag} expects comma-separated integers, got {text!r}")


def _float_list(text: str, flag: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ValueError(f"{flag} expects comma-separated numbers, got {text!r}")


def _config_file_keys(text: str) -> set[str]:
    keys = set()
    for raw in text.splitlines():
        line = raw.strip()
        if line and not line.startswith("#") and "=" in line:
            keys.add(line.partition("=")[0].strip())
    return keys


def effective_config(args: argparse.Namespace) -> ev.ExperimentConfig:
    """Defaults, then the config file, then flags; env seed is the weakest."""
    cfg = ev.ExperimentConfig()
    file_keys: set[str] = set()
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ValueError(f"config file not found: {path}")
        text = path.read_text(encoding="utf-8")
        cfg = ev.parse_config(text, cfg)
        file_keys = _config_file_keys(text)
    overrides: dict[str, object] = {}
    if args.data:
        overrides["dataset_path"] = args.data
    if args.runs is not None:
        overrides["n_runs"] = args.runs
    if getattr(args, "variant", None):
        overrides["variant"] = args.variant
    if args.ts is not None:
        overrides["ts_percent"] = args.ts
    if args.criteria is not None:
        overrides["criteria_count"] = args.criteria
    if overrides:
        cfg = ev.apply_config_values(cfg, overrides)
    if args.seed is not None:
        cfg = replace(cfg, seed_base=args.seed)
    elif "seed_base" not in file_keys:
        env_seed = os.environ.get("MCGRAPH_SEED")
        if env_seed is not None:
            try:
                cfg = replace(cfg, seed_base=int(env_seed))
            except ValueError:
                raise ValueError(
                    f"MCGRAPH_SEED must be an integer, got {env_seed!r}") from None
    return cfg


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(cfg: ev.ExperimentConfig) -> None:
    print("effective config:", file=sys.stderr)
    for line in ev.format_config(cfg).splitlines():
        print(f"  {line}", file=sys.stderr)


def _load_input(cfg: ev.ExperimentConfig) -> ds.RatingDataset:
    if cfg.dataset_path:
        return ds.load_ratings(cfg.dataset_path)
    return ev.make_planted_dataset(seed=cfg.split_seed)


def cmd_ingest(args: argparse.Namespace) -> int:
    cfg = effective_config(args)
    if not cfg.dataset_path:
        raise ValueError("ingest needs --data (or dataset_path in the config)")
    data = ds.load_ratings(cfg.dataset_path)
    if args.scale:
        lo_text, _, hi_text = args.scale.partition(":")
        try:
            source = (float(lo_text), float(hi_text))
        except ValueError:
            raise ValueError(f"--scale expects LO:HI, got {args.scale!r}") from None
        data = ds.normalize_scale(data, source)
    out = _out_dir(args)
    ds.save_ratings(data, out / "ratings.csv")
    _write_json({"config": ev.config_as_dict(cfg), "source": cfg.dataset_path,
                 "scale": args.scale, "records": len(data),
                 "stats": ds.compute_stats(data).as_dict()},
                out / "ingest.json")
    print(f"wrote {out / 'ratings.csv'} ({len(data)} records)")
    return EXIT_OK


def cmd_stats(args: argparse.Namespace) -> int:
    cfg = effective_config(args)
    stats = ds.compute_stats(_load_input(cfg))
    payload = stats.as_dict()
    payload["config"] = ev.config_as_dict(cfg)
    print(json.dumps(payload, sort_keys=True, indent=2))
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    cfg = effective_config(args)
    _echo_config(cfg)
    train_data, _ = ev.prepared_data(cfg)
    views = build_views(train_data)
    params, trace = train_embeddings(views, cfg.train_config(), cfg.seed_base)
    out = _out_dir(args)
    np.savez(out / "checkpoint.npz", **params)
    write_loss_trace(trace, out / "loss_trace.csv")
    _write_json({"config": ev.config_as_dict(cfg), "seed": cfg.seed_base,
                 "epochs": len(trace), "first_loss": trace[0].l_total,
                 "final_loss": trace[-1].l_total},
                out / "train.json")
    print(f"trained {cfg.variant} seed {cfg.seed_base}: "
          f"loss {trace[0].l_total:.4f} -> {trace[-1].l_total:.4f}")
    return EXIT_OK


def cmd_predict(args: argparse.Namespace) -> int:
    cfg = effective_config(args)
    _echo_config(cfg)
    train_data, test_data = ev.prepared_data(cfg)
    views = build_views(train_data)
    train_cfg = cfg.train_config()
    params, _ = train_embeddings(views, train_cfg, cfg.seed_base)
    matrices = [att.encode_view(v, params, cfg.encoder,
                                train_cfg.use_global_attention).matrix
                for v in views]
    fused = rec.fuse(matrices, train_data.num_users)
    predictor = rec.train_predictor(fused, train_data, cfg.predictor,
                                    seed=cfg.seed_base)
    predictions = ev._model_predictions(predictor, fused, train_data, test_data)
    actuals = [r.overall for r in test_data.records]
    out = _out_dir(args)
    rec.write_predictions(test_data, predictions, out / "predictions.csv")
    _write_json({"config": ev.config_as_dict(cfg), "seed": cfg.seed_base,
                 "mae": ev.mae(predictions, actuals),
                 "rmse": ev.rmse(predictions, actuals)},
                out / "predict.json")
    print(f"predicted {len(test_data.records)} pairs: "
          f"mae {ev.mae(predictions, actuals):.4f}")
    return EXIT_OK


def _report_line(report: ev.MetricReport) -> str:
    return (f"{report.label}: mae {report.mae_mean:.4f} +/- {report.mae_std:.4f}  "
            f"rmse {report.rmse_mean:.4f} +/- {report.rmse_std:.4f}  "
            f"({len(report.mae_runs)} runs, {report.failed_runs} failed)")


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = effective_config(args)
    _echo_config(cfg)
    report = ev.run_experiment(cfg, jobs=args.jobs)
    out = _out_dir(args)
    ev.write_report_json(report, out / f"report_{cfg.variant}.json")
    ev.write_report_csv([report], out / f"runs_{cfg.variant}.csv")
    print(_report_line(report))
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = effective_config(args)
    _echo_config(cfg)
    out = _out_dir(args)
    reports = []
    for variant in ev.VARIANTS:
        report = ev.run_ablation(cfg, variant, jobs=args.jobs)
        ev.write_report_json(report, out / f"report_{variant}.json")
        reports.append(report)
        print(_report_line(report))
    ev.write_report_csv(reports, out / "runs_ablation.csv")
    ordered = reports[0].mae_mean < reports[1].mae_mean < reports[2].mae_mean
    print(f"ablation ordering D-MGAC < D-MGAC* < D-MGAC*-: "
          f"{'holds' if ordered else 'violated'}")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = effective_config(args)
    _echo_config(cfg)
    out = _out_dir(args)
    if args.kind == "sensitivity":
        alphas = _float_list(args.alphas, "--alphas") if args.alphas \
            else ev.SENSITIVITY_WEIGHTS
        betas = _float_list(args.betas, "--betas") if args.betas \
            else ev.SENSITIVITY_WEIGHTS
        lambdas = _float_list(args.lambdas, "--lambdas") if args.lambdas \
            else ev.SENSITIVITY_LAMBDAS
        points = ev.sweep_sensitivity(cfg, alphas, betas, lambdas,
                                      jobs=args.jobs)
        ev.write_sensitivity_csv(points, out / "sensitivity.csv")
        _write_json({"config": ev.config_as_dict(cfg),
                     "points": [{"alpha": p.alpha, "beta": p.beta,
                                 "lambda": p.l2_weight,
                                 "report": p.report.as_dict()}
                                for p in points]},
                    out / "sensitivity.json")
        print(f"swept {len(points)} sensitivity points")
    elif args.kind == "dims":
        if not args.dims:
            raise ValueError("sweep dims needs --dims, e.g. --dims 24,48,96")
        dims = _int_list(args.dims, "--dims")
        reports = ev.sweep_embedding_dim(cfg, dims, jobs=args.jobs)
        _write_json({"config": ev.config_as_dict(cfg),
                     "dims": dims,
                     "reports": [r.as_dict() for r in reports]},
                    out / "dims.json")
        for dim, report in zip(dims, reports):
            print(f"dim {dim}: mae {report.mae_mean:.4f}")
    elif args.kind == "ts":
        reports = []
        for ts in TS_CHOICES:
            report = ev.run_experiment(replace(cfg, ts_percent=ts),
                                       jobs=args.jobs)
            reports.append(report)
            print(f"ts {ts}: mae {report.mae_mean:.4f}")
        ev.write_report_csv(reports, out / "runs_ts.csv")
        _write_json({"config": ev.config_as_dict(cfg),
                     "reports": [r.as_dict() for r in reports]},
                    out / "ts.json")
    else:
        if not args.counts:
            raise ValueError("sweep criteria needs --counts, e.g. --counts 1,2,3")
        counts = _int_list(args.counts, "--counts")
        reports = ev.sweep_criteria_count(cfg, counts, jobs=args.jobs)
        _write_json({"config": ev.config_as_dict(cfg),
                     "counts": counts,
                     "reports": [r.as_dict() for r in reports]},
                    out / "criteria.json")
        for count, report in zip(counts, reports):
            print(f"criteria {count}: mae {report.mae_mean:.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mcgraph",
        description="Multi-criteria graph recommender: data, training, "
                    "evaluation and sweeps.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, variant: bool = True) -> None:
        p.add_argument("--data", help="ratings CSV; omitted = planted synthetic")
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int, help="base seed (beats MCGRAPH_SEED)")
        p.add_argument("--runs", type=int, help="number of seeded runs")
        if variant:
            p.add_argument("--variant", choices=ev.VARIANTS)
        p.add_argument("--ts", type=int, choices=TS_CHOICES,
                       help="training segment percentage")
        p.add_argument("--criteria", type=int, help="keep first K criteria")
        p.add_argument("--jobs", type=int, default=1, help="parallel workers")
        p.add_argument("--out", default=".", help="artifact directory")

    p = sub.add_parser("ingest", help="validate a CSV and write canonical form")
    common(p)
    p.add_argument("--scale", help="source rating range LO:HI mapped onto 1..5")
    p.set_defaults(handler=cmd_ingest)

    p = sub.add_parser("stats", help="dataset statistics as JSON on stdout")
    common(p)
    p.set_defaults(handler=cmd_stats)

    p = sub.add_parser("train", help="one seeded embedding training run")
    common(p)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("predict", help="train once and score the test split")
    common(p)
    p.set_defaults(handler=cmd_predict)

    p = sub.add_parser("evaluate", help="multi-run experiment with reports")
    common(p)
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("ablate", help="evaluate all three model variants")
    common(p, variant=False)
    p.set_defaults(handler=cmd_ablate)

    p = sub.add_parser("sweep", help="hyperparameter and protocol sweeps")
    p.add_argument("kind", choices=SWEEP_KINDS)
    common(p)
    p.add_argument("--dims", help="fused widths for `dims`, e.g. 24,48,96")
    p.add_argument("--counts", help="criteria counts for `criteria`, e.g. 1,2,3")
    p.add_argument("--alphas", help="LCL weights for `sensitivity`")
    p.add_argument("--betas", help="HGCL weights for `sensitivity`")
    p.add_argument("--lambdas", help="decay weights for `sensitivity`")
    p.set_defaults(handler=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return args.handler(args)
    except (ds.DatasetError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RuntimeError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    raise SystemExit(main())
