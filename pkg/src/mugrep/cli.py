"""Command-line entry point: one subcommand per pipeline stage.

Exit codes: 0 success, 1 usage error, 2 runtime error. A single --config JSON
file (sections "generator", "graph", "training") layers over the built-in
defaults, which reproduce the reference hyperparameter settings.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .data import load_dataset
from .event_graph import GraphHyperParams
from .model import ABLATION_VARIANTS, save_checkpoint
from .synth import GeneratorConfig, describe, generate
from .training import (
    FEATURE_VARIANTS,
    TrainConfig,
    baseline_ha,
    community_volume_analysis,
    evaluate,
    mape_volume_spearman,
    prepare,
    run_ablation_suite,
    train,
    write_ablation_table,
    write_community_mape,
    write_metrics_json,
    write_train_log,
)


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's default 2
        raise UsageError(message)


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _generator_config(cfg: dict, seed: int | None) -> GeneratorConfig:
    gc = GeneratorConfig.from_dict(cfg.get("generator", {}))
    if seed is not None:
        gc.seed = seed
    return gc


def _graph_config(cfg: dict) -> GraphHyperParams:
    return GraphHyperParams.from_dict(cfg.get("graph", {}))


def _train_config(cfg: dict, seed: int | None) -> TrainConfig:
    tc = TrainConfig.from_dict(cfg.get("training", {}))
    if seed is not None:
        tc.seed = seed
    return tc


def build_parser() -> Parser:
    parser = Parser(prog="mugrep", description="Real estate appraisal pipeline")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--config", type=str, default=None, help="JSON config file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="generate a synthetic city")
    p.add_argument("--out", required=True)

    p = sub.add_parser("describe", parents=[common], help="summarize a dataset")
    p.add_argument("dataset")
    p.add_argument("--out", default=None)

    p = sub.add_parser("features", parents=[common], help="write the feature manifest")
    p.add_argument("dataset")
    p.add_argument("--out", default=None, help="defaults to the dataset directory")

    p = sub.add_parser("graphs", parents=[common], help="build and dump the graphs")
    p.add_argument("dataset")
    p.add_argument("--out", default=None, help="defaults to the dataset directory")

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("dataset")
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", parents=[common], help="evaluate a checkpoint")
    p.add_argument("dataset")
    p.add_argument("checkpoint")
    p.add_argument("--out", required=True)

    p = sub.add_parser("ablate", parents=[common], help="run ablation variants")
    p.add_argument("dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--variants", default=",".join(list(ABLATION_VARIANTS) + list(FEATURE_VARIANTS)))
    p.add_argument("--seeds", default=None, help="comma-separated, defaults to --seed")

    p = sub.add_parser("appraise", parents=[common], help="value a subject property")
    p.add_argument("dataset")
    p.add_argument("checkpoint")
    p.add_argument("--community", type=int, required=True)
    p.add_argument("--date", type=int, default=None)
    p.add_argument("--attributes", required=True,
                   help="estate attributes as JSON, or @file.json")
    p.add_argument("--out", default=None)

    p = sub.add_parser("serve", parents=[common], help="run the appraisal service")
    p.add_argument("dataset")
    p.add_argument("checkpoint")
    p.add_argument("--addr", default=None, help="host:port (or MUGREP_ADDR)")

    return parser


def _cmd_generate(args) -> int:
    cfg = _generator_config(_load_config(args.config), args.seed)
    out = generate(cfg, args.out)
    print(f"generated dataset at {out}")
    return 0


def _cmd_describe(args) -> int:
    summary = describe(args.dataset)
    text = json.dumps(summary, indent=2, sort_keys=True)
    print(text)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "summary.json").write_text(text + "\n", encoding="utf-8")
    return 0


def _cmd_features(args) -> int:
    from .features import build_layout

    dataset = load_dataset(args.dataset)
    layout = build_layout(dataset.schema, dataset.n_districts)
    out_dir = Path(args.out) if args.out else Path(args.dataset)
    out_dir.mkdir(parents=True, exist_ok=True)
    layout.save(out_dir / "features.json")
    print(f"wrote {out_dir / 'features.json'} ({len(layout)} slots, hash {layout.layout_hash()[:12]})")
    return 0


def _cmd_graphs(args) -> int:
    from . import features as ft
    from .community_graph import IntraCommunityIndex, build_hetero_edges, zscore_rows
    from .event_graph import build_event_graph

    cfg = _load_config(args.config)
    hp = _graph_config(cfg)
    dataset = load_dataset(args.dataset)
    out_dir = Path(args.out) if args.out else Path(args.dataset)
    out_dir.mkdir(parents=True, exist_ok=True)

    graph = build_event_graph(dataset.events, hp)
    graph.save(out_dir / "event_graph.bin", out_dir / "event_graph.json")
    intra = IntraCommunityIndex(dataset.events)
    intra.save(out_dir / "intra_index.bin")
    fctx = ft.build_feature_context(dataset)
    sim = ft.community_similarity_vectors(fctx, dataset.communities)
    hetero = build_hetero_edges(
        {t: zscore_rows(m) for t, m in sim.items()},
        [c.id for c in dataset.communities], hp.sim_quantile,
    )
    hetero.save(out_dir / "community_edges.json")
    n_edges = {t: len(s) for t, s in hetero.edge_sets.items()}
    print(f"event graph: {len(graph)} nodes; hetero edges per type: {n_edges}")
    return 0


def _cmd_train(args) -> int:
    cfg = _load_config(args.config)
    hp = _graph_config(cfg)
    tc = _train_config(cfg, args.seed)
    dataset = load_dataset(args.dataset)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    prepared = prepare(dataset, hp, validation_days=tc.validation_days,
                       test_days=tc.test_days)
    prepared.layout.save(Path(args.dataset) / "features.json")
    result = train(prepared, tc)
    save_checkpoint(
        out_dir / "model.ckpt.json", result.model, hp,
        prepared.layout.layout_hash(),
        prepared.normalizer.mean, prepared.normalizer.std,
        price_mean=prepared.table.price_mean, price_std=prepared.table.price_std,
    )
    write_train_log(out_dir / "train_log.csv", result.log)
    print(f"best epoch {result.best_epoch}, val loss {result.best_val_loss:.6f}; "
          f"train loss {result.initial_train_loss:.4f} -> {result.final_train_loss:.4f}")
    print(f"wrote {out_dir / 'model.ckpt.json'} and {out_dir / 'train_log.csv'}")
    return 0


def _cmd_evaluate(args) -> int:
    from .service import load_world

    world = load_world(args.dataset, args.checkpoint)
    prepared = world.prepared
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = evaluate(world.model, prepared, prepared.split.test)
    ha = baseline_ha(prepared.dataset.events, prepared.split.test)
    y = prepared.table.prices[prepared.split.test]
    from .training import compute_metrics

    ha_report = compute_metrics(y, ha)
    rows = community_volume_analysis(prepared, report)
    rho = mape_volume_spearman(rows) if len(rows) > 1 else float("nan")
    write_metrics_json(out_dir / "metrics.json", report, extra={
        "ha_baseline": {"mae": ha_report.mae, "mape": ha_report.mape, "rmse": ha_report.rmse},
        "mape_volume_spearman": rho,
    })
    write_community_mape(out_dir / "community_mape.csv", rows)
    print(f"test MAE {report.mae:.4f}  MAPE {report.mape * 100:.2f}%  RMSE {report.rmse:.4f} "
          f"(HA MAPE {ha_report.mape * 100:.2f}%)")
    return 0


def _cmd_ablate(args) -> int:
    cfg = _load_config(args.config)
    hp = _graph_config(cfg)
    tc = _train_config(cfg, args.seed)
    dataset = load_dataset(args.dataset)
    variants = [v for v in args.variants.split(",") if v]
    seeds = ([int(s) for s in args.seeds.split(",")] if args.seeds else [tc.seed])
    rows = run_ablation_suite(dataset, tc, hp, variants, seeds)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_ablation_table(out_dir / "ablation_table.csv", rows)
    for r in rows:
        print(f"{r['variant']:>9} seed {r['seed']}: MAE {r['mae']:.4f} "
              f"MAPE {r['mape'] * 100:.2f}% RMSE {r['rmse']:.4f}")
    return 0


def _cmd_appraise(args) -> int:
    from .service import appraise, load_world

    raw = args.attributes
    if raw.startswith("@"):
        raw = Path(raw[1:]).read_text(encoding="utf-8")
    attributes = json.loads(raw)
    world = load_world(args.dataset, args.checkpoint)
    request = {"community_id": args.community, "attributes": attributes}
    if args.date is not None:
        request["valuation_date"] = args.date
    response = appraise(world, request)
    text = json.dumps(response, indent=2, sort_keys=True)
    print(text)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "appraisal.json").write_text(text + "\n", encoding="utf-8")
    return 0


def _cmd_serve(args) -> int:
    from .service import serve

    addr = args.addr or os.environ.get("MUGREP_ADDR", "127.0.0.1:8080")
    serve(args.dataset, args.checkpoint, addr)
    return 0


COMMANDS = {
    "generate": _cmd_generate,
    "describe": _cmd_describe,
    "features": _cmd_features,
    "graphs": _cmd_graphs,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "ablate": _cmd_ablate,
    "appraise": _cmd_appraise,
    "serve": _cmd_serve,
}


def dispatch(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    try:
        return COMMANDS[args.command](args)
    except (UsageError, json.JSONDecodeError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failures
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
