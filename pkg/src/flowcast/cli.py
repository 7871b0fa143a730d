"""Command-line entry point.

Subcommands cover the whole pipeline: synth (generate a trace), windows
(preprocess into cached graphs), train, tune, eval, and report. Every
command writes a JSON manifest into its output directory before doing
work, never mutates its inputs, and is reproducible given the same
seeds. Exit codes: 0 success, 2 usage error, 3 data error, 4 runtime
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import BACKBONES, BaselineHyper, BaselineModel
from .errors import (
    CorruptError,
    DivergedError,
    FlowcastError,
    MalformedRowError,
    MissingColumnError,
    TooFewWindowsError,
    VersionMismatchError,
)
from .flows import DEFAULT_SCHEMA, CsvSchema, TraceConfig, generate_synthetic_trace, parse_flow_csv, sort_by_start, write_flow_csv
from .gnn import GnnHyper, GnnModel
from .graphs import ForecastExample, build_graph, load_graph_cache, make_examples, save_graph_cache
from .hpo import ShaConfig, TpeConfig, default_search_space, run_study
from .nn import load_checkpoint, save_checkpoint
from .preprocess import (
    DEFAULT_OHE,
    build_ip_vocabulary,
    load_split,
    load_vocabulary,
    make_windows,
    save_split,
    save_vocabulary,
    schema_hash,
    split_windows,
)
from .reports import (
    comparison_row,
    comparison_row_from_metrics_file,
    read_kv,
    save_comparison_figure,
    save_degree_rank_figure,
    write_comparison_table,
    write_degree_rank_csv,
    write_history_csv,
    write_kv,
    write_metrics_report,
)
from .trainer import TrainConfig, evaluate, train

MODEL_KINDS = ("gnn",) + BACKBONES


def _load_config_file(path: str | None) -> dict[str, str]:
    if not path:
        return {}
    return read_kv(path)


def _cfg_get(cfg: dict[str, str], key: str, default, cast):
    if key in cfg and cfg[key] != "":
        return cast(cfg[key])
    return default


def _write_manifest(out_dir: Path, command: str, cfg: dict, seeds: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "version": __version__,
        "parameters": {k: str(v) for k, v in cfg.items()},
        "seeds": seeds,
        "artifact_dir": str(out_dir),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def _schema_from_config(cfg: dict[str, str]) -> CsvSchema:
    numeric = cfg.get("numeric_fields")
    fields = tuple(s.strip() for s in numeric.split(",")) if numeric else DEFAULT_SCHEMA.numeric_fields
    return CsvSchema(
        src_ip=cfg.get("col_src_ip", DEFAULT_SCHEMA.src_ip),
        dst_ip=cfg.get("col_dst_ip", DEFAULT_SCHEMA.dst_ip),
        src_port=cfg.get("col_src_port", DEFAULT_SCHEMA.src_port),
        dst_port=cfg.get("col_dst_port", DEFAULT_SCHEMA.dst_port),
        protocol=cfg.get("col_protocol", DEFAULT_SCHEMA.protocol),
        start_time=cfg.get("col_start_time", DEFAULT_SCHEMA.start_time),
        numeric_fields=fields,
    )


def cmd_synth(args) -> int:
    cfg = _load_config_file(args.config)
    mix_text = cfg.get("service_port_mix", "")
    if mix_text:
        mix = tuple(
            (int(p.split(":")[0]), float(p.split(":")[1])) for p in mix_text.split(",")
        )
    else:
        mix = TraceConfig(n_flows=1).service_port_mix
    trace_cfg = TraceConfig(
        n_flows=args.flows if args.flows is not None else _cfg_get(cfg, "n_flows", 51200, int),
        n_heavy_ips=_cfg_get(cfg, "n_heavy_ips", 4, int),
        n_background_ips=_cfg_get(cfg, "n_background_ips", 8, int),
        service_port_mix=mix,
        heavy_talker_weight=_cfg_get(cfg, "heavy_talker_weight", 0.8, float),
        seed=args.seed if args.seed is not None else _cfg_get(cfg, "seed", 0, int),
    )
    out = Path(args.out)
    _write_manifest(out.parent if out.suffix else out, "synth", vars(trace_cfg) | {"out": str(out)}, {"trace": trace_cfg.seed})
    records = generate_synthetic_trace(trace_cfg)
    write_flow_csv(records, out)
    print(f"wrote {len(records)} flows to {out}")
    return 0


def cmd_windows(args) -> int:
    cfg = _load_config_file(args.config)
    schema = _schema_from_config(cfg)
    out = Path(args.out)
    length = args.length
    split_seed = args.split_seed
    _write_manifest(out, "windows", {"flows": args.flows, "length": length, "stride": args.stride,
                                     "split_seed": split_seed, "d_place": args.d_place}, {"split": split_seed})
    records = sort_by_start(parse_flow_csv(args.flows, schema))
    windows = make_windows(records, length=length, stride=args.stride)
    if not windows:
        print("no full windows in input", file=sys.stderr)
        return 3
    split = split_windows(windows, seed=split_seed)
    vocab = build_ip_vocabulary([windows[i] for i in split.indices("train")])
    graphs = [build_graph(w, vocab, DEFAULT_OHE, d_place=args.d_place) for w in windows]
    save_graph_cache(graphs, out / "graphs")
    save_split(split, out / "splits.csv")
    save_vocabulary(vocab, out / "vocab.csv")
    write_flow_csv(records[: len(windows) * length], out / "flows.csv", schema)
    write_kv(
        {
            "length": length,
            "stride": args.stride,
            "d_place": args.d_place,
            "split_seed": split_seed,
            "n_numeric": len(schema.numeric_fields),
            "n_windows": len(windows),
            "numeric_fields": ",".join(schema.numeric_fields),
        },
        out / "meta.txt",
    )
    print(f"cached {len(graphs)} graphs ({len(vocab)} vocabulary ids) under {out}")
    return 0


@dataclass
class Dataset:
    meta: dict[str, str]
    examples: dict[str, list[ForecastExample]]
    vocab_size: int
    n_numeric: int
    length: int
    d_place: int


def load_dataset(data_dir) -> Dataset:
    data = Path(data_dir)
    meta = read_kv(data / "meta.txt")
    length = int(meta["length"])
    n_numeric = int(meta["n_numeric"])
    schema = CsvSchema(numeric_fields=tuple(meta["numeric_fields"].split(",")))
    vocab = load_vocabulary(data / "vocab.csv")
    split = load_split(data / "splits.csv")
    graphs = load_graph_cache(data / "graphs")
    records = parse_flow_csv(data / "flows.csv", schema)
    windows = make_windows(records, length=length, stride=int(meta["stride"]))
    examples = make_examples(graphs, windows)
    routed: dict[str, list[ForecastExample]] = {"train": [], "val": [], "test": []}
    for ex in examples:
        # A pair belongs to the split of the window it forecasts from.
        routed[split.labels[ex.pair.current.window_index]].append(ex)
    return Dataset(
        meta=meta,
        examples=routed,
        vocab_size=len(vocab),
        n_numeric=n_numeric,
        length=length,
        d_place=int(meta["d_place"]),
    )


_GNN_FIELDS = {
    "hidden_dim": int, "latent_dim": int, "n_layers": int, "mask_ratio": float,
    "edge_drop_p": float, "alpha": float, "dropout_p": float, "learning_rate": float,
}
_BASELINE_FIELDS = {
    "d_oct": int, "d_cat": int, "hidden_dim": int, "kernel": int,
    "mask_ratio": float, "alpha": float, "dropout_p": float, "learning_rate": float,
}


def build_model(kind: str, ds: Dataset, cfg: dict, seed: int):
    if kind == "gnn":
        fields = {k: cast(cfg[k]) if k in cfg else getattr(GnnHyper(), k) for k, cast in _GNN_FIELDS.items()}
        return GnnModel(ds.n_numeric + 4, ds.vocab_size, GnnHyper(**fields), d_place=ds.d_place, seed=seed)
    fields = {k: cast(cfg[k]) if k in cfg else getattr(BaselineHyper(), k) for k, cast in _BASELINE_FIELDS.items()}
    return BaselineModel(kind, ds.n_numeric, ds.vocab_size, ds.length, BaselineHyper(**fields), seed=seed)


def _train_config(cfg: dict, kind: str, seed: int) -> TrainConfig:
    default_accum = 2 if kind == "gnn" else 1
    return TrainConfig(
        epochs=int(cfg.get("epochs", 75)),
        batch_size=int(cfg.get("batch_size", 64)),
        grad_accumulation=int(cfg.get("grad_accumulation", default_accum)),
        seed=seed,
    )


def cmd_train(args) -> int:
    cfg = _load_config_file(args.config)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    out = Path(args.out)
    _write_manifest(out, "train", {"model": args.model, "data": args.data, **cfg}, {"train": seed})
    ds = load_dataset(args.data)
    model = build_model(args.model, ds, cfg, seed)
    tc = _train_config(cfg, args.model, seed)
    result = train(model, ds.examples["train"], ds.examples["val"], tc)
    save_checkpoint(result.best_state, out / "checkpoint.bin")
    sidecar = model.sidecar_config()
    sidecar["schema_hash"] = schema_hash(DEFAULT_OHE, ds.n_numeric)
    sidecar["best_val_compscore"] = repr(result.best_score)
    sidecar["best_epoch"] = str(result.best_epoch)
    write_kv(sidecar, out / "model.txt")
    write_history_csv(result.history, out / "history.csv")
    print(f"trained {args.model} for {len(result.history)} epochs; "
          f"best val compound score {result.best_score:.4f} at epoch {result.best_epoch}")
    return 0


def _model_from_run(run_dir: Path, ds: Dataset):
    sidecar = read_kv(run_dir / "model.txt")
    kind = sidecar["kind"]
    model = build_model(kind, ds, sidecar, seed=int(sidecar.get("seed", 0)))
    model.load_state_arrays(load_checkpoint(run_dir / "checkpoint.bin"))
    return kind, model


def cmd_eval(args) -> int:
    out = Path(args.out)
    _write_manifest(out, "eval", {"run": args.run, "data": args.data, "split": args.split}, {})
    ds = load_dataset(args.data)
    kind, model = _model_from_run(Path(args.run), ds)
    examples = ds.examples[args.split]
    if not examples:
        print(f"split {args.split!r} has no forecast pairs", file=sys.stderr)
        return 3
    report = evaluate(model, examples)
    write_metrics_report(report, out / "metrics.txt", model=kind)
    write_degree_rank_csv(report.ip_degree, out / "degree_rank_ip.csv")
    write_degree_rank_csv(report.port_degree, out / "degree_rank_port.csv")
    save_degree_rank_figure(report.ip_degree, report.port_degree, out / "degree_rank.png")
    print(f"{kind}: mae={report.mae:.4f} acc={report.macro_accuracy:.4f} "
          f"auroc={report.macro_auroc:.4f} compound={report.compound_score:.4f}")
    return 0


def cmd_tune(args) -> int:
    cfg = _load_config_file(args.config)
    out = Path(args.out)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 42))
    _write_manifest(out, "tune", {"model": args.model, "data": args.data, "trials": args.trials, **cfg}, {"tpe": seed})
    ds = load_dataset(args.data)
    space = default_search_space(args.model)
    epochs = int(cfg.get("epochs", 75))
    sha = ShaConfig()
    tpe = TpeConfig(seed=seed)

    def objective(params, budget, report):
        model = build_model(args.model, ds, {**cfg, **{k: str(v) for k, v in params.items()}}, seed)
        tc = _train_config({**cfg, "epochs": budget}, args.model, seed)
        result = train(model, ds.examples["train"], ds.examples["val"], tc, rung_callback=report)
        return result.best_score

    study = run_study(
        objective, space, args.trials, sha=sha, tpe=tpe, max_epochs=epochs,
        journal_path=out / "journal.csv", parallel=args.parallel,
    )
    if study.best is None:
        print("no trial completed", file=sys.stderr)
        return 4
    best_cfg = {k: repr(v) if not isinstance(v, str) else v for k, v in study.best.params.items()}
    best_cfg["best_score"] = repr(study.best.final_score)
    best_cfg["trial_id"] = str(study.best.trial_id)
    write_kv(best_cfg, out / "best_config.txt")
    print(f"best trial {study.best.trial_id}: score {study.best.final_score:.4f}")
    return 0


def cmd_report(args) -> int:
    rows = []
    for item in args.runs.split(","):
        p = Path(item)
        metrics = p if p.is_file() else (p / "metrics.txt")
        if not metrics.exists():
            raise FileNotFoundError(f"no metrics.txt under {p}")
        rows.append(comparison_row_from_metrics_file(metrics))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_comparison_table(rows, out)
    save_comparison_figure(rows, out.with_suffix(".png"))
    print(f"wrote {out} and {out.with_suffix('.png')} ({len(rows)} models)")
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowcast", description=__doc__)
    parser.add_argument("--version", action="version", version=f"flowcast {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic flow trace")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--flows", type=int, help="number of flows")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("windows", help="preprocess flows into cached window graphs")
    p.add_argument("--flows", required=True, help="input flow CSV")
    p.add_argument("--out", required=True, help="dataset directory")
    p.add_argument("--length", type=int, default=512)
    p.add_argument("--stride", type=int, default=512)
    p.add_argument("--split-seed", dest="split_seed", type=int, default=0)
    p.add_argument("--d-place", dest="d_place", type=int, default=8)
    p.add_argument("--config", help="schema mapping config")
    p.set_defaults(func=cmd_windows)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--model", required=True, choices=MODEL_KINDS)
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="hyperparameter config file")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("tune", help="run a hyperparameter study")
    p.add_argument("--model", required=True, choices=MODEL_KINDS)
    p.add_argument("--data", required=True)
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--parallel", type=int, default=1)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("eval", help="evaluate a trained run on a split")
    p.add_argument("--run", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="aggregate evaluation reports into a comparison table")
    p.add_argument("--runs", required=True, help="comma-separated report dirs or metrics files")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, MissingColumnError, MalformedRowError, CorruptError,
            VersionMismatchError, TooFewWindowsError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, KeyError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (DivergedError, FlowcastError, OSError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
