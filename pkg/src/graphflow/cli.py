"""Command-line entry point: dataset generation, training, sampling,
evaluation, and (lambda, chi) sweeps, all reproducible from their manifests.

Subcommands: dataset gen, train, sample, eval, sweep. Configuration files
are JSON; command-line flags override file values, and the effective merged
configuration is what each run's manifest records.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from . import __version__
from .datasets import DatasetSpec, DatasetSplit, generate, preset, read_manifest, write_manifest
from .encodings import EncodingConfig
from .errors import CheckpointError, ConfigurationError
from .evaluation import MetricConfig, avg_ratio, vun
from .flow import NoiseDistribution, RatePolicy
from .graphs import read_graphs, write_graphs
from .model import ModelConfig, load_checkpoint
from .rng import stream
from .training import (
    PermutationSchedule,
    TrainConfig,
    code_hash,
    expected_model_config,
    sample_graphs,
    train,
)

__all__ = ["main", "cmd_dataset", "cmd_train", "cmd_sample", "cmd_eval", "cmd_sweep"]


def _load_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _dump_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _infer_classes(split: DatasetSplit) -> tuple[int, int]:
    x = max(int(g.node_labels.max(initial=0)) for g in split.all_graphs()) + 1
    e = max(int(g.edge_labels.max(initial=0)) for g in split.all_graphs()) + 1
    return max(x, 1), max(e, 2)


def _load_dataset_dir(dataset_dir: Path) -> tuple[DatasetSplit, DatasetSpec]:
    for name in ("train.jsonl", "val.jsonl", "test.jsonl", "manifest.json"):
        if not (dataset_dir / name).exists():
            raise ConfigurationError(f"dataset directory is missing {name}: {dataset_dir}")
    split = DatasetSplit(
        train=read_graphs(dataset_dir / "train.jsonl"),
        val=read_graphs(dataset_dir / "val.jsonl"),
        test=read_graphs(dataset_dir / "test.jsonl"),
    )
    return split, read_manifest(dataset_dir / "manifest.json")


# ---------------------------------------------------------------------------
# dataset gen
# ---------------------------------------------------------------------------


def cmd_dataset(args) -> int:
    if args.preset:
        spec = preset(args.preset)
    else:
        spec = DatasetSpec.from_json(_load_json(args.spec))
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    split = generate(spec)
    write_graphs(out / "train.jsonl", split.train)
    write_graphs(out / "val.jsonl", split.val)
    write_graphs(out / "test.jsonl", split.test)
    write_manifest(spec, out / "manifest.json")
    # validate declared outputs
    reread, _ = _load_dataset_dir(out)
    if (len(reread.train), len(reread.val), len(reread.test)) != (
        len(split.train), len(split.val), len(split.test)
    ):
        raise RuntimeError("dataset output validation failed")
    print(f"wrote {len(split.train)}/{len(split.val)}/{len(split.test)} graphs to {out}")
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _train_setup(config_obj: dict, seed_override: int | None):
    """Extract (train_cfg, model_section, dataset_dir) from a config file or
    a train manifest (rerunning a manifest reproduces the run)."""
    if config_obj.get("kind") == "train-manifest":
        config_obj = config_obj["config"]
        train_obj = config_obj["train"]
        model_obj = config_obj["model"]
        dataset_dir = config_obj.get("dataset_dir")
    else:
        train_obj = config_obj.get("train", {})
        model_obj = config_obj.get("model", {})
        dataset_dir = config_obj.get("dataset_dir")
    if dataset_dir is None:
        raise ConfigurationError("config must provide dataset_dir")
    run = TrainConfig.from_json(train_obj)
    if seed_override is not None:
        run = replace(run, seed=seed_override)
    return run, model_obj, Path(dataset_dir)


def _model_config(model_obj: dict, run: TrainConfig, x_cls: int, e_cls: int) -> ModelConfig:
    if "node_in_dim" in model_obj:
        return ModelConfig.from_json(model_obj)
    return expected_model_config(
        run,
        x_cls,
        e_cls,
        hidden_dim=int(model_obj.get("hidden_dim", 64)),
        num_layers=int(model_obj.get("num_layers", 3)),
        num_heads=int(model_obj.get("num_heads", 4)),
    )


def cmd_train(args) -> int:
    run, model_obj, dataset_dir = _train_setup(_load_json(args.config), args.seed)
    split, spec = _load_dataset_dir(dataset_dir)
    x_cls, e_cls = _infer_classes(split)
    model_cfg = _model_config(model_obj, run, x_cls, e_cls)
    result = train(
        run,
        split,
        model_cfg,
        Path(args.out),
        dataset_spec=spec,
        resume=args.resume,
        dataset_dir=str(dataset_dir),
        log=None if args.quiet else lambda msg: print(msg, flush=True),
    )
    # validate declared outputs
    json.load(open(result.manifest_path))
    if not result.csv_path.exists():
        raise RuntimeError("metrics CSV missing after training")
    print(f"run complete: {result.out_dir}")
    return 0


# ---------------------------------------------------------------------------
# sample
# ---------------------------------------------------------------------------


def cmd_sample(args) -> int:
    params, cfg, extra = load_checkpoint(args.checkpoint)
    policy = RatePolicy(omega=args.omega, eta=args.eta, distortion=args.distortion, steps=args.steps)
    if "encoding" not in extra or "noise" not in extra:
        raise CheckpointError("checkpoint lacks sampling metadata (encoding/noise)")
    enc_cfg = EncodingConfig.from_json(extra["encoding"])
    noise = NoiseDistribution(
        np.asarray(extra["noise"]["node"]), np.asarray(extra["noise"]["edge"])
    )
    if args.count == 0:
        Path(args.out).write_text("")
        print(f"wrote 0 graphs to {args.out}")
        return 0
    if args.nodes is not None:
        sizes = [args.nodes] * args.count
    elif args.size_file is not None:
        pool = np.array([g.num_nodes for g in read_graphs(args.size_file)])
        sizes = stream(args.seed, "sizes").choice(pool, size=args.count).tolist()
    else:
        raise ConfigurationError("need --nodes or --size-file to choose graph sizes")
    graphs = sample_graphs(params, cfg, enc_cfg, policy, noise, sizes, args.seed)
    write_graphs(args.out, graphs)
    if len(read_graphs(args.out)) != args.count:
        raise RuntimeError("sample output validation failed")
    print(f"wrote {args.count} graphs to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def cmd_eval(args) -> int:
    generated = read_graphs(args.generated)
    train_set = read_graphs(args.train)
    test_set = read_graphs(args.test)
    if args.dataset_manifest:
        spec = read_manifest(args.dataset_manifest)
    elif args.family:
        spec = preset(args.family)
    else:
        raise ConfigurationError("need --dataset-manifest or --family")
    metric_cfg = MetricConfig(strict_uniqueness=args.strict_uniqueness)
    report = vun(generated, train_set, spec, metric_cfg)
    ratio = avg_ratio(generated, train_set, test_set, metric_cfg)
    out = {
        "tool_version": __version__,
        "family": spec.to_json(),
        "metric_config": metric_cfg.to_json(),
        "vun": report.to_json(),
        "ratio": ratio.to_json(),
    }
    _dump_json(out, args.out)
    print(
        f"V {report.validity:.3f} U {report.uniqueness:.3f} N {report.novelty:.3f} "
        f"VUN {report.vun:.3f} avg_ratio {ratio.avg_ratio:.3f} -> {args.out}"
    )
    return 0


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------


def _sweep_cell(cell) -> dict:
    """Train one (lambda, schedule) cell; returns min UN over the budget."""
    (lam, sched_obj, base_train, model_obj, dataset_dir, out_dir) = cell
    run = TrainConfig.from_json(base_train)
    enc = replace(run.encoding, kind="sinusoidal", lam=float(lam))
    run = replace(run, encoding=enc, schedule=PermutationSchedule.from_json(sched_obj))
    split, spec = _load_dataset_dir(Path(dataset_dir))
    x_cls, e_cls = _infer_classes(split)
    model_cfg = _model_config(model_obj, run, x_cls, e_cls)
    result = train(run, split, model_cfg, Path(out_dir), dataset_spec=spec,
                   dataset_dir=str(dataset_dir))
    uns = [row["uniqueness"] * row["novelty"] for row in result.metrics]
    min_un = min(uns) if uns else float("nan")
    return {
        "lambda": lam,
        "schedule": run.schedule.label(),
        "min_un": min_un,
        "stable": bool(uns) and min_un >= 1.0,
        "run_dir": str(out_dir),
    }


def cmd_sweep(args) -> int:
    grid = _load_json(args.grid)
    lambdas = grid.get("lambdas", [])
    schedules = grid.get("schedules", [])
    if not lambdas or not schedules:
        raise ConfigurationError("sweep grid needs non-empty 'lambdas' and 'schedules'")
    base_train = dict(grid.get("train", {}))
    base_train.setdefault("encoding", {"kind": "sinusoidal", "d": 16, "lambda": 1.0})
    if "epochs" in grid:
        base_train["epochs"] = grid["epochs"]
    if args.seed is not None:
        base_train["seed"] = args.seed
    elif "seed" in grid:
        base_train["seed"] = grid["seed"]
    model_obj = grid.get("model", {})
    dataset_dir = grid.get("dataset_dir")
    if dataset_dir is None:
        raise ConfigurationError("sweep grid must provide dataset_dir")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cells = []
    for lam in lambdas:
        for sched_obj in schedules:
            label = PermutationSchedule.from_json(sched_obj).label()
            cell_dir = out / "cells" / f"lam{lam:g}_{label.replace(':', '_').replace('@', '_')}"
            cells.append((lam, sched_obj, base_train, model_obj, dataset_dir, str(cell_dir)))

    if args.jobs > 1:
        ctx = get_context("spawn")
        with ProcessPoolExecutor(max_workers=args.jobs, mp_context=ctx) as pool:
            results = list(pool.map(_sweep_cell, cells))
    else:
        results = [_sweep_cell(c) for c in cells]

    by_key = {(r["lambda"], r["schedule"]): r for r in results}
    sched_labels = [PermutationSchedule.from_json(s).label() for s in schedules]
    grid_path = out / "sweep_grid.csv"
    with open(grid_path, "w") as fh:
        fh.write("lambda," + ",".join(sched_labels) + "\n")
        for lam in lambdas:
            row = [f"{lam:g}"]
            for label in sched_labels:
                r = by_key[(lam, label)]
                tag = "stable" if r["stable"] else "broken"
                row.append(f"{tag}({r['min_un']:.3f})")
            fh.write(",".join(row) + "\n")
    cells_path = out / "cells.csv"
    with open(cells_path, "w") as fh:
        fh.write("lambda,schedule,min_un,label,run_dir\n")
        for r in results:
            tag = "stable" if r["stable"] else "broken"
            fh.write(f"{r['lambda']:g},{r['schedule']},{r['min_un']:.10g},{tag},{r['run_dir']}\n")
    _dump_json(
        {
            "kind": "sweep-manifest",
            "tool_version": __version__,
            "code_hash": code_hash(),
            "grid": grid,
            "outputs": {"grid_csv": grid_path.name, "cells_csv": cells_path.name},
        },
        out / "manifest.json",
    )
    print(f"sweep complete: {len(results)} cells -> {grid_path}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graphflow", description=__doc__)
    parser.add_argument("--version", action="version", version=f"graphflow {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_ds = sub.add_parser("dataset", help="dataset generation")
    ds_sub = p_ds.add_subparsers(dest="action", required=True)
    p_gen = ds_sub.add_parser("gen", help="generate a dataset from a spec file or preset")
    p_gen.add_argument("--spec", help="dataset spec JSON file")
    p_gen.add_argument("--preset", help="named preset (sbm-desk, planar64, tree64, er-20-80, ba64)")
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--seed", type=int, default=None)
    p_gen.set_defaults(func=cmd_dataset)

    p_tr = sub.add_parser("train", help="train from a config file or manifest")
    p_tr.add_argument("--config", required=True)
    p_tr.add_argument("--out", required=True)
    p_tr.add_argument("--seed", type=int, default=None)
    p_tr.add_argument("--resume", action="store_true")
    p_tr.add_argument("--quiet", action="store_true")
    p_tr.set_defaults(func=cmd_train)

    p_sa = sub.add_parser("sample", help="sample graphs from a checkpoint")
    p_sa.add_argument("--checkpoint", required=True)
    p_sa.add_argument("--count", type=int, required=True)
    p_sa.add_argument("--out", required=True)
    p_sa.add_argument("--omega", type=float, default=0.0)
    p_sa.add_argument("--eta", type=float, default=0.0)
    p_sa.add_argument("--distortion", default="identity")
    p_sa.add_argument("--steps", type=int, default=100)
    p_sa.add_argument("--seed", type=int, default=0)
    p_sa.add_argument("--nodes", type=int, default=None)
    p_sa.add_argument("--size-file", default=None)
    p_sa.set_defaults(func=cmd_sample)

    p_ev = sub.add_parser("eval", help="score generated graphs")
    p_ev.add_argument("--generated", required=True)
    p_ev.add_argument("--train", required=True)
    p_ev.add_argument("--test", required=True)
    p_ev.add_argument("--dataset-manifest", default=None)
    p_ev.add_argument("--family", default=None)
    p_ev.add_argument("--strict-uniqueness", action="store_true")
    p_ev.add_argument("--out", required=True)
    p_ev.set_defaults(func=cmd_eval)

    p_sw = sub.add_parser("sweep", help="train a (lambda, chi) grid")
    p_sw.add_argument("--grid", required=True)
    p_sw.add_argument("--out", required=True)
    p_sw.add_argument("--jobs", type=int, default=1)
    p_sw.add_argument("--seed", type=int, default=None)
    p_sw.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
