"""Command-line pipeline: convert, analyze, sweep, realize, train, compare,
heatmap, plus a dataset generator.

Every command takes explicit seeds (no wall-clock defaults), writes its data
files with fixed 17-significant-digit formatting so reruns are byte
identical, and drops one run manifest next to its outputs. Exit codes: 0 on
success, 2 for invalid inputs or usage, 1 for runtime failures such as
divergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .arch import SpecError, load_spec
from .data import load_dataset, make_images, save_images_csv
from .graph import GraphError, from_architecture, load_edge_list, save_edge_list, validate
from .metrics import BaselineConfig, MetricError, small_worldness
from .netgen import NetgenError, load_swnet, realize, save_swnet
from .rewire import (
    RewireError,
    default_p_grid,
    select_swn,
    sweep,
    write_provenance,
    write_sweep_csv,
)
from .trainer import (
    DivergenceError,
    TrainConfig,
    TrainerError,
    TrainReport,
    compare,
    load_params,
    save_heatmap_csv,
    save_params,
    train,
    weight_heatmap,
)

USAGE_ERROR = 2
RUNTIME_ERROR = 1


def _fail(message: str, code: int = USAGE_ERROR) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _digest(payload) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _write_manifest(out_dir: Path, command: str, inputs, outputs, seed, config, started: float) -> None:
    manifest = {
        "command": command,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "seed": seed,
        "config_digest": _digest(config),
        "tool_version": __version__,
        "duration_seconds": round(time.monotonic() - started, 3),
    }
    with open(out_dir / f"{command}.manifest.json", "w") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_convert(args) -> int:
    started = time.monotonic()
    out = _out_dir(args)
    try:
        spec = load_spec(args.arch)
    except (SpecError, OSError) as exc:
        return _fail(str(exc))
    graph = from_architecture(spec)
    dest = out / "graph.edges"
    save_edge_list(graph, dest)
    print(f"nodes={graph.n_nodes} edges={graph.n_edges} layers={graph.layer_count}")
    _write_manifest(out, "convert", [args.arch], [dest], None, {"arch": str(args.arch)}, started)
    return 0


def cmd_analyze(args) -> int:
    started = time.monotonic()
    out = _out_dir(args)
    try:
        graph = load_edge_list(args.graph)
        problems = validate(graph)
        if problems:
            return _fail(f"{args.graph}: " + "; ".join(str(p) for p in problems))
        baseline = BaselineConfig.parse(args.baseline, seed=args.seed)
        metrics = small_worldness(graph, baseline)
    except (GraphError, MetricError, OSError) as exc:
        return _fail(str(exc))
    dest = out / "metrics.json"
    with open(dest, "w") as f:
        f.write(metrics.to_json(baseline=baseline.describe()))
        f.write("\n")
    for key, value in metrics.to_dict().items():
        print(f"{key}={value}")
    _write_manifest(out, "analyze", [args.graph], [dest], args.seed,
                    {"baseline": args.baseline}, started)
    return 0


def _parse_p_grid(text: str | None):
    if text is None:
        return default_p_grid()
    try:
        values = tuple(float(tok) for tok in text.replace(",", " ").split())
    except ValueError:
        raise RewireError(f"cannot parse p grid {text!r}")
    if not values:
        raise RewireError("empty p grid")
    return values


def cmd_sweep(args) -> int:
    started = time.monotonic()
    out = _out_dir(args)
    try:
        graph = load_edge_list(args.graph)
        problems = validate(graph)
        if problems:
            return _fail(f"{args.graph}: " + "; ".join(str(p) for p in problems))
        p_grid = _parse_p_grid(args.p_grid)
        baseline = BaselineConfig.parse(args.baseline, seed=args.seed)
        result = sweep(graph, p_grid, args.seed, baseline, replicates=args.replicates)
        selected = select_swn(result)
    except (GraphError, MetricError, RewireError, OSError) as exc:
        return _fail(str(exc), RUNTIME_ERROR if isinstance(exc, RewireError) else USAGE_ERROR)
    csv_path = out / "sweep.csv"
    topo_path = out / "selected.edges"
    prov_path = out / "selected.provenance"
    write_sweep_csv(result, csv_path)
    save_edge_list(selected.graph, topo_path)
    write_provenance(selected, prov_path)
    point = result.selected_point
    print(f"selected p={point.p:.17g} S={point.metrics.s_g:.17g} index={point.index}")
    _write_manifest(out, "sweep", [args.graph], [csv_path, topo_path, prov_path], args.seed,
                    {"p_grid": args.p_grid, "baseline": args.baseline, "replicates": args.replicates},
                    started)
    return 0


def cmd_realize(args) -> int:
    started = time.monotonic()
    out = _out_dir(args)
    try:
        graph = load_edge_list(args.topology)
        spec = load_spec(args.arch)
        swnet = realize(graph, spec)
    except (GraphError, SpecError, NetgenError, OSError) as exc:
        return _fail(str(exc))
    dest = out / "swnet.json"
    save_swnet(swnet, dest)
    long_range = sum(1 for c in swnet.connections if not c.is_consecutive)
    print(f"connections={len(swnet.connections)} long_range={long_range}")
    _write_manifest(out, "realize", [args.topology, args.arch], [dest], None, {}, started)
    return 0


def cmd_train(args) -> int:
    started = time.monotonic()
    out = _out_dir(args)
    try:
        spec = load_swnet(args.swnet)
        dataset = load_dataset(args.train_data, args.test_data)
    except (NetgenError, SpecError, OSError, ValueError) as exc:
        return _fail(str(exc))
    overrides = {}
    if args.config:
        try:
            with open(args.config) as f:
                overrides = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            return _fail(f"{args.config}: {exc}")
    overrides.setdefault("learning_rate", 0.05)
    overrides.setdefault("max_iterations", 2048)
    overrides["seed"] = args.seed
    try:
        config = TrainConfig.from_dict(overrides)
    except (TrainerError, TypeError) as exc:
        return _fail(f"bad training config: {exc}")

    csv_path = out / "report.csv"
    json_path = out / "report.json"
    heat_path = out / "heatmap.csv"
    params_path = out / "params.npz"
    try:
        report = train(spec, config, dataset)
    except TrainerError as exc:
        return _fail(str(exc))
    except DivergenceError as exc:
        exc.report.save_csv(csv_path)
        exc.report.save_json(json_path)
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR
    report.save_csv(csv_path)
    report.save_json(json_path)
    save_heatmap_csv(weight_heatmap(report.trained_params, spec), heat_path)
    save_params(report.trained_params, params_path)
    for t in sorted(report.iterations_to_threshold):
        it = report.iterations_to_threshold[t]
        print(f"accuracy {t:.0%}: " + (f"iteration {it}" if it is not None else "not reached"))
    print(f"final_accuracy={report.final_accuracy:.17g}")
    _write_manifest(out, "train", [args.swnet, args.train_data, args.test_data],
                    [csv_path, json_path, heat_path, params_path], args.seed,
                    config.to_dict(), started)
    return 0


def cmd_compare(args) -> int:
    started = time.monotonic()
    out = _out_dir(args)
    if len(args.reports) < 2:
        return _fail("compare needs at least two report files")
    try:
        reports = [TrainReport.load_json(p) for p in args.reports]
        table = compare(reports, baseline_index=args.baseline_index)
    except (TrainerError, OSError, KeyError, json.JSONDecodeError) as exc:
        return _fail(str(exc))
    labels = [Path(p).parent.name or Path(p).stem for p in args.reports]
    print(table.render(labels))
    dest = out / "speedup.csv"
    table.save_csv(dest, labels)
    _write_manifest(out, "compare", list(args.reports), [dest], None,
                    {"baseline_index": args.baseline_index}, started)
    return 0


def cmd_heatmap(args) -> int:
    started = time.monotonic()
    out = _out_dir(args)
    try:
        spec = load_swnet(args.swnet)
        params = load_params(args.params)
        heat = weight_heatmap(params, spec)
    except (NetgenError, SpecError, OSError, KeyError) as exc:
        return _fail(str(exc))
    dest = out / "heatmap.csv"
    save_heatmap_csv(heat, dest)
    nonzero = int(np.count_nonzero(heat))
    print(f"layer_pairs={heat.shape[0]}x{heat.shape[1]} connected={nonzero}")
    _write_manifest(out, "heatmap", [args.swnet, args.params], [dest], None, {}, started)
    return 0


def cmd_dataset(args) -> int:
    started = time.monotonic()
    out = _out_dir(args)
    kwargs = dict(
        image_size=args.image_size, channels=args.channels,
        noise=args.noise, max_shift=args.max_shift, scale_jitter=args.scale_jitter,
    )
    x_train, y_train = make_images(args.train, seed=(args.seed, 0), **kwargs)
    x_test, y_test = make_images(args.test, seed=(args.seed, 1), **kwargs)
    train_path = out / "train.csv"
    test_path = out / "test.csv"
    save_images_csv(x_train, y_train, train_path)
    save_images_csv(x_test, y_test, test_path)
    print(f"train={args.train} test={args.test} shape=({args.channels},{args.image_size},{args.image_size})")
    _write_manifest(out, "dataset", [], [train_path, test_path], args.seed, kwargs, started)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="swnet", description=__doc__)
    parser.add_argument("--version", action="version", version=f"swnet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="architecture JSON -> channel graph edge list")
    p.add_argument("arch")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("analyze", help="small-world metrics of a graph file")
    p.add_argument("graph")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--baseline", default="mc:50", help="mc:<n> or analytic")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("sweep", help="rewiring probability sweep and max-score selection")
    p.add_argument("graph")
    p.add_argument("--p-grid", dest="p_grid", default=None,
                   help="space- or comma-separated probabilities (default: 0 plus 32 log-spaced)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--baseline", default="mc:50")
    p.add_argument("--replicates", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("realize", help="topology edge list + architecture -> sparse network JSON")
    p.add_argument("topology")
    p.add_argument("arch")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_realize)

    p = sub.add_parser("train", help="train a sparse network on a CSV dataset")
    p.add_argument("swnet")
    p.add_argument("train_data")
    p.add_argument("test_data")
    p.add_argument("--config", default=None, help="JSON with TrainConfig fields")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compare", help="speedup table from two or more report JSONs")
    p.add_argument("reports", nargs="+")
    p.add_argument("--baseline", dest="baseline_index", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("heatmap", help="layer-pair weight heatmap from saved params")
    p.add_argument("params")
    p.add_argument("swnet")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("dataset", help="generate the synthetic digit dataset")
    p.add_argument("--train", type=int, default=4096)
    p.add_argument("--test", type=int, default=1024)
    p.add_argument("--image-size", dest="image_size", type=int, default=16)
    p.add_argument("--channels", type=int, default=3)
    p.add_argument("--noise", type=float, default=0.35)
    p.add_argument("--max-shift", dest="max_shift", type=int, default=2)
    p.add_argument("--scale-jitter", dest="scale_jitter", action="store_true")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dataset)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
