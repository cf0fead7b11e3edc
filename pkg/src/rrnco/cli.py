"""Operator surface: ingest, gen, train, eval, solve, bench, curves."""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import baselines, envs, ingest, train as training
from . import model as policy
from .geo import (BaseMapFormatError, GeoPoint, read_basemap, write_basemap)
from .instances import (RoutingInstance, make_instance, read_dataset,
                        write_dataset)

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2


class UsageError(ValueError):
    pass


def resolve_threads(value) -> int:
    """--threads flag, RRNCO_THREADS fallback, default 1."""
    if value is not None:
        return max(1, int(value))
    env = os.environ.get("RRNCO_THREADS")
    return max(1, int(env)) if env else 1


def _load_points(path: Path) -> list[GeoPoint]:
    doc = json.loads(path.read_text())
    if not isinstance(doc, list):
        raise UsageError("points file must be a JSON array of [lat, lon] pairs")
    return [GeoPoint(float(lat), float(lon)) for lat, lon in doc]


def cmd_ingest(args) -> int:
    if (args.synthetic is None) == (args.points is None):
        raise UsageError("ingest needs exactly one of --synthetic N or --points FILE")
    if args.synthetic is not None:
        cfg = ingest.SynthConfig(n=args.synthetic, seed=args.seed,
                                 asymmetry=args.asymmetry,
                                 detour_factor=args.detour, speed_kmh=args.speed)
        bmap = ingest.synth_basemap(cfg)
    else:
        if not args.osrm:
            raise UsageError("--points requires --osrm URL")
        points = _load_points(Path(args.points))
        ep = ingest.OsrmEndpoint(base_url=args.osrm,
                                 max_table_size=args.max_table_size,
                                 timeout_s=args.timeout)
        transport = ingest.FixtureTransport(args.fixtures) if args.fixtures else None
        raw_dist, raw_dur = ingest.osrm_table_fetch(points, ep, transport=transport)
        coords = np.array([[p.lat, p.lon] for p in points])
        bmap = ingest.normalize_basemap(raw_dist, raw_dur, coords,
                                        name=args.name or Path(args.points).stem)
    if args.name:
        bmap.name = args.name
    write_basemap(bmap, args.out)
    print(f"wrote {args.out}: n_tot={bmap.n_tot} "
          f"dist_scale={bmap.dist_scale:.6g} m/unit dur_scale={bmap.dur_scale:.6g} s/unit")
    return EXIT_OK


def cmd_gen(args) -> int:
    bmap = read_basemap(args.map)
    t0 = time.perf_counter()
    instances = [make_instance(bmap, args.task, args.n, sampler=args.sampler,
                               seed=args.seed + i, n_clusters=args.clusters)
                 for i in range(args.count)]
    gen_s = time.perf_counter() - t0
    t0 = time.perf_counter()
    write_dataset(instances, args.out)
    write_s = time.perf_counter() - t0
    print(f"wrote {args.count} instances of n={args.n} to {args.out} "
          f"(generate {gen_s:.3f}s, serialize {write_s:.3f}s)")
    return EXIT_OK


def _load_model(checkpoint: str | None, config_path: str | None):
    if not checkpoint:
        raise UsageError("model method requires --checkpoint")
    params = ad.load_params(checkpoint)
    if config_path is None:
        sibling = Path(checkpoint).parent / "model_config.json"
        if not sibling.exists():
            raise UsageError("no model config next to checkpoint; pass --model-config")
        config_path = sibling
    cfg = policy.ModelConfig.from_dict(json.loads(Path(config_path).read_text()))
    return params, cfg


def _solve_instance(inst: RoutingInstance, method: str, args) -> dict:
    if method == "model":
        if not args.checkpoint:
            raise UsageError("--method model requires --checkpoint")
        params, cfg = _load_model(args.checkpoint, args.model_config)
        n_starts = min(args.starts, inst.n if inst.task == "atsp" else inst.n - 1)
        insts = training.augment_instance(inst) if getattr(args, "augment", False) else [inst]
        best_cost, best_actions = np.inf, None
        for variant in insts:
            trajs = policy.rollout(variant, params, cfg, n_starts, mode="greedy")
            for t in trajs:
                if -t.reward < best_cost:
                    best_cost, best_actions = -t.reward, t.actions
        # re-validate against the untransformed instance (matrices are shared)
        cost = envs.route_cost(inst, best_actions)
        return {"actions": [int(a) for a in best_actions], "cost": cost, "feasible": True}
    if inst.task != "atsp":
        raise UsageError(f"method {method!r} only solves atsp instances")
    if method == "nn":
        tour = baselines.nearest_neighbor(inst.dist, start=0)
    elif method == "oropt":
        tour = baselines.or_opt_improve(baselines.nearest_neighbor(inst.dist, 0), inst.dist)
    elif method == "heldkarp":
        _, tour = baselines.held_karp_atsp(inst.dist)
    else:
        raise UsageError(f"unknown method {method!r}")
    return {"actions": [int(a) for a in tour],
            "cost": envs.route_cost(inst, tour), "feasible": True}


def cmd_solve(args) -> int:
    inst = read_dataset(args.instance)[0]
    print(json.dumps(_solve_instance(inst, args.method, args)))
    return EXIT_OK


def cmd_eval(args) -> int:
    instances = read_dataset(args.dataset)
    if not instances:
        raise UsageError("empty dataset")
    threads = resolve_threads(args.threads)

    def costs_for(method: str) -> np.ndarray:
        if method == "model":
            params, cfg = _load_model(args.checkpoint, args.model_config)
            n_starts = min(args.starts,
                           instances[0].n if instances[0].task == "atsp" else instances[0].n - 1)
            return training.greedy_eval(instances, params, cfg, n_starts,
                                        augment=args.augment, batch_size=args.batch_size)
        if threads > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=threads) as pool:
                return np.array(list(pool.map(
                    lambda i: _solve_instance(i, method, args)["cost"], instances)))
        return np.array([_solve_instance(i, method, args)["cost"] for i in instances])

    t0 = time.perf_counter()
    costs = costs_for(args.method)
    wall = time.perf_counter() - t0
    report = {
        "task": instances[0].task,
        "dataset": str(args.dataset),
        "method": args.method,
        "reference": args.reference,
        "n_instances": len(instances),
        "cost": float(costs.mean()),
        "gap_pct": None,
        "time_s": wall,
        "per_instance": [{"cost": float(c)} for c in costs],
    }
    if args.reference != "none":
        ref_costs = costs_for(args.reference)
        gaps = (costs - ref_costs) / ref_costs * 100.0
        report["ref_cost"] = float(ref_costs.mean())
        report["gap_pct"] = float(gaps.mean())
        for row, rc, gap in zip(report["per_instance"], ref_costs, gaps):
            row["ref_cost"] = float(rc)
            row["gap_pct"] = float(gap)
    text = json.dumps(report, indent=2)
    if args.report:
        Path(args.report).write_text(text)
    print(text)
    if args.csv:
        lines = ["index,cost,ref_cost,gap_pct"]
        for i, row in enumerate(report["per_instance"]):
            lines.append(f"{i},{row['cost']},{row.get('ref_cost', '')},{row.get('gap_pct', '')}")
        Path(args.csv).write_text("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_train(args) -> int:
    maps = sorted(Path(args.maps).glob("*.rrnc"))
    if not maps:
        raise UsageError(f"no *.rrnc base maps under {args.maps}")
    basemaps = [read_basemap(p) for p in maps]
    val_maps = None
    if args.val_maps:
        val_paths = sorted(Path(args.val_maps).glob("*.rrnc"))
        if not val_paths:
            raise UsageError(f"no *.rrnc base maps under {args.val_maps}")
        val_maps = [read_basemap(p) for p in val_paths]
    doc = json.loads(Path(args.config).read_text()) if args.config else {}
    model_cfg = policy.ModelConfig.from_dict(doc.get("model", {}))
    train_cfg = training.TrainConfig.from_dict({"task": args.task, **doc.get("train", {})})
    params = ad.load_params(args.init) if args.init else \
        policy.init_params(model_cfg, train_cfg.task, seed=train_cfg.seed)
    result = training.train(basemaps, params, model_cfg, train_cfg, args.out,
                            val_basemaps=val_maps)
    print(f"trained {train_cfg.epochs} epochs; best val cost "
          f"{result.best_val_cost:.4f}; run dir {result.out_dir}")
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.suite != "desk":
        raise UsageError(f"unknown suite {args.suite!r}")
    target = Path.cwd() / "tests" / "test_acceptance.py"
    if not target.exists():
        raise UsageError(f"acceptance suite not found at {target}")
    import subprocess

    proc = subprocess.run([sys.executable, "-m", "pytest", "-v", "-s", str(target)],
                          check=False)
    return proc.returncode


def cmd_curves(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = [json.loads(line) for line in Path(args.metrics).read_text().splitlines() if line]
    if not rows:
        raise UsageError("empty metrics log")
    epochs = [r["epoch"] for r in rows]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(epochs, [r["mean_cost"] for r in rows], label="train cost")
    if "val_cost" in rows[0]:
        ax.plot(epochs, [r["val_cost"] for r in rows], label="val cost")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean cost")
    ax2 = ax.twinx()
    ax2.plot(epochs, [r["lr"] for r in rows], color="gray", linestyle=":", label="lr")
    ax2.set_ylabel("lr")
    ax2.set_yscale("log")
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(args.out, format="svg")
    print(f"wrote {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rrnco",
                                description="asymmetric routing data + neural solver toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("ingest", help="build a base-map container")
    q.add_argument("--points", help="JSON file: array of [lat, lon]")
    q.add_argument("--osrm", help="table-service base URL")
    q.add_argument("--fixtures", help="directory of recorded request fixtures")
    q.add_argument("--synthetic", type=int, help="generate a synthetic city of N points")
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--asymmetry", type=float, default=0.5)
    q.add_argument("--detour", type=float, default=1.3)
    q.add_argument("--speed", type=float, default=30.0)
    q.add_argument("--max-table-size", type=int, default=500)
    q.add_argument("--timeout", type=float, default=30.0)
    q.add_argument("--name", default=None)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_ingest)

    q = sub.add_parser("gen", help="subsample a dataset of instances")
    q.add_argument("--map", required=True)
    q.add_argument("--task", required=True, choices=["atsp", "acvrp", "acvrptw"])
    q.add_argument("--n", type=int, default=100)
    q.add_argument("--count", type=int, default=1)
    q.add_argument("--sampler", choices=["uniform", "cluster"], default="uniform")
    q.add_argument("--clusters", type=int, default=4)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_gen)

    q = sub.add_parser("train", help="train the policy")
    q.add_argument("--task", required=True, choices=["atsp", "acvrp", "acvrptw"])
    q.add_argument("--maps", required=True, help="directory of *.rrnc base maps")
    q.add_argument("--val-maps", help="held-out base maps for validation")
    q.add_argument("--config", help="JSON {\"model\": {...}, \"train\": {...}}")
    q.add_argument("--init", help="initial checkpoint")
    q.add_argument("--out", required=True, help="run directory")
    q.set_defaults(func=cmd_train)

    q = sub.add_parser("eval", help="evaluate a method over a dataset")
    q.add_argument("--dataset", required=True)
    q.add_argument("--method", choices=["model", "nn", "oropt", "heldkarp"], default="model")
    q.add_argument("--checkpoint")
    q.add_argument("--model-config")
    q.add_argument("--starts", type=int, default=8)
    q.add_argument("--augment", action="store_true")
    q.add_argument("--batch-size", type=int, default=32)
    q.add_argument("--reference", choices=["none", "nn", "oropt", "heldkarp"], default="none")
    q.add_argument("--report")
    q.add_argument("--csv")
    q.add_argument("--threads", type=int, default=None)
    q.set_defaults(func=cmd_eval)

    q = sub.add_parser("solve", help="solve one instance, print a solution JSON")
    q.add_argument("--method", required=True, choices=["nn", "oropt", "heldkarp", "model"])
    q.add_argument("--instance", required=True)
    q.add_argument("--checkpoint")
    q.add_argument("--model-config")
    q.add_argument("--starts", type=int, default=8)
    q.set_defaults(func=cmd_solve)

    q = sub.add_parser("bench", help="run the acceptance suite")
    q.add_argument("--suite", default="desk")
    q.set_defaults(func=cmd_bench)

    q = sub.add_parser("curves", help="emit an SVG training curve from a metrics log")
    q.add_argument("--metrics", required=True)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_curves)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, FileNotFoundError, IsADirectoryError, NotADirectoryError,
            BaseMapFormatError, ingest.OsrmError, json.JSONDecodeError, ValueError,
            KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - anything else is an internal failure
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
