"""``python -m regimescope {train,sweep,diagnose,compare}``.

Output layout: ``<out>/<config-hash>/<cell>/<seed>/`` holding ``trace.csv``,
``ckpt.bin`` and ``summary.json``; single runs use the cell name ``single``.
Each hash directory also carries a ``manifest.json``.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, figures
from .config import RunConfig, load_config, with_seed
from .diffcore import ConfigurationError, HvpOracle, NonFiniteError, load_checkpoint
from .landscape import (
    hessian_trace,
    mode_connectivity,
    negative_mass,
    pl_exponent,
    slq_density,
    surface_slice,
    top_eigs,
)
from .regime import (
    build_regime_map,
    cell_name,
    default_workers,
    is_complete,
    read_map_csv,
    relative_improvement,
    run_sweep,
)
from .training.recipe import build, train_full
from .training.trace import TrainingTrace, write_json

RUN_FILES = ("trace.csv", "ckpt.bin", "summary.json", "lambda_max.csv")


class CliError(Exception):
    pass


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _out_root(args, cfg: RunConfig) -> Path:
    return Path(args.out or cfg.output or "out")


def _load(args) -> tuple[RunConfig, str]:
    """Parse the config (before anything touches disk); the hash ignores ``--seed-override``."""
    cfg = load_config(args.config)
    digest = cfg.hash()
    if args.seed_override is not None:
        cfg = with_seed(cfg, args.seed_override)
    return cfg, digest


def _update_manifest(hash_dir: Path, digest: str, run_dirs) -> None:
    path = hash_dir / "manifest.json"
    manifest = json.loads(path.read_text()) if path.exists() else {"created": _now(), "runs": {}}
    manifest.update(config_hash=digest, tool_version=__version__, updated=_now())
    for run_dir in run_dirs:
        run_dir = Path(run_dir)
        summary_path = run_dir / "summary.json"
        if not summary_path.exists():
            continue
        summary = json.loads(summary_path.read_text())
        key = run_dir.relative_to(hash_dir).as_posix()
        entry = manifest["runs"].get(key, {"created": _now()})
        entry.update(
            status=summary.get("status"),
            artifacts=[f"{key}/{name}" for name in RUN_FILES if (run_dir / name).exists()],
        )
        manifest["runs"][key] = entry
    manifest["runs"] = dict(sorted(manifest["runs"].items()))
    write_json(path, manifest)


def cmd_train(args) -> int:
    cfg, digest = _load(args)
    recipe = cfg.recipe()
    hash_dir = _out_root(args, cfg) / digest
    run_dir = hash_dir / "single" / str(recipe.seed)
    if args.resume and (run_dir / "summary.json").exists():
        print(f"{run_dir}: already complete")
    else:
        result = train_full(recipe, run_dir)
        s = result.summary
        print(f"{run_dir}: status={s['status']} train_loss={s['train_loss']:.4g} test_error={s['test_error']:.4g}")
    _update_manifest(hash_dir, digest, [run_dir])
    return 0


def emit_map(rmap, out_dir: Path) -> None:
    rmap.write_csv(out_dir / "map.csv")
    rmap.write_meta(out_dir / "map_meta.json")
    figures.regime_heatmap(rmap, "train", out_dir / "train.svg")
    figures.regime_heatmap(rmap, "test", out_dir / "test.svg")


def cmd_sweep(args) -> int:
    cfg, digest = _load(args)
    sweep = cfg.sweep_config()
    T_train, T_test = cfg.thresholds()
    hash_dir = _out_root(args, cfg) / digest
    workers = args.workers if args.workers is not None else default_workers()
    # finished runs are always kept; --resume only makes that explicit
    grid = run_sweep(sweep, hash_dir, workers, progress=lambda d: print(f"done {d}", flush=True))
    runs = [
        hash_dir / cell_name(i, j) / str(s)
        for j in range(len(sweep.y_values))
        for i in range(len(sweep.x_values))
        for s in sweep.seeds
    ]
    _update_manifest(hash_dir, digest, runs)
    if not is_complete(grid):
        print("sweep incomplete; re-run to fill missing cells", file=sys.stderr)
        return 1
    failed = int(np.sum([str(s).startswith("error") for s in grid.status.ravel()]))
    if failed:
        print(f"{failed} run(s) failed; see their summary.json", file=sys.stderr)
    rmap = build_regime_map(grid, T_train, T_test, cfg.regime.perturb)
    emit_map(rmap, hash_dir)
    print(f"wrote {hash_dir / 'map.csv'}")
    for j in reversed(range(rmap.labels.shape[0])):
        print(f"{rmap.y_values[j]:>10g} | " + " ".join(f"{lab:>3}" for lab in rmap.labels[j]))
    print(" " * 13 + " ".join(f"{x:>3g}" for x in rmap.x_values))
    return 0


def _write_row(path: Path, name: str, value: float) -> None:
    path.write_text(f"{name},{value!r}\n")


def cmd_diagnose(args) -> int:
    cfg, _ = _load(args)
    d = cfg.diagnostics
    ops = list(args.ops.split(",")) if args.ops else list(d.ops)
    if "mc" in ops and not args.other:
        raise CliError("mode connectivity needs a second checkpoint (--other)")
    if "powerlaw" in ops and not args.trace:
        raise CliError("power-law fitting needs a training trace (--trace)")
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise CliError(f"{ckpt}: no such checkpoint")
    params = load_checkpoint(ckpt)
    setup = build(cfg.recipe())
    if params.layer_sizes != setup.params.layer_sizes:
        raise CliError(f"checkpoint layers {params.layer_sizes} do not match config {setup.params.layer_sizes}")
    obj = setup.objective
    out = Path(args.out) if args.out else ckpt.parent / "diagnostics"
    out.mkdir(parents=True, exist_ok=True)
    hvp = HvpOracle(obj, params.theta, "exact")
    report: dict = {"checkpoint": str(ckpt), "loss": float(obj(params.theta))}

    if "lambda_max" in ops:
        eig = top_eigs(hvp, hvp.dim, 1, d.power_iters, 1e-6, d.seed)
        report["lambda_max"] = eig[0][0]
        report["lambda_max_converged"] = eig.converged
        _write_row(out / "lambda_max.csv", "lambda_max", eig[0][0])
    if "trace" in ops:
        report["hessian_trace"] = hessian_trace(hvp, hvp.dim, d.max_probes, seed=d.seed)
        _write_row(out / "hessian_trace.csv", "trace", report["hessian_trace"])
    if "slq" in ops or "negative_mass" in ops:
        dens = slq_density(hvp, hvp.dim, min(d.lanczos_steps, hvp.dim), d.n_probes, d.seed)
        total = float(dens.weights.sum())
        print(f"slq weight sum: {total:.12f}")
        report["slq_weight_sum"] = total
        if "slq" in ops:
            dens.write_csv(out / "density.csv")
            figures.density_plot(dens, out / "density.svg")
        if "negative_mass" in ops:
            report["negative_mass"] = negative_mass(dens)
            _write_row(out / "negative_mass.csv", "negative_mass", report["negative_mass"])
    if "surface" in ops:
        sl = surface_slice(obj, params, hvp, d.radius, d.grid_n, d.seed)
        sl.write_csv(out / "surface.csv")
        figures.surface_plot(sl, out / "surface.svg")
        report["surface_directions"] = sl.direction_source
    if "mc" in ops:
        other = load_checkpoint(args.other)
        res = mode_connectivity(obj, params.theta, other.theta, steps=d.mc_steps, seed=d.seed)
        with open(out / "mc_curve.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "loss"])
            for t, loss in zip(res.t_grid, res.curve_losses):
                w.writerow([repr(float(t)), repr(float(loss))])
        _write_row(out / "mc.csv", "mc", res.mc)
        figures.curve_plot(res, out / "mc.svg")
        report["mc"] = res.mc
        report["mc_t_star"] = res.t_star
    if "powerlaw" in ops:
        trace = TrainingTrace.read_csv(args.trace)
        report["pl_alpha"] = pl_exponent(trace, d.loss_threshold, d.tail_len)
        _write_row(out / "powerlaw.csv", "alpha", report["pl_alpha"])

    write_json(out / "diagnostics.json", report)
    for key, value in report.items():
        if key != "checkpoint":
            print(f"{key}: {value}")
    return 0


def cmd_compare(args) -> int:
    base = read_map_csv(args.base)
    method = read_map_csv(args.method)
    if base.train_mean.shape != method.train_mean.shape:
        raise CliError(f"map shapes differ: {base.train_mean.shape} vs {method.train_mean.shape}")
    if not (np.allclose(base.x_values, method.x_values) and np.allclose(base.y_values, method.y_values)):
        raise CliError("maps cover different grid coordinates")
    d_train = relative_improvement(base.train_mean, method.train_mean)
    d_test = relative_improvement(base.test_mean, method.test_mean)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "compare.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "delta_train_pct", "delta_test_pct"])
        for j, y in enumerate(base.y_values):
            for i, x in enumerate(base.x_values):
                w.writerow([repr(float(x)), repr(float(y)), repr(float(d_train[j, i])), repr(float(d_test[j, i]))])
    xs, ys = base.x_values, base.y_values
    figures.improvement_heatmap(d_train, xs, ys, "training loss improvement", out / "compare_train.svg", base.x_field, base.y_field)
    figures.improvement_heatmap(d_test, xs, ys, "test error improvement", out / "compare_test.svg", base.x_field, base.y_field)
    print(f"wrote {out / 'compare.csv'}")
    return 0


def parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="regimescope", description="Train, sweep, and inspect physics-informed models.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, need_config=True):
        sp.add_argument("--config", required=need_config, help="YAML run configuration")
        sp.add_argument("--out", help="output root (default: config 'output' or ./out)")
        sp.add_argument("--seed-override", type=int, help="replace the training seed(s)")

    t = sub.add_parser("train", help="run one recipe")
    common(t)
    t.add_argument("--resume", action="store_true", help="skip if the run already has a summary")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep", help="run a grid sweep and emit the regime map")
    common(s)
    s.add_argument("--workers", type=int, help="parallel runs (default: $REGIMESCOPE_WORKERS or 1)")
    s.add_argument("--resume", action="store_true", help="keep finished runs (always on)")
    s.set_defaults(func=cmd_sweep)

    d = sub.add_parser("diagnose", help="landscape diagnostics for a checkpoint")
    common(d)
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--other", help="second checkpoint for mode connectivity")
    d.add_argument("--trace", help="trace.csv for power-law fitting")
    d.add_argument("--ops", help="comma-separated subset overriding diagnostics.ops")
    d.set_defaults(func=cmd_diagnose)

    c = sub.add_parser("compare", help="relative improvement between two regime maps")
    c.add_argument("--base", required=True, help="baseline map.csv")
    c.add_argument("--method", required=True, help="method map.csv")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, CliError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except NonFiniteError as err:
        print(f"error: non-finite values: {err}", file=sys.stderr)
        return 3
