"""Parameter sweeps, seed averaging and the three-regime maps built from them.

Grids are stored row-major with rows indexed by the data-quantity axis
(``y``) and columns by the physical-parameter axis (``x``), so ``grid[j, i]``
is the cell at ``(x_values[i], y_values[j])``.
"""

from __future__ import annotations

import csv
import json
import math
import multiprocessing as mp
import os
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .diffcore import ConfigurationError
from .training.recipe import Recipe, train_full
from .training.trace import write_json

# (model, family, method) -> (T_train, T_test)
DEFAULT_THRESHOLDS = {
    ("pinn", "convection", "lbfgs"): (3.80e-3, 0.434),
    ("pinn", "convection", "alm"): (3.34e-2, 0.278),
    ("pinn", "convection", "nncg"): (3.55e-3, 0.433),
    ("pinn", "convection", "curriculum"): (2.29e-3, 0.239),
    ("pinn", "reaction", "lbfgs"): (2.73e-2, 0.469),
    ("pinn", "reaction", "alm"): (7.30e-5, 0.494),
    ("pinn", "reaction", "nncg"): (2.46e-2, 0.432),
    ("pinn", "wave", "lbfgs"): (9.91e-3, 0.297),
    ("pinn", "wave", "alm"): (5.77e-3, 0.300),
    ("pinn", "reaction_diffusion", "lbfgs"): (4.46e-2, 0.435),
    ("pinn", "reaction_diffusion", "alm"): (2.44e-4, 0.384),
    ("node", "pendulum", "adam"): (5.21e-5, 1.98),
    ("pinode", "pendulum", "adam"): (1.12e-6, 1.74),
    ("pinode", "pendulum", "lbfgs"): (3.20e-7, 3.18),
    ("pinode", "pendulum", "alm"): (6.88e-9, 1.31),
    ("pinode", "pendulum", "nncg"): (1.37e-7, 2.19),
    ("pinode", "pendulum", "curriculum"): (2.43e-7, 3.47),
}

LABELS = ("I", "II", "III")
SWEEPABLE = ("coeff", "aux_coeff", "n_res", "n_bc", "horizon")
INTEGER_FIELDS = ("n_res", "n_bc")


# ---------------------------------------------------------------------------
# sweeps


@dataclass(frozen=True)
class SweepConfig:
    base: Recipe
    x_field: str
    x_values: tuple[float, ...]
    y_field: str
    y_values: tuple[float, ...]
    seeds: tuple[int, ...] = (0,)

    def __post_init__(self):
        for name in (self.x_field, self.y_field):
            if name not in SWEEPABLE:
                raise ConfigurationError(f"cannot sweep {name!r}; choose from {SWEEPABLE}")
        if self.x_field == self.y_field:
            raise ConfigurationError("x and y must sweep different fields")
        if not self.x_values or not self.y_values or not self.seeds:
            raise ConfigurationError("sweep needs at least one x value, y value and seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigurationError("seeds must be distinct")

    def recipe(self, i: int, j: int, seed: int) -> Recipe:
        changes = {}
        for name, value in ((self.x_field, self.x_values[i]), (self.y_field, self.y_values[j])):
            changes[name] = int(value) if name in INTEGER_FIELDS else float(value)
        return replace(self.base, problem=self.base.problem.replace(**changes), seed=seed)


def cell_name(i: int, j: int) -> str:
    return f"x{i:02d}_y{j:02d}"


@dataclass
class SweepGrid:
    x_values: np.ndarray
    y_values: np.ndarray
    seeds: list[int]
    # metric name -> array (ny, nx, n_seeds)
    metrics: dict[str, np.ndarray]
    status: np.ndarray  # (ny, nx, n_seeds) of str
    x_field: str = "x"
    y_field: str = "y"

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.y_values), len(self.x_values)


def _run_one(args):
    recipe, out_dir = args
    try:
        train_full(recipe, out_dir)
    except Exception as err:  # a failed run is data for the grid, not a reason to stop the sweep
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        write_json(
            Path(out_dir) / "summary.json",
            {"train_loss": math.nan, "test_error": math.nan, "status": f"error: {type(err).__name__}: {err}"},
        )
    return str(out_dir)


def default_workers() -> int:
    env = os.environ.get("REGIMESCOPE_WORKERS")
    if env:
        try:
            n = int(env)
        except ValueError as err:
            raise ConfigurationError(f"REGIMESCOPE_WORKERS={env!r} is not an integer") from err
        if n < 1:
            raise ConfigurationError("REGIMESCOPE_WORKERS must be >= 1")
        return n
    return 1


def write_index(config: SweepConfig, out_dir) -> None:
    index = {
        "x_field": config.x_field,
        "y_field": config.y_field,
        "x_values": list(config.x_values),
        "y_values": list(config.y_values),
        "seeds": list(config.seeds),
        "cells": {
            cell_name(i, j): {"x": config.x_values[i], "y": config.y_values[j]}
            for j in range(len(config.y_values))
            for i in range(len(config.x_values))
        },
    }
    write_json(Path(out_dir) / "index.json", index)


def run_sweep(config: SweepConfig, out_dir, workers: int | None = None, progress=None) -> SweepGrid:
    """Train every (cell, seed) not yet on disk, then load the full grid.

    A run counts as done once its ``summary.json`` exists, so an interrupted
    sweep resumes where it stopped.  Runs go to a process pool when
    ``workers > 1``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_index(config, out)
    todo = []
    for j in range(len(config.y_values)):
        for i in range(len(config.x_values)):
            for seed in config.seeds:
                run_dir = out / cell_name(i, j) / str(seed)
                if not (run_dir / "summary.json").exists():
                    todo.append((config.recipe(i, j, seed), run_dir))
    workers = default_workers() if workers is None else workers
    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(workers, mp_context=mp.get_context("spawn")) as pool:
            for done in pool.map(_run_one, todo):
                if progress:
                    progress(done)
    else:
        for item in todo:
            done = _run_one(item)
            if progress:
                progress(done)
    return load_sweep(out)


def load_sweep(out_dir) -> SweepGrid:
    out = Path(out_dir)
    index = json.loads((out / "index.json").read_text())
    xs, ys, seeds = index["x_values"], index["y_values"], index["seeds"]
    shape = (len(ys), len(xs), len(seeds))
    metrics = {"train_loss": np.full(shape, np.nan), "test_error": np.full(shape, np.nan)}
    lam = np.full(shape, np.nan)
    status = np.full(shape, "missing", dtype=object)
    for j in range(len(ys)):
        for i in range(len(xs)):
            for k, seed in enumerate(seeds):
                path = out / cell_name(i, j) / str(seed) / "summary.json"
                if not path.exists():
                    continue
                summary = json.loads(path.read_text())
                metrics["train_loss"][j, i, k] = summary["train_loss"]
                metrics["test_error"][j, i, k] = summary["test_error"]
                lam[j, i, k] = summary.get("lambda_max_final", np.nan)
                status[j, i, k] = summary["status"]
    if not np.all(np.isnan(lam)):
        metrics["lambda_max"] = lam
    return SweepGrid(np.array(xs, dtype=float), np.array(ys, dtype=float), list(seeds), metrics, status, index["x_field"], index["y_field"])


def is_complete(grid: SweepGrid) -> bool:
    return not np.any(grid.status == "missing")


def seed_mean(grid: SweepGrid) -> dict[str, np.ndarray]:
    """Arithmetic mean over seeds per cell; divergent runs are averaged in as they are."""
    if not is_complete(grid):
        raise ValueError("sweep grid has missing runs")
    return {name: values.mean(axis=2) for name, values in grid.metrics.items()}


# ---------------------------------------------------------------------------
# colour normalisation and labels


def normalize_percentile(values, p_lo: float = 5.0, p_hi: float = 95.0) -> np.ndarray:
    """Map into [0, 1] between the ``p_lo`` and ``p_hi`` percentiles of the finite values.

    Percentiles interpolate linearly between order statistics.  Values
    outside the range are clamped; ``+inf`` maps to 1 and NaN stays NaN.  A
    degenerate range maps everything finite to 0.5.
    """
    v = np.asarray(values, dtype=np.float64)
    finite = v[np.isfinite(v)]
    if finite.size == 0:
        raise ValueError("no finite values to normalise")
    lo, hi = np.percentile(finite, [p_lo, p_hi])
    if hi == lo:
        out = np.where(np.isnan(v), np.nan, 0.5)
    else:
        with np.errstate(invalid="ignore"):
            out = np.clip((v - lo) / (hi - lo), 0.0, 1.0)
    return out


def classify(train_mean: float, test_mean: float, T_train: float, T_test: float) -> str:
    """I: both low.  II: training loss high (whatever the test error).  III: fits but does not generalise."""
    if not (T_train > 0 and T_test > 0):
        raise ValueError("thresholds must be positive")
    if not train_mean <= T_train:  # NaN counts as a failed fit
        return "II"
    return "I" if test_mean <= T_test else "III"


def classify_grid(train_mean, test_mean, T_train, T_test) -> np.ndarray:
    tr, te = np.asarray(train_mean), np.asarray(test_mean)
    out = np.empty(tr.shape, dtype=object)
    for idx in np.ndindex(tr.shape):
        out[idx] = classify(tr[idx], te[idx], T_train, T_test)
    return out


# ---------------------------------------------------------------------------
# boundaries


@dataclass
class Boundary:
    """Cell-edge boundary between ``value <= threshold`` and ``value > threshold`` cells.

    ``edges`` are pairs of adjacent ``(row, col)`` cells; ``polylines`` are
    the same edges chained into paths in lattice coordinates, where cell
    ``(row, col)`` is centred at ``(x=col, y=row)``.
    """

    threshold: float
    edges: list[tuple[tuple[int, int], tuple[int, int]]]
    polylines: list[np.ndarray]
    flagged: bool = False


def boundary_edges(mask: np.ndarray) -> list[tuple[tuple[int, int], tuple[int, int]]]:
    ny, nx = mask.shape
    edges = []
    for r in range(ny):
        for c in range(nx):
            if c + 1 < nx and mask[r, c] != mask[r, c + 1]:
                edges.append(((r, c), (r, c + 1)))
            if r + 1 < ny and mask[r, c] != mask[r + 1, c]:
                edges.append(((r, c), (r + 1, c)))
    return edges


def _segment(edge):
    (r0, c0), (r1, c1) = edge
    if r0 == r1:  # horizontal neighbours -> vertical segment
        x = c0 + 0.5
        return (x, r0 - 0.5), (x, r0 + 0.5)
    y = r0 + 0.5
    return (c0 - 0.5, y), (c0 + 0.5, y)


def chain_segments(segments) -> list[np.ndarray]:
    """Join segments sharing endpoints into polylines; junctions of 3+ segments end a line."""
    at = defaultdict(list)
    for k, (a, b) in enumerate(segments):
        at[a].append(k)
        at[b].append(k)
    used = [False] * len(segments)

    def walk(start, k):
        path = [start]
        point = start
        while True:
            used[k] = True
            a, b = segments[k]
            point = b if a == point else a
            path.append(point)
            nxt = [m for m in at[point] if not used[m]]
            if len(at[point]) != 2 or not nxt:
                return path
            k = nxt[0]

    lines = []
    # open paths start at endpoints / junctions, then what is left are closed loops
    for point in sorted(at):
        if len(at[point]) != 2:
            for k in at[point]:
                if not used[k]:
                    lines.append(np.array(walk(point, k)))
    for k in range(len(segments)):
        if not used[k]:
            lines.append(np.array(walk(segments[k][0], k)))
    return lines


def boundary_at(grid: np.ndarray, threshold: float) -> Boundary:
    g = np.asarray(grid, dtype=np.float64)
    mask = ~(g <= threshold)  # NaN sits on the high side
    if mask.all() or not mask.any():
        return Boundary(float(threshold), [], [], flagged=True)
    edges = boundary_edges(mask)
    return Boundary(float(threshold), edges, chain_segments([_segment(e) for e in edges]))


@dataclass
class BoundarySet:
    main: Boundary
    bands: dict[float, Boundary]

    @property
    def flagged(self) -> bool:
        return self.main.flagged


def extract_boundaries(grid, threshold: float, perturb: float = 0.2) -> BoundarySet:
    """Boundary at ``threshold`` plus the same at ``threshold * (1 -/+ perturb)``."""
    if grid is None or np.ndim(grid) != 2:
        raise ValueError("boundary extraction needs a 2-D grid")
    factors = (1.0 - perturb, 1.0 + perturb)
    return BoundarySet(boundary_at(grid, threshold), {f: boundary_at(grid, threshold * f) for f in factors})


# ---------------------------------------------------------------------------
# maps


@dataclass
class RegimeMap:
    x_values: np.ndarray
    y_values: np.ndarray
    train_mean: np.ndarray
    test_mean: np.ndarray
    labels: np.ndarray
    T_train: float
    T_test: float
    boundaries: dict[str, BoundarySet] = field(default_factory=dict)
    lambda_mean: np.ndarray | None = None
    x_field: str = "x"
    y_field: str = "y"
    perturb: float = 0.2

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "train_mean", "test_error_mean", "label"])
            for j, y in enumerate(self.y_values):
                for i, x in enumerate(self.x_values):
                    w.writerow([repr(float(x)), repr(float(y)), repr(float(self.train_mean[j, i])), repr(float(self.test_mean[j, i])), self.labels[j, i]])

    def write_meta(self, path) -> None:
        write_json(
            path,
            {
                "T_train": self.T_train,
                "T_test": self.T_test,
                "perturb": self.perturb,
                "x_field": self.x_field,
                "y_field": self.y_field,
            },
        )


def build_regime_map(grid: SweepGrid, T_train: float, T_test: float, perturb: float = 0.2) -> RegimeMap:
    means = seed_mean(grid)
    return map_from_means(
        grid.x_values, grid.y_values, means["train_loss"], means["test_error"], T_train, T_test, perturb,
        means.get("lambda_max"), grid.x_field, grid.y_field,
    )


def map_from_means(xs, ys, train, test, T_train, T_test, perturb=0.2, lam=None, x_field="x", y_field="y") -> RegimeMap:
    labels = classify_grid(train, test, T_train, T_test)
    bounds = {
        "training": extract_boundaries(train, T_train, perturb),
        "generalization": extract_boundaries(test, T_test, perturb),
    }
    return RegimeMap(
        np.asarray(xs, float), np.asarray(ys, float), np.asarray(train, float), np.asarray(test, float),
        labels, T_train, T_test, bounds, lam, x_field, y_field, perturb,
    )


def read_map_csv(path) -> RegimeMap:
    """Rebuild a map from ``map.csv`` (and ``map_meta.json`` beside it when present)."""
    rows = list(csv.DictReader(open(path, newline="")))
    if not rows:
        raise ValueError(f"{path}: empty map")
    xs = sorted({float(r["x"]) for r in rows})
    ys = sorted({float(r["y"]) for r in rows})
    train = np.full((len(ys), len(xs)), np.nan)
    test = np.full_like(train, np.nan)
    for r in rows:
        j, i = ys.index(float(r["y"])), xs.index(float(r["x"]))
        train[j, i] = float(r["train_mean"])
        test[j, i] = float(r["test_error_mean"])
    meta_path = Path(path).with_name("map_meta.json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    T_train = meta.get("T_train", float(np.nanmedian(train)))
    T_test = meta.get("T_test", float(np.nanmedian(test)))
    return map_from_means(
        xs, ys, train, test, T_train, T_test, meta.get("perturb", 0.2),
        x_field=meta.get("x_field", "x"), y_field=meta.get("y_field", "y"),
    )


def relative_improvement(base, method) -> np.ndarray:
    """``(base - method) / base * 100``; NaN where the base is zero or either value is not finite."""
    b = np.asarray(base, dtype=np.float64)
    m = np.asarray(method, dtype=np.float64)
    if b.shape != m.shape:
        raise ValueError(f"grid shapes differ: {b.shape} vs {m.shape}")
    ok = (b != 0) & np.isfinite(b) & np.isfinite(m)
    out = np.full(b.shape, np.nan)
    out[ok] = (b[ok] - m[ok]) / b[ok] * 100.0
    return out
