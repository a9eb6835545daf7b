"""Static SVG figures.  Output is byte-stable for identical inputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import matplotlib.colors  # noqa: E402
from matplotlib.colors import ListedColormap  # noqa: E402

from .regime import RegimeMap, normalize_percentile  # noqa: E402

plt.rcParams["svg.hashsalt"] = "regimescope"
plt.rcParams["svg.fonttype"] = "none"

SEQUENTIAL = ListedColormap(plt.get_cmap("viridis")(np.linspace(0.0, 0.8, 256)), name="viridis_0_0.8")
DIVERGING = plt.get_cmap("RdBu")


def _save(fig, path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def _ticks(ax, xs, ys, x_label, y_label):
    ax.set_xticks(range(len(xs)), [f"{x:g}" for x in xs])
    ax.set_yticks(range(len(ys)), [f"{y:g}" for y in ys])
    ax.set_xlabel(x_label)
    ax.set_ylabel(y_label)


def _draw_boundary(ax, boundary, style, width, color="white"):
    for line in boundary.polylines:
        ax.plot(line[:, 0], line[:, 1], linestyle=style, color=color, linewidth=width)


def cell_colors(values) -> np.ndarray:
    """RGBA per cell: percentile-normalised value on the truncated ramp, grey where undefined."""
    norm = normalize_percentile(values)
    rgba = SEQUENTIAL(np.nan_to_num(norm, nan=0.0))
    rgba[~np.isfinite(norm)] = matplotlib.colors.to_rgba("lightgrey")
    return rgba


def regime_heatmap(rmap: RegimeMap, metric: str, path) -> None:
    """Percentile-normalised heatmap of ``train`` or ``test`` with labels and boundary overlays."""
    values = rmap.train_mean if metric == "train" else rmap.test_mean
    fig, ax = plt.subplots(figsize=(1.1 * len(rmap.x_values) + 2.0, 1.0 * len(rmap.y_values) + 1.5))
    ax.imshow(cell_colors(values), origin="lower", aspect="auto", interpolation="nearest")
    for j in range(len(rmap.y_values)):
        for i in range(len(rmap.x_values)):
            ax.text(i, j, f"{rmap.labels[j, i]}\n{values[j, i]:.2g}", ha="center", va="center", color="white", fontsize=8)
    _draw_boundary(ax, rmap.boundaries["training"].main, "-", 2.0)
    _draw_boundary(ax, rmap.boundaries["generalization"].main, "--", 2.0)
    for band in (*rmap.boundaries["training"].bands.values(), *rmap.boundaries["generalization"].bands.values()):
        _draw_boundary(ax, band, ":", 0.8, "lightgrey")
    _ticks(ax, rmap.x_values, rmap.y_values, rmap.x_field, rmap.y_field)
    label = "training loss" if metric == "train" else "test error"
    ax.set_title(f"{label} (T_train={rmap.T_train:.3g}, T_test={rmap.T_test:.3g})", fontsize=9)
    ax.set_xlim(-0.5, len(rmap.x_values) - 0.5)
    ax.set_ylim(-0.5, len(rmap.y_values) - 0.5)
    _save(fig, path)


def improvement_heatmap(delta, xs, ys, title, path, x_label="x", y_label="y") -> None:
    """Diverging map of percentage changes centred at zero; NaN cells are left blank."""
    delta = np.asarray(delta, dtype=np.float64)
    finite = np.abs(delta[np.isfinite(delta)])
    vmax = float(finite.max()) if finite.size and finite.max() > 0 else 1.0
    fig, ax = plt.subplots(figsize=(1.1 * len(xs) + 2.0, 1.0 * len(ys) + 1.5))
    ax.imshow(np.ma.masked_invalid(delta), cmap=DIVERGING.with_extremes(bad="white"), vmin=-vmax, vmax=vmax, origin="lower", aspect="auto")
    for j in range(len(ys)):
        for i in range(len(xs)):
            if np.isfinite(delta[j, i]):
                ax.text(i, j, f"{delta[j, i]:+.0f}%", ha="center", va="center", fontsize=8)
    _ticks(ax, xs, ys, x_label, y_label)
    ax.set_title(title, fontsize=9)
    _save(fig, path)


def density_plot(density, path) -> None:
    lo, hi = float(density.nodes.min()), float(density.nodes.max())
    pad = 0.1 * max(hi - lo, 1.0)
    grid = np.linspace(lo - pad, hi + pad, 2000)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(grid, density.curve(grid), color="tab:blue")
    ax.set_xscale("symlog", linthresh=density.symlog_threshold)
    ax.set_yscale("log")
    ax.set_ylim(bottom=1e-8)
    ax.set_xlabel("eigenvalue")
    ax.set_ylabel("density")
    _save(fig, path)


def surface_plot(slice_, path) -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    c = slice_.coords
    cs = ax.contourf(c, c, slice_.values.T, levels=30, cmap="viridis")
    fig.colorbar(cs, ax=ax, label="log loss")
    ax.plot([0], [0], marker="x", color="white")
    ax.set_xlabel("alpha (d1)")
    ax.set_ylabel("beta (d2)")
    ax.set_title(f"directions: {slice_.direction_source}", fontsize=9)
    _save(fig, path)


def curve_plot(result, path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(result.t_grid, result.curve_losses, color="tab:blue")
    ax.axhline(0.5 * (result.loss_a + result.loss_b), color="grey", linestyle="--")
    ax.axvline(result.t_star, color="tab:red", linestyle=":")
    ax.set_xlabel("t")
    ax.set_ylabel("loss on curve")
    ax.set_title(f"mc = {result.mc:.3g}", fontsize=9)
    _save(fig, path)
