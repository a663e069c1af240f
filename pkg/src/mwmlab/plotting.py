"""Matplotlib figure helpers. Everything renders straight to files through the Agg canvas."""
from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
from matplotlib.backends.backend_agg import FigureCanvasAgg  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402
from matplotlib.patches import Polygon, Rectangle  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 8,
    "axes.labelsize": 8,
    "axes.titlesize": 9,
    "axes.linewidth": 0.6,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.fontsize": 7,
    "legend.frameon": False,
    "lines.linewidth": 1.0,
    "xtick.labelsize": 7,
    "ytick.labelsize": 7,
    "svg.hashsalt": "mwmlab",
    "svg.fonttype": "none",
}
matplotlib.rcParams.update(STYLE)

PALETTE = ["#1b6ca8", "#d1495b", "#3a7d44", "#edae49", "#6d597a", "#00798c", "#8d6a9f", "#4f5d75"]
STRATEGY_COLORS = {"Direct": "#3a7d44", "Indirect": "#8fbc8f", "CornerTest": "#edae49",
                   "Circling": "#d1495b", "Stuck": "#7f7f7f"}
# display colors for wall codes 1..5 (code 0 unused)
WALL_CODE_COLORS = {1: "#1b6ca8", 2: "#d1495b", 3: "#3a7d44", 4: "#edae49", 5: "#222222"}


def new_figure(width=3.4, height=None, ncols=1, nrows=1):
    height = height or width * (math.sqrt(5) - 1) / 2 * nrows / ncols
    fig = Figure(figsize=(width, height))
    FigureCanvasAgg(fig)
    axes = fig.subplots(nrows, ncols, squeeze=False)
    return fig, axes


def save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    meta = {"Date": None} if path.suffix == ".svg" else {}
    fig.savefig(path, metadata=meta)
    return path


def stars(p: float) -> str:
    if p is None or not np.isfinite(p):
        return ""
    return "***" if p < 0.001 else "**" if p < 0.01 else "*" if p < 0.05 else "n.s."


def mean_band(path, x, series: dict, xlabel="total steps", ylabel="", title=""):
    """Mean line with a +/- one standard deviation band per named series (rows = seeds)."""
    fig, ax = new_figure(3.6)
    ax = ax[0, 0]
    for i, (name, ys) in enumerate(series.items()):
        ys = np.atleast_2d(np.asarray(ys, dtype=float))
        m = np.nanmean(ys, axis=0)
        s = np.nanstd(ys, axis=0)
        c = PALETTE[i % len(PALETTE)]
        ax.plot(x, m, color=c, label=name)
        ax.fill_between(x, m - s, m + s, color=c, alpha=0.25, linewidth=0)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.legend()
    return save(fig, path)


def box_compare(path, groups: dict, pairs=(), ylabel="", title=""):
    """Boxplots of per-agent values with significance stars for ``pairs`` of ``(a, b, p)``."""
    fig, ax = new_figure(3.4)
    ax = ax[0, 0]
    names = list(groups)
    data = [np.asarray(groups[n], dtype=float) for n in names]
    data = [d[np.isfinite(d)] for d in data]
    ax.boxplot(data, tick_labels=names, widths=0.5)
    top = max((float(d.max()) for d in data if len(d)), default=1.0)
    span = top - min((float(d.min()) for d in data if len(d)), default=0.0) or 1.0
    for k, (a, b, p) in enumerate(pairs):
        i, j = names.index(a) + 1, names.index(b) + 1
        y = top + span * (0.08 + 0.1 * k)
        ax.plot([i, i, j, j], [y - span * 0.02, y, y, y - span * 0.02], color="k", linewidth=0.6)
        ax.text((i + j) / 2, y, stars(p), ha="center", va="bottom")
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    return save(fig, path)


def stacked_strategies(path, steps, fractions: dict, title=""):
    """Stacked area of class fractions over checkpoints."""
    fig, ax = new_figure(3.6)
    ax = ax[0, 0]
    names = list(fractions)
    ys = np.array([np.asarray(fractions[n], dtype=float) for n in names])
    ax.stackplot(steps, np.nan_to_num(ys), labels=names,
                 colors=[STRATEGY_COLORS.get(n, "#999999") for n in names], alpha=0.9)
    ax.set_ylim(0, 1)
    ax.set_xlabel("total steps")
    ax.set_ylabel("fraction of episodes")
    if title:
        ax.set_title(title)
    ax.legend(loc="upper left", bbox_to_anchor=(1.0, 1.0))
    return save(fig, path)


def ci_plot(path, steps, mean, low, high, ylabel="cosine similarity", title=""):
    fig, ax = new_figure(3.4)
    ax = ax[0, 0]
    mean, low, high = (np.asarray(v, dtype=float) for v in (mean, low, high))
    ax.errorbar(steps, mean, yerr=[mean - low, high - mean], fmt="o-", color=PALETTE[0],
                capsize=2, markersize=3)
    ax.axhline(0, color="k", linewidth=0.5, linestyle=":")
    ax.set_xlabel("total steps")
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    return save(fig, path)


def scatter_running(path, x, y, running, xlabel="goal rewards in batch", ylabel="cosine similarity"):
    fig, ax = new_figure(3.4)
    ax = ax[0, 0]
    ax.scatter(x, y, s=4, color=PALETTE[0], alpha=0.5, linewidths=0)
    ax.plot(x, running, color=PALETTE[1])
    ax.axhline(0, color="k", linewidth=0.5, linestyle=":")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    return save(fig, path)


def scatter_fit(path, x, y, fit, xlabel="", ylabel="", labels=None):
    """Scatter with the least-squares line ``fit = (slope, intercept, r2)``."""
    fig, ax = new_figure(3.4)
    ax = ax[0, 0]
    x = np.asarray(x, dtype=float)
    ax.scatter(x, y, s=8, color=PALETTE[0])
    slope, intercept, r2 = fit
    if np.isfinite(slope):
        xs = np.linspace(np.nanmin(x), np.nanmax(x), 2)
        ax.plot(xs, slope * xs + intercept, color=PALETTE[1], label=f"$R^2$ = {r2:.2f}")
        ax.legend()
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    return save(fig, path)


def heatmap_panel(heat, scores, path, n_cols=4):
    """Grid of per-node spatial heatmaps (columns of ``heat``), annotated with their scores."""
    n = heat.shape[1]
    g = int(round(math.sqrt(heat.shape[0])))
    rows = math.ceil(n / n_cols)
    fig, axes = new_figure(1.5 * n_cols, 1.5 * rows, ncols=n_cols, nrows=rows)
    vmax = float(np.abs(heat).max()) or 1.0
    for j, ax in enumerate(axes.ravel()):
        ax.set_axis_off()
        if j >= n:
            continue
        ax.imshow(heat[:, j].reshape(g, g), origin="lower", cmap="RdBu_r", vmin=-vmax, vmax=vmax)
        ax.set_title(f"node {j}: {scores[j]:.2f}", fontsize=6)
    return save(fig, path)


def direction_panel(dmap, scores, angles, path, n_cols=4):
    n = dmap.shape[1]
    rows = math.ceil(n / n_cols)
    fig = Figure(figsize=(1.5 * n_cols, 1.5 * rows))
    FigureCanvasAgg(fig)
    vmax = float(np.abs(dmap).max()) or 1.0
    closed = np.append(angles, angles[0] + 2 * math.pi)
    for j in range(n):
        ax = fig.add_subplot(rows, n_cols, j + 1, projection="polar")
        v = np.append(dmap[:, j], dmap[0, j])
        ax.plot(closed, np.clip(v, 0, None), color=PALETTE[1], linewidth=0.8)
        ax.plot(closed, np.clip(-v, 0, None), color=PALETTE[0], linewidth=0.8)
        ax.set_ylim(0, vmax)
        ax.set_xticks([])
        ax.set_yticks([])
        ax.set_title(f"node {j}: {scores[j]:.2f}", fontsize=6)
    return save(fig, path)


def raycast_fan(path, config, pose, codes, dists):
    """Arena outline with wall colors, the platform, and the ray fan from ``pose``."""
    from .arena import wall_color_at

    L = config.arena_side
    fig, ax = new_figure(3.4, 3.4)
    ax = ax[0, 0]
    seg = np.linspace(0, L, 61)
    walls = {0: lambda s: ((L, s[0]), (L, s[1])), 1: lambda s: ((s[0], L), (s[1], L)),
             2: lambda s: ((0, s[0]), (0, s[1])), 3: lambda s: ((s[0], 0), (s[1], 0))}
    for wid, fn in walls.items():
        for a, b in zip(seg[:-1], seg[1:]):
            c = wall_color_at(config.variant, wid, (a + b) / 2, config)
            (x0, y0), (x1, y1) = fn((a, b))
            ax.plot([x0, x1], [y0, y1], color=WALL_CODE_COLORS.get(c, "#999999"), linewidth=4,
                    solid_capstyle="butt")
    px0, py0, px1, py1 = config.platform_rect
    ax.add_patch(Rectangle((px0, py0), px1 - px0, py1 - py0, color="#bbbbbb"))
    x, y, h = pose
    for off, code, d in zip(config.ray_offsets, codes, dists):
        a = h + off
        ax.plot([x, x + d * math.cos(a)], [y, y + d * math.sin(a)],
                color=WALL_CODE_COLORS.get(int(code), "#999999"), linewidth=0.6)
    tri = np.array([[10, 0], [-6, 5], [-6, -5]], dtype=float)
    rot = np.array([[math.cos(h), -math.sin(h)], [math.sin(h), math.cos(h)]])
    ax.add_patch(Polygon(tri @ rot.T + [x, y], color="k"))
    ax.set_xlim(-10, L + 10)
    ax.set_ylim(-10, L + 10)
    ax.set_aspect("equal")
    ax.set_axis_off()
    return save(fig, path)
