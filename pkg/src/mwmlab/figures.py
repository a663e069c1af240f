"""Figure data emission: CSV tables, a column schema per figure, and rendered SVGs."""
from __future__ import annotations

import csv
import json
import math
import warnings
from pathlib import Path

import numpy as np
from scipy import stats

from . import plotting
from .behavior import STRATEGIES
from .gradprobe import SimilarityRecord, confidence_interval, running_exponential_mean
from .repmaps import linear_fit

MAX_POINTS = 500

FIGURES = ("learning", "aux_losses", "boxplot", "strategies", "gradsim", "reward_cosine", "rep_scores")


class MissingInputsError(FileNotFoundError):
    def __init__(self, missing):
        self.missing = sorted(str(m) for m in missing)
        super().__init__("missing inputs: " + ", ".join(self.missing))


def read_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def _num(v) -> float:
    return float(v) if v not in ("", None) else math.nan


def write_table(path, header, rows, schema: dict) -> Path:
    """CSV plus ``<stem>.schema.json`` describing every column."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for r in rows:
            w.writerow([f"{v:.6g}" if isinstance(v, float) else v for v in r])
    missing = [h for h in header if h not in schema]
    if missing:
        raise ValueError(f"schema lacks columns {missing}")
    path.with_suffix(".schema.json").write_text(json.dumps(
        {"file": path.name, "columns": [{"name": h, "description": schema[h]} for h in header]}, indent=2))
    return path


def downsample(n: int, max_points: int = MAX_POINTS) -> np.ndarray:
    """Evenly spaced indices (first and last kept) selecting at most ``max_points`` of ``n``."""
    if n <= max_points:
        return np.arange(n)
    return np.unique(np.round(np.linspace(0, n - 1, max_points)).astype(int))


def seed_dirs(suite) -> list[Path]:
    suite = Path(suite)
    dirs = sorted(p for p in suite.glob("seed_*") if p.is_dir())
    if not dirs and (suite / "run.json").exists():
        dirs = [suite]
    return dirs


def _require(paths):
    missing = [p for p in paths if not Path(p).exists()]
    if missing:
        raise MissingInputsError(missing)


def load_logs(suite, column: str = "mean_episode_len"):
    """``(steps, values)`` with values shaped ``(n_seeds, n_steps)``, truncated to the shortest log."""
    dirs = seed_dirs(suite)
    _require([d / "log.csv" for d in dirs] or [Path(suite) / "seed_*/log.csv"])
    logs = [read_csv(d / "log.csv") for d in dirs]
    n = min(len(l) for l in logs)
    steps = np.array([_num(r["total_steps"]) for r in logs[0][:n]])
    vals = np.array([[_num(r.get(column, "")) for r in l[:n]] for l in logs])
    return steps, vals


def _label(suite) -> str:
    return Path(suite).name


# individual figures ----------------------------------------------------------------

def _curves(suites, out, stem, columns):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN leading rows before any episode ends
        return _curves_impl(suites, out, stem, columns)


def _curves_impl(suites, out, stem, columns):
    rows, series, x = [], {}, None
    for s in suites:
        for col in columns:
            try:
                steps, vals = load_logs(s, col)
            except KeyError:
                continue
            if np.all(np.isnan(vals)):
                continue
            idx = downsample(len(steps))
            m = np.nanmean(vals, axis=0)
            sd = np.nanstd(vals, axis=0)
            name = _label(s) if len(columns) == 1 else f"{_label(s)}:{col}"
            rows += [(_label(s), col, int(steps[i]), m[i], sd[i], vals.shape[0]) for i in idx]
            series[name] = (steps[idx], vals[:, idx])
    if not series:
        raise MissingInputsError([f"{s}: columns {columns}" for s in suites])
    csv_path = write_table(out / f"{stem}.csv", ["suite", "series", "total_steps", "mean", "std", "n_agents"], rows, {
        "suite": "suite directory name", "series": "log column", "total_steps": "environment steps trained",
        "mean": "mean over agents", "std": "standard deviation over agents", "n_agents": "number of agents"})
    fig, axes = plotting.new_figure(3.6)
    ax = axes[0, 0]
    for i, (name, (xs, ys)) in enumerate(series.items()):
        c = plotting.PALETTE[i % len(plotting.PALETTE)]
        m, sd = np.nanmean(ys, axis=0), np.nanstd(ys, axis=0)
        ax.plot(xs, m, color=c, label=name)
        ax.fill_between(xs, m - sd, m + sd, color=c, alpha=0.25, linewidth=0)
    ax.set_xlabel("total steps")
    ax.set_ylabel("mean episode length" if columns == ["mean_episode_len"] else "loss")
    ax.legend()
    return [csv_path, plotting.save(fig, out / f"{stem}.svg")]


def learning(suites, out, **_):
    return _curves(suites, out, "learning", ["mean_episode_len"])


def aux_losses(suites, out, **_):
    cols = set()
    for s in suites:
        for d in seed_dirs(s)[:1]:
            with open(d / "log.csv") as f:
                cols |= {c for c in f.readline().strip().split(",") if c.startswith("aux_")}
    if not cols:
        raise MissingInputsError([f"{s}: aux_* log columns" for s in suites])
    return _curves(suites, out, "aux_losses", sorted(cols))


def value_at(steps, vals, at: float) -> np.ndarray:
    """Per-agent value at the last logged step not after ``at``."""
    i = int(np.searchsorted(steps, at, side="right")) - 1
    return vals[:, max(i, 0)]


def boxplot(suites, out, at=(300_000, 3_000_000), **_):
    """Per-agent episode length at each time point; stars compare every suite with the first (control)."""
    data = {_label(s): load_logs(s) for s in suites}
    names = list(data)
    rows, paths = [], []
    for t in at:
        groups = {n: value_at(*data[n], t) for n in names}
        pairs = []
        for n in names[1:]:
            a, b = groups[names[0]], groups[n]
            p = float(stats.mannwhitneyu(a, b, alternative="two-sided").pvalue) if len(a) and len(b) else math.nan
            pairs.append((names[0], n, p))
            rows.append((int(t), n, float(np.median(b)), float(np.median(a)), p, plotting.stars(p),
                         "worse" if np.median(b) > np.median(a) else "better"))
        rows.append((int(t), names[0], float(np.median(groups[names[0]])), float(np.median(groups[names[0]])),
                     math.nan, "", "control"))
        paths.append(plotting.box_compare(out / f"boxplot_{int(t)}.svg", groups, pairs,
                                          ylabel="mean episode length", title=f"{int(t):,} steps"))
    csv_path = write_table(out / "boxplot.csv",
                           ["at_step", "suite", "median", "control_median", "p_value", "stars", "direction"], rows, {
        "at_step": "time point in environment steps", "suite": "suite directory name",
        "median": "median over agents of mean episode length", "control_median": "same for the first (control) suite",
        "p_value": "two-sided Mann-Whitney U test against control", "stars": "* p<0.05, ** p<0.01, *** p<0.001",
        "direction": "better means shorter episodes than control"})
    return [csv_path, *paths]


def strategy_table(suite):
    """Mean class fraction per checkpoint over agents: ``(steps, {class: array})``."""
    dirs = seed_dirs(suite)
    _require([d / "strategies.csv" for d in dirs] or [Path(suite) / "seed_*/strategies.csv"])
    acc: dict = {}
    for d in dirs:
        for r in read_csv(d / "strategies.csv"):
            acc.setdefault(int(r["checkpoint"]), {}).setdefault(r["class"], []).append(_num(r["fraction"]))
    steps = sorted(acc)
    fr = {s.value: np.array([np.nanmean(acc[k].get(s.value, [math.nan])) for k in steps]) for s in STRATEGIES}
    return np.array(steps), fr


def strategies(suites, out, **_):
    rows, paths = [], []
    for s in suites:
        steps, fr = strategy_table(s)
        for i, k in enumerate(steps):
            rows += [(_label(s), int(k), c, fr[c][i]) for c in fr]
        paths.append(plotting.stacked_strategies(out / f"strategies_{_label(s)}.svg", steps, fr, _label(s)))
    csv_path = write_table(out / "strategies.csv", ["suite", "checkpoint", "class", "fraction"], rows, {
        "suite": "suite directory name", "checkpoint": "training step of the checkpoint",
        "class": "navigation strategy", "fraction": "mean over agents of the episode fraction"})
    return [csv_path, *paths]


def load_cosines(suite, protocol: str) -> list[SimilarityRecord]:
    dirs = seed_dirs(suite)
    _require([d / "cosine.csv" for d in dirs] or [Path(suite) / "seed_*/cosine.csv"])
    recs = []
    for d in dirs:
        for r in read_csv(d / "cosine.csv"):
            if r.get("protocol", protocol) == protocol:
                c = _num(r["cosine"])
                recs.append(SimilarityRecord(int(r["checkpoint"]), int(r["batch"]),
                                             None if math.isnan(c) else c, int(r["goal_rewards"])))
    return recs


def gradsim(suites, out, ci_method="t", **_):
    rows, paths = [], []
    for s in suites:
        recs = load_cosines(s, "supervised")
        if not recs:
            raise MissingInputsError([f"{s}: supervised cosine records"])
        steps = sorted({r.checkpoint for r in recs})
        cis = [confidence_interval([r.cosine for r in recs if r.checkpoint == k], method=ci_method) for k in steps]
        rows += [(_label(s), k, *ci, sum(r.checkpoint == k and r.cosine is not None for r in recs))
                 for k, ci in zip(steps, cis)]
        m, lo, hi = zip(*cis)
        paths.append(plotting.ci_plot(out / f"gradsim_{_label(s)}.svg", steps, m, lo, hi, title=_label(s)))
    csv_path = write_table(out / "gradsim.csv", ["suite", "checkpoint", "mean", "ci_low", "ci_high", "n"], rows, {
        "suite": "suite directory name", "checkpoint": "training step", "mean": "mean cosine similarity",
        "ci_low": "lower 95% bound", "ci_high": "upper 95% bound", "n": "defined cosine values pooled"})
    return [csv_path, *paths]


def reward_cosine(suites, out, alpha=0.05, **_):
    rows, paths = [], []
    for s in suites:
        run = running_exponential_mean(load_cosines(s, "reward"), alpha)
        if not run:
            raise MissingInputsError([f"{s}: reward cosine records"])
        rows += [(_label(s), g, c, e) for g, c, e in run]
        g, c, e = (np.array(v) for v in zip(*run))
        idx = downsample(len(g))
        paths.append(plotting.scatter_running(out / f"reward_cosine_{_label(s)}.svg", g[idx], c[idx], e[idx]))
    csv_path = write_table(out / "reward_cosine.csv", ["suite", "goal_rewards", "cosine", "running_mean"], rows, {
        "suite": "suite directory name", "goal_rewards": "goal rewards in the probe batch",
        "cosine": "cosine of full and bonus-only gradients", "running_mean": "exponential running mean"})
    return [csv_path, *paths]


def score_report(suite, checkpoints=None) -> Path:
    """Per agent and checkpoint: mean node scores joined with the Direct fraction, plus linear fits."""
    suite = Path(suite)
    dirs = seed_dirs(suite)
    _require([d / f for d in dirs for f in ("rep_scores.csv", "strategies.csv")]
             or [suite / "seed_*/rep_scores.csv"])
    rows = []
    for d in dirs:
        sc: dict = {}
        for r in read_csv(d / "rep_scores.csv"):
            sc.setdefault(int(r["checkpoint"]), []).append((_num(r["spatial_score"]), _num(r["direction_score"])))
        direct = {int(r["checkpoint"]): _num(r["fraction"]) for r in read_csv(d / "strategies.csv")
                  if r["class"] == "Direct"}
        for k in sorted(sc):
            if checkpoints is not None and k not in checkpoints:
                continue
            a = np.array(sc[k])
            rows.append((d.name, k, float(a[:, 0].mean()), float(a[:, 1].mean()), direct.get(k, math.nan)))
    arr = np.array([r[2:] for r in rows], dtype=float).reshape(-1, 3)
    ok = ~np.isnan(arr[:, 2])
    fits = {name: dict(zip(("slope", "intercept", "r2"), linear_fit(arr[ok, 2], arr[ok, col])))
            for name, col in (("spatial", 0), ("direction", 1))}
    path = write_table(suite / "rep_scores.csv",
                       ["agent", "checkpoint", "mean_spatial_score", "mean_direction_score", "direct_fraction"], rows, {
        "agent": "run directory name", "checkpoint": "training step",
        "mean_spatial_score": "spatial score averaged over nodes",
        "mean_direction_score": "direction score averaged over nodes",
        "direct_fraction": "fraction of evaluation episodes classified Direct"})
    (suite / "rep_fit.json").write_text(json.dumps(fits, indent=2))
    return path


def rep_scores(suites, out, **_):
    rows, paths = [], []
    for s in suites:
        score_report(s)
        tab = read_csv(Path(s) / "rep_scores.csv")
        fits = json.loads((Path(s) / "rep_fit.json").read_text())
        x = np.array([_num(r["direct_fraction"]) for r in tab])
        for name, col in (("spatial", "mean_spatial_score"), ("direction", "mean_direction_score")):
            y = np.array([_num(r[col]) for r in tab])
            f = fits[name]
            rows.append((_label(s), name, f["slope"], f["intercept"], f["r2"], len(tab)))
            paths.append(plotting.scatter_fit(out / f"rep_{name}_{_label(s)}.svg", x, y,
                                              (f["slope"], f["intercept"], f["r2"]),
                                              xlabel="Direct fraction", ylabel=f"mean {name} score"))
        steps = sorted({int(r["checkpoint"]) for r in tab})
        series = {n: np.array([[_num(r[c]) for r in tab if r["agent"] == a] for a in sorted({r["agent"] for r in tab})])
                  for n, c in (("spatial", "mean_spatial_score"), ("direction", "mean_direction_score"))}
        paths.append(plotting.mean_band(out / f"rep_curves_{_label(s)}.svg", steps, series, ylabel="score"))
    csv_path = write_table(out / "rep_scores.csv", ["suite", "score", "slope", "intercept", "r2", "n_points"], rows, {
        "suite": "suite directory name", "score": "spatial or direction", "slope": "least-squares slope vs Direct fraction",
        "intercept": "least-squares intercept", "r2": "coefficient of determination", "n_points": "agent-checkpoint pairs"})
    return [csv_path, *paths]


_EMITTERS = {"learning": learning, "aux_losses": aux_losses, "boxplot": boxplot, "strategies": strategies,
             "gradsim": gradsim, "reward_cosine": reward_cosine, "rep_scores": rep_scores}


def emit_figure_data(suites, figure_id: str, out_dir, **options) -> list[Path]:
    """Write the CSV, schema and SVG files for ``figure_id`` over one or more suite directories."""
    if figure_id not in _EMITTERS:
        raise ValueError(f"unknown figure {figure_id!r}; choose from {', '.join(FIGURES)}")
    suites = [suites] if isinstance(suites, (str, Path)) else list(suites)
    missing = [s for s in suites if not Path(s).is_dir()]
    if missing:
        raise MissingInputsError(missing)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return _EMITTERS[figure_id](suites, out, **options)
