"""Experiment configuration, per-run analyses and multi-seed suite orchestration."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .arena import ArenaConfig, ConfigError
from .auxtasks import AuxSpec
from .behavior import (STRATEGIES, Strategy, Thresholds, evaluate_checkpoint, extract_features,
                       load_eval_poses, make_eval_poses, render_trajectory_image, save_eval_poses,
                       thresholds_from_dict, thresholds_to_dict)
from .net import CheckpointError, ParamSet, load_checkpoint, load_metadata, save_checkpoint
from .trainer import TrainConfig, checkpoint_name, train

log = logging.getLogger(__name__)

EVAL_POSES_FILE = "eval_poses.json"
MANIFEST = "manifest.json"


class SuiteExistsError(RuntimeError):
    """The suite was already completed with the same configuration."""


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    arena: ArenaConfig = field(default_factory=ArenaConfig)
    hidden_width: int = 16
    train: TrainConfig = field(default_factory=TrainConfig)
    aux: AuxSpec = field(default_factory=AuxSpec)
    n_seeds: int = 1
    seeds: tuple[int, ...] = ()
    output_root: str = "runs"
    eval_seed: int = 20240101
    classifier: Thresholds = field(default_factory=Thresholds)
    analyses: tuple[str, ...] = ("behavior", "gradprobe", "repmaps")
    probe: dict = field(default_factory=dict)
    angular_sigma: float = 20.0

    def __post_init__(self):
        if not self.seeds:
            self.seeds = tuple(range(self.n_seeds))
        self.seeds = tuple(int(s) for s in self.seeds)
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        self.n_seeds = len(self.seeds)
        unknown = set(self.analyses) - {"behavior", "gradprobe", "repmaps"}
        if unknown:
            raise ConfigError(f"unknown analyses {sorted(unknown)}")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        try:
            arena = ArenaConfig(**d.pop("arena", {}))
            net = d.pop("net", {})
            trainc = TrainConfig(**d.pop("train", {}))
            aux = AuxSpec.parse(d.pop("aux", []))
            classifier = thresholds_from_dict(d.pop("classifier", {}))
            if "analyses" in d:
                d["analyses"] = tuple(d["analyses"])
            if "seeds" in d:
                d["seeds"] = tuple(d["seeds"])
            return cls(arena=arena, hidden_width=int(net.get("hidden_width", 16)), train=trainc,
                       aux=aux, classifier=classifier, **d)
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "arena": self.arena.to_dict(),
            "net": {"hidden_width": self.hidden_width},
            "train": self.train.to_dict(),
            "aux": list(self.aux.tasks),
            "seeds": list(self.seeds),
            "output_root": self.output_root,
            "eval_seed": self.eval_seed,
            "classifier": thresholds_to_dict(self.classifier),
            "analyses": list(self.analyses),
            "probe": self.probe,
            "angular_sigma": self.angular_sigma,
        }

    def config_hash(self) -> str:
        """Stable under key reordering: hashes canonical sorted JSON. The output location is excluded."""
        d = self.to_dict()
        d.pop("output_root")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @property
    def suite_dir(self) -> Path:
        return Path(self.output_root) / self.name


# run-level helpers ---------------------------------------------------------------

def load_run(run_dir) -> dict:
    info = json.loads((Path(run_dir) / "run.json").read_text())
    info["arena_config"] = ArenaConfig(**info["arena"])
    info["aux_spec"] = AuxSpec(tuple(info["tasks"]))
    info["train_config"] = TrainConfig(**info["train"])
    return info


def run_checkpoints(run_dir, steps=None) -> dict[int, Path]:
    """Existing checkpoint files keyed by step (missing requested steps are omitted)."""
    run_dir = Path(run_dir)
    if steps is None:
        steps = load_run(run_dir)["train"]["checkpoint_steps"]
    return {int(s): run_dir / checkpoint_name(s) for s in steps if (run_dir / checkpoint_name(s)).exists()}


def find_eval_poses(run_dir, arena_config: ArenaConfig, seed: int = 20240101) -> np.ndarray:
    """Evaluation poses from the run or its suite directory; created once if absent."""
    run_dir = Path(run_dir)
    for d in (run_dir, run_dir.parent):
        if (d / EVAL_POSES_FILE).exists():
            return load_eval_poses(d / EVAL_POSES_FILE)
    poses = make_eval_poses(seed, arena_config)
    save_eval_poses(run_dir / EVAL_POSES_FILE, poses)
    return poses


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for r in rows:
            w.writerow([f"{v:.6g}" if isinstance(v, float) else v for v in r])


def classify_run(run_dir, thresholds: Thresholds | None = None, gallery: int = 3,
                 eval_seed: int = 20240101) -> Path:
    """Strategy fractions per checkpoint -> ``strategies.csv``, per-episode ``episodes.csv``, PNG gallery."""
    run_dir = Path(run_dir)
    info = load_run(run_dir)
    cfg = info["arena_config"]
    poses = find_eval_poses(run_dir, cfg, eval_seed)
    steps = info["train"]["checkpoint_steps"]
    ckpts = run_checkpoints(run_dir, steps)
    rows, episodes = [], []
    gal = run_dir / "gallery"
    gal.mkdir(exist_ok=True)
    for step in steps:
        if step not in ckpts:
            rows.extend((step, s.value, "") for s in STRATEGIES)  # explicit gap
            continue
        trajs, classes, frac = evaluate_checkpoint(load_checkpoint(ckpts[step]), cfg, poses, thresholds)
        rows.extend((step, s.value, frac[s.value]) for s in STRATEGIES)
        shown = {s: 0 for s in STRATEGIES}
        for i, (t, c) in enumerate(zip(trajs, classes)):
            f = extract_features(t, cfg, thresholds)
            episodes.append((step, i, c.value, t.length, int(t.reached_goal), f.path_efficiency,
                             f.angular_sweep, f.wall_dist_cv, f.max_dwell, f.corners_visited))
            if shown[c] < gallery:
                render_trajectory_image(t, cfg, gal / f"ckpt{step:08d}_{c.value}_{i:03d}.png")
                shown[c] += 1
    _write_csv(run_dir / "strategies.csv", ["checkpoint", "class", "fraction"], rows)
    _write_csv(run_dir / "episodes.csv",
               ["checkpoint", "episode", "class", "length", "success", "path_efficiency",
                "angular_sweep", "wall_dist_cv", "max_dwell", "corners_visited"], episodes)
    return run_dir / "strategies.csv"


def gradsim_run(run_dir, task: str | None = None, seed: int = 0, probe: dict | None = None) -> Path:
    """Cosine-similarity probe over every checkpoint -> ``cosine.csv``."""
    from .gradprobe import probe_reward, probe_supervised

    run_dir = Path(run_dir)
    info = load_run(run_dir)
    spec = AuxSpec.parse(task) if task else info["aux_spec"]
    if not spec.tasks:
        raise ConfigError("run has no auxiliary task to probe")
    probe = probe or {}
    rows = []
    for step, path in run_checkpoints(run_dir).items():
        params = load_checkpoint(path)
        if spec.heads:
            recs = probe_supervised(params, info["arena_config"], AuxSpec(tuple(h.name for h in spec.heads)),
                                    seed=seed, checkpoint=step, config=info["train_config"], **probe)
            rows += [(r.checkpoint, r.batch, "" if r.cosine is None else r.cosine, r.goal_rewards, "supervised")
                     for r in recs]
        if spec.reward_tasks:
            reward_probe = {k: v for k, v in probe.items() if k not in ("n_reference", "reference_size")}
            recs = probe_reward(params, info["arena_config"], AuxSpec(spec.reward_tasks), seed=seed,
                                checkpoint=step, config=info["train_config"], **reward_probe)
            rows += [(r.checkpoint, r.batch, "" if r.cosine is None else r.cosine, r.goal_rewards, "reward")
                     for r in recs]
    _write_csv(run_dir / "cosine.csv", ["checkpoint", "batch", "cosine", "goal_rewards", "protocol"], rows)
    return run_dir / "cosine.csv"


def repmaps_run(run_dir, eval_seed: int = 20240101, angular_sigma: float = 20.0,
                render: bool = True) -> Path:
    """Per-node representation scores per checkpoint -> ``rep_scores.csv``, heatmap CSVs and SVGs."""
    from . import plotting
    from .repmaps import angle_grid, collect_traces, node_scores

    run_dir = Path(run_dir)
    info = load_run(run_dir)
    cfg = info["arena_config"]
    poses = find_eval_poses(run_dir, cfg, eval_seed)
    out = run_dir / "heatmaps"
    out.mkdir(exist_ok=True)
    rows = []
    ckpts = run_checkpoints(run_dir)
    last = max(ckpts) if ckpts else None
    for step, path in ckpts.items():
        trace = collect_traces(load_checkpoint(path), cfg, poses)
        heat, dirs, s, d = node_scores(trace, cfg, angular_sigma)
        rows += [(step, j, s[j], d[j]) for j in range(len(s))]
        np.savetxt(out / f"ckpt{step:08d}_spatial.csv", heat, delimiter=",", fmt="%.6g",
                   header="one column per node; rows are grid points, x fastest", comments="")
        np.savetxt(out / f"ckpt{step:08d}_direction.csv", dirs, delimiter=",", fmt="%.6g",
                   header="one column per node; rows are heading grid points from -pi", comments="")
        if render and step == last:
            plotting.heatmap_panel(heat, s, out / f"ckpt{step:08d}_spatial.svg")
            plotting.direction_panel(dirs, d, angle_grid(dirs.shape[0]), out / f"ckpt{step:08d}_direction.svg")
    _write_csv(run_dir / "rep_scores.csv", ["checkpoint", "node", "spatial_score", "direction_score"], rows)
    return run_dir / "rep_scores.csv"


def checkpoint_roundtrip(path) -> ParamSet:
    """Load a checkpoint, re-save it to a temporary file and verify the reload is bit-identical."""
    import tempfile

    params = load_checkpoint(path)
    with tempfile.TemporaryDirectory() as tmp:
        again = load_checkpoint(save_checkpoint(Path(tmp) / "roundtrip.bin", params, load_metadata(path)))
    if again.config != params.config or again.flat.tobytes() != params.flat.tobytes():
        raise CheckpointError(f"{path}: roundtrip changed the parameters")
    return params


# suites --------------------------------------------------------------------------

def _train_seed(args):
    cfg_dict, seed, run_dir = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    t0 = time.time()
    train(cfg.train, cfg.arena, cfg.aux, seed, run_dir, cfg.hidden_width)
    return seed, time.time() - t0


def _atomic_json(path: Path, obj) -> None:
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True))
    tmp.replace(path)


def max_workers() -> int:
    try:
        return max(1, int(os.environ.get("MWM_LAB_THREADS", "1")))
    except ValueError:
        return 1


def run_suite(config: ExperimentConfig, force: bool = False) -> Path:
    """Train every seed, run the configured analyses, and maintain ``manifest.json``.

    Existing artifacts are reused, so an interrupted suite resumes where it
    stopped. A completed suite with the same config hash is refused unless
    ``force``. Raises ``RuntimeError`` listing failures when any step failed.
    """
    suite = config.suite_dir
    suite.mkdir(parents=True, exist_ok=True)
    mpath = suite / MANIFEST
    h = config.config_hash()
    previous = {}
    if mpath.exists():
        old = json.loads(mpath.read_text())
        if old.get("config_hash") != h and not force:
            raise ConfigError(f"{suite} holds a suite with a different config; use --force")
        if old.get("status") == "complete" and not force:
            raise SuiteExistsError(f"suite {suite} already complete (hash {h}); use --force to rerun")
        previous = old.get("runs", {})
    (suite / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True))
    if not (suite / EVAL_POSES_FILE).exists():
        save_eval_poses(suite / EVAL_POSES_FILE, make_eval_poses(config.eval_seed, config.arena))
    manifest = {"name": config.name, "config_hash": h, "code_version": __version__, "status": "running",
                "started": time.time(), "runs": {}, "artifacts": [str(suite / "config.json"),
                                                                  str(suite / EVAL_POSES_FILE)],
                "failures": []}
    _atomic_json(mpath, manifest)

    wall = {int(k): v.get("wall_clock_s") for k, v in previous.items()}
    todo = []
    for seed in config.seeds:
        rd = suite / f"seed_{seed:03d}"
        if force or not (rd / "run.json").exists():
            todo.append((config.to_dict(), seed, str(rd)))
    if todo:
        workers = min(max_workers(), len(todo))
        if workers > 1:
            with ProcessPoolExecutor(workers) as ex:
                futures = [(a[1], ex.submit(_train_seed, a)) for a in todo]
                for seed, fut in futures:
                    try:
                        wall[seed] = fut.result()[1]
                    except Exception as e:  # recorded, suite continues
                        manifest["failures"].append(f"train seed {seed}: {e!r}")
        else:
            for a in todo:
                try:
                    wall[a[1]] = _train_seed(a)[1]
                except Exception as e:
                    manifest["failures"].append(f"train seed {a[1]}: {e!r}")

    for seed in config.seeds:
        rd = suite / f"seed_{seed:03d}"
        entry = {"seed": seed, "dir": str(rd), "config_hash": h, "code_version": __version__,
                 "wall_clock_s": wall.get(seed), "checkpoints": [], "log": str(rd / "log.csv"), "artifacts": []}
        if not (rd / "run.json").exists():
            manifest["runs"][str(seed)] = entry
            continue
        steps = [
            ("behavior", "strategies.csv", lambda: classify_run(rd, config.classifier, eval_seed=config.eval_seed)),
            ("gradprobe", "cosine.csv", lambda: gradsim_run(rd, seed=seed, probe=config.probe)),
            ("repmaps", "rep_scores.csv", lambda: repmaps_run(rd, config.eval_seed, config.angular_sigma)),
        ]
        for name, fname, fn in steps:
            if name not in config.analyses or (name == "gradprobe" and not config.aux.tasks):
                continue
            if (rd / fname).exists() and not force:
                continue
            try:
                fn()
            except Exception as e:
                manifest["failures"].append(f"{name} seed {seed}: {e!r}")
        entry["checkpoints"] = sorted(str(p) for p in rd.glob("*.bin"))
        entry["artifacts"] = sorted(str(p) for p in rd.rglob("*") if p.is_file())
        manifest["runs"][str(seed)] = entry
        _atomic_json(mpath, manifest)

    if "repmaps" in config.analyses and "behavior" in config.analyses:
        try:
            from .figures import score_report
            p = score_report(suite)
            manifest["artifacts"] += [str(p), str(p.with_suffix(".schema.json")), str(suite / "rep_fit.json")]
        except Exception as e:
            manifest["failures"].append(f"score_report: {e!r}")
    manifest["status"] = "partial" if manifest["failures"] else "complete"
    manifest["finished"] = time.time()
    manifest["artifacts"] = sorted(set(manifest["artifacts"]))
    _atomic_json(mpath, manifest)
    if manifest["failures"]:
        raise RuntimeError("suite finished with failures: " + "; ".join(manifest["failures"]))
    return suite
