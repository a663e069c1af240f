"""Command-line interface. Exit codes: 0 success, 2 configuration error, 3 partial suite failure."""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .arena import ArenaConfig, ConfigError, Variant, raycast_arrays
from .figures import FIGURES, MissingInputsError
from .net import CheckpointError

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 2, 3

log = logging.getLogger("mwmlab")


def _cmd_train(a):
    from .harness import ExperimentConfig
    from .trainer import train

    cfg = ExperimentConfig.load(a.config)
    out = train(cfg.train, cfg.arena, cfg.aux, a.seed, a.out, cfg.hidden_width, progress=a.verbose)
    print(json.dumps({"final": out["final"], "log": out["log"], "total_steps": out["total_steps"]}))


def _thresholds(path):
    from .behavior import Thresholds, thresholds_from_dict
    from .harness import ExperimentConfig

    if not path:
        return Thresholds(), 20240101
    cfg = ExperimentConfig.load(path)
    return cfg.classifier, cfg.eval_seed


def _cmd_classify(a):
    from .harness import classify_run

    th, eval_seed = _thresholds(a.config)
    print(classify_run(a.run, th, gallery=a.gallery, eval_seed=eval_seed))


def _cmd_gradsim(a):
    from .harness import gradsim_run

    probe = {k: v for k, v in (("warmup_steps", a.warmup), ("n_batches", a.n_batches),
                               ("batch_size", a.batch_size)) if v is not None}
    print(gradsim_run(a.run, a.task, seed=a.seed, probe=probe))


def _cmd_repmaps(a):
    from .harness import repmaps_run

    print(repmaps_run(a.run, angular_sigma=a.angular_sigma))


def _cmd_suite(a):
    from .harness import ExperimentConfig, run_suite

    cfg = ExperimentConfig.load(a.config)
    if a.output_root:
        cfg.output_root = a.output_root
    print(run_suite(cfg, force=a.force))


def _cmd_figures(a):
    from .figures import emit_figure_data

    opts = {}
    if a.at:
        opts["at"] = tuple(a.at)
    if a.ci:
        opts["ci_method"] = a.ci
    for p in emit_figure_data(a.suite, a.figure, a.out, **opts):
        print(p)


def _cmd_inspect_env(a):
    from . import plotting

    cfg = ArenaConfig(variant=Variant(a.variant))
    x, y, h = a.pose
    codes, dists = raycast_arrays(np.array([x]), np.array([y]), np.array([h]), cfg)
    out = plotting.raycast_fan(a.out, cfg, (x, y, h), codes[0], dists[0])
    for off, c, d in zip(cfg.ray_offsets, codes[0], dists[0]):
        print(f"offset={off:+.3f} code={int(c)} dist={d:.2f}")
    print(out)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mwm-lab", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", help="train one agent")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_train)

    s = sub.add_parser("classify", help="classify evaluation episodes of every checkpoint of a run")
    s.add_argument("--run", required=True)
    s.add_argument("--config", help="experiment config supplying classifier thresholds")
    s.add_argument("--gallery", type=int, default=3, help="PNG examples per class and checkpoint")
    s.set_defaults(func=_cmd_classify)

    s = sub.add_parser("gradsim", help="gradient cosine-similarity probe")
    s.add_argument("--run", required=True)
    s.add_argument("--task", help="task to probe (defaults to the run's own tasks)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--warmup", type=int)
    s.add_argument("--n-batches", type=int)
    s.add_argument("--batch-size", type=int)
    s.set_defaults(func=_cmd_gradsim)

    s = sub.add_parser("repmaps", help="representation maps and scores")
    s.add_argument("--run", required=True)
    s.add_argument("--angular-sigma", type=float, default=20.0)
    s.set_defaults(func=_cmd_repmaps)

    s = sub.add_parser("suite", help="train and analyse all seeds of an experiment")
    s.add_argument("--config", required=True)
    s.add_argument("--output-root")
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=_cmd_suite)

    s = sub.add_parser("figures", help="emit CSV, schema and SVG for a figure")
    s.add_argument("--suite", action="append", required=True, help="suite directory; repeat to compare")
    s.add_argument("--figure", required=True, choices=FIGURES)
    s.add_argument("--out", required=True)
    s.add_argument("--at", type=float, nargs="+", help="boxplot time points in steps")
    s.add_argument("--ci", choices=("t", "bootstrap"))
    s.set_defaults(func=_cmd_figures)

    s = sub.add_parser("inspect-env", help="dump the raycast fan of a pose as SVG")
    s.add_argument("--variant", default=Variant.NorthPoster.value, choices=[v.value for v in Variant])
    s.add_argument("--pose", type=float, nargs=3, default=(150.0, 150.0, math.pi / 2), metavar=("X", "Y", "H"))
    s.add_argument("--out", default="raycast_fan.svg")
    s.set_defaults(func=_cmd_inspect_env)
    return p


def main(argv=None) -> int:
    from .harness import SuiteExistsError

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ConfigError, CheckpointError, SuiteExistsError, MissingInputsError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except RuntimeError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARTIAL if args.command == "suite" else 1
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
