"""Command-line front end: ``train``, ``infer`` and ``gen`` plus two helpers.

Exit codes: 0 success, 1 usage error, 2 data error, 3 degenerate model.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import archive as archive_io
from .config import load_config
from .errors import DataError, DegenerateError
from .hand import default_hand, load_hand, load_trajectory, save_hand, save_trajectory
from .pipeline import Example, candidate_to_dict, infer, scripted_grasp, train
from .surface import load_cloud, save_cloud
from .synth import ShapeSpec, generate_cloud, parse_dims

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DEGENERATE = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(n: int):
    def parse(text: str):
        values = parse_dims(text)
        if len(values) != n:
            raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers")
        return values

    return parse


def cmd_train(args) -> int:
    clouds, trajs = args.cloud or [], args.traj or []
    if not clouds:
        raise UsageError("train needs at least one --cloud/--traj example")
    if len(clouds) != len(trajs):
        raise UsageError("give one --traj per --cloud")
    labels = args.type or ["default"]
    if len(labels) == 1:
        labels = labels * len(clouds)
    if len(labels) != len(clouds):
        raise UsageError("give one --type for all examples or one per example")
    config = load_config(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    hand = load_hand(args.hand) if args.hand else default_hand()
    examples = [
        Example(load_cloud(c), load_trajectory(t), label, Path(c).stem)
        for c, t, label in zip(clouds, trajs, labels)
    ]
    model = train(hand, examples, config)
    for t in model.types:
        print(f"grasp type {t.type_id}: {t.b.shape[1]} examples")
        for i, link in enumerate(hand.links):
            norms = " ".join(f"{v:.4f}" for v in t.norms[i])
            flags = "".join("1" if f else "0" for f in t.b[i])
            print(f"  link {i} {link.name:<16} c={int(t.c[i])} b={flags} norms=[{norms}]")
    archive_io.save_archive(args.out, model)
    return EXIT_OK


def cmd_infer(args) -> int:
    if not args.cloud or len(args.cloud) != 1:
        raise UsageError("infer needs exactly one --cloud")
    model = archive_io.load_archive(args.archive)
    config = load_config(args.config) if args.config else model.config
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    cloud = load_cloud(args.cloud[0])
    result = infer(model, cloud, config)
    top = result.candidates[: args.top]
    out = [candidate_to_dict(c, rank) for rank, c in enumerate(top, start=1)]
    Path(args.out).write_text(json.dumps(out) + "\n")
    for entry in out:
        print(
            f"#{entry['rank']} type={entry['grasp_type']} log_norm={entry['log_normalized_likelihood']:.4f} "
            f"collision={entry['collision_expert']:.4f}"
        )
    return EXIT_OK


def cmd_gen(args) -> int:
    spec = ShapeSpec(
        args.shape,
        parse_dims(args.dims),
        density=args.density,
        viewpoint=tuple(args.viewpoint),
        noise=args.noise,
        full_view=args.full_view,
    )
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    cloud = generate_cloud(spec, rng)
    save_cloud(args.out, cloud)
    print(f"wrote {len(cloud)} points to {args.out}")
    return EXIT_OK


def cmd_close(args) -> int:
    if not args.cloud or len(args.cloud) != 1:
        raise UsageError("close needs exactly one --cloud")
    config = load_config(args.config)
    hand = load_hand(args.hand) if args.hand else default_hand()
    cloud = load_cloud(args.cloud[0])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        traj = scripted_grasp(
            hand, cloud, args.center, args.yaw, args.tilt,
            threshold=config.contact_threshold, rate=config.closing_rate,
        )
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    save_trajectory(args.out, traj)
    print(f"wrote {len(traj)} states to {args.out}; equilibrium joints {np.round(traj.equilibrium.config, 4).tolist()}")
    return EXIT_OK


def cmd_hand(args) -> int:
    save_hand(args.out, default_hand())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="uagrasp", description="Learn and transfer grasps for underactuated hands.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="learn grasp models from example grasps")
    p.add_argument("--hand", help="hand description JSON (default: built-in two-finger hand)")
    p.add_argument("--cloud", nargs="+", help="example point clouds (PLY)")
    p.add_argument("--traj", nargs="+", help="example trajectories (JSON), one per cloud")
    p.add_argument("--type", nargs="+", help="grasp type label, one for all or one per example")
    p.add_argument("--config", help="run configuration JSON")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="archive path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="synthesise ranked grasps on a new cloud")
    p.add_argument("archive", help="model archive from 'train'")
    p.add_argument("--cloud", nargs="+", help="query point cloud (PLY)")
    p.add_argument("--config", help="run configuration JSON (default: the archive's)")
    p.add_argument("--top", type=int, default=10, help="number of grasps to write")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="grasp list JSON")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("gen", help="write a synthetic single-view point cloud")
    p.add_argument("shape", choices=["sphere", "cylinder", "box", "ellipsoid"])
    p.add_argument("--dims", required=True, help="comma-separated dimensions in metres")
    p.add_argument("--density", type=float, default=2.0e5, help="points per square metre")
    p.add_argument("--viewpoint", type=_floats(3), default=(0.0, 0.0, 0.5))
    p.add_argument("--noise", type=float, default=0.0, help="Gaussian noise std (m)")
    p.add_argument("--full-view", action="store_true", help="keep back-facing points")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="PLY path")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("close", help="generate a scripted closing trajectory on a cloud")
    p.add_argument("--hand")
    p.add_argument("--cloud", nargs="+")
    p.add_argument("--config")
    p.add_argument("--center", type=_floats(3), default=(0.0, 0.0, 0.0))
    p.add_argument("--yaw", type=float, default=0.0)
    p.add_argument("--tilt", type=_floats(2), default=(0.0, 0.0))
    p.add_argument("--out", required=True, help="trajectory JSON")
    p.set_defaults(func=cmd_close)

    p = sub.add_parser("hand", help="write the built-in hand description")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_hand)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"uagrasp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"uagrasp: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DegenerateError as exc:
        print(f"uagrasp: degenerate model: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE


if __name__ == "__main__":
    sys.exit(main())
