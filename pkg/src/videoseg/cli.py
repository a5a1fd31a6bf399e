"""Command line front end: run, wonderland, eval, providers check.

Every flag mirrors a config key; flags win over the config file. Exit
codes follow the error taxonomy (0 ok, 2 config, 3 provider, 4 data).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import PASS_NAMES, RunConfig, load_config
from .errors import ConfigError, EngineError

log = logging.getLogger(__name__)


def _parse_provider_specs(items: list[str] | None) -> dict[str, str]:
    specs: dict[str, str] = {}
    for item in items or []:
        name, sep, endpoint = item.partition("=")
        if not sep or not name.strip() or not endpoint.strip():
            raise ConfigError(
                f"provider spec {item!r} is not Capability=endpoint"
            )
        specs[name.strip()] = endpoint.strip()
    return specs


def _merge_config(args: argparse.Namespace) -> RunConfig:
    """Config file first, then flag overrides; flags alone are enough."""
    if args.config:
        config = load_config(args.config)
    else:
        config = RunConfig(sequence_root=Path("."), names=[])
    if args.sequence_root:
        config.sequence_root = Path(args.sequence_root)
    if args.name:
        config.names = list(args.name)
    if getattr(args, "passes", None):
        config.passes = args.passes
    if args.out:
        config.out = Path(args.out)
    if args.seed is not None:
        config.seed = args.seed
    if getattr(args, "workers", None) is not None:
        config.workers = args.workers
    if args.providers:
        config.providers.update(_parse_provider_specs(args.providers))
    if args.strict_providers:
        config.strict_providers = True
    if getattr(args, "count", None) is not None:
        config.wonderland["count"] = args.count
    if getattr(args, "pool_manifest", None):
        config.wonderland["pool_manifest"] = args.pool_manifest
    if not config.names:
        raise ConfigError("no sequence names given (use --name or a config file)")
    return config


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="INI config file")
    parser.add_argument("--sequence-root", help="dataset root directory")
    parser.add_argument(
        "--name", action="append", help="sequence name (repeatable)"
    )
    parser.add_argument("--out", help="output root directory")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument(
        "--providers",
        action="append",
        metavar="CAP=ENDPOINT",
        help="external provider endpoint (repeatable)",
    )
    parser.add_argument("--strict-providers", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="videoseg",
        description="Three-pass semi-supervised video instance segmentation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the segmentation passes")
    _add_common_flags(run)
    run.add_argument("--passes", choices=PASS_NAMES, default=None)
    run.add_argument("--workers", type=int, default=None)

    wonder = sub.add_parser("wonderland", help="generate augmented pairs")
    _add_common_flags(wonder)
    wonder.add_argument("--count", type=int, default=None)
    wonder.add_argument("--pool-manifest", help="background pool TSV")
    wonder.add_argument("--workers", type=int, default=None)

    ev = sub.add_parser("eval", help="score predictions against ground truth")
    ev.add_argument("--pred", help="predicted labelmap directory")
    ev.add_argument("--gt", help="ground-truth labelmap directory")
    ev.add_argument("--tol", type=float, default=None)
    ev.add_argument("--percent", action="store_true")
    ev.add_argument("--json", action="store_true", dest="as_json")
    ev.add_argument(
        "--from-means",
        nargs=2,
        type=float,
        metavar=("J", "F"),
        help="combine region and boundary means into the global score",
    )

    providers = sub.add_parser("providers", help="provider utilities")
    psub = providers.add_subparsers(dest="providers_command", required=True)
    check = psub.add_parser("check", help="bridge conformance checks")
    check.add_argument("--endpoint", required=True)
    check.add_argument("--timeout", type=float, default=30.0)
    return parser


def _cmd_run(args: argparse.Namespace) -> int:
    from .pipeline import run_pipeline

    config = _merge_config(args)
    report = run_pipeline(config)
    for seq in report.sequences:
        print(
            f"{seq.name}: {seq.frames} frames, "
            f"instances {seq.instances}, passes {', '.join(seq.passes)}"
        )
    print(f"outputs: {report.out}")
    return 0


def _cmd_wonderland(args: argparse.Namespace) -> int:
    from .providers import PerceptionHub
    from .seqio import load_image, load_sequence
    from .wonderland import SceneIndex, generate_dataset, load_pool_manifest

    import numpy as np

    config = _merge_config(args)
    manifest = config.wonderland.get("pool_manifest") or ""
    if not manifest:
        raise ConfigError("wonderland needs a pool manifest")
    entries = load_pool_manifest(manifest)
    store = load_sequence(config.sequence_root, config.names[0])
    allow = {
        c.strip()
        for c in str(config.wonderland.get("allow_categories", "")).split(",")
        if c.strip()
    }
    with PerceptionHub(
        endpoints=dict(config.providers), strict=config.strict_providers
    ) as hub:
        features = np.stack(
            [hub.scene_feature(load_image(e.path)) for e in entries]
        )
        index = SceneIndex(
            entries,
            features,
            seed=config.seed,
            leaf_capacity=config.wonderland["leaf_capacity"],
            branch_cap=config.wonderland["branch_cap"],
        )
        out_dir = generate_dataset(
            store.frames[0],
            store.first_annotation,
            index,
            config.out,
            store.name,
            config.wonderland["count"],
            config.seed,
            hub=hub,
            categories=allow or None,
            workers=config.workers,
        )
    print(f"dataset: {out_dir}")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    from .metrics import evaluate_directories, global_score

    if args.from_means:
        print(f"{global_score(*args.from_means):g}")
        return 0
    if not args.pred or not args.gt:
        raise ConfigError("eval needs --pred and --gt (or --from-means)")
    report = evaluate_directories(
        args.pred, args.gt, tol=args.tol, percent=args.percent
    )
    if args.as_json:
        print(json.dumps(report.to_json_dict(), indent=2, sort_keys=True))
    else:
        print(report.format_table())
    return 0


def _cmd_providers_check(args: argparse.Namespace) -> int:
    from .providers.wire import run_conformance

    report = run_conformance(args.endpoint, timeout=args.timeout)
    for name, passed, detail in report.checks:
        tag = "PASS" if passed else "FAIL"
        line = f"{tag} {name}"
        if detail:
            line += f": {detail}"
        print(line)
    return 0 if report.all_passed else 3


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=logging.INFO, format="%(levelname)s %(name)s: %(message)s"
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "wonderland": _cmd_wonderland,
        "eval": _cmd_eval,
        "providers": _cmd_providers_check,
    }
    try:
        return handlers[args.command](args)
    except EngineError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.exit_code


if __name__ == "__main__":
    sys.exit(main())
