"""Command-line entry point.

Exit codes: 0 success, 1 usage, 2 validation (bad config or missing
prerequisite artifacts), 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

from . import __version__, pipeline
from .pipeline import RunConfig, ValidationError


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> _Parser:
    p = _Parser(prog="opcrecipe", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--out", help="run directory")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--clips", type=int, help="number of synthetic clips")
        sp.add_argument("--workers", type=int)
        sp.add_argument("--mode", choices=["deterministic", "remote",
                                           "remote-with-fallback"])
        sp.add_argument("--variant", choices=list(pipeline.VARIANTS))

    for name, extra in (
        ("gen", None), ("ingest", "files"), ("opc", None), ("rl-train", None),
        ("annotate", None), ("tree", None), ("emit", None), ("apply", None),
        ("report", None), ("svg", None),
    ):
        sp = sub.add_parser(name)
        common(sp)
        if extra == "files":
            sp.add_argument("files", nargs="+")
    return p


def _config_from_args(args) -> RunConfig:
    if args.config:
        cfg = pipeline.load_config(args.config)
    else:
        cfg = pipeline.config_from_dict({})
    if args.out:
        cfg = replace(cfg, run_dir=args.out)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed, ppo=replace(cfg.ppo, seed=args.seed))
    if args.clips is not None:
        cfg = replace(cfg, n_clips=args.clips)
    if args.workers is not None:
        cfg = replace(cfg, workers=args.workers)
    if args.mode is not None:
        cfg = replace(cfg, mode=args.mode)
    if args.variant is not None:
        cfg = replace(cfg, variant=args.variant)
    return cfg.validate()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
    except (ValidationError, json.JSONDecodeError, OSError) as exc:
        print(f"opcrecipe: invalid configuration: {exc}", file=sys.stderr)
        return 2
    try:
        if args.command == "gen":
            outs = pipeline.cmd_gen(cfg)
            print(f"wrote {len(outs)} clips under {cfg.run_dir}/layouts")
        elif args.command == "ingest":
            outs = pipeline.cmd_ingest(cfg, args.files)
            print(f"ingested {len(outs)} clips")
        elif args.command == "opc":
            path = pipeline.cmd_opc(cfg)
            print(f"baseline metrics: {path}")
        elif args.command == "rl-train":
            path = pipeline.cmd_rl_train(
                cfg, progress=lambda u, r: print(f"update {u}: mean reward {r:.1f}"))
            print(f"checkpoint: {path}")
        elif args.command == "annotate":
            outs = pipeline.cmd_annotate(cfg)
            print(f"wrote {len(outs)} label files")
        elif args.command == "tree":
            report = pipeline.cmd_tree(cfg)
            for kind, entry in report.items():
                if "holdout" in entry:
                    print(f"{kind}: holdout macro precision "
                          f"{entry['holdout']['macro_precision']:.3f}")
        elif args.command == "emit":
            path = pipeline.cmd_emit(cfg)
            print(f"recipe: {path}")
        elif args.command == "apply":
            variant = cfg.variant if cfg.variant != "opc" else "opc+llm"
            path = pipeline.cmd_apply(cfg, variant)
            print(f"{variant} metrics: {path}")
        elif args.command == "report":
            path, text = pipeline.cmd_report(cfg)
            print(text)
            print(f"report: {path}")
        elif args.command == "svg":
            outs = pipeline.cmd_svg(cfg, cfg.variant)
            print(f"wrote {len(outs)} overlays")
        else:  # pragma: no cover
            return 1
    except ValidationError as exc:
        print(f"opcrecipe: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"opcrecipe: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    return 0


def entry():  # console-script hook
    sys.exit(main())


if __name__ == "__main__":
    entry()
