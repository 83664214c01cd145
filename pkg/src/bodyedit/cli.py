"""Command-line surface.

Exit codes: 0 ok, 2 config error, 3 backend error, 4 geometry error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .backend import BackendError
from .body import FitSchemaError
from .compositor import RegionTouchesBorderError
from .core import NonProjectableError
from .pipeline import (ConfigError, PipelineConfig, PipelineStageError, ablate,
                       edit, evaluate, render_only, sweep_noise)
from .texturing import PartAbsentError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BACKEND = 3
EXIT_GEOMETRY = 4

_GEOMETRY_ERRORS = (NonProjectableError, PartAbsentError,
                    RegionTouchesBorderError, FitSchemaError)


def _load_config(args) -> PipelineConfig:
    if args.config:
        config = PipelineConfig.from_file(args.config)
    else:
        config = PipelineConfig()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "backend", None):
        overrides["backend"] = args.backend
    if getattr(args, "out", None):
        overrides["out_dir"] = args.out
    if getattr(args, "reference", None):
        overrides["reference"] = args.reference
    if getattr(args, "stage1_only", False):
        overrides["stage1_only"] = True
    if overrides:
        config = replace(config, **overrides)
    return config


def _common_flags(sub):
    sub.add_argument("--config", help="pipeline config JSON (or a manifest)")
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--backend", default=None)
    sub.add_argument("--out", default=None, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bodyedit",
        description="Re-pose / re-shape a person image and repair the render "
                    "with masked iterative refinement.")
    subs = parser.add_subparsers(dest="command", required=True)

    p_edit = subs.add_parser("edit", help="run the full pipeline")
    _common_flags(p_edit)
    p_edit.add_argument("--reference", help="reference image path")
    p_edit.add_argument("--stage1-only", action="store_true", dest="stage1_only")

    p_render = subs.add_parser("render-only", help="geometry stages only")
    _common_flags(p_render)
    p_render.add_argument("--reference", help="reference image path")

    p_sweep = subs.add_parser("sweep-noise", help="single-pass noise-strength sweep")
    _common_flags(p_sweep)
    p_sweep.add_argument("--strengths", default=None,
                         help="comma-separated fractions, default 0.1..0.9")

    p_ablate = subs.add_parser("ablate", help="mechanism ablation table")
    _common_flags(p_ablate)
    p_ablate.add_argument("--disable", default=None,
                          help="comma-separated subset of opt,iterate,reset "
                               "(default: the standard four-row table)")

    p_eval = subs.add_parser("evaluate", help="score generated/target/reference triples")
    p_eval.add_argument("--targets", required=True,
                        help="file with one 'generated,target,reference' line per case")
    p_eval.add_argument("--backend", default=None)
    p_eval.add_argument("--config", default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _GEOMETRY_ERRORS as exc:
        print(f"geometry error: {exc}", file=sys.stderr)
        return EXIT_GEOMETRY
    except (BackendError, KeyError) as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except PipelineStageError as exc:
        kind, code = ("geometry", EXIT_GEOMETRY) if isinstance(exc.cause, _GEOMETRY_ERRORS) \
            else ("backend", EXIT_BACKEND)
        print(f"{kind} error: {exc}", file=sys.stderr)
        return code


def _dispatch(args) -> int:
    if args.command == "edit":
        config = _load_config(args)
        manifest = edit(config)
        print(f"final image: {manifest.final_image}")
        print(f"chosen iterations: {manifest.chosen_iterations}")
        return EXIT_OK

    if args.command == "render-only":
        config = _load_config(args)
        path = render_only(config)
        print(f"rendered: {path}")
        return EXIT_OK

    if args.command == "sweep-noise":
        config = _load_config(args)
        if args.strengths:
            strengths = [float(s) for s in args.strengths.split(",")]
        else:
            strengths = None
        _, table = sweep_noise(config, strengths) if strengths else sweep_noise(config)
        print(table)
        return EXIT_OK

    if args.command == "ablate":
        config = _load_config(args)
        flags = set(args.disable.split(",")) if args.disable else None
        _, table, _ = ablate(config, flags)
        print(table)
        return EXIT_OK

    if args.command == "evaluate":
        with open(args.targets) as fh:
            pairs = [tuple(part.strip() for part in line.split(","))
                     for line in fh if line.strip()]
        backend = None
        if args.backend:
            from .backend import create_backend
            backend = create_backend(args.backend)
        _, table, errors = evaluate(pairs, backend)
        print(table)
        for idx, message in errors:
            print(f"pair {idx}: error: {message}", file=sys.stderr)
        return EXIT_OK

    raise ConfigError(f"unknown command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
