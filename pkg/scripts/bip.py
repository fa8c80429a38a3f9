#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Command-line front door of the BIP toolkit.

Usage:
  python scripts/bip.py check datasets/models/mutex.bip
  python scripts/bip.py simulate datasets/models/traffic_light.bip --seed 1 --steps 100
  python scripts/bip.py verify datasets/models/mutex.bip --deadlock --mode compositional
  python scripts/bip.py verify datasets/models/mutex.bip --property mutual_exclusion --states-csv states.csv
  python scripts/bip.py apply datasets/models/mutex.bip --arch MutexArch --arch PrecedenceArch \\
      --operands Task1,Task2 --out composed.bip
  python scripts/bip.py flatten datasets/models/mutex.bip --out mutex.img
  python scripts/bip.py run-image mutex.img --seed 7 --steps 1000

Reports (diagnostics, traces, verdicts, models) go to stdout or --out; the log
goes to stderr. BIP_MAX_STATES and BIP_MAX_SECONDS set the default
exploration limits; BIP_STEPS sets the default run length.
"""

import argparse
import enum
import logging
import os
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import List, Optional

import pandas as pd

from arch import ArchitectureError, certify, compose, load_architecture
from arch import apply as apply_architecture
from engine import EngineConfig, RunStatus, run
from expressions import BipError
from flatten import ImageError, emit, flatten, interpret
from interaction import build_system
from textlang import ModelError, load_model, parse, pretty_print
from verify import (
    DEFAULT_MAX_SECONDS, DEFAULT_MAX_STATES, Limits, ResourceLimitError, Status,
    check_deadlock, check_deadlock_compositional, check_safety, explore,
)

logger = logging.getLogger("bip")

DEFAULT_STEPS = int(os.environ.get("BIP_STEPS", 1000))


class ExitStatus(enum.IntEnum):
    OK = 0
    VIOLATED = 1
    USAGE = 2
    RESOURCE_LIMIT = 3
    INTERNAL = 4


VERDICT_STATUS = {
    Status.HOLDS: ExitStatus.OK,
    Status.VIOLATED: ExitStatus.VIOLATED,
    Status.POTENTIAL_VIOLATION: ExitStatus.VIOLATED,
    Status.RESOURCE_LIMIT: ExitStatus.RESOURCE_LIMIT,
}

RUN_STATUS = {
    RunStatus.COMPLETED: ExitStatus.OK,
    RunStatus.DEADLOCK: ExitStatus.VIOLATED,
    RunStatus.ERROR: ExitStatus.VIOLATED,
}


@contextmanager
def _output(path: Optional[str], mode: str = "w"):
    """Yield a stream for `path`, or stdout when no path is given."""
    if not path or path == "-":
        yield sys.stdout
        return
    out_dir = os.path.dirname(path)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    with open(path, mode, encoding=None if "b" in mode else "utf-8") as stream:
        yield stream


def _limits(args) -> Limits:
    return Limits(max_states=args.max_states, max_seconds=args.max_seconds)


def _firings_table(firings) -> str:
    if not firings:
        return "(no interaction fired)"
    df = pd.DataFrame(sorted(firings.items()), columns=["connector", "firings"])
    return df.to_string(index=False)


# -------------------------------------------------------------------
# COMMANDS
# -------------------------------------------------------------------
def cmd_check(args) -> ExitStatus:
    path = Path(args.path)
    model, diagnostics = parse(path.read_bytes().decode("utf-8", errors="replace"), str(path))
    for d in diagnostics:
        print(d)
    if diagnostics:
        df = pd.DataFrame([d.to_dict() for d in diagnostics])
        logger.info(f"\nDiagnostics:\n{df.to_string(index=False)}")
    errors = [d for d in diagnostics if d.severity == "error"]
    if errors:
        logger.error(f"{path}: {len(errors)} error(s)")
        return ExitStatus.USAGE
    system = build_system(model)
    stats = pd.DataFrame([{
        "root": system.root.name,
        "atoms": len(system.atoms),
        "connectors": len(system.nodes),
        "interactions": len(system.interactions),
        "priorities": sum(len(c.priorities) for c in model.compounds),
        "properties": len(model.properties),
        "architectures": len(model.architectures),
    }])
    logger.info(f"\n{stats.to_string(index=False)}")
    print(f"{path}: ok")
    return ExitStatus.OK


def cmd_simulate(args) -> ExitStatus:
    system = build_system(load_model(args.path))
    with _output(args.trace) as sink:
        result = run(system, EngineConfig(seed=args.seed, max_steps=args.steps, trace_sink=sink,
                                          progress=args.progress))
    logger.info(f"\nFirings:\n{_firings_table(result.firings)}")
    print(result.summary(), file=sys.stderr if not args.trace else sys.stdout)
    return RUN_STATUS[result.status]


def cmd_verify(args) -> ExitStatus:
    model = load_model(args.path)
    system = build_system(model)
    if args.mode == "compositional":
        if args.property:
            logger.error("compositional mode only checks deadlock-freedom")
            return ExitStatus.USAGE
        verdict = check_deadlock_compositional(system, _limits(args))
    else:
        space = explore(system, _limits(args), progress=args.progress)
        if args.states_csv:
            space.to_frame().to_csv(args.states_csv, index=False, encoding="utf-8")
            logger.info(f"State table saved to: {args.states_csv}")
        if args.property:
            prop = model.find_property(args.property)
            if prop is None:
                logger.error(f"no property named '{args.property}'")
                return ExitStatus.USAGE
            verdict = check_safety(space, prop)
        else:
            verdict = check_deadlock(space)
    for event in verdict.trace:
        print(event.to_json())
    print(verdict.to_json())
    print(verdict.summary())
    return VERDICT_STATUS[verdict.status]


def cmd_apply(args) -> ExitStatus:
    model = load_model(args.path)
    arch = load_architecture(model, args.arch[0])
    for name in args.arch[1:]:
        arch = compose(arch, load_architecture(model, name))
    operands = []
    for name in [n.strip() for n in args.operands.split(",") if n.strip()]:
        kind = model.component_type(name)
        if kind is None:
            logger.error(f"no component type named '{name}'")
            return ExitStatus.USAGE
        operands.append(kind)
    result = apply_architecture(arch, operands, library=model, name=args.name)
    with _output(args.out) as out:
        out.write(pretty_print(result.model))
    if args.out:
        logger.info(f"Composed model saved to: {args.out}")
    if args.certify:
        certificate = certify(arch, operands, _limits(args), library=model)
        print(certificate.summary(), file=sys.stderr if not args.out else sys.stdout)
        return VERDICT_STATUS[certificate.status]
    return ExitStatus.OK


def cmd_flatten(args) -> ExitStatus:
    system = build_system(load_model(args.path))
    automaton = flatten(system, _limits(args), progress=args.progress)
    image = emit(automaton)
    with _output(args.out, "wb") as out:
        (out.buffer if out is sys.stdout else out).write(image)
    sizes = pd.DataFrame([automaton.table_sizes()])
    sizes["bytes"] = len(image)
    logger.info(f"\n{sizes.to_string(index=False)}")
    return ExitStatus.OK


def cmd_run_image(args) -> ExitStatus:
    image = Path(args.image).read_bytes()
    with _output(args.trace) as sink:
        result = interpret(image, seed=args.seed, steps=args.steps, trace_sink=sink, progress=args.progress)
    logger.info(f"\nFirings:\n{_firings_table(result.firings)}")
    print(result.summary(), file=sys.stderr if not args.trace else sys.stdout)
    return RUN_STATUS[result.status]


# -------------------------------------------------------------------
# ARGUMENTS
# -------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bip", description="BIP modeling, simulation and verification toolkit.")
    parser.add_argument("--verbose", action="store_true", help="Debug logging (one line per fired interaction).")
    parser.add_argument("--quiet", action="store_true", help="Only warnings and errors.")
    parser.add_argument("--progress", action="store_true", help="Show progress bars.")
    sub = parser.add_subparsers(dest="command", required=True)

    def limits(p):
        p.add_argument("--max-states", type=int, default=DEFAULT_MAX_STATES,
                       help="State cap for exploration (default: BIP_MAX_STATES or 1000000).")
        p.add_argument("--max-seconds", type=float, default=DEFAULT_MAX_SECONDS,
                       help="Wall-clock cap for exploration (default: BIP_MAX_SECONDS or 60).")

    def steps(p):
        p.add_argument("--steps", type=int, default=DEFAULT_STEPS,
                       help="Stop after this many steps (default: BIP_STEPS or 1000).")
        p.add_argument("--until-deadlock", dest="steps", action="store_const", const=None,
                       help="Run without a step bound until nothing can fire.")

    p = sub.add_parser("check", help="Parse and validate a model.")
    p.add_argument("path")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("simulate", help="Run the engine and write a trace.")
    p.add_argument("path")
    p.add_argument("--seed", type=int, default=0)
    steps(p)
    p.add_argument("--trace", type=str, default=None, help="Trace file (default: stdout).")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="Check deadlock-freedom or a safety property.")
    p.add_argument("path")
    what = p.add_mutually_exclusive_group(required=True)
    what.add_argument("--property", type=str, help="Name of a safety property of the model.")
    what.add_argument("--deadlock", action="store_true", help="Check deadlock-freedom.")
    p.add_argument("--mode", choices=["exact", "compositional"], default="exact")
    p.add_argument("--states-csv", type=str, default=None, help="Save the explored state table (exact mode).")
    limits(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("apply", help="Apply (composed) architectures to operand types.")
    p.add_argument("path")
    p.add_argument("--arch", action="append", required=True, help="Architecture name; repeat to compose.")
    p.add_argument("--operands", type=str, required=True, help="Comma-separated component types, one per parameter.")
    p.add_argument("--name", type=str, default=None, help="Name of the produced compound.")
    p.add_argument("--out", type=str, default=None, help="Output .bip file (default: stdout).")
    p.add_argument("--certify", action="store_true", help="Also check the property and deadlock-freedom.")
    limits(p)
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("flatten", help="Compile a model into an automaton image.")
    p.add_argument("path")
    p.add_argument("--out", type=str, required=True, help="Image file.")
    limits(p)
    p.set_defaults(func=cmd_flatten)

    p = sub.add_parser("run-image", help="Execute an automaton image.")
    p.add_argument("image")
    p.add_argument("--seed", type=int, default=0)
    steps(p)
    p.add_argument("--trace", type=str, default=None, help="Trace file (default: stdout).")
    p.set_defaults(func=cmd_run_image)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_:
        return ExitStatus.OK if exit_.code == 0 else ExitStatus.USAGE
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format='%(asctime)s - %(levelname)s - %(message)s')
    logging.getLogger().setLevel(level)
    try:
        return int(args.func(args))
    except ModelError as err:
        for d in err.diagnostics:
            print(d, file=sys.stderr)
        logger.error(str(err))
        return ExitStatus.USAGE
    except (FileNotFoundError, IsADirectoryError) as err:
        logger.error(f"cannot read {err.filename}")
        return ExitStatus.USAGE
    except ResourceLimitError as err:
        logger.error(str(err))
        return ExitStatus.RESOURCE_LIMIT
    except (ArchitectureError, ImageError, BipError) as err:
        logger.error(f"{type(err).__name__}: {err}")
        return ExitStatus.USAGE
    except Exception:
        logger.exception("internal error")
        return ExitStatus.INTERNAL


if __name__ == "__main__":
    sys.exit(main())
