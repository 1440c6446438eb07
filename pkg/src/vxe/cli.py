"""Command-line interface.

Subcommands:
  run <config>                         run a configured environment
  fuzz <config>                        run the configured fuzz campaign
  lift <spec> <image> --addr A         lift blocks, print IR or --stats
  asm <spec> <source> -o out.bin       assemble a demo program
  trace <config> --out DIR             run with trace output redirected
  solve <constraint-file>              solve bitvector constraints

Exit status: 0 success, 1 user error, 2 internal error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import __version__

log = logging.getLogger(__name__)


def _cmd_run(args) -> int:
    from .config import load_config
    from .environment import run_vxe
    config = load_config(args.config)
    reasons = run_vxe(config, out_dir=args.out)
    for name, reason in sorted(reasons.items()):
        detail = f" ({reason.detail})" if reason.detail else ""
        print(f"{name}: {reason.kind} at 0x{reason.pc:x}{detail}")
    return 0


def _cmd_fuzz(args) -> int:
    from .config import load_config
    from .fuzz import run_fuzz
    config = load_config(args.config)
    report = run_fuzz(config, out_dir=args.out)
    print(report.summary_line())
    return 0


def _collect_blocks(spec, image_view, start):
    """Static traversal: follow direct branch targets and fallthroughs."""
    from .archspec import lift_block
    seen = {}
    work = [start]
    while work:
        addr = work.pop()
        if addr in seen or not image_view.is_mapped(addr):
            continue
        block = lift_block(spec, image_view, addr)
        if not block.instructions:
            continue
        seen[addr] = block
        last = block.instructions[-1]
        end = last.address + last.length_bytes
        const_id = spec.spaces.const.id
        if block.terminator_kind in ("fallthrough", "cbranch", "call"):
            work.append(end)
        for op in last.ops:
            if op.opcode in ("BRANCH", "CBRANCH", "CALL"):
                target = op.inputs[0]
                if target.space != const_id:
                    work.append(target.offset)
    return list(seen.values())


def _cmd_lift(args) -> int:
    from .archspec import ImageView, parse_spec
    from .ir import count_ops, render_block
    from .optimizer import optimize_block
    with open(args.spec, "r", encoding="utf-8") as f:
        spec = parse_spec(f.read())
    with open(args.image, "rb") as f:
        view = ImageView(f.read(), args.base)
    blocks = _collect_blocks(spec, view, args.addr)
    if args.stats:
        before = sum(count_ops(b) for b in blocks)
        after = sum(count_ops(optimize_block(b, spec)) for b in blocks)
        pct = 100.0 * (before - after) / before if before else 0.0
        print(f"before={before} after={after} reduction={pct:.1f}%")
        return 0
    for block in blocks:
        out = optimize_block(block, spec) if args.optimize else block
        print(render_block(out, spec), end="")
        print()
    return 0


def _cmd_asm(args) -> int:
    from .archspec import parse_spec
    from .assembler import assemble
    with open(args.spec, "r", encoding="utf-8") as f:
        spec = parse_spec(f.read())
    with open(args.source, "r", encoding="utf-8") as f:
        image, base, symbols = assemble(spec, f.read())
    with open(args.output, "wb") as f:
        f.write(image)
    print(f"wrote {len(image)} bytes (base 0x{base:x}) to {args.output}")
    for name in sorted(symbols):
        print(f"  {name} = 0x{symbols[name]:x}")
    return 0


def _cmd_trace(args) -> int:
    from .config import load_config
    from .environment import run_vxe
    config = load_config(args.config)
    reasons = run_vxe(config, out_dir=args.out)
    for name, reason in sorted(reasons.items()):
        print(f"{name}: {reason.kind} at 0x{reason.pc:x}")
    return 0


def _cmd_solve(args) -> int:
    from .constraints import parse_constraint_file
    from .symsolve import emit_smtlib, solve
    with open(args.file, "r", encoding="utf-8") as f:
        constraints = parse_constraint_file(f.read())
    if args.smtlib:
        print(emit_smtlib(constraints), end="")
        return 0
    result = solve(constraints,
                   external_command=args.solver.split()
                   if args.solver else None)
    if result.status == "sat":
        assignment = " ".join(
            f"v{var}=0x{value:x}"
            for var, value in sorted(result.assignment.items()))
        print(f"sat {assignment}")
    elif result.status == "unsat":
        print("unsat")
    else:
        print(f"unknown ({result.reason})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vxe",
        description="spec-driven firmware rehosting and analysis")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a configured environment")
    p.add_argument("config")
    p.add_argument("--out", default=None, help="output directory")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("fuzz", help="run the configured fuzz campaign")
    p.add_argument("config")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_fuzz)

    p = sub.add_parser("lift", help="lift and optionally optimize blocks")
    p.add_argument("spec")
    p.add_argument("image")
    p.add_argument("--addr", type=lambda s: int(s, 0), default=0)
    p.add_argument("--base", type=lambda s: int(s, 0), default=0)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--optimize", action="store_true", default=True)
    group.add_argument("--no-optimize", dest="optimize",
                       action="store_false")
    p.add_argument("--stats", action="store_true",
                   help="print before/after op counts")
    p.set_defaults(func=_cmd_lift)

    p = sub.add_parser("asm", help="assemble a demo program")
    p.add_argument("spec")
    p.add_argument("source")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_asm)

    p = sub.add_parser("trace", help="run and write trace files")
    p.add_argument("config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_trace)

    p = sub.add_parser("solve", help="solve a constraint file")
    p.add_argument("file")
    p.add_argument("--smtlib", action="store_true",
                   help="emit the SMT-LIB script instead of solving")
    p.add_argument("--solver", default=None,
                   help="external SMT solver command")
    p.set_defaults(func=_cmd_solve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 1
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception:
        log.exception("internal error")
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
