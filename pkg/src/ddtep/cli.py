"""Command-line interface: ``ddtep {solve|eval|query|learn|verify|explain} <program> [flags]``.

Exit codes: 0 success or guarantee verified, 1 guarantee refuted,
2 program or usage error, 3 resource cap exceeded.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import corpus
from .engine import (
    ENGINES,
    EUReport,
    Strategy,
    compiler_for,
    default_strategy,
    enumerate_worlds,
    evaluate,
    least_model,
    probability,
    strategy_from_assignment,
    world_count,
)
from .errors import DdtepError, ProgramError, ResourceLimitError, StrategyError
from .grounder import GroundProgram, ground
from .learner import apply_params, em_fit, initial_params, parse_dataset
from .solver import check_guarantee, solve_exhaustive, solve_local, verify_bounds
from .syntax import Atom, desugar, parse_atom, parse_program, render, render_atom

EXIT_OK, EXIT_REFUTED, EXIT_PROGRAM, EXIT_RESOURCE = 0, 1, 2, 3
EXPLAIN_WORLD_LIMIT = 256
SCHEMA_PATH = Path(__file__).with_name("report_schema.json")

log = logging.getLogger("ddtep")


class UsageError(ProgramError):
    pass


@dataclass
class Source:
    path: Path
    text: str

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()


def read_source(name: str) -> Source:
    """Read a program file; bare corpus names such as ``car.ddtep`` also resolve."""
    p = Path(name)
    if not p.is_file():
        try:
            p = corpus.path(Path(name).name)
        except FileNotFoundError:
            raise UsageError(f"cannot read {name}: no such file") from None
    return Source(p, p.read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# argument helpers


def split_top_level(text: str) -> list[str]:
    """Split on commas that are not nested inside parentheses or brackets."""
    parts, depth, current = [], 0, []
    for ch in text:
        if ch in "([":
            depth += 1
        elif ch in ")]":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(current))
            current = []
        else:
            current.append(ch)
    parts.append("".join(current))
    return [p.strip() for p in parts if p.strip()]


_TRUTH = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def _top_level_equals(item: str) -> int | None:
    depth = 0
    for i, ch in enumerate(item):
        if ch in "([":
            depth += 1
        elif ch in ")]":
            depth -= 1
        elif ch == "=" and depth == 0:
            return i
    return None


def parse_assignments(values: list[str] | None) -> dict[Atom, bool]:
    """``a=true,b(x)=false`` or bare atoms (meaning true); may be repeated."""
    out: dict[Atom, bool] = {}
    for value in values or ():
        for item in split_top_level(value):
            text, truth = item, True
            cut = _top_level_equals(item)
            if cut is not None:
                text, flag = item[:cut], item[cut + 1:]
                key = flag.strip().lower()
                if key not in _TRUTH:
                    raise UsageError(f"cannot read truth value {flag!r} in {item!r}")
                truth = _TRUTH[key]
            atom = parse_atom(text.strip())
            if not atom.is_ground():
                raise UsageError(f"{render_atom(atom)} is not ground")
            out[atom] = truth
    return out


def _scored(gp: GroundProgram, report: EUReport) -> dict:
    return {"strategy": report.strategy.as_dict(gp), "total_eu": report.total}


def _fmt(x: float) -> str:
    return f"{x + 0.0:.9f}"


def _table(gp: GroundProgram, report: EUReport) -> list[str]:
    rows = [(render_atom(r.atom), _fmt(r.probability), _fmt(r.reward), _fmt(r.contribution)) for r in report.rows]
    head = ("utility atom", "probability", "reward", "contribution")
    widths = [max(len(x) for x in col) for col in zip(head, *rows)]
    lines = ["  " + "  ".join(h.ljust(w) if i == 0 else h.rjust(w) for i, (h, w) in enumerate(zip(head, widths)))]
    for row in rows:
        lines.append("  " + "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths))))
    return lines


def _eu_lines(gp: GroundProgram, report: EUReport) -> list[str]:
    return [
        f"strategy: {report.strategy.describe(gp)}",
        f"expected utility: {_fmt(report.total)}",
        *_table(gp, report),
    ]


@dataclass
class Outcome:
    report: dict
    lines: list = field(default_factory=list)
    code: int = EXIT_OK


def _load(source: Source, extra=(), queries=()) -> tuple:
    program = parse_program(source.text)
    core = desugar(program)
    return program, core, ground(core, extra=extra, queries=queries)


def _strategy(gp: GroundProgram, args_values) -> Strategy:
    return strategy_from_assignment(gp, parse_assignments(args_values))


# ---------------------------------------------------------------------------
# commands


def cmd_solve(args, source: Source) -> Outcome:
    _, _, gp = _load(source)
    if args.method == "local":
        sol = solve_local(gp, seed=args.seed, restarts=args.restarts, max_steps=args.max_steps, engine=args.engine)
    else:
        sol = solve_exhaustive(gp, engine=args.engine)
    report = {
        "engine": args.engine,
        "method": sol.method,
        "certified": sol.certified,
        "explored": sol.explored,
        **sol.best.to_dict(gp),
    }
    lines = _eu_lines(gp, sol.best)
    if sol.method == "exhaustive":
        report["ties"] = [_scored(gp, r) for r in sol.ties]
        lines.append(f"explored {sol.explored} admissible strategies (exhaustive)")
        if len(sol.ties) > 1:
            lines.append(f"tie set ({len(sol.ties)} strategies within 1e-9):")
            lines += [f"  {r.strategy.describe(gp)}  {_fmt(r.total)}" for r in sol.ties]
    else:
        lines.append(f"explored {sol.explored} strategies (local search, seed {args.seed}; not certified optimal)")
    return Outcome(report, lines)


def cmd_eval(args, source: Source) -> Outcome:
    _, _, gp = _load(source)
    if not args.set and gp.decisions:
        raise UsageError("eval needs --set assigning the decisions")
    strategy = _strategy(gp, args.set)
    report = evaluate(gp, strategy, args.engine)
    return Outcome({"engine": args.engine, **report.to_dict(gp)}, _eu_lines(gp, report))


def cmd_explain(args, source: Source) -> Outcome:
    _, _, gp = _load(source)
    strategy = _strategy(gp, args.strategy) if args.strategy or gp.decisions else default_strategy(gp)
    report = evaluate(gp, strategy, args.engine)
    out = {"engine": args.engine, **report.to_dict(gp)}
    lines = _eu_lines(gp, report)
    if args.worlds:
        n = world_count(gp)
        if n > EXPLAIN_WORLD_LIMIT:
            raise ResourceLimitError(f"{n} worlds; --worlds lists at most {EXPLAIN_WORLD_LIMIT}")
        names = [render_atom(gp.atoms[u.atom]) for u in gp.utilities]
        rows = []
        lines.append(f"worlds ({n}):")
        for world in enumerate_worlds(gp):
            model = least_model(gp, world, strategy)
            member = {name: u.atom in model for name, u in zip(names, gp.utilities)}
            rows.append({"probability": world.probability, "atoms": member})
            held = [name for name, v in member.items() if v]
            lines.append(f"  {_fmt(world.probability)}  {', '.join(held) if held else '-'}")
        lines.append(f"  total probability {_fmt(sum(r['probability'] for r in rows))}")
        out["worlds"] = rows
    return Outcome(out, lines)


def cmd_query(args, source: Source) -> Outcome:
    atom = parse_atom(args.atom)
    if not atom.is_ground():
        raise UsageError(f"query atom {render_atom(atom)} is not ground")
    evidence = parse_assignments(args.evidence)
    _, _, gp = _load(source, queries=[atom, *evidence])
    if args.strategy:
        strategy = _strategy(gp, args.strategy)
    else:
        strategy = default_strategy(gp)
        comp = compiler_for(gp)
        ids = [gp.atom_id(a) for a in [atom, *evidence, *(gp.atoms[e] for e in gp.evidence)]]
        if any(comp.decision_support(comp.node(a)) for a in ids if a is not None):
            raise StrategyError("the query depends on decisions; pass --strategy")
    p = probability(gp, strategy, atom, evidence, args.engine)
    report = {
        "engine": args.engine,
        "query": {"atom": render_atom(atom), "probability": p, "evidence": {render_atom(a): t for a, t in evidence.items()}},
    }
    if args.strategy:
        report["strategy"] = strategy.as_dict(gp)
    given = " | " + ", ".join(f"{render_atom(a)}={str(t).lower()}" for a, t in evidence.items()) if evidence else ""
    return Outcome(report, [f"P({render_atom(atom)}{given}) = {_fmt(p)}"])


def cmd_learn(args, source: Source) -> Outcome:
    program = parse_program(source.text)
    core = desugar(program)
    data = read_source(args.data)
    dataset = parse_dataset(data.text)
    start = initial_params(core, args.seed)
    fit = em_fit(core, dataset, max_iters=args.max_iters, tol=args.tol, seed=args.seed)
    fitted = render(apply_params(program, core, fit.params))
    report = {
        "fit": {
            "params": fit.params,
            "labels": {p.id: p.label for p in core.params},
            "initial": start,
            "loglik_trace": list(fit.trace),
            "iterations": fit.iterations,
            "converged": fit.converged,
            "seed": fit.seed,
        }
    }
    lines = [f"{len(dataset)} interpretations, {len(core.params)} learnable parameters"]
    for p in core.params:
        lines.append(f"  {p.id}  {_fmt(start[p.id])} -> {_fmt(fit.params[p.id])}  {p.label}")
    state = "converged" if fit.converged else "stopped"
    lines.append(f"{state} after {fit.iterations} iterations")
    lines.append("log-likelihood: " + " ".join(_fmt(x) for x in fit.trace))
    if args.out:
        Path(args.out).write_text(fitted, encoding="utf-8")
        report["fit"]["output"] = str(args.out)
        lines.append(f"fitted program written to {args.out}")
    else:
        lines += ["", fitted.rstrip("\n")]
    return Outcome(report, lines)


def cmd_verify(args, source: Source) -> Outcome:
    _, _, gp = _load(source)
    bounds = verify_bounds(gp, engine=args.engine)
    report = {
        "engine": args.engine,
        "explored": bounds.explored,
        "bounds": {"min": _scored(gp, bounds.minimum), "max": _scored(gp, bounds.maximum)},
    }
    lines = [
        f"min expected utility: {_fmt(bounds.minimum.total)}  ({bounds.minimum.strategy.describe(gp)})",
        f"max expected utility: {_fmt(bounds.maximum.total)}  ({bounds.maximum.strategy.describe(gp)})",
        f"over {bounds.explored} admissible strategies",
    ]
    code = EXIT_OK
    if args.at_least is not None:
        verdict = check_guarantee(gp, args.at_least, engine=args.engine)
        report["guarantee"] = {"threshold": args.at_least, "holds": verdict.holds}
        if verdict.holds:
            lines.append(f"guarantee holds: every admissible strategy reaches at least {_fmt(args.at_least)}")
        else:
            report["guarantee"]["counterexample"] = _scored(gp, verdict.minimum)
            lines.append(
                f"guarantee refuted: {verdict.minimum.strategy.describe(gp)} only reaches {_fmt(verdict.minimum.total)}"
            )
            code = EXIT_REFUTED
    return Outcome(report, lines, code)


COMMANDS = {
    "solve": cmd_solve,
    "eval": cmd_eval,
    "query": cmd_query,
    "learn": cmd_learn,
    "verify": cmd_verify,
    "explain": cmd_explain,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("program", help="program file (or the name of a shipped example)")
    common.add_argument("--json", action="store_true", help="print a machine-readable report")
    common.add_argument("--engine", choices=ENGINES, default="circuit")
    common.add_argument("-q", "--quiet", action="store_true", help="suppress warnings")

    parser = _Parser(prog="ddtep", description="Decision-theoretic probabilistic logic programs.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", parents=[common], help="find the expected-utility maximising strategy")
    p.add_argument("--method", choices=("exhaustive", "local"), default="exhaustive")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--restarts", type=int, default=4)
    p.add_argument("--max-steps", type=int, default=1000)

    p = sub.add_parser("eval", parents=[common], help="expected utility of one strategy")
    p.add_argument("--set", action="append", metavar="ATOM[=BOOL],...")

    p = sub.add_parser("query", parents=[common], help="marginal or conditional probability of an atom")
    p.add_argument("--atom", required=True)
    p.add_argument("--strategy", action="append", metavar="ATOM[=BOOL],...")
    p.add_argument("--evidence", action="append", metavar="ATOM[=BOOL],...")

    p = sub.add_parser("learn", parents=[common], help="fit t(...) probabilities with EM")
    p.add_argument("--data", required=True)
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    p = sub.add_parser("verify", parents=[common], help="bounds on expected utility over all admissible strategies")
    p.add_argument("--at-least", type=float, dest="at_least")

    p = sub.add_parser("explain", parents=[common], help="per-atom breakdown of one strategy")
    p.add_argument("--strategy", action="append", metavar="ATOM[=BOOL],...")
    p.add_argument("--worlds", action="store_true", help=f"list every world (at most {EXPLAIN_WORLD_LIMIT})")
    return parser


def _diagnostic(where: str, err: DdtepError) -> str:
    loc = where
    if err.line is not None:
        loc += f":{err.line}"
        if err.col is not None:
            loc += f":{err.col}"
    return f"{loc}: error: {err.message}"


def run(argv: list[str] | None = None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    argv = list(sys.argv[1:] if argv is None else argv)
    started = time.perf_counter()
    where = "ddtep"
    handler = logging.StreamHandler(stderr)
    handler.setFormatter(logging.Formatter("warning: %(message)s"))
    root = logging.getLogger("ddtep")
    root.addHandler(handler)
    try:
        args = build_parser().parse_args(argv)
        root.setLevel(logging.ERROR if args.quiet else logging.WARNING)
        source = read_source(args.program)
        where = str(args.program)
        if args.command == "learn":
            where = f"{args.program} / {args.data}"
        outcome = COMMANDS[args.command](args, source)
    except ResourceLimitError as err:
        print(_diagnostic(where, err), file=stderr)
        return EXIT_RESOURCE
    except DdtepError as err:
        print(_diagnostic(where, err), file=stderr)
        return EXIT_PROGRAM
    except OSError as err:
        print(f"{where}: error: {err}", file=stderr)
        return EXIT_PROGRAM
    finally:
        root.removeHandler(handler)
    duration = (time.perf_counter() - started) * 1000.0
    if args.json:
        report = {"command": ["ddtep", *argv], "program_sha256": source.sha256, **outcome.report, "duration_ms": duration}
        print(json.dumps(report, indent=2), file=stdout)
    else:
        print("\n".join(outcome.lines), file=stdout)
    return outcome.code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
