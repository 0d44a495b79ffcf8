"""``numstab`` command-line harness.

Exit status: 0 success, 2 invalid input (arguments, schema, shapes),
3 numeric flags raised while ``--strict`` is set, 4 internal error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import experiments as ex
from .attack import PERTURBATION_KINDS, AttackConfig, AttackReport
from .bounds import BOUND_CSV_COLUMNS, check_bound, lipschitz_upper
from .io import SpecError, _read_json, build_from_spec, dumps_json, load_dataset
from .models import random_model_spec
from .softfloat import FORMATS

EXIT_OK, EXIT_SCHEMA, EXIT_FLAGS, EXIT_INTERNAL = 0, 2, 3, 4

log = logging.getLogger("numstab")

# flags that never change results and so stay out of the recorded config
_UNRECORDED = {"func", "jobs", "out", "report", "verbose"}


class UsageError(ValueError):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got {text!r}") from None


def _words(text: str) -> list[str]:
    return [t for t in text.replace(",", " ").split()]


def _recorded(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in _UNRECORDED}


def _out(args, default: str) -> Path:
    return Path(args.out or default)


def _load_spec(path) -> dict:
    spec = _read_json(path)
    try:
        build_from_spec(spec)
    except SpecError as exc:
        raise SpecError(f"{path}: {exc}") from None
    return spec


def _attack_config(args) -> AttackConfig:
    d = {}
    if getattr(args, "config", None):
        d = _read_json(args.config)
        if not isinstance(d, dict):
            raise SpecError(f"{args.config}: attack config must be a JSON object")
    try:
        cfg = AttackConfig.from_dict(d)
        over = {}
        if args.seed is not None:
            over["seed"] = args.seed
        if args.format is not None:
            over["format"] = args.format
            over["diff_lo"] = args.format
        if args.accumulation is not None:
            over["accumulation"] = args.accumulation
        return replace(cfg, **over)
    except (TypeError, ValueError) as exc:
        raise SpecError(f"attack config: {exc}") from None


def _summary(flags: list[str]) -> list[str]:
    if flags:
        print(f"numeric flags ({len(flags)}):", file=sys.stderr)
        for f in flags[:20]:
            print(f"  {f}", file=sys.stderr)
        if len(flags) > 20:
            print(f"  ... {len(flags) - 20} more", file=sys.stderr)
    return flags


# -- commands ----------------------------------------------------------------

def cmd_primitive_sweep(args) -> list[str]:
    lo = args.lo or args.format or "binary16"
    rows = ex.primitive_sweep(args.op, args.n, args.sampling, lo, args.ref, args.seed or 0)
    cfg = _recorded(args) | {"lo": lo, "seed": args.seed or 0}
    ex.write_csv(_out(args, f"sweep_{args.op}.csv"), ex.SWEEP_COLUMNS, rows, cfg)
    return [f"row {i}: overflow in {lo}" for i, r in enumerate(rows) if r[5]]


def cmd_tanh_demo(args) -> list[str]:
    fmt = args.format or "binary64"
    rows = ex.tanh_demo(args.delta_min, args.delta_max, args.steps, fmt)
    ex.write_csv(_out(args, "tanh_demo.csv"), ex.TANH_COLUMNS, rows, _recorded(args) | {"format": fmt})
    return [f"row {i}: non-finite output" for i, r in enumerate(rows) if not np.isfinite(r[1])]


def cmd_attack(args) -> list[str]:
    spec = _load_spec(args.model)
    graph = build_from_spec(spec)
    x = load_dataset(args.input, spec["input_dim"])
    if x.shape[0] == 1:
        x = x[0]
    cfg = _attack_config(args)
    kind = args.baseline.upper() if args.baseline else "NUM"
    delta, curve, flags = ex.run_kind(graph, x, cfg, kind)
    rec = _recorded(args) | {"attack": cfg.to_dict()}
    ex.write_csv(_out(args, "attack_curves.csv"), ex.CURVE_COLUMNS,
                 [(i, l, "" if d is None else d) for i, l, d in curve], rec)
    report = AttackReport(cfg, kind, x, delta, [c[1] for c in curve],
                          [c[2] for c in curve if c[2] is not None], flags).to_dict()
    report["tool_version"] = __version__
    Path(args.report or "attack_report.json").write_text(dumps_json(report))
    return flags


def cmd_precision_ablation(args) -> list[str]:
    spec = _load_spec(args.model)
    graph = build_from_spec(spec)
    x = load_dataset(args.input, spec["input_dim"])
    delta = load_dataset(args.delta, spec["input_dim"])
    if x.shape[0] == 1 and delta.shape[0] == 1:
        x, delta = x[0], delta[0]
    if delta.shape != x.shape:
        raise SpecError(f"delta shape {delta.shape} does not match input shape {x.shape}")
    rows = ex.precision_ablation(graph, x, delta, args.formats, args.accumulation or "strict")
    ex.write_csv(_out(args, "precision_ablation.csv"), ex.ABLATION_COLUMNS, rows, _recorded(args))
    return [f"{r[0]}: non-finite metric" for r in rows if not all(np.isfinite(r[1:]))]


def cmd_epsilon_sweep(args) -> list[str]:
    spec = _load_spec(args.model)
    x = load_dataset(args.input, spec["input_dim"])
    if x.shape[0] == 1:
        x = x[0]
    base = replace(_attack_config(args), seed=0)
    kinds = [k.upper() for k in args.kinds]
    for k in kinds:
        if k not in PERTURBATION_KINDS:
            raise UsageError(f"unknown kind {k!r}; expected {', '.join(PERTURBATION_KINDS)}")
    if any(e < 0 for e in args.epsilons):
        raise UsageError("epsilons must be non-negative")
    seeds = args.seeds if args.seeds is not None else [args.seed or 0]
    rows = ex.epsilon_sweep(spec, x, args.epsilons, kinds, seeds, base, args.jobs)
    rec = _recorded(args) | {"attack": base.to_dict(), "seeds": sorted(seeds)}
    ex.write_csv(_out(args, "epsilon_sweep.csv"), ex.EPS_COLUMNS, rows, rec)
    return [f"eps={r[0]} {r[1]} seed={r[2]}: non-finite metric" for r in rows if not all(np.isfinite(r[3:]))]


def cmd_random_model(args) -> list[str]:
    if len(args.widths) < 2 or min(args.widths) < 1:
        raise UsageError("--widths needs at least two positive entries")
    spec = random_model_spec(args.widths, args.activation, args.seed or 0, args.bias)
    _out(args, "model.json").write_text(dumps_json(spec))
    return []


def cmd_bound_check(args) -> list[str]:
    fmt = args.format or "binary16"
    if args.model:
        spec = _load_spec(args.model)
        graph = build_from_spec(spec)
        if not args.input:
            raise UsageError("--input is required with --model")
        xs = load_dataset(args.input, spec["input_dim"])
        L = args.lipschitz if args.lipschitz is not None else lipschitz_upper(graph)
        reports = [check_bound(graph, x, fmt, L, args.mode) for x in xs]
    else:
        reports = ex.bound_trials(args.trials, args.seed or 0, fmt, args.max_depth, args.max_width,
                                  args.mode, args.jobs)
    rec = _recorded(args) | {"format": fmt, "seed": args.seed or 0}
    ex.write_csv(_out(args, "bound_check.csv"), BOUND_CSV_COLUMNS, ex.bound_rows(reports), rec)
    n_ok = sum(r.satisfied for r in reports)
    print(f"bound satisfied in {n_ok}/{len(reports)} cases", file=sys.stderr)
    return [f"case {i}: {r.reason or 'bound violated'}" for i, r in enumerate(reports) if not r.satisfied]


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="seed for every random draw (default 0)")
    common.add_argument("--format", choices=sorted(FORMATS), default=None, help="working float format")
    common.add_argument("--accumulation", choices=("strict", "wide"), default=None)
    common.add_argument("--out", default=None, help="output file")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for independent cells")
    common.add_argument("--strict", action="store_true", help="exit 3 when numeric flags are raised")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="numstab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"numstab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("primitive-sweep", parents=[common], help="rounding error of add/mul over a format's range")
    s.add_argument("--op", choices=("add", "mul"), default="mul")
    s.add_argument("--n", type=int, default=300)
    s.add_argument("--sampling", choices=("linear", "log"), default=None,
                   help="default: log for mul, linear for add")
    s.add_argument("--lo", choices=sorted(FORMATS), default=None, help="narrow format (default --format or binary16)")
    s.add_argument("--ref", choices=sorted(FORMATS), default="binary64")
    s.set_defaults(func=cmd_primitive_sweep)

    s = sub.add_parser("tanh-demo", parents=[common], help="output of the 8x tanh amplifier under a small input shift")
    s.add_argument("--delta-min", type=float, default=-0.5)
    s.add_argument("--delta-max", type=float, default=0.5)
    s.add_argument("--steps", type=int, default=101)
    s.set_defaults(func=cmd_tanh_demo)

    s = sub.add_parser("attack", parents=[common], help="search for an instability-maximizing perturbation")
    s.add_argument("--model", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--config", default=None, help="attack config JSON")
    s.add_argument("--baseline", choices=("none", "rand", "gaus"), default=None,
                   help="emit a baseline perturbation instead of running the search")
    s.add_argument("--report", default=None, help="JSON report path (default attack_report.json)")
    s.set_defaults(func=cmd_attack)

    s = sub.add_parser("precision-ablation", parents=[common], help="evaluate one perturbation under several formats")
    s.add_argument("--model", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--delta", required=True)
    s.add_argument("--formats", type=_words, default=["binary16", "bfloat16", "binary32", "binary64"])
    s.set_defaults(func=cmd_precision_ablation)

    s = sub.add_parser("epsilon-sweep", parents=[common], help="metrics over a grid of budgets, kinds and seeds")
    s.add_argument("--model", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--config", default=None)
    s.add_argument("--epsilons", type=_floats, default=[e / 255 for e in (4, 8, 16, 32, 64)])
    s.add_argument("--kinds", type=_words, default=list(PERTURBATION_KINDS))
    s.add_argument("--seeds", type=_ints, default=None, help="default: --seed")
    s.set_defaults(func=cmd_epsilon_sweep)

    s = sub.add_parser("random-model", parents=[common], help="write a seeded random MLP as a ModelSpec")
    s.add_argument("--widths", type=_ints, required=True)
    s.add_argument("--activation", choices=("tanh", "relu"), default="tanh")
    s.add_argument("--bias", action="store_true", help="draw biases U[-1, 1] instead of zeros")
    s.set_defaults(func=cmd_random_model)

    s = sub.add_parser("bound-check", parents=[common], help="check the two-rounding forward error bound")
    s.add_argument("--model", default=None, help="ModelSpec; omit to run random trials")
    s.add_argument("--input", default=None, help="inputs, one sample per row")
    s.add_argument("--lipschitz", type=float, default=None, help="override the layer-product upper bound")
    s.add_argument("--mode", choices=("lemma", "all"), default="lemma")
    s.add_argument("--trials", type=int, default=1000)
    s.add_argument("--max-depth", type=int, default=3)
    s.add_argument("--max-width", type=int, default=8)
    s.set_defaults(func=cmd_bound_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_SCHEMA
    try:
        flags = _summary(args.func(args))
    except (ValueError, OSError) as exc:
        # SpecError, UsageError and LipschitzError are ValueErrors
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    if flags and args.strict:
        return EXIT_FLAGS
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
