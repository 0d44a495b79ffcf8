"""Desk-scale experiments: primitive error sweeps, the tanh amplifier demo,
attacks, precision transfer, epsilon sweeps and bound trials.

Every function is a pure function of its arguments (and seed); row order is
canonical so outputs do not depend on ``jobs``.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np
from scipy import stats

from . import __version__
from .attack import AttackConfig, baseline_perturbation, evaluate, proxy_loss, run_attack
from .bounds import BOUND_CSV_COLUMNS, check_bound, lipschitz_upper
from .graph import Graph, forward, output_vector
from .io import build_from_spec, fmt_float
from .models import random_model_spec, tanh_amplifier
from .rng import SplitMix64
from .shadow import accumulated_diff
from .softfloat import BINARY64, get_format, round_to, rounded_binop

KIND_ORDER = ("NUM", "RAND", "GAUS", "NONE")

SWEEP_COLUMNS = ["a", "b", "result_lo", "result_ref", "abs_diff", "overflow"]
TANH_COLUMNS = ["delta", "y_network", "y_analytic", "amplification", "is_limit"]
CURVE_COLUMNS = ["iteration", "proxy_loss", "accumulated_diff"]
ABLATION_COLUMNS = ["format", "proxy_loss", "proxy_loss_clean", "accumulated_diff", "output_l1_change"]
EPS_COLUMNS = ["epsilon", "kind", "seed", "final_proxy_loss", "accumulated_diff", "output_l1_change"]


def write_csv(path, columns, rows, config: dict) -> None:
    """CSV with a leading ``#`` line holding tool version and the full config."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# numstab {__version__} config={json.dumps(config, sort_keys=True, default=str)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt_float(v) if isinstance(v, (float, np.floating)) else v for v in row])


# -- primitive error sweep ----------------------------------------------------

def primitive_sweep(op: str = "mul", n: int = 300, sampling: str | None = None,
                    lo="binary16", ref="binary64", seed: int = 0) -> list[tuple]:
    """Random operand pairs over ``[min_normal(lo), max_finite(lo)]``, op under both formats.

    Rows are ``(a, b, result_lo, result_ref, abs_diff, overflow)``.  When the
    narrow result overflows, ``abs_diff`` is the distance from ``|result_ref|``
    to ``max_finite(lo)`` and the row is flagged.
    """
    if op not in ("add", "mul"):
        raise ValueError(f"op must be 'add' or 'mul', got {op!r}")
    lo, ref = get_format(lo), get_format(ref)
    sampling = sampling or ("log" if op == "mul" else "linear")
    a_min, a_max = lo.min_positive_normal, lo.max_finite
    rng = SplitMix64(seed).spawn(f"sweep/{op}/{sampling}")
    if sampling == "log":
        ab = np.exp(rng.uniform(math.log(a_min), math.log(a_max), (n, 2)))
    elif sampling == "linear":
        ab = rng.uniform(a_min, a_max, (n, 2))
    else:
        raise ValueError(f"sampling must be 'linear' or 'log', got {sampling!r}")
    ab = round_to(lo, ab)
    r_lo = rounded_binop(lo, op, ab[:, 0], ab[:, 1])
    r_ref = rounded_binop(ref, op, ab[:, 0], ab[:, 1])
    rows = []
    for (a, b), yl, yr in zip(ab, r_lo, r_ref):
        over = not math.isfinite(yl)
        diff = abs(abs(yr) - lo.max_finite) if over else abs(yl - yr)
        rows.append((float(a), float(b), float(yl), float(yr), float(diff), int(over)))
    return rows


def sweep_spearman(rows) -> float:
    """Rank correlation of ``|result_ref|`` with ``abs_diff`` over non-overflow rows."""
    ok = [r for r in rows if not r[5]]
    return float(stats.spearmanr([abs(r[3]) for r in ok], [r[4] for r in ok]).statistic)


# -- tanh amplifier -----------------------------------------------------------

def tanh_demo(delta_min: float = -0.5, delta_max: float = 0.5, steps: int = 101, fmt="binary64") -> list[tuple]:
    """Perturb the second input of the two-layer tanh amplifier from the origin."""
    fmt = get_format(fmt)
    g = tanh_amplifier()
    deltas = np.linspace(delta_min, delta_max, steps) if steps > 1 else np.array([delta_min])
    rows = []
    for d in deltas:
        d = float(d)
        y = float(output_vector(g, forward(g, round_to(fmt, np.array([0.0, d])), fmt))[0])
        y_an = -2.0 * math.tanh(4.0 * d)
        if d == 0.0:
            rows.append((d, y, y_an, 8.0, 1))
        else:
            rows.append((d, y, y_an, abs(y) / abs(d), 0))
    return rows


# -- attack / baselines ----------------------------------------------------------

def run_kind(graph: Graph, x, config: AttackConfig, kind: str):
    """Perturbation of one kind plus its per-iteration curve rows."""
    kind = kind.upper()
    if kind == "NUM":
        rep = run_attack(graph, x, config)
        diffs = rep.diff_history if config.track_diff else [None] * len(rep.loss_history)
        curve = [(i, l, d) for i, (l, d) in enumerate(zip(rep.loss_history, diffs))]
        return rep.delta, curve, rep.flags
    delta = baseline_perturbation(kind, x, config)
    loss, diff = evaluate(graph, x, delta, config)
    curve = [(i, loss, diff) for i in range(config.iterations + 1)]
    return delta, curve, []


def output_l1_change(graph: Graph, x, delta, fmt, accumulation="strict") -> float:
    fmt = get_format(fmt)
    clean = output_vector(graph, forward(graph, round_to(fmt, x), fmt, accumulation))
    pert = output_vector(graph, forward(graph, round_to(fmt, x + delta), fmt, accumulation))
    return math.fsum(np.abs(pert - clean).ravel())


# -- precision transfer ---------------------------------------------------------

def precision_ablation(graph: Graph, x, delta, formats, accumulation="strict") -> list[tuple]:
    """Evaluate one perturbation under each format."""
    x = np.asarray(x, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if delta.shape != x.shape:
        raise ValueError(f"delta shape {delta.shape} does not match input shape {x.shape}")
    rows = []
    for name in formats:
        f = get_format(name)
        loss = proxy_loss(forward(graph, round_to(f, x + delta), f, accumulation))
        clean = proxy_loss(forward(graph, round_to(f, x), f, accumulation))
        diff = accumulated_diff(graph, x + delta, f, BINARY64, accumulation)
        rows.append((f.name, loss, clean, diff, output_l1_change(graph, x, delta, f, accumulation)))
    return rows


# -- epsilon sweep -----------------------------------------------------------------

def _eps_cell(args):
    spec, x, base, eps, kind, seed = args
    graph = build_from_spec(spec)
    fmt = base.format
    if eps == 0:
        delta = np.zeros_like(x)
        cfg = base
    else:
        cfg = replace(base, epsilon=eps, seed=seed, track_diff=False)
        if kind == "NUM":
            delta = run_attack(graph, x, cfg).delta
        else:
            delta = baseline_perturbation(kind, x, cfg)
    loss = proxy_loss(forward(graph, round_to(get_format(fmt), x + delta), fmt, cfg.accumulation))
    diff = accumulated_diff(graph, x + delta, cfg.diff_lo, cfg.diff_ref, cfg.accumulation)
    return (eps, kind, seed, loss, diff, output_l1_change(graph, x, delta, fmt, cfg.accumulation))


def epsilon_sweep(spec: dict, x, epsilons, kinds, seeds, base: AttackConfig | None = None,
                  jobs: int = 1) -> list[tuple]:
    """One row per (epsilon, kind, seed), in that sort order."""
    base = base or AttackConfig()
    kinds = sorted({k.upper() for k in kinds}, key=KIND_ORDER.index)
    cells = [(spec, np.asarray(x, dtype=np.float64), base, float(e), k, int(s))
             for e in sorted(float(e) for e in epsilons) for k in kinds for s in sorted(seeds)]
    return _map(_eps_cell, cells, jobs)


def _map(fn, cells, jobs: int):
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, cells))
    return [fn(c) for c in cells]


# -- forward-error bound trials ----------------------------------------------------

def random_bound_graph_spec(rng: SplitMix64, max_depth: int = 3, max_width: int = 8) -> dict:
    depth = 1 + int(rng.random() * max_depth)
    widths = [1 + int(rng.random() * max_width) for _ in range(depth + 1)]
    return random_model_spec(widths, "tanh", seed=rng.next_u64(), bias=True)


def _bound_cell(args):
    spec, x, fmt, mode = args
    g = build_from_spec(spec)
    return check_bound(g, x, fmt, lipschitz_upper(g), mode)


def bound_trials(trials: int = 1000, seed: int = 0, fmt="binary16", max_depth: int = 3,
                 max_width: int = 8, mode: str = "lemma", jobs: int = 1):
    """Random affine+tanh graphs with inputs U[-1, 1]^d; one BoundReport per trial."""
    rng = SplitMix64(seed)
    cells = []
    for _ in range(trials):
        spec = random_bound_graph_spec(rng, max_depth, max_width)
        x = rng.uniform(-1.0, 1.0, spec["input_dim"])
        cells.append((spec, x, get_format(fmt).name, mode))
    return _map(_bound_cell, cells, jobs)


def bound_rows(reports) -> list[list]:
    return [r.row() for r in reports]


__all__ = [
    "write_csv", "primitive_sweep", "sweep_spearman", "tanh_demo", "run_kind",
    "output_l1_change", "precision_ablation", "epsilon_sweep", "bound_trials",
    "bound_rows", "random_bound_graph_spec", "SWEEP_COLUMNS", "TANH_COLUMNS",
    "CURVE_COLUMNS", "ABLATION_COLUMNS", "EPS_COLUMNS", "BOUND_CSV_COLUMNS", "KIND_ORDER",
]
