"""Dual-precision shadow execution.

The same rounded input is pushed through a graph twice, once in a narrow
format and once in a reference format, and each node's outputs are compared
elementwise.  Node errors are L1 sums of absolute differences (L-inf kept for
diagnostics); the input node is excluded since both runs share it.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .graph import Graph, forward
from .softfloat import BINARY16, BINARY32, FloatFormat, get_format, round_to

__all__ = [
    "ShadowTrace",
    "SensitivityTrace",
    "shadow_forward",
    "accumulated_diff",
    "sensitivity_trace",
    "write_shadow_csv",
]

log = logging.getLogger(__name__)


@dataclass
class ShadowTrace:
    per_node_error: np.ndarray
    per_node_linf: np.ndarray
    lo_format: str
    ref_format: str
    kinds: list[str]
    nonfinite_flags: set[int] = field(default_factory=set)

    @property
    def total_error(self) -> float:
        return math.fsum(self.per_node_error[1:])

    def rows(self):
        for k, kind in enumerate(self.kinds):
            yield k, kind, self.per_node_error[k], self.per_node_linf[k], int(k in self.nonfinite_flags)


@dataclass
class SensitivityTrace:
    per_node_delta: np.ndarray
    output_delta: float
    nonfinite_flags: set[int] = field(default_factory=set)


def _finite_absdiff(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, bool]:
    ok = np.isfinite(a) & np.isfinite(b)
    return np.abs(np.where(ok, a - b, 0.0)), bool(np.all(ok))


def shadow_forward(
    graph: Graph,
    x,
    lo: FloatFormat | str = BINARY16,
    ref: FloatFormat | str = BINARY32,
    accumulation: str = "strict",
) -> ShadowTrace:
    lo, ref = get_format(lo), get_format(ref)
    if ref.mantissa_bits < lo.mantissa_bits:
        raise ValueError(f"reference format {ref} is narrower than {lo}")
    xr = round_to(lo, np.asarray(x, dtype=np.float64))
    t_lo = forward(graph, xr, lo, accumulation)
    t_ref = forward(graph, xr, ref, accumulation)
    n = len(graph.nodes)
    l1 = np.zeros(n)
    linf = np.zeros(n)
    flags: set[int] = set()
    for k in range(1, n):
        d, ok = _finite_absdiff(t_lo[k], t_ref[k])
        if not ok:
            flags.add(k)
        l1[k] = math.fsum(d.ravel())
        linf[k] = float(d.max()) if d.size else 0.0
    return ShadowTrace(l1, linf, lo.name, ref.name, [nd.kind for nd in graph.nodes], flags)


def accumulated_diff(
    graph: Graph,
    dataset,
    lo: FloatFormat | str = BINARY16,
    ref: FloatFormat | str = BINARY32,
    accumulation: str = "strict",
) -> float:
    """Total shadow error summed over nodes and samples."""
    data = np.asarray(dataset, dtype=np.float64)
    if data.size == 0:
        log.warning("accumulated_diff called on an empty dataset")
        return 0.0
    data = data.reshape((-1,) + graph.input_shape)
    # one batched pass; fsum makes the total independent of sample order
    return shadow_forward(graph, data, lo, ref, accumulation).total_error


def sensitivity_trace(graph: Graph, x, delta, fmt: FloatFormat | str = "binary64",
                      accumulation: str = "strict") -> SensitivityTrace:
    """Per-node L1 change between the clean and the perturbed forward pass."""
    fmt = get_format(fmt)
    x = np.asarray(x, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if delta.shape != x.shape:
        raise ValueError(f"delta shape {delta.shape} does not match input shape {x.shape}")
    clean = forward(graph, round_to(fmt, x), fmt, accumulation)
    pert = forward(graph, round_to(fmt, x + delta), fmt, accumulation)
    per = np.zeros(len(graph.nodes))
    flags: set[int] = set()
    for k in range(len(graph.nodes)):
        d, ok = _finite_absdiff(pert[k], clean[k])
        if not ok:
            flags.add(k)
        per[k] = math.fsum(d.ravel())
    out = math.fsum(per[i] for i in graph.output_ids)
    return SensitivityTrace(per, out, flags)


def write_shadow_csv(trace: ShadowTrace, path) -> None:
    from .io import fmt_float

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id", "kind", "error_l1", "error_linf", "nonfinite_flag"])
        for k, kind, l1, linf, flag in trace.rows():
            w.writerow([k, kind, fmt_float(l1), fmt_float(linf), flag])
