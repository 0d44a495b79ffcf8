"""Elementary-operation graphs over small dense tensors.

A graph is a topologically ordered list of nodes; node 0 is the input.  Each
forward pass evaluates every node under one :class:`FloatFormat`, rounding
every scalar intermediate, and records the rounded output of every node in a
:class:`Trace`.  Reverse mode differentiates through that trace treating each
rounding as the identity (straight-through), linearizing at the recorded
rounded activations.

Tensors are plain float64 ``numpy`` arrays.  ``matmul``/``affine`` map a 1-D
vector through a constant weight matrix; ``softmax``/``layernorm`` reduce over
the last axis.  An input may carry one extra leading axis of independent
samples; every node then records one row per sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .softfloat import BINARY32, BINARY64, FloatFormat, get_format, round_to

__all__ = [
    "KINDS",
    "LAYERNORM_EPS",
    "GraphError",
    "Node",
    "Graph",
    "GraphBuilder",
    "Trace",
    "forward",
    "backward",
    "output_vector",
    "batch_shape",
]

LAYERNORM_EPS = 1e-5

UNARY = ("tanh", "relu", "exp", "softmax", "layernorm")
BINARY = ("add", "sub", "mul_elementwise", "div_elementwise")
KINDS = ("input", "constant", *BINARY, "matmul", "affine", *UNARY)


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class Node:
    id: int
    kind: str
    inputs: tuple[int, ...] = ()
    params: Mapping[str, np.ndarray] = field(default_factory=dict)
    shape: tuple[int, ...] = ()

    def param(self, name: str) -> np.ndarray | None:
        return self.params.get(name)


@dataclass(frozen=True)
class Graph:
    nodes: tuple[Node, ...]
    output_ids: tuple[int, ...]

    @property
    def K(self) -> int:
        """Number of non-input operations."""
        return len(self.nodes) - 1

    @property
    def input_shape(self) -> tuple[int, ...]:
        return self.nodes[0].shape

    @property
    def output_size(self) -> int:
        return sum(int(np.prod(self.nodes[i].shape)) for i in self.output_ids)

    def __len__(self) -> int:
        return len(self.nodes)


class GraphBuilder:
    """Append-only construction of a :class:`Graph` with shape checking.

    Binary ops take either two node ids or one node id plus a constant
    ``operand``; ``matmul`` takes ``weight``; ``affine`` takes ``weight`` and
    ``bias``; ``constant`` takes ``value``.
    """

    def __init__(self, input_shape: Iterable[int] | int):
        if isinstance(input_shape, int):
            input_shape = (input_shape,)
        self._nodes: list[Node] = [Node(0, "input", (), {}, tuple(input_shape))]

    def add(self, kind: str, *inputs: int, **params) -> int:
        if kind not in KINDS or kind == "input":
            raise GraphError(f"unknown node kind {kind!r}")
        nid = len(self._nodes)
        for i in inputs:
            if not 0 <= i < nid:
                raise GraphError(f"node {nid} ({kind}) references invalid input {i}")
        params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
        shape = self._infer_shape(nid, kind, inputs, params)
        self._nodes.append(Node(nid, kind, tuple(inputs), params, shape))
        return nid

    def _infer_shape(self, nid, kind, inputs, params) -> tuple[int, ...]:
        shapes = [self._nodes[i].shape for i in inputs]
        where = f"node {nid} ({kind})"
        if kind == "constant":
            if inputs or "value" not in params:
                raise GraphError(f"{where}: constant takes only a 'value' parameter")
            return params["value"].shape
        if kind in BINARY:
            if len(inputs) == 2 and "operand" not in params:
                if shapes[0] != shapes[1]:
                    raise GraphError(f"{where}: shape mismatch {shapes[0]} vs {shapes[1]}")
                return shapes[0]
            if len(inputs) == 1 and "operand" in params:
                if params["operand"].shape != shapes[0]:
                    raise GraphError(f"{where}: operand shape {params['operand'].shape} vs {shapes[0]}")
                return shapes[0]
            raise GraphError(f"{where}: needs two inputs or one input and an 'operand'")
        if len(inputs) != 1:
            raise GraphError(f"{where}: expects exactly one input")
        (s,) = shapes
        if kind in ("matmul", "affine"):
            w = params.get("weight")
            if w is None or w.ndim != 2:
                raise GraphError(f"{where}: needs a 2-D 'weight'")
            if len(s) != 1 or w.shape[1] != s[0]:
                raise GraphError(f"{where}: weight {w.shape} cannot multiply input of shape {s}")
            if kind == "affine":
                b = params.get("bias")
                if b is None or b.shape != (w.shape[0],):
                    raise GraphError(f"{where}: 'bias' must have shape ({w.shape[0]},)")
            return (w.shape[0],)
        if kind in ("softmax", "layernorm") and len(s) == 0:
            raise GraphError(f"{where}: needs at least one axis")
        if kind == "layernorm":
            for name in ("gain", "shift"):
                if name in params and params[name].shape != (s[-1],):
                    raise GraphError(f"{where}: '{name}' must have shape ({s[-1]},)")
        return s

    def build(self, output_ids: Iterable[int] | None = None) -> Graph:
        outs = tuple(output_ids) if output_ids is not None else (len(self._nodes) - 1,)
        if not outs:
            raise GraphError("graph needs at least one output")
        for o in outs:
            if not 0 <= o < len(self._nodes):
                raise GraphError(f"invalid output id {o}")
        return Graph(tuple(self._nodes), outs)


@dataclass
class Trace:
    values: list[np.ndarray]
    fmt: FloatFormat
    accumulation: str = "strict"
    nonfinite: set[int] = field(default_factory=set)

    def __getitem__(self, k: int) -> np.ndarray:
        return self.values[k]

    def __len__(self) -> int:
        return len(self.values)


class _Arith:
    """Scalar-rounded kernels for one format and accumulation mode."""

    def __init__(self, fmt: FloatFormat, accumulation: str):
        if accumulation not in ("strict", "wide"):
            raise ValueError(f"accumulation must be 'strict' or 'wide', got {accumulation!r}")
        self.fmt = fmt
        self.wide = accumulation == "wide"
        # the wide accumulator is binary32, unless the working format is wider
        self.acc_fmt = BINARY32 if fmt.mantissa_bits < BINARY32.mantissa_bits else fmt

    def r(self, v) -> np.ndarray:
        return np.asarray(round_to(self.fmt, np.asarray(v, dtype=np.float64)))

    def sum_last(self, terms: np.ndarray) -> np.ndarray:
        """Sequential left-to-right sum over the last axis."""
        fmt = self.acc_fmt if self.wide else self.fmt
        acc = np.array(terms[..., 0])
        for j in range(1, terms.shape[-1]):
            acc = round_to(fmt, acc + terms[..., j])
        return self.r(acc)

    def matvec(self, w: np.ndarray, x: np.ndarray) -> np.ndarray:
        return self.sum_last(self.r(w * x[..., None, :]))


def forward(
    graph: Graph,
    x,
    fmt: FloatFormat | str = BINARY64,
    accumulation: str = "strict",
    softmax: str = "stable",
) -> Trace:
    """Evaluate ``graph`` at ``x`` with every scalar intermediate rounded into ``fmt``."""
    fmt = get_format(fmt)
    ar = _Arith(fmt, accumulation)
    x = np.asarray(x, dtype=np.float64)
    batch = batch_shape(graph, x)
    values: list[np.ndarray] = [ar.r(x)]
    nonfinite: set[int] = set()
    with np.errstate(all="ignore"):
        for node in graph.nodes[1:]:
            out = _eval(node, values, ar, softmax, batch)
            if not np.all(np.isfinite(out)):
                nonfinite.add(node.id)
            values.append(out)
    return Trace(values, fmt, accumulation, nonfinite)


def batch_shape(graph: Graph, x: np.ndarray) -> tuple[int, ...]:
    """Leading sample axis of ``x`` (empty for a single sample)."""
    n = len(graph.input_shape)
    if x.shape[x.ndim - n:] != graph.input_shape or x.ndim > n + 1:
        raise GraphError(f"input shape {x.shape} does not match graph input {graph.input_shape}")
    return x.shape[: x.ndim - n]


def _operands(node: Node, values):
    a = values[node.inputs[0]]
    b = node.params["operand"] if len(node.inputs) == 1 else values[node.inputs[1]]
    return a, b


def _eval(node: Node, values, ar: _Arith, softmax: str, batch=()) -> np.ndarray:
    k = node.kind
    r = ar.r
    if k == "constant":
        return r(np.broadcast_to(node.params["value"], batch + node.shape))
    if k == "add":
        a, b = _operands(node, values)
        return r(a + r(b))
    if k == "sub":
        a, b = _operands(node, values)
        return r(a - r(b))
    if k == "mul_elementwise":
        a, b = _operands(node, values)
        return r(a * r(b))
    if k == "div_elementwise":
        a, b = _operands(node, values)
        return r(a / r(b))
    x = values[node.inputs[0]]
    if k == "matmul":
        return ar.matvec(r(node.params["weight"]), x)
    if k == "affine":
        return r(ar.matvec(r(node.params["weight"]), x) + r(node.params["bias"]))
    if k == "tanh":
        return r(np.tanh(x))
    if k == "relu":
        return np.where(x > 0, x, 0.0 * x) + 0.0
    if k == "exp":
        return r(np.exp(x))
    if k == "softmax":
        if softmax == "stable":
            z = r(x - np.max(x, axis=-1, keepdims=True))
        elif softmax == "naive":
            z = x
        else:
            raise ValueError(f"softmax variant must be 'stable' or 'naive', got {softmax!r}")
        e = r(np.exp(z))
        return r(e / ar.sum_last(e)[..., None])
    if k == "layernorm":
        n = x.shape[-1]
        mean = r(ar.sum_last(x) / n)[..., None]
        c = r(x - mean)
        var = r(ar.sum_last(r(c * c)) / n)[..., None]
        sd = r(np.sqrt(r(var + r(LAYERNORM_EPS))))
        y = r(c / sd)
        gain, shift = node.param("gain"), node.param("shift")
        if gain is not None:
            y = r(y * r(gain))
        if shift is not None:
            y = r(y + r(shift))
        return y
    raise GraphError(f"cannot evaluate node kind {k!r}")


def output_vector(graph: Graph, trace: Trace) -> np.ndarray:
    """Concatenate the flattened output nodes, in ``output_ids`` order (per sample)."""
    v = trace.values
    batch = v[0].shape[: v[0].ndim - len(graph.input_shape)]
    return np.concatenate([v[i].reshape(batch + (-1,)) for i in graph.output_ids], axis=-1)


def backward(
    graph: Graph,
    trace: Trace,
    output_cotangent=None,
    node_cotangents: Mapping[int, np.ndarray] | None = None,
) -> np.ndarray:
    """Gradient with respect to the graph input.

    ``output_cotangent`` is shaped like :func:`output_vector`;
    ``node_cotangents`` injects extra cotangents at arbitrary nodes, which is
    how losses that touch every activation are differentiated.
    """
    grads: list[np.ndarray | None] = [None] * len(graph.nodes)
    batch = trace.values[0].shape[: trace.values[0].ndim - len(graph.input_shape)]

    def acc(i: int, g: np.ndarray) -> None:
        grads[i] = g if grads[i] is None else grads[i] + g

    if output_cotangent is not None:
        ct = np.asarray(output_cotangent, dtype=np.float64).reshape(batch + (-1,))
        if ct.shape[-1] != graph.output_size:
            raise GraphError(f"cotangent has {ct.shape[-1]} entries, outputs have {graph.output_size}")
        pos = 0
        for i in graph.output_ids:
            shape = graph.nodes[i].shape
            n = int(np.prod(shape))
            acc(i, ct[..., pos : pos + n].reshape(batch + shape))
            pos += n
    for i, g in (node_cotangents or {}).items():
        acc(i, np.asarray(g, dtype=np.float64).reshape(batch + graph.nodes[i].shape))

    v = trace.values
    with np.errstate(all="ignore"):
        for node in reversed(graph.nodes[1:]):
            g = grads[node.id]
            if g is None:
                continue
            _vjp(node, g, v, acc)
    g0 = grads[0]
    return np.zeros(trace.values[0].shape) if g0 is None else g0


def _vjp(node: Node, g: np.ndarray, v, acc) -> None:
    k = node.kind
    ins = node.inputs
    if k == "constant":
        return
    if k in BINARY:
        a = v[ins[0]]
        b = node.params["operand"] if len(ins) == 1 else v[ins[1]]
        if k == "add":
            ga, gb = g, g
        elif k == "sub":
            ga, gb = g, -g
        elif k == "mul_elementwise":
            ga, gb = g * b, g * a
        else:
            ga, gb = g / b, -g * a / (b * b)
        acc(ins[0], ga)
        if len(ins) == 2:
            acc(ins[1], gb)
        return
    x = v[ins[0]]
    y = v[node.id]
    if k in ("matmul", "affine"):
        acc(ins[0], g @ node.params["weight"])
    elif k == "tanh":
        acc(ins[0], g * (1.0 - y * y))
    elif k == "relu":
        acc(ins[0], np.where(x > 0, g, 0.0))
    elif k == "exp":
        acc(ins[0], g * y)
    elif k == "softmax":
        acc(ins[0], y * (g - np.sum(g * y, axis=-1, keepdims=True)))
    elif k == "layernorm":
        gain = node.param("gain")
        gh = g if gain is None else g * gain
        mean = np.mean(x, axis=-1, keepdims=True)
        sd = np.sqrt(np.mean((x - mean) ** 2, axis=-1, keepdims=True) + LAYERNORM_EPS)
        xh = (x - mean) / sd
        acc(ins[0], (gh - np.mean(gh, axis=-1, keepdims=True)
                     - xh * np.mean(gh * xh, axis=-1, keepdims=True)) / sd)
    else:
        raise GraphError(f"cannot differentiate node kind {k!r}")
