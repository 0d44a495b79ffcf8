"""ModelSpec / tensor file formats and decimal serialization.

ModelSpec (JSON)::

    {"input_dim": 2,
     "layers": [{"type": "affine", "weights": [[4, 4], [4, -4]], "bias": [0, 0]},
                {"type": "tanh"},
                {"type": "affine", "weights": [[-1, 1]]}],
     "output_ids": [5]}

``affine`` expands to a ``matmul`` node followed by an ``add`` node carrying
the bias (zeros when omitted).  Activation layers are ``tanh``, ``relu``,
``exp``, ``softmax`` and ``layernorm`` (optional ``gain``/``shift``).

Tensor files are JSON arrays (a 2-D array is a dataset, one sample per row)
or single-column CSV.  Floats are written with 17 significant digits.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from .graph import Graph, GraphBuilder, GraphError

__all__ = [
    "SpecError",
    "build_from_spec",
    "load_model",
    "model_to_json",
    "load_tensor",
    "load_dataset",
    "dumps_json",
    "fmt_float",
]

ACTIVATIONS = ("tanh", "relu", "softmax", "layernorm", "exp")


class SpecError(ValueError):
    """A ModelSpec, tensor or config file failed validation."""

    def __init__(self, message: str, layer: int | None = None):
        self.layer = layer
        if layer is not None:
            message = f"layer {layer}: {message}"
        super().__init__(message)


def _matrix(obj, layer: int, name: str) -> np.ndarray:
    try:
        a = np.array(obj, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise SpecError(f"'{name}' is not a numeric array ({exc})", layer) from None
    return a


def build_from_spec(spec: dict) -> Graph:
    if not isinstance(spec, dict):
        raise SpecError("model spec must be a JSON object")
    dim = spec.get("input_dim")
    if not isinstance(dim, int) or isinstance(dim, bool) or dim < 1:
        raise SpecError("'input_dim' must be a positive integer")
    layers = spec.get("layers")
    if not isinstance(layers, list):
        raise SpecError("'layers' must be a list")
    b = GraphBuilder((dim,))
    cur, width = 0, dim
    for i, layer in enumerate(layers):
        if not isinstance(layer, dict) or "type" not in layer:
            raise SpecError("each layer must be an object with a 'type'", i)
        kind = layer["type"]
        if kind == "affine":
            w = _matrix(layer.get("weights"), i, "weights")
            if w.ndim != 2:
                raise SpecError(f"'weights' must be 2-D, got shape {w.shape}", i)
            if w.shape[1] != width:
                raise SpecError(f"weights expect input width {w.shape[1]} but previous width is {width}", i)
            bias = _matrix(layer.get("bias", [0.0] * w.shape[0]), i, "bias")
            if bias.shape != (w.shape[0],):
                raise SpecError(f"'bias' must have length {w.shape[0]}", i)
            cur = b.add("matmul", cur, weight=w)
            cur = b.add("add", cur, operand=bias)
            width = w.shape[0]
        elif kind in ACTIVATIONS:
            params = {}
            for name in ("gain", "shift"):
                if kind == "layernorm" and name in layer:
                    params[name] = _matrix(layer[name], i, name)
            try:
                cur = b.add(kind, cur, **params)
            except GraphError as exc:
                raise SpecError(str(exc), i) from None
        else:
            raise SpecError(f"unknown layer type {kind!r}", i)
    try:
        return b.build(spec.get("output_ids"))
    except GraphError as exc:
        raise SpecError(str(exc)) from None


def _read_json(path) -> object:
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def load_model(path) -> Graph:
    try:
        return build_from_spec(_read_json(path))
    except SpecError as exc:
        raise SpecError(f"{path}: {exc}") from None


def model_to_json(spec: dict) -> str:
    return dumps_json(spec)


def load_tensor(path) -> np.ndarray:
    """Load a JSON array or a single-column CSV (a ``#`` line or a non-numeric header is skipped)."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        vals = []
        for lineno, row in enumerate(csv.reader(io.StringIO(path.read_text())), 1):
            if not row or row[0].startswith("#"):
                continue
            if len(row) != 1:
                raise SpecError(f"{path}: line {lineno}: expected one column, got {len(row)}")
            try:
                vals.append(float(row[0]))
            except ValueError:
                if vals:
                    raise SpecError(f"{path}: line {lineno}: not a number: {row[0]!r}") from None
        return np.array(vals, dtype=np.float64)
    data = _read_json(path)
    try:
        return np.array(data, dtype=np.float64)
    except (TypeError, ValueError):
        raise SpecError(f"{path}: not a numeric array") from None


def load_dataset(path, input_dim: int) -> np.ndarray:
    """Load samples as a 2-D array ``(n_samples, input_dim)``."""
    a = load_tensor(path)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2 or a.shape[1] != input_dim:
        raise SpecError(f"{path}: expected samples of width {input_dim}, got shape {a.shape}")
    return a


def fmt_float(v: float) -> str:
    v = float(v)
    if v != v:
        return "nan"
    if v in (float("inf"), float("-inf")):
        return "inf" if v > 0 else "-inf"
    return format(v, ".17g")


def _to_text(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (bool, np.bool_)) or obj is None:
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        s = fmt_float(obj)
        # JSON has no inf/nan literals
        return json.dumps(s) if s in ("nan", "inf", "-inf") else s
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_to_text(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if all(not isinstance(v, (list, tuple, dict, np.ndarray)) for v in obj):
            return "[" + ", ".join(_to_text(v, indent, level + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _to_text(v, indent, level + 1) for v in obj) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps_json(obj, indent: int = 2) -> str:
    """JSON text with every float written to 17 significant digits."""
    return _to_text(obj, indent, 0) + "\n"
