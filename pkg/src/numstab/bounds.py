"""Forward-error bound checks and Lipschitz estimates for small graphs.

For an L-Lipschitz ``f`` evaluated with only two rounding events, one on the
input and one on the output, the computed result satisfies::

    ||y_hat - f(x)|| <= L u ||x|| + u ||f(x)|| + L u^2 ||x||

with ``u`` the unit roundoff.  :func:`check_bound` measures the left side and
each term on the right.  Norms are Euclidean over flattened tensors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .graph import Graph, forward, output_vector
from .rng import SplitMix64
from .softfloat import BINARY64, FloatFormat, get_format, round_to

__all__ = [
    "LipschitzEstimate",
    "BoundReport",
    "LipschitzError",
    "spectral_norm",
    "lipschitz_upper",
    "finite_diff_lipschitz",
    "check_bound",
    "BOUND_CSV_COLUMNS",
]


class LipschitzError(ValueError):
    pass


@dataclass
class LipschitzEstimate:
    value: float
    method: str
    detail: list[float] = field(default_factory=list)


@dataclass
class BoundReport:
    L: float
    u: float
    input_norm: float
    output_norm: float
    measured: float
    term_input: float
    term_result: float
    term_second_order: float
    satisfied: bool
    mode: str = "lemma"
    reason: str = ""

    @property
    def bound(self) -> float:
        return self.term_input + self.term_result + self.term_second_order

    def row(self) -> list:
        return [self.L, self.u, self.input_norm, self.output_norm, self.measured,
                self.term_input, self.term_result, self.term_second_order, int(self.satisfied)]


BOUND_CSV_COLUMNS = ["L", "u", "input_norm", "output_norm", "measured",
                     "term_input", "term_result", "term_second_order", "satisfied"]


def spectral_norm(w, tol: float = 1e-9, max_iter: int = 10_000) -> float:
    """Largest singular value of ``w`` by power iteration on ``A = w^T w``.

    Stops once the residual ``r = ||A v - mu v||`` of the Rayleigh quotient
    ``mu`` drops below ``tol * mu``.  Some eigenvalue of ``A`` lies within ``r``
    of ``mu``, and after convergence that is the top one, so ``sqrt(mu + r)``
    is returned: an estimate that errs upward, as a Lipschitz bound must.
    """
    w = np.atleast_2d(np.asarray(w, dtype=np.float64))
    if not np.any(w):
        return 0.0
    # fixed start vector keeps the estimate deterministic
    v = SplitMix64(0x5EED).uniform(-1.0, 1.0, w.shape[1]) + 1.0 / math.sqrt(w.shape[1])
    v /= np.linalg.norm(v)
    for _ in range(max_iter):
        z = w.T @ (w @ v)
        mu = float(v @ z)
        r = float(np.linalg.norm(z - mu * v))
        if r <= tol * mu:
            return math.sqrt(mu + r)
        nz = np.linalg.norm(z)
        if nz == 0.0:
            return 0.0
        v = z / nz
    raise LipschitzError(f"power iteration did not converge within {max_iter} iterations")


_ONE_LIPSCHITZ = ("tanh", "relu")


def lipschitz_upper(graph: Graph) -> LipschitzEstimate:
    """Product of per-layer Lipschitz factors along a chain graph.

    Supports matmul/affine (spectral norm), add/sub with a constant operand
    (1), elementwise scaling by a constant (max |c|) and tanh/relu (1).  With
    several outputs the factors of each output prefix combine as
    ``sqrt(sum L_o^2)``.
    """
    factors = [1.0]
    prefix = [1.0]
    for node in graph.nodes[1:]:
        if node.inputs != (node.id - 1,):
            raise LipschitzError(f"node {node.id} ({node.kind}) is not part of a simple chain")
        k = node.kind
        if k in ("matmul", "affine"):
            f = spectral_norm(node.params["weight"])
        elif k in ("add", "sub"):
            f = 1.0
        elif k == "mul_elementwise":
            f = float(np.max(np.abs(node.params["operand"]))) if node.params["operand"].size else 0.0
        elif k in _ONE_LIPSCHITZ:
            f = 1.0
        else:
            raise LipschitzError(f"node {node.id} has unsupported kind {k!r} for a certified bound")
        factors.append(f)
        prefix.append(prefix[-1] * f)
    value = math.sqrt(math.fsum(prefix[o] ** 2 for o in graph.output_ids))
    return LipschitzEstimate(value, "layer_product_upper", factors[1:])


def _f64(graph: Graph, x) -> np.ndarray:
    return output_vector(graph, forward(graph, x, BINARY64))


def finite_diff_lipschitz(graph: Graph, x, radius: float, samples: int = 1000, seed: int = 0) -> LipschitzEstimate:
    """Largest observed ``||f(a) - f(b)|| / ||a - b||`` over random pairs in an L2 ball."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    x = np.asarray(x, dtype=np.float64)
    rng = SplitMix64(seed)
    d = x.size
    best = 0.0
    for _ in range(samples):
        pts = []
        for _ in range(2):
            direction = rng.normal(0.0, 1.0, d)
            direction /= np.linalg.norm(direction)
            pts.append(x + (radius * rng.random() ** (1.0 / d)) * direction.reshape(x.shape))
        a, b = pts
        gap = np.linalg.norm((a - b).ravel())
        if gap == 0.0:
            continue
        best = max(best, float(np.linalg.norm(_f64(graph, a) - _f64(graph, b)) / gap))
    return LipschitzEstimate(best, "finite_difference_lower")


def check_bound(graph: Graph, x, fmt: FloatFormat | str, L: LipschitzEstimate | float,
                mode: str = "lemma") -> BoundReport:
    """Compare the measured forward error against the two-rounding bound.

    ``mode="lemma"`` rounds only the input and the output (intermediates in
    binary64), which is the setting the bound covers.  ``mode="all"`` runs
    every intermediate in ``fmt`` as well; reported for comparison only.
    """
    fmt = get_format(fmt)
    Lv = L.value if isinstance(L, LipschitzEstimate) else float(L)
    u = fmt.unit_roundoff
    x = np.asarray(x, dtype=np.float64)
    fx = _f64(graph, x)
    xr = round_to(fmt, x)
    if mode == "lemma":
        y_hat = round_to(fmt, _f64(graph, xr))
    elif mode == "all":
        y_hat = output_vector(graph, forward(graph, xr, fmt))
    else:
        raise ValueError(f"mode must be 'lemma' or 'all', got {mode!r}")
    xn = float(np.linalg.norm(x.ravel()))
    fn = float(np.linalg.norm(fx))
    rep = BoundReport(
        L=Lv, u=u, input_norm=xn, output_norm=fn,
        measured=float(np.linalg.norm(y_hat - fx)),
        term_input=Lv * u * xn, term_result=u * fn, term_second_order=Lv * u * u * xn,
        satisfied=False, mode=mode,
    )
    if not np.all(np.isfinite(y_hat)):
        rep.reason = "non-finite output"
        return rep
    rep.satisfied = rep.measured <= rep.bound
    return rep
