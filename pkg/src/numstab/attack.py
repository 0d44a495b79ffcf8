"""Proxy instability objective and the perturbation search that maximizes it.

The objective is the total magnitude of every recorded activation (input
excluded), summed in binary64 whatever the forward format.  The search keeps
the perturbation as a binary64 master copy, rounds ``x + delta`` into the
attack format for each forward pass, differentiates straight through the
rounding, and takes projected sign-ascent steps inside an L-inf ball that is
also clipped to the input domain.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import asdict, dataclass, field

import numpy as np

from .graph import Graph, Trace, backward, forward
from .rng import SplitMix64
from .shadow import accumulated_diff
from .softfloat import get_format, round_to

__all__ = [
    "AttackConfig",
    "AttackState",
    "AttackReport",
    "PERTURBATION_KINDS",
    "proxy_loss",
    "proxy_loss_and_grad",
    "project",
    "attack_step",
    "run_attack",
    "baseline_perturbation",
    "perturbation",
]

log = logging.getLogger(__name__)

PERTURBATION_KINDS = ("NUM", "RAND", "GAUS", "NONE")
GAUS_SD = 0.1


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 16 / 255
    alpha: float = 0.01
    iterations: int = 100
    optimizer: str = "sign_ascent"
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.2
    adam_eps: float = 1e-8
    seed: int = 0
    domain_lo: float = 0.0
    domain_hi: float = 1.0
    format: str = "binary16"
    accumulation: str = "strict"
    # accumulated_diff is evaluated each iteration when set
    track_diff: bool = True
    diff_lo: str = "binary16"
    diff_ref: str = "binary32"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if not self.domain_lo < self.domain_hi:
            raise ValueError("domain_lo must be below domain_hi")
        if self.optimizer not in ("sign_ascent", "adaptive_moment"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        for name in (self.format, self.diff_lo, self.diff_ref):
            get_format(name)

    @classmethod
    def from_dict(cls, d: dict) -> "AttackConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown attack config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AttackState:
    delta: np.ndarray
    iteration: int = 0
    loss_history: list[float] = field(default_factory=list)
    diff_history: list[float] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)
    m: np.ndarray | None = None
    v: np.ndarray | None = None

    @classmethod
    def zeros(cls, shape) -> "AttackState":
        return cls(np.zeros(shape, dtype=np.float64))


@dataclass
class AttackReport:
    config: AttackConfig
    kind: str
    x: np.ndarray
    delta: np.ndarray
    loss_history: list[float]
    diff_history: list[float]
    flags: list[str]

    @property
    def final_loss(self) -> float:
        return self.loss_history[-1]

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "kind": self.kind,
            "x": self.x.tolist(),
            "delta": self.delta.tolist(),
            "loss_history": list(self.loss_history),
            "diff_history": list(self.diff_history),
            "flags": list(self.flags),
        }


def proxy_loss(trace: Trace, saturation: float | None = None) -> float:
    """Sum of ``|activation|`` over every non-input node, accumulated in binary64.

    Non-finite elements count as ``saturation`` (default: the trace format's
    largest finite value).
    """
    if saturation is None:
        saturation = trace.fmt.max_finite
    parts = []
    for k in range(1, len(trace.values)):
        a = np.abs(trace.values[k]).ravel()
        bad = ~np.isfinite(a)
        if bad.any():
            a = np.where(bad, saturation, a)
        parts.extend(a.tolist())
    return math.fsum(parts)


def proxy_loss_and_grad(graph: Graph, x, fmt, accumulation: str = "strict"):
    """Return ``(loss, grad, trace)`` at a single (already rounded) input."""
    fmt = get_format(fmt)
    trace = forward(graph, x, fmt, accumulation)
    loss = proxy_loss(trace)
    seeds = {}
    for k in range(1, len(trace.values)):
        a = trace.values[k]
        # d|a|/da with sign(0) = 0; saturated entries are constants
        seeds[k] = np.where(np.isfinite(a), np.sign(a), 0.0)
    grad = backward(graph, trace, node_cotangents=seeds)
    return loss, grad, trace


def project(delta, x, config: AttackConfig) -> np.ndarray:
    """Clip ``delta`` to the epsilon box, then so that ``x + delta`` stays in the domain."""
    x = np.asarray(x, dtype=np.float64)
    d = np.clip(np.asarray(delta, dtype=np.float64), -config.epsilon, config.epsilon)
    d = np.clip(d, config.domain_lo - x, config.domain_hi - x)
    # the subtraction above can round outward; step toward zero until exact
    for _ in range(4):
        hi = x + d > config.domain_hi
        lo = x + d < config.domain_lo
        if not (hi.any() or lo.any()):
            break
        d = np.where(hi, np.nextafter(d, -np.inf), d)
        d = np.where(lo, np.nextafter(d, np.inf), d)
    return d + 0.0


def _perturbed_input(x, delta, config: AttackConfig, fmt) -> np.ndarray:
    return round_to(fmt, np.clip(x + delta, config.domain_lo, config.domain_hi))


def attack_step(graph: Graph, x, state: AttackState, config: AttackConfig) -> AttackState:
    """One projected ascent step; updates ``state`` in place and returns it.

    ``x`` may be one sample or a ``(n_samples, dim)`` dataset, in which case
    each sample carries its own perturbation and the losses add up (samples
    never interact, so this equals a loop over samples).
    """
    fmt = get_format(config.format)
    x = np.asarray(x, dtype=np.float64)
    xp = _perturbed_input(x, state.delta, config, fmt)
    total, grads, trace = proxy_loss_and_grad(graph, xp, fmt, config.accumulation)
    if trace.nonfinite:
        state.flags.append(f"iter {state.iteration}: non-finite activations at nodes {sorted(trace.nonfinite)}")
    bad = ~np.isfinite(grads)
    if bad.any():
        state.flags.append(f"iter {state.iteration}: {int(bad.sum())} non-finite gradient entries zeroed")
        grads = np.where(bad, 0.0, grads)
    if not grads.any():
        log.info("iteration %d: zero gradient, step skipped", state.iteration)
        state.flags.append(f"iter {state.iteration}: zero gradient")

    if config.optimizer == "sign_ascent":
        new = state.delta + config.alpha * np.sign(grads)
    else:
        new = _adamw_ascent(state.delta, grads, state, config)
    state.delta = project(new, x, config)
    state.loss_history.append(total)
    state.iteration += 1
    return state


def _adamw_ascent(d: np.ndarray, grad: np.ndarray, state: AttackState, config: AttackConfig) -> np.ndarray:
    # maximize the loss by descending on its negation
    g = -grad
    if state.m is None:
        state.m = np.zeros_like(d)
        state.v = np.zeros_like(d)
    t = state.iteration + 1
    state.m = config.beta1 * state.m + (1 - config.beta1) * g
    state.v = config.beta2 * state.v + (1 - config.beta2) * g * g
    m_hat = state.m / (1 - config.beta1**t)
    v_hat = state.v / (1 - config.beta2**t)
    d = d * (1 - config.alpha * config.weight_decay)
    return d - config.alpha * m_hat / (np.sqrt(v_hat) + config.adam_eps)


def evaluate(graph: Graph, x, delta, config: AttackConfig) -> tuple[float, float | None]:
    """Proxy loss (attack format) and, when tracked, accumulated shadow error at ``x + delta``."""
    fmt = get_format(config.format)
    x = np.asarray(x, dtype=np.float64)
    xp = np.clip(x + np.asarray(delta, dtype=np.float64), config.domain_lo, config.domain_hi)
    loss = proxy_loss(forward(graph, round_to(fmt, xp), fmt, config.accumulation))
    diff = None
    if config.track_diff:
        diff = accumulated_diff(graph, xp, config.diff_lo, config.diff_ref, config.accumulation)
    return loss, diff


def run_attack(graph: Graph, x, config: AttackConfig,
               on_step: Callable[[AttackState], None] | None = None) -> AttackReport:
    """Run ``config.iterations`` ascent steps from ``delta = 0``.

    Histories hold ``iterations + 1`` entries: the value at every iterate,
    from the clean input through the final perturbation.  ``on_step`` sees
    the state after each step.
    """
    x = np.asarray(x, dtype=np.float64)
    state = AttackState.zeros(x.shape)
    for _ in range(config.iterations):
        if config.track_diff:
            _, diff = evaluate(graph, x, state.delta, config)
            state.diff_history.append(diff)
        attack_step(graph, x, state, config)
        if on_step is not None:
            on_step(state)
    loss, diff = evaluate(graph, x, state.delta, config)
    state.loss_history.append(loss)
    if config.track_diff:
        state.diff_history.append(diff)
    return AttackReport(config, "NUM", x, state.delta, state.loss_history, state.diff_history, state.flags)


def baseline_perturbation(kind: str, x, config: AttackConfig) -> np.ndarray:
    """NONE, RAND (uniform on the epsilon box) or GAUS (N(0, 0.1) clipped to epsilon)."""
    kind = kind.upper()
    x = np.asarray(x, dtype=np.float64)
    rng = SplitMix64(config.seed).spawn(f"baseline/{kind}")
    eps = config.epsilon
    if kind == "NONE":
        d = np.zeros(x.shape)
    elif kind == "RAND":
        d = rng.uniform(-eps, eps, x.shape)
    elif kind == "GAUS":
        d = np.clip(rng.normal(0.0, GAUS_SD, x.shape), -eps, eps)
    else:
        raise ValueError(f"unknown baseline kind {kind!r}")
    return project(d, x, config)


def perturbation(kind: str, graph: Graph, x, config: AttackConfig) -> tuple[np.ndarray, AttackReport | None]:
    """Perturbation of any kind; NUM runs the search and also returns its report."""
    if kind.upper() == "NUM":
        rep = run_attack(graph, x, config)
        return rep.delta, rep
    return baseline_perturbation(kind, x, config), None
