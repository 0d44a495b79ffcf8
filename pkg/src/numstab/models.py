"""Built-in model specs: seeded random MLPs and the two-layer tanh amplifier."""

from __future__ import annotations

from .graph import Graph
from .io import build_from_spec
from .rng import SplitMix64

__all__ = [
    "random_model_spec",
    "random_model",
    "tanh_amplifier_spec",
    "tanh_amplifier",
    "acceptance_model_spec",
    "acceptance_inputs",
]


def random_model_spec(widths, activation: str = "tanh", seed: int = 0, bias: bool = False) -> dict:
    """Affine layers with weights drawn U[-1, 1], activation between layers.

    Biases are zero unless ``bias`` is set, in which case they are drawn
    U[-1, 1] after each layer's weights.
    """
    widths = [int(w) for w in widths]
    if len(widths) < 2:
        raise ValueError("need at least an input and an output width")
    rng = SplitMix64(seed)
    layers = []
    for i, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
        if i:
            layers.append({"type": activation})
        w = rng.uniform(-1.0, 1.0, (n_out, n_in))
        b = rng.uniform(-1.0, 1.0, n_out) if bias else [0.0] * n_out
        layers.append({"type": "affine", "weights": w.tolist(), "bias": list(b)})
    return {"input_dim": widths[0], "layers": layers}


def random_model(widths, activation: str = "tanh", seed: int = 0, bias: bool = False) -> Graph:
    return build_from_spec(random_model_spec(widths, activation, seed, bias))


def tanh_amplifier_spec() -> dict:
    """y = w2 . tanh(W1 x) with W1 = [[4, 4], [4, -4]], w2 = [-1, 1].

    At x = (0, d) the output is -2 tanh(4 d), an 8x local gain at the origin.
    """
    return {
        "input_dim": 2,
        "layers": [
            {"type": "affine", "weights": [[4.0, 4.0], [4.0, -4.0]], "bias": [0.0, 0.0]},
            {"type": "tanh"},
            {"type": "affine", "weights": [[-1.0, 1.0]], "bias": [0.0]},
        ],
    }


def tanh_amplifier() -> Graph:
    return build_from_spec(tanh_amplifier_spec())


ACCEPTANCE_WIDTHS = (8, 16, 16, 4)
ACCEPTANCE_SAMPLES = 256


def acceptance_model_spec() -> dict:
    """The fixed toy MLP used for attack-level checks: widths 8-16-16-4, tanh, seed 0."""
    return random_model_spec(ACCEPTANCE_WIDTHS, "tanh", seed=0)


def acceptance_inputs(seed: int, n: int = ACCEPTANCE_SAMPLES):
    """``n`` clean inputs drawn U[0, 1)^8 from the ``input`` stream of ``seed``."""
    return SplitMix64(seed).spawn("input").random((n, ACCEPTANCE_WIDTHS[0]))
