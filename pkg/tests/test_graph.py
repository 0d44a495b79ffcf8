import math

import numpy as np
import pytest

from numstab.graph import GraphBuilder, GraphError, backward, forward, output_vector
from numstab.io import SpecError, build_from_spec
from numstab.models import tanh_amplifier, tanh_amplifier_spec
from numstab.softfloat import BFLOAT16, BINARY16, BINARY32, BINARY64, round_to

from graphgen import gradient_relative_error, random_graph


def chain(kind, dim=1, **params):
    b = GraphBuilder((dim,))
    b.add(kind, 0, **params)
    return b.build()


# -- construction -------------------------------------------------------------

def test_single_affine_spec():
    g = build_from_spec({"input_dim": 2, "layers": [{"type": "affine", "weights": [[1, -2]]}]})
    assert [n.kind for n in g.nodes] == ["input", "matmul", "add"]
    assert g.K == 2
    assert g.output_ids == (2,)


def test_tanh_amplifier_structure():
    g = tanh_amplifier()
    assert [n.kind for n in g.nodes] == ["input", "matmul", "add", "tanh", "matmul", "add"]
    assert g.K == 5


def test_spec_width_mismatch_names_layer():
    spec = {"input_dim": 2, "layers": [{"type": "affine", "weights": [[1, 2, 3]]}]}
    with pytest.raises(SpecError, match="layer 0") as info:
        build_from_spec(spec)
    assert info.value.layer == 0


def test_spec_unknown_activation():
    spec = {"input_dim": 1, "layers": [{"type": "affine", "weights": [[1]]}, {"type": "gelu"}]}
    with pytest.raises(SpecError, match="layer 1: unknown layer type 'gelu'"):
        build_from_spec(spec)


@pytest.mark.parametrize("spec", [
    [],
    {"layers": []},
    {"input_dim": 0, "layers": []},
    {"input_dim": 2, "layers": {}},
    {"input_dim": 2, "layers": [{"weights": [[1, 1]]}]},
    {"input_dim": 2, "layers": [{"type": "affine", "weights": [1, 1]}]},
    {"input_dim": 2, "layers": [{"type": "affine", "weights": [[1, 1]], "bias": [1, 2]}]},
    {"input_dim": 2, "layers": [{"type": "affine", "weights": [["a", 1]]}]},
    {"input_dim": 2, "layers": [], "output_ids": [3]},
])
def test_spec_rejections(spec):
    with pytest.raises(SpecError):
        build_from_spec(spec)


def test_builder_rejections():
    b = GraphBuilder(2)
    with pytest.raises(GraphError):
        b.add("conv", 0)
    with pytest.raises(GraphError):
        b.add("add", 0, 1)
    with pytest.raises(GraphError):
        b.add("matmul", 0, weight=np.ones((2, 3)))
    with pytest.raises(GraphError):
        b.add("add", 0, operand=np.ones(3))
    with pytest.raises(GraphError):
        b.add("affine", 0, weight=np.ones((2, 2)), bias=np.ones(3))
    with pytest.raises(GraphError):
        b.build([])


def test_graph_is_immutable():
    g = tanh_amplifier()
    with pytest.raises(AttributeError):
        g.nodes = ()


# -- forward ------------------------------------------------------------------

def test_identity_graph():
    g = GraphBuilder(1).build([0])
    tr = forward(g, [0.5])
    assert tr[0].tolist() == [0.5]
    assert g.K == 0


def test_self_add_exact():
    b = GraphBuilder(1)
    b.add("add", 0, 0)
    tr = forward(b.build(), [2048.0], BINARY16)
    assert tr[1].tolist() == [4096.0]


def test_double_absorption():
    b = GraphBuilder(1)
    c = b.add("constant", value=[1.0])
    a1 = b.add("add", 0, c)
    b.add("add", a1, c)
    tr = forward(b.build(), [2048.0], BINARY16)
    assert tr[3].tolist() == [2048.0]
    assert forward(b.build(), [2048.0], BINARY32)[3].tolist() == [2050.0]


def test_tanh_amplifier_output_binary64():
    g = tanh_amplifier()
    for d in (0.0, 0.1, -0.3, 1e-3):
        y = output_vector(g, forward(g, [0.0, d]))[0]
        assert abs(y - (-2 * math.tanh(4 * d))) <= 1e-12


def test_strict_matvec_rounds_every_step():
    # 1 + 2^-11 + 2^-11 in binary16: each partial sum rounds back to 1 (tie to even)
    g = chain("matmul", 3, weight=[[1.0, 1.0, 1.0]])
    x = [1.0, 2.0**-11, 2.0**-11]
    assert forward(g, x, BINARY16, "strict")[1].tolist() == [1.0]
    # binary32 accumulator keeps both small terms, final rounding lands on 1 + 2^-10
    assert forward(g, x, BINARY16, "wide")[1].tolist() == [1.0 + 2.0**-10]


def test_wide_equals_strict_in_binary64():
    rng = np.random.default_rng(5)
    for _ in range(30):
        g = random_graph(rng)
        x = rng.uniform(-1, 1, g.input_shape)
        a, b = forward(g, x, BINARY64, "strict"), forward(g, x, BINARY64, "wide")
        for u, v in zip(a.values, b.values):
            assert np.array_equal(u, v)


@pytest.mark.parametrize("fmt", [BINARY16, BFLOAT16, BINARY32])
@pytest.mark.parametrize("acc", ["strict", "wide"])
def test_trace_values_are_representable(fmt, acc):
    rng = np.random.default_rng(9)
    for _ in range(20):
        g = random_graph(rng)
        x = round_to(fmt, rng.uniform(-1, 1, g.input_shape))
        for v in forward(g, x, fmt, acc).values:
            fin = np.isfinite(v)
            assert np.array_equal(round_to(fmt, v[fin]), v[fin])


def test_forward_is_deterministic():
    rng = np.random.default_rng(1)
    g = random_graph(rng)
    x = rng.uniform(-1, 1, g.input_shape)
    a, b = forward(g, x, BINARY16), forward(g, x, BINARY16)
    assert all(np.array_equal(u, v) for u, v in zip(a.values, b.values))


def test_batch_matches_per_sample():
    rng = np.random.default_rng(2)
    for _ in range(10):
        g = random_graph(rng)
        xs = rng.uniform(-1, 1, (5,) + g.input_shape)
        batched = forward(g, xs, BINARY16)
        for i, x in enumerate(xs):
            single = forward(g, x, BINARY16)
            for u, v in zip(batched.values, single.values):
                assert np.array_equal(u[i], v)


def test_input_shape_checked():
    with pytest.raises(GraphError):
        forward(tanh_amplifier(), [1.0, 2.0, 3.0])
    with pytest.raises(GraphError):
        forward(tanh_amplifier(), np.zeros((2, 2, 2)))


def test_overflow_is_recorded_not_raised():
    b = GraphBuilder(1)
    b.add("exp", 0)
    tr = forward(b.build(), [20.0], BINARY16)
    assert tr[1].tolist() == [math.inf]
    assert tr.nonfinite == {1}


def test_naive_softmax_overflows_where_stable_does_not():
    g = chain("softmax", 3)
    x = [12.0, 11.0, 0.0]
    stable = forward(g, x, BINARY16)
    naive = forward(g, x, BINARY16, softmax="naive")
    assert stable.nonfinite == set()
    assert stable[1].sum() == pytest.approx(1.0, abs=2e-3)
    assert naive.nonfinite == {1}


def test_zero_over_zero_flags_nan():
    b = GraphBuilder(1)
    b.add("div_elementwise", 0, 0)
    tr = forward(b.build(), [0.0])
    assert np.isnan(tr[1][0]) and tr.nonfinite == {1}


def test_layernorm_values():
    g = chain("layernorm", 4)
    y = forward(g, [1.0, 2.0, 3.0, 4.0])[1]
    x = np.array([1.0, 2.0, 3.0, 4.0])
    want = (x - x.mean()) / np.sqrt(x.var() + 1e-5)
    assert np.allclose(y, want, rtol=1e-14)


def test_softmax_axis_and_relu():
    g = chain("softmax", 3)
    y = forward(g, [0.0, 0.0, math.log(2.0)])[1]
    assert np.allclose(y, [0.25, 0.25, 0.5])
    r = forward(chain("relu", 3), [-1.0, 0.0, 2.0])[1]
    assert r.tolist() == [0.0, 0.0, 2.0]


# -- backward -----------------------------------------------------------------

def test_linear_gradient():
    g = chain("matmul", 1, weight=[[3.0]])
    assert backward(g, forward(g, [2.0]), [1.0]).tolist() == [3.0]


def test_tanh_gradient_at_zero():
    g = chain("tanh", 1)
    assert backward(g, forward(g, [0.0]), [1.0]).tolist() == [1.0]


def test_amplifier_gradient_is_minus_eight():
    g = tanh_amplifier()
    grad = backward(g, forward(g, [0.0, 0.0]), [1.0])
    assert grad[1] == -8.0
    assert grad[0] == 0.0


def test_cotangent_size_checked():
    g = tanh_amplifier()
    with pytest.raises(GraphError):
        backward(g, forward(g, [0.0, 0.0]), [1.0, 2.0])


def test_no_cotangent_gives_zero_gradient():
    g = tanh_amplifier()
    assert backward(g, forward(g, [0.3, 0.1])).tolist() == [0.0, 0.0]


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(123)
    worst = max(gradient_relative_error(random_graph(rng), rng) for _ in range(40))
    assert worst <= 1e-6


def test_multi_output_gradient():
    b = GraphBuilder(2)
    m = b.add("matmul", 0, weight=[[1.0, 2.0]])
    t = b.add("tanh", m)
    g = b.build([m, t])
    x = np.array([0.1, 0.2])
    grad = backward(g, forward(g, x), [1.0, 1.0])
    s = 1 - math.tanh(0.5) ** 2
    assert np.allclose(grad, [1 + s, 2 + 2 * s], rtol=1e-15)


def test_spec_round_trip_of_amplifier():
    spec = tanh_amplifier_spec()
    assert build_from_spec(spec).nodes[1].params["weight"].tolist() == [[4.0, 4.0], [4.0, -4.0]]
