import pytest
import numpy as np

from medvt.core.autodiff import functional as F
from medvt.core.autodiff.graph import Graph
from medvt.core.autodiff.params import ParamStore
from medvt.core.exceptions import ConfigError, DimensionError


@pytest.fixture
def params(rng):
    store = ParamStore()
    store.add("w", rng.standard_normal((3, 2)))
    store.add("b", rng.standard_normal(2))
    store.add("frozen", rng.standard_normal((3, 2)), trainable=False)
    store.add("unused", rng.standard_normal(4))
    return store


def test_param_leaf_is_cached_per_name(params):
    graph = Graph(params)
    assert graph.param("w").id == graph.param("w").id
    assert len(graph) == 1


def test_graph_dtype_casts_params_and_constants(params):
    graph = Graph(params, dtype=np.float32)
    assert graph.param("w").dtype == np.float32
    assert graph.constant(np.ones(2)).dtype == np.float32
    assert params.value("w").dtype == np.float64


def test_backward_of_square_sum_is_twice_the_input(params):
    graph = Graph(params)
    w = graph.param("w")
    grads = graph.backward(F.sum_(w * w))
    np.testing.assert_array_equal(grads["w"], 2 * params.value("w"))


def test_fan_out_gradients_accumulate(params):
    graph = Graph(params)
    b = graph.param("b")
    grads = graph.backward(F.sum_(b + b + b))
    np.testing.assert_array_equal(grads["b"], np.full(2, 3.0))


def test_frozen_and_unreached_params_get_no_gradient(params, rng):
    graph = Graph(params)
    x = graph.constant(rng.standard_normal((4, 3)))
    y = F.bias_add(x @ graph.param("w") + x @ graph.param("frozen"), graph.param("b"))
    grads = graph.backward(F.sum_(y))
    assert set(grads) == {"w", "b"}


def test_matmul_gradient_matches_closed_form(params, rng):
    graph = Graph(params)
    x_value = rng.standard_normal((4, 3))
    grads = graph.backward(F.sum_(graph.constant(x_value) @ graph.param("w")))
    np.testing.assert_allclose(grads["w"], x_value.T @ np.ones((4, 2)), atol=1e-12)


def test_backward_requires_a_scalar(params):
    graph = Graph(params)
    with pytest.raises(DimensionError):
        graph.backward(graph.param("w"))


def test_mixing_graphs_is_rejected(params):
    first, second = Graph(params), Graph(params)
    with pytest.raises(ConfigError):
        F.add(first.param("b"), second.param("b"))
    with pytest.raises(ConfigError):
        second.backward(F.sum_(first.param("b")))


def test_relu_records_distance_to_kink(params):
    graph = Graph(params)
    y = F.relu(graph.constant(np.array([-0.5, 0.25, 2.0])))
    assert y.node.op == "relu"
    assert y.node.meta["min_abs_input"] == 0.25


def test_unary_negation_and_arrays_as_operands(params):
    graph = Graph(params)
    b = graph.param("b")
    y = -(b + np.ones(2))
    np.testing.assert_array_equal(y.value, -(params.value("b") + 1))
    grads = graph.backward(F.sum_(y))
    np.testing.assert_array_equal(grads["b"], np.full(2, -1.0))


def test_constant_only_expression_has_no_gradients():
    graph = Graph()
    c = graph.constant(np.ones(3))
    assert graph.backward(F.sum_(F.exp(c))) == {}
