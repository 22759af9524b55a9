import pytest
import numpy as np

from dataclasses import replace

from medvt.core.autodiff import functional as F
from medvt.core.autodiff.graph import Graph
from medvt.core.autodiff.params import ParamStore
from medvt.core.exceptions import ConfigError, DegenerateRowError, DimensionError
from medvt.core.model.attention import FrameIndex, ManyToManyRule, ManyToOneRule
from medvt.core.model.labelprop import (
    combine,
    decode_and_combine,
    encode_labels,
    init_labelprop,
    label_propagation,
    masked_softmax,
    propagate,
    propagator_attention,
    spectral_oracle,
)
from medvt.core.model.layers import ParamInit
from medvt.domain.models.configs import micro_config

T, H, W = 2, 4, 4


@pytest.fixture
def cfg():
    return micro_config()


@pytest.fixture
def params(cfg):
    store = ParamStore()
    init_labelprop(ParamInit(store, seed=3), cfg)
    return store


@pytest.fixture
def inputs(cfg, rng):
    features = rng.standard_normal((T, H, W, cfg.d + cfg.num_heads))
    logits = rng.standard_normal((T, H, W, cfg.num_classes))
    return features, logits


def test_parameter_names(params):
    assert params.names() == [
        "labelprop.encoder.conv1.weight", "labelprop.encoder.conv1.bias",
        "labelprop.encoder.conv2.weight", "labelprop.encoder.conv2.bias",
        "labelprop.attn.wq", "labelprop.attn.wk",
        "labelprop.decoder.conv1.weight", "labelprop.decoder.conv1.bias",
        "labelprop.decoder.conv2.weight", "labelprop.decoder.conv2.bias",
        "labelprop.decoder.conv3.weight", "labelprop.decoder.conv3.bias",
    ]


def test_encoded_labels_are_flat_tokens(params, inputs, cfg):
    graph = Graph(params)
    embedded = encode_labels(graph, graph.constant(inputs[1]))
    assert embedded.shape == (T * H * W, cfg.labelprop.embed_dim)


def test_propagation_copies_constant_labels_from_the_other_frame(params, cfg, rng):
    """Under many-to-many with two frames, frame 0 rows average frame 1 labels only."""
    graph = Graph(params)
    features = graph.constant(rng.standard_normal((T * H * W, cfg.d + cfg.num_heads)))
    labels = np.zeros((T * H * W, 3))
    labels[:H * W] = [1.0, 0.0, 0.0]
    labels[H * W:] = [0.0, 0.25, 0.75]
    out = propagate(graph, features, graph.constant(labels), ManyToManyRule(FrameIndex(T, H * W)), cfg).value
    np.testing.assert_allclose(out[:H * W], np.tile([0.0, 0.25, 0.75], (H * W, 1)), atol=1e-12)
    np.testing.assert_allclose(out[H * W:], np.tile([1.0, 0.0, 0.0], (H * W, 1)), atol=1e-12)


def test_causal_propagation_leaves_frame_zero_empty(params, cfg, rng):
    graph = Graph(params)
    features = graph.constant(rng.standard_normal((T * H * W, cfg.d + cfg.num_heads)))
    labels = graph.constant(rng.standard_normal((T * H * W, 4)))
    out = propagate(graph, features, labels, ManyToOneRule(FrameIndex(T, H * W)), cfg).value
    np.testing.assert_array_equal(out[:H * W], 0.0)


def test_many_to_many_needs_two_frames(params, cfg, rng):
    graph = Graph(params)
    features = graph.constant(rng.standard_normal((H * W, cfg.d + cfg.num_heads)))
    labels = graph.constant(rng.standard_normal((H * W, 4)))
    with pytest.raises(DegenerateRowError):
        propagate(graph, features, labels, ManyToManyRule(FrameIndex(1, H * W)), cfg)


def test_propagate_checks_token_counts(params, cfg, rng):
    graph = Graph(params)
    with pytest.raises(DimensionError):
        propagate(graph, graph.constant(np.zeros((32, 10))), graph.constant(np.zeros((16, 4))),
                  ManyToManyRule(FrameIndex(T, 16)), cfg)


# --- Combination ---

def test_logit_combination_is_the_average(rng):
    graph = Graph()
    a, b = rng.standard_normal((2, 3, 2)), rng.standard_normal((2, 3, 2))
    out = combine(graph.constant(a), graph.constant(b))
    np.testing.assert_allclose(out.value, (a + b) / 2, atol=1e-15)


def test_combining_identical_logits_is_the_identity(rng):
    graph = Graph()
    a = rng.standard_normal((2, 3, 2))
    np.testing.assert_array_equal(combine(graph.constant(a), graph.constant(a)).value, a)
    probs = combine(graph.constant(a), graph.constant(a), "probs").value
    np.testing.assert_allclose(probs, F.log_softmax(graph.constant(a)).value, atol=1e-12)


def test_combine_rejects_unknown_modes_and_shapes(rng):
    graph = Graph()
    a = graph.constant(rng.standard_normal((2, 3, 2)))
    with pytest.raises(ConfigError):
        combine(a, a, "max")
    with pytest.raises(DimensionError):
        combine(a, graph.constant(np.zeros((2, 3, 3))))


def test_causal_decode_keeps_the_first_frame(params, inputs, cfg, rng):
    graph = Graph(params)
    initial = graph.constant(inputs[1])
    propagated = graph.constant(rng.standard_normal((T * H * W, cfg.labelprop.embed_dim)))
    out = decode_and_combine(graph, propagated, initial, ManyToOneRule(FrameIndex(T, H * W)))
    np.testing.assert_array_equal(out.value[0], inputs[1][0])
    assert out.shape == initial.shape


# --- Full propagator ---

@pytest.mark.parametrize("rule", ["mtom", "mto1"])
def test_label_propagation_output_shape_and_gradients(params, inputs, cfg, rule):
    cfg = replace(cfg, labelprop=replace(cfg.labelprop, rule=rule))
    graph = Graph(params)
    out = label_propagation(graph, graph.constant(inputs[0]), graph.constant(inputs[1]), cfg)
    assert out.shape == (T, H, W, cfg.num_classes)
    grads = graph.backward(F.sum_(out))
    assert "labelprop.attn.wq" in grads
    assert "labelprop.decoder.conv3.weight" in grads


def test_label_propagation_checks_spatial_agreement(params, inputs, cfg):
    graph = Graph(params)
    with pytest.raises(DimensionError):
        label_propagation(graph, graph.constant(inputs[0][:, :2]), graph.constant(inputs[1]), cfg)


# --- Random-walk oracle ---

def test_masked_attention_is_the_random_walk_operator(rng):
    rule = ManyToManyRule(FrameIndex(3, 5))
    scores = rng.standard_normal((15, 15)) * 3
    report = spectral_oracle(scores, rule)
    assert report.passed
    assert report.max_abs_error <= 1e-10
    assert report.rule == "mtom"


def test_oracle_compares_against_given_attention(rng):
    rule = ManyToManyRule(FrameIndex(2, 3))
    scores = rng.standard_normal((6, 6))
    wrong = masked_softmax(scores, rule)
    wrong[0] = np.roll(wrong[0], 1)
    assert not spectral_oracle(scores, rule, attention=wrong).passed


def test_oracle_rejects_zero_degree_rows(rng):
    rule = ManyToOneRule(FrameIndex(2, 3))
    with pytest.raises(DegenerateRowError) as excinfo:
        spectral_oracle(rng.standard_normal((6, 6)), rule)
    assert excinfo.value.rows == [0, 1, 2]


def test_propagator_attention_rows_sum_to_one(params, cfg, rng):
    features = rng.standard_normal((T * H * W, cfg.d + cfg.num_heads))
    _, weights = propagator_attention(features, params.value("labelprop.attn.wq"),
                                      params.value("labelprop.attn.wk"),
                                      ManyToManyRule(FrameIndex(T, H * W)), cfg)
    assert weights.shape == (cfg.num_heads, T * H * W, T * H * W)
    np.testing.assert_allclose(weights.sum(axis=-1), 1.0, atol=1e-12)
