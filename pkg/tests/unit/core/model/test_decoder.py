import pytest
import numpy as np

from dataclasses import replace

from medvt.core.autodiff.graph import Graph
from medvt.core.exceptions import ConfigError, DimensionError
from medvt.core.model.decoder import decoder_output, learn_queries, object_attention, pixel_decode, raw_object_attention
from medvt.core.model.medvt import MedVT
from medvt.domain.models.configs import micro_config

T = 2
SIZES = {1: 8, 2: 4, 3: 2, 4: 1}


@pytest.fixture
def model():
    cfg = micro_config(decoder=replace(micro_config().decoder, num_iterations=2))
    return MedVT(cfg)


@pytest.fixture
def graph(model):
    return Graph(model.initialize(seed=5))


@pytest.fixture
def pixel(model, graph, rng):
    channels = model.pixel_decoder_channels()
    features = {s: graph.constant(rng.standard_normal((T, n, n, channels[s]))) for s, n in SIZES.items()}
    return pixel_decode(graph, features)


def test_pixel_decoder_outputs_model_width_at_every_scale(pixel, model):
    for s, n in SIZES.items():
        assert pixel[s].shape == (T, n, n, model.config.d)


def test_pixel_decoder_needs_contiguous_scales(graph, rng):
    features = {1: graph.constant(rng.standard_normal((T, 8, 8, 4))),
                3: graph.constant(rng.standard_normal((T, 2, 2, 8)))}
    with pytest.raises(DimensionError):
        pixel_decode(graph, features)


def test_queries_visit_scales_coarse_to_fine_each_iteration(graph, pixel, model):
    query_set = learn_queries(graph, pixel, model.config)
    assert query_set.trace == ["i1.s4", "i1.s3", "i1.s2", "i2.s4", "i2.s3", "i2.s2"]
    assert query_set.queries.shape == (model.config.num_queries, model.config.d)
    assert query_set.mode == "per_frame"


def test_queries_need_every_decoder_scale(graph, pixel, model):
    with pytest.raises(DimensionError):
        learn_queries(graph, {s: v for s, v in pixel.items() if s != 2}, model.config)


def test_per_frame_attention_restricts_each_query_to_its_frame(graph, pixel, model):
    cfg = model.config
    query_set = learn_queries(graph, pixel, cfg)
    attention = object_attention(graph, query_set, pixel[1], cfg)
    assert attention.shape == (T, 8, 8, cfg.num_heads)
    raw = raw_object_attention(graph, query_set, pixel[1], cfg)
    assert raw.shape == (cfg.num_heads, T, T * 64)
    np.testing.assert_allclose(raw.sum(axis=-1), 1.0, atol=1e-12)
    for t in range(T):
        np.testing.assert_array_equal(attention.value[t, :, :, 0].reshape(-1), raw[0, t, t * 64:(t + 1) * 64])


def test_full_row_attention_averages_every_query(graph, pixel, model):
    cfg = model.config
    query_set = learn_queries(graph, pixel, cfg)
    attention = object_attention(graph, query_set, pixel[1], cfg, full_row=True)
    raw = raw_object_attention(graph, query_set, pixel[1], cfg)
    np.testing.assert_allclose(attention.value[..., 1].reshape(-1), raw[1].mean(axis=0), atol=1e-15)


def test_per_clip_attention_spreads_one_distribution_over_the_clip(rng):
    cfg = micro_config(decoder=replace(micro_config().decoder, query_mode="per_clip"))
    model = MedVT(cfg)
    graph = Graph(model.initialize(seed=1))
    channels = model.pixel_decoder_channels()
    pixel = pixel_decode(graph, {s: graph.constant(rng.standard_normal((T, n, n, channels[s])))
                                 for s, n in SIZES.items()})
    query_set = learn_queries(graph, pixel, cfg)
    assert query_set.queries.shape[0] == 1
    attention = object_attention(graph, query_set, pixel[1], cfg)
    np.testing.assert_allclose(attention.value.sum(axis=(0, 1, 2)), 1.0, atol=1e-12)


def test_object_attention_rejects_other_query_counts(graph, pixel, model):
    query_set = learn_queries(graph, pixel, model.config)
    short = replace(query_set, queries=graph.constant(np.zeros((3, model.config.d))))
    with pytest.raises(ConfigError):
        object_attention(graph, short, pixel[1], model.config)


def test_decoder_output_puts_attention_channels_first(graph, pixel, model):
    query_set = learn_queries(graph, pixel, model.config)
    attention = object_attention(graph, query_set, pixel[1], model.config)
    features = decoder_output(attention, pixel[1])
    heads = model.config.num_heads
    assert features.shape == (T, 8, 8, heads + model.config.d)
    np.testing.assert_array_equal(features.value[..., :heads], attention.value)
    np.testing.assert_array_equal(features.value[..., heads:], pixel[1].value)
    with pytest.raises(DimensionError):
        decoder_output(attention, pixel[2])
