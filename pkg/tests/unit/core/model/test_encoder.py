import pytest
import numpy as np

from dataclasses import replace

from medvt.core.autodiff.graph import Graph
from medvt.core.exceptions import ConfigError, DimensionError
from medvt.core.model.attention import positional_encoding
from medvt.core.model.encoder import between_scale, down_project, encode, within_scale
from medvt.core.model.medvt import MedVT
from medvt.domain.models.configs import micro_config

T = 2
SIZES = {1: 8, 2: 4, 3: 2, 4: 1}


@pytest.fixture
def model():
    return MedVT(micro_config())


@pytest.fixture
def params(model):
    return model.initialize(seed=3)


@pytest.fixture
def features(model, rng):
    widths = model.config.backbone.widths
    return {s: rng.standard_normal((T, n, n, widths[s - 1])) for s, n in SIZES.items()}


def pyramid(graph, features):
    return {s: graph.constant(f) for s, f in features.items()}


def test_down_projection_flattens_to_model_width(params, features, model):
    graph = Graph(params)
    out = down_project(graph, graph.constant(features[1]), 1)
    assert out.shape == (T * 64, model.config.d)


def test_encode_keeps_every_scale(params, features, model):
    graph = Graph(params)
    out = encode(graph, pyramid(graph, features), model.config)
    assert sorted(out) == [1, 2, 3, 4]
    for s, n in SIZES.items():
        assert out[s].shape == (T * n * n, model.config.d)


def test_unencoded_scales_are_plain_projections(params, features, model):
    graph = Graph(params)
    out = encode(graph, pyramid(graph, features), model.config)
    projected = down_project(graph, graph.constant(features[2]), 2)
    np.testing.assert_allclose(out[2].value, projected.value)


def test_coarsest_scale_skips_between_scale_attention(params, features, model):
    cfg = model.config
    graph = Graph(params)
    out = encode(graph, pyramid(graph, features), cfg)

    check = Graph(params)
    x = down_project(check, check.constant(features[4]), 4)
    p = positional_encoding(check, cfg.encoder.pe_kind, 4, T, 1, 1, cfg.d, x.dtype)
    expected = within_scale(check, x, p, 4, cfg.encoder.blocks_per_scale[4], cfg)
    np.testing.assert_allclose(out[4].value, expected.value)


def test_single_scale_override_leaves_finer_scales_unencoded(params, features, model):
    cfg = model.config
    graph = Graph(params)
    out = encode(graph, pyramid(graph, features), cfg, replace(cfg.encoder, encoded_scales=(4,)))
    projected = down_project(graph, graph.constant(features[3]), 3)
    np.testing.assert_allclose(out[3].value, projected.value)


def test_encoded_scales_must_be_in_the_pyramid(params, features, model):
    graph = Graph(params)
    partial = {s: graph.constant(f) for s, f in features.items() if s != 3}
    with pytest.raises(DimensionError):
        encode(graph, partial, model.config)


def test_within_scale_rejects_mismatched_encoding(params, features, model):
    graph = Graph(params)
    x = down_project(graph, graph.constant(features[4]), 4)
    with pytest.raises(DimensionError):
        within_scale(graph, x, graph.constant(np.zeros((3, model.config.d))), 4, 1, model.config)


def test_between_scale_needs_adjacent_scales(params, features, model):
    graph = Graph(params)
    x = down_project(graph, graph.constant(features[3]), 3)
    with pytest.raises(ConfigError):
        between_scale(graph, x, x, x, x, (2, 4), model.config)
