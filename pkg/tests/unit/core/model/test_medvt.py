import pytest
import numpy as np

from dataclasses import replace

from medvt.core.autodiff.graph import Graph
from medvt.core.exceptions import ConfigError, DimensionError
from medvt.core.model.backbone import check_input_size, required_size
from medvt.core.model.medvt import MedVT
from medvt.domain.models.configs import desk_config, micro_config, published_dims


@pytest.fixture
def model():
    return MedVT(micro_config())


@pytest.fixture
def params(model):
    return model.initialize(seed=0)


@pytest.fixture
def clip(rng):
    return rng.random((2, 32, 32, 3))


def test_initialization_is_deterministic(model):
    assert model.initialize(seed=4).snapshot() == model.initialize(seed=4).snapshot()
    assert model.initialize(seed=4).snapshot() != model.initialize(seed=5).snapshot()


def test_trunk_initialization_ignores_label_propagation():
    with_lp = MedVT(micro_config()).initialize(seed=2)
    without = MedVT(micro_config(labelprop=replace(micro_config().labelprop, enabled=False))).initialize(seed=2)
    assert not [n for n in without.names() if n.startswith("labelprop.")]
    assert set(without.names()) < set(with_lp.names())
    for name in without.names():
        assert np.array_equal(without.value(name), with_lp.value(name))


def test_forward_shapes(model, params, clip):
    cfg = model.config
    out = model.forward(Graph(params), clip)
    assert out.initial_logits.shape == (2, 8, 8, cfg.num_classes)
    assert out.final_logits.shape == (2, 8, 8, cfg.num_classes)
    assert out.attention.shape == (2, 8, 8, cfg.num_heads)
    assert out.decoder_features.shape == (2, 8, 8, cfg.num_heads + cfg.d)
    assert out.query_trace == ["i1.s4", "i1.s3", "i1.s2"]


def test_forward_without_label_propagation(model, params, clip):
    out = model.forward(Graph(params), clip, use_labelprop=False)
    assert out.final_logits is None
    assert out.logits("initial") is out.initial_logits
    with pytest.raises(ConfigError):
        model.loss(out, np.zeros((2, 32, 32), dtype=np.int64), on="final")


def test_label_propagation_cannot_be_forced_on():
    model = MedVT(micro_config(labelprop=replace(micro_config().labelprop, enabled=False)))
    params = model.initialize(seed=0)
    with pytest.raises(ConfigError):
        model.forward(Graph(params), np.zeros((2, 32, 32, 3)), use_labelprop=True)


def test_forward_checks_frame_count_and_size(model, params):
    with pytest.raises(DimensionError):
        model.forward(Graph(params), np.zeros((3, 32, 32, 3)))
    with pytest.raises(DimensionError):
        model.forward(Graph(params), np.zeros((2, 40, 32, 3)))


def test_input_size_message_names_the_padding():
    assert required_size(40, 64) == (64, 64)
    with pytest.raises(DimensionError, match=r"add 24 rows and 0 columns"):
        check_input_size(40, 64)


def test_narrowed_encoder_scales(model, params, clip):
    single = model.forward(Graph(params), clip, encoded_scales=(4,))
    full = model.forward(Graph(params), clip)
    assert single.initial_logits.shape == full.initial_logits.shape
    assert not np.allclose(single.initial_logits.value, full.initial_logits.value)
    with pytest.raises(ConfigError):
        model.forward(Graph(params), clip, encoded_scales=(4, 3, 2))


def test_loss_is_a_finite_scalar_with_gradients(model, params, clip):
    targets = np.zeros((2, 32, 32), dtype=np.int64)
    targets[:, 8:20, 8:20] = 1
    graph = Graph(params)
    out = model.forward(graph, clip)
    loss = model.loss(out, targets, on="final")
    assert loss.value.shape == ()
    assert np.isfinite(loss.value)
    grads = graph.backward(loss)
    assert "backbone.stage1.conv.weight" in grads
    assert "labelprop.decoder.conv3.weight" in grads


def test_predict_logits_is_full_resolution(model, params, clip):
    logits, attention = model.predict_logits(params, clip, with_attention=True)
    assert logits.shape == (2, 32, 32, 2)
    assert attention.shape == (2, 8, 8, model.config.num_heads)
    np.testing.assert_array_equal(model.predict_logits(params, clip), logits)


def test_single_precision_forward(model, clip):
    params = model.initialize(seed=0, dtype=np.float32)
    out = model.forward(Graph(params), clip.astype(np.float32))
    assert out.final_logits.dtype == np.float32


def test_config_validation():
    with pytest.raises(ConfigError):
        desk_config(d=40)  # sinusoidal 3-D encodings need d % 6 == 0
    with pytest.raises(ConfigError):
        desk_config(image_size=(48, 64))
    assert published_dims().d == 384
    assert desk_config().head_dim == 12
    assert micro_config().num_queries == 2
