import pytest
import numpy as np

from medvt.core.autodiff.params import ParamStore
from medvt.core.exceptions import ConfigError, DimensionError


@pytest.fixture
def store():
    s = ParamStore()
    s.add("backbone.stage1.conv", np.ones((3, 3)))
    s.add("encoder.within.s4.layer0.attn.wq", np.zeros((4, 4)))
    s.add("labelprop.enc.conv1", np.full(2, 0.5))
    return s


def test_duplicate_name_is_rejected(store):
    with pytest.raises(ConfigError):
        store.add("labelprop.enc.conv1", np.zeros(2))


def test_unknown_name_is_a_config_error(store):
    with pytest.raises(ConfigError):
        store.value("decoder.missing")


def test_with_values_is_non_destructive(store):
    updated = store.with_values({"labelprop.enc.conv1": np.zeros(2)})
    np.testing.assert_array_equal(store.value("labelprop.enc.conv1"), [0.5, 0.5])
    np.testing.assert_array_equal(updated.value("labelprop.enc.conv1"), [0.0, 0.0])
    assert updated.value("backbone.stage1.conv") is store.value("backbone.stage1.conv")


def test_with_values_refuses_shape_changes(store):
    with pytest.raises(DimensionError):
        store.with_values({"backbone.stage1.conv": np.ones((3, 2))})


def test_freeze_and_train_only_prefixes(store):
    frozen = store.freeze_prefixes(["backbone."])
    assert frozen.trainable_names() == ["encoder.within.s4.layer0.attn.wq", "labelprop.enc.conv1"]
    only_lp = store.train_only_prefixes(["labelprop."])
    assert only_lp.trainable_names() == ["labelprop.enc.conv1"]
    assert only_lp.num_values(trainable_only=True) == 2
    assert only_lp.num_values() == 9 + 16 + 2


def test_freezing_is_sticky(store):
    again = store.freeze_prefixes(["backbone."]).freeze_prefixes(["encoder."])
    assert again.trainable_names() == ["labelprop.enc.conv1"]


def test_astype_and_snapshot(store):
    single = store.astype(np.float32)
    assert single.value("backbone.stage1.conv").dtype == np.float32
    assert store.snapshot() == store.with_trainable(lambda n: False).snapshot()
    assert store.snapshot() != single.snapshot()
    assert list(store) == store.names()
    assert "backbone.stage1.conv" in store
    assert len(store) == 3
