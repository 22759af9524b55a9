import json

import pytest
import numpy as np

from medvt.core.autodiff.params import ParamStore
from medvt.core.exceptions import SerializationError
from medvt.infrastructure.filesystem.checkpoint_fs import DirectoryCheckpointStore


@pytest.fixture
def checkpoints():
    return DirectoryCheckpointStore()


@pytest.fixture
def params(rng):
    store = ParamStore()
    store.add("encoder.proj.s4.weight", rng.standard_normal((1, 1, 8, 8)))
    store.add("backbone.stage1.conv.bias", rng.standard_normal(4).astype(np.float32))
    store.add("labelprop.attn.wq", rng.standard_normal((8, 4)), trainable=False)
    return store


def test_checkpoint_restores_values_dtypes_and_flags(checkpoints, params, tmp_path):
    """A reload reproduces every tensor bit for bit, with its trainable flag."""
    written = checkpoints.save(params, str(tmp_path / "final"))
    loaded = checkpoints.load(written)

    assert written == str(tmp_path / "final")
    assert checkpoints.exists(written)
    assert sorted(loaded.names()) == sorted(params.names())
    for name in params.names():
        assert loaded.value(name).dtype == params.value(name).dtype
        assert np.array_equal(loaded.value(name), params.value(name))
    assert loaded.trainable_names() == ["backbone.stage1.conv.bias", "encoder.proj.s4.weight"]


def test_manifest_lists_parameters_in_name_order(checkpoints, params, tmp_path):
    checkpoints.save(params, str(tmp_path / "ckpt"))
    manifest = json.loads((tmp_path / "ckpt" / "manifest.json").read_text(encoding="utf-8"))

    assert [e["name"] for e in manifest] == sorted(params.names())
    assert manifest[0] == {"name": "backbone.stage1.conv.bias", "dtype": "float32", "shape": [4],
                           "trainable": True, "file": "backbone.stage1.conv.bias.mvt1"}


def test_missing_or_malformed_manifest(checkpoints, tmp_path):
    assert not checkpoints.exists(str(tmp_path))
    with pytest.raises(SerializationError):
        checkpoints.load(str(tmp_path))
    (tmp_path / "manifest.json").write_text("[{", encoding="utf-8")
    with pytest.raises(SerializationError):
        checkpoints.load(str(tmp_path))


def test_tensor_that_disagrees_with_its_manifest_entry(checkpoints, params, tmp_path):
    checkpoints.save(params, str(tmp_path))
    manifest_path = tmp_path / "manifest.json"
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    manifest[0]["shape"] = [5]
    manifest_path.write_text(json.dumps(manifest), encoding="utf-8")

    with pytest.raises(SerializationError):
        checkpoints.load(str(tmp_path))
