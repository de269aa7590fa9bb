import numpy as np
import pytest

from biirra.encoders import (
    CLS_ID, PAD_ID, Model, ModelConfig, cat_sequences, load_checkpoint, reachable_parameters,
    save_checkpoint,
)
from biirra.tensor_core import ops


@pytest.fixture(scope="module")
def model():
    return Model(ModelConfig(dim=16, heads=2, uni_layers=1, fusion_layers=1, patch_grid=(3, 3),
                             patch_dim=4, max_text_len=6, vocab_size=12, proj_dim=8, init_std=0.2))


def _image(n=2, seed=0):
    return np.random.default_rng(seed).normal(size=(n, 9, 4))


def test_output_shapes(model):
    img = model.encode_image(_image())
    assert img.states.shape == (2, 10, 16)
    assert img.cls.shape == (2, 16) and img.tokens.shape == (2, 9, 16)
    txt = model.encode_text(np.array([[CLS_ID, 5, 6, PAD_ID], [CLS_ID, 7, PAD_ID, PAD_ID]]))
    assert txt.states.shape == (2, 4, 16)
    fused = model.fuse(img, txt)
    assert fused.states.shape == img.states.shape
    assert model.project_global(img.cls, "image").shape == (2, 8)
    assert model.itm_logits(fused.cls).shape == (2, 2)
    assert model.mlm_logits(fused.tokens).shape == (2, 9, 12)


def test_projection_is_unit_norm(model):
    v = model.project_global(model.encode_image(_image()).cls, "image").data
    assert np.allclose(np.linalg.norm(v, axis=1), 1.0)


def test_padding_does_not_leak(model):
    ids = np.array([[CLS_ID, 5, 6, PAD_ID, PAD_ID, PAD_ID]])
    short = model.encode_text(ids[:, :3]).states.data
    long = model.encode_text(ids).states.data
    assert np.allclose(short[0, :3], long[0, :3], atol=1e-12)


def test_masked_patches_use_the_mask_token(model):
    x = _image(1)
    mask = np.zeros((1, 9), dtype=bool)
    mask[0, [2, 5]] = True
    y = x.copy()
    y[0, [2, 5]] = 123.0
    a = model.encode_image(x, mask).states.data
    b = model.encode_image(y, mask).states.data
    assert np.allclose(a, b, atol=1e-12)
    assert not np.allclose(a, model.encode_image(x).states.data)


def test_shared_text_encoder_across_languages(model):
    ids = np.array([[CLS_ID, 3, 4]])
    a = model.encode_text(ids, "source").states.data
    b = model.encode_text(ids, "target").states.data
    assert np.array_equal(a, b)


def test_parameter_names_unique_and_registered_once(model):
    names = model.params.names()
    assert len(names) == len(set(names))
    ids = {id(p) for p in model.parameters()}
    assert len(ids) == len(names)


def test_fusion_reaches_both_encoders(model):
    img = model.encode_image(_image())
    txt = model.encode_text(np.array([[CLS_ID, 5, 6], [CLS_ID, 7, 8]]))
    out = ops.sum(model.fuse(img, txt).cls)
    names = reachable_parameters(out)
    assert any(n.startswith("image.") for n in names)
    assert any(n.startswith("text.") for n in names)
    assert not any(n.startswith("head.") for n in names)


def test_cat_and_take_preserve_rows(model):
    a = model.encode_image(_image(2, 1))
    b = model.encode_image(_image(3, 2))
    both = cat_sequences([a, b])
    assert both.batch == 5
    assert np.array_equal(both.take([3]).states.data[0], b.states.data[1])


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(dim=10, heads=4)
    with pytest.raises(ValueError):
        ModelConfig(vocab_size=2)
    with pytest.raises(ValueError):
        ModelConfig(patch_grid=(0, 3))


def test_input_validation(model):
    with pytest.raises(ValueError):
        model.encode_image(np.zeros((1, 8, 4)))
    with pytest.raises(ValueError):
        model.encode_text(np.zeros((1, 7), dtype=int))
    with pytest.raises(ValueError):
        model.encode_text(np.array([[CLS_ID, 99]]))


def test_checkpoint_round_trip(tmp_path, model):
    path = tmp_path / "ckpt.json"
    save_checkpoint(model, path, {"note": "x"})
    again, extra = load_checkpoint(path)
    assert extra == {"note": "x"}
    for name, p in model.params.items():
        assert np.array_equal(p.data, again.params[name].data)
    x = _image()
    assert np.array_equal(model.encode_image(x).states.data, again.encode_image(x).states.data)


def test_checkpoint_version_checked(tmp_path, model):
    import json

    path = tmp_path / "bad.json"
    save_checkpoint(model, path)
    doc = json.loads(path.read_text())
    doc["version"] = "other"
    path.write_text(json.dumps(doc))
    with pytest.raises(ValueError):
        load_checkpoint(path)
