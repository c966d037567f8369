import numpy as np
import pytest
import torch

from mesa.backbone import (
    LAYER_SPECS,
    LAYERS,
    Backbone,
    BackboneError,
    extract_features,
    gram,
    load_backbone,
    receptive_fields,
)
from mesa.image_core import IMAGENET_STD, preprocess


def test_receptive_field_recurrence():
    assert receptive_fields() == {"layer1": 3, "AvgPool1": 6, "AvgPool2": 16, "AvgPool3": 52, "AvgPool4": 124}
    for name, rf in receptive_fields().items():
        assert LAYER_SPECS[name].receptive_field == rf


def test_layer_taps_follow_torchvision_layout():
    bb = Backbone()
    for spec in LAYER_SPECS.values():
        module = bb.features[spec.index]
        expected = torch.nn.ReLU if spec.name == "layer1" else torch.nn.AvgPool2d
        assert isinstance(module, expected)
    assert not any(isinstance(m, torch.nn.MaxPool2d) for m in bb.features)


def test_feature_sizes_for_224(backbone):
    x = preprocess(np.full((224, 224, 3), 0.5))
    feats = extract_features(backbone, x)
    assert {n: tuple(f.shape) for n, f in feats.items()} == {
        "layer1": (64, 50176),
        "AvgPool1": (64, 12544),
        "AvgPool2": (128, 3136),
        "AvgPool3": (256, 784),
        "AvgPool4": (512, 196),
    }


def test_small_inputs(backbone):
    assert extract_features(backbone, preprocess(np.zeros((32, 32, 3))), ["AvgPool4"])["AvgPool4"].shape == (512, 4)
    assert extract_features(backbone, preprocess(np.zeros((31, 31, 3))), ["AvgPool4"])["AvgPool4"].shape == (512, 1)
    with pytest.raises(ValueError, match="too small"):
        extract_features(backbone, preprocess(np.zeros((15, 40, 3))), ["AvgPool4"])


def test_gram_double_loop_oracle(rng):
    f = rng.normal(size=(5, 17))
    g = gram(f)
    oracle = np.array([[sum(f[a, i] * f[b, i] for i in range(17)) for b in range(5)] for a in range(5)])
    assert np.allclose(g, oracle, rtol=1e-12)
    assert np.allclose(g, g.T)
    assert np.linalg.eigvalsh(g).min() > -1e-9


def test_random_init_is_seeded_and_frozen():
    with pytest.warns(UserWarning, match="no backbone weights"):
        a = load_backbone(seed=3)
    with pytest.warns(UserWarning):
        b = load_backbone(seed=3)
    assert a.checksum() == b.checksum()
    assert not any(p.requires_grad for p in a.parameters())
    assert not a.training


def _torchvision_like_state(seed=0):
    bb = Backbone()
    gen = torch.Generator().manual_seed(seed)
    return {k: torch.randn(v.shape, generator=gen) for k, v in bb.state_dict().items()}


def test_loads_state_dict_and_folds_std(tmp_path):
    state = _torchvision_like_state()
    torch.save(state, tmp_path / "vgg.pth")
    bb = load_backbone(tmp_path / "vgg.pth")
    std = torch.tensor(IMAGENET_STD, dtype=torch.float32).view(1, 3, 1, 1)
    assert torch.allclose(bb.features[0].weight, state["features.0.weight"] / std)
    assert torch.equal(bb.features[2].weight, state["features.2.weight"])
    raw = load_backbone(tmp_path / "vgg.pth", fold_std=False)
    assert torch.equal(raw.features[0].weight, state["features.0.weight"])


def test_loads_weights_from_environment(tmp_path, monkeypatch):
    torch.save(_torchvision_like_state(1), tmp_path / "env.pth")
    monkeypatch.setenv("MESA_BACKBONE_WEIGHTS", str(tmp_path / "env.pth"))
    assert load_backbone().source == str(tmp_path / "env.pth")


def test_missing_tensor_is_named(tmp_path):
    state = _torchvision_like_state()
    del state["features.25.weight"]
    torch.save(state, tmp_path / "cut.pth")
    with pytest.raises(BackboneError, match="features.25.weight"):
        load_backbone(tmp_path / "cut.pth")


def test_shape_mismatch_is_named(tmp_path):
    state = _torchvision_like_state()
    state["features.5.bias"] = torch.zeros(3)
    torch.save(state, tmp_path / "bad.pth")
    with pytest.raises(BackboneError, match="features.5.bias"):
        load_backbone(tmp_path / "bad.pth")


def test_truncated_file(tmp_path):
    torch.save(_torchvision_like_state(), tmp_path / "full.pth")
    data = (tmp_path / "full.pth").read_bytes()
    (tmp_path / "trunc.pth").write_bytes(data[: len(data) // 3])
    with pytest.raises(BackboneError, match="cannot read"):
        load_backbone(tmp_path / "trunc.pth")
    with pytest.raises(BackboneError, match="not found"):
        load_backbone(tmp_path / "absent.pth")


def test_forward_stops_at_deepest_requested(backbone):
    x = preprocess(np.full((32, 32, 3), 0.5))
    out = backbone(x, ["layer1", "AvgPool1"])
    assert set(out) == {"layer1", "AvgPool1"}
    with pytest.raises(ValueError, match="unknown"):
        backbone(x, ["conv9"])
    assert LAYERS == ("layer1", "AvgPool1", "AvgPool2", "AvgPool3", "AvgPool4")
