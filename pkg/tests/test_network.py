import pytest
import torch

from ltcamtrap.errors import ConfigError, ContractViolation
from ltcamtrap.losses import flow_consistency_loss
from ltcamtrap.network import (EXPERTS, ExpertHead, ModelConfig, build_model,
                               class_activation_map, classifier_weight_sqnorm,
                               forward_expert, load_checkpoint, parameter_manifest,
                               preset, save_checkpoint)


@pytest.fixture
def model():
    return build_model(preset("tiny", 5, seed=1)).double().eval()


def test_build_shapes(model):
    assert set(model.experts) == set(EXPERTS)
    x = torch.rand(3, 3, 64, 64, dtype=torch.float64)
    for e in EXPERTS:
        out = forward_expert(model, x, e)
        assert out.logits.shape == (3, 5)
        assert out.features.shape == (3, 32, 4, 4)


def test_build_is_deterministic():
    a = build_model(preset("tiny", 4, seed=7)).state_dict()
    b = build_model(preset("tiny", 4, seed=7)).state_dict()
    c = build_model(preset("tiny", 4, seed=8)).state_dict()
    assert all(torch.equal(a[k], b[k]) for k in a)
    assert any(not torch.equal(a[k], c[k]) for k in a if a[k].is_floating_point())


def test_scales_start_at_one(model):
    for e in EXPERTS:
        assert torch.equal(model.head(e).scale, torch.ones(5, dtype=torch.float64))


def test_config_errors():
    with pytest.raises(ConfigError):
        ModelConfig(num_classes=1)
    with pytest.raises(ConfigError):
        ModelConfig(num_classes=4, num_subdomain_experts=3)
    with pytest.raises(ConfigError):
        preset("nope", 4)


def test_experts_share_backbone_not_params(model):
    ids = {e: {id(p) for p in model.head(e).parameters()} for e in EXPERTS}
    assert not ids["full"] & ids["day"] and not ids["day"] & ids["night"]
    backbone = {id(p) for p in model.backbone.parameters()}
    assert all(not backbone & v for v in ids.values())


def test_identical_frames_identical_logits(model):
    frame = torch.rand(1, 3, 64, 64, dtype=torch.float64)
    out = forward_expert(model, frame.expand(3, -1, -1, -1), "day")
    assert torch.allclose(out.logits[0], out.logits[1]) and torch.allclose(out.logits[0], out.logits[2])


def test_frame_permutation_equivariance(model):
    x = torch.rand(3, 3, 64, 64, dtype=torch.float64)
    perm = [2, 0, 1]
    a = forward_expert(model, x, "full").logits
    b = forward_expert(model, x[perm], "full").logits
    assert torch.allclose(a[perm], b, atol=1e-12)


def test_wrong_frame_count(model):
    with pytest.raises(ContractViolation):
        forward_expert(model, torch.rand(2, 3, 64, 64, dtype=torch.float64), "full")


def test_scale_linearity(model):
    x = torch.rand(3, 3, 64, 64, dtype=torch.float64)
    head = model.head("night")
    before = forward_expert(model, x, "night").logits
    with torch.no_grad():
        head.log_scale[2] += torch.log(torch.tensor(2.0, dtype=torch.float64))
    after = forward_expert(model, x, "night").logits
    assert torch.allclose(after[:, 2], 2 * before[:, 2], atol=1e-12)
    assert torch.allclose(after[:, [0, 1, 3, 4]], before[:, [0, 1, 3, 4]])


def test_cam_worked_example():
    head = ExpertHead(torch.nn.Identity(), 2, 3).double()
    with torch.no_grad():
        head.weight.zero_()
        head.weight[:, 1] = torch.tensor([1.0, -1.0])
    feats = torch.stack([torch.full((3, 3), 2.0), torch.full((3, 3), 0.5)]).double()
    cam = class_activation_map(head, feats, 1)
    assert torch.equal(cam, torch.full((3, 3), 1.5, dtype=torch.float64))
    assert not class_activation_map(head, feats, 0).any()


def test_cam_mean_equals_logit(model):
    x = torch.rand(2, 3, 3, 64, 64, dtype=torch.float64)
    for e in EXPERTS:
        out = model(x, e)
        for y in range(5):
            cam = class_activation_map(model.head(e), out.features, torch.tensor([y, y]))
            assert torch.allclose(cam.mean(dim=(-2, -1)), out.logits[..., y], atol=1e-5)


def test_cam_per_sample_labels(model):
    x = torch.rand(2, 3, 3, 64, 64, dtype=torch.float64)
    out = model(x, "day")
    cams = class_activation_map(model.head("day"), out.features, torch.tensor([1, 4]))
    assert torch.equal(cams[0], class_activation_map(model.head("day"), out.features[0], 1))
    assert torch.equal(cams[1], class_activation_map(model.head("day"), out.features[1], 4))


def test_cam_class_out_of_range(model):
    with pytest.raises(ContractViolation):
        class_activation_map(model.head("full"), torch.zeros(32, 4, 4, dtype=torch.float64), 5)


def test_cam_gradient_stops_at_features(model):
    model.train()
    x = torch.rand(2, 3, 3, 64, 64, dtype=torch.float64)
    out = model(x, "full")
    head = model.head("full")
    cams = class_activation_map(head, out.features, torch.tensor([0, 3]))
    flows = torch.rand(2, 2, 4, 4, 2, dtype=torch.float64) - 0.5
    for loss in (cams.mean(), flow_consistency_loss(cams, flows[:, 0], flows[:, 1])):
        params = list(model.backbone.parameters()) + list(head.block.parameters())
        grads = torch.autograd.grad(loss, params + [head.weight, head.log_scale],
                                    allow_unused=True, retain_graph=True)
        for g in grads[:len(params)]:
            assert g is None or not g.any()
        assert grads[-2].abs().sum() > 0


@pytest.mark.parametrize("w, s, expected", [
    (torch.zeros(2, 2), (1.0, 1.0), 0.0),
    (torch.eye(2), (1.0, 1.0), 2.0),
    (torch.eye(2), (2.0, 2.0), 8.0),
])
def test_weight_sqnorm(w, s, expected):
    head = ExpertHead(torch.nn.Identity(), 2, 2).double()
    with torch.no_grad():
        head.weight.copy_(w)
        head.log_scale.copy_(torch.log(torch.tensor(s, dtype=torch.float64)))
    assert classifier_weight_sqnorm(head).item() == pytest.approx(expected, abs=1e-12)


def test_checkpoint_roundtrip(tmp_path):
    m = build_model(preset("tiny", 3, seed=2))
    save_checkpoint(tmp_path / "m.pt", m, {"note": 1})
    again, extra = load_checkpoint(tmp_path / "m.pt")
    assert extra == {"note": 1}
    sd, sd2 = m.state_dict(), again.state_dict()
    assert all(torch.equal(sd[k], sd2[k]) for k in sd)
    names = parameter_manifest(m)
    assert names[0]["name"] == "backbone.0.weight" and names[0]["shape"] == [8, 3, 3, 3]


def test_desk_preset_geometry():
    cfg = preset("desk", 4)
    assert cfg.output_stride == 16
    m = build_model(cfg).eval()
    out = m(torch.rand(1, 3, 3, 64, 64), "full")
    assert out.features.shape == (1, 3, 128, 4, 4)


@pytest.mark.slow
def test_resnet50_preset_geometry():
    pytest.importorskip("torchvision")
    cfg = preset("resnet50", 3)
    assert cfg.output_stride == 32
    m = build_model(cfg).eval()
    with torch.no_grad():
        feats = m.extract(torch.rand(1, 3, 256, 256))
        logits, maps = m.head("day")(feats)
    assert maps.shape == (1, 2048, 8, 8) and logits.shape == (1, 3)
