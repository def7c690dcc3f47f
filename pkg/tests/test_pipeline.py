import numpy as np
import pytest

from wavedet.pipeline import ConfigError, PipelineConfig, complexity, describe, forward, init_params, synthetic_input
from wavedet.tensor import ShapeError, count_params_flops

SMALL = dict(height=64, width=64, stem_channels=4, backbone_widths=[4, 8, 8, 16],
             neck_widths=[4, 8, 8, 8], wavelet_levels=1, heads=4, window=3, stride=2)


def test_roundtrip_dict():
    cfg = PipelineConfig.from_dict(SMALL)
    assert PipelineConfig.from_dict(cfg.to_dict()) == cfg


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="unknown"):
        PipelineConfig.from_dict({"hieght": 64})


@pytest.mark.parametrize("override,match", [
    ({"height": 96}, "wavelet decomposition"),
    ({"heads": 3}, "heads"),
    ({"neck_widths": [4, 8, 8, 7]}, "even"),
    ({"backbone_widths": [4, 8]}, "one entry"),
])
def test_validation(override, match):
    with pytest.raises(ConfigError, match=match):
        PipelineConfig.from_dict({**SMALL, **override}).validate()


def test_invalid_loss_or_window_values():
    with pytest.raises(ValueError):
        PipelineConfig.from_dict({**SMALL, "lam": 2.0}).validate()
    with pytest.raises(ValueError):
        PipelineConfig.from_dict({**SMALL, "stride": 5}).validate()


def test_forward_maps_and_strides():
    cfg = PipelineConfig.from_dict(SMALL)
    maps = forward(synthetic_input(cfg), init_params(cfg), cfg)
    assert set(maps) == {"F2", "F3", "F4", "F5", "F5'", "P2", "P3", "P4", "P5"}
    for level in range(2, 6):
        assert maps[f"P{level}"].shape[2] == 64 // 2**level
        assert maps[f"F{level}"].shape[1] == SMALL["backbone_widths"][level - 2]
    assert maps["F5'"].shape == maps["F5"].shape
    assert all(np.isfinite(m).all() for m in maps.values())


def test_forward_deterministic():
    cfg = PipelineConfig.from_dict(SMALL)
    a = forward(synthetic_input(cfg), init_params(cfg), cfg)
    b = forward(synthetic_input(cfg), init_params(cfg), cfg)
    for k in a:
        assert a[k].tobytes() == b[k].tobytes()


def test_forward_rejects_bad_input():
    cfg = PipelineConfig.from_dict(SMALL)
    with pytest.raises(ShapeError, match="wavelet decomposition"):
        forward(np.zeros((1, 3, 63, 64)), init_params(cfg), cfg)


def test_complexity_fused_is_lighter():
    cfg = PipelineConfig.from_dict(SMALL)
    params = init_params(cfg)
    c = complexity(params, cfg)
    assert c["deploy_params"] < c["train_params"] and c["deploy_flops"] < c["train_flops"]
    assert count_params_flops(describe(params, cfg, fused=False)) == (c["train_params"], c["train_flops"])
