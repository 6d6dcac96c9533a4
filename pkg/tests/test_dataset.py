import numpy as np

from worldsim.balance import BalanceSpec
from worldsim.dataset import load_dataset, read_manifest, save_dataset


def test_dataset_round_trip(tmp_path, tiny_world_config, tiny_episodes):
    spec = BalanceSpec(features=(("weather_idx", (-0.5, 0.5, 1.5, 2.5)),), exponent=0.5)
    save_dataset(tmp_path, tiny_episodes, tiny_world_config, spec)

    manifest = read_manifest(tmp_path)
    assert manifest["format_version"] == "1"
    assert len(manifest["episodes"]) == len(tiny_episodes)
    assert manifest["balance_spec"]["exponent"] == 0.5

    loaded = load_dataset(tmp_path)
    assert len(loaded) == len(tiny_episodes)
    for orig, back in zip(tiny_episodes, loaded):
        assert back.frames.frames.shape == orig.frames.frames.shape
        # uint8 quantization bounds the round-trip error
        assert np.abs(back.frames.frames - orig.frames.frames).max() <= 0.5 / 255.0 + 1e-6
        assert np.array_equal(back.semantics, orig.semantics)
        assert back.caption == orig.caption
        assert np.allclose(back.actions.speed, orig.actions.speed)
        assert back.metadata["seed"] == orig.metadata["seed"]
