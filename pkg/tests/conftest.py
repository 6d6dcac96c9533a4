import numpy as np
import pytest
import torch

torch.set_num_threads(2)


@pytest.fixture(scope="session")
def tiny_world_config():
    from worldsim.synthworld import WorldConfig

    return WorldConfig(frame_height=32, frame_width=64, episode_length=24, num_agents=2)


@pytest.fixture(scope="session")
def tiny_episodes(tiny_world_config):
    from worldsim.synthworld import generate_episode

    return [generate_episode(tiny_world_config, s) for s in range(8)]
