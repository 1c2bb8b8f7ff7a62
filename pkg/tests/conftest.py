from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # oracles.py

from graspforge import assets, config, pipeline


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def cube_obj(tmp_path_factory) -> Path:
    path = tmp_path_factory.mktemp("meshes") / "cube.obj"
    assets.write_obj(assets.make_cube(1.0), path)
    return path


@pytest.fixture(scope="session")
def builtin_library() -> assets.AssetLibrary:
    return assets.AssetLibrary.from_entries(config.builtin_entries())


def make_episode(index: int = 0, objects_max: int = 1, seed: int = 0):
    cfg = config.PipelineConfig(global_seed=seed, objects_min=1, objects_max=objects_max)
    library = assets.AssetLibrary.from_entries(config.builtin_entries())
    for i in range(index, index + 50):
        episode, cause = pipeline.build_episode(cfg, library, i)
        if episode is not None:
            return episode
    raise RuntimeError("no episode produced in 50 attempts")


@pytest.fixture(scope="session")
def sample_episode():
    return make_episode(0)


@pytest.fixture(scope="session")
def episode_batch():
    """A couple dozen small episodes for dataset and training tests."""
    cfg = config.PipelineConfig(global_seed=7, objects_min=1, objects_max=2)
    library = assets.AssetLibrary.from_entries(config.builtin_entries())
    episodes = []
    index = 0
    while len(episodes) < 24 and index < 200:
        episode, _ = pipeline.build_episode(cfg, library, index)
        if episode is not None:
            episodes.append(episode)
        index += 1
    assert len(episodes) == 24
    return episodes
