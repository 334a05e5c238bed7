from __future__ import annotations

import numpy as np
import pytest
import torch

from patchae import EncoderConfig, build_encoder


@pytest.fixture(autouse=True)
def _single_thread():
    # bit-reproducible conv results for determinism assertions
    torch.set_num_threads(1)


@pytest.fixture
def tiny_config() -> EncoderConfig:
    return EncoderConfig(input_size=64, backbone="scratch-tiny", c1=32, c2=64, c3=48)


@pytest.fixture
def tiny_encoder(tiny_config):
    return build_encoder(tiny_config, init="random", seed=0)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def random_image(rng, size=64, channels=3) -> np.ndarray:
    return rng.random((size, size, channels), dtype=np.float32)
