import json
from pathlib import Path

import numpy as np
import pytest

from neuracodec import EncoderConfig, parse_key

DATA_DIR = Path(__file__).parent / "data"

FIXED_KEY_HEX = bytes(range(32)).hex()


@pytest.fixture
def fixed_key():
    return parse_key(FIXED_KEY_HEX)


@pytest.fixture
def other_key():
    return parse_key("ff" + FIXED_KEY_HEX[2:])


@pytest.fixture
def toy_image_config():
    return EncoderConfig(
        scheme="color", channels=3, height=32, width=32,
        patch_size=8, hidden_width=192, depth=4,
    )


@pytest.fixture
def toy_token_config():
    return EncoderConfig(
        scheme="neuracrypt", channels=3, height=32, width=32,
        patch_size=8, hidden_width=192, depth=4,
    )


@pytest.fixture
def golden_prng():
    with open(DATA_DIR / "golden_prng.json") as fh:
        return json.load(fh)


def random_plain_images(n, channels=3, height=32, width=32, seed=0):
    rng = np.random.default_rng(seed)
    return rng.random((n, channels, height, width)).astype(np.float32)
