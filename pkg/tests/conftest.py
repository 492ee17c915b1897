import numpy as np
import pytest

from setpose import ModelConfig


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def tiny_model_config(**overrides):
    """Smallest config that exercises every architectural piece."""
    defaults = dict(n_classes=2, d_model=8, n_heads=2, n_encoder_layers=1,
                    n_decoder_layers=1, n_queries=3, image_h=16, image_w=16,
                    downsample_factor=16, head_hidden=16, ffn_dim=16, seed=0)
    defaults.update(overrides)
    return ModelConfig(**defaults)


def random_gt_box(rng):
    """A valid normalized ground-truth box with comfortable margins."""
    w = rng.uniform(0.05, 0.5)
    h = rng.uniform(0.05, 0.5)
    cx = rng.uniform(w / 2, 1 - w / 2)
    cy = rng.uniform(h / 2, 1 - h / 2)
    return np.array([cx, cy, w, h])
