import numpy as np
import pytest

from textsr.config import RunConfig
from textsr.dataset import BuildConfig, build_dataset
from textsr.denoiser import ConditionalDenoiser, DenoiserConfig
from textsr.train import train_model


def tiny_denoiser_config(**overrides) -> DenoiserConfig:
    base = dict(latent_channels=3, base_channels=4, depth=1, embed_dim=4,
                attention_heads=1, text_dim=6, lr_token_dim=5, time_dim=4)
    base.update(overrides)
    return DenoiserConfig(**base)


@pytest.fixture
def tiny_model():
    return ConditionalDenoiser(tiny_denoiser_config(), init_seed=7)


def small_run_config(**train_overrides) -> RunConfig:
    """32x32 scenes, small model: fast enough for per-test training."""
    cfg = RunConfig()
    cfg.dataset.canvas = 32
    cfg.dataset.max_objects = 2
    cfg.denoiser = cfg.denoiser.with_flags(base_channels=8, embed_dim=16,
                                           attention_heads=2)
    cfg.train.batch_size = 2
    cfg.train.iterations = 4
    cfg.train.log_every = 1
    for key, value in train_overrides.items():
        setattr(cfg.train, key, value)
    cfg.validate()
    return cfg


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("smalldata")
    cfg = small_run_config()
    ds = cfg.dataset
    result = build_dataset(4, root, BuildConfig(
        canvas=ds.canvas, min_objects=ds.min_objects, max_objects=ds.max_objects,
        seed=101, degradation=ds.degradation()))
    assert result.written == 4
    return result.manifest_path


@pytest.fixture(scope="session")
def small_checkpoint(tmp_path_factory, small_dataset):
    out = tmp_path_factory.mktemp("smallrun")
    cfg = small_run_config(iterations=6)
    return train_model(cfg, small_dataset, out)
