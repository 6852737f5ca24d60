import numpy as np
import pytest
import torch

from playgen.config import EnvSpec, ModelConfig, TrainConfig
from playgen.model import build_model
from playgen.synthenv import frames_tensor, generate_dataset, load_dataset

torch.set_num_threads(2)


def tiny_model_config(**overrides) -> ModelConfig:
    cfg = ModelConfig(
        num_actions=3,
        action_dim=4,
        height=32,
        width=32,
        feature_channels=8,
        base_channels=8,
        recurrent_channels=16,
        decoder_scales=2,
    )
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg.validate()


def tiny_env_spec(**overrides) -> EnvSpec:
    spec = EnvSpec(
        height=32,
        width=32,
        sprite_size=7,
        actions={"left": (-3, 0), "right": (3, 0), "stay": (0, 0)},
        jitter=0.0,
        spawn_margin=8,
        sequence_length=6,
        sequences={"train": 6, "val": 2, "test": 2},
        seed=11,
    )
    for k, v in overrides.items():
        setattr(spec, k, v)
    return spec.validate()


def tiny_train_config(**overrides) -> TrainConfig:
    cfg = TrainConfig(
        sequence_length=6,
        batch_size=2,
        total_steps=4,
        seed=5,
        checkpoint_every=100,
        model=tiny_model_config(),
    )
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg.validate()


@pytest.fixture(scope="session")
def tiny_dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "tiny"
    generate_dataset(tiny_env_spec(), out)
    return out


@pytest.fixture(scope="session")
def tiny_frames(tiny_dataset_dir):
    return frames_tensor(load_dataset(tiny_dataset_dir, "train"))


@pytest.fixture()
def tiny_model():
    return build_model(tiny_model_config(), seed=1)


@pytest.fixture()
def rand_frames():
    g = torch.Generator().manual_seed(3)
    return torch.rand(2, 5, 3, 32, 32, generator=g)


def seeded_gaussian(shape, seed, var_lo=0.2, var_hi=2.0):
    from playgen.distributions import DiagonalGaussian

    g = torch.Generator().manual_seed(seed)
    mean = torch.randn(shape, generator=g)
    variance = torch.empty(shape).uniform_(var_lo, var_hi, generator=g)
    return DiagonalGaussian(mean, variance)
