import numpy as np
import pytest

from mopred.decoder import DecoderConfig, generate_intention_points
from mopred.encoder import EncoderConfig
from mopred.model import ModelConfig, MotionPredictor
from mopred.scene import GeneratorConfig, generate_dataset
from mopred.training import collect_endpoints


def desk_model_config(mode="mtr++", **overrides) -> ModelConfig:
    cfg = ModelConfig(
        mode=mode,
        encoder=EncoderConfig(num_layers=2, d_model=32, num_heads=2, k_neighbors=8,
                              polyline_hidden=32, ffn_multiple=2),
        decoder=DecoderConfig(num_layers=2, num_modes=8, dynamic_map_count=12,
                              num_heads=2, query_neighbors=16),
        t_future=20, max_polyline_points=10,
    )
    for key, value in overrides.items():
        setattr(cfg.decoder if hasattr(cfg.decoder, key) else cfg.encoder, key, value)
    return cfg


@pytest.fixture(scope="session")
def tiny_scenes():
    return generate_dataset(GeneratorConfig(t_future=20), 77, 6)


@pytest.fixture(scope="session")
def desk_intentions(tiny_scenes):
    scenes = generate_dataset(GeneratorConfig(t_future=20), 11, 60)
    return generate_intention_points(collect_endpoints(scenes), 8, seed=1)


@pytest.fixture(scope="session")
def desk_model(desk_intentions):
    model = MotionPredictor(desk_model_config(), rng_seed=5)
    model.set_intention_points(desk_intentions)
    return model


@pytest.fixture(scope="session")
def desk_batch(desk_model, tiny_scenes):
    return desk_model.batch(desk_model.samples(tiny_scenes))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
