"""Shared fixtures. The expensive artifacts (simulated corpus, 50-epoch
pretrained weights) are built once per session and reused by the
acceptance tests."""

import time

import pytest

from radarpos.config import preset_config
from radarpos.model import RadarPosModel
from radarpos.pdw import build_pretrain_pool, default_modes, make_split
from radarpos.pretraining import masked_position_ce, pretrain

DATA_SEED = 42
MODEL_SEED = 0


@pytest.fixture(scope="session")
def tiny_cfg():
    return preset_config("tiny")


@pytest.fixture(scope="session")
def tiny_pool(tiny_cfg):
    return build_pretrain_pool(tiny_cfg.sim.pool_size, seed=DATA_SEED)


@pytest.fixture(scope="session")
def mode_splits(tiny_cfg):
    return {m.mode_id: make_split(m, seed=DATA_SEED) for m in default_modes()}


@pytest.fixture(scope="session")
def pretrained(tiny_cfg, tiny_pool):
    """Tiny-preset pretraining run: state dict, wall time, masked CE."""
    model = RadarPosModel(tiny_cfg.model, seed=MODEL_SEED)
    start = time.perf_counter()
    result = pretrain(model, tiny_pool, tiny_cfg.pretrain, seed=MODEL_SEED)
    wall = time.perf_counter() - start
    ce = masked_position_ce(model, tiny_pool, seed=MODEL_SEED)
    return {
        "state": model.state_dict(),
        "wall_seconds": wall,
        "masked_ce": ce,
        "history": result.history,
        "model_cfg": tiny_cfg.model,
    }


def fresh_pretrained_model(pretrained_fixture):
    model = RadarPosModel(pretrained_fixture["model_cfg"], seed=MODEL_SEED)
    model.load_state_dict(pretrained_fixture["state"])
    return model
