import numpy as np
import pytest

from radarpos.errors import ConfigError, NumericAbort
from radarpos.model import RadarPosModel
from radarpos.pretraining import PretrainHyper, masked_position_ce, pretrain

FAST = PretrainHyper(epochs=2, batch_size=16, lr=1e-3)


@pytest.fixture(scope="module")
def small_pool(tiny_pool):
    return tiny_pool[:48]


def test_zero_epochs_keeps_initialization(tiny_cfg, small_pool):
    model = RadarPosModel(tiny_cfg.model, seed=0)
    init_state = model.state_dict()
    result = pretrain(model, small_pool, PretrainHyper(epochs=0), seed=0)
    assert result.history == []
    for name, arr in init_state.items():
        assert model.param(name).data.tobytes() == arr.tobytes()


def test_same_seed_bitwise_identical_weights(tiny_cfg, small_pool):
    def run():
        model = RadarPosModel(tiny_cfg.model, seed=0)
        pretrain(model, small_pool, FAST, seed=5)
        return b"".join(v.tobytes() for _, v in sorted(model.state_dict().items()))

    assert run() == run()


def test_loss_decreases_and_history_logged(tiny_cfg, small_pool):
    model = RadarPosModel(tiny_cfg.model, seed=0)
    logged = []
    result = pretrain(model, small_pool, PretrainHyper(epochs=4, batch_size=16, lr=3e-3),
                      seed=0, log_fn=logged.append)
    assert len(result.history) == 4
    assert result.history[-1]["loss"] < result.history[0]["loss"]
    assert all({"epoch", "loss", "lr", "wall_ms"} <= set(e) for e in logged)


def test_empty_dataset_rejected(tiny_cfg):
    model = RadarPosModel(tiny_cfg.model, seed=0)
    with pytest.raises(ConfigError):
        pretrain(model, [], FAST, seed=0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nan_abort_reports_batch_and_history(tiny_cfg, small_pool):
    model = RadarPosModel(tiny_cfg.model, seed=0)
    blowup = PretrainHyper(epochs=3, batch_size=16, lr=1e18)
    with pytest.raises(NumericAbort) as err:
        pretrain(model, small_pool, blowup, seed=0)
    assert err.value.batch_index is not None
    assert isinstance(err.value.loss_history, list)


def test_masked_ce_near_ln_n_at_init(tiny_cfg, small_pool):
    model = RadarPosModel(tiny_cfg.model, seed=0)
    ce = masked_position_ce(model, small_pool, seed=0)
    assert ce == pytest.approx(np.log(tiny_cfg.model.n_patches), abs=0.15)


def test_masked_ce_deterministic(tiny_cfg, small_pool):
    model = RadarPosModel(tiny_cfg.model, seed=0)
    assert masked_position_ce(model, small_pool, seed=3) == \
        masked_position_ce(model, small_pool, seed=3)
