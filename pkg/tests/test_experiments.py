import dataclasses

import pytest

from radarpos.config import preset_config
from radarpos.errors import ConfigError
from radarpos.experiments import (ExperimentData, parse_scenario,
                                  run_cross_mode, run_toa_pe_ablation, sweep,
                                  sweep_rows_to_csv)
from radarpos.finetune import FinetuneSchedule
from radarpos.pretraining import PretrainHyper


@pytest.fixture(scope="module")
def micro_cfg():
    """Aggressively shrunk end-to-end configuration for runner plumbing."""
    cfg = preset_config("tiny")
    return dataclasses.replace(
        cfg,
        pretrain=PretrainHyper(epochs=2, batch_size=16, lr=1e-3),
        finetune=dataclasses.replace(
            cfg.finetune,
            schedule=FinetuneSchedule(epochs=3, base_lr=1e-3, warmup_epochs=2,
                                      decay_factor=0.1, decay_every=1),
            batch_size=16,
        ),
        sim=dataclasses.replace(cfg.sim, ratio=(4, 3, 3, 2, 2, 2, 2),
                                test_total=21, pool_size=42),
        seed=11,
    )


@pytest.fixture(scope="module")
def micro_data(micro_cfg):
    return ExperimentData(micro_cfg)


def test_default_sweep_grids():
    from radarpos.experiments import RANK_SWEEP_DEFAULT, SIGMA_SWEEP_DEFAULT

    assert SIGMA_SWEEP_DEFAULT == (0.1, 0.3, 0.5, 0.7, 0.9, 1.1)
    assert len(SIGMA_SWEEP_DEFAULT) == 6
    assert RANK_SWEEP_DEFAULT == (2, 4, 8, 16)


def test_parse_scenario():
    assert parse_scenario("m0:m1") == (0, 1)
    assert parse_scenario("m2:m2") == (2, 2)
    with pytest.raises(ConfigError):
        parse_scenario("m0-m1")
    with pytest.raises(ConfigError):
        parse_scenario("m0:m7")


def test_six_ordered_pairs():
    pairs = [(s, t) for s in range(3) for t in range(3) if s != t]
    assert len(pairs) == 6


def test_run_cross_mode_returns_report_and_control(micro_cfg, micro_data):
    out = run_cross_mode(0, 1, micro_cfg, data=micro_data)
    assert out["report"].scenario == ("m0", "m1")
    assert out["control"].scenario == ("m0", "m0")
    assert 0.0 <= out["report"].accuracy <= 1.0


def test_run_cross_mode_same_mode_allowed(micro_cfg, micro_data):
    out = run_cross_mode(2, 2, micro_cfg, data=micro_data)
    assert out["report"].scenario == ("m2", "m2")


def test_run_cross_mode_deterministic(micro_cfg, micro_data):
    a = run_cross_mode(1, 2, micro_cfg, data=micro_data)
    b = run_cross_mode(1, 2, micro_cfg, data=micro_data)
    assert a["report"].to_dict() == b["report"].to_dict()


def test_sweep_sigma_rows(micro_cfg, micro_data):
    rows = sweep("sigma", [0.5, 0.9], (0, 1), micro_cfg, micro_data)
    assert [r["param_value"] for r in rows] == [0.5, 0.9]
    assert all(r["scenario"] == "m0:m1" for r in rows)
    csv_text = sweep_rows_to_csv(rows)
    lines = csv_text.strip().split("\n")
    assert lines[0] == "param_value,scenario,accuracy,macro_f1,seed"
    assert len(lines) == 3


def test_sweep_rank_shares_pretraining(micro_cfg, micro_data):
    rows = sweep("lora_rank", [2, 4], (0, 2), micro_cfg, micro_data)
    assert len(rows) == 2


def test_sweep_rejects_unknown_param(micro_cfg, micro_data):
    with pytest.raises(ConfigError):
        sweep("dropout", [0.1], (0, 1), micro_cfg, micro_data)
    with pytest.raises(ConfigError):
        sweep("sigma", [], (0, 1), micro_cfg, micro_data)


def test_toa_pe_ablation_two_arms(micro_cfg, micro_data):
    out = run_toa_pe_ablation((0, 1), micro_cfg, micro_data)
    assert len(out["arms"]) == 2
    assert out["shared_init_identical"] is True
    assert out["arms"][0]["param_value"] == "on"
    assert out["arms"][1]["param_value"] == "off"
    assert isinstance(out["accuracy_gap_toa_minus_learned"], float)
