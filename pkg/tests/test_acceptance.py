"""Acceptance suite: one test per criterion, each printing a PASS/FAIL
line (visible with ``pytest tests/test_acceptance.py -v -s``). Stated
tolerances are asserted as written; directional comparisons are printed
but not gated where marked as such."""

import math
import os
import time

import numpy as np
import pytest

from conftest import fresh_pretrained_model

from radarpos import tensor as T
from radarpos.cli import main as cli_main
from radarpos.config import tiny_model_config
from radarpos.experiments import run_toa_pe_ablation, ExperimentData
from radarpos.finetune import FinetuneSchedule, evaluate, finetune, lr_at
from radarpos.gradcheck import check_model_losses, check_op_gradients
from radarpos.losses import (attention_weights, position_loss, radarpos_loss,
                             smoothed_loss, smoothing_weights)
from radarpos.model import (ModelConfig, RadarPosModel, apply_position_mask,
                            finetune_trainable_fraction, plan_mask,
                            toa_positional_encoding)
from radarpos.pdw import DEFAULT_RATIO
from radarpos.runs import sha256_file
from radarpos.tensor import Tensor, no_grad


def verdict(num: int, ok: bool, detail: str):
    print(f"\nACCEPTANCE {num:02d}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {num}: {detail}"


def report_only(num: int, detail: str):
    print(f"\nACCEPTANCE {num:02d} (report): {detail}")


def test_criterion_01_gradient_fidelity():
    start = time.perf_counter()
    op_results = check_op_gradients(seed=0)
    report = check_model_losses(seed=0, h=1e-3)
    elapsed = time.perf_counter() - start
    worst_op = max(err for _, err in op_results)
    ok = report.passed(1e-5) and worst_op < 1e-5 and elapsed < 120.0
    verdict(1, ok,
            f"per-loss max rel err {report.max_errors} | ops {worst_op:.2e} | "
            f"{report.entries_checked} entries in {elapsed:.1f}s (< 120s)")


def test_criterion_02_loss_degeneration():
    rng = np.random.default_rng(0)
    n = 8
    o = Tensor(rng.standard_normal((n, n)))
    mask = np.zeros(n, dtype=bool)
    mask[[0, 3, 5, 6]] = True

    w_sharp = smoothing_weights(n, 1e-3)
    gap_sigma = abs(smoothed_loss(o, mask, w_sharp).item()
                    - position_loss(o, mask).item())

    w = smoothing_weights(n, 0.9)
    cls_out = Tensor(rng.standard_normal(16))
    token = rng.standard_normal(16)
    identical = Tensor(np.tile(token, (n, 1)))
    c_uniform = attention_weights(cls_out, identical, 0.95)
    assert np.allclose(c_uniform.data, 1.0 / n, atol=1e-15)
    gap_attn = abs(radarpos_loss(o, mask, w, c_uniform).item()
                   - smoothed_loss(o, mask, w).item() / n)

    ok = gap_sigma < 1e-6 and gap_attn < 1e-9
    verdict(2, ok,
            f"|smoothed - plain| at sigma=1e-3: {gap_sigma:.2e} (< 1e-6) | "
            f"|weighted - smoothed/N| with uniform C: {gap_attn:.2e} (< 1e-9)")


def test_criterion_03_uniform_logit_baseline():
    worst = 0.0
    for n in (4, 8, 16):
        o = Tensor(np.zeros((n, n), dtype=np.float64))
        for masked in ([0], [1, 2], list(range(n - 1))):
            mask = np.zeros(n, dtype=bool)
            mask[masked] = True
            for sigma in (0.3, 0.9, 2.0):
                w = smoothing_weights(n, sigma)
                neutral = Tensor(np.ones(n, dtype=np.float64))
                for loss in (position_loss(o, mask).item(),
                             smoothed_loss(o, mask, w).item(),
                             radarpos_loss(o, mask, w, neutral).item()):
                    worst = max(worst, abs(loss - math.log(n)))
    verdict(3, worst < 1e-9,
            f"max |loss - ln N| over losses/masks/sigmas: {worst:.2e} (< 1e-9, "
            "weighted variant taken with neutral unit weights)")


def test_criterion_04_masking_invariants(tiny_cfg):
    model = RadarPosModel(tiny_cfg.model, seed=1)
    record_rng = np.random.default_rng(2)
    from radarpos.pdw import SampleRecord
    record = SampleRecord(
        features=record_rng.random((2, 512)).astype(np.float32),
        toa_track=np.cumsum(record_rng.uniform(4e-5, 6e-5, 512)) - 4e-5,
        label=0, mode=0)
    tok = model.tokenize(record)
    before = tok.tokens.data.tobytes()
    p_mask = model.param("mask_token")

    n_tiny = tiny_cfg.model.n_patches
    expected_tiny = math.ceil(0.6 * n_tiny)
    count_failures = 0
    with no_grad():
        for seed in range(10_000):
            plan = plan_mask(n_tiny, 0.6, seed)
            if plan.masked_count != expected_tiny or plan.flags.sum() != expected_tiny:
                count_failures += 1
            if seed % 100 == 0:
                apply_position_mask(tok, plan, p_mask)
                if tok.tokens.data.tobytes() != before:
                    count_failures += 1
    # content check on every plan is redundant per-bit work; do full sweep
    # on a rotating subset above plus one exhaustive pass here
    with no_grad():
        for seed in range(500):
            apply_position_mask(tok, plan_mask(n_tiny, 0.6, seed), p_mask)
    unchanged = tok.tokens.data.tobytes() == before

    n_paper = 64
    expected_paper = math.ceil(0.6 * n_paper)  # 39
    paper_ok = all(plan_mask(n_paper, 0.6, s).masked_count == expected_paper
                   for s in range(10_000))

    ok = count_failures == 0 and unchanged and paper_ok and expected_paper == 39
    verdict(4, ok,
            f"10k plans at N={n_tiny} all mask {expected_tiny}; 10k at N=64 "
            f"all mask 39; content tokens bitwise unchanged: {unchanged}")


def test_criterion_05_toa_encoding_values():
    zero = toa_positional_encoding(0.0, 12)
    zero_ok = np.array_equal(zero, np.array([0.0, 1.0] * 6))
    one_us = toa_positional_encoding(1e-6, 4)
    expected = np.array([0.84147, 0.54030, 0.01000, 0.99995])
    gap = np.max(np.abs(one_us - expected))
    ok = zero_ok and gap < 1e-5
    verdict(5, ok, f"toa=0 -> [0,1,0,1,...]: {zero_ok} | toa=1us D=4 max err "
                   f"{gap:.2e} (< 1e-5)")


def test_criterion_06_pretraining_learns_positions(pretrained):
    ce = pretrained["masked_ce"]
    wall = pretrained["wall_seconds"]
    bound = math.log(8) / 2
    ok = ce < bound and wall < 600.0
    verdict(6, ok, f"masked-position CE {ce:.4f} (< {bound:.4f}) in "
                   f"{wall:.1f}s (< 600s), 200 samples x 50 epochs")


def test_criterion_07_cross_mode_transfer(tiny_cfg, mode_splits, pretrained):
    reports = {}
    for src in range(3):
        model = fresh_pretrained_model(pretrained)
        finetune(model, mode_splits[src].train, tiny_cfg.finetune.schedule,
                 rank=tiny_cfg.finetune.lora_rank, seed=1,
                 batch_size=tiny_cfg.finetune.batch_size)
        for tgt in range(3):
            reports[(src, tgt)] = evaluate(model, mode_splits[tgt].test,
                                           scenario=(f"m{src}", f"m{tgt}"))

    cross = {(s, t): r for (s, t), r in reports.items() if s != t}
    gate_ok = all(r.accuracy >= 0.30 and r.macro_f1 >= 0.25 for r in cross.values())
    directional = sum(
        reports[(s, s)].accuracy >= reports[(s, t)].accuracy for (s, t) in cross
    )
    table = " | ".join(f"m{s}->m{t}: {r.accuracy:.3f}/{r.macro_f1:.3f}"
                       for (s, t), r in sorted(cross.items()))
    report_only(7, f"cross-mode acc/F1: {table}")
    report_only(7, "in-domain controls: " + " | ".join(
        f"m{s}->m{s}: {reports[(s, s)].accuracy:.3f}" for s in range(3)))
    report_only(7, f"in-domain >= cross in {directional}/6 scenarios "
                   "(directional, not gated)")
    verdict(7, gate_ok,
            f"all 6 cross-mode scenarios reach acc >= 0.30 and macro-F1 >= 0.25; "
            f"directional {directional}/6")


def test_criterion_08_lora_contracts():
    cfg = tiny_model_config()
    rng = np.random.default_rng(3)
    feats = rng.random((1, 2, 512))
    toas = (np.cumsum(rng.uniform(4e-5, 6e-5, 512)) - 4e-5)[None]

    base = RadarPosModel(cfg, seed=4, dtype=np.float32)
    with no_grad():
        ref = base.forward_classify(feats, toas)
    adapted = RadarPosModel(cfg, seed=4, dtype=np.float32)
    adapted.attach_lora(rank=8, seed=5)
    with no_grad():
        zero_init = adapted.forward_classify(feats, toas)
    bitwise = zero_init.data.tobytes() == ref.data.tobytes()

    for ad in adapted.adapters.values():
        ad.b.data = rng.normal(0, 0.1, ad.b.data.shape).astype(np.float32)
    with no_grad():
        adapter_out = adapted.forward_classify(feats, toas)
    merged = RadarPosModel(cfg, seed=4, dtype=np.float32)
    merged.load_state_dict(adapted.merged_state_dict())
    with no_grad():
        merged_out = merged.forward_classify(feats, toas)
    rel = float(np.max(np.abs(adapter_out.data - merged_out.data))
                / (np.max(np.abs(adapter_out.data)) + 1e-12))

    fraction = finetune_trainable_fraction(ModelConfig(), 8)
    ok = bitwise and rel < 1e-5 and fraction < 0.05
    verdict(8, ok, f"B=0 bitwise identity: {bitwise} | merged vs adapter rel "
                   f"{rel:.2e} (< 1e-5) | trainable fraction at full scale "
                   f"{fraction:.4f} (< 0.05)")


def test_criterion_09_schedule_exactness():
    sched = FinetuneSchedule()
    expected = {0: 2.5e-6, 9: 2.5e-5, 25: 2.5e-6, 40: 2.5e-7}
    gaps = {e: abs(lr_at(e, sched) - v) / v for e, v in expected.items()}
    ok = all(g < 1e-12 for g in gaps.values())
    verdict(9, ok, "lr_at{0,9,25,40} = {2.5e-6, 2.5e-5, 2.5e-6, 2.5e-7}, max rel gap "
                   f"{max(gaps.values()):.1e}")


def test_criterion_10_split_exactness(mode_splits):
    ok = True
    details = []
    for mode_id, split in sorted(mode_splits.items()):
        train_counts = np.bincount([r.label for r in split.train], minlength=7)
        ok &= train_counts.tolist() == list(DEFAULT_RATIO)
        ok &= len(split.train) == 206 and len(split.test) == 200
        details.append(f"m{mode_id}: {train_counts.tolist()} / test {len(split.test)}")
    verdict(10, ok, "; ".join(details))


def test_criterion_11_determinism(tmp_path, capsys):
    def simulate(sub):
        out = str(tmp_path / sub)
        assert cli_main(["simulate", "--preset", "tiny", "--seed", "3",
                         "--out", out]) == 0
        stdout = capsys.readouterr().out.strip().split("\n")[-1]
        hashes = {f: sha256_file(os.path.join(out, f))
                  for f in ("m0.rpdw", "m1.rpdw", "m2.rpdw", "pretrain.rpdw")}
        return stdout, hashes

    sim_a, sim_b = simulate("a"), simulate("b")

    def pretrain_run(sub):
        out = str(tmp_path / sub)
        assert cli_main(["pretrain", "--preset", "tiny", "--seed", "3",
                         "--epochs", "2", "--batch-size", "16",
                         "--dataset", str(tmp_path / "a" / "pretrain.rpdw"),
                         "--out", out]) == 0
        stdout = capsys.readouterr().out.strip().split("\n")[-1]
        return stdout, sha256_file(os.path.join(out, "checkpoint.rpck"))

    pre_a, pre_b = pretrain_run("pa"), pretrain_run("pb")
    ok = sim_a == sim_b and pre_a == pre_b
    verdict(11, ok, "simulate and pretrain reruns: identical metric JSON and "
                    "identical artifact hashes")


def test_criterion_12_toa_pe_ablation(tiny_cfg):
    import dataclasses
    cfg = dataclasses.replace(tiny_cfg, seed=5)
    data = ExperimentData(cfg)
    out = run_toa_pe_ablation((0, 1), cfg, data)
    arms = {row["param_value"]: row for row in out["arms"]}
    gap = out["accuracy_gap_toa_minus_learned"]
    report_only(12, f"TOA PE arm: acc {arms['on']['accuracy']:.3f} / F1 "
                    f"{arms['on']['macro_f1']:.3f}; learned-index arm: acc "
                    f"{arms['off']['accuracy']:.3f} / F1 {arms['off']['macro_f1']:.3f}")
    report_only(12, f"accuracy gap (TOA - learned): {gap:+.3f} (direction "
                    "reported, not gated)")
    ok = (out["shared_init_identical"] and len(out["arms"]) == 2
          and all(0.0 <= a["accuracy"] <= 1.0 for a in arms.values()))
    verdict(12, ok, "two-arm ablation completed; arms share bitwise-identical "
                    "initialization outside the encoding source")
