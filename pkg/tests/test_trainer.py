import json
import math

import numpy as np
import pytest
import torch

import selfcollab.trainer as trainer_mod
from selfcollab.branches import FULL, ModelBundle
from selfcollab.data import ValidationPair
from selfcollab.networks import make_denoiser, ne_extract
from selfcollab.trainer import (ABLATION_VARIANTS, DivergenceError, MetricsRecord, PhaseTrainer, RunData,
                                ablation_table, build_models, evaluate, read_jsonl, run_ablation, run_sc,
                                sc_replace, train_phase)

import oracles
from tiny import tiny_config


@pytest.fixture(scope="module")
def cfg():
    return tiny_config()


@pytest.fixture(scope="module")
def data(cfg):
    return RunData.from_config(cfg)


def params_only(models):
    return {name: h.checksum(buffers=False) for name, h in models.handles().items()}


def trainer_for(cfg, data, models=None, **kw):
    models = models or build_models(cfg)
    return PhaseTrainer(models, data.stream(cfg, models.k), data.val_pairs, cfg, **kw)


# -- one phase ----------------------------------------------------------------

def test_zero_steps_is_a_no_op(cfg, data):
    models = build_models(cfg)
    before = models.checksums()
    models, result = train_phase(models, data.stream(cfg, 0), data.val_pairs, cfg, steps=0)
    assert models.checksums() == before
    assert result.records == [] and result.best_state is None


def test_loss_trace_is_bitwise_deterministic(cfg, data):
    def trace():
        tr = trainer_for(cfg, data)
        return [tr.train_step(tr.stream.batch_at(s)) for s in range(50)]

    a, b = trace(), trace()
    assert json.dumps(a) == json.dumps(b)
    assert all(math.isfinite(v) for step in a for v in step.values())


def test_player_isolation_baseline(cfg, data):
    tr = trainer_for(cfg, data)
    bundle = tr.forward(tr.stream.batch_at(0))
    c0 = params_only(tr.models)
    tr.d_step(bundle)
    c1 = params_only(tr.models)
    assert {n for n in c0 if c0[n] != c1[n]} == {"D"}
    tr.g_step(bundle)
    c2 = params_only(tr.models)
    # the learnable NE conv sits on the generator's gradient path
    assert {n for n in c1 if c1[n] != c2[n]} == {"G", "DN0"}
    tr.dn_step(bundle)
    c3 = params_only(tr.models)
    assert {n for n in c2 if c2[n] != c3[n]} == {"DN"}


def test_player_isolation_after_replace(cfg, data):
    models = sc_replace(build_models(cfg))
    tr = trainer_for(cfg, data, models)
    bundle = tr.forward(tr.stream.batch_at(0))
    c0 = params_only(models)
    tr.g_step(bundle)
    c1 = params_only(models)
    assert {n for n in c0 if c0[n] != c1[n]} == {"G"}
    tr.dn_step(bundle)
    c2 = params_only(models)
    assert {n for n in c1 if c1[n] != c2[n]} == {"DN"}


def test_best_snapshot_is_argmax(cfg, data):
    tr = trainer_for(cfg, data)
    result = tr.run(8)
    assert [r.step for r in result.records] == [2, 4, 6, 8]
    assert result.best_record.psnr_val == max(r.psnr_val for r in result.records)
    best_dn = make_denoiser(cfg.networks.denoiser, {"width": 4, "depth": 1}, dtype=torch.float64)
    best_dn.load_state(result.best_state)
    assert evaluate(best_dn, data.val_pairs, torch.float64).psnr_val == pytest.approx(result.best_record.psnr_val)


def test_eval_at_final_step_off_interval(cfg, data):
    tr = trainer_for(cfg, data)
    assert [r.step for r in tr.run(5).records] == [2, 4, 5]


# -- replace --------------------------------------------------------------------

def test_sc_replace_contract(cfg, data):
    models = build_models(cfg)
    tr = trainer_for(cfg, data, models)
    tr.run(2)
    before = models.checksums()
    old_teacher = models.DN0
    sc_replace(models)
    assert models.k == 1
    assert models.DN0.frozen and models.DN0.checksum() == models.DN.checksum()
    assert models.DN0 is not models.DN
    for name in ("G", "D", "DN"):
        assert models.checksums()[name] == before[name]
    y = torch.as_tensor(data.val_pairs[0].noisy)[None]
    assert old_teacher.checksum() != models.DN0.checksum()
    with torch.no_grad():
        n_old, _ = ne_extract(y, old_teacher)
        n_new, _ = ne_extract(y, models.DN0)
    assert not torch.equal(n_old, n_new)
    sc_replace(models)
    assert models.k == 2


def test_teacher_constant_over_a_phase(cfg, data):
    models = sc_replace(build_models(cfg))
    teacher = models.DN0.checksum()
    trainer_for(cfg, data, models).run(6)
    assert models.DN0.checksum() == teacher
    assert models.DN.checksum() != teacher


def test_bundle_check_rejects_unfrozen_teacher(cfg):
    models = build_models(cfg)
    models.k = 1
    with pytest.raises(RuntimeError):
        models.check()


def test_optimizer_carry_over(cfg, data):
    models = build_models(cfg)
    first = trainer_for(cfg, data, models)
    first.run(2)
    sc_replace(models)
    second = trainer_for(cfg, data, models)
    second.inherit_optimizers(first)
    n_g = len(models.G.trainable_parameters())
    assert len(second.opt_g.state_dict()["state"]) == n_g
    for a, b in zip(models.D.module.parameters(), models.D.module.parameters()):
        assert torch.equal(first.opt_d.state[a]["exp_avg"], second.opt_d.state[b]["exp_avg"])


# -- outer loop -------------------------------------------------------------------

def test_max_iterations_one_is_baseline_only(data):
    cfg = tiny_config(schedule={"max_iterations": 1})
    result = run_sc(cfg, data=data)
    assert len(result.history) == 1
    assert result.models.k == 0 and not result.models.DN0.frozen


def test_infinite_threshold_stops_after_one_iteration(data):
    cfg = tiny_config(schedule={"max_iterations": 8, "stop_delta_db": float("inf")})
    result = run_sc(cfg, data=data)
    assert [h["k"] for h in result.history] == [0, 1]


def scripted(monkeypatch, psnr_by_k):
    def fake_eval(dn, pairs, dtype=torch.float32, k=0, step=0):
        return MetricsRecord(k=k, step=step, psnr_val=psnr_by_k[k], ssim_val=0.5)

    monkeypatch.setattr(trainer_mod, "evaluate", fake_eval)


@pytest.mark.parametrize("threshold", [0.0, 0.25, 0.5])
def test_stop_rule_is_exact(monkeypatch, data, threshold):
    # dyadic gains keep the differences exact; a gain equal to the threshold continues
    gains = [None, 1.0, 0.5, 0.25, 0.0625, 0.5, 0.5, 0.5]
    psnr = list(np.cumsum([20.0] + gains[1:]))
    scripted(monkeypatch, psnr)
    cfg = tiny_config(schedule={"max_iterations": 8, "stop_delta_db": threshold, "baseline_steps": 2,
                                "steps_per_iteration": 2})
    history = run_sc(cfg, data=data).history
    expected_len = next((k + 1 for k in range(1, 8) if gains[k] < threshold), 8)
    assert len(history) == expected_len
    for h in history[1:]:
        assert h["delta_psnr"] == pytest.approx(psnr[h["k"]] - psnr[h["k"] - 1])
    # stop iff the gain falls below the threshold
    for h in history[1:-1]:
        assert h["delta_psnr"] >= threshold


def test_negative_gain_stops(monkeypatch, data):
    scripted(monkeypatch, [20.0, 19.0, 19.5])
    cfg = tiny_config(schedule={"max_iterations": 3, "stop_delta_db": 0.0,
                                "baseline_steps": 2, "steps_per_iteration": 2})
    history = run_sc(cfg, data=data).history
    assert len(history) == 2 and history[1]["delta_psnr"] == pytest.approx(-1.0)


def test_history_bounded_and_records_ordered(data):
    cfg = tiny_config(schedule={"max_iterations": 3, "stop_delta_db": 0.0})
    result = run_sc(cfg, data=data)
    assert 1 <= len(result.history) <= 3
    keys = [(r.k, r.step) for r in result.records]
    assert keys == sorted(keys) and len(set(keys)) == len(keys)
    assert all(math.isfinite(r.psnr_val) for r in result.records)


def test_stage_two_stream(cfg, data):
    cfg2 = tiny_config(schedule={"stage2_start": 1})
    assert data.stream(cfg2, 0).patch == 16 and data.stream(cfg2, 0).batch == 2
    s = data.stream(cfg2, 1)
    assert (s.patch, s.batch) == (24, 2)


def test_run_directory_contents(tmp_path, data):
    cfg = tiny_config()
    run_sc(cfg, tmp_path, data=data)
    for name in ("config.yaml", "corpus.json", "metrics.jsonl", "timing.jsonl", "history.jsonl"):
        assert (tmp_path / name).exists(), name
    manifest = json.loads((tmp_path / "checkpoints" / "iter_1" / "manifest.json").read_text())
    assert manifest["k"] == 1 and manifest["seed"] == 3 and manifest["config_hash"] == cfg.hash()
    assert "metrics" in manifest
    assert (tmp_path / "final" / "DN.json").exists()
    metrics = read_jsonl(tmp_path / "metrics.jsonl")
    assert metrics and all("wall_clock" not in m for m in metrics)
    assert len(read_jsonl(tmp_path / "timing.jsonl")) == len(metrics)


class Interrupt(Exception):
    pass


@pytest.mark.parametrize("stop_after", [3, 6])
def test_resume_reproduces_uninterrupted_trace(tmp_path, monkeypatch, data, stop_after):
    cfg = tiny_config(schedule={"max_iterations": 2, "baseline_steps": 4, "steps_per_iteration": 4})
    run_sc(cfg, tmp_path / "full", data=data)

    original = PhaseTrainer.train_step
    calls = {"n": 0}

    def flaky(self, batch):
        calls["n"] += 1
        if calls["n"] > stop_after:
            raise Interrupt
        return original(self, batch)

    monkeypatch.setattr(PhaseTrainer, "train_step", flaky)
    with pytest.raises(Interrupt):
        run_sc(cfg, tmp_path / "cut", data=data)
    monkeypatch.setattr(PhaseTrainer, "train_step", original)
    run_sc(cfg, tmp_path / "cut", data=data, resume=True)
    for name in ("metrics.jsonl", "history.jsonl"):
        assert (tmp_path / "full" / name).read_bytes() == (tmp_path / "cut" / name).read_bytes()
    a = torch.load(tmp_path / "full" / "final" / "DN.pt")
    b = torch.load(tmp_path / "cut" / "final" / "DN.pt")
    assert all(torch.equal(a[k], b[k]) for k in a)


def test_divergence_guard_non_finite(monkeypatch, tmp_path, data):
    cfg = tiny_config()
    original = RunData.stream

    def poisoned(self, cfg, k):
        s = original(self, cfg, k)
        batch_at = s.batch_at

        def bad(step):
            b = batch_at(step)
            if step == 1:
                b["y"][0, 0, 0, 0] = float("nan")
            return b

        s.batch_at = bad
        return s

    monkeypatch.setattr(RunData, "stream", poisoned)
    result = run_sc(cfg, tmp_path, data=data)
    assert result.status == "diverged"
    assert result.history[-1]["status"] == "diverged"
    assert (tmp_path / "checkpoints" / "failed" / "DN.json").exists()


def test_divergence_guard_collapse(data):
    cfg = tiny_config(train={"collapse_threshold": 1e9, "collapse_steps": 3})
    tr = trainer_for(cfg, data)
    with pytest.raises(DivergenceError) as err:
        tr.run(10)
    assert err.value.record.status == "collapsed" and tr.step_index == 3


# -- evaluation ---------------------------------------------------------------------

def test_evaluate_identity_on_clean_pairs():
    clean = np.random.default_rng(0).random((1, 32, 32))
    rec = evaluate(make_denoiser("linear_conv"), [ValidationPair(clean, clean, 0)])
    assert rec.psnr_val == 100.0 and rec.ssim_val == pytest.approx(1.0, abs=1e-6)


def test_evaluate_zero_output():
    clean = np.full((1, 32, 32), 0.5)
    rec = evaluate(lambda t: torch.zeros_like(t), [ValidationPair(clean, clean, 0)], torch.float64)
    assert rec.psnr_val == pytest.approx(6.0206, abs=1e-4)


def test_evaluate_matches_metric_oracle(data):
    dn = make_denoiser("dncnn_lite", {"width": 4, "depth": 1}, seed=5, dtype=torch.float64)
    rec = evaluate(dn, data.val_pairs, torch.float64)
    dn.module.eval()
    values = []
    with torch.no_grad():
        for p in data.val_pairs:
            out = torch.clamp(dn(torch.as_tensor(p.noisy)[None]), 0, 1)[0].numpy()
            values.append(oracles.psnr_loop(out, p.clean))
    assert rec.psnr_val == pytest.approx(np.mean(values), rel=1e-9)


# -- ablation ---------------------------------------------------------------------

def test_v5_is_the_baseline():
    structure, use_bgm = ABLATION_VARIANTS["V5"]
    assert structure == FULL and use_bgm


def test_v1_has_one_synthetic_and_two_adversarial_terms(cfg, data):
    structure, use_bgm = ABLATION_VARIANTS["V1"]
    assert not use_bgm
    models = build_models(cfg, noise_skip=False)
    tr = trainer_for(cfg, data, models, structure=structure, use_bgm=use_bgm)
    bundle = tr.forward(tr.stream.batch_at(0))
    assert bundle.fake_names() == ["x_u_syn"]
    calls = []
    real_d = models.D

    class Counting:
        def __call__(self, t):
            calls.append(t.shape)
            return real_d(t)

    tr.models = ModelBundle(G=models.G, D=Counting(), DN=models.DN, DN0=models.DN0)
    d_parts = trainer_mod.total_objective("d", bundle, tr.models.D, tr.weights)
    assert len(calls) == 2 and set(d_parts) == {"total", "adv_d"}
    calls.clear()
    g_parts = trainer_mod.total_objective("g", bundle, tr.models.D, tr.weights, use_bgm=False)
    assert len(calls) == 1 and "bgm" not in g_parts


def test_unknown_variant(cfg):
    with pytest.raises(ValueError):
        run_ablation("V9", cfg)


def test_ablation_table_shape():
    recs = {v: MetricsRecord(0, 10, 20.0 + i, 0.5) for i, v in enumerate(ABLATION_VARIANTS)}
    lines = ablation_table(recs).strip().splitlines()
    assert lines[0] == "| Methods | V1 | V2 | V3 | V4 | V5 |"
    assert [ln.split("|")[1].strip() for ln in lines[2:]] == ["U", "BGMloss", "NE module", "S", "P", "PSNR(dB)",
                                                               "SSIM", "reference PSNR(dB)"]
    assert "34.67" in lines[-1] and "33.14" in lines[-1]
