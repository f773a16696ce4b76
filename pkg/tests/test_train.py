import math

import numpy as np
import pytest
import torch

from mmanet.config import config_from_dict
from mmanet.data import bayes_error, DropoutPattern
from mmanet.errors import MiningStateError, NumericalError
from mmanet.models import load_checkpoint, parameter_digest, save_checkpoint
from mmanet.train import (
    EpochRecord,
    TrainLog,
    init_networks,
    load_data,
    lr_at,
    pretrain_teacher,
    run_experiment,
    total_loss,
    train_deployment,
)

TINY = {
    "data": {"samples_per_class": 60, "feature_dim_per_modality": 4},
    "model": {"hidden": 8, "feature_dim": 6, "fused_dim": 8, "teacher_fused_dim": 8},
    "epochs": 7,
    "teacher_epochs": 3,
    "batch_size": 16,
    "mar": {"subsample_size": 50},
}


def tiny(**over):
    raw = {k: dict(v) if isinstance(v, dict) else v for k, v in TINY.items()}
    for k, v in over.items():
        if isinstance(v, dict):
            raw.setdefault(k, {}).update(v)
        else:
            raw[k] = v
    return config_from_dict(raw)


@pytest.fixture(scope="module")
def tiny_run():
    cfg = tiny()
    teacher, result, data = run_experiment(cfg)
    return cfg, teacher, result, data


class TestTotalLoss:
    def test_weighted_sum(self):
        assert total_loss(1.0, 0.1, 0.2, 30, 0.5) == pytest.approx(4.1, abs=1e-12)

    def test_zero_weights(self):
        assert total_loss(0.7, 5.0, 9.0, 0.0, 0.0) == 0.7

    @pytest.mark.parametrize("bad", [math.nan, math.inf])
    def test_non_finite_names_component(self, bad):
        with pytest.raises(NumericalError) as info:
            total_loss(1.0, bad, 0.0, 1, 1)
        assert info.value.component == "L_MAD"


def test_lr_schedule():
    cfg = config_from_dict({"preset": "anti_spoofing"})
    assert lr_at(cfg, 1) == pytest.approx(2e-4)
    assert lr_at(cfg, 5) == pytest.approx(1e-3)
    assert lr_at(cfg, 16) == pytest.approx(1e-3)
    assert lr_at(cfg, 17) == pytest.approx(1e-4)
    assert lr_at(cfg, 51) == pytest.approx(1e-6)


def test_train_log_jsonl_round_trip():
    log = TrainLog()
    log.append(EpochRecord(1, "deployment", 0.1, 1.0, mining={"g_d": [0.1, 0.2]}))
    log.append(EpochRecord(2, "deployment", 0.1, 0.5))
    assert TrainLog.from_jsonl(log.to_jsonl()).to_jsonl() == log.to_jsonl()
    with pytest.raises(ValueError):
        log.append(EpochRecord(4, "deployment", 0.1, 0.5))


class TestTeacher:
    def test_frozen_after_training(self, tiny_run):
        _, teacher, _, _ = tiny_run
        assert all(not p.requires_grad for p in teacher.parameters())

    def test_loss_decreases(self):
        cfg = tiny(teacher_epochs=6)
        _, history = pretrain_teacher(cfg)
        assert history.records[-1].l_tl < history.records[0].l_tl

    def test_deployment_training_leaves_teacher_untouched(self):
        cfg = tiny()
        teacher, _ = pretrain_teacher(cfg)
        before = parameter_digest(teacher)
        train_deployment(cfg, teacher)
        assert parameter_digest(teacher) == before

    def test_checkpoint_reproduces_predictions(self, tmp_path, tiny_run):
        cfg, teacher, _, (_, test) = tiny_run
        save_checkpoint(tmp_path / "t.ckpt", {"teacher": teacher})
        fresh, _ = init_networks(tiny(seed=9), [f.shape[1] for f in test.features])
        load_checkpoint(tmp_path / "t.ckpt", {"teacher": fresh})
        x = [torch.as_tensor(f) for f in test.features]
        with torch.no_grad():
            assert torch.equal(teacher(x)[1], fresh(x)[1])

    @pytest.mark.slow
    def test_beats_best_single_modality_bayes(self):
        # the weak modalities only lower the Bayes error by about a point, so
        # the comparison is averaged over seeds to stay above sampling noise
        errs, singles = [], []
        for seed in (0, 100, 101, 102, 103):
            cfg = config_from_dict({"data": {"samples_per_class": 4000, "seed": seed}, "seed": seed,
                                    "teacher_epochs": 30,
                                    "model": {"fusion_activation": "relu"},
                                    "optim": {"method": "adam", "lr": 1e-3, "milestones": [15, 25],
                                              "weight_decay": 1e-3}})
            train, test = load_data(cfg)
            teacher, _ = pretrain_teacher(cfg, train)
            pred = predict_teacher(teacher, test)
            errs.append(np.mean(pred != test.labels))
            m = cfg.data.num_modalities
            singles.append(min(bayes_error(cfg.data, DropoutPattern(tuple(i == j for i in range(m))))
                               for j in range(m)))
        assert np.mean(errs) < np.mean(singles)


def predict_teacher(teacher, ds):
    with torch.no_grad():
        return teacher([torch.as_tensor(f) for f in ds.features])[1].argmax(1).numpy()


class TestDeployment:
    def test_one_record_per_epoch(self, tiny_run):
        cfg, _, result, _ = tiny_run
        assert [r.epoch for r in result.log.records] == list(range(1, cfg.epochs + 1))

    def test_loss_ledger(self, tiny_run):
        _, _, result, _ = tiny_run
        for r in result.log.records:
            assert abs(r.total - (r.l_tl + r.alpha * r.l_mad + r.beta * r.l_mar)) <= 1e-6

    def test_mar_gated_by_warmup(self, tiny_run):
        cfg, _, result, _ = tiny_run
        n = cfg.mar.warmup_epochs
        for r in result.log.records:
            if r.epoch <= n:
                assert r.beta == 0 and r.l_mar == 0 and r.mining is not None
            else:
                assert r.beta == cfg.beta and r.mining is None
        assert result.log.records[n - 1].mining["strong_index"] == result.mining.strong_index

    def test_large_weights_complete(self):
        cfg = tiny(mad={"alpha": 30.0}, mar={"beta": 0.5, "warmup_epochs": 5}, optim={"lr": 1e-3})
        result = train_deployment(cfg, pretrain_teacher(cfg)[0])
        assert len(result.log.records) == cfg.epochs
        assert result.mining.frozen and len(result.mining.omega) == 3
        late = result.log.records[cfg.mar.warmup_epochs:]
        assert all(r.l_mad > 0 and r.l_tl > 0 for r in late)
        assert any(r.l_mar > 0 for r in late)

    def test_mad_can_wait_for_warmup(self):
        cfg = tiny(mad={"active_during_warmup": False})
        result = train_deployment(cfg, pretrain_teacher(cfg)[0])
        assert [r.alpha for r in result.log.records] == [0.0] * 5 + [cfg.alpha] * 2

    def test_ablation_reduces_to_dropout_baseline(self):
        cfg = tiny(mad={"mode": "off"}, mar={"mode": "off"})
        result = train_deployment(cfg, pretrain_teacher(cfg)[0])
        for r in result.log.records:
            assert r.alpha == 0 and r.beta == 0 and r.l_mad == 0 and r.l_mar == 0
            assert r.total == pytest.approx(r.l_tl, abs=1e-12)

    def test_deterministic(self):
        cfg = tiny()
        teacher = pretrain_teacher(cfg)[0]
        a = train_deployment(cfg, teacher)
        b = train_deployment(cfg, teacher)
        assert a.log.to_jsonl() == b.log.to_jsonl()
        assert parameter_digest(a.deployment) == parameter_digest(b.deployment)

    def test_seed_changes_run(self):
        a = train_deployment(tiny(), pretrain_teacher(tiny())[0])
        b = train_deployment(tiny(seed=3), pretrain_teacher(tiny(seed=3))[0])
        assert a.log.to_jsonl() != b.log.to_jsonl()

    def test_divergence_aborts(self):
        cfg = tiny(optim={"lr": 1e300})
        with pytest.raises(NumericalError):
            train_deployment(cfg, pretrain_teacher(tiny())[0])

    def test_unfrozen_mining_past_warmup_is_an_error(self, monkeypatch):
        import mmanet.train as train_mod

        monkeypatch.setattr(train_mod, "finalize_mining", lambda state: state)
        cfg = tiny()
        with pytest.raises(MiningStateError):
            train_deployment(cfg, pretrain_teacher(cfg)[0])
