import json

import numpy as np
import pytest

from interseg.core import ImageSlice, LabelMap
from interseg.dataio import PatientVolume, SplitSpec
from interseg.nn.layers import softmax, softmax_cross_entropy
from interseg.robot import RobotUserConfig, generate_scribbles
from interseg.training import (
    TrainingConfig,
    TrainingDiverged,
    cross_entropy_loss,
    train_base,
    train_editor,
)

FAST = dict(batch_size=2, learning_rate=1e-3, base_channels=4, seed=3)


class TestConfig:
    def test_defaults_are_full_scale(self):
        cfg = TrainingConfig()
        assert cfg.batch_size == 4
        assert cfg.learning_rate == pytest.approx(1e-4)
        assert cfg.max_steps == 140_000
        assert cfg.k_interactions == 10
        assert cfg.augment is True

    def test_batch_bound_scales_with_k(self):
        cfg = TrainingConfig(max_steps=600, k_interactions=10)
        assert cfg.n_batches == 60
        assert TrainingConfig(max_steps=600, k_interactions=1).n_batches == 600

    def test_validation(self):
        with pytest.raises(ValueError):
            TrainingConfig(k_interactions=0)
        with pytest.raises(ValueError):
            TrainingConfig(learning_rate=0)
        with pytest.raises(ValueError):
            TrainingConfig(batch_size=0)

    def test_from_json_file(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"max_steps": 50, "k_interactions": 3}))
        cfg = TrainingConfig.from_file(path)
        assert cfg.max_steps == 50 and cfg.k_interactions == 3
        assert cfg.batch_size == 4  # untouched default

    def test_unknown_keys_rejected(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"max_stepz": 50}))
        with pytest.raises(ValueError, match="max_stepz"):
            TrainingConfig.from_file(path)

    def test_override_wins_and_skips_none(self):
        cfg = TrainingConfig(max_steps=50).override(max_steps=99, learning_rate=None)
        assert cfg.max_steps == 99
        assert cfg.learning_rate == pytest.approx(1e-4)


class TestCrossEntropy:
    def test_onehot_correct_is_tiny(self):
        probs = np.zeros((1, 3, 2, 2))
        labels = np.array([[[0, 1], [2, 0]]])
        for c in range(3):
            probs[0, c][labels[0] == c] = 1.0
        assert cross_entropy_loss(probs, labels) <= 1e-6

    def test_uniform_is_log_c(self):
        probs = np.full((2, 4, 3, 3), 0.25)
        labels = np.zeros((2, 3, 3), dtype=np.int64)
        assert cross_entropy_loss(probs, labels) == pytest.approx(np.log(4))

    def test_matches_scalar_reference(self):
        rng = np.random.default_rng(0)
        raw = rng.random((1, 3, 8, 8))
        probs = raw / raw.sum(axis=1, keepdims=True)
        labels = rng.integers(0, 3, size=(1, 8, 8))
        ref = 0.0
        for r in range(8):
            for c in range(8):
                ref -= np.log(probs[0, labels[0, r, c], r, c])
        assert cross_entropy_loss(probs, labels) == pytest.approx(ref / 64)

    def test_agrees_with_fused_logits_path(self):
        rng = np.random.default_rng(1)
        logits = rng.standard_normal((2, 3, 4, 4))
        labels = rng.integers(0, 3, size=(2, 4, 4))
        fused, _, _ = softmax_cross_entropy(logits, labels)
        assert cross_entropy_loss(softmax(logits), labels) == pytest.approx(fused, rel=1e-10)

    def test_clamps_zero_probability(self):
        probs = np.zeros((1, 2, 1, 1))
        probs[0, 1] = 1.0
        labels = np.zeros((1, 1, 1), dtype=np.int64)
        loss = cross_entropy_loss(probs, labels)
        assert np.isfinite(loss) and loss > 20

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            cross_entropy_loss(np.full((1, 2, 4, 4), 0.5),
                               np.zeros((1, 3, 3), dtype=np.int64))


class TestTrainBase:
    def test_loss_decreases_and_is_deterministic(self, micro_dataset):
        vols, split = micro_dataset
        cfg = TrainingConfig(max_steps=60, val_interval=30, **FAST)
        model1, rec1, stats1 = train_base(vols, split, cfg)
        model2, rec2, _ = train_base(vols, split, cfg)
        losses1 = [s["loss"] for s in rec1.steps]
        losses2 = [s["loss"] for s in rec2.steps]
        assert losses1 == losses2  # same seed, identical trajectory
        assert np.median(losses1[-15:]) < np.median(losses1[:15])
        for k, v in model1.params.items():
            np.testing.assert_array_equal(v, model2.params[k])
        assert stats1.median_intensity > 0

    def test_best_checkpoint_is_max_recorded(self, micro_dataset):
        vols, split = micro_dataset
        cfg = TrainingConfig(max_steps=40, val_interval=10, **FAST)
        _, rec, _ = train_base(vols, split, cfg)
        assert rec.best_val_dice == pytest.approx(max(p["dice"] for p in rec.val_points))

    def test_memorizes_single_slice(self):
        from interseg.core import dice
        from interseg.dataio import generate_synthetic, normalize

        vols = generate_synthetic(4, 1, size=(32, 32), seed=11)
        split = SplitSpec(g1=[vols[0].patient_id], g2=[vols[1].patient_id],
                          g3=[vols[2].patient_id], g4=[vols[3].patient_id])
        cfg = TrainingConfig(batch_size=2, learning_rate=2e-3, base_channels=8,
                             max_steps=200, val_interval=100, augment=False, seed=0)
        model, _, stats = train_base(vols, split, cfg)
        img, gt = vols[0].slices[0]
        probs = model.forward(normalize(img, stats).intensities[None, None])[0]
        pred = LabelMap(probs.argmax(axis=0), 3)
        scores = [dice(gt, pred, c) for c in range(1, 3)]
        assert np.mean(scores) > 0.95

    def test_divergence_aborts(self, micro_dataset, monkeypatch):
        vols, split = micro_dataset
        calls = {"n": 0}
        import interseg.training as training_mod

        real = training_mod.softmax_cross_entropy

        def poisoned(logits, labels):
            calls["n"] += 1
            loss, probs, dlogits = real(logits, labels)
            if calls["n"] >= 3:
                return float("nan"), probs, dlogits
            return loss, probs, dlogits

        monkeypatch.setattr(training_mod, "softmax_cross_entropy", poisoned)
        cfg = TrainingConfig(max_steps=10, **FAST)
        with pytest.raises(TrainingDiverged) as err:
            train_base(vols, split, cfg)
        assert err.value.step == 3

    def test_empty_split_rejected(self, micro_dataset):
        vols, _ = micro_dataset
        bad = SplitSpec(g1=[], g2=[vols[0].patient_id], g3=[], g4=[])
        with pytest.raises(ValueError):
            train_base(vols, bad, TrainingConfig(max_steps=2, **FAST))


@pytest.fixture(scope="module")
def trained_base(micro_dataset):
    vols, split = micro_dataset
    cfg = TrainingConfig(max_steps=40, val_interval=20, **FAST)
    return train_base(vols, split, cfg)


class TestTrainEditor:
    def test_update_and_robot_call_counts(self, micro_dataset, trained_base):
        vols, split = micro_dataset
        base, _, stats = trained_base
        calls = []

        def counting_robot(pred, gt, cfg, rng):
            calls.append(pred)
            return generate_scribbles(pred, gt, cfg, rng)

        k, n_batches = 3, 4
        cfg = TrainingConfig(max_steps=k * n_batches, k_interactions=k,
                             val_interval=10 ** 9, **FAST)
        model, rec = train_editor(base, stats, vols, split, cfg,
                                  RobotUserConfig(rng_seed=1),
                                  robot_fn=counting_robot)
        assert len(rec.steps) == k * n_batches          # B*K optimizer steps
        assert model.step == k * n_batches
        # one initial call plus one per round: K+1 per batch (the last
        # round's scribbles are generated but never consumed)
        assert len(calls) == n_batches * (k + 1) * cfg.batch_size

    def test_final_scribbles_can_be_skipped(self, micro_dataset, trained_base):
        vols, split = micro_dataset
        base, _, stats = trained_base
        calls = []

        def counting_robot(pred, gt, cfg, rng):
            calls.append(pred)
            return generate_scribbles(pred, gt, cfg, rng)

        cfg = TrainingConfig(max_steps=6, k_interactions=3, val_interval=10 ** 9,
                             generate_final_scribbles=False, **FAST)
        train_editor(base, stats, vols, split, cfg, RobotUserConfig(rng_seed=1),
                     robot_fn=counting_robot)
        assert len(calls) == 2 * 3 * cfg.batch_size  # K per batch, not K+1

    def test_inner_scribbles_come_from_previous_prediction(self, micro_dataset,
                                                           trained_base):
        """Algorithm fidelity: the scribbles consumed at round k were drawn
        from the prediction emitted at round k-1, example by example."""
        vols, split = micro_dataset
        base, _, stats = trained_base
        robot_log = []   # (pred labels, produced marks) per example call

        def recording_robot(pred, gt, cfg, rng):
            mask = generate_scribbles(pred, gt, cfg, rng)
            robot_log.append((pred.labels.copy(), mask.marks.copy()))
            return mask

        seen = []        # (batch, k, fed scribbles, emitted labels)

        def hook(b, k, fed_scribbles, pred_labels, loss):
            seen.append((b, k, fed_scribbles.copy(), pred_labels.copy()))

        k, n_batches, batch = 3, 2, 2
        cfg = TrainingConfig(max_steps=k * n_batches, k_interactions=k,
                             val_interval=10 ** 9, batch_size=batch,
                             learning_rate=1e-3, base_channels=4, seed=5)
        train_editor(base, stats, vols, split, cfg, RobotUserConfig(rng_seed=2),
                     robot_fn=recording_robot, inner_hook=hook)

        calls_per_batch = (k + 1) * batch
        for b, k_round, fed, emitted in seen:
            base_idx = b * calls_per_batch + (k_round - 1) * batch
            for ex in range(batch):
                src_pred, src_marks = robot_log[base_idx + ex]
                # the scribbles fed into round k are the robot's output...
                np.testing.assert_array_equal(fed[ex], src_marks)
            if k_round > 1:
                prev = next(p for p in seen if p[0] == b and p[1] == k_round - 1)
                for ex in range(batch):
                    src_pred, _ = robot_log[base_idx + ex]
                    # ...drawn against the prediction of round k-1
                    np.testing.assert_array_equal(src_pred, prev[3][ex])

    def test_base_weights_untouched(self, micro_dataset, trained_base):
        vols, split = micro_dataset
        base, _, stats = trained_base
        before = {k: v.copy() for k, v in base.params.items()}
        cfg = TrainingConfig(max_steps=4, k_interactions=2, val_interval=10 ** 9,
                             **FAST)
        train_editor(base, stats, vols, split, cfg, RobotUserConfig(rng_seed=0))
        for k, v in base.params.items():
            np.testing.assert_array_equal(v, before[k])

    def test_k1_is_single_shot(self, micro_dataset, trained_base):
        vols, split = micro_dataset
        base, _, stats = trained_base
        cfg = TrainingConfig(max_steps=5, k_interactions=1, val_interval=10 ** 9,
                             **FAST)
        _, rec = train_editor(base, stats, vols, split, cfg,
                              RobotUserConfig(rng_seed=0))
        assert len(rec.steps) == 5  # B = max_steps, one update per batch

    def test_determinism(self, micro_dataset, trained_base):
        vols, split = micro_dataset
        base, _, stats = trained_base
        cfg = TrainingConfig(max_steps=6, k_interactions=2, val_interval=10 ** 9,
                             **FAST)
        _, rec1 = train_editor(base, stats, vols, split, cfg,
                               RobotUserConfig(rng_seed=4))
        _, rec2 = train_editor(base, stats, vols, split, cfg,
                               RobotUserConfig(rng_seed=4))
        assert [s["loss"] for s in rec1.steps] == [s["loss"] for s in rec2.steps]

    def test_scratch_role_trains(self, micro_dataset, trained_base):
        vols, split = micro_dataset
        base, _, stats = trained_base
        cfg = TrainingConfig(max_steps=4, k_interactions=2, val_interval=10 ** 9,
                             **FAST)
        model, rec = train_editor(base, stats, vols, split, cfg,
                                  RobotUserConfig(rng_seed=0), role="scratch")
        assert model.spec.in_channels == 5  # image + (C+1) scribble planes
        assert len(rec.steps) == 4

    def test_class_count_mismatch_rejected(self, micro_dataset, trained_base):
        vols, split = micro_dataset
        base, _, stats = trained_base
        img = ImageSlice(np.ones((32, 32), dtype=np.float32))
        lbl = LabelMap(np.zeros((32, 32), dtype=np.int64), 2)  # C=2, base has 3
        two_class = [PatientVolume(f"q{i}", [(img, lbl)]) for i in range(4)]
        bad_split = SplitSpec(g1=["q0"], g2=["q1"], g3=["q2"], g4=["q3"])
        with pytest.raises(ValueError, match="C="):
            train_editor(base, stats, two_class, bad_split,
                         TrainingConfig(max_steps=2, **FAST),
                         RobotUserConfig(rng_seed=0))

    def test_record_jsonl_roundtrip(self, micro_dataset, trained_base, tmp_path):
        vols, split = micro_dataset
        base, _, stats = trained_base
        cfg = TrainingConfig(max_steps=4, k_interactions=2, val_interval=2, **FAST)
        _, rec = train_editor(base, stats, vols, split, cfg,
                              RobotUserConfig(rng_seed=0))
        rec.write_jsonl(tmp_path / "steps.jsonl")
        rec.write_summary(tmp_path / "summary.json")
        lines = (tmp_path / "steps.jsonl").read_text().splitlines()
        assert len(lines) == 4
        assert json.loads(lines[0])["step"] == 1
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["n_steps"] == 4
        assert summary["role"] == "editor"
        assert summary["best_step"] >= 1
