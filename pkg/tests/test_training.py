"""Oversampling, validation carve-out, early stopping, and the training loop."""

import numpy as np
import pytest

from oracles import random_bundle

from enrollnet.features import FeatureBundle
from enrollnet.model import ModelDims, batch_loss
from enrollnet.training import (
    DivergedLoss,
    EarlyStopper,
    SingleClassDataset,
    TooFewRecords,
    TrainConfig,
    make_validation_split,
    oversample_minority,
    train,
)

DIMS = ModelDims(word_dim=3, hidden=2, attn=2, cross_width=4, cross_layers=1)


def labeled_bundle(rng, label, completion_date=None):
    bundle = random_bundle(rng, DIMS, n_inclusion=1, n_exclusion=1)
    bundle.label = label
    bundle.completion_date = completion_date
    return bundle


class TestTrainConfig:
    def test_defaults_follow_training_protocol(self):
        cfg = TrainConfig()
        assert cfg.batch_size == 256
        assert cfg.max_epochs == 100
        assert cfg.patience == 5
        assert cfg.lr == 0.001
        assert cfg.validation_fraction == 0.10

    @pytest.mark.parametrize("kwargs", [
        {"batch_size": 0},
        {"patience": 0},
        {"validation_fraction": 0.0},
        {"validation_fraction": 0.5},
    ])
    def test_invalid_configs_rejected(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)


class TestOversampling:
    def test_three_negatives_one_positive(self):
        rng = np.random.default_rng(0)
        bundles = [labeled_bundle(rng, 0) for _ in range(3)] + [labeled_bundle(rng, 1)]
        balanced = oversample_minority(bundles, seed=0)
        labels = [b.label for b in balanced]
        assert labels.count(0) == 3 and labels.count(1) == 3
        # the single positive is the only candidate, so it appears three times
        positives = [b for b in balanced if b.label == 1]
        assert all(p is positives[0] for p in positives)

    def test_balanced_input_unchanged(self):
        rng = np.random.default_rng(1)
        bundles = [labeled_bundle(rng, i % 2) for i in range(10)]
        assert oversample_minority(bundles, seed=3) == bundles

    def test_single_class_rejected(self):
        rng = np.random.default_rng(2)
        with pytest.raises(SingleClassDataset):
            oversample_minority([labeled_bundle(rng, 0) for _ in range(4)], seed=0)

    def test_counts_exactly_equal_on_random_mixes(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            n_pos = int(rng.integers(1, 30))
            n_neg = int(rng.integers(1, 30))
            bundles = [labeled_bundle(rng, 1) for _ in range(n_pos)]
            bundles += [labeled_bundle(rng, 0) for _ in range(n_neg)]
            balanced = oversample_minority(bundles, seed=int(rng.integers(0, 100)))
            labels = [b.label for b in balanced]
            assert labels.count(0) == labels.count(1) == max(n_pos, n_neg)
            # all originals retained
            assert all(any(b is x for x in balanced) for b in bundles)

    def test_seed_determinism(self):
        rng = np.random.default_rng(4)
        bundles = [labeled_bundle(rng, 0) for _ in range(9)] + [
            labeled_bundle(rng, 1) for _ in range(3)
        ]
        first = oversample_minority(bundles, seed=7)
        second = oversample_minority(bundles, seed=7)
        assert all(a is b for a, b in zip(first, second))


class TestValidationSplit:
    def _dated_bundles(self, n):
        rng = np.random.default_rng(5)
        return [
            labeled_bundle(rng, i % 2, completion_date=f"20{10 + i % 5:02d}-{1 + i % 12:02d}")
            for i in range(n)
        ]

    def test_ninety_ten(self):
        bundles = self._dated_bundles(100)
        fit, val = make_validation_split(bundles, 0.1)
        assert len(fit) == 90 and len(val) == 10
        max_fit = max(b.completion_date for b in fit)
        assert all(b.completion_date >= max_fit for b in val)

    def test_ten_records_gives_nine_one(self):
        fit, val = make_validation_split(self._dated_bundles(10), 0.1)
        assert len(fit) == 9 and len(val) == 1

    def test_validation_free_of_oversampled_duplicates(self):
        """Oversampling after the carve-out can never touch the val set."""
        bundles = self._dated_bundles(40)
        fit, val = make_validation_split(bundles, 0.25)
        balanced = oversample_minority(fit, seed=0)
        assert not any(any(v is b for b in balanced) for v in val)
        assert len({id(v) for v in val}) == len(val)

    def test_too_few_records(self):
        with pytest.raises(TooFewRecords):
            make_validation_split(self._dated_bundles(9), 0.1)

    def test_undated_bundles_stay_in_fit(self):
        rng = np.random.default_rng(6)
        undated = [labeled_bundle(rng, 0) for _ in range(3)]
        dated = self._dated_bundles(17)
        fit, val = make_validation_split(undated + dated, 0.1)
        assert all(b.completion_date is not None for b in val)


class TestEarlyStopper:
    def test_scripted_sequence_stops_after_epoch_seven(self):
        """Losses [1.0, .9, .91, ..., .95] with patience 5: epoch 2 is best
        and the fifth consecutive non-improvement lands at epoch 7."""
        stopper = EarlyStopper(patience=5)
        stopped_at = None
        for epoch, loss in enumerate([1.0, 0.9, 0.91, 0.92, 0.93, 0.94, 0.95], start=1):
            stopper.update(loss)
            if stopper.should_stop:
                stopped_at = epoch
                break
        assert stopped_at == 7
        assert stopper.best_epoch == 2

    def test_tie_counts_as_no_improvement(self):
        stopper = EarlyStopper(patience=2)
        assert stopper.update(0.5)
        assert not stopper.update(0.5)
        assert not stopper.update(0.5)
        assert stopper.should_stop

    def test_improvement_resets_patience(self):
        stopper = EarlyStopper(patience=2)
        for loss in (1.0, 0.99, 0.995, 0.9, 0.91):
            stopper.update(loss)
        assert not stopper.should_stop
        assert stopper.best_epoch == 4


class TestTrainLoop:
    def _separable_sets(self, n=24):
        """Label = sign of the first cross feature; trivially learnable."""
        rng = np.random.default_rng(7)
        bundles = []
        for i in range(n):
            bundle = labeled_bundle(rng, 0, completion_date=f"2012-{1 + i % 12:02d}")
            bundle.cross_input[0] = rng.uniform(0.5, 1.5) * (1 if i % 2 else -1)
            bundle.label = 1 if bundle.cross_input[0] > 0 else 0
            bundles.append(bundle)
        return bundles[:-6], bundles[-6:]

    def test_single_epoch_runs(self):
        fit, val = self._separable_sets()
        cfg = TrainConfig(batch_size=8, max_epochs=1, seed=0)
        params, logs = train(fit, val, cfg, dims=DIMS)
        assert len(logs) == 1
        assert np.isfinite(logs[0].train_loss) and np.isfinite(logs[0].val_loss)

    def test_loss_decreases_on_learnable_data(self):
        fit, val = self._separable_sets()
        cfg = TrainConfig(batch_size=8, max_epochs=40, patience=40, lr=0.01, seed=0)
        params, logs = train(fit, val, cfg, dims=DIMS)
        assert logs[-1].train_loss < logs[0].train_loss * 0.8

    def test_seeded_determinism_bitwise(self):
        fit, val = self._separable_sets()
        cfg = TrainConfig(batch_size=8, max_epochs=5, seed=11)
        params_a, logs_a = train(fit, val, cfg, dims=DIMS)
        params_b, logs_b = train(fit, val, cfg, dims=DIMS)
        assert [(l.epoch, l.train_loss, l.val_loss) for l in logs_a] == [
            (l.epoch, l.train_loss, l.val_loss) for l in logs_b
        ]
        for (_, a), (_, b) in zip(params_a.param_items(), params_b.param_items()):
            np.testing.assert_array_equal(a, b)

    def test_never_runs_past_best_plus_patience(self):
        fit, val = self._separable_sets()
        cfg = TrainConfig(batch_size=8, max_epochs=60, patience=3, lr=0.3, seed=2)
        _, logs = train(fit, val, cfg, dims=DIMS)
        best_epoch = min(logs, key=lambda l: l.val_loss).epoch
        assert logs[-1].epoch <= best_epoch + cfg.patience

    def test_returns_best_epoch_params(self):
        fit, val = self._separable_sets()
        cfg = TrainConfig(batch_size=8, max_epochs=30, patience=4, lr=0.05, seed=3)
        params, logs = train(fit, val, cfg, dims=DIMS)
        best_val = min(l.val_loss for l in logs)
        val_labels = [float(b.label) for b in val]
        np.testing.assert_allclose(batch_loss(params, val, val_labels), best_val, atol=1e-12)

    def test_non_finite_input_raises_diverged(self):
        fit, val = self._separable_sets()
        fit[0].cross_input[1] = np.nan
        cfg = TrainConfig(batch_size=8, max_epochs=2, seed=0)
        with pytest.raises(DivergedLoss):
            train(fit, val, cfg, dims=DIMS)

    def test_unlabeled_bundle_rejected(self):
        fit, val = self._separable_sets()
        fit[0].label = None
        with pytest.raises(ValueError):
            train(fit, val, TrainConfig(), dims=DIMS)
