"""AdamW closed forms, descent sanity and training-loop determinism."""

import numpy as np
import pytest

from bagforge import datastore as ds
from bagforge import model as mdl
from bagforge import numcore as nc
from bagforge import optim
from bagforge.errors import ConfigError, NumericError


def scalar_param(value):
    return nc.Tensor(np.array([[value]], dtype=np.float32), requires_grad=True, name="p")


def make_state(named, lr=1e-2, weight_decay=0.0):
    cfg = optim.TrainConfig(lr=lr, weight_decay=weight_decay)
    return optim.OptState.for_params(named, cfg)


class TestAdamwStep:
    def test_first_step_is_signed_lr(self):
        # t=1 bias correction collapses to -lr * g/(|g|+eps)
        for g in (0.37, -2.5):
            p = scalar_param(1.0)
            p.grad = np.array([[g]], dtype=np.float32)
            state = make_state([("p", p)], lr=1e-2)
            optim.adamw_step([("p", p)], state)
            expect = 1.0 - 1e-2 * g / (abs(g) + state.eps)
            assert p.data[0, 0] == pytest.approx(expect, rel=1e-6)

    def test_zero_gradient_fixed_point(self):
        p = scalar_param(0.75)
        p.grad = np.zeros((1, 1), dtype=np.float32)
        state = make_state([("p", p)], lr=1e-2, weight_decay=0.0)
        optim.adamw_step([("p", p)], state)
        assert p.data[0, 0] == pytest.approx(0.75, abs=0)

    def test_decoupled_decay_shrinks(self):
        p = scalar_param(2.0)
        p.grad = np.zeros((1, 1), dtype=np.float32)
        state = make_state([("p", p)], lr=1e-2, weight_decay=0.5)
        optim.adamw_step([("p", p)], state)
        assert p.data[0, 0] == pytest.approx(2.0 * (1.0 - 1e-2 * 0.5), rel=1e-6)
        assert state.t == 1

    def test_non_finite_gradient_names_tensor(self):
        p = scalar_param(1.0)
        p.grad = np.array([[np.nan]], dtype=np.float32)
        state = make_state([("badly.named", p)])
        with pytest.raises(NumericError, match="badly.named"):
            optim.adamw_step([("badly.named", p)], state)


@pytest.fixture(scope="module")
def synth_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    manifest = ds.synthesize_dataset(k=3, bags_per_class=12, n_range=(3, 8), d=16,
                                     separation=6.0, seed=5, out_dir=root)
    manifest = ds.stratified_split(manifest, ds.SplitSpec(seed=5))
    ds.save_manifest(manifest, root / "manifest.json")
    return manifest, root


class TestTrainingLoop:
    def test_loss_decreases_over_first_five_steps(self, synth_dataset):
        manifest, root = synth_dataset
        bags = ds.load_bags(manifest, root, "train")
        config = optim.TrainConfig(aggregator="milatt", lr=5e-5, hidden=16, seed=1)
        params = mdl.init_model("milatt", manifest.d, manifest.k, 1, hidden=16)
        weights = mdl.ClassWeights.uniform(manifest.k)
        state = optim.OptState.for_params(params.named_tensors(), config)
        losses = [optim.train_step(bags[0], params, weights, state) for _ in range(6)]
        assert all(b < a for a, b in zip(losses, losses[1:]))

    def test_identical_seed_identical_logs(self, synth_dataset):
        manifest, root = synth_dataset
        config = optim.TrainConfig(aggregator="bgap", lr=5e-5, epochs=4, seed=11)
        r1 = optim.train(manifest, root, config)
        r2 = optim.train(manifest, root, config)
        assert r1.log_lines() == r2.log_lines()
        for (n1, t1), (n2, t2) in zip(r1.params.named_tensors(),
                                      r2.params.named_tensors()):
            assert n1 == n2
            assert t1.data.tobytes() == t2.data.tobytes()

    def test_disabling_weighting_equals_unit_weights(self, synth_dataset):
        manifest, root = synth_dataset
        # balanced synthetic counts: inverse-count weights are exactly 1
        on = optim.train(manifest, root,
                         optim.TrainConfig(aggregator="bgap", epochs=2, seed=3))
        off = optim.train(manifest, root,
                          optim.TrainConfig(aggregator="bgap", epochs=2, seed=3,
                                            class_weighting=False))
        assert on.log_lines() == off.log_lines()
        np.testing.assert_array_equal(on.class_weights.w, off.class_weights.w)

    def test_best_checkpoint_is_argmax_earliest_tie(self, synth_dataset):
        manifest, root = synth_dataset
        config = optim.TrainConfig(aggregator="bgap", lr=5e-5, epochs=6, seed=2)
        result = optim.train(manifest, root, config)
        f1s = [e["val_macro_f1"] for e in result.log]
        best = max(f1s)
        assert result.best_val_f1 == best
        assert result.best_epoch == f1s.index(best)  # earliest on ties

    def test_empty_split_rejected(self, synth_dataset):
        manifest, root = synth_dataset
        unsplit = ds.Manifest(manifest.dataset_id, manifest.d, manifest.k,
                              manifest.class_names,
                              [ds.ManifestEntry(e.core_id, e.path, e.label,
                                                "unassigned", e.source_tma)
                               for e in manifest.entries])
        with pytest.raises(ConfigError, match="non-empty"):
            optim.train(unsplit, root, optim.TrainConfig(epochs=1))

    def test_overfit_single_bag_milatt(self, synth_dataset):
        manifest, root = synth_dataset
        bags = ds.load_bags(manifest, root, "train")
        params = mdl.init_model("milatt", manifest.d, manifest.k, 0, hidden=16)
        config = optim.TrainConfig(aggregator="milatt", lr=1e-2, hidden=16)
        state = optim.OptState.for_params(params.named_tensors(), config)
        weights = mdl.ClassWeights.uniform(manifest.k)
        loss = None
        for _ in range(200):
            loss = optim.train_step(bags[0], params, weights, state)
            if loss < 1e-2:
                break
        assert loss < 1e-2


class TestTrainConfig:
    def test_validation(self):
        with pytest.raises(ConfigError):
            optim.TrainConfig(aggregator="nope")
        with pytest.raises(ConfigError):
            optim.TrainConfig(epochs=0)
        with pytest.raises(ConfigError):
            optim.TrainConfig(fractions=(0.5, 0.2, 0.2))

    def test_hash_ignores_nothing_semantic(self):
        a = optim.TrainConfig(aggregator="bgap", lr=2e-5)
        b = optim.TrainConfig(aggregator="bgap", lr=2e-5)
        c = optim.TrainConfig(aggregator="bgap", lr=3e-5)
        assert optim.config_hash(a) == optim.config_hash(b)
        assert optim.config_hash(a) != optim.config_hash(c)
