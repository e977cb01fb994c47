"""Victim models: prediction contract, pruning, distillation, poisoning."""

import hashlib
import json

import numpy as np
import pytest
import torch

from patchtrap import (
    ConvNetConfig,
    Dataset,
    Layout,
    SmallConvNet,
    TriggerSpec,
    distill_surrogate,
    load_model,
    poison_dataset,
    prediction_interface,
    prune_global_l1,
    save_model,
    train_baseline,
)
from patchtrap.errors import (
    InputShapeError,
    InvalidRatioError,
    MissingLabelsError,
    StateError,
)
from patchtrap.models.pruning import PruneConfig, global_sparsity, prunable_tensors


def fingerprint_oracle(net: torch.nn.Module) -> str:
    """Independent recomputation: sorted keys, shapes, little-endian float32."""
    digest = hashlib.sha256()
    state = net.state_dict()
    for key in sorted(state):
        tensor = state[key]
        digest.update(key.encode())
        digest.update(str(tuple(tensor.shape)).encode())
        arr = np.array(tensor.detach().numpy(), dtype="<f4", order="C")
        digest.update(arr.tobytes())
    return digest.hexdigest()


class TestPredict:
    def test_probabilities_normalize(self, tiny_model):
        out = tiny_model.predict(torch.zeros(1, 3, 32, 32))
        assert out.probabilities.shape == (1, 10)
        assert abs(float(out.probabilities.sum()) - 1.0) < 1e-5

    def test_duplicated_input_gives_identical_rows(self, tiny_model):
        image = torch.rand(1, 3, 32, 32, generator=torch.Generator().manual_seed(0))
        out = tiny_model.predict(torch.cat([image, image]))
        assert torch.equal(out.logits[0], out.logits[1])
        assert torch.equal(out.features[0], out.features[1])

    def test_repeated_calls_are_bit_identical(self, tiny_model, tiny_data):
        _, test = tiny_data
        batch = test.images[:16]
        a = tiny_model.predict(batch)
        b = tiny_model.predict(batch)
        assert torch.equal(a.logits, b.logits)
        assert torch.equal(a.probabilities, b.probabilities)

    def test_shape_mismatch_rejected(self, tiny_model):
        with pytest.raises(InputShapeError):
            tiny_model.predict(torch.zeros(1, 3, 16, 16))
        with pytest.raises(InputShapeError):
            tiny_model.logits(torch.zeros(1, 1, 32, 32))

    def test_features_are_penultimate_width(self, tiny_model):
        out = tiny_model.predict(torch.zeros(2, 3, 32, 32))
        assert out.features.shape == (2, tiny_model.arch.channels[-1])

    def test_wrapper_keeps_weights_frozen(self, tiny_model):
        assert not tiny_model.net.training
        assert all(not p.requires_grad for p in tiny_model.net.parameters())

    def test_prediction_interface_hides_everything_but_probabilities(self, tiny_model):
        probe = prediction_interface(tiny_model)
        probs = probe(torch.zeros(2, 3, 32, 32))
        assert probs.shape == (2, 10)
        assert torch.allclose(probs.sum(dim=1), torch.ones(2), atol=1e-5)


class TestTrainBaseline:
    def test_same_seed_same_fingerprint(self, tiny_data):
        train, _ = tiny_data
        small = train.subset(range(64))
        a = train_baseline(small, epochs=1, seed=3)
        b = train_baseline(small, epochs=1, seed=3)
        c = train_baseline(small, epochs=1, seed=4)
        assert a.fingerprint == b.fingerprint
        assert a.fingerprint != c.fingerprint

    def test_zero_epochs_sits_at_chance(self, tiny_data):
        train, test = tiny_data
        model = train_baseline(train, test, epochs=0, seed=5)
        # balanced test split, 10 classes
        assert abs(model.provenance["test_accuracy"] - 0.1) <= 0.05

    def test_training_beats_chance(self, tiny_model):
        assert tiny_model.provenance["test_accuracy"] > 0.2
        assert tiny_model.provenance["train_accuracy"] > 0.2

    def test_unlabeled_data_rejected(self, tiny_data):
        train, _ = tiny_data
        with pytest.raises(MissingLabelsError):
            train_baseline(train.without_labels(), epochs=1, seed=0)

    def test_fingerprint_matches_independent_oracle(self, tiny_model):
        assert tiny_model.fingerprint == fingerprint_oracle(tiny_model.net)


class TestPersistence:
    def test_roundtrip_preserves_fingerprint_and_predictions(self, tmp_path, tiny_model, tiny_data):
        prefix = str(tmp_path / "model")
        sidecar = save_model(tiny_model, prefix)
        loaded = load_model(prefix)
        assert loaded.fingerprint == tiny_model.fingerprint == sidecar["fingerprint"]
        _, test = tiny_data
        batch = test.images[:8]
        assert torch.equal(loaded.predict(batch).logits, tiny_model.predict(batch).logits)

    def test_tampered_weights_detected(self, tmp_path, tiny_model):
        prefix = str(tmp_path / "model")
        save_model(tiny_model, prefix)
        state = torch.load(prefix + ".pt", weights_only=True)
        key = sorted(state)[0]
        state[key] = state[key] + 0.25
        torch.save(state, prefix + ".pt")
        with pytest.raises(StateError):
            load_model(prefix)


class TestPruning:
    def test_ratio_bounds(self):
        with pytest.raises(InvalidRatioError):
            PruneConfig(ratio=1.0)
        with pytest.raises(InvalidRatioError):
            PruneConfig(ratio=-0.1)

    def test_ratio_zero_is_identity(self, tiny_model):
        pruned = prune_global_l1(tiny_model, PruneConfig(ratio=0.0))
        assert pruned.fingerprint == tiny_model.fingerprint
        assert pruned is not tiny_model

    def test_exact_global_count_and_smallest_weights(self, tiny_model):
        ratio = 0.6
        pruned = prune_global_l1(tiny_model, PruneConfig(ratio=ratio))
        tensors = [t for _, t in prunable_tensors(tiny_model.net)]
        total = sum(t.numel() for t in tensors)
        expected_zeros = round(ratio * total)

        pruned_tensors = [t for _, t in prunable_tensors(pruned.net)]
        zeros = sum(int((t == 0).sum()) for t in pruned_tensors)
        assert abs(zeros - expected_zeros) <= 1

        # survivors must all outrank the global threshold
        flat = torch.cat([t.abs().flatten() for t in tensors])
        threshold = flat.sort().values[expected_zeros - 1]
        survivors = torch.cat([t.abs().flatten() for t in pruned_tensors])
        survivors = survivors[survivors > 0]
        assert float(survivors.min()) >= float(threshold)

    def test_sparsity_monotone_in_ratio(self, tiny_model):
        fractions = [
            global_sparsity(prune_global_l1(tiny_model, PruneConfig(ratio=r)))
            for r in (0.0, 0.3, 0.6, 0.9)
        ]
        assert fractions == sorted(fractions)

    def test_finetune_preserves_mask_and_source(self, tiny_model, tiny_data):
        train, _ = tiny_data
        before = tiny_model.fingerprint
        config = PruneConfig(ratio=0.5, finetune_epochs=1, seed=11)
        pruned = prune_global_l1(tiny_model, config, finetune_data=train.subset(range(128)))
        assert tiny_model.fingerprint == before
        assert global_sparsity(pruned) >= 0.5 - 1e-6
        assert pruned.provenance["pruned_from"] == before


class TestDistillation:
    def test_agreement_recorded_and_beats_chance(self, tiny_model, tiny_data):
        train, test = tiny_data
        student = distill_surrogate(
            prediction_interface(tiny_model),
            train.without_labels(),
            epochs=6,
            seed=13,
            eval_data=test.without_labels(),
        )
        agreement = student.provenance["teacher_agreement"]
        # the teacher itself is weak, so demand clearly-above-chance copying
        assert agreement > 0.3

    def test_zero_epochs_agreement_near_chance(self, tiny_model, tiny_data):
        train, test = tiny_data
        student = distill_surrogate(
            prediction_interface(tiny_model),
            train.without_labels(),
            epochs=0,
            seed=14,
            eval_data=test.without_labels(),
        )
        assert student.provenance["teacher_agreement"] < 0.35


class TestPoisoning:
    def test_exact_count_label_rewrite_and_trigger(self, tiny_data, layout32, square_trigger):
        train, _ = tiny_data
        poisoned, chosen = poison_dataset(train, square_trigger, layout32, 2, 0.1, seed=21)
        assert len(chosen) == round(0.1 * len(train.images))
        assert torch.all(poisoned.labels[chosen] == 2)
        w, t = layout32.patch_width, square_trigger.width
        corner = poisoned.images[chosen][:, :, w : w + t, w : w + t]
        assert torch.all(corner == 1.0)
        untouched = torch.ones(len(train.images), dtype=torch.bool)
        untouched[chosen] = False
        assert torch.equal(poisoned.images[untouched], train.images[untouched])
        assert torch.equal(poisoned.labels[untouched], train.labels[untouched])

    def test_selection_is_seed_deterministic(self, tiny_data, layout32, square_trigger):
        train, _ = tiny_data
        _, a = poison_dataset(train, square_trigger, layout32, 2, 0.2, seed=5)
        _, b = poison_dataset(train, square_trigger, layout32, 2, 0.2, seed=5)
        _, c = poison_dataset(train, square_trigger, layout32, 2, 0.2, seed=6)
        assert torch.equal(a, b)
        assert not torch.equal(a, c)

    def test_ratio_zero_is_identity(self, tiny_data, layout32, square_trigger):
        train, _ = tiny_data
        poisoned, chosen = poison_dataset(train, square_trigger, layout32, 2, 0.0, seed=5)
        assert len(chosen) == 0
        assert torch.equal(poisoned.images, train.images)
        assert torch.equal(poisoned.labels, train.labels)

    def test_invalid_inputs_rejected(self, tiny_data, layout32, square_trigger):
        train, _ = tiny_data
        with pytest.raises(InvalidRatioError):
            poison_dataset(train, square_trigger, layout32, 2, 1.5, seed=0)
        with pytest.raises(MissingLabelsError):
            poison_dataset(train.without_labels(), square_trigger, layout32, 2, 0.1, seed=0)


class TestArchitecture:
    def test_forward_shapes(self):
        net = SmallConvNet(ConvNetConfig(channels=(8, 16), num_classes=5))
        x = torch.rand(2, 3, 32, 32)
        assert net(x).shape == (2, 5)
        assert net.features(x).shape == (2, 16)

    def test_config_roundtrip(self):
        config = ConvNetConfig(channels=(8, 16, 32), num_classes=7)
        assert ConvNetConfig.from_dict(config.to_dict()) == config
