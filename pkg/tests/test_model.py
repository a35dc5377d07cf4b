"""Tests for the reflection network: counts, invariances, training, files."""

import numpy as np
import pytest

from deepreflecs import container, model, nn
from deepreflecs.preprocess import NormStats, PaddedInput


def element_count_oracle(net) -> int:
    """Independent oracle: sum weight and bias element counts per layer."""
    total = 0
    for layer in (net.conv1, net.conv2, net.head):
        w_elems = 1
        for d in layer.weights.shape:
            w_elems *= d
        total += w_elems + len(layer.bias)
    return total


def random_input(rng, pad_length=64, m=None, n_features=5):
    m = m or int(rng.integers(1, pad_length + 1))
    features = np.zeros((pad_length, n_features))
    features[:m] = rng.standard_normal((m, n_features))
    mask = np.zeros(pad_length, dtype=bool)
    mask[:m] = True
    return PaddedInput(features=features, mask=mask, m_real=m)


class TestParameterCounts:
    def test_default_build_is_1284(self):
        net = model.build_model()
        assert model.count_params(net) == 1284
        assert element_count_oracle(net) == 1284

    def test_small_config_matches_oracle(self):
        cfg = model.ReflectNetConfig(n_features=5, width1=8, width2=16, n_classes=4)
        net = model.build_model(cfg)
        # 5*8+8 + 16*16+16 + 16*4+4
        assert model.count_params(net) == 388
        assert element_count_oracle(net) == 388

    def test_ablated_build_matches_oracle(self):
        # removing the context layer halves conv2's input width (16 instead
        # of 32), all other widths fixed: 96 + 544 + 132
        net = model.build_model(model.ReflectNetConfig(use_gcl=False))
        assert model.count_params(net) == element_count_oracle(net) == 772

    def test_single_linear_params(self):
        params = nn.LinearParams(np.zeros((3, 2)), np.zeros(2))
        assert params.size() == 8

    def test_same_seed_bitwise_identical(self):
        a = model.build_model(seed=11)
        b = model.build_model(seed=11)
        for name, p in a.params().items():
            assert np.array_equal(p, b.params()[name])

    def test_different_seeds_differ(self):
        a = model.build_model(seed=1)
        b = model.build_model(seed=2)
        assert not np.array_equal(a.conv1.weights, b.conv1.weights)


class TestForward:
    def test_permutation_invariance_bitwise(self):
        rng = np.random.default_rng(5)
        net = model.build_model(seed=1)
        inp = random_input(rng, m=9)
        base = model.forward(net, inp).probabilities
        for _ in range(20):
            perm = rng.permutation(inp.features.shape[0])
            permuted = PaddedInput(inp.features[perm], inp.mask[perm], inp.m_real)
            assert np.array_equal(model.forward(net, permuted).probabilities, base)

    def test_pad_length_invariance_bitwise(self):
        rng = np.random.default_rng(6)
        net = model.build_model(seed=1)
        m = 5
        rows = rng.standard_normal((m, 5))
        outs = []
        for pad in (32, 64):
            features = np.zeros((pad, 5))
            features[:m] = rows
            mask = np.zeros(pad, dtype=bool)
            mask[:m] = True
            outs.append(model.forward(net, PaddedInput(features, mask, m)).probabilities)
        assert np.array_equal(outs[0], outs[1])

    def test_masked_garbage_invariance_bitwise(self):
        rng = np.random.default_rng(7)
        net = model.build_model(seed=1)
        inp = random_input(rng, m=4)
        base = model.forward(net, inp).probabilities
        garbage = inp.features.copy()
        garbage[4:] = rng.standard_normal(garbage[4:].shape) * 1e6
        assert np.array_equal(
            model.forward(net, PaddedInput(garbage, inp.mask, 4)).probabilities, base
        )

    def test_zero_model_is_uniform(self):
        net = model.build_model(seed=0)
        for p in net.params().values():
            p[...] = 0.0
        out = model.forward(net, random_input(np.random.default_rng(0)))
        np.testing.assert_allclose(out.probabilities, [0.25] * 4, atol=1e-15)

    def test_logit_shift_does_not_change_argmax(self):
        rng = np.random.default_rng(8)
        net = model.build_model(seed=2)
        inp = random_input(rng, m=6)
        base = model.forward(net, inp)
        shifted = net.copy()
        shifted.head.bias += 3.25  # constant shift on every logit
        out = model.forward(shifted, inp)
        assert out.predicted == base.predicted

    def test_empty_mask_raises(self):
        net = model.build_model()
        features = np.zeros((8, 5))
        with pytest.raises(nn.EmptyPoolError):
            model.forward(
                net, PaddedInput(features, np.zeros(8, dtype=bool), 0)
            )

    def test_ablated_model_still_invariant(self):
        rng = np.random.default_rng(9)
        net = model.build_model(model.ReflectNetConfig(use_gcl=False), seed=3)
        inp = random_input(rng, m=7)
        base = model.forward(net, inp).probabilities
        perm = rng.permutation(inp.features.shape[0])
        permuted = PaddedInput(inp.features[perm], inp.mask[perm], inp.m_real)
        assert np.array_equal(model.forward(net, permuted).probabilities, base)


class TestTrainStep:
    def test_repeated_sample_batch_matches_single(self):
        # the mean over k identical terms equals the single term, so the
        # update direction is the same (up to float32 summation rounding)
        rng = np.random.default_rng(10)
        inp = random_input(rng, m=3)
        a = model.build_model(seed=4)
        b = model.build_model(seed=4)
        loss_a, _ = model.train_step(a, [inp], [1], 0.01, optimizer="sgd")
        loss_b, _ = model.train_step(b, [inp] * 5, [1] * 5, 0.01, optimizer="sgd")
        assert loss_a == pytest.approx(loss_b)
        for name, p in a.params().items():
            np.testing.assert_allclose(p, b.params()[name], rtol=1e-5, atol=1e-7)

    def test_zero_lr_keeps_parameters(self):
        rng = np.random.default_rng(11)
        net = model.build_model(seed=5)
        before = {k: v.copy() for k, v in net.params().items()}
        loss, _ = model.train_step(net, [random_input(rng)], [0], 0.0)
        assert loss > 0
        for name, p in net.params().items():
            assert np.array_equal(p, before[name])

    def test_two_point_toy_set_converges(self):
        rng = np.random.default_rng(12)
        cfg = model.ReflectNetConfig(pad_length=4)
        net = model.build_model(cfg, seed=6)
        a = random_input(rng, pad_length=4, m=2)
        b = PaddedInput(a.features + 3.0, a.mask.copy(), a.m_real)
        state = None
        for _ in range(200):
            loss, state = model.train_step(net, [a, b], [0, 1], 0.05, state)
        assert loss < 0.01

    def test_gradcheck_full_model_small_list(self):
        cfg = model.ReflectNetConfig(pad_length=3)
        net = model.build_model(cfg, seed=7)
        rng = np.random.default_rng(13)
        inp, label = model.random_safe_sample(net, rng)
        report = model.gradcheck(net, inp, label)
        assert report.max_relative_error < 1e-4
        assert len(report.per_parameter_errors) == model.count_params(net)


class TestSerialization:
    def test_round_trip_bitwise(self):
        net = model.build_model(seed=20)
        net.norm_stats = NormStats(np.arange(5, dtype=float), np.arange(1, 6, dtype=float))
        state = None
        rng = np.random.default_rng(1)
        for _ in range(3):
            _, state = model.train_step(net, [random_input(rng)], [2], 0.01, state)
        restored = model.deserialize(model.serialize(net))
        assert restored.config == net.config
        for name, p in net.params().items():
            assert np.array_equal(p, restored.params()[name])
        assert np.array_equal(restored.norm_stats.mean, net.norm_stats.mean)
        assert np.array_equal(restored.norm_stats.std, net.norm_stats.std)

    def test_restored_model_predicts_identically(self):
        net = model.build_model(seed=21)
        restored = model.deserialize(model.serialize(net))
        inp = random_input(np.random.default_rng(2))
        assert np.array_equal(
            model.forward(net, inp).probabilities,
            model.forward(restored, inp).probabilities,
        )

    def test_corrupted_length_field(self):
        blob = bytearray(model.serialize(model.build_model()))
        import struct

        blob[8:12] = struct.pack("<I", 0xFFFFFF)
        with pytest.raises(container.TruncationError):
            model.deserialize(bytes(blob))

    def test_future_version(self):
        blob = bytearray(model.serialize(model.build_model()))
        import struct

        blob[4:8] = struct.pack("<I", 9)
        with pytest.raises(container.VersionError) as err:
            model.deserialize(bytes(blob))
        assert "9" in str(err.value) and "1" in str(err.value)

    def test_save_load_files(self, tmp_path):
        net = model.build_model(seed=22)
        path = tmp_path / "net.rfln"
        model.save_model(net, str(path))
        restored = model.load_model(str(path))
        assert np.array_equal(restored.conv1.weights, net.conv1.weights)
