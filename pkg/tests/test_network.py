import numpy as np
import pytest

from distilmon.distillation import DistillConfig, softmax_t, student_loss, student_loss_grad
from distilmon.network import (
    ArchitectureSpec,
    ModelFormatError,
    StaleCacheError,
    backward,
    conv1d_forward,
    conv_output_length,
    deserialize,
    forward,
    init_params,
    params_from_vector,
    params_to_vector,
    serialize,
)
from distilmon.numerics import derive_stream, finite_diff_gradient, relative_errors

SMALL = ArchitectureSpec(
    input_channels=1,
    input_length=30,
    conv_layers=((1, 3, 3, 2, 1), (3, 4, 3, 2, 1)),
    dense_layers=((32, 10), (10, 6), (6, 2)),
)


class TestArchitectureSpec:
    def test_default_shape_chain(self):
        spec = ArchitectureSpec()
        assert spec.conv_lengths() == [30, 15, 8]
        assert spec.flatten_size == 256
        assert spec.num_classes == 2

    def test_default_parameter_count(self):
        # arithmetic over the Table-2 shapes:
        # 16*1*3+16 + 32*16*3+32 + 120*256+120 + 84*120+84 + 2*84+2
        expected = (16 * 1 * 3 + 16) + (32 * 16 * 3 + 32) + (120 * 256 + 120) + (84 * 120 + 84) + (2 * 84 + 2)
        assert expected == 42806
        assert ArchitectureSpec().parameter_count() == expected

    def test_flatten_mismatch_rejected(self):
        with pytest.raises(ValueError, match="flatten"):
            ArchitectureSpec(dense_layers=((255, 120), (120, 84), (84, 2)))

    def test_channel_chain_mismatch_rejected(self):
        with pytest.raises(ValueError, match="channels"):
            ArchitectureSpec(conv_layers=((1, 16, 3, 2, 1), (8, 32, 3, 2, 1)))

    def test_kernel_longer_than_padded_input_rejected(self):
        with pytest.raises(ValueError):
            ArchitectureSpec(
                input_length=1,
                conv_layers=((1, 4, 5, 1, 1),),
                dense_layers=((4, 2),),
            )

    def test_unknown_activation_rejected(self):
        with pytest.raises(ValueError):
            ArchitectureSpec(hidden_activation="tanh")


class TestConv1dForward:
    def test_length_chain_to_256(self):
        assert conv_output_length(30, 3, 2, 1) == 15
        assert conv_output_length(15, 3, 2, 1) == 8
        assert 32 * 8 == 256

    def test_hand_convolution(self):
        out = conv1d_forward(
            np.array([[1.0, 2.0, 3.0]]),
            np.array([[[1.0, 0.0, -1.0]]]),
            np.zeros(1),
            stride=1,
            padding=0,
        )
        assert out.shape == (1, 1)
        assert out[0, 0] == pytest.approx(-2.0)

    def test_zero_kernel_and_bias(self):
        out = conv1d_forward(
            np.arange(12.0).reshape(2, 6), np.zeros((4, 2, 3)), np.zeros(4), 2, 1
        )
        assert out.shape == (4, 3)
        assert np.all(out == 0.0)

    def test_padding_uses_zeros(self):
        out = conv1d_forward(
            np.array([[1.0, 1.0]]), np.array([[[1.0, 1.0, 1.0]]]), np.zeros(1), 1, 1
        )
        # windows: [0,1,1], [1,1,0]
        assert np.allclose(out, [[2.0, 2.0]])

    def test_bias_added_per_output_channel(self):
        out = conv1d_forward(
            np.zeros((1, 5)), np.zeros((2, 1, 3)), np.array([1.5, -2.0]), 1, 0
        )
        assert np.allclose(out[0], 1.5)
        assert np.allclose(out[1], -2.0)

    def test_channel_mismatch_names_dimension(self):
        with pytest.raises(ValueError, match="channels"):
            conv1d_forward(np.zeros((2, 5)), np.zeros((1, 1, 3)), np.zeros(1), 1, 0)

    def test_short_input_rejected(self):
        with pytest.raises(ValueError):
            conv1d_forward(np.zeros((1, 2)), np.zeros((1, 1, 3)), np.zeros(1), 1, 0)


class TestForward:
    def test_logits_shape_default_arch(self):
        params = init_params(ArchitectureSpec(), derive_stream(0, 0))
        batch = derive_stream(1, 0).normals(3 * 30).reshape(3, 1, 30)
        logits, _ = forward(params, batch)
        assert logits.shape == (3, 2)

    def test_all_zero_params_give_zero_logits(self):
        spec = SMALL
        params = params_from_vector(spec, np.zeros(spec.parameter_count()))
        logits, _ = forward(params, np.ones((2, 1, 30)))
        assert np.all(logits == 0.0)

    def test_purity(self):
        params = init_params(SMALL, derive_stream(2, 0))
        batch = derive_stream(3, 0).normals(4 * 30).reshape(4, 1, 30)
        a, _ = forward(params, batch)
        b, _ = forward(params, batch)
        assert np.array_equal(a, b)

    def test_dimension_mismatch_rejected(self):
        params = init_params(SMALL, derive_stream(2, 0))
        with pytest.raises(ValueError):
            forward(params, np.zeros((2, 1, 29)))
        with pytest.raises(ValueError):
            forward(params, np.zeros((2, 2, 30)))


class TestBackward:
    def _instance(self, seed):
        params = init_params(SMALL, derive_stream(seed, 0))
        # nudge biases off zero: with zero biases, padded all-zero windows put
        # pre-activations exactly on the rectifier kink, which finite
        # differences straddle
        offsets = derive_stream(seed, 4)
        for bias in params.conv_biases + params.dense_biases:
            bias += (2.0 * offsets.uniforms(bias.size) - 1.0) * 0.2
        batch = derive_stream(seed, 1).normals(4 * 30).reshape(4, 1, 30)
        labels = (derive_stream(seed, 2).uniforms(4) * 2).astype(np.int64) + 1
        teacher = softmax_t(
            derive_stream(seed, 3).normals(4 * 2).reshape(4, 2), 15.0
        )
        pre = forward(params, batch)[1]
        kink = min(float(np.abs(z).min()) for z in pre.conv_pre + pre.dense_pre[:-1])
        assert kink > 1e-3, f"seed {seed} instance too close to a rectifier kink"
        return params, batch, labels, teacher

    def test_zero_upstream_gives_zero_grads(self):
        params, batch, _, _ = self._instance(0)
        logits, cache = forward(params, batch)
        grads = backward(params, cache, np.zeros_like(logits))
        assert all(np.all(a == 0.0) for a in grads.arrays())

    def test_upstream_linearity_on_final_dense(self):
        params, batch, _, _ = self._instance(1)
        logits, cache = forward(params, batch)
        g = derive_stream(9, 0).normals(logits.size).reshape(logits.shape)
        single = backward(params, cache, g)
        double = backward(params, cache, 2.0 * g)
        assert np.array_equal(double.dense_weights[-1], 2.0 * single.dense_weights[-1])
        assert np.array_equal(double.dense_biases[-1], 2.0 * single.dense_biases[-1])

    @pytest.mark.parametrize("seed", [0, 1, 3, 4, 5])
    @pytest.mark.parametrize("cfg", [DistillConfig(15.0, 0.7), DistillConfig(1.0, 0.0)])
    def test_matches_finite_differences(self, seed, cfg):
        params, batch, labels, teacher = self._instance(seed)
        logits, cache = forward(params, batch)
        analytic = params_to_vector(
            backward(params, cache, student_loss_grad(logits, labels, teacher, cfg))
        )

        def loss_at(vec):
            p = params_from_vector(SMALL, vec)
            lg, _ = forward(p, batch)
            return student_loss(lg, labels, teacher, cfg)

        numeric = finite_diff_gradient(loss_at, params_to_vector(params), 1e-5)
        errs = relative_errors(analytic, numeric, floor=1e-7)
        assert errs.max() < 1e-4

    def test_stale_cache_rejected(self):
        params, batch, _, _ = self._instance(5)
        other = init_params(SMALL, derive_stream(99, 0))
        logits, cache = forward(params, batch)
        with pytest.raises(StaleCacheError):
            backward(other, cache, np.zeros_like(logits))

    def test_determinism(self):
        params, batch, labels, teacher = self._instance(7)
        cfg = DistillConfig()
        logits, cache = forward(params, batch)
        g = student_loss_grad(logits, labels, teacher, cfg)
        a = params_to_vector(backward(params, cache, g))
        logits2, cache2 = forward(params, batch)
        b = params_to_vector(backward(params, cache2, student_loss_grad(logits2, labels, teacher, cfg)))
        assert np.array_equal(a, b)


class TestInitParams:
    def test_deterministic_in_stream(self):
        a = init_params(ArchitectureSpec(), derive_stream(42, 7))
        b = init_params(ArchitectureSpec(), derive_stream(42, 7))
        assert a.equal_bits(b)

    def test_different_streams_differ(self):
        a = init_params(ArchitectureSpec(), derive_stream(42, 7))
        b = init_params(ArchitectureSpec(), derive_stream(42, 8))
        assert not a.equal_bits(b)

    def test_parameter_vector_size(self):
        params = init_params(ArchitectureSpec(), derive_stream(0, 0))
        assert params_to_vector(params).size == 42806

    def test_biases_zero_weights_bounded(self):
        params = init_params(ArchitectureSpec(), derive_stream(1, 0))
        assert all(np.all(b == 0.0) for b in params.conv_biases + params.dense_biases)
        for (c_in, _, k, _, _), kernel in zip(params.spec.conv_layers, params.conv_kernels):
            assert np.abs(kernel).max() <= np.sqrt(6.0 / (c_in * k))
        for (d_in, _), w in zip(params.spec.dense_layers, params.dense_weights):
            assert np.abs(w).max() <= np.sqrt(6.0 / d_in)


class TestSerialization:
    def test_round_trip_bit_exact(self):
        params = init_params(SMALL, derive_stream(5, 5))
        restored = deserialize(serialize(params))
        assert restored.equal_bits(params)

    def test_truncated_rejected(self):
        blob = serialize(init_params(SMALL, derive_stream(5, 5)))
        for cut in (3, 5, 20, len(blob) - 1):
            with pytest.raises(ModelFormatError):
                deserialize(blob[:cut])

    def test_bad_magic(self):
        blob = serialize(init_params(SMALL, derive_stream(5, 5)))
        with pytest.raises(ModelFormatError, match="magic"):
            deserialize(b"XXXX" + blob[4:])

    def test_bad_version(self):
        blob = bytearray(serialize(init_params(SMALL, derive_stream(5, 5))))
        blob[4:6] = (99).to_bytes(2, "little")
        with pytest.raises(ModelFormatError, match="version"):
            deserialize(bytes(blob))

    def test_payload_corruption_fails_crc(self):
        blob = bytearray(serialize(init_params(SMALL, derive_stream(5, 5))))
        blob[-20] ^= 0xFF
        with pytest.raises(ModelFormatError, match="CRC32"):
            deserialize(bytes(blob))

    def test_descriptor_corruption_fails_hash(self):
        blob = bytearray(serialize(init_params(SMALL, derive_stream(5, 5))))
        blob[8] ^= 0x01  # inside the descriptor
        with pytest.raises(ModelFormatError):
            deserialize(bytes(blob))

    def test_wrong_expected_architecture(self):
        blob = serialize(init_params(SMALL, derive_stream(5, 5)))
        with pytest.raises(ModelFormatError, match="expected spec"):
            deserialize(blob, expected_spec=ArchitectureSpec())

    def test_vector_round_trip(self):
        params = init_params(SMALL, derive_stream(8, 1))
        vec = params_to_vector(params)
        assert params_from_vector(SMALL, vec).equal_bits(params)
