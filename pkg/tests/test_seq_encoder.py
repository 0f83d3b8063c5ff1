import numpy as np
import pytest

from unisrec import autodiff as ad
from unisrec.errors import InvalidParameterError
from unisrec.numeric import finite_diff_check
from unisrec.rng import RngStreams, STREAM_INIT
from unisrec.seq_encoder import (
    TransformerConfig,
    attention_mask,
    build_input,
    encode_sequences,
    encoder_param_names,
    init_encoder_params,
)


def make(cfg_kwargs=None, seed=0, scale=1.0):
    kwargs = dict(n_layers=1, n_heads=2, d_v=8, d_ff=16, n_max=6, dropout=0.0)
    kwargs.update(cfg_kwargs or {})
    cfg = TransformerConfig(**kwargs)
    params = init_encoder_params(cfg, RngStreams(seed).stream(STREAM_INIT))
    if scale != 1.0:
        for p in params.values():
            if ".W" in p.name or p.name == "pos.P":
                p.data = p.data * scale
    return cfg, params


class TestConfig:
    def test_head_divisibility(self):
        with pytest.raises(InvalidParameterError):
            TransformerConfig(d_v=7, n_heads=2).validate()

    def test_dropout_range(self):
        with pytest.raises(InvalidParameterError):
            TransformerConfig(d_v=8, n_heads=2, dropout=1.0).validate()

    def test_param_names_cover_init(self):
        cfg, params = make()
        assert sorted(encoder_param_names(cfg)) == sorted(params)


class TestBuildInput:
    def test_zeroed_position_row_is_identity(self):
        cfg, params = make()
        pos = ad.param(np.zeros((6, 8), dtype=np.float32), "pos.P")
        v = np.random.default_rng(0).standard_normal((1, 1, 8)).astype(np.float32)
        out = build_input(v, pos)
        np.testing.assert_allclose(out.data, v)

    def test_zero_id_vecs_match_inductive(self):
        cfg, params = make()
        v = np.random.default_rng(1).standard_normal((2, 3, 8)).astype(np.float32)
        a = build_input(v, params["pos.P"]).data
        b = build_input(v, params["pos.P"], np.zeros_like(v)).data
        np.testing.assert_allclose(a, b)

    def test_id_shape_mismatch(self):
        cfg, params = make()
        v = np.zeros((1, 3, 8), dtype=np.float32)
        with pytest.raises(InvalidParameterError):
            build_input(v, params["pos.P"], np.zeros((1, 2, 8), dtype=np.float32))


class TestMask:
    def test_causal_and_padding(self):
        mask = attention_mask(np.array([2, 3]), 3)
        assert mask.shape == (2, 1, 3, 3)
        m0 = mask[0, 0]
        assert m0[0, 1] < -1e8 and m0[0, 2] < -1e8  # future blocked
        assert m0[1, 0] == 0.0  # past visible
        assert m0[1, 2] < -1e8  # padding of row 0 blocked as key
        assert m0[2, 2] == 0.0  # diagonal always finite
        m1 = mask[1, 0]
        assert m1[2, 2] == 0.0 and m1[2, 0] == 0.0


class TestEncode:
    def test_output_unit_norm(self):
        cfg, params = make(scale=10.0)
        f0 = ad.as_tensor(np.random.default_rng(0).standard_normal((3, 4, 8)).astype(np.float32))
        s = encode_sequences(f0, np.array([4, 2, 1]), cfg, params).data
        np.testing.assert_allclose(np.linalg.norm(s, axis=1), 1.0, atol=1e-6)

    def test_padding_does_not_change_output(self):
        cfg, params = make(scale=10.0)
        gen = np.random.default_rng(1)
        core = gen.standard_normal((1, 3, 8)).astype(np.float32)
        padded = np.zeros((1, 5, 8), dtype=np.float32)
        padded[:, :3] = core
        a = encode_sequences(ad.as_tensor(core), np.array([3]), cfg, params).data
        b = encode_sequences(ad.as_tensor(padded), np.array([3]), cfg, params).data
        np.testing.assert_allclose(a, b, atol=1e-6)

    def test_zero_layers_is_normalized_last_input(self):
        cfg, params = make({"n_layers": 0})
        gen = np.random.default_rng(2)
        f0 = gen.standard_normal((2, 3, 8)).astype(np.float32)
        s = encode_sequences(ad.as_tensor(f0), np.array([3, 2]), cfg, params).data
        for i, last in enumerate((2, 1)):
            ref = f0[i, last] / np.linalg.norm(f0[i, last])
            np.testing.assert_allclose(s[i], ref, atol=1e-6)

    def test_causality_per_position(self):
        # Changing item k must not change hidden states at positions < k.
        cfg, params = make(scale=10.0)
        gen = np.random.default_rng(3)
        base = gen.standard_normal((1, 4, 8)).astype(np.float32)
        variant = base.copy()
        variant[0, 2] += 1.0
        outs = []
        for f0 in (base, variant):
            per_pos = [
                encode_sequences(ad.as_tensor(f0[:, : k + 1]), np.array([k + 1]),
                                 cfg, params).data
                for k in range(4)
            ]
            outs.append(per_pos)
        for k in range(2):  # positions before the edit
            np.testing.assert_allclose(outs[0][k], outs[1][k], atol=1e-7)
        assert not np.allclose(outs[0][2], outs[1][2])

    def test_position_sensitivity(self):
        cfg, params = make(scale=10.0)
        gen = np.random.default_rng(4)
        a = gen.standard_normal((1, 3, 8)).astype(np.float32)
        swapped = a[:, [1, 0, 2]]
        # Position embeddings are what break permutation symmetry.
        fa = build_input(a, params["pos.P"])
        fb = build_input(swapped, params["pos.P"])
        sa = encode_sequences(fa, np.array([3]), cfg, params).data
        sb = encode_sequences(fb, np.array([3]), cfg, params).data
        assert not np.allclose(sa, sb)

    def test_all_padding_rejected(self):
        cfg, params = make()
        f0 = ad.as_tensor(np.zeros((1, 2, 8), dtype=np.float32))
        with pytest.raises(InvalidParameterError):
            encode_sequences(f0, np.array([0]), cfg, params)

    def test_window_longer_than_n_max_rejected(self):
        cfg, params = make()
        f0 = ad.as_tensor(np.zeros((1, 7, 8), dtype=np.float32))
        with pytest.raises(InvalidParameterError):
            encode_sequences(f0, np.array([7]), cfg, params)

    def test_gradients_pass_finite_differences(self):
        cfg, params = make(seed=3, scale=10.0)
        x = np.random.default_rng(5).standard_normal((2, 3, 8)).astype(np.float32)
        target = np.random.default_rng(6).standard_normal((2, 8)).astype(np.float32)

        def loss_fn():
            s = encode_sequences(ad.as_tensor(x), np.array([3, 2]), cfg, params)
            diff = s - ad.as_tensor(target)
            return ad.tsum(ad.mul(diff, diff))

        report = finite_diff_check(loss_fn, list(params.values()), eps=1e-4)
        assert report.passed, report.summary()

    def test_dropout_active_only_in_training(self):
        cfg, params = make({"dropout": 0.5}, scale=10.0)
        x = ad.as_tensor(np.random.default_rng(7).standard_normal((1, 3, 8)).astype(np.float32))
        gen = np.random.default_rng(0)
        train_a = encode_sequences(x, np.array([3]), cfg, params, train=True,
                                   dropout_gen=np.random.default_rng(1)).data
        train_b = encode_sequences(x, np.array([3]), cfg, params, train=True,
                                   dropout_gen=np.random.default_rng(2)).data
        assert not np.allclose(train_a, train_b)
        eval_a = encode_sequences(x, np.array([3]), cfg, params, train=False,
                                  dropout_gen=gen).data
        eval_b = encode_sequences(x, np.array([3]), cfg, params, train=False,
                                  dropout_gen=gen).data
        assert eval_a.tobytes() == eval_b.tobytes()
