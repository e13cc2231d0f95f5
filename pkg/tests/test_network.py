import numpy as np
import pytest

from crosscity.config import ExperimentConfig
from crosscity.errors import DataError
from crosscity.network import (ConvLSTMLayerParams, HeadLayerParams,
                               NetworkParams, apply_head, convlstm_cell,
                               encode, init_params, load_checkpoint, predict,
                               save_checkpoint)
from crosscity.tensor import Tensor

from conftest import assert_grads_close, central_difference


def small_config(**kw):
    base = dict(k=3, n_layers=2, filter_size=3, hidden=4, head_hidden=4,
                channels_out=2, ext_len=3, seed=1)
    base.update(kw)
    return ExperimentConfig(**base)


def zero_layer(cin, ch, ks=3, forget_bias=0.0):
    bias = np.zeros(4 * ch)
    bias[ch:2 * ch] = forget_bias
    return ConvLSTMLayerParams(
        Tensor(np.zeros((ks, ks, cin, 4 * ch))),
        Tensor(np.zeros((ks, ks, ch, 4 * ch))),
        Tensor(bias))


class TestCell:
    def test_zero_everything_gives_zero_state(self):
        # all-zero kernels and bias: i=f=o=0.5, g=0, so c=0, h=0
        layer = zero_layer(2, 4)
        x = Tensor(np.zeros((3, 3, 2)))
        h0 = Tensor(np.zeros((3, 3, 4)))
        c0 = Tensor(np.zeros((3, 3, 4)))
        h, c = convlstm_cell(x, h0, c0, layer)
        assert np.all(h.data == 0.0)
        assert np.all(c.data == 0.0)

    def test_saturated_forget_gate_retains_memory(self):
        # huge forget bias and zero kernels: f ~ 1, i ~ 0.5, g = 0,
        # so c_t ~ c_prev and h_t = 0.5 * tanh(c_prev)
        layer = zero_layer(1, 2, forget_bias=50.0)
        x = Tensor(np.zeros((2, 2, 1)))
        c0 = np.full((2, 2, 2), 0.7)
        h, c = convlstm_cell(x, Tensor(np.zeros((2, 2, 2))), Tensor(c0),
                             layer)
        assert np.allclose(c.data, c0, atol=1e-12)
        assert np.allclose(h.data, 0.5 * np.tanh(c0), atol=1e-12)

    def test_scalar_cell_matches_hand_trace(self):
        # 1x1 grid, 1x1 kernels, one hidden channel: the cell reduces to a
        # scalar LSTM we can step by hand with plain numpy
        wx = np.array([0.3, -0.2, 0.5, 0.8])   # per-gate input weights
        wh = np.array([0.1, 0.4, -0.3, 0.2])
        b = np.array([0.05, 1.0, -0.1, 0.0])
        layer = ConvLSTMLayerParams(
            Tensor(wx.reshape(1, 1, 1, 4)),
            Tensor(wh.reshape(1, 1, 1, 4)),
            Tensor(b))
        sig = lambda z: 1 / (1 + np.exp(-z))

        h_ref, c_ref = 0.0, 0.0
        xs = [0.9, -0.4, 0.2]
        for xv in xs:
            z = wx * xv + wh * h_ref + b
            i, f, o, g = sig(z[0]), sig(z[1]), sig(z[2]), np.tanh(z[3])
            c_ref = f * c_ref + i * g
            h_ref = o * np.tanh(c_ref)

        h = Tensor(np.zeros((1, 1, 1)))
        c = Tensor(np.zeros((1, 1, 1)))
        for xv in xs:
            h, c = convlstm_cell(Tensor(np.full((1, 1, 1), xv)), h, c, layer)
        assert h.data.item() == pytest.approx(h_ref, abs=1e-12)
        assert c.data.item() == pytest.approx(c_ref, abs=1e-12)

    def test_gradients_through_two_steps(self, rng):
        layer = ConvLSTMLayerParams(
            Tensor(rng.normal(0, 0.3, (3, 3, 2, 8)), requires_grad=True),
            Tensor(rng.normal(0, 0.3, (3, 3, 2, 8)), requires_grad=True),
            Tensor(rng.normal(0, 0.3, 8), requires_grad=True))
        x1 = Tensor(rng.normal(size=(3, 3, 2)))
        x2 = Tensor(rng.normal(size=(3, 3, 2)))

        def f():
            h = Tensor(np.zeros((3, 3, 2)))
            c = Tensor(np.zeros((3, 3, 2)))
            h, c = convlstm_cell(x1, h, c, layer)
            h, c = convlstm_cell(x2, h, c, layer)
            return (h * h).sum()

        f().backward()
        tensors = [layer.kernel, layer.hidden_kernel, layer.bias]
        numeric = central_difference(f, tensors)
        for t, num in zip(tensors, numeric):
            assert_grads_close(t.grad, num)


class TestInit:
    def test_shapes_and_forget_bias(self):
        cfg = small_config()
        p = init_params(cfg, seed=7)
        assert len(p.layers) == 2
        assert p.layers[0].kernel.shape == (3, 3, 2, 16)
        assert p.layers[1].kernel.shape == (3, 3, 4, 16)
        assert p.layers[0].hidden_kernel.shape == (3, 3, 4, 16)
        b = p.layers[0].bias.data
        assert np.all(b[4:8] == 1.0)
        assert np.all(b[:4] == 0.0) and np.all(b[8:] == 0.0)
        assert p.head[0].kernel.shape == (1, 1, 4 + 3, 4)
        assert p.head[1].kernel.shape == (1, 1, 4, 2)
        assert p.rep_channels == 4

    def test_glorot_bound_oracle(self):
        # bound recomputed independently from the fan formula
        cfg = small_config(n_layers=1)
        p = init_params(cfg, seed=3)
        k = p.layers[0].kernel.data  # [3,3,2,16]
        bound = np.sqrt(6.0 / (3 * 3 * 2 + 3 * 3 * 16))
        assert np.abs(k).max() <= bound
        assert np.abs(k).max() > 0.8 * bound  # samples actually fill the range

    def test_deterministic_per_seed(self):
        cfg = small_config()
        a = init_params(cfg, seed=5)
        b = init_params(cfg, seed=5)
        c = init_params(cfg, seed=6)
        assert np.array_equal(a.layers[0].kernel.data,
                              b.layers[0].kernel.data)
        assert not np.array_equal(a.layers[0].kernel.data,
                                  c.layers[0].kernel.data)


class TestForward:
    def test_encode_shape(self, rng):
        cfg = small_config()
        p = init_params(cfg, seed=1)
        frames = [Tensor(rng.normal(size=(5, 6, 2))) for _ in range(3)]
        rep = encode(frames, p)
        assert rep.shape == (5, 6, 4)

    def test_encode_empty_rejected(self):
        p = init_params(small_config(), seed=1)
        with pytest.raises(DataError, match="at least one"):
            encode([], p)

    def test_predict_shape_and_ext_check(self, rng):
        cfg = small_config()
        p = init_params(cfg, seed=1)
        frames = [Tensor(rng.normal(size=(4, 4, 2))) for _ in range(3)]
        out = predict(frames, np.zeros(3), p)
        assert out.shape == (4, 4, 2)
        with pytest.raises(DataError, match="length"):
            predict(frames, np.zeros(5), p)

    def test_head_is_pointwise(self, rng):
        # permuting regions before the head permutes the output identically
        cfg = small_config()
        p = init_params(cfg, seed=2)
        rep = rng.normal(size=(4, 5, 4))
        ext = rng.normal(size=3)
        out = apply_head(Tensor(rep), ext, p).data
        pr, pc = rng.permutation(4), rng.permutation(5)
        out_perm = apply_head(Tensor(rep[pr][:, pc]), ext, p).data
        assert np.array_equal(out_perm, out[pr][:, pc])

    def test_params_transplant_across_grid_sizes(self, rng):
        cfg = small_config()
        p = init_params(cfg, seed=1)
        for (w, h) in [(3, 3), (8, 5), (12, 12)]:
            frames = [Tensor(rng.normal(size=(w, h, 2))) for _ in range(3)]
            assert predict(frames, np.zeros(3), p).shape == (w, h, 2)

    def test_full_network_gradcheck(self, rng):
        cfg = small_config(n_layers=1, hidden=2, head_hidden=2, ext_len=2)
        p = init_params(cfg, seed=4)
        frames = [Tensor(rng.normal(size=(3, 3, 2))) for _ in range(2)]
        ext = rng.normal(size=2)

        def f():
            out = predict(frames, ext, p)
            return (out * out).sum()

        f().backward()
        tensors = p.all_tensors()
        numeric = central_difference(f, tensors)
        for t, num in zip(tensors, numeric):
            assert_grads_close(t.grad, num, rel=3e-4)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        p = init_params(small_config(), seed=9)
        save_checkpoint(p, tmp_path / "net.rtpk")
        q = load_checkpoint(tmp_path / "net.rtpk")
        for (na, ta), (nb, tb) in zip(p.named_tensors(), q.named_tensors()):
            assert na == nb
            assert ta.data.tobytes() == tb.data.tobytes()

    def test_round_trip_preserves_predictions(self, tmp_path, rng):
        p = init_params(small_config(), seed=9)
        save_checkpoint(p, tmp_path / "net.rtpk")
        q = load_checkpoint(tmp_path / "net.rtpk")
        frames = [Tensor(rng.normal(size=(4, 4, 2))) for _ in range(3)]
        ext = rng.normal(size=3)
        assert np.array_equal(predict(frames, ext, p).data,
                              predict(frames, ext, q).data)

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.rtpk").write_bytes(b"JUNK" + b"\x00" * 16)
        with pytest.raises(DataError, match="magic"):
            load_checkpoint(tmp_path / "x.rtpk")

    def test_truncated(self, tmp_path):
        p = init_params(small_config(), seed=9)
        save_checkpoint(p, tmp_path / "net.rtpk")
        raw = (tmp_path / "net.rtpk").read_bytes()
        (tmp_path / "net.rtpk").write_bytes(raw[: len(raw) // 2])
        with pytest.raises(DataError, match="truncated"):
            load_checkpoint(tmp_path / "net.rtpk")

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            load_checkpoint(tmp_path / "ghost.rtpk")


class TestCopy:
    def test_copy_is_deep(self):
        p = init_params(small_config(), seed=1)
        q = p.copy()
        q.layers[0].kernel.data[...] = 0.0
        assert not np.all(p.layers[0].kernel.data == 0.0)

    def test_copy_requires_grad_flag(self):
        p = init_params(small_config(), seed=1)
        frozen = p.copy(requires_grad=False)
        assert all(not t.requires_grad for t in frozen.all_tensors())
        live = p.copy(requires_grad=True)
        assert all(t.requires_grad for t in live.all_tensors())
