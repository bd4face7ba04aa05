import numpy as np
import pytest

from msrnv import autograd as ag
from msrnv.autograd import Tensor, grad_check
from msrnv.nn import (
    Conv1d,
    GatedBlock,
    RAdam,
    WaveNet,
    receptive_field,
    rectification_term,
    rho_t,
)


class TestConvLayer:
    @pytest.mark.parametrize("dilation", [1, 4, 512])
    def test_identity_kernel(self, rng, dilation):
        conv = Conv1d(3, 3, kernel=3, dilation=dilation, rng=rng, dtype=np.float64)
        w = np.zeros((3, 3, 3))
        for c in range(3):
            w[c, c, 1] = 1.0  # center tap only
        conv.weight.data = w
        conv.bias.data = np.zeros(3)
        x = Tensor(np.random.default_rng(0).standard_normal((2, 3, 1200)))
        assert np.allclose(conv(x).data, x.data)

    def test_hand_convolution(self):
        conv = Conv1d(1, 1, kernel=3, dilation=1, zero_init=True, dtype=np.float64)
        conv.weight.data = np.ones((1, 1, 3))
        out = conv(Tensor(np.array([[[1.0, 2.0, 3.0]]])))
        assert np.allclose(out.data, [[[3.0, 6.0, 5.0]]])

    def test_same_length_for_all_dilations(self, rng):
        for d in (1, 2, 16, 512):
            conv = Conv1d(2, 2, kernel=3, dilation=d, rng=rng)
            x = Tensor(rng.standard_normal((1, 2, 777)).astype(np.float32))
            assert conv(x).shape == (1, 2, 777)

    def test_receptive_field_arithmetic(self):
        assert receptive_field(3, [512]) == 2 * 512 + 1  # 1025
        dilations = [2**i for i in range(10)]
        assert receptive_field(3, dilations) == 1 + 2 * 1023


class TestGatedBlock:
    def test_zero_weights_pass_through(self, rng):
        block = GatedBlock(4, 3, 3, 2, rng, dtype=np.float64)
        for _, p in block.named_parameters():
            p.data = np.zeros_like(p.data)
        x = Tensor(rng.standard_normal((2, 4, 20)))
        cond = Tensor(rng.standard_normal((2, 3, 20)))
        res, skip = block(x, cond)
        assert np.array_equal(res.data, x.data)
        assert np.all(skip.data == 0.0)

    def test_gate_output_bounded(self, rng):
        # with the residual projection set to identity, res - x is the gate
        # value, which tanh*sigmoid keeps inside (-1, 1)
        block = GatedBlock(4, 3, 3, 1, rng, dtype=np.float64)
        block.conv.weight.data = rng.standard_normal(block.conv.weight.shape) * 5
        block.res_proj.weight.data = np.eye(4)[:, :, None]
        block.res_proj.bias.data = np.zeros(4)
        x = Tensor(rng.standard_normal((1, 4, 50)))
        cond = Tensor(rng.standard_normal((1, 3, 50)))
        res, _ = block(x, cond)
        gate_value = res.data - x.data
        assert np.max(np.abs(gate_value)) < 1.0

    def test_length_mismatch_raises(self, rng):
        block = GatedBlock(4, 3, 3, 1, rng)
        with pytest.raises(ValueError):
            block(
                Tensor(rng.standard_normal((1, 4, 10)).astype(np.float32)),
                Tensor(rng.standard_normal((1, 3, 9)).astype(np.float32)),
            )

    def test_gradcheck(self, rng):
        block = GatedBlock(3, 2, 3, 2, rng, dtype=np.float64)
        x = Tensor.param(rng.standard_normal((1, 3, 9)))
        cond = Tensor.param(rng.standard_normal((1, 2, 9)))
        target = rng.standard_normal((1, 3, 9))

        def f(*tensors):
            res, skip = block(x, cond)
            return ag.mean_all(ag.square(res - Tensor(target))) + ag.mean_all(
                ag.square(skip)
            )

        assert grad_check(f, block.parameters() + [x, cond]) < 1e-4


class TestWaveNet:
    def test_zero_init_output_is_zero(self, rng):
        net = WaveNet(1, 5, 8, 4, 4, rng=rng)
        x = Tensor(rng.standard_normal((2, 1, 30)).astype(np.float32))
        cond = Tensor(rng.standard_normal((2, 5, 30)).astype(np.float32))
        assert np.all(net(x, cond).data == 0.0)

    def test_dilation_schedule_cycles(self, rng):
        net = WaveNet(1, 2, 4, layers=30, cycle=10, rng=rng)
        assert net.dilations == [2 ** (l % 10) for l in range(30)]
        assert net.dilations[9] == 512
        assert net.dilations[10] == 1

    def test_full_stage_gradcheck(self, rng):
        net = WaveNet(1, 3, 4, 3, 3, rng=rng, dtype=np.float64)
        net.head_out.weight.data = rng.standard_normal(net.head_out.weight.shape) * 0.3
        x = Tensor.param(rng.standard_normal((1, 1, 12)))
        cond = Tensor(rng.standard_normal((1, 3, 12)))
        weights = rng.standard_normal((1, 1, 12))

        def f(*tensors):
            return ag.mean_all(ag.square(net(x, cond) * Tensor(weights)))

        assert grad_check(f, net.parameters() + [x]) < 1e-3

    def test_state_round_trip(self, rng):
        net = WaveNet(1, 3, 4, 2, 2, rng=rng)
        arrays = {k: v.copy() for k, v in net.state_arrays().items()}
        net2 = WaveNet(1, 3, 4, 2, 2, rng=np.random.default_rng(99))
        net2.load_arrays(arrays)
        for (n1, p1), (n2, p2) in zip(net.named_parameters(), net2.named_parameters()):
            assert n1 == n2
            assert np.array_equal(p1.data, p2.data)


class TestRAdam:
    def test_zero_gradient_leaves_parameters(self):
        p = Tensor.param(np.array([1.0, -2.0]))
        opt = RAdam({"p": p}, lr=1e-2)
        p.grad = np.zeros(2)
        assert opt.step()
        assert np.array_equal(p.data, [1.0, -2.0])
        assert opt.step_count == 1

    def test_quadratic_convergence(self):
        # adaptive normalization moves ~lr per step, so 500 steps at 1e-3
        # comfortably cover a 0.05 offset and settle within 1e-3
        target = 0.3
        p = Tensor.param(np.array([0.35]))
        opt = RAdam({"p": p}, lr=1e-3)
        for _ in range(500):
            p.grad = 2.0 * (p.data - target)
            opt.step()
        assert abs(float(p.data[0]) - target) < 1e-3

    def test_rectification_threshold_matches_rho(self):
        beta2 = 0.999
        for t in range(1, 200):
            active = rectification_term(t, beta2) is not None
            assert active == (rho_t(t, beta2) > 4.0)
        # with beta2=0.999 the adaptive branch first activates at step 5
        assert rectification_term(4, beta2) is None
        assert rectification_term(5, beta2) is not None

    def test_warmup_is_momentum_update(self):
        p = Tensor.param(np.array([1.0]))
        opt = RAdam({"p": p}, lr=0.1, betas=(0.9, 0.999))
        p.grad = np.array([2.0])
        opt.step()
        # step 1: m = 0.1*g, bias1 = 0.1 -> m_hat = g; update = -lr*g
        assert float(p.data[0]) == pytest.approx(1.0 - 0.1 * 2.0)

    def test_non_finite_gradient_skips_step(self):
        p = Tensor.param(np.array([1.0]))
        opt = RAdam({"p": p}, lr=0.1)
        p.grad = np.array([np.nan])
        with pytest.warns(UserWarning):
            stepped = opt.step()
        assert not stepped
        assert opt.step_count == 0
        assert np.array_equal(p.data, [1.0])

    def test_missing_grad_treated_as_zero(self):
        p = Tensor.param(np.array([1.0]))
        q = Tensor.param(np.array([2.0]))
        opt = RAdam({"p": p, "q": q}, lr=0.1)
        p.grad = np.array([1.0])
        q.grad = None
        assert opt.step()
        assert float(q.data[0]) == 2.0
        assert float(p.data[0]) != 1.0
