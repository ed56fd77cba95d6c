"""Quanvolution sweep and hybrid residual block contracts."""
import numpy as np
import pytest

from quanvdiff import autodiff as ad
from quanvdiff import qsim
from quanvdiff.denoiser import res_block
from quanvdiff.quanv import (
    BottleneckConfig,
    QuanvConfig,
    q_resnet_block,
    quan_resnet_block,
    quantum_channel_count,
    quanvolve,
    scale_to_angles,
)

RNG = np.random.default_rng(31)


def _angles(cfg, scale=0.3, rng=RNG):
    return rng.uniform(-scale, scale, cfg.ansatz.parameter_count)


def _fd_grad(build, arr, h=1e-5):
    fd = np.zeros_like(arr)
    flat = arr.reshape(-1)
    fdf = fd.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        lp = build().data
        flat[i] = orig - h
        lm = build().data
        flat[i] = orig
        fdf[i] = (lp - lm) / (2 * h)
    return fd


class TestQuanvolve:
    def test_identity_circuit_on_zero_input_reads_one(self):
        cfg = QuanvConfig(family="OnlyRotations")
        out = quanvolve(ad.Tensor(np.zeros((1, 2, 2, 3))), cfg,
                        ad.Tensor(np.zeros(cfg.ansatz.parameter_count)))
        assert np.allclose(out.data, 1.0)

    def test_patch_count_and_shape(self):
        cfg = QuanvConfig(family="OnlyRotations")
        qsim.reset_circuit_eval_count()
        x = RNG.standard_normal((1, 4, 4, 3))
        out = quanvolve(ad.Tensor(x), cfg, ad.Tensor(_angles(cfg)))
        assert out.data.shape == (1, 4, 4, 3)
        assert qsim.circuit_eval_count() == 4  # (4/2)^2 patches, one group

    def test_channel_groups_are_independent(self):
        cfg = QuanvConfig(family="HQConv")
        angles = ad.Tensor(_angles(cfg))
        x = RNG.standard_normal((1, 4, 4, 6))
        full = quanvolve(ad.Tensor(x), cfg, angles).data
        for g in range(2):
            part = quanvolve(ad.Tensor(x[..., 3 * g:3 * g + 3]), cfg, angles).data
            assert np.abs(full[..., 3 * g:3 * g + 3] - part).max() < 1e-12

    def test_group_permutation_equivariance(self):
        cfg = QuanvConfig(family="FQConv")
        angles = ad.Tensor(_angles(cfg))
        x = RNG.standard_normal((1, 4, 4, 6))
        swapped = np.concatenate([x[..., 3:], x[..., :3]], axis=-1)
        a = quanvolve(ad.Tensor(x), cfg, angles).data
        b = quanvolve(ad.Tensor(swapped), cfg, angles).data
        assert np.abs(np.concatenate([a[..., 3:], a[..., :3]], axis=-1) - b).max() < 1e-12

    def test_locality_of_patches(self):
        cfg = QuanvConfig(family="HQConv")
        angles = ad.Tensor(_angles(cfg))
        x = RNG.standard_normal((1, 4, 4, 3))
        base = quanvolve(ad.Tensor(x), cfg, angles).data
        bumped = x.copy()
        bumped[0, 0, 0, 1] += 0.5  # inside patch (0, 0)
        out = quanvolve(ad.Tensor(bumped), cfg, angles).data
        delta = np.abs(out - base)
        assert delta[0, :2, :2, :].max() > 1e-6
        assert delta[0, 2:, :, :].max() == 0.0
        assert delta[0, :, 2:, :].max() == 0.0

    def test_outputs_are_bounded_expectations(self):
        cfg = QuanvConfig(family="FQConv", n_layers=2)
        x = RNG.standard_normal((2, 4, 4, 3)) * 3
        out = quanvolve(ad.Tensor(x), cfg, ad.Tensor(_angles(cfg, 2.0))).data
        assert out.min() >= -1.0 - 1e-12 and out.max() <= 1.0 + 1e-12

    def test_gradients_match_finite_differences(self):
        cfg = QuanvConfig(family="HQConv")
        ang0 = _angles(cfg)
        x0 = RNG.standard_normal((1, 2, 2, 3))
        tgt = RNG.standard_normal((1, 2, 2, 3))

        def run(track=False):
            xt = ad.Tensor(x0, requires_grad=track)
            at = ad.Tensor(ang0, requires_grad=track)
            loss = ad.tsum(ad.square(ad.sub(quanvolve(xt, cfg, at),
                                            ad.Tensor(tgt))))
            return loss, xt, at

        loss, xt, at = run(track=True)
        loss.backward()
        assert np.abs(xt.grad - _fd_grad(lambda: run()[0], x0)).max() < 1e-5
        assert np.abs(at.grad - _fd_grad(lambda: run()[0], ang0)).max() < 1e-5

    def test_shape_validation(self):
        cfg = QuanvConfig()
        with pytest.raises(ValueError):
            quanvolve(ad.Tensor(np.zeros((1, 3, 3, 3))), cfg,
                      ad.Tensor(np.zeros(cfg.ansatz.parameter_count)))
        with pytest.raises(ValueError):
            quanvolve(ad.Tensor(np.zeros((1, 4, 4, 4))), cfg,
                      ad.Tensor(np.zeros(cfg.ansatz.parameter_count)))
        with pytest.raises(ValueError):
            quanvolve(ad.Tensor(np.zeros((1, 4, 4, 3))), cfg, ad.Tensor(np.zeros(3)))
        with pytest.raises(ValueError):
            QuanvConfig(stride=1, patch_size=2)  # overlap unsupported

    def test_angle_scaling_is_bounded_and_injective(self):
        u = np.linspace(-50, 50, 1001)
        ang = scale_to_angles(u)
        assert ang.min() > -np.pi and ang.max() < np.pi
        assert (np.diff(ang) > 0).all()


def _block_params(ch, cond_dim, rng, quantum=True, bneck=None):
    p = {
        "gn1_gamma": np.ones(ch), "gn1_beta": np.zeros(ch),
        "gn2_gamma": np.ones(ch), "gn2_beta": np.zeros(ch),
        "cond_w": rng.standard_normal((cond_dim, ch)) * 0.1,
        "cond_b": np.zeros(ch),
        "conv2_w": rng.standard_normal((3, 3, ch, ch)) * 0.1,
        "conv2_b": np.zeros(ch),
    }
    if bneck is not None:
        q = quantum_channel_count(bneck.rho, ch)
        pc = bneck.ansatz.parameter_count
        if q > 0:
            p["vqc1_angles"] = rng.uniform(-0.3, 0.3, pc)
            p["vqc2_angles"] = rng.uniform(-0.3, 0.3, pc)
        del p["conv2_w"], p["conv2_b"]
        if q < ch:
            p["conv1_w"] = rng.standard_normal((3, 3, ch - q, ch - q)) * 0.1
            p["conv1_b"] = np.zeros(ch - q)
            p["conv2_w"] = rng.standard_normal((3, 3, ch - q, ch - q)) * 0.1
            p["conv2_b"] = np.zeros(ch - q)
    elif quantum:
        p["quanv_angles"] = rng.uniform(-0.3, 0.3,
                                        QuanvConfig().ansatz.parameter_count)
    else:
        p["conv1_w"] = rng.standard_normal((3, 3, ch, ch)) * 0.1
        p["conv1_b"] = np.zeros(ch)
    return p


class TestHybridBlocks:
    def test_quan_block_shape_and_skip_wiring(self):
        rng = np.random.default_rng(5)
        params = {k: ad.Tensor(v) for k, v in
                  _block_params(3, 8, rng, quantum=True).items()}
        x = np.zeros((1, 4, 4, 3))
        cond = ad.Tensor(np.zeros((1, 8)))
        out = quan_resnet_block(ad.Tensor(x), cond, params, QuanvConfig(), 3)
        assert out.data.shape == (1, 4, 4, 3)
        # zero input, zero cond: out = conv2(silu(gn2(quanvolve(silu(gn1(0)))))) + 0
        a = ad.silu(ad.group_norm(ad.Tensor(x), params["gn1_gamma"],
                                  params["gn1_beta"], 3))
        h = quanvolve(a, QuanvConfig(), params["quanv_angles"])
        h = ad.silu(ad.group_norm(h, params["gn2_gamma"], params["gn2_beta"], 3))
        expect = ad.conv2d(h, params["conv2_w"], params["conv2_b"]).data
        assert np.abs(out.data - expect).max() < 1e-12

    def test_quantum_bypass_equals_identity_conv_block(self):
        rng = np.random.default_rng(6)
        raw = _block_params(3, 8, rng, quantum=True)
        params = {k: ad.Tensor(v) for k, v in raw.items()}
        x = rng.standard_normal((2, 4, 4, 3))
        cond = ad.Tensor(rng.standard_normal((2, 8)))
        off = quan_resnet_block(ad.Tensor(x), cond, params, QuanvConfig(), 3,
                                quantum_enabled=False)
        # classical block whose first convolution is the identity kernel
        ident = np.zeros((3, 3, 3, 3))
        ident[1, 1] = np.eye(3)
        classical = dict(raw)
        classical.pop("quanv_angles")
        classical["conv1_w"] = ident
        classical["conv1_b"] = np.zeros(3)
        ref = res_block(ad.Tensor(x), cond,
                        {k: ad.Tensor(v) for k, v in classical.items()}, 3)
        assert np.abs(off.data - ref.data).max() < 1e-12

    def test_block_gradients_match_finite_differences(self):
        rng = np.random.default_rng(7)
        raw = _block_params(3, 4, rng, quantum=True)
        x0 = rng.standard_normal((1, 2, 2, 3)) * 0.5
        cond0 = rng.standard_normal((1, 4))
        tgt = rng.standard_normal((1, 2, 2, 3))

        def run(track=False):
            params = {k: ad.Tensor(v, requires_grad=track) for k, v in raw.items()}
            out = quan_resnet_block(ad.Tensor(x0), ad.Tensor(cond0), params,
                                    QuanvConfig(), 3)
            return ad.tsum(ad.square(ad.sub(out, ad.Tensor(tgt)))), params

        loss, params = run(track=True)
        loss.backward()
        fd = _fd_grad(lambda: run()[0], raw["quanv_angles"])
        assert np.abs(params["quanv_angles"].grad - fd).max() < 1e-5
        fd = _fd_grad(lambda: run()[0], raw["conv2_w"])
        assert np.abs(params["conv2_w"].grad - fd).max() < 1e-5

    def test_bottleneck_rho_zero_is_classical_block(self):
        rng = np.random.default_rng(8)
        bneck = BottleneckConfig(rho=0.0)
        raw = _block_params(6, 4, rng, bneck=bneck)
        x = rng.standard_normal((2, 2, 2, 6))
        cond = ad.Tensor(rng.standard_normal((2, 4)))
        out = q_resnet_block(ad.Tensor(x), cond,
                             {k: ad.Tensor(v) for k, v in raw.items()}, bneck, 3)
        ref = res_block(ad.Tensor(x), cond,
                        {k: ad.Tensor(v) for k, v in raw.items()}, 3)
        assert np.abs(out.data - ref.data).max() < 1e-12

    def test_bottleneck_rho_one_single_group_is_two_circuits(self):
        rng = np.random.default_rng(9)
        bneck = BottleneckConfig(rho=1.0)
        raw = _block_params(3, 4, rng, bneck=bneck)
        assert "conv1_w" not in raw  # fully quantum block
        qsim.reset_circuit_eval_count()
        x = rng.standard_normal((1, 2, 2, 3))
        cond = ad.Tensor(rng.standard_normal((1, 4)))
        q_resnet_block(ad.Tensor(x), cond,
                       {k: ad.Tensor(v) for k, v in raw.items()}, bneck, 3)
        assert qsim.circuit_eval_count() == 2

    def test_rho_rounding_rule(self):
        assert quantum_channel_count(0.5, 12) == 6
        assert quantum_channel_count(0.2, 60) == 12
        assert quantum_channel_count(0.2, 12) == 0
        assert quantum_channel_count(1.0, 12) == 12
        assert quantum_channel_count(0.0, 12) == 0

    def test_bottleneck_requires_2x2(self):
        rng = np.random.default_rng(10)
        bneck = BottleneckConfig(rho=0.5)
        raw = _block_params(6, 4, rng, bneck=bneck)
        with pytest.raises(ValueError, match="2x2"):
            q_resnet_block(ad.Tensor(rng.standard_normal((1, 4, 4, 6))),
                           ad.Tensor(rng.standard_normal((1, 4))),
                           {k: ad.Tensor(v) for k, v in raw.items()}, bneck, 3)

    def test_bottleneck_gradients_flow_to_both_paths(self):
        rng = np.random.default_rng(12)
        bneck = BottleneckConfig(rho=0.5)
        raw = _block_params(6, 4, rng, bneck=bneck)
        params = {k: ad.Tensor(v, requires_grad=True) for k, v in raw.items()}
        x = rng.standard_normal((1, 2, 2, 6))
        cond = ad.Tensor(rng.standard_normal((1, 4)))
        out = q_resnet_block(ad.Tensor(x), cond, params, bneck, 3)
        ad.tsum(ad.square(out)).backward()
        assert np.abs(params["vqc1_angles"].grad).max() > 0
        assert np.abs(params["vqc2_angles"].grad).max() > 0
        assert np.abs(params["conv1_w"].grad).max() > 0
