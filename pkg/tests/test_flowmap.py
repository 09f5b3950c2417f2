"""Structural properties of the flow-map architectures."""

import numpy as np
import pytest

from hamflow import autodiff as ad
from hamflow.autodiff import Tensor, gradient_check, no_grad
from hamflow.errors import ParameterError
from hamflow.flowmap import (
    FixedStepFlowMap,
    TaylorFlowMap,
    flow_map_for_system,
    load_flow_map,
    rollout_compose,
    save_flow_map,
    t0_centered_eval,
)
from hamflow.systems import AlphaParticle, FermiPastaUlam, HarmonicOscillator, make_system


def randomize(params, rng, scale=0.4):
    for name, t in params.items():
        if "logw" in name:
            t.value = np.asarray(rng.uniform(-1.0, 1.0, size=t.value.shape))
        else:
            t.value = np.asarray(scale * rng.standard_normal(t.value.shape))


def dphi_dt(flow_map, system, u, t, step=1e-5, eps=None):
    """Second-order one-sided difference, valid at t = 0."""
    f0 = flow_map(system, u, t, eps=eps)
    f1 = flow_map(system, u, t + step, eps=eps)
    f2 = flow_map(system, u, t + 2 * step, eps=eps)
    return (-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * step)


def d2phi_dt2(flow_map, system, u, t, step=1e-4, eps=None):
    f0 = flow_map(system, u, t, eps=eps)
    f1 = flow_map(system, u, t + step, eps=eps)
    f2 = flow_map(system, u, t + 2 * step, eps=eps)
    f3 = flow_map(system, u, t + 3 * step, eps=eps)
    return (2.0 * f0 - 5.0 * f1 + 4.0 * f2 - f3) / step ** 2


class TestIdentityAtZero:
    def test_exact_identity_random_parameters(self):
        system = make_system("npco", {"eps": 0.05})
        rng = np.random.default_rng(0)
        fmap = TaylorFlowMap(system.dim, order=2, seed=1)
        randomize(fmap.params, rng)
        u = rng.standard_normal((1000, 4))
        out = fmap(system, u, 0.0)
        assert np.array_equal(out, u), "Phi(u, 0) must be bitwise u"

    def test_identity_with_partition_and_order_zero(self):
        system = FermiPastaUlam(omega=50.0, m=3)
        rng = np.random.default_rng(1)
        fmap = TaylorFlowMap(
            system.dim,
            order=(2, 0),
            partition=(system.slow_indices, system.fast_indices),
            hidden=(16, 16),
            seed=2,
        )
        randomize(fmap.params, rng)
        u = 0.5 * rng.standard_normal((64, 12))
        assert np.array_equal(fmap(system, u, 0.0), u)

    def test_identity_with_speed_wrapper(self):
        system = AlphaParticle(eps=0.2)
        rng = np.random.default_rng(2)
        fmap = TaylorFlowMap(4, order=2, conditioned=True, speed_preserving=True,
                             hidden=(16, 16), seed=3)
        randomize(fmap.params, rng)
        u = rng.standard_normal((32, 4))
        out = fmap(system, u, 0.0, eps=0.2)
        assert np.array_equal(out, u)


class TestDerivativeMatching:
    def test_order_one_matches_field(self):
        system = make_system("npco", {"eps": 0.05})
        rng = np.random.default_rng(3)
        fmap = TaylorFlowMap(system.dim, order=1, hidden=(24, 24), seed=4)
        randomize(fmap.params, rng)
        u = 0.6 * rng.standard_normal((50, 4))
        fd = dphi_dt(fmap, system, u, 0.0)
        f = system.vector_field(u)
        rel = np.max(np.linalg.norm(fd - f, axis=1) / np.linalg.norm(f, axis=1))
        assert rel < 1e-6, f"first-derivative mismatch {rel:.2e}"

    def test_order_two_matches_curvature(self):
        system = make_system("npco", {"eps": 0.05})
        rng = np.random.default_rng(4)
        fmap = TaylorFlowMap(system.dim, order=2, hidden=(24, 24), seed=5)
        randomize(fmap.params, rng)
        u = 0.6 * rng.standard_normal((50, 4))
        fd = d2phi_dt2(fmap, system, u, 0.0)
        c = system.curvature(u)
        rel = np.max(np.linalg.norm(fd - c, axis=1) / (np.linalg.norm(c, axis=1) + 1e-12))
        assert rel < 1e-4, f"second-derivative mismatch {rel:.2e}"

    def test_partitioned_orders_match_blockwise(self):
        system = FermiPastaUlam(omega=10.0, m=2)
        rng = np.random.default_rng(5)
        fmap = TaylorFlowMap(
            system.dim, order=(2, 1),
            partition=(system.slow_indices, system.fast_indices),
            hidden=(16, 16), seed=6,
        )
        randomize(fmap.params, rng)
        u = 0.3 * rng.standard_normal((20, 8))
        fd = dphi_dt(fmap, system, u, 0.0)
        f = system.vector_field(u)
        # both chains have order >= 1, so the full first derivative matches f
        rel = np.max(np.abs(fd - f)) / np.max(np.abs(f))
        assert rel < 1e-5


class TestSpeedWrapper:
    def test_speed_exactly_preserved(self):
        system = AlphaParticle(eps=0.3)
        rng = np.random.default_rng(6)
        fmap = TaylorFlowMap(4, order=2, conditioned=True, speed_preserving=True,
                             hidden=(16, 16), seed=7)
        randomize(fmap.params, rng)
        u = rng.standard_normal((200, 4))
        for t in (0.5, 2.0, 5.0):
            out = fmap(system, u, t, eps=rng.uniform(0.05, 0.4, size=200))
            r_in = np.hypot(u[:, 0], u[:, 1])
            r_out = np.hypot(out[:, 0], out[:, 1])
            assert np.max(np.abs(r_out - r_in) / r_in) < 1e-13


class TestEvaluationContracts:
    def test_missing_eps_rejected(self):
        fmap = TaylorFlowMap(4, order=1, conditioned=True, hidden=(8,), seed=0)
        system = AlphaParticle(eps=0.2)
        with pytest.raises(ParameterError):
            fmap(system, np.ones(4), 1.0)

    def test_unexpected_eps_rejected(self):
        fmap = TaylorFlowMap(2, order=1, hidden=(8,), seed=0)
        with pytest.raises(ParameterError):
            fmap(HarmonicOscillator(), np.ones(2), 1.0, eps=0.1)

    def test_negative_time_rejected(self):
        fmap = TaylorFlowMap(2, order=1, hidden=(8,), seed=0)
        with pytest.raises(ParameterError):
            fmap(HarmonicOscillator(), np.ones(2), -0.1)

    def test_window_enforced(self):
        fmap = TaylorFlowMap(2, order=1, hidden=(8,), seed=0, t_max=2.0)
        fmap(HarmonicOscillator(), np.ones(2), 2.0)
        with pytest.raises(ParameterError):
            fmap(HarmonicOscillator(), np.ones(2), 2.5)

    def test_gate_rates_positive(self):
        fmap = TaylorFlowMap(2, order=2, hidden=(8,), seed=0)
        fmap.params["gates.logw1"].value = np.array(-30.0)
        with no_grad():
            w = ad.exp(fmap.params["gates.logw1"]).value
        assert w > 0.0


class TestFixedStepMap:
    def test_zero_at_init(self):
        system = HarmonicOscillator()
        fmap = FixedStepFlowMap(2, t0=1.0, hidden=(16, 16), seed=1)
        out = fmap(system, np.array([[0.3, 0.4], [1.0, -1.0]]))
        np.testing.assert_array_equal(out, np.zeros((2, 2)))

    def test_network_widths_for_fput(self):
        fmap = FixedStepFlowMap(12, t0=1.0, hidden=(32,), seed=0)
        assert fmap.config.in_width == 24  # state plus vector field
        assert fmap.config.out_width == 12

    def test_gradient_through_map(self):
        system = HarmonicOscillator()
        fmap = FixedStepFlowMap(2, t0=0.5, hidden=(12, 12), seed=2)
        rng = np.random.default_rng(8)
        randomize(fmap.params, rng)
        u = rng.standard_normal((6, 2))

        def loss_fn():
            out = fmap.eval_tensor(system, Tensor(u))
            return ad.tmean(ad.mul(out, out))

        assert gradient_check(loss_fn, fmap.params, n_probes=40, rng=3) < 1e-5


class TestTangent:
    @pytest.mark.parametrize("order", [0, 1, 2])
    def test_time_derivative_matches_fd(self, order):
        system = make_system("npco", {"eps": 0.1})
        rng = np.random.default_rng(9 + order)
        fmap = TaylorFlowMap(4, order=order, hidden=(16, 16), seed=10 + order)
        randomize(fmap.params, rng)
        u = 0.5 * rng.standard_normal((8, 4))
        t = rng.uniform(0.2, 1.5, size=(8, 1))
        with no_grad():
            _, dphi = fmap.eval_tensor_with_time_derivative(system, Tensor(u), Tensor(t))
        step = 1e-6
        fd = (fmap(system, u, t[:, 0] + step) - fmap(system, u, t[:, 0] - step)) / (2 * step)
        np.testing.assert_allclose(dphi.value, fd, atol=1e-8)

    def test_tangent_gradients_flow(self):
        system = HarmonicOscillator()
        fmap = TaylorFlowMap(2, order=1, hidden=(12, 12), seed=20)
        rng = np.random.default_rng(21)
        randomize(fmap.params, rng)
        u = rng.standard_normal((5, 2))
        t = rng.uniform(0.1, 1.0, size=(5, 1))

        def loss_fn():
            _, dphi = fmap.eval_tensor_with_time_derivative(system, Tensor(u), Tensor(t))
            return ad.tmean(ad.mul(dphi, dphi))

        assert gradient_check(loss_fn, fmap.params, n_probes=40, rng=4) < 1e-5


class TestComposition:
    def rotation(self, u, t):
        c, s = np.cos(t), np.sin(t)
        p, q = u[..., 0], u[..., 1]
        return np.stack([p * c - q * s, q * c + p * s], axis=-1)

    def test_rollout_single_step(self):
        system = make_system("npco", {"eps": 0.1})
        fmap = TaylorFlowMap(4, order=1, hidden=(8,), seed=0)
        u0 = np.array([0.1, 0.2, 0.3, 0.4])
        roll = rollout_compose(fmap, system, u0, 0.5, 1)
        np.testing.assert_array_equal(roll[1], fmap(system, u0, 0.5))

    def test_rotation_surrogate_closes_after_full_turn(self):
        u0 = np.array([0.0, 1.0])
        roll = rollout_compose(self.rotation, None, u0, np.pi / 2, 4)
        assert np.linalg.norm(roll[-1] - u0) < 1e-12

    def test_fixed_step_requires_matching_dt(self):
        fmap = FixedStepFlowMap(2, t0=1.0, hidden=(8,), seed=0)
        with pytest.raises(ParameterError):
            rollout_compose(fmap, HarmonicOscillator(), np.zeros(2), 0.5, 2)

    def test_t0_centered_at_t0_is_fixed_map(self):
        system = HarmonicOscillator()
        fixed = FixedStepFlowMap(2, t0=1.0, hidden=(12,), seed=3)
        rng = np.random.default_rng(11)
        randomize(fixed.params, rng)
        var = TaylorFlowMap(2, order=1, hidden=(12,), seed=4)  # identity at t=0
        u = rng.standard_normal((4, 2))
        out = t0_centered_eval(fixed, var, system, u, 1.0)
        np.testing.assert_array_equal(out, fixed(system, u))

    def test_t0_centered_composes_rotations(self):
        class RotFixed:
            dim, t0 = 2, 1.0

            def eval_tensor(self, system, u, eps=None):
                c, s = np.cos(1.0), np.sin(1.0)
                rot = np.array([[c, s], [-s, c]])  # acts on rows (p, q)
                return ad.matmul(u, rot)

        class RotVar:
            def eval_tensor(self, system, u, t, eps=None):
                tv = float(t.value[0, 0])
                c, s = np.cos(tv), np.sin(tv)
                rot = np.array([[c, s], [-s, c]])
                return ad.matmul(u, rot)

        u = np.array([0.2, 0.9])
        out = t0_centered_eval(RotFixed(), RotVar(), HarmonicOscillator(), u, 2.5)
        np.testing.assert_allclose(out, self.rotation(u, 2.5), atol=1e-12)

    def test_t0_centered_rejects_early_times(self):
        fixed = FixedStepFlowMap(2, t0=1.0, hidden=(8,), seed=0)
        var = TaylorFlowMap(2, order=1, hidden=(8,), seed=0)
        with pytest.raises(ParameterError):
            t0_centered_eval(fixed, var, HarmonicOscillator(), np.zeros(2), 0.5)


class TestPersistence:
    def test_taylor_roundtrip(self, tmp_path):
        system = FermiPastaUlam(omega=50.0, m=3)
        rng = np.random.default_rng(12)
        fmap = TaylorFlowMap(
            12, order=(2, 0), partition=(system.slow_indices, system.fast_indices),
            hidden=(16, 16), seed=13, t_max=0.25,
        )
        randomize(fmap.params, rng)
        prefix = tmp_path / "fput_map"
        save_flow_map(fmap, prefix, metadata={"system": "fput"})
        loaded, manifest = load_flow_map(prefix)
        assert manifest["system"] == "fput"
        u = 0.4 * rng.standard_normal((10, 12))
        np.testing.assert_array_equal(loaded(system, u, 0.1), fmap(system, u, 0.1))

    def test_fixed_roundtrip(self, tmp_path):
        fmap = FixedStepFlowMap(4, t0=5.0, hidden=(8, 8), seed=14)
        rng = np.random.default_rng(15)
        randomize(fmap.params, rng)
        save_flow_map(fmap, tmp_path / "fx")
        loaded, _ = load_flow_map(tmp_path / "fx")
        system = make_system("npco", {"eps": 0.1})
        u = rng.standard_normal((5, 4))
        np.testing.assert_array_equal(loaded(system, u), fmap(system, u))

    def test_default_structures(self):
        system, fmap = flow_map_for_system("fput", system_params={"omega": 50.0, "m": 3},
                                           hidden=(8,), seed=0)
        assert fmap.orders == (2, 0)
        system, fmap = flow_map_for_system("alpha", system_params={"eps": 0.2},
                                           hidden=(8,), seed=0)
        assert fmap.conditioned and fmap.speed_preserving
