"""Adjoint recurrences, first-variation identity, condition scans."""

import numpy as np
import pytest

from hamflow.adjoint import (
    backward_transport,
    first_variation_check,
    midpoint_condition_scan,
    residual_sequence,
)
from hamflow.errors import ParameterError
from hamflow.flowmap import TaylorFlowMap
from hamflow.integrators import (
    ForwardEuler,
    ImplicitEuler,
    ImplicitMidpoint,
    RungeKutta4,
    VelocityVerlet,
    integrate,
    make_scheme,
)
from hamflow.systems import HarmonicOscillator, LinearSystem, NearlyPeriodicOscillators

from test_flowmap import randomize


def rotation_map(u, t):
    c, s = np.cos(t), np.sin(t)
    return np.array([u[0] * c - u[1] * s, u[1] * c + u[0] * s])


def small_random_map(dim, seed):
    fmap = TaylorFlowMap(dim, order=1, hidden=(10, 10), seed=seed)
    randomize(fmap.params, np.random.default_rng(seed + 100), scale=0.3)
    return fmap


class TestResidualSequence:
    def test_scheme_iterates_zero_everywhere(self):
        sys = HarmonicOscillator()
        h = 0.25
        scheme = VelocityVerlet()
        u0 = np.array([0.0, 1.0])
        traj = integrate(sys, scheme, u0, h, 24)

        def iterate_map(u, t):
            return traj.states[int(round(t / h))]

        grid = np.arange(12) * h
        chain = residual_sequence(iterate_map, scheme, sys, u0, grid, h=h)
        assert chain.max_residual_norm() < 1e-13

    def test_identity_map_forward_euler_constant(self):
        sys = HarmonicOscillator()
        u = np.array([0.4, -0.3])
        h = 0.2
        grid = np.arange(6) * h
        chain = residual_sequence(lambda uu, tt: uu, ForwardEuler(), sys, u, grid, h=h)
        expected = -h * sys.vector_field(u)
        for w in chain.residuals:
            np.testing.assert_allclose(w, expected, atol=1e-14)

    def test_grid_spacing_must_match_h(self):
        sys = HarmonicOscillator()
        with pytest.raises(ParameterError):
            residual_sequence(lambda uu, tt: uu, ForwardEuler(), sys,
                              np.zeros(2), np.array([0.0, 0.3]), h=0.2)


class TestFirstVariation:
    def psi_poly(self, rng, dim, t0):
        a = rng.standard_normal(dim)
        b = rng.standard_normal(dim)

        def psi(u, t):
            return (t - t0) * a + (t - t0) ** 2 * b

        return psi

    @pytest.mark.parametrize("scheme_name", ["fe", "vv", "rk4", "implicit_euler", "midpoint"])
    def test_gap_small_for_all_schemes(self, scheme_name):
        sys = NearlyPeriodicOscillators(0.1)
        fmap = small_random_map(4, seed=3)
        rng = np.random.default_rng(7)
        u = 0.5 * rng.standard_normal(4)
        h = 0.1
        grid = np.arange(5) * h
        scheme = make_scheme(scheme_name, h=h)
        psi = self.psi_poly(rng, 4, grid[0])
        lhs, rhs, gap = first_variation_check(fmap, scheme, sys, u, grid, psi, h=h)
        assert gap < 1e-6, f"{scheme_name}: first-variation gap {gap:.2e}"
        assert abs(lhs) > 0  # non-degenerate direction

    def test_zero_direction_gives_zero(self):
        sys = HarmonicOscillator()
        fmap = small_random_map(2, seed=4)
        grid = np.arange(4) * 0.2
        lhs, rhs, gap = first_variation_check(
            fmap, ForwardEuler(), sys, np.array([0.1, 0.9]), grid,
            lambda u, t: np.zeros(2), h=0.2,
        )
        assert lhs == 0.0 and rhs == 0.0

    def test_rejects_nonvanishing_direction(self):
        sys = HarmonicOscillator()
        fmap = small_random_map(2, seed=5)
        grid = np.arange(4) * 0.2
        with pytest.raises(ParameterError):
            first_variation_check(fmap, ForwardEuler(), sys, np.zeros(2), grid,
                                  lambda u, t: np.ones(2), h=0.2)


class TestBackwardTransport:
    def test_explicit_scheme_forces_zero(self):
        sys = NearlyPeriodicOscillators(0.2)
        fmap = small_random_map(4, seed=6)
        u = 0.4 * np.random.default_rng(8).standard_normal(4)
        h = 0.1
        grid = np.arange(6) * h
        for scheme in (ForwardEuler(), RungeKutta4(), VelocityVerlet()):
            chain = residual_sequence(fmap, scheme, sys, u, grid, h=h)
            result = backward_transport(chain, scheme, sys, h=h)
            assert result.forces_zero, f"{scheme.name} flagged singular transport"
            np.testing.assert_array_equal(result.transported, 0.0)

    def test_implicit_euler_singular_at_resonant_step(self):
        lam = 4.0
        sys = LinearSystem([[lam]])
        h = 1.0 / lam
        grid = np.arange(4) * h
        chain = residual_sequence(lambda u, t: u * np.exp(lam * t), ImplicitEuler(), sys,
                                  np.array([1.0]), grid, h=h)
        result = backward_transport(chain, ImplicitEuler(), sys, h=h)
        assert not result.forces_zero
        assert len(result.singular_steps) == len(grid)

    def test_implicit_euler_regular_away_from_resonance(self):
        sys = LinearSystem([[4.0]])
        h = 0.05
        grid = np.arange(4) * h
        chain = residual_sequence(lambda u, t: u * np.exp(4.0 * t), ImplicitEuler(), sys,
                                  np.array([1.0]), grid, h=h)
        result = backward_transport(chain, ImplicitEuler(), sys, h=h)
        assert result.forces_zero

    def test_midpoint_transport_on_harmonic(self):
        sys = HarmonicOscillator()
        h = 0.5
        grid = np.arange(5) * h
        chain = residual_sequence(rotation_map, ImplicitMidpoint(), sys,
                                  np.array([0.0, 1.0]), grid, h=h)
        result = backward_transport(chain, ImplicitMidpoint(), sys, h=h)
        # |1 -/+ (h/2) i| = sqrt(1 + h^2/4) > 1: transport always solvable
        assert result.forces_zero


class TestMidpointScan:
    def test_harmonic_margins_closed_form(self):
        sys = HarmonicOscillator()
        for h in (0.1, 0.5, 2.0):
            grid = np.arange(4) * h
            report = midpoint_condition_scan(rotation_map, sys, np.array([[0.0, 1.0]]),
                                             grid, h)
            expected = np.sqrt(1.0 + h * h / 4.0)
            np.testing.assert_allclose(report.margins, expected, atol=1e-10)
            assert not report.degenerate

    def test_scalar_decay_degenerate_at_h_two(self):
        sys = LinearSystem([[-1.0]])
        h = 2.0
        grid = np.arange(3) * h
        report = midpoint_condition_scan(lambda u, t: u * np.exp(-t), sys,
                                         np.array([[1.0]]), grid, h)
        assert report.min_margin < 1e-12
        assert report.degenerate

    def test_csv_export(self, tmp_path):
        sys = HarmonicOscillator()
        grid = np.arange(3) * 0.5
        report = midpoint_condition_scan(rotation_map, sys, np.array([[0.0, 1.0]]),
                                         grid, 0.5)
        path = tmp_path / "scan.csv"
        report.to_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "step,time,min_margin,degenerate"
        assert len(lines) == 4
