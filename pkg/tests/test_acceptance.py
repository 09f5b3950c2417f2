"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest -s tests/test_acceptance.py`` to see the per-criterion
lines as they complete.  The training-based criteria use fixed seeds, so
every run of this suite performs the identical computation.

Criterion 1 trains the scheme-residual model at the stated budget and
asserts the stated loss, trajectory and energy targets.  The loss target
is reachable; the trajectory/energy targets contradict it for velocity
Verlet at h = 0.5 (see notes/decisions.md): a residual loss below 1e-4
forces the map onto the h = 0.5 Verlet orbit family, whose own t = 10
trajectory error is ~9e-2 and energy oscillation ~6e-2.  The assertions
are kept at the stated tolerances.
"""

import time

import numpy as np
import pytest
import scipy.stats

from hamflow.adjoint import (
    backward_transport,
    first_variation_check,
    midpoint_condition_scan,
    residual_sequence,
)
from hamflow.autodiff import Tensor, gradient_check, no_grad
from hamflow.errors import EmptyIntersectionError
from hamflow.evalharness import poincare_section, traj_error
from hamflow.flowmap import FixedStepFlowMap, TaylorFlowMap
from hamflow.integrators import (
    ForwardEuler,
    ImplicitEuler,
    ImplicitMidpoint,
    RungeKutta4,
    VelocityVerlet,
    integrate,
    make_scheme,
)
from hamflow.losses import (
    CollocationSpec,
    NormSpec,
    data_loss,
    exact_residual_loss,
    joint_loss,
    residual_loss,
    rollout_targets,
    scheme_residual,
    train,
    weighted_square_rows,
)
from hamflow.mcsampler import (
    LinearConstraintSpec,
    McSamplerConfig,
    constrained_refresh,
    hmc_h0_chain,
    refresh_momentum,
)
from hamflow.optim import AdamConfig
from hamflow.systems import (
    AlphaParticle,
    FermiPastaUlam,
    HarmonicOscillator,
    LinearSystem,
    NearlyPeriodicOscillators,
    make_system,
)

from test_flowmap import randomize


def report(tag, ok, detail):
    line = f"ACCEPTANCE {tag}: {'PASS' if ok else 'FAIL'} ({detail})"
    print(line)
    return line


def rotation_exact(u, t):
    c, s = np.cos(t), np.sin(t)
    return np.array([u[0] * c - u[1] * s, u[1] * c + u[0] * s])


def circle_points(n, seed):
    angles = np.random.default_rng(seed).uniform(0.0, 2.0 * np.pi, n)
    return np.stack([np.sin(angles), np.cos(angles)], axis=1)  # H = 1/2


def dphi_dt0(fmap, system, u, step=1e-5, eps=None):
    f0 = fmap(system, u, 0.0, eps=eps)
    f1 = fmap(system, u, step, eps=eps)
    f2 = fmap(system, u, 2 * step, eps=eps)
    return (-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * step)


def d2phi_dt0(fmap, system, u, step=1e-4, eps=None):
    f0 = fmap(system, u, 0.0, eps=eps)
    f1 = fmap(system, u, step, eps=eps)
    f2 = fmap(system, u, 2 * step, eps=eps)
    f3 = fmap(system, u, 3 * step, eps=eps)
    return (2.0 * f0 - 5.0 * f1 + 4.0 * f2 - f3) / step ** 2


class TestCriterion01HarmonicReproduction:
    def test_harmonic_motivating_run(self):
        system = HarmonicOscillator()
        points = circle_points(10, seed=0)
        h = 0.5
        scheme = make_scheme("vv", h=h)
        fmap = TaylorFlowMap(2, order=2, hidden=(96, 96, 96), seed=1, t_max=11.0)
        assert fmap.params.n_params <= 200_000
        spec = CollocationSpec(
            time_mode="grid", t_final=10.0, n_times=41, tau=0.0,
            phase_mode="samples", samples=points, batch_size=10,
        )

        def objective(it, rng):
            return residual_loss(fmap, scheme, system, spec, rng=0)

        def schedule(it):
            return 1.0 if it < 15000 else (0.3 if it < 30000 else 0.1)

        started = time.perf_counter()
        record = train(objective, fmap.params, opt=AdamConfig(lr=2e-3),
                       iterations=50_000, lr_schedule=schedule, stop_below=8e-5, rng=0)
        wall = time.perf_counter() - started
        assert wall < 1800.0, f"training exceeded the 30 min budget ({wall:.0f}s)"
        assert record.iterations <= 50_000

        loss_ok = record.final_loss < 1e-4

        u0 = np.array([0.0, 1.0])
        traj_err = float(np.linalg.norm(fmap(system, u0, 10.0) - rotation_exact(u0, 10.0)))
        traj_ok = traj_err < 5e-2

        ts = np.linspace(0.0, 10.0, 201)
        states = fmap(system, np.tile(u0, (201, 1)), ts)
        energy_err = float(np.max(np.abs(system.hamiltonian(states) - 0.5)) / 0.5)
        energy_ok = energy_err < 1e-2

        # trained-map residual chain on a training point (reported, not
        # asserted: the critical-point module reports residual magnitudes)
        grid = h * np.arange(20)
        chain = residual_sequence(fmap, scheme, system, points[0], grid, h=h)

        lines = [
            report("1a residual loss < 1e-4", loss_ok,
                   f"loss={record.final_loss:.3e} after {record.iterations} iters, {wall:.0f}s"),
            report("1b traj error at t=10 < 5e-2", traj_ok, f"err={traj_err:.3e}"),
            report("1c energy error < 1e-2 on [0,10]", energy_ok, f"err={energy_err:.3e}"),
            report("1 trained-map max residual (reported)", True,
                   f"max|w_n|={chain.max_residual_norm():.3e} on the h-grid"),
        ]
        assert loss_ok and traj_ok and energy_ok, (
            "criterion 1 sub-targets conflict for VV h=0.5 "
            "(see notes/decisions.md):\n" + "\n".join(lines)
        )


class TestCriterion02CoverageEffect:
    def test_sparse_grid_leaves_interior_residual(self):
        system = HarmonicOscillator()
        points = circle_points(10, seed=0)
        h = 0.5
        scheme = make_scheme("vv", h=h)

        def schedule(it):
            if it > 17000:
                return 0.03
            if it > 14000:
                return 0.1
            if it > 10000:
                return 0.3
            return 1.0

        def train_model(n_times):
            fmap = TaylorFlowMap(2, order=2, hidden=(96, 96, 96), seed=3, t_max=11.0)
            spec = CollocationSpec(
                time_mode="grid", t_final=10.0, n_times=n_times, tau="uniform",
                phase_mode="samples", samples=points, batch_size=10,
            )

            def objective(it, rng):
                return residual_loss(fmap, scheme, system, spec, rng=rng)

            train(objective, fmap.params, opt=AdamConfig(lr=2e-3), iterations=20_000,
                  lr_schedule=schedule, rng=3)
            return fmap

        dense = train_model(41)
        sparse = train_model(11)

        probe_times = np.linspace(0.1, 9.4, 67)

        def max_interior_residual(fmap):
            worst = 0.0
            for t in probe_times:
                res = scheme_residual(fmap, scheme, system, points, np.full(10, t), h=h)
                worst = max(worst, float(np.max(np.linalg.norm(res, axis=1))))
            return worst

        r_dense = max_interior_residual(dense)
        r_sparse = max_interior_residual(sparse)
        ratio = r_sparse / r_dense
        ok = ratio >= 10.0
        report("2 coverage effect (N=11 vs N=41 interior residual)", ok,
               f"N41={r_dense:.3e} N11={r_sparse:.3e} ratio={ratio:.1f}")
        assert ok


class TestCriterion03CostAsymmetry:
    def test_exact_residual_step_slower(self):
        system = HarmonicOscillator()
        points = circle_points(10, seed=0)
        scheme = make_scheme("vv", h=0.5)
        fmap = TaylorFlowMap(2, order=1, hidden=(96, 96, 96), seed=2, t_max=11.0)
        spec = CollocationSpec(time_mode="grid", t_final=10.0, n_times=41,
                               phase_mode="samples", samples=points, batch_size=10)

        def step(loss_fn):
            fmap.params.zero_grad()
            loss_fn().backward()

        scheme_fn = lambda: residual_loss(fmap, scheme, system, spec, rng=0)
        exact_fn = lambda: exact_residual_loss(fmap, system, spec, rng=0)
        for _ in range(8):
            step(scheme_fn)
            step(exact_fn)
        t_scheme = t_exact = 0.0
        reps = 40
        for _ in range(reps):
            t0 = time.perf_counter()
            step(scheme_fn)
            t_scheme += time.perf_counter() - t0
            t0 = time.perf_counter()
            step(exact_fn)
            t_exact += time.perf_counter() - t0
        ratio = t_exact / t_scheme
        ok = ratio >= 1.5
        report("3 cost asymmetry (exact vs VV residual step)", ok,
               f"vv={1000 * t_scheme / reps:.2f}ms exact={1000 * t_exact / reps:.2f}ms "
               f"ratio={ratio:.2f}")
        assert ok


class TestCriterion04TaylorConsistency:
    def systems_and_eps(self):
        return [
            (HarmonicOscillator(), None),
            (NearlyPeriodicOscillators(0.05), None),
            (FermiPastaUlam(50.0, 3), None),
            (AlphaParticle(0.2), 0.2),
        ]

    def test_derivative_matching(self):
        rng = np.random.default_rng(7)
        worst_first = 0.0
        worst_second = 0.0
        for system, eps in self.systems_and_eps():
            u = 0.5 * rng.standard_normal((100, system.dim))
            eps_col = None if eps is None else np.full(100, eps)
            for order in (1, 2):
                fmap = TaylorFlowMap(
                    system.dim, order=order, hidden=(24, 24), seed=10 + order,
                    conditioned=eps is not None,
                )
                randomize(fmap.params, rng)
                f = system.vector_field(u) if eps is None else system.vector_field(u, eps=eps_col)
                fd1 = dphi_dt0(fmap, system, u, eps=eps_col)
                rel1 = np.max(np.linalg.norm(fd1 - f, axis=1) / np.linalg.norm(f, axis=1))
                worst_first = max(worst_first, rel1)
                if order == 2:
                    curv = (system.curvature(u) if eps is None
                            else system.curvature(u, eps=eps_col))
                    fd2 = d2phi_dt0(fmap, system, u, eps=eps_col)
                    rel2 = np.max(
                        np.linalg.norm(fd2 - curv, axis=1)
                        / (np.linalg.norm(curv, axis=1) + 1e-12)
                    )
                    worst_second = max(worst_second, rel2)
        ok = worst_first < 1e-6 and worst_second < 1e-4
        report("4 Taylor consistency", ok,
               f"d/dt rel={worst_first:.2e} (tol 1e-6), d2/dt2 rel={worst_second:.2e} (tol 1e-4)")
        assert ok


class TestCriterion05GradientIntegrity:
    def test_all_loss_types_and_architectures(self):
        worst = {}
        box = lambda dim, r: np.tile([-r, r], (dim, 1))
        for seed in (0, 1, 2):
            rng = np.random.default_rng(100 + seed)

            # scheme residuals, every integrator, order-2 map
            system = NearlyPeriodicOscillators(0.1)
            fmap = TaylorFlowMap(4, order=2, hidden=(10, 10), seed=seed)
            randomize(fmap.params, rng)
            spec = CollocationSpec(time_mode="uniform", t_final=1.0, phase_mode="box",
                                   box=box(4, 0.7), batch_size=6)
            for name in ("fe", "vv", "midpoint", "rk4", "implicit_euler"):
                scheme = make_scheme(name, h=0.05)
                gap = gradient_check(
                    lambda: residual_loss(fmap, scheme, system, spec, rng=seed),
                    fmap.params, n_probes=20, rng=seed, step=1e-4,
                )
                worst[f"residual/{name}"] = max(worst.get(f"residual/{name}", 0.0), gap)

            # exact residual (checked at a coarser internal time step: the
            # production 1e-6 stencil amplifies roundoff beyond what the
            # finite-difference oracle can resolve at the 1e-5 tolerance)
            gap = gradient_check(
                lambda: exact_residual_loss(fmap, system, spec, rng=seed, fd_step=1e-3),
                fmap.params, n_probes=20, rng=seed, step=1e-4,
            )
            worst["exact"] = max(worst.get("exact", 0.0), gap)

            # energy-balanced residual on the slow/fast fput map
            fput = FermiPastaUlam(10.0, 2)
            sf_map = TaylorFlowMap(8, order=(2, 0),
                                   partition=(fput.slow_indices, fput.fast_indices),
                                   hidden=(10, 10), seed=seed)
            randomize(sf_map.params, rng, scale=0.2)
            eb_spec = CollocationSpec(time_mode="uniform", t_final=0.125, phase_mode="box",
                                      box=box(8, 0.4), batch_size=5)
            eb_norm = NormSpec(mode="energy_balanced", omega=10.0, block_m=2)
            gap = gradient_check(
                lambda: residual_loss(sf_map, make_scheme("vv", h=2.0 ** -6), fput,
                                      eb_spec, norm=eb_norm, rng=seed),
                sf_map.params, n_probes=20, rng=seed, step=1e-4,
            )
            worst["residual/eb-slowfast"] = max(worst.get("residual/eb-slowfast", 0.0), gap)

            # conditioned, speed-preserving charged-particle map under midpoint
            alpha = AlphaParticle(0.2)
            amap = TaylorFlowMap(4, order=2, hidden=(10, 10), seed=seed,
                                 conditioned=True, speed_preserving=True)
            randomize(amap.params, rng, scale=0.2)
            shell = CollocationSpec(
                time_mode="uniform", t_final=1.0, phase_mode="shell",
                velocity_indices=(0, 1), r_min=np.sqrt(2) - 0.3, r_max=np.sqrt(2) + 0.3,
                position_box=np.tile([0.0, 2 * np.pi], (2, 1)), batch_size=5,
                eps_range=(0.05, 0.4),
            )
            gap = gradient_check(
                lambda: residual_loss(amap, make_scheme("midpoint", h=0.01), alpha,
                                      shell, rng=seed),
                amap.params, n_probes=20, rng=seed, step=1e-4,
            )
            worst["residual/alpha-wrapped"] = max(worst.get("residual/alpha-wrapped", 0.0), gap)

            # data loss and joint loss
            harm = HarmonicOscillator()
            fixed = FixedStepFlowMap(2, t0=0.5, hidden=(10, 10), seed=seed)
            randomize(fixed.params, rng)
            u0 = 0.7 * rng.standard_normal((4, 2))
            targets = rollout_targets(harm, u0, 0.5, 3, tol=1e-9)
            gap = gradient_check(lambda: data_loss(fixed, harm, u0, targets),
                                 fixed.params, n_probes=20, rng=seed, step=1e-4)
            worst["data"] = max(worst.get("data", 0.0), gap)

            var = TaylorFlowMap(2, order=2, hidden=(10, 10), seed=seed + 50)
            randomize(var.params, rng, scale=0.2)
            jspec = CollocationSpec(time_mode="uniform", t_final=0.5, phase_mode="box",
                                    box=box(2, 0.8), batch_size=4)
            merged = fixed.params
            for name, tensor in var.params.items():
                if f"v:{name}" not in merged:
                    merged._tensors[f"v:{name}"] = tensor
            gap = gradient_check(
                lambda: joint_loss(fixed, var, make_scheme("vv", h=0.1), harm, u0,
                                   targets, jspec, rng=seed),
                merged, n_probes=20, rng=seed, step=1e-4,
            )
            worst["joint"] = max(worst.get("joint", 0.0), gap)

        overall = max(worst.values())
        ok = overall < 1e-5
        detail = ", ".join(f"{k}={v:.1e}" for k, v in sorted(worst.items()))
        report("5 gradient integrity", ok, f"worst={overall:.2e}; {detail}")
        assert ok


class TestCriterion06IntegratorOrders:
    def test_global_error_slopes(self):
        system = HarmonicOscillator()
        u0 = np.array([0.0, 1.0])
        target = rotation_exact(u0, 1.0)
        schemes = [
            (ForwardEuler(), 1),
            (VelocityVerlet(), 2),
            (ImplicitMidpoint(), 2),
            (RungeKutta4(), 4),
        ]
        steps = np.array([8, 16, 32, 64])
        lines = []
        ok = True
        for scheme, order in schemes:
            errs = []
            for n in steps:
                final = integrate(system, scheme, u0, 1.0 / n, int(n)).states[-1]
                errs.append(np.linalg.norm(final - target))
            slope = np.polyfit(np.log(1.0 / steps), np.log(errs), 1)[0]
            good = abs(slope - order) <= 0.2
            ok = ok and good
            lines.append(f"{scheme.name}={slope:.2f} (nominal {order})")
        report("6 integrator orders", ok, "; ".join(lines))
        assert ok


class TestCriterion07HmcExactness:
    def test_refresh_chain_and_angles(self):
        system = HarmonicOscillator()
        rng = np.random.default_rng(13)
        eps_mach = np.finfo(float).eps
        worst = 0.0
        for _ in range(10_000):
            q = rng.uniform(-0.995, 0.995, size=1)
            xi = refresh_momentum(system, q, 0.5, rng)
            h_val = system.hamiltonian(np.array([xi[0], q[0]]))
            worst = max(worst, abs(h_val - 0.5))
        refresh_ok = worst <= 8 * eps_mach * 0.5

        config = McSamplerConfig(h0=0.5, mean_duration=1.0, n_samples=10_000, seed=14)
        out = hmc_h0_chain(system, np.array([0.0]), config)
        drift = float(np.max(np.abs(out.energies - 0.5) / 0.5))
        drift_ok = drift < 1e-3

        angles = np.arctan2(out.states[:, 0], out.states[:, 1])
        counts, _ = np.histogram(angles, bins=36, range=(-np.pi, np.pi))
        pvalue = scipy.stats.chisquare(counts).pvalue
        angle_ok = pvalue > 0.01

        ok = refresh_ok and drift_ok and angle_ok
        report("7 HMC-H0 exactness", ok,
               f"refresh|H-H0|={worst:.2e} (tol {4 * eps_mach:.1e}), "
               f"chain drift={drift:.2e}, angle chi2 p={pvalue:.3f}")
        assert ok


class TestCriterion08ConstrainedRefreshment:
    def test_randomized_sweep(self):
        rng = np.random.default_rng(15)
        worst_quad = 0.0
        worst_lin = 0.0
        n_feasible = 0
        n_infeasible = 0
        for _ in range(10_000):
            d = int(rng.integers(2, 7))
            m = int(rng.integers(1, d))
            a = rng.standard_normal((m, d))
            root = rng.standard_normal((d, d))
            metric = root @ root.T + d * np.eye(d)
            b = rng.standard_normal(m) * rng.uniform(0.0, 0.6)
            c = float(rng.uniform(0.5, 2.0))
            spec = LinearConstraintSpec(a, b, metric, c)
            minv_at = np.linalg.solve(metric, a.T)
            x_p = minv_at @ np.linalg.solve(a @ minv_at, b)
            q = float(x_p @ metric @ x_p)
            if q > c:
                n_infeasible += 1
                with pytest.raises(EmptyIntersectionError):
                    constrained_refresh(spec, rng)
                continue
            n_feasible += 1
            x = constrained_refresh(spec, rng)
            worst_quad = max(worst_quad, abs(x @ metric @ x - c))
            worst_lin = max(worst_lin, float(np.linalg.norm(a @ x - b)))
        ok = worst_quad < 1e-10 and worst_lin < 1e-10 and n_feasible > 0 and n_infeasible > 0
        report("8 constrained refreshment", ok,
               f"{n_feasible} feasible (|x'Mx-c|<={worst_quad:.1e}, |Ax-b|<={worst_lin:.1e}), "
               f"{n_infeasible} infeasible all raised")
        assert ok


class TestCriterion09AdjointIdentities:
    def test_first_variation_and_conditions(self):
        system = NearlyPeriodicOscillators(0.1)
        fmap = TaylorFlowMap(4, order=1, hidden=(10, 10), seed=16)
        randomize(fmap.params, np.random.default_rng(17), scale=0.3)
        rng = np.random.default_rng(18)
        u = 0.5 * rng.standard_normal(4)
        h = 0.1
        grid = h * np.arange(5)
        a_dir = rng.standard_normal(4)
        b_dir = rng.standard_normal(4)

        def psi(uu, tt):
            return tt * a_dir + tt ** 2 * b_dir

        worst_gap = 0.0
        for name in ("fe", "vv", "rk4", "implicit_euler", "midpoint"):
            scheme = make_scheme(name, h=h)
            _, _, gap = first_variation_check(fmap, scheme, system, u, grid, psi, h=h)
            worst_gap = max(worst_gap, gap)
        gap_ok = worst_gap < 1e-6

        lam = 3.0
        scalar = LinearSystem([[lam]])
        h_sing = 1.0 / lam
        grid_s = h_sing * np.arange(4)
        chain = residual_sequence(lambda uu, tt: uu * np.exp(lam * tt), ImplicitEuler(),
                                  scalar, np.array([1.0]), grid_s, h=h_sing)
        transport = backward_transport(chain, ImplicitEuler(), scalar, h=h_sing)
        singular_ok = not transport.forces_zero

        margin_ok = True
        harm = HarmonicOscillator()
        for h_m in (0.1, 0.5, 1.0, 2.0):
            grid_m = h_m * np.arange(4)
            scan = midpoint_condition_scan(rotation_exact, harm, np.array([[0.0, 1.0]]),
                                           grid_m, h_m)
            expected = np.sqrt(1.0 + h_m ** 2 / 4.0)
            margin_ok = margin_ok and np.max(np.abs(scan.margins - expected)) < 1e-10

        ok = gap_ok and singular_ok and margin_ok
        report("9 adjoint identities", ok,
               f"first-variation gap={worst_gap:.2e}, implicit-Euler singular flagged="
               f"{singular_ok}, midpoint margins match={margin_ok}")
        assert ok


class TestCriterion10AlphaInvariants:
    def test_speed_conservation_three_ways(self):
        system = AlphaParticle(eps=0.2)
        u0 = np.array([1.0, 0.3, 0.7, -0.4])
        traj = integrate(system, ImplicitMidpoint(), u0, 2.0 ** -9, 10_000)
        r2 = traj.states[:, 0] ** 2 + traj.states[:, 1] ** 2
        midpoint_drift = float(np.max(np.abs(r2 - r2[0]) / r2[0]))
        midpoint_ok = midpoint_drift < 1e-8

        fmap = TaylorFlowMap(4, order=2, hidden=(16, 16), seed=19, conditioned=True,
                             speed_preserving=True)
        randomize(fmap.params, np.random.default_rng(20))
        u = u0.copy()
        speed0 = np.hypot(u[0], u[1])
        for _ in range(200):
            u = fmap(system, u, 1.5, eps=0.27)
        wrapper_drift = abs(np.hypot(u[0], u[1]) - speed0) / speed0
        wrapper_ok = wrapper_drift < 1e-13

        frozen = AlphaParticle(eps=0.0)
        traj0 = integrate(frozen, ImplicitMidpoint(), u0, 2.0 ** -6, 4096)
        section = poincare_section(traj0.times, traj0.states)
        spread = (float(np.max(np.linalg.norm(section.points - u0[2:], axis=1)))
                  if len(section) else np.inf)
        section_ok = len(section) >= 3 and spread < 1e-6

        ok = midpoint_ok and wrapper_ok and section_ok
        report("10 alpha invariants", ok,
               f"midpoint r^2 drift={midpoint_drift:.2e}, wrapper speed drift="
               f"{wrapper_drift:.2e}, eps=0 section spread={spread:.2e} "
               f"({len(section)} crossings)")
        assert ok


class TestCriterion11FputPhysics:
    def test_energy_exchange_at_desk_scale(self):
        # one unit of stiff energy, moderate slow excitation: the chain stays
        # in the adiabatic regime while the springs exchange visibly by T=100
        system = FermiPastaUlam(omega=50.0, m=3)
        u0 = np.zeros(12)
        u0[0] = 0.8
        u0[3] = 0.8
        u0[6] = 1.0
        u0[9] = 1.0 / 50.0
        h = 2.0 ** -11
        n_steps = int(round(100.0 / h))
        traj = integrate(system, VelocityVerlet(), u0, h, n_steps)
        stride = 64
        states = traj.states[::stride]
        energies, total = system.stiff_spring_energies(states)
        total_drift = float(np.max(np.abs(total - total[0]) / total[0]))
        adiabatic_ok = total_drift < 0.05

        spans = np.ptp(energies, axis=0) / total[0]
        exchange_ok = float(np.max(spans)) > 0.20

        ham = system.hamiltonian(states)
        h_drift = float(np.max(np.abs(ham - ham[0]) / np.abs(ham[0])))
        h_ok = h_drift < 1e-4

        ok = adiabatic_ok and exchange_ok and h_ok
        report("11 FPUT physics", ok,
               f"|I-I0|/I0 max={total_drift:.3f} (tol 0.05), max spring swing="
               f"{np.max(spans):.2f} I (need >0.20), H drift={h_drift:.2e}")
        assert ok


class TestCriterion12EnergyBalancedNorm:
    def test_equality_and_weighting(self):
        rng = np.random.default_rng(21)
        r = rng.standard_normal((64, 12))
        with no_grad():
            plain = weighted_square_rows(Tensor(r), NormSpec().weights(12)).value
            unit = weighted_square_rows(
                Tensor(r), NormSpec(mode="energy_balanced", omega=1.0, block_m=3).weights(12)
            ).value
        bitwise_ok = np.array_equal(plain, unit)

        omega = 50.0
        w = NormSpec(mode="energy_balanced", omega=omega, block_m=3).weights(12)
        ratios = []
        with no_grad():
            for fast_col in (9, 10, 11):
                e_fast = np.zeros((1, 12))
                e_fast[0, fast_col] = 1.0
                e_slow = np.zeros((1, 12))
                e_slow[0, fast_col - 9] = 1.0
                ratios.append(
                    weighted_square_rows(Tensor(e_fast), w).value[0]
                    / weighted_square_rows(Tensor(e_slow), w).value[0]
                )
        ratio_ok = all(val == omega ** 2 for val in ratios)
        ok = bitwise_ok and ratio_ok
        report("12 energy-balanced norm", ok,
               f"omega=1 bitwise equality={bitwise_ok}, fast/slow ratio={ratios[0]:.1f}"
               f" (= omega^2 {omega ** 2:.0f})")
        assert ok


class TestCriterion13Determinism:
    def test_byte_identical_reruns(self, tmp_path):
        from hamflow.cli import main

        def run_all(tag):
            base = tmp_path / tag
            train_cfg = tmp_path / f"{tag}_train.cfg"
            train_cfg.write_text(
                "[system]\nname = harmonic\n[scheme]\nname = velocity_verlet\nh = 0.5\n"
                "[model]\nkind = taylor\norder = 1\nhidden = [12, 12]\n"
                "[loss]\ntype = residual\ntime_mode = grid\nt_final = 2.0\nn_times = 9\n"
                "phase_mode = box\nbox = [-1.0, 1.0]\nbatch_size = 8\n"
                f"[run]\nseed = 7\niterations = 25\nout_dir = {base}_train\n"
            )
            assert main(["train", "--config", str(train_cfg)]) == 0
            sample_cfg = tmp_path / f"{tag}_sample.cfg"
            sample_cfg.write_text(
                "[system]\nname = harmonic\n"
                "[sampler]\nh0 = 0.5\nlambda = 0.5\nn_levels = 2\nper_level = 30\n"
                f"[run]\nseed = 9\ninitial = unit\nout_dir = {base}_sample\n"
            )
            assert main(["sample", "--config", str(sample_cfg)]) == 0
            sim_cfg = tmp_path / f"{tag}_sim.cfg"
            sim_cfg.write_text(
                "[system]\nname = npco\neps = 0.05\n[scheme]\nname = rk4\nh = 0.05\n"
                f"[run]\ninitial = default\nn_steps = 50\nout_dir = {base}_sim\n"
            )
            assert main(["simulate", "--config", str(sim_cfg)]) == 0
            return {
                "train_record.csv": (tmp_path / f"{tag}_train" / "train_record.csv").read_bytes(),
                "model.bin": (tmp_path / f"{tag}_train" / "model.bin").read_bytes(),
                "samples.csv": (tmp_path / f"{tag}_sample" / "samples.csv").read_bytes(),
                "trajectory.csv": (tmp_path / f"{tag}_sim" / "trajectory.csv").read_bytes(),
            }

        first = run_all("a")
        second = run_all("b")
        mismatched = [name for name in first
                      if name != "train_record.csv" and first[name] != second[name]]
        # train_record carries wall-clock columns; compare its loss column instead
        loss_cols = []
        for blob in (first["train_record.csv"], second["train_record.csv"]):
            rows = blob.decode().splitlines()[1:]
            loss_cols.append([r.split(",")[1] for r in rows])
        if loss_cols[0] != loss_cols[1]:
            mismatched.append("train_record.csv losses")
        ok = not mismatched
        report("13 determinism", ok,
               "byte-identical reruns" if ok else f"mismatch in {mismatched}")
        assert ok
