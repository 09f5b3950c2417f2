"""Long-time rollout evaluation and runtime benchmarking.

Error metrics follow the two standard definitions: the trajectory error is
the Euclidean gap between predicted and reference states, and the energy
error is the relative Hamiltonian mismatch.  Rollout error series are
sampled at the flow-map step, with reference states advanced segment by
segment by the high-accuracy reference solver.

The Poincare machinery targets the charged-particle system: crossings of
the gyrophase-zero surface are detected as ascending sign changes of v_y
with v_x > 0 and located by linear interpolation in time.

Benchmarks time named solvers on a shared batch (one discarded warmup
call), reporting wall time and both error metrics at the short horizon,
plus an optional long-horizon batch timing.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np

from .errors import MetricUndefinedError, ParameterError
from .flowmap import rollout_compose
from .integrators import reference_flow
from .systems import FermiPastaUlam


def traj_error(prediction, reference):
    """Euclidean distance between states (rowwise for batches)."""
    prediction = np.asarray(prediction, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if prediction.shape != reference.shape:
        raise ParameterError("prediction/reference shapes differ")
    return np.linalg.norm(prediction - reference, axis=-1)


def energy_error(system, prediction, reference, eps=None):
    """|H(prediction) - H(reference)| / |H(reference)|."""
    del eps
    h_pred = system.hamiltonian(prediction)
    h_ref = system.hamiltonian(reference)
    if np.any(np.abs(np.atleast_1d(h_ref)) < 1e-300):
        raise MetricUndefinedError("reference energy too close to zero for a relative error")
    return np.abs(h_pred - h_ref) / np.abs(h_ref)


@dataclass
class ErrorSeries:
    """Rollout errors on a uniform time grid, with an optional growth fit."""

    times: np.ndarray
    traj_errors: np.ndarray
    energy_errors: np.ndarray
    growth: tuple | None = None  # (delta0, rate)

    def fit_growth(self):
        self.growth = fit_error_growth(self.times, self.traj_errors)
        return self.growth

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("t,traj_err,energy_err\n")
            for t, te, ee in zip(self.times, self.traj_errors, self.energy_errors):
                fh.write(f"{float(t)!r},{float(te)!r},{float(ee)!r}\n")


def error_series(flow_map, system, u0, dt, n_steps, eps=None, reference_tol=1e-10):
    """Errors of the iterated map against the reference flow at k dt."""
    rollout = rollout_compose(flow_map, system, u0, dt, n_steps, eps=eps)
    reference = np.empty_like(rollout)
    reference[0] = rollout[0]
    cur = np.asarray(u0, dtype=float)
    for k in range(n_steps):
        cur = reference_flow(system, cur, dt, tol=reference_tol)
        reference[k + 1] = cur
    times = dt * np.arange(n_steps + 1)
    return ErrorSeries(
        times=times,
        traj_errors=traj_error(rollout, reference),
        energy_errors=energy_error(system, rollout, reference),
    )


def energy_exchange_profile(system, times, states, stride=1):
    """Stiff-spring energies I_j, their sum, and H along an FPUT trajectory.

    Returns (times, spring_energies (n, m), totals (n,), hamiltonians (n,)).
    """
    if not isinstance(system, FermiPastaUlam):
        raise ParameterError("energy profiles are defined for the fput system")
    times = np.asarray(times, dtype=float)[::stride]
    states = np.asarray(states, dtype=float)[::stride]
    energies, total = system.stiff_spring_energies(states)
    return times, energies, total, system.hamiltonian(states)


def profile_to_csv(path, times, energies, totals, hamiltonians):
    m = energies.shape[1]
    header = "t," + ",".join(f"I{j + 1}" for j in range(m)) + ",I,H"
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for t, row, tot, ham in zip(times, energies, totals, hamiltonians):
            cols = ",".join(repr(float(v)) for v in row)
            fh.write(f"{float(t)!r},{cols},{float(tot)!r},{float(ham)!r}\n")


@dataclass
class PoincareSection:
    """Crossings of the gyrophase-zero branch: v_y sign change with v_x > 0.

    The v_x > 0 filter selects the theta = 0 branch; the other zero of v_y
    per gyration sits at theta = pi where v_x < 0.  (For B > 0 the rotation
    is clockwise, so the retained crossings have v_y descending.)
    """

    points: np.ndarray  # (n, 2) guiding-center (x, y) at the crossings
    crossing_times: np.ndarray
    interpolation_residual: float = 0.0  # max |v_y| at located crossings

    def __len__(self):
        return self.points.shape[0]

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("t,x,y\n")
            for t, (x, y) in zip(self.crossing_times, self.points):
                fh.write(f"{float(t)!r},{float(x)!r},{float(y)!r}\n")


def poincare_section(times, states):
    """Linear-interpolation section of a (vx, vy, x, y) trajectory."""
    times = np.asarray(times, dtype=float)
    states = np.atleast_2d(np.asarray(states, dtype=float))
    vy = states[:, 1]
    crossing = np.sign(vy[:-1]) * np.sign(vy[1:]) < 0
    if not np.any(crossing):
        return PoincareSection(np.empty((0, 2)), np.empty(0))
    idx = np.flatnonzero(crossing)
    frac = -vy[idx] / (vy[idx + 1] - vy[idx])
    vx_star = states[idx, 0] + frac * (states[idx + 1, 0] - states[idx, 0])
    keep = vx_star > 0.0
    idx, frac = idx[keep], frac[keep]
    t_star = times[idx] + frac * (times[idx + 1] - times[idx])
    x_star = states[idx, 2] + frac * (states[idx + 1, 2] - states[idx, 2])
    y_star = states[idx, 3] + frac * (states[idx + 1, 3] - states[idx, 3])
    vy_star = vy[idx] + frac * (vy[idx + 1] - vy[idx])
    residual = float(np.max(np.abs(vy_star), initial=0.0))
    return PoincareSection(np.stack([x_star, y_star], axis=1), t_star, residual)


def section_mismatch(section_a, section_b):
    """Symmetric Hausdorff distance between two point clouds, over their diameter."""
    a = np.atleast_2d(np.asarray(getattr(section_a, "points", section_a), dtype=float))
    b = np.atleast_2d(np.asarray(getattr(section_b, "points", section_b), dtype=float))
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ParameterError("cannot compare empty sections")

    def directed(p, q):
        d2 = np.sum((p[:, None, :] - q[None, :, :]) ** 2, axis=2)
        return np.sqrt(np.max(np.min(d2, axis=1)))

    cloud = np.concatenate([a, b])
    span = np.linalg.norm(cloud.max(axis=0) - cloud.min(axis=0))
    if span == 0.0:
        return 0.0
    return max(directed(a, b), directed(b, a)) / span


def fit_error_growth(times, errors, floor=1e-300):
    """Least-squares fit of log(err) = log(delta0) + rate * t.

    Negative rates are returned as-is (the series is not worst-case
    exponential growth); zero entries are floored before the log.
    """
    times = np.asarray(times, dtype=float)
    errors = np.maximum(np.asarray(errors, dtype=float), floor)
    mask = errors > floor
    if np.count_nonzero(mask) < 2:
        raise ParameterError("need at least two positive errors to fit growth")
    coeffs = np.polyfit(times[mask], np.log(errors[mask]), 1)
    return float(np.exp(coeffs[1])), float(coeffs[0])


@dataclass
class BenchmarkReport:
    solver: str
    batch_size: int
    horizon: float
    wall_seconds: float
    traj_err: float
    energy_err: float
    long_horizon: float | None = None
    long_wall_seconds: float | None = None

    def row(self):
        return {
            "solver": self.solver,
            "batch": self.batch_size,
            "T": self.horizon,
            "wall_ms": 1000.0 * self.wall_seconds,
            "traj_err": self.traj_err,
            "H_err": self.energy_err,
            "long_T": self.long_horizon,
            "long_wall_ms": None
            if self.long_wall_seconds is None
            else 1000.0 * self.long_wall_seconds,
        }


def scheme_solver(scheme, h):
    """Adapt an integrator to the benchmark's (u_batch, T) -> states interface."""

    def advance(system, u, t_final):
        n = max(1, int(round(t_final / h)))
        cur = u
        for _ in range(n):
            cur = scheme.step(system, cur, t_final / n)
        return cur

    return advance


def map_solver(flow_map, dt, eps=None):
    def advance(system, u, t_final):
        n = max(1, int(round(t_final / dt)))
        cur = np.atleast_2d(u)
        for _ in range(n):
            out = flow_map(system, cur, dt, eps=eps) if hasattr(flow_map, "t_max") else flow_map(
                system, cur, eps=eps
            )
            cur = np.atleast_2d(out)
        return cur.reshape(np.shape(u))

    return advance


def benchmark(solvers, system, u0_batch, t_short, repeats=3, long_factor=None,
              reference_tol=1e-10, eps=None):
    """Time each named solver on the batch and score it against the reference.

    ``solvers`` is a list of (name, advance) with advance(system, u_batch,
    T) -> final states.  One warmup call per solver is discarded.  With
    ``long_factor`` K, an additional batch advance to K * t_short is timed.
    """
    u0_batch = np.atleast_2d(np.asarray(u0_batch, dtype=float))
    reference = np.stack([reference_flow(system, u, t_short, tol=reference_tol)
                          for u in u0_batch])
    reports = []
    for name, advance in solvers:
        advance(system, u0_batch, t_short)  # warmup, excluded from timing
        started = time.perf_counter()
        for _ in range(repeats):
            final = advance(system, u0_batch, t_short)
        wall = (time.perf_counter() - started) / repeats
        reports.append(
            BenchmarkReport(
                solver=name,
                batch_size=u0_batch.shape[0],
                horizon=t_short,
                wall_seconds=wall,
                traj_err=float(np.mean(traj_error(final, reference))),
                energy_err=float(np.mean(energy_error(system, final, reference))),
            )
        )
        if long_factor:
            started = time.perf_counter()
            advance(system, u0_batch, long_factor * t_short)
            reports[-1].long_horizon = long_factor * t_short
            reports[-1].long_wall_seconds = time.perf_counter() - started
    return reports


def export_results(rows, path, fmt="csv"):
    """Write a list of dict-like records as CSV (stable column order) or JSON."""
    rows = [r.row() if hasattr(r, "row") else dict(r) for r in rows]
    if fmt == "json":
        with open(path, "w") as fh:
            json.dump(rows, fh, indent=2, sort_keys=True)
        return
    if fmt != "csv":
        raise ParameterError(f"unknown export format '{fmt}'")
    columns = []
    for row in rows:
        for key in row:
            if key not in columns:
                columns.append(key)
    with open(path, "w") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            cells = []
            for key in columns:
                value = row.get(key)
                if value is None:
                    cells.append("")
                elif isinstance(value, float):
                    cells.append(repr(value))
                else:
                    cells.append(str(value))
            fh.write(",".join(cells) + "\n")
