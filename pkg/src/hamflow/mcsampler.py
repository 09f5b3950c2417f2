"""Sampling on constant-energy surfaces of separable Hamiltonians.

The chain alternates two measure-preserving moves: momentum refreshment
onto the position-dependent constant-kinetic-energy sphere

    xi = sqrt(2 (H0 - U(q))) M^{1/2} xi0,   xi0 uniform on the unit sphere,

which pins H(xi, q) = H0 exactly, and time integration of the Hamiltonian
flow for a random duration drawn from an exponential law.  Both steps leave
the microcanonical density invariant, so the chain targets the invariant
measure on the energy surface (denser where |grad H| is small, by the
coarea weighting).  Narrowband datasets repeat this over energy levels
drawn from a normal law centered at the target energy.

Momentum refreshment under extra linear conservation laws (Ax = b together
with x' M x = c) is handled by the two-stage particular-solution /
null-space construction in :func:`constrained_refresh`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (
    EmptyIntersectionError,
    InfeasiblePositionError,
    ParameterError,
)
from .integrators import make_scheme
from .network import ParameterSet


@dataclass
class McSamplerConfig:
    """Chain settings: target energy, narrowband width, proposal flow."""

    h0: float
    band_std: float | None = None  # defaults to h0 / 10
    mean_duration: float = 1.0  # lambda of the exponential duration law
    proposal_scheme: str = "velocity_verlet"
    proposal_h: float | None = None  # defaults to min(0.01, lambda / 100)
    n_samples: int = 1000
    n_levels: int = 16
    max_retries: int = 10
    seed: int | None = None

    def __post_init__(self):
        if self.mean_duration <= 0:
            raise ParameterError("mean integration duration must be positive")
        if self.band_std is not None and self.band_std < 0:
            raise ParameterError("band_std must be nonnegative")

    @property
    def band_width(self):
        return abs(self.h0) / 10.0 if self.band_std is None else self.band_std

    @property
    def step_size(self):
        return self.proposal_h if self.proposal_h is not None else min(0.01, self.mean_duration / 100.0)


class SampleSet:
    """Phase-space samples with provenance (chain, step, energy level)."""

    def __init__(self, states, energies, chain_ids=None, steps=None, levels=None):
        self.states = np.atleast_2d(np.asarray(states, dtype=float))
        n = self.states.shape[0]
        self.energies = np.asarray(energies, dtype=float).reshape(n)
        self.chain_ids = (
            np.zeros(n, int) if chain_ids is None else np.asarray(chain_ids, int).reshape(n)
        )
        self.steps = np.arange(n) if steps is None else np.asarray(steps, int).reshape(n)
        self.levels = (
            self.energies.copy() if levels is None else np.asarray(levels, dtype=float).reshape(n)
        )

    def __len__(self):
        return self.states.shape[0]

    @classmethod
    def empty(cls, dim):
        return cls(np.empty((0, dim)), np.empty(0), np.empty(0, int), np.empty(0, int), np.empty(0))

    @classmethod
    def concatenate(cls, sets):
        sets = list(sets)
        return cls(
            np.concatenate([s.states for s in sets]) if sets else np.empty((0, 0)),
            np.concatenate([s.energies for s in sets]),
            np.concatenate([s.chain_ids for s in sets]),
            np.concatenate([s.steps for s in sets]),
            np.concatenate([s.levels for s in sets]),
        )

    def to_csv(self, path):
        dim = self.states.shape[1]
        header = "chain,step,level," + ",".join(f"u{i}" for i in range(dim))
        with open(path, "w") as fh:
            fh.write(header + "\n")
            for c, s, lvl, row in zip(self.chain_ids, self.steps, self.levels, self.states):
                coords = ",".join(repr(float(v)) for v in row)
                fh.write(f"{c},{s},{float(lvl)!r},{coords}\n")

    @classmethod
    def from_csv(cls, path):
        raw = np.genfromtxt(path, delimiter=",", skip_header=1)
        raw = np.atleast_2d(raw)
        states = raw[:, 3:]
        return cls(states, energies=raw[:, 2], chain_ids=raw[:, 0].astype(int),
                   steps=raw[:, 1].astype(int), levels=raw[:, 2])

    def save_container(self, path):
        ParameterSet(
            {
                "states": self.states,
                "energies": self.energies,
                "chain_ids": self.chain_ids.astype(float),
                "steps": self.steps.astype(float),
                "levels": self.levels,
            }
        ).save(path)

    @classmethod
    def load_container(cls, path):
        p = ParameterSet.load(path)
        return cls(
            p["states"].value,
            p["energies"].value,
            p["chain_ids"].value.astype(int),
            p["steps"].value.astype(int),
            p["levels"].value,
        )


def refresh_momentum(system, q, h0, rng):
    """Draw a momentum on the sphere that makes H(p, q) exactly h0."""
    if not system.is_separable:
        raise ParameterError("momentum refreshment requires a separable system")
    q = np.asarray(q, dtype=float)
    gap = h0 - float(system.potential(q[None, :])[0])
    if gap < 0:
        raise InfeasiblePositionError(f"H0 = {h0} is below the potential U(q) = {h0 - gap}")
    if gap == 0.0:
        return np.zeros_like(q)
    d = len(system.momentum_indices)
    xi0 = rng.standard_normal(d)
    xi0 /= np.linalg.norm(xi0)
    return np.sqrt(2.0 * gap) * np.sqrt(system.mass_diag) * xi0


def _assemble(system, p, q):
    u = np.empty(system.dim)
    u[system.momentum_indices] = p
    u[system.position_indices] = q
    return u


def _flow_for_duration(system, scheme, u, duration, h):
    n_full = int(duration / h)
    for _ in range(n_full):
        u = scheme.step(system, u, h)
    remainder = duration - n_full * h
    if remainder > 0:
        u = scheme.step(system, u, remainder)
    return u


def hmc_h0_chain(system, q0, config, rng=None, energy=None, chain_id=0):
    """Run one chain; returns a SampleSet of (p, q) states on the surface.

    Refreshment is retried from the previous accepted position (up to
    ``config.max_retries``) if integration drift has pushed U(q) above the
    level; the initial position must be feasible.
    """
    rng = np.random.default_rng(config.seed if rng is None else rng)
    h0 = config.h0 if energy is None else float(energy)
    q0 = np.asarray(q0, dtype=float)
    if h0 - float(system.potential(q0[None, :])[0]) <= 0:
        raise InfeasiblePositionError(f"infeasible start: U(q0) >= H0 = {h0}")
    scheme = make_scheme(config.proposal_scheme)
    h = config.step_size

    dim = system.dim
    states = np.empty((config.n_samples, dim))
    q_prev = q0.copy()
    q_good = q0.copy()
    for n in range(config.n_samples):
        for attempt in range(config.max_retries + 1):
            try:
                p = refresh_momentum(system, q_prev, h0, rng)
                break
            except InfeasiblePositionError:
                if attempt == config.max_retries:
                    raise
                q_prev = q_good.copy()
        duration = rng.exponential(config.mean_duration)
        u = _flow_for_duration(system, scheme, _assemble(system, p, q_prev), duration, h)
        states[n] = u
        q_good = q_prev.copy()
        q_prev = u[system.position_indices]
    energies = system.hamiltonian(states) if config.n_samples else np.empty(0)
    return SampleSet(
        states.reshape(config.n_samples, dim),
        energies,
        chain_ids=np.full(config.n_samples, chain_id),
        steps=np.arange(config.n_samples),
        levels=np.full(config.n_samples, h0),
    )


def narrowband_dataset(system, q0_pool, config, per_level, rng=None):
    """Chains over energy levels E ~ Normal(h0, band_std), truncated feasible.

    Each level draws a feasible start from the pool; a level whose energy
    admits no pool position is redrawn.  Raises if every attempted level is
    infeasible.
    """
    rng = np.random.default_rng(config.seed if rng is None else rng)
    q0_pool = np.atleast_2d(np.asarray(q0_pool, dtype=float))
    pool_potentials = system.potential(q0_pool)
    chunks = []
    failures = 0
    level = 0
    max_draws = config.n_levels * (config.max_retries + 1)
    while level < config.n_levels and failures < max_draws:
        energy = rng.normal(config.h0, config.band_width)
        feasible = np.flatnonzero(pool_potentials < energy)
        if len(feasible) == 0:
            failures += 1
            continue
        q0 = q0_pool[rng.choice(feasible)]
        level_config = McSamplerConfig(
            h0=config.h0,
            band_std=config.band_std,
            mean_duration=config.mean_duration,
            proposal_scheme=config.proposal_scheme,
            proposal_h=config.proposal_h,
            n_samples=per_level,
            max_retries=config.max_retries,
        )
        chunks.append(
            hmc_h0_chain(system, q0, level_config, rng=rng, energy=energy, chain_id=level)
        )
        level += 1
    if not chunks:
        raise InfeasiblePositionError("every drawn energy level was infeasible for the pool")
    return SampleSet.concatenate(chunks)


@dataclass
class LinearConstraintSpec:
    """Ellipsoid level x' M x = c intersected with the affine set A x = b."""

    matrix: np.ndarray  # A, (m, d)
    offset: np.ndarray  # b, (m,)
    metric: np.ndarray  # M, (d, d) symmetric positive definite
    level: float  # c >= 0

    def __post_init__(self):
        self.matrix = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        self.offset = np.asarray(self.offset, dtype=float).reshape(self.matrix.shape[0])
        self.metric = np.asarray(self.metric, dtype=float)
        m, d = self.matrix.shape
        if self.metric.shape != (d, d):
            raise ParameterError("metric shape must match the constraint width")
        if self.level < 0:
            raise ParameterError("level c must be nonnegative")
        try:
            np.linalg.cholesky(self.metric)
        except np.linalg.LinAlgError:
            raise ParameterError("metric must be symmetric positive definite") from None
        if np.linalg.matrix_rank(self.matrix, tol=1e-12) < m:
            raise ParameterError("constraint matrix must have full row rank")


def constrained_refresh(spec, rng):
    """Sample x with A x = b and x' M x = c.

    Particular solution x_p = M^{-1} A' (A M^{-1} A')^{-1} b, then a
    uniform null-space direction w = N z with z on the unit sphere, and the
    quadratic correction x = x_p + alpha w with the root sign randomized.
    Raises EmptyIntersectionError when x_p' M x_p > c.
    """
    rng = np.random.default_rng(rng)
    a, b, metric, c = spec.matrix, spec.offset, spec.metric, spec.level
    minv_at = np.linalg.solve(metric, a.T)
    x_p = minv_at @ np.linalg.solve(a @ minv_at, b)
    q = float(x_p @ metric @ x_p)
    if q > c:
        raise EmptyIntersectionError(f"x_p' M x_p = {q} exceeds c = {c}: empty intersection")
    if q == c:
        return x_p
    basis = scipy.linalg.null_space(a, rcond=1e-12)
    if basis.shape[1] == 0:
        raise EmptyIntersectionError("A is square and full rank: the ellipsoid misses A x = b")
    for _ in range(100):
        z = rng.standard_normal(basis.shape[1])
        z /= np.linalg.norm(z)
        w = basis @ z
        quad = float(w @ metric @ w)
        if quad > 0:
            break
    else:  # metric is SPD, so this is unreachable for unit z
        raise ParameterError("degenerate null-space direction")
    lin = float(x_p @ metric @ w)
    disc = np.sqrt(lin * lin - quad * (q - c))
    roots = ((-lin + disc) / quad, (-lin - disc) / quad)
    alpha = roots[int(rng.integers(0, 2))]
    return x_p + alpha * w
