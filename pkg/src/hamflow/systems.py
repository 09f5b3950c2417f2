"""Benchmark Hamiltonian systems with hand-coded analytic derivatives.

Phase-space states are plain float64 ndarrays; every evaluator accepts a
single state of shape ``(dim,)`` or a batch of shape ``(n, dim)`` and returns
a matching leading shape.  Each system documents its coordinate ordering.

Canonical systems expose the pairing between momentum and position
coordinates through ``momentum_indices`` / ``position_indices``, so the
identity f(u) = J^{-1} grad H(u) can be checked against the hand-coded
vector field even when the state layout is a permutation of (p, q).

Beyond the Jacobian Df, systems provide the curvature term Df(u) f(u) and
its Jacobian, which the second-order flow-map architectures and their
composed-training gradients require.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, ParameterError


def _as_batch(u, dim):
    """Validate a state or batch and return (2d array, was_single)."""
    arr = np.asarray(u, dtype=float)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise DimensionError(f"expected states of dimension {dim}, got shape {np.shape(u)}")
    if not np.all(np.isfinite(arr)):
        raise DimensionError("state contains non-finite entries")
    return arr, single


def _unbatch(out, single):
    return out[0] if single else out


class HamiltonianSystem:
    """Base class: evaluators for H, grad H, f, Df, and Df f.

    Attributes
    ----------
    name : str
    dim : int
        Phase-space dimension (2d for the canonical systems).
    momentum_indices, position_indices : ndarray or None
        Paired index lists for canonical systems; entry i of the two lists
        are conjugate coordinates.  None for non-canonical systems.
    mass_diag : ndarray or None
        Diagonal of the mass matrix M, ordered like ``momentum_indices``.
        Present iff the system is separable, H = p' M^{-1} p / 2 + U(q).
    slow_indices, fast_indices : ndarray or None
        Optional slow/fast partition of the coordinates.
    params : dict
        Named parameters the system was built with.
    """

    name = "abstract"

    def __init__(self, dim):
        self.dim = int(dim)
        self.momentum_indices = None
        self.position_indices = None
        self.mass_diag = None
        self.slow_indices = None
        self.fast_indices = None
        self.params = {}

    @property
    def is_canonical(self):
        return self.momentum_indices is not None

    @property
    def is_separable(self):
        return self.mass_diag is not None

    def check_state(self, u):
        _as_batch(u, self.dim)

    # Evaluators; subclasses implement the _batch variants on (n, dim) input.
    def hamiltonian(self, u):
        arr, single = _as_batch(u, self.dim)
        return _unbatch(self._hamiltonian(arr), single)

    def grad_hamiltonian(self, u):
        arr, single = _as_batch(u, self.dim)
        return _unbatch(self._grad_hamiltonian(arr), single)

    def vector_field(self, u):
        arr, single = _as_batch(u, self.dim)
        return _unbatch(self._vector_field(arr), single)

    def jacobian(self, u):
        arr, single = _as_batch(u, self.dim)
        return _unbatch(self._jacobian(arr), single)

    def curvature(self, u):
        """Df(u) f(u), the second Taylor coefficient of the flow (times 2)."""
        arr, single = _as_batch(u, self.dim)
        return _unbatch(self._curvature(arr), single)

    def curvature_jacobian(self, u):
        """Jacobian of u -> Df(u) f(u)."""
        arr, single = _as_batch(u, self.dim)
        return _unbatch(self._curvature_jacobian(arr), single)

    def _hamiltonian(self, u):
        raise NotImplementedError(f"{self.name} does not define an energy")

    def _grad_hamiltonian(self, u):
        raise NotImplementedError(f"{self.name} does not define an energy gradient")

    def _vector_field(self, u):
        raise NotImplementedError

    def _jacobian(self, u):
        raise NotImplementedError

    def _curvature(self, u):
        f = self._vector_field(u)
        df = self._jacobian(u)
        return np.einsum("nij,nj->ni", df, f)

    def _curvature_jacobian(self, u):
        raise NotImplementedError(f"{self.name} does not provide curvature derivatives")


class SeparableSystem(HamiltonianSystem):
    """Canonical system with H = p' M^{-1} p / 2 + U(q), M diagonal.

    Subclasses provide the potential and its first two (optionally three)
    derivative orders in the gathered position ordering; the base class
    assembles H, grad H, f and Df in the full state layout.
    """

    def __init__(self, dim, momentum_indices, position_indices, mass_diag):
        super().__init__(dim)
        self.momentum_indices = np.asarray(momentum_indices, dtype=int)
        self.position_indices = np.asarray(position_indices, dtype=int)
        self.mass_diag = np.asarray(mass_diag, dtype=float)
        if len(self.momentum_indices) != len(self.position_indices):
            raise ParameterError("momentum/position index lists must pair up")
        if np.any(self.mass_diag <= 0):
            raise ParameterError("mass matrix must be positive")

    def potential(self, q):
        raise NotImplementedError

    def grad_potential(self, q):
        raise NotImplementedError

    def hess_potential(self, q):
        raise NotImplementedError

    def third_potential_action(self, q, w):
        """Matrix d/dq [hess U(q) w] for fixed w; needed by curvature_jacobian."""
        raise NotImplementedError(f"{self.name} does not provide third potential derivatives")

    def _split(self, u):
        return u[:, self.momentum_indices], u[:, self.position_indices]

    def _hamiltonian(self, u):
        p, q = self._split(u)
        return 0.5 * np.sum(p * p / self.mass_diag, axis=1) + self.potential(q)

    def _grad_hamiltonian(self, u):
        p, q = self._split(u)
        g = np.zeros_like(u)
        g[:, self.momentum_indices] = p / self.mass_diag
        g[:, self.position_indices] = self.grad_potential(q)
        return g

    def _vector_field(self, u):
        p, q = self._split(u)
        f = np.zeros_like(u)
        f[:, self.momentum_indices] = -self.grad_potential(q)
        f[:, self.position_indices] = p / self.mass_diag
        return f

    def _jacobian(self, u):
        n = u.shape[0]
        _, q = self._split(u)
        hess = self.hess_potential(q)
        jac = np.zeros((n, self.dim, self.dim))
        mom, pos = self.momentum_indices, self.position_indices
        jac[:, mom[:, None], pos[None, :]] = -hess
        jac[:, pos, mom] = 1.0 / self.mass_diag
        return jac

    def _curvature(self, u):
        p, q = self._split(u)
        qdot = p / self.mass_diag
        hess = self.hess_potential(q)
        g = np.zeros_like(u)
        g[:, self.momentum_indices] = -np.einsum("nij,nj->ni", hess, qdot)
        g[:, self.position_indices] = -self.grad_potential(q) / self.mass_diag
        return g

    def _curvature_jacobian(self, u):
        n = u.shape[0]
        p, q = self._split(u)
        qdot = p / self.mass_diag
        hess = self.hess_potential(q)
        third = self.third_potential_action(q, qdot)
        jac = np.zeros((n, self.dim, self.dim))
        mom, pos = self.momentum_indices, self.position_indices
        jac[:, mom[:, None], mom[None, :]] = -hess / self.mass_diag
        jac[:, mom[:, None], pos[None, :]] = -third
        jac[:, pos[:, None], pos[None, :]] = -hess / self.mass_diag[:, None]
        return jac


class HarmonicOscillator(SeparableSystem):
    """H = p^2/2 + q^2/2 with state ordering u = (p, q)."""

    name = "harmonic"

    def __init__(self):
        super().__init__(2, momentum_indices=[0], position_indices=[1], mass_diag=[1.0])

    def potential(self, q):
        return 0.5 * q[:, 0] ** 2

    def grad_potential(self, q):
        return q.copy()

    def hess_potential(self, q):
        return np.ones((q.shape[0], 1, 1))

    def third_potential_action(self, q, w):
        return np.zeros((q.shape[0], 1, 1))


class NearlyPeriodicOscillators(SeparableSystem):
    """Two coupled oscillators with time-scale ratio eps.

    State ordering u = (p1, p2, q1, q2).  The (p1, q1) oscillator has unit
    frequency; (p2, q2) evolves a factor eps slower.  The coupling potential
    is W(q1, q2) = q1 q2 sin(2 q1 + 2 q2), weighted by eps.

    H = (q1^2 + p1^2)/2 + eps (q2^2 + p2^2)/2 + eps W(q1, q2), which is
    separable with mass matrix M = diag(1, 1/eps).
    """

    name = "npco"

    def __init__(self, eps=0.05):
        if eps <= 0:
            raise ParameterError("npco requires eps > 0")
        super().__init__(
            4, momentum_indices=[0, 1], position_indices=[2, 3], mass_diag=[1.0, 1.0 / eps]
        )
        self.eps = float(eps)
        self.params = {"eps": self.eps}
        self.fast_indices = np.array([0, 2])
        self.slow_indices = np.array([1, 3])

    @staticmethod
    def _coupling(q1, q2, order):
        """Derivatives of W = q1 q2 sin(2 q1 + 2 q2) up to the given order."""
        s = np.sin(2.0 * (q1 + q2))
        c = np.cos(2.0 * (q1 + q2))
        out = {"w": q1 * q2 * s}
        if order >= 1:
            out["w1"] = q2 * s + 2.0 * q1 * q2 * c
            out["w2"] = q1 * s + 2.0 * q1 * q2 * c
        if order >= 2:
            out["w11"] = 4.0 * q2 * c - 4.0 * q1 * q2 * s
            out["w12"] = s + 2.0 * (q1 + q2) * c - 4.0 * q1 * q2 * s
            out["w22"] = 4.0 * q1 * c - 4.0 * q1 * q2 * s
        if order >= 3:
            out["w111"] = -12.0 * q2 * s - 8.0 * q1 * q2 * c
            out["w112"] = 4.0 * c - (8.0 * q2 + 4.0 * q1) * s - 8.0 * q1 * q2 * c
            out["w122"] = 4.0 * c - (8.0 * q1 + 4.0 * q2) * s - 8.0 * q1 * q2 * c
            out["w222"] = -12.0 * q1 * s - 8.0 * q1 * q2 * c
        return out

    def potential(self, q):
        w = self._coupling(q[:, 0], q[:, 1], 0)["w"]
        return 0.5 * q[:, 0] ** 2 + 0.5 * self.eps * q[:, 1] ** 2 + self.eps * w

    def grad_potential(self, q):
        d = self._coupling(q[:, 0], q[:, 1], 1)
        e = self.eps
        return np.stack([q[:, 0] + e * d["w1"], e * q[:, 1] + e * d["w2"]], axis=1)

    def hess_potential(self, q):
        d = self._coupling(q[:, 0], q[:, 1], 2)
        e = self.eps
        n = q.shape[0]
        hess = np.empty((n, 2, 2))
        hess[:, 0, 0] = 1.0 + e * d["w11"]
        hess[:, 0, 1] = e * d["w12"]
        hess[:, 1, 0] = e * d["w12"]
        hess[:, 1, 1] = e + e * d["w22"]
        return hess

    def third_potential_action(self, q, w):
        d = self._coupling(q[:, 0], q[:, 1], 3)
        e = self.eps
        n = q.shape[0]
        w0, w1 = w[:, 0], w[:, 1]
        out = np.empty((n, 2, 2))
        out[:, 0, 0] = e * (d["w111"] * w0 + d["w112"] * w1)
        out[:, 0, 1] = e * (d["w112"] * w0 + d["w122"] * w1)
        out[:, 1, 0] = e * (d["w112"] * w0 + d["w122"] * w1)
        out[:, 1, 1] = e * (d["w122"] * w0 + d["w222"] * w1)
        return out


class FermiPastaUlam(SeparableSystem):
    """FPUT chain of 2m particles in slow/fast normal-mode coordinates.

    State ordering u = (y_s, x_s, y_f, x_f), each block of length m, so the
    energy-balanced norm blocks (I_{3m}, omega I_m) line up with the state
    layout.  The momenta are y = (y_s, y_f) with unit masses; the potential
    combines the end springs, the stiff springs of frequency omega, and the
    quartic couplings.
    """

    name = "fput"

    def __init__(self, omega=50.0, m=3):
        if omega <= 0:
            raise ParameterError("fput requires omega > 0")
        m = int(m)
        if m < 2:
            raise ParameterError("fput requires at least m = 2 spring pairs")
        mom = np.concatenate([np.arange(m), np.arange(2 * m, 3 * m)])
        pos = np.concatenate([np.arange(m, 2 * m), np.arange(3 * m, 4 * m)])
        super().__init__(4 * m, momentum_indices=mom, position_indices=pos, mass_diag=np.ones(2 * m))
        self.omega = float(omega)
        self.m = m
        self.params = {"omega": self.omega, "m": m}
        self.slow_indices = np.arange(2 * m)
        self.fast_indices = np.arange(2 * m, 4 * m)
        # Quartic bond directions over the gathered positions z = (x_s, x_f):
        # end bonds (x_s1 - x_f1), (x_sm + x_fm) and the m-1 couplings.
        bonds = np.zeros((2 + m - 1, 2 * m))
        bonds[0, 0] = 1.0
        bonds[0, m] = -1.0
        bonds[1, m - 1] = 1.0
        bonds[1, 2 * m - 1] = 1.0
        for i in range(m - 1):
            bonds[2 + i, i + 1] = 1.0
            bonds[2 + i, m + i + 1] = -1.0
            bonds[2 + i, i] = -1.0
            bonds[2 + i, m + i] = -1.0
        self._bonds = bonds
        stiff = np.zeros(2 * m)
        stiff[m:] = self.omega ** 2
        self._stiff_diag = stiff

    def potential(self, q):
        b = q @ self._bonds.T
        return 0.25 * np.sum(b ** 4, axis=1) + 0.5 * np.sum(self._stiff_diag * q * q, axis=1)

    def grad_potential(self, q):
        b = q @ self._bonds.T
        return (b ** 3) @ self._bonds + self._stiff_diag * q

    def hess_potential(self, q):
        b = q @ self._bonds.T
        hess = 3.0 * np.einsum("nb,bi,bj->nij", b ** 2, self._bonds, self._bonds)
        hess += np.diag(self._stiff_diag)
        return hess

    def third_potential_action(self, q, w):
        b = q @ self._bonds.T
        bw = w @ self._bonds.T
        return 6.0 * np.einsum("nb,bi,bj->nij", b * bw, self._bonds, self._bonds)

    def stiff_spring_energies(self, u):
        """Per-spring energies I_j = (y_fj^2 + omega^2 x_fj^2)/2 and their sum."""
        arr, single = _as_batch(u, self.dim)
        yf = arr[:, 2 * self.m : 3 * self.m]
        xf = arr[:, 3 * self.m : 4 * self.m]
        energies = 0.5 * (yf ** 2 + self.omega ** 2 * xf ** 2)
        total = np.sum(energies, axis=1)
        return _unbatch(energies, single), _unbatch(total, single)


class AlphaParticle(HamiltonianSystem):
    """Planar charged-particle motion in a vertical magnetic field.

    State ordering u = (vx, vy, x, y) with

        vx' = B(x, y) vy,   vy' = -B(x, y) vx,   x' = eps vx,   y' = eps vy,

    B(x, y) = b0 + a1 cos(k1 x + k2 y) + a2 cos(k3 x + k4 y).  The system is
    non-canonical; the conserved energy is the squared speed, H = |v|^2 / 2.
    The scale parameter eps is stored as a default but every evaluator
    accepts a per-call override (scalar or per-row array) so flow maps can
    be trained across a range of eps values.
    """

    name = "alpha"

    def __init__(self, eps=0.2, b0=1.0, a1=0.5, a2=0.5, k=(1.0, 0.0, 0.0, 1.0)):
        if eps < 0:
            raise ParameterError("alpha requires eps >= 0")
        super().__init__(4)
        self.eps = float(eps)
        self.b0 = float(b0)
        self.a1 = float(a1)
        self.a2 = float(a2)
        self.k = tuple(float(v) for v in k)
        if len(self.k) != 4:
            raise ParameterError("alpha magnetic field needs four wave numbers")
        self.params = {"eps": self.eps, "b0": self.b0, "a1": self.a1, "a2": self.a2, "k": self.k}
        self.fast_indices = np.array([0, 1])
        self.slow_indices = np.array([2, 3])

    def _eps_col(self, eps, n):
        e = self.eps if eps is None else eps
        return np.broadcast_to(np.asarray(e, dtype=float), (n,))

    def field_strength(self, x, y, order=0):
        """B and, for order >= 1, its spatial derivatives at (x, y)."""
        k1, k2, k3, k4 = self.k
        t1 = k1 * x + k2 * y
        t2 = k3 * x + k4 * y
        c1, c2 = np.cos(t1), np.cos(t2)
        out = {"b": self.b0 + self.a1 * c1 + self.a2 * c2}
        if order >= 1:
            s1, s2 = np.sin(t1), np.sin(t2)
            out["bx"] = -self.a1 * k1 * s1 - self.a2 * k3 * s2
            out["by"] = -self.a1 * k2 * s1 - self.a2 * k4 * s2
        if order >= 2:
            out["bxx"] = -self.a1 * k1 * k1 * c1 - self.a2 * k3 * k3 * c2
            out["bxy"] = -self.a1 * k1 * k2 * c1 - self.a2 * k3 * k4 * c2
            out["byy"] = -self.a1 * k2 * k2 * c1 - self.a2 * k4 * k4 * c2
        return out

    def _hamiltonian(self, u):
        return 0.5 * (u[:, 0] ** 2 + u[:, 1] ** 2)

    def _grad_hamiltonian(self, u):
        g = np.zeros_like(u)
        g[:, 0] = u[:, 0]
        g[:, 1] = u[:, 1]
        return g

    def hamiltonian_hessian(self, u):
        arr, single = _as_batch(u, self.dim)
        h = np.zeros((arr.shape[0], 4, 4))
        h[:, 0, 0] = 1.0
        h[:, 1, 1] = 1.0
        return _unbatch(h, single)

    def vector_field(self, u, eps=None):
        arr, single = _as_batch(u, self.dim)
        return _unbatch(self._vector_field(arr, eps), single)

    def jacobian(self, u, eps=None):
        arr, single = _as_batch(u, self.dim)
        return _unbatch(self._jacobian(arr, eps), single)

    def curvature(self, u, eps=None):
        arr, single = _as_batch(u, self.dim)
        return _unbatch(self._curvature(arr, eps), single)

    def curvature_jacobian(self, u, eps=None):
        arr, single = _as_batch(u, self.dim)
        return _unbatch(self._curvature_jacobian(arr, eps), single)

    def _vector_field(self, u, eps=None):
        e = self._eps_col(eps, u.shape[0])
        vx, vy, x, y = u.T
        b = self.field_strength(x, y)["b"]
        return np.stack([b * vy, -b * vx, e * vx, e * vy], axis=1)

    def _jacobian(self, u, eps=None):
        e = self._eps_col(eps, u.shape[0])
        vx, vy, x, y = u.T
        d = self.field_strength(x, y, order=1)
        n = u.shape[0]
        jac = np.zeros((n, 4, 4))
        jac[:, 0, 1] = d["b"]
        jac[:, 0, 2] = d["bx"] * vy
        jac[:, 0, 3] = d["by"] * vy
        jac[:, 1, 0] = -d["b"]
        jac[:, 1, 2] = -d["bx"] * vx
        jac[:, 1, 3] = -d["by"] * vx
        jac[:, 2, 0] = e
        jac[:, 3, 1] = e
        return jac

    def _curvature(self, u, eps=None):
        e = self._eps_col(eps, u.shape[0])
        vx, vy, x, y = u.T
        d = self.field_strength(x, y, order=1)
        b = d["b"]
        drift = d["bx"] * vx + d["by"] * vy
        return np.stack(
            [
                -b * b * vx + e * vy * drift,
                -b * b * vy - e * vx * drift,
                e * b * vy,
                -e * b * vx,
            ],
            axis=1,
        )

    def _curvature_jacobian(self, u, eps=None):
        e = self._eps_col(eps, u.shape[0])
        vx, vy, x, y = u.T
        d = self.field_strength(x, y, order=2)
        b, bx, by = d["b"], d["bx"], d["by"]
        drift = bx * vx + by * vy
        drift_x = d["bxx"] * vx + d["bxy"] * vy
        drift_y = d["bxy"] * vx + d["byy"] * vy
        n = u.shape[0]
        jac = np.zeros((n, 4, 4))
        jac[:, 0, 0] = -b * b + e * vy * bx
        jac[:, 0, 1] = e * (drift + vy * by)
        jac[:, 0, 2] = -2.0 * b * bx * vx + e * vy * drift_x
        jac[:, 0, 3] = -2.0 * b * by * vx + e * vy * drift_y
        jac[:, 1, 0] = -e * (drift + vx * bx)
        jac[:, 1, 1] = -b * b - e * vx * by
        jac[:, 1, 2] = -2.0 * b * bx * vy - e * vx * drift_x
        jac[:, 1, 3] = -2.0 * b * by * vy - e * vx * drift_y
        jac[:, 2, 1] = e * b
        jac[:, 2, 2] = e * bx * vy
        jac[:, 2, 3] = e * by * vy
        jac[:, 3, 0] = -e * b
        jac[:, 3, 2] = -e * bx * vx
        jac[:, 3, 3] = -e * by * vx
        return jac


class LinearSystem(HamiltonianSystem):
    """Test system u' = A u of arbitrary dimension (no energy defined)."""

    name = "linear"

    def __init__(self, matrix):
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        if matrix.shape[0] != matrix.shape[1]:
            raise ParameterError("linear system matrix must be square")
        super().__init__(matrix.shape[0])
        self.matrix = matrix

    def _vector_field(self, u):
        return u @ self.matrix.T

    def _jacobian(self, u):
        return np.broadcast_to(self.matrix, (u.shape[0],) + self.matrix.shape).copy()

    def _curvature(self, u):
        return u @ (self.matrix @ self.matrix).T

    def _curvature_jacobian(self, u):
        a2 = self.matrix @ self.matrix
        return np.broadcast_to(a2, (u.shape[0],) + a2.shape).copy()


def make_system(name, params=None):
    """Factory over the named benchmark systems.

    Parameters
    ----------
    name : {"harmonic", "npco", "fput", "alpha"}
    params : dict, optional
        System parameters; unknown keys are rejected.
    """
    params = dict(params or {})
    builders = {
        "harmonic": (HarmonicOscillator, set()),
        "npco": (NearlyPeriodicOscillators, {"eps"}),
        "fput": (FermiPastaUlam, {"omega", "m"}),
        "alpha": (AlphaParticle, {"eps", "b0", "a1", "a2", "k"}),
    }
    if name not in builders:
        raise ParameterError(f"unknown system '{name}'; expected one of {sorted(builders)}")
    cls, allowed = builders[name]
    unknown = set(params) - allowed
    if unknown:
        raise ParameterError(f"unknown parameters for '{name}': {sorted(unknown)}")
    return cls(**params)


def canonical_vector_field(system, u):
    """J^{-1} grad H(u) using the system's conjugate-pair index layout.

    For canonical systems this must agree with ``system.vector_field`` to
    machine precision; it exists as the independent side of that check.
    """
    if not system.is_canonical:
        raise ParameterError(f"{system.name} is not canonical")
    arr, single = _as_batch(u, system.dim)
    grad = system._grad_hamiltonian(arr)
    f = np.zeros_like(arr)
    f[:, system.momentum_indices] = -grad[:, system.position_indices]
    f[:, system.position_indices] = grad[:, system.momentum_indices]
    return _unbatch(f, single)


# Thin functional aliases for the evaluator surface.
def eval_hamiltonian(system, u):
    return system.hamiltonian(u)


def vector_field(system, u):
    return system.vector_field(u)


def jacobian(system, u):
    return system.jacobian(u)


def stiff_spring_energies(system, u):
    if not isinstance(system, FermiPastaUlam):
        raise ParameterError("stiff-spring energies are defined for the fput system only")
    return system.stiff_spring_energies(u)
