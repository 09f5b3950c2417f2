"""Classical one-step integrators in implicit-explicit form.

Each scheme provides three faces:

* fast numpy stepping (``step``, used by drivers, reference solves, and the
  sampler's proposal flows), batched over rows;
* the implicit/explicit map pair ``phi_im``/``phi_ex`` with analytic
  Jacobians, which the critical-point analysis consumes (a one-step method
  advances u by solving phi_im(u_next) = phi_ex(u_curr));
* taped map evaluations (``phi_ex_tensor`` etc.) used when a scheme update
  sits inside a training loss and must be differentiated.

The implicit midpoint rule is not an implicit/explicit pair (its update
couples both endpoints through the averaged state), so it overrides the
residual directly and flags ``imex = False``.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .errors import ParameterError, StepFailureError, ToleranceError, UnsupportedSchemeError
from .systems import FermiPastaUlam, _as_batch, _unbatch


def _require_separable(system, scheme_name):
    if not system.is_separable:
        raise UnsupportedSchemeError(f"{scheme_name} needs a separable system, got '{system.name}'")


class Scheme:
    """Base descriptor: name, order, default step size, solver settings."""

    name = "abstract"
    order = 0
    imex = True
    is_explicit = True

    def __init__(self, h=None, newton_tol=1e-12, newton_max_iter=50):
        if h is not None and h <= 0:
            raise ParameterError("scheme step size must be positive")
        self.h = h
        self.newton_tol = float(newton_tol)
        self.newton_max_iter = int(newton_max_iter)

    def _h(self, h):
        if h is None:
            if self.h is None:
                raise ParameterError(f"{self.name}: no step size bound or given")
            return self.h
        return float(h)

    def __repr__(self):
        return f"{type(self).__name__}(h={self.h})"

    # numpy faces -------------------------------------------------------
    def step(self, system, u, h=None, return_info=False):
        arr, single = _as_batch(u, system.dim)
        out, iters, res = self._step(system, arr, self._h(h))
        out = _unbatch(out, single)
        return (out, iters, res) if return_info else out

    def phi_ex(self, system, u, h=None):
        arr, single = _as_batch(u, system.dim)
        return _unbatch(self._phi_ex(system, arr, self._h(h)), single)

    def phi_im(self, system, u, h=None):
        arr, single = _as_batch(u, system.dim)
        return _unbatch(self._phi_im(system, arr, self._h(h)), single)

    def d_phi_ex(self, system, u, h=None):
        arr, single = _as_batch(u, system.dim)
        return _unbatch(self._d_phi_ex(system, arr, self._h(h)), single)

    def d_phi_im(self, system, u, h=None):
        arr, single = _as_batch(u, system.dim)
        return _unbatch(self._d_phi_im(system, arr, self._h(h)), single)

    # defaults: explicit scheme, phi_im = identity
    def _phi_im(self, system, u, h):
        return u.copy()

    def _d_phi_im(self, system, u, h):
        return np.broadcast_to(np.eye(system.dim), (u.shape[0], system.dim, system.dim)).copy()

    def _step(self, system, u, h):
        raise NotImplementedError

    def _phi_ex(self, system, u, h):
        raise NotImplementedError

    def _d_phi_ex(self, system, u, h):
        raise NotImplementedError

    # taped faces -------------------------------------------------------
    def phi_ex_tensor(self, system, u, h=None, eps=None):
        raise NotImplementedError

    def phi_im_tensor(self, system, u, h=None, eps=None):
        return u

    def residual_tensor(self, system, phi_t, phi_th, h=None, eps=None):
        """phi_im(Phi(u, t+h)) - phi_ex(Phi(u, t)) on the tape."""
        h = self._h(h)
        return ad.sub(
            self.phi_im_tensor(system, phi_th, h, eps=eps),
            self.phi_ex_tensor(system, phi_t, h, eps=eps),
        )


class ForwardEuler(Scheme):
    name = "forward_euler"
    order = 1

    def _step(self, system, u, h):
        return u + h * system.vector_field(u), np.zeros(u.shape[0], int), np.zeros(u.shape[0])

    def _phi_ex(self, system, u, h):
        return u + h * system.vector_field(u)

    def _d_phi_ex(self, system, u, h):
        return np.eye(system.dim) + h * system.jacobian(u)

    def phi_ex_tensor(self, system, u, h=None, eps=None):
        h = self._h(h)
        return ad.add(u, ad.mul(ad.system_field(system, u, eps=eps), h))


class VelocityVerlet(Scheme):
    """Half-kick / drift / half-kick for separable systems."""

    name = "velocity_verlet"
    order = 2

    def _force(self, system, q):
        return -system.grad_potential(q)

    def _step(self, system, u, h):
        _require_separable(system, self.name)
        mom, pos = system.momentum_indices, system.position_indices
        p, q = u[:, mom], u[:, pos]
        p_half = p + 0.5 * h * self._force(system, q)
        q_next = q + h * p_half / system.mass_diag
        p_next = p_half + 0.5 * h * self._force(system, q_next)
        out = np.empty_like(u)
        out[:, mom] = p_next
        out[:, pos] = q_next
        return out, np.zeros(u.shape[0], int), np.zeros(u.shape[0])

    def _phi_ex(self, system, u, h):
        _require_separable(system, self.name)
        mom, pos = system.momentum_indices, system.position_indices
        p, q = u[:, mom], u[:, pos]
        kicked = p + 0.5 * h * self._force(system, q)
        out = np.empty_like(u)
        out[:, pos] = q + h * kicked / system.mass_diag
        out[:, mom] = kicked
        return out

    def _phi_im(self, system, u, h):
        _require_separable(system, self.name)
        mom, pos = system.momentum_indices, system.position_indices
        p, q = u[:, mom], u[:, pos]
        out = np.empty_like(u)
        out[:, pos] = q
        out[:, mom] = p - 0.5 * h * self._force(system, q)
        return out

    def _d_phi_ex(self, system, u, h):
        _require_separable(system, self.name)
        mom, pos = system.momentum_indices, system.position_indices
        n = u.shape[0]
        hess = system.hess_potential(u[:, pos])
        inv_m = 1.0 / system.mass_diag
        jac = np.zeros((n, system.dim, system.dim))
        jac[:, pos, mom] = h * inv_m
        jac[:, pos[:, None], pos[None, :]] = -0.5 * h * h * hess * inv_m[:, None]
        jac[:, pos, pos] += 1.0
        jac[:, mom, mom] = 1.0
        jac[:, mom[:, None], pos[None, :]] += -0.5 * h * hess
        return jac

    def _d_phi_im(self, system, u, h):
        _require_separable(system, self.name)
        mom, pos = system.momentum_indices, system.position_indices
        n = u.shape[0]
        hess = system.hess_potential(u[:, pos])
        jac = np.zeros((n, system.dim, system.dim))
        jac[:, pos, pos] = 1.0
        jac[:, mom, mom] = 1.0
        jac[:, mom[:, None], pos[None, :]] = 0.5 * h * hess
        return jac

    def phi_ex_tensor(self, system, u, h=None, eps=None):
        _require_separable(system, self.name)
        h = self._h(h)
        mom, pos = system.momentum_indices, system.position_indices
        p = ad.take_cols(u, mom)
        q = ad.take_cols(u, pos)
        force = ad.mul(ad.grad_potential(system, q), -1.0)
        kicked = ad.add(p, ad.mul(force, 0.5 * h))
        q_next = ad.add(q, ad.mul(kicked, h / system.mass_diag))
        return ad.add(
            ad.scatter_cols(kicked, mom, system.dim),
            ad.scatter_cols(q_next, pos, system.dim),
        )

    def phi_im_tensor(self, system, u, h=None, eps=None):
        _require_separable(system, self.name)
        h = self._h(h)
        mom, pos = system.momentum_indices, system.position_indices
        p = ad.take_cols(u, mom)
        q = ad.take_cols(u, pos)
        anti_kick = ad.add(p, ad.mul(ad.grad_potential(system, q), 0.5 * h))
        return ad.add(
            ad.scatter_cols(anti_kick, mom, system.dim),
            ad.scatter_cols(q, pos, system.dim),
        )


class RungeKutta4(Scheme):
    name = "rk4"
    order = 4

    def _stages(self, system, u, h):
        k1 = system.vector_field(u)
        k2 = system.vector_field(u + 0.5 * h * k1)
        k3 = system.vector_field(u + 0.5 * h * k2)
        k4 = system.vector_field(u + h * k3)
        return k1, k2, k3, k4

    def _step(self, system, u, h):
        k1, k2, k3, k4 = self._stages(system, u, h)
        out = u + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        return out, np.zeros(u.shape[0], int), np.zeros(u.shape[0])

    def _phi_ex(self, system, u, h):
        return self._step(system, u, h)[0]

    def _d_phi_ex(self, system, u, h):
        eye = np.eye(system.dim)
        k1, k2, k3, _ = self._stages(system, u, h)
        d1 = system.jacobian(u)
        d2 = np.einsum("nij,njk->nik", system.jacobian(u + 0.5 * h * k1), eye + 0.5 * h * d1)
        d3 = np.einsum("nij,njk->nik", system.jacobian(u + 0.5 * h * k2), eye + 0.5 * h * d2)
        d4 = np.einsum("nij,njk->nik", system.jacobian(u + h * k3), eye + h * d3)
        return eye + (h / 6.0) * (d1 + 2.0 * d2 + 2.0 * d3 + d4)

    def phi_ex_tensor(self, system, u, h=None, eps=None):
        h = self._h(h)
        k1 = ad.system_field(system, u, eps=eps)
        k2 = ad.system_field(system, ad.add(u, ad.mul(k1, 0.5 * h)), eps=eps)
        k3 = ad.system_field(system, ad.add(u, ad.mul(k2, 0.5 * h)), eps=eps)
        k4 = ad.system_field(system, ad.add(u, ad.mul(k3, h)), eps=eps)
        acc = ad.add(ad.add(k1, k4), ad.mul(ad.add(k2, k3), 2.0))
        return ad.add(u, ad.mul(acc, h / 6.0))


def _newton_solve(system, u, h, residual, jacobian, tol, max_iter):
    """Rowwise Newton iteration for implicit one-step updates."""
    v = u + h * system.vector_field(u)  # forward Euler predictor
    res = residual(v)
    norms = np.linalg.norm(res, axis=1)
    for iteration in range(max_iter):
        if np.all(norms < tol):
            return v, iteration, float(np.max(norms, initial=0.0))
        jac = jacobian(v)
        try:
            delta = np.linalg.solve(jac, res[..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise StepFailureError(
                f"singular Newton matrix in implicit solve: {exc}",
                last_iterate=v,
                residual_norm=float(np.max(norms)),
            ) from None
        v = v - delta
        res = residual(v)
        norms = np.linalg.norm(res, axis=1)
    raise StepFailureError(
        f"implicit solve did not reach tol={tol} in {max_iter} iterations",
        last_iterate=v,
        residual_norm=float(np.max(norms)),
    )


class ImplicitMidpoint(Scheme):
    """Solves v = u + h f((u + v)/2) by Newton from the Euler predictor."""

    name = "implicit_midpoint"
    order = 2
    imex = False
    is_explicit = False

    def _step(self, system, u, h):
        if h == 0.0:
            return u.copy(), np.zeros(u.shape[0], int), np.zeros(u.shape[0])
        eye = np.eye(system.dim)

        def residual(v):
            return v - u - h * system.vector_field(0.5 * (u + v))

        def jacobian(v):
            return eye - 0.5 * h * system.jacobian(0.5 * (u + v))

        v, iters, res = _newton_solve(
            system, u, h, residual, jacobian, self.newton_tol, self.newton_max_iter
        )
        return v, np.full(u.shape[0], iters), np.full(u.shape[0], res)

    def _phi_ex(self, system, u, h):
        raise UnsupportedSchemeError("implicit midpoint has no implicit/explicit split")

    _phi_im = _phi_ex
    _d_phi_ex = _phi_ex
    _d_phi_im = _phi_ex

    def residual_tensor(self, system, phi_t, phi_th, h=None, eps=None):
        h = self._h(h)
        mid = ad.mul(ad.add(phi_t, phi_th), 0.5)
        drift = ad.mul(ad.system_field(system, mid, eps=eps), h)
        return ad.sub(ad.sub(phi_th, phi_t), drift)


class ImplicitEuler(Scheme):
    """phi_im(v) = v - h f(v), phi_ex = identity."""

    name = "implicit_euler"
    order = 1
    is_explicit = False

    def _step(self, system, u, h):
        if h == 0.0:
            return u.copy(), np.zeros(u.shape[0], int), np.zeros(u.shape[0])
        eye = np.eye(system.dim)

        def residual(v):
            return v - u - h * system.vector_field(v)

        def jacobian(v):
            return eye - h * system.jacobian(v)

        v, iters, res = _newton_solve(
            system, u, h, residual, jacobian, self.newton_tol, self.newton_max_iter
        )
        return v, np.full(u.shape[0], iters), np.full(u.shape[0], res)

    def _phi_ex(self, system, u, h):
        return u.copy()

    def _d_phi_ex(self, system, u, h):
        return np.broadcast_to(np.eye(system.dim), (u.shape[0], system.dim, system.dim)).copy()

    def _phi_im(self, system, u, h):
        return u - h * system.vector_field(u)

    def _d_phi_im(self, system, u, h):
        return np.eye(system.dim) - h * system.jacobian(u)

    def phi_ex_tensor(self, system, u, h=None, eps=None):
        return u

    def phi_im_tensor(self, system, u, h=None, eps=None):
        h = self._h(h)
        return ad.sub(u, ad.mul(ad.system_field(system, u, eps=eps), h))


_SCHEMES = {
    "forward_euler": ForwardEuler,
    "fe": ForwardEuler,
    "velocity_verlet": VelocityVerlet,
    "vv": VelocityVerlet,
    "rk4": RungeKutta4,
    "implicit_midpoint": ImplicitMidpoint,
    "midpoint": ImplicitMidpoint,
    "implicit_euler": ImplicitEuler,
}


def make_scheme(name, h=None, **kwargs):
    try:
        cls = _SCHEMES[name]
    except KeyError:
        raise ParameterError(f"unknown scheme '{name}'; expected one of {sorted(set(_SCHEMES))}")
    return cls(h=h, **kwargs)


# Functional step surface
def forward_euler_step(system, u, h):
    return ForwardEuler().step(system, u, h)


def velocity_verlet_step(system, u, h):
    return VelocityVerlet().step(system, u, h)


def implicit_midpoint_step(system, u, h, tol=1e-12, max_iter=50):
    return ImplicitMidpoint(newton_tol=tol, newton_max_iter=max_iter).step(system, u, h)


def rk4_step(system, u, h):
    return RungeKutta4().step(system, u, h)


def implicit_euler_step(system, u, h, tol=1e-12, max_iter=50):
    return ImplicitEuler(newton_tol=tol, newton_max_iter=max_iter).step(system, u, h)


class Trajectory:
    """Uniform-grid trajectory with per-step implicit-solver diagnostics."""

    def __init__(self, times, states, newton_iterations=None, newton_residuals=None):
        self.times = np.asarray(times, dtype=float)
        self.states = np.asarray(states, dtype=float)
        n_steps = len(self.times) - 1
        self.newton_iterations = (
            np.zeros(n_steps, int) if newton_iterations is None else np.asarray(newton_iterations)
        )
        self.newton_residuals = (
            np.zeros(n_steps) if newton_residuals is None else np.asarray(newton_residuals)
        )
        if np.any(np.diff(self.times) <= 0):
            raise ParameterError("trajectory times must be strictly increasing")

    def __len__(self):
        return len(self.times)


def integrate(system, scheme, u0, h, n_steps, t0=0.0):
    """Drive ``scheme`` for ``n_steps`` uniform steps from u0."""
    if n_steps < 0:
        raise ParameterError("n_steps must be >= 0")
    u = np.asarray(u0, dtype=float)
    states = np.empty((n_steps + 1,) + u.shape)
    states[0] = u
    iters = np.zeros(n_steps, int)
    resid = np.zeros(n_steps)
    for k in range(n_steps):
        try:
            u, it, rs = scheme.step(system, u, h, return_info=True)
        except StepFailureError as exc:
            exc.step_index = k
            raise
        states[k + 1] = u
        iters[k] = np.max(it)
        resid[k] = np.max(rs)
    times = t0 + h * np.arange(n_steps + 1)
    return Trajectory(times, states, iters, resid)


def _advance(system, scheme, u, h, n_steps):
    """Endpoint-only stepping (no storage)."""
    for _ in range(n_steps):
        u = scheme.step(system, u, h)
    return u


_FPUT_REFERENCE_HORIZON = 500.0


def reference_flow(system, u0, t, tol=1e-10, max_steps=1 << 21):
    """High-accuracy approximation of the exact flow at time t.

    Generic systems: RK4 with the step halved until the Richardson error
    estimate ||u_h - u_{h/2}|| / (2^4 - 1) drops below tol.  FPUT instead
    uses velocity Verlet at the stiff-resolving steps (2^-11 for omega <=
    100, else 2^-15); double precision makes longer FPUT horizons
    unreliable, so t is capped at 500.
    """
    if t < 0:
        raise ParameterError("reference_flow requires t >= 0")
    u0 = np.asarray(u0, dtype=float)
    if t == 0.0:
        return u0.copy()

    if isinstance(system, FermiPastaUlam):
        if t > _FPUT_REFERENCE_HORIZON:
            raise ToleranceError(
                f"FPUT reference flows are capped at T <= {_FPUT_REFERENCE_HORIZON}"
            )
        h_target = 2.0 ** -11 if system.omega <= 100.0 else 2.0 ** -15
        n = max(1, int(np.ceil(t / h_target)))
        return _advance(system, VelocityVerlet(), u0, t / n, n)

    scheme = RungeKutta4()
    n = max(16, int(np.ceil(t / 0.1)))
    coarse = _advance(system, scheme, u0, t / n, n)
    while 2 * n <= max_steps:
        n *= 2
        fine = _advance(system, scheme, u0, t / n, n)
        err = np.max(np.linalg.norm(np.atleast_2d(fine - coarse), axis=-1)) / 15.0
        if err < tol:
            return fine
        coarse = fine
    raise ToleranceError(f"reference_flow could not reach tol={tol} within {max_steps} steps")
