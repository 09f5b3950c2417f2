"""Training objectives for flow maps.

The residual loss couples the learned map to a one-step scheme: on a time
grid t_n (spacing Delta t, shift tau) it is

    (h/2) * mean_u sum_n || phi_im(Phi(u, t_n + h)) - phi_ex(Phi(u, t_n)) ||^2,

the Riemann-sum form of the continuous functional; with randomly sampled
times the functional is (1/2) * mean over (u, t) draws, matching a
probability measure on [0, T].  The exact-residual baseline replaces the
scheme update with dPhi/dt - f(Phi), using the tape's forward sweep on the
t input (finite differences only for maps that cannot provide a tangent).

The data loss composes a fixed-step map k times against reference states,
1/(2S) sum_k mean || Phi^k(u) - phi_{k T0}(u) ||^2, and the joint objective
adds the residual of the T0-centered composition with its collocation times
shifted to start at T0.

Norms are diagonal: plain l2, or the energy-balanced weighting that scales
the fast-position block by omega.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad
from .errors import ParameterError
from .integrators import reference_flow
from .optim import AdamConfig, AdamState, adam_update

_FD_TIME_STEP = 1e-6


@dataclass(frozen=True)
class NormSpec:
    """Diagonal norm: plain l2 or the (3m, m) energy-balanced weighting."""

    mode: str = "plain"
    omega: float = 1.0
    block_m: int | None = None

    def __post_init__(self):
        if self.mode not in ("plain", "energy_balanced"):
            raise ParameterError(f"unknown norm mode '{self.mode}'")
        if self.omega <= 0:
            raise ParameterError("norm weight omega must be positive")

    def weights(self, dim):
        if self.mode == "plain":
            return None
        m = self.block_m if self.block_m is not None else dim // 4
        if 4 * m != dim:
            raise ParameterError(f"energy-balanced norm needs dim = 4m, got {dim} with m={m}")
        w = np.ones(dim)
        w[3 * m :] = self.omega
        return w


def weighted_square_rows(residual, weights):
    """Row sums of the (weighted) squared residual, on the tape."""
    if weights is not None:
        residual = ad.mul(residual, weights[None, :])
    return ad.tsum(ad.mul(residual, residual), axis=1)


@dataclass
class CollocationSpec:
    """Where residuals are enforced: a time mode crossed with a phase mode.

    Time modes
    ----------
    grid     : n_times points covering [0, t_final], optional shift tau
               (a float, or "uniform" to draw tau in [0, h) each batch).
    uniform  : t ~ U(0, t_final) per sample.
    fixed    : the single time t = fixed_time.

    Phase modes
    -----------
    box      : uniform in an axis-aligned box, bounds (dim, 2).
    shell    : velocity block uniform on the annulus r in [r_min, r_max],
               remaining coordinates uniform in position_box.
    samples  : rows drawn (with replacement) from a provided array.
    """

    time_mode: str = "uniform"
    t_final: float | None = None
    n_times: int | None = None
    tau: object = 0.0
    fixed_time: float | None = None
    phase_mode: str = "box"
    box: object = None
    velocity_indices: object = (0, 1)
    r_min: float = 0.0
    r_max: float = 1.0
    position_box: object = None
    samples: object = None
    batch_size: int = 128
    eps_range: object = None

    def __post_init__(self):
        if self.time_mode not in ("grid", "uniform", "fixed"):
            raise ParameterError(f"unknown time mode '{self.time_mode}'")
        if self.phase_mode not in ("box", "shell", "samples"):
            raise ParameterError(f"unknown phase mode '{self.phase_mode}'")
        if self.time_mode in ("grid", "uniform"):
            if self.t_final is None or self.t_final <= 0:
                raise ParameterError("time modes grid/uniform need t_final > 0")
        if self.time_mode == "grid" and (self.n_times is None or self.n_times < 2):
            raise ParameterError("grid mode needs n_times >= 2")
        if self.time_mode == "fixed" and self.fixed_time is None:
            raise ParameterError("fixed mode needs fixed_time")
        if self.phase_mode == "shell" and not 0 <= self.r_min < self.r_max:
            raise ParameterError("shell needs 0 <= r_min < r_max")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")

    def grid_times(self, tau=0.0, horizon_scale=1.0):
        t_final = self.t_final * horizon_scale
        return np.linspace(0.0, t_final, self.n_times) + tau

    def grid_spacing(self):
        return self.t_final / (self.n_times - 1)

    def covers_time_domain(self, h):
        """Union of [t_n, t_n + h] covers [0, t_final] iff spacing <= h."""
        return self.time_mode == "grid" and self.grid_spacing() <= h

    def sample_phase(self, rng, dim):
        n = self.batch_size
        if self.phase_mode == "box":
            box = np.asarray(self.box, dtype=float)
            if box.shape != (dim, 2):
                raise ParameterError(f"box bounds must have shape ({dim}, 2)")
            u = rng.uniform(box[:, 0], box[:, 1], size=(n, dim))
        elif self.phase_mode == "shell":
            vel = np.asarray(self.velocity_indices, dtype=int)
            u = np.zeros((n, dim))
            direction = rng.standard_normal((n, len(vel)))
            direction /= np.linalg.norm(direction, axis=1, keepdims=True)
            radius = rng.uniform(self.r_min, self.r_max, size=(n, 1))
            u[:, vel] = radius * direction
            others = np.setdiff1d(np.arange(dim), vel)
            if len(others):
                pbox = np.asarray(self.position_box, dtype=float)
                if pbox.shape != (len(others), 2):
                    raise ParameterError(f"position_box must have shape ({len(others)}, 2)")
                u[:, others] = rng.uniform(pbox[:, 0], pbox[:, 1], size=(n, len(others)))
        else:
            pool = getattr(self.samples, "states", self.samples)
            pool = np.asarray(pool, dtype=float)
            if pool.ndim != 2 or pool.shape[1] != dim:
                raise ParameterError("sample pool has the wrong shape")
            u = pool[rng.integers(0, pool.shape[0], size=n)]
        return u

    def sample_eps(self, rng):
        if self.eps_range is None:
            return None
        lo, hi = self.eps_range
        return rng.uniform(lo, hi, size=self.batch_size)


def sample_collocation(spec, rng, dim, horizon_scale=1.0, tau_upper=None):
    """Draw one batch: (states, times, eps); times per the spec's time mode.

    ``horizon_scale`` shrinks the time horizon, for progressive collocation
    schedules that grow the trained window during optimization.  With
    ``tau = "uniform"`` the grid shift is drawn from [0, tau_upper) -- the
    scheme step h, so averaging over batches recovers the continuous-time
    functional; tau_upper falls back to the grid spacing.
    """
    rng = np.random.default_rng(rng)
    u = spec.sample_phase(rng, dim)
    if spec.time_mode == "grid":
        if spec.tau == "uniform":
            tau = rng.uniform(0.0, spec.grid_spacing() if tau_upper is None else tau_upper)
        else:
            tau = float(spec.tau)
        t = spec.grid_times(tau, horizon_scale=horizon_scale)
    elif spec.time_mode == "uniform":
        t = rng.uniform(0.0, spec.t_final * horizon_scale, size=spec.batch_size)
    else:
        t = np.full(spec.batch_size, float(spec.fixed_time))
    return u, t, spec.sample_eps(rng)


def _eval_map(flow_map, system, u, t, eps):
    return flow_map.eval_tensor(system, u, t, eps=eps)


def scheme_residual_tensor(flow_map, scheme, system, u, t, h, eps=None):
    """R_h at (u, t): needs map evaluations at t and t + h.

    Both time shifts go through one stacked map evaluation, halving the
    tape size relative to two separate forward passes.
    """
    n = u.value.shape[0]
    u2 = ad.concat([u, u], axis=0) if u._parents else ad.constant(
        np.concatenate([u.value, u.value], axis=0)
    )
    t2 = ad.constant(np.concatenate([t, t + h], axis=0))
    eps2 = None if eps is None else np.concatenate([eps, eps])
    phi_all = _eval_map(flow_map, system, u2, t2, eps2)
    phi_t = ad.take_rows(phi_all, 0, n)
    phi_th = ad.take_rows(phi_all, n, 2 * n)
    return scheme.residual_tensor(system, phi_t, phi_th, h, eps=eps)


def scheme_residual(flow_map, scheme, system, u, t, h=None, eps=None):
    """Numpy face of the scheme residual at states u and times t."""
    h = scheme._h(h)
    u = np.atleast_2d(np.asarray(u, dtype=float))
    t_col = np.broadcast_to(np.asarray(t, dtype=float).reshape(-1, 1), (u.shape[0], 1)).copy()
    with no_grad():
        if callable(flow_map) and not hasattr(flow_map, "eval_tensor"):
            phi_t = Tensor(np.stack([flow_map(ui, ti) for ui, ti in zip(u, t_col[:, 0])]))
            phi_th = Tensor(np.stack([flow_map(ui, ti + h) for ui, ti in zip(u, t_col[:, 0])]))
            res = scheme.residual_tensor(system, phi_t, phi_th, h, eps=eps)
        else:
            res = scheme_residual_tensor(flow_map, scheme, system, Tensor(u), t_col, h, eps=eps)
    return res.value


def exact_residual_tensor(flow_map, system, u, t, eps=None, fd_step=_FD_TIME_STEP):
    """dPhi/dt - f(Phi) on the tape.

    The time derivative is a directional finite difference on the t input
    (centered stencil, shifted forward where t < fd_step), which needs two
    extra map evaluations per batch on top of the primal one -- the cost
    overhead that distinguishes this baseline from scheme residuals.
    """
    t_lo = np.maximum(t - fd_step, 0.0)
    phi_lo = _eval_map(flow_map, system, u, ad.constant(t_lo), eps)
    phi_hi = _eval_map(flow_map, system, u, ad.constant(t_lo + 2.0 * fd_step), eps)
    phi = _eval_map(flow_map, system, u, ad.constant(t), eps)
    dphi = ad.mul(ad.sub(phi_hi, phi_lo), 0.5 / fd_step)
    return ad.sub(dphi, ad.system_field(system, phi, eps=eps))


def exact_residual(flow_map, system, u, t, eps=None):
    """Numpy face of the exact (PINN-style) residual."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    t = np.broadcast_to(np.asarray(t, dtype=float).reshape(-1, 1), (u.shape[0], 1)).copy()
    if hasattr(flow_map, "eval_tensor"):
        with no_grad():
            return exact_residual_tensor(flow_map, system, Tensor(u), t, eps=eps).value

    def phi(times):
        return np.stack([flow_map(ui, ti) for ui, ti in zip(u, times[:, 0])])

    step = _FD_TIME_STEP
    t_lo = np.maximum(t - step, 0.0)
    dphi = (phi(t_lo + 2.0 * step) - phi(t_lo)) / (2.0 * step)
    field = system.vector_field(phi(t)) if eps is None else system.vector_field(phi(t), eps=eps)
    return dphi - field


def _flatten_grid(u, times, eps):
    """Cross product of phase points with grid times, flattened to rows."""
    n_u, n_t = u.shape[0], len(times)
    u_rep = np.repeat(u, n_t, axis=0)
    t_rep = np.tile(times, n_u).reshape(-1, 1)
    eps_rep = None if eps is None else np.repeat(eps, n_t)
    return u_rep, t_rep, eps_rep


def _loss_over_grid(residual_fn, u, times, weights, quad_weight, eps):
    """quad_weight * mean_u sum_n of weighted square residual rows.

    Evaluates the whole (phase point, grid time) cross product as one
    batch; the per-u mean and per-time sum reduce to a flat sum over rows.
    """
    n_u = u.shape[0]
    u_rep, t_rep, eps_rep = _flatten_grid(u, times, eps)
    res = residual_fn(u_rep, t_rep, eps_rep)
    sq = weighted_square_rows(res, weights)
    return ad.mul(ad.tsum(sq), quad_weight / n_u)


def residual_loss(flow_map, scheme, system, colloc, norm=NormSpec(), rng=None, h=None,
                  time_shift=0.0, horizon_scale=1.0):
    """Monte Carlo / quadrature estimate of the scheme-residual functional.

    Grid mode uses the (h/2)-weighted sum over grid points; uniform and
    fixed modes average with the 1/2 prefactor of the probability-measure
    form.  ``time_shift`` offsets all times (the T0-centered composition
    trains on [T0, T0 + T]).
    """
    h = scheme._h(h)
    rng = np.random.default_rng(rng)
    u, t, eps = sample_collocation(colloc, rng, flow_map.dim,
                                   horizon_scale=horizon_scale, tau_upper=h)
    weights = norm.weights(flow_map.dim)

    if colloc.time_mode == "grid":
        def residual_fn(u_rep, t_rep, eps_rep):
            return scheme_residual_tensor(
                flow_map, scheme, system, ad.constant(u_rep), t_rep + time_shift, h,
                eps=eps_rep,
            )

        return _loss_over_grid(residual_fn, u, t, weights, 0.5 * h, eps)

    t_col = t.reshape(-1, 1) + time_shift
    res = scheme_residual_tensor(flow_map, scheme, system, ad.constant(u), t_col, h, eps=eps)
    return ad.mul(ad.tmean(weighted_square_rows(res, weights)), 0.5)


def exact_residual_loss(flow_map, system, colloc, norm=NormSpec(), rng=None,
                        fd_step=_FD_TIME_STEP):
    """Residual loss with the PINN-style exact residual in place of a scheme."""
    rng = np.random.default_rng(rng)
    u, t, eps = sample_collocation(colloc, rng, flow_map.dim)
    weights = norm.weights(flow_map.dim)
    if colloc.time_mode == "grid":
        def residual_fn(u_rep, t_rep, eps_rep):
            return exact_residual_tensor(flow_map, system, ad.constant(u_rep), t_rep,
                                         eps=eps_rep, fd_step=fd_step)

        return _loss_over_grid(residual_fn, u, t, weights, 0.5 * colloc.grid_spacing(), eps)
    res = exact_residual_tensor(flow_map, system, ad.constant(u), t.reshape(-1, 1), eps=eps,
                                fd_step=fd_step)
    return ad.mul(ad.tmean(weighted_square_rows(res, weights)), 0.5)


def rollout_targets(system, u0, t0, n_compose, tol=1e-10):
    """Reference states phi_{k t0}(u) for k = 1..n_compose, shape (S, n, dim)."""
    u0 = np.atleast_2d(np.asarray(u0, dtype=float))
    targets = np.empty((n_compose,) + u0.shape)
    cur = u0
    for k in range(n_compose):
        cur = np.atleast_2d(reference_flow(system, cur, t0, tol=tol))
        targets[k] = cur
    return targets


def data_loss(fixed_map, system, u0, targets, norm=NormSpec(), eps=None):
    """1/(2S) sum_k mean_u || Phi^k(u) - phi_{k T0}(u) ||^2 in the given norm."""
    u0 = np.atleast_2d(np.asarray(u0, dtype=float))
    targets = np.asarray(targets, dtype=float)
    if targets.ndim != 3 or targets.shape[1:] != u0.shape:
        raise ParameterError("targets must have shape (S, n, dim) matching u0")
    n_compose = targets.shape[0]
    weights = norm.weights(fixed_map.dim)
    cur = ad.constant(u0)
    total = None
    for k in range(n_compose):
        cur = fixed_map.eval_tensor(system, cur, eps=eps)
        sq = weighted_square_rows(ad.sub(cur, ad.constant(targets[k])), weights)
        term = ad.tmean(sq)
        total = term if total is None else ad.add(total, term)
    return ad.mul(total, 0.5 / n_compose)


def joint_loss(fixed_map, var_map, scheme, system, u0, targets, colloc,
               norm=NormSpec(), rng=None, h=None, eps=None):
    """Data loss plus the residual of the T0-centered composition.

    The composed map Phi(Phi_T0(u), t - T0) is trained on times starting at
    T0, so the residual collocation is shifted by T0.
    """
    h = scheme._h(h)
    rng = np.random.default_rng(rng)
    data_term = data_loss(fixed_map, system, u0, targets, norm=norm, eps=eps)

    u, t, eps_batch = sample_collocation(colloc, rng, var_map.dim)
    weights = norm.weights(var_map.dim)

    def composed_residual(u_rows, t_col, eps_rows):
        mid = fixed_map.eval_tensor(system, ad.constant(u_rows), eps=eps_rows)
        phi_t = var_map.eval_tensor(system, mid, ad.constant(t_col), eps=eps_rows)
        phi_th = var_map.eval_tensor(system, mid, ad.constant(t_col + h), eps=eps_rows)
        return scheme.residual_tensor(system, phi_t, phi_th, h, eps=eps_rows)

    if colloc.time_mode == "grid":
        res_term = _loss_over_grid(composed_residual, u, t, weights, 0.5 * h, eps_batch)
    else:
        res = composed_residual(u, t.reshape(-1, 1), eps_batch)
        res_term = ad.mul(ad.tmean(weighted_square_rows(res, weights)), 0.5)
    return ad.add(data_term, res_term)


@dataclass
class TrainRecord:
    """Loss history plus test checkpoints and timing for one training run."""

    seed: object
    train_losses: np.ndarray
    checkpoints: list = field(default_factory=list)  # (iteration, test_loss)
    wall_seconds: float = 0.0

    @property
    def iterations(self):
        return len(self.train_losses)

    @property
    def final_loss(self):
        return float(self.train_losses[-1]) if self.iterations else float("nan")

    def to_csv(self, path):
        tests = dict(self.checkpoints)
        wall_ms_per_iter = 1000.0 * self.wall_seconds / max(1, self.iterations)
        with open(path, "w") as fh:
            fh.write("iteration,train_loss,test_loss,wall_ms\n")
            for i, loss in enumerate(self.train_losses, start=1):
                test = repr(float(tests[i])) if i in tests else ""
                fh.write(f"{i},{float(loss)!r},{test},{float(i * wall_ms_per_iter)!r}\n")


def train(objective, params, opt=None, iterations=1000, eval_every=1000,
          test_objective=None, stop_below=None, lr_schedule=None, rng=None,
          on_checkpoint=None):
    """Minimize a taped objective with Adam.

    objective(iteration, rng) must return a scalar loss tensor built from
    ``params``.  ``lr_schedule(iteration)`` (optional) returns a multiplier
    on the configured learning rate.  ``stop_below`` ends training early
    once the train loss crosses the threshold.
    """
    opt = opt or AdamConfig()
    seed_note = int(rng) if isinstance(rng, (int, np.integer)) else None
    rng = np.random.default_rng(rng)
    state = AdamState()
    losses = []
    checkpoints = []
    started = time.perf_counter()
    base_lr = opt.lr
    for it in range(iterations):
        if lr_schedule is not None:
            opt.lr = base_lr * lr_schedule(it)
        params.zero_grad()
        loss = objective(it, rng)
        loss.backward()
        adam_update(params, params.grads(), state, opt)
        value = float(loss.value)
        if not np.isfinite(value):
            raise ParameterError(f"training diverged at iteration {it + 1}")
        losses.append(value)
        done = it + 1
        if test_objective is not None and done % eval_every == 0:
            with no_grad():
                checkpoints.append((done, float(test_objective().value)))
            if on_checkpoint is not None:
                on_checkpoint(done, params)
        if stop_below is not None and value < stop_below:
            break
    opt.lr = base_lr
    return TrainRecord(
        seed=seed_note,
        train_losses=np.asarray(losses),
        checkpoints=checkpoints,
        wall_seconds=time.perf_counter() - started,
    )
