"""Executable checks of the residual loss's critical-point structure.

For the discrete residual functional (1/2) sum_n ||w_n||^2 with
w_n = R_h[Phi](u, t_n), stationarity is a linear backward recurrence in the
w_n: the implicit map's Jacobian transports w_{n-1} onto the explicit map's
image of w_n, with a homogeneous terminal condition.  When every transport
matrix is invertible, the only critical point has all residuals zero; the
singular cases are exactly the spurious minima the theory warns about
(implicit Euler at h = 1/lambda for u' = lambda u, the midpoint rule where
1 + (h/2) lambda_i(Df) hits zero).

Everything here verifies the algebra on concrete maps and reports
magnitudes; nothing assumes a map that interpolates the exact flow, since
trained networks are only approximate critical points.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, no_grad
from .errors import ParameterError
from .integrators import ImplicitMidpoint

_SINGULAR_RTOL = 1e-12


@dataclass
class AdjointChain:
    """Residual vectors w_n on a uniform grid, plus the map states behind them."""

    times: np.ndarray  # (N+1,)
    residuals: np.ndarray  # (N+1, dim)
    states: np.ndarray  # (N+2, dim): Phi(u, t_n) for t_0..t_N plus t_N + h

    def max_residual_norm(self):
        return float(np.max(np.linalg.norm(self.residuals, axis=1), initial=0.0))


@dataclass
class TransportResult:
    """Backward-solved adjoint chain and per-step solvability diagnostics."""

    transported: np.ndarray  # (N+1, dim)
    condition_numbers: np.ndarray  # (N+1,), transport matrix conditioning
    singular_steps: list = field(default_factory=list)

    @property
    def forces_zero(self):
        """True when the recurrence pins every residual to zero."""
        return not self.singular_steps


@dataclass
class ConditionReport:
    """Eigenvalue margins for the midpoint rule's uniqueness condition."""

    times: np.ndarray  # (n_steps,)
    eigenvalues: np.ndarray  # (n_points, n_steps, dim) complex
    margins: np.ndarray  # (n_points, n_steps): min_i |1 + (h/2) lambda_i|
    threshold: float = 1e-8

    @property
    def min_margin(self):
        return float(np.min(self.margins))

    @property
    def degenerate(self):
        return self.min_margin <= self.threshold

    def to_csv(self, path):
        mins = np.min(self.margins, axis=0)
        with open(path, "w") as fh:
            fh.write("step,time,min_margin,degenerate\n")
            for k, (t, m) in enumerate(zip(self.times, mins)):
                fh.write(f"{k},{float(t)!r},{float(m)!r},{int(m <= self.threshold)}\n")


def _evaluate_map(flow_map, system, u, t, eps=None):
    if hasattr(flow_map, "eval_tensor"):
        return flow_map(system, u, t, eps=eps)
    return np.asarray(flow_map(u, t), dtype=float)


def _check_grid(grid, h):
    grid = np.asarray(grid, dtype=float)
    if len(grid) < 2:
        raise ParameterError("adjoint grids need at least two times")
    spacing = np.diff(grid)
    if np.max(np.abs(spacing - h)) > 1e-9 * max(h, 1.0):
        raise ParameterError("adjoint grid spacing must equal the scheme step h")
    return grid


def _map_states(flow_map, system, u, times, eps=None):
    return np.stack([_evaluate_map(flow_map, system, u, t, eps=eps) for t in times])


def _residuals_from_states(scheme, system, states, h, eps=None):
    phi_t = Tensor(states[:-1])
    phi_th = Tensor(states[1:])
    with no_grad():
        return scheme.residual_tensor(system, phi_t, phi_th, h, eps=eps).value


def residual_sequence(flow_map, scheme, system, u, grid, h=None, eps=None):
    """w_n = R_h[Phi](u, t_n) for every grid time."""
    h = scheme._h(h)
    grid = _check_grid(grid, h)
    times_ext = np.append(grid, grid[-1] + h)
    states = _map_states(flow_map, system, np.asarray(u, dtype=float), times_ext, eps=eps)
    residuals = _residuals_from_states(scheme, system, states, h, eps=eps)
    return AdjointChain(times=grid, residuals=residuals, states=states)


def _step_jacobians(scheme, system, chain, h):
    """Per-step pair (J_plus_n, J_minus_n) with dR_n = J_plus psi(t_{n+1}) + J_minus psi(t_n)."""
    states = chain.states
    n_steps = len(chain.times)
    if isinstance(scheme, ImplicitMidpoint):
        mids = 0.5 * (states[:-1] + states[1:])
        a = system.jacobian(mids)
        eye = np.eye(states.shape[1])
        j_plus = eye - 0.5 * h * a
        j_minus = -(eye + 0.5 * h * a)
    else:
        j_plus = scheme.d_phi_im(system, states[1:], h)
        j_minus = -scheme.d_phi_ex(system, states[:-1], h)
    assert j_plus.shape[0] == n_steps
    return j_plus, j_minus


def first_variation_check(flow_map, scheme, system, u, grid, psi, h=None, eps=None,
                          fd_step=1e-6):
    """Compare the loss's directional derivative with the adjoint inner products.

    ``psi(u, t)`` is the perturbation direction; it must vanish at the grid
    origin.  Returns (lhs, rhs, relative gap) where lhs is the centered
    difference of (1/2) sum_n ||w_n||^2 along Phi + eps psi and rhs is
    sum_n <w_n, J_plus psi(t_{n+1}) + J_minus psi(t_n)>.
    """
    h = scheme._h(h)
    grid = _check_grid(grid, h)
    u = np.asarray(u, dtype=float)
    if np.linalg.norm(np.asarray(psi(u, grid[0]))) > 1e-12:
        raise ParameterError("perturbation must vanish at the initial grid time")

    chain = residual_sequence(flow_map, scheme, system, u, grid, h=h, eps=eps)

    def loss_at(scale):
        def perturbed(uu, tt):
            return _evaluate_map(flow_map, system, uu, tt, eps=eps) + scale * np.asarray(
                psi(uu, tt)
            )

        seq = residual_sequence(perturbed, scheme, system, u, grid, h=h, eps=eps)
        return 0.5 * float(np.sum(seq.residuals ** 2))

    lhs = (loss_at(fd_step) - loss_at(-fd_step)) / (2.0 * fd_step)

    j_plus, j_minus = _step_jacobians(scheme, system, chain, h)
    times_ext = np.append(grid, grid[-1] + h)
    psi_vals = np.stack([np.asarray(psi(u, t), dtype=float) for t in times_ext])
    deriv = np.einsum("nij,nj->ni", j_plus, psi_vals[1:]) + np.einsum(
        "nij,nj->ni", j_minus, psi_vals[:-1]
    )
    rhs = float(np.sum(chain.residuals * deriv))
    gap = abs(lhs - rhs) / (abs(lhs) + abs(rhs) + 1e-30)
    return lhs, rhs, gap


def backward_transport(chain, scheme, system, h=None):
    """Solve the adjoint recurrence backward from the homogeneous terminal row.

    The terminal condition J_plus_N' w_N = 0 and the recurrence
    J_plus_{n-1}' w_{n-1} = -J_minus_n' w_n are solved step by step; any
    transport matrix whose smallest singular value is negligible relative
    to its largest is recorded in ``singular_steps`` (the residual there is
    not forced to zero, marking a potential spurious critical point).
    """
    h = scheme._h(h)
    j_plus, j_minus = _step_jacobians(scheme, system, chain, h)
    n_rows = len(chain.times)
    dim = chain.residuals.shape[1]
    transported = np.zeros((n_rows, dim))
    conditions = np.empty(n_rows)
    singular = []

    def solvable(matrix):
        svals = np.linalg.svd(matrix, compute_uv=False)
        cond = np.inf if svals[-1] == 0 else svals[0] / svals[-1]
        return svals[-1] > _SINGULAR_RTOL * max(svals[0], 1.0), cond

    ok, conditions[-1] = solvable(j_plus[-1].T)
    if not ok:
        singular.append(n_rows - 1)
    else:
        transported[-1] = 0.0
    for n in range(n_rows - 1, 0, -1):
        mat = j_plus[n - 1].T
        rhs = -j_minus[n].T @ transported[n]
        ok, conditions[n - 1] = solvable(mat)
        if not ok:
            singular.append(n - 1)
            transported[n - 1] = np.nan
            continue
        transported[n - 1] = np.linalg.solve(mat, rhs)
    return TransportResult(
        transported=transported,
        condition_numbers=conditions,
        singular_steps=sorted(singular),
    )


def midpoint_condition_scan(flow_map, system, u_batch, grid, h, eps=None, threshold=1e-8):
    """Margins min_i |1 + (h/2) lambda_i| of Df at the averaged map states.

    The eigenvalues are taken at (Phi(u, t) + Phi(u, t + h)) / 2 for every
    state in the batch and every grid time; a vanishing margin marks a grid
    cell where the midpoint residual admits a spurious critical point.
    """
    u_batch = np.atleast_2d(np.asarray(u_batch, dtype=float))
    grid = _check_grid(grid, h)
    times_ext = np.append(grid, grid[-1] + h)
    margins = np.empty((u_batch.shape[0], len(grid)))
    eigs = np.empty((u_batch.shape[0], len(grid), u_batch.shape[1]), dtype=complex)
    for i, u in enumerate(u_batch):
        states = _map_states(flow_map, system, u, times_ext, eps=eps)
        mids = 0.5 * (states[:-1] + states[1:])
        jac = system.jacobian(mids) if eps is None else system.jacobian(mids, eps=eps)
        for k in range(len(grid)):
            lam = np.linalg.eigvals(jac[k])
            eigs[i, k] = lam
            margins[i, k] = np.min(np.abs(1.0 + 0.5 * h * lam))
    return ConditionReport(times=grid, eigenvalues=eigs, margins=margins, threshold=threshold)
