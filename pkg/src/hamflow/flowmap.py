"""Trainable flow-map architectures.

Two families:

* :class:`FixedStepFlowMap` advances by one fixed increment T0 and is the
  bare network G(u, f(u)) -- no built-in identity term, so a freshly
  initialized map returns zero, not u.

* :class:`TaylorFlowMap` is a variable-timestep map u + Psi(u, t) whose
  short-time expansion is structural: the leading Taylor terms of the exact
  flow enter under saturating time gates tanh(w t)/w with trainable rates
  w > 0 (stored as exponentials of free parameters), and a gated network
  remainder absorbs everything beyond order p.  Identity at t = 0 and
  derivative matching up to order p hold for every parameter value.

Supported truncation orders are 0, 1, 2, per coordinate partition when a
slow/fast split is used (typically order 0 on the fast block).  Maps can be
conditioned on a scale parameter (the charged-particle eps) and can carry a
speed-preserving wrapper that rescales the velocity block of the output to
the input speed, making |v| exactly conserved under iteration.
"""

from __future__ import annotations

import json

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad
from .errors import DimensionError, ParameterError
from .network import MLPConfig, ParameterSet, init_mlp, mlp_apply, mlp_apply_with_tangent
from .systems import _as_batch, _unbatch, make_system

_MAX_ORDER = 2


def _as_time_column(t, n):
    tv = np.asarray(t, dtype=float)
    if tv.ndim == 0:
        tv = np.full((n, 1), float(tv))
    else:
        tv = tv.reshape(n, 1)
    return tv


def _as_eps_column(eps, n):
    ev = np.asarray(eps, dtype=float)
    if ev.ndim == 0:
        return np.full((n, 1), float(ev)), np.full(n, float(ev))
    return ev.reshape(n, 1), ev.reshape(n)


class FixedStepFlowMap:
    """One-increment flow map Phi_T0(u) = G(u, f(u))."""

    def __init__(self, system_dim, t0, hidden=(128, 128, 128, 128), seed=0, params=None):
        self.dim = int(system_dim)
        self.t0 = float(t0)
        self.config = MLPConfig(in_width=2 * self.dim, out_width=self.dim, hidden=tuple(hidden))
        self.params = params if params is not None else init_mlp(self.config, seed, prefix="g")

    def eval_tensor(self, system, u, eps=None):
        f = ad.system_field(system, u, eps=eps)
        return mlp_apply(self.config, self.params, ad.concat([u, f], axis=1), prefix="g")

    def __call__(self, system, u, eps=None):
        arr, single = _as_batch(u, self.dim)
        with no_grad():
            out = self.eval_tensor(system, Tensor(arr), eps=eps).value
        return _unbatch(out, single)


class _TaylorChain:
    """One gated Taylor expansion chain writing to a coordinate block."""

    def __init__(self, prefix, order, out_indices):
        if order not in range(_MAX_ORDER + 1):
            raise ParameterError(f"taylor order must be in 0..{_MAX_ORDER}, got {order}")
        self.prefix = prefix
        self.order = order
        self.out_indices = np.asarray(out_indices, dtype=int)

    def gate_names(self):
        return [f"{self.prefix}.logw{i + 1}" for i in range(self.order + 1)]

    def init_arrays(self):
        return {name: np.zeros(()) for name in self.gate_names()}

    def psi(self, params, f, curv, t, delta):
        """Gated expansion Psi restricted to this chain's output block."""
        w = [ad.exp(params[name]) for name in self.gate_names()]
        if self.order == 0:
            return ad.mul(ad.tanh(ad.mul(w[0], t)), delta)
        g1 = ad.gated_time(w[0], t)
        f_blk = ad.take_cols(f, self.out_indices)
        if self.order == 1:
            remainder = ad.mul(ad.mul(g1, ad.tanh(ad.mul(w[1], t))), delta)
            return ad.add(ad.mul(g1, f_blk), remainder)
        g2 = ad.gated_time(w[1], t)
        c_blk = ad.take_cols(curv, self.out_indices)
        g12 = ad.mul(g1, g2)
        lead = ad.add(ad.mul(g1, f_blk), ad.mul(ad.mul(g12, 0.5), c_blk))
        remainder = ad.mul(ad.mul(g12, ad.tanh(ad.mul(w[2], t))), delta)
        return ad.add(lead, remainder)

    def psi_with_tangent(self, params, f, curv, t, delta, delta_dot):
        """Psi together with its exact time derivative, both on the tape."""
        w = [ad.exp(params[name]) for name in self.gate_names()]
        th = [ad.tanh(ad.mul(wi, t)) for wi in w]
        sech2 = [ad.sub(1.0, ad.mul(t_, t_)) for t_ in th]
        if self.order == 0:
            psi = ad.mul(th[0], delta)
            dpsi = ad.add(ad.mul(ad.mul(w[0], sech2[0]), delta), ad.mul(th[0], delta_dot))
            return psi, dpsi
        g1 = ad.gated_time(w[0], t)
        dg1 = sech2[0]
        f_blk = ad.take_cols(f, self.out_indices)
        if self.order == 1:
            gate = ad.mul(g1, th[1])
            dgate = ad.add(ad.mul(dg1, th[1]), ad.mul(g1, ad.mul(w[1], sech2[1])))
            psi = ad.add(ad.mul(g1, f_blk), ad.mul(gate, delta))
            dpsi = ad.add(
                ad.mul(dg1, f_blk),
                ad.add(ad.mul(dgate, delta), ad.mul(gate, delta_dot)),
            )
            return psi, dpsi
        g2 = ad.gated_time(w[1], t)
        dg2 = sech2[1]
        c_blk = ad.take_cols(curv, self.out_indices)
        g12 = ad.mul(g1, g2)
        dg12 = ad.add(ad.mul(dg1, g2), ad.mul(g1, dg2))
        gate = ad.mul(g12, th[2])
        dgate = ad.add(ad.mul(dg12, th[2]), ad.mul(g12, ad.mul(w[2], sech2[2])))
        psi = ad.add(
            ad.add(ad.mul(g1, f_blk), ad.mul(ad.mul(g12, 0.5), c_blk)),
            ad.mul(gate, delta),
        )
        dpsi = ad.add(
            ad.add(ad.mul(dg1, f_blk), ad.mul(ad.mul(dg12, 0.5), c_blk)),
            ad.add(ad.mul(dgate, delta), ad.mul(gate, delta_dot)),
        )
        return psi, dpsi


class TaylorFlowMap:
    """Variable-timestep map Phi(u, t[, eps]) = u + Psi(u, t[, eps]).

    Parameters
    ----------
    system_dim : int
    order : int or (int, int)
        Single truncation order, or (slow, fast) orders used with
        ``partition``.
    partition : (slow_indices, fast_indices), optional
        Disjoint index lists covering all coordinates.
    conditioned : bool
        Append eps to the remainder-network input; evaluation then requires
        an eps argument.
    speed_preserving : bool
        Rescale the ``velocity_indices`` block of the output to the input
        speed.
    t_max : float, optional
        Largest admissible evaluation time (trained window plus slack).
    """

    def __init__(
        self,
        system_dim,
        order=2,
        partition=None,
        conditioned=False,
        speed_preserving=False,
        velocity_indices=(0, 1),
        hidden=(128, 128, 128, 128),
        seed=0,
        t_max=None,
        params=None,
    ):
        self.dim = int(system_dim)
        self.conditioned = bool(conditioned)
        self.speed_preserving = bool(speed_preserving)
        self.velocity_indices = np.asarray(velocity_indices, dtype=int)
        self.t_max = None if t_max is None else float(t_max)
        self.hidden = tuple(hidden)

        in_width = 2 * self.dim + 1 + (1 if self.conditioned else 0)
        if partition is None:
            if not np.isscalar(order):
                raise ParameterError("per-partition orders require a partition")
            self.partition = None
            self.chains = [_TaylorChain("gates", int(order), np.arange(self.dim))]
            self.net_configs = {"delta": MLPConfig(in_width, self.dim, self.hidden)}
        else:
            slow, fast = (np.asarray(ix, dtype=int) for ix in partition)
            merged = np.sort(np.concatenate([slow, fast]))
            if not np.array_equal(merged, np.arange(self.dim)):
                raise ParameterError("partition must cover all coordinates exactly once")
            try:
                p_s, p_f = (int(v) for v in order)
            except TypeError:
                p_s = p_f = int(order)
            self.partition = (slow, fast)
            self.chains = [
                _TaylorChain("gates_s", p_s, slow),
                _TaylorChain("gates_f", p_f, fast),
            ]
            self.net_configs = {
                "delta_s": MLPConfig(in_width, len(slow), self.hidden),
                "delta_f": MLPConfig(in_width, len(fast), self.hidden),
            }

        if params is not None:
            self.params = params
        else:
            self.params = ParameterSet(seed=seed)
            for i, (prefix, config) in enumerate(self.net_configs.items()):
                self.params.merge(init_mlp(config, seed + i, prefix=prefix))
            for chain in self.chains:
                for name, arr in chain.init_arrays().items():
                    self.params.add(name, arr)

    @property
    def orders(self):
        return tuple(chain.order for chain in self.chains)

    @property
    def needs_curvature(self):
        return any(chain.order >= 2 for chain in self.chains)

    def _check_time(self, tv):
        if np.any(tv < 0.0):
            raise ParameterError("flow-map times must be nonnegative")
        if self.t_max is not None and np.any(tv > self.t_max):
            raise ParameterError(f"time outside the map's window [0, {self.t_max}]")

    def _net_delta_names(self):
        return list(self.net_configs)

    def _inputs(self, system, u, t, eps):
        n = u.value.shape[0]
        tv = np.asarray(t.value)
        self._check_time(tv)
        if self.conditioned:
            if eps is None:
                raise ParameterError("this map is eps-conditioned; pass eps")
            eps_col, eps_row = _as_eps_column(eps, n)
        else:
            if eps is not None:
                raise ParameterError("map is not eps-conditioned but eps was given")
            eps_col, eps_row = None, None
        f = ad.system_field(system, u, eps=eps_row)
        curv = ad.system_curvature(system, u, eps=eps_row) if self.needs_curvature else None
        pieces = [u, f, t]
        if eps_col is not None:
            pieces.append(ad.constant(eps_col))
        net_in = ad.concat(pieces, axis=1)
        return f, curv, net_in

    def _assemble(self, u, psis):
        if self.partition is None:
            psi = psis[0]
        else:
            psi = ad.add(
                ad.scatter_cols(psis[0], self.partition[0], self.dim),
                ad.scatter_cols(psis[1], self.partition[1], self.dim),
            )
        return ad.add(u, psi)

    def _apply_speed_wrapper(self, u, phi):
        idx = self.velocity_indices
        v_in = ad.take_cols(u, idx)
        phi_v = ad.take_cols(phi, idx)
        scale = ad.div(ad.rows_norm(v_in), ad.rows_norm(phi_v))
        others = np.setdiff1d(np.arange(self.dim), idx)
        return ad.add(
            ad.scatter_cols(ad.mul(phi_v, scale), idx, self.dim),
            ad.scatter_cols(ad.take_cols(phi, others), others, self.dim),
        )

    def eval_tensor(self, system, u, t, eps=None):
        f, curv, net_in = self._inputs(system, u, t, eps)
        psis = []
        for chain, prefix in zip(self.chains, self._net_delta_names()):
            delta = mlp_apply(self.net_configs[prefix], self.params, net_in, prefix=prefix)
            psis.append(chain.psi(self.params, f, curv, t, delta))
        phi = self._assemble(u, psis)
        if self.speed_preserving:
            phi = self._apply_speed_wrapper(u, phi)
        return phi

    def eval_tensor_with_time_derivative(self, system, u, t, eps=None):
        """(Phi, dPhi/dt) as taped tensors; exact tangent, no finite differences."""
        if self.speed_preserving:
            raise ParameterError("time tangent is not implemented for speed-preserving maps")
        f, curv, net_in = self._inputs(system, u, t, eps)
        n = u.value.shape[0]
        tangent = np.zeros((n, net_in.value.shape[1]))
        tangent[:, 2 * self.dim] = 1.0  # the t column
        tangent = ad.constant(tangent)
        psis, dpsis = [], []
        for chain, prefix in zip(self.chains, self._net_delta_names()):
            delta, delta_dot = mlp_apply_with_tangent(
                self.net_configs[prefix], self.params, net_in, tangent, prefix=prefix
            )
            psi, dpsi = chain.psi_with_tangent(self.params, f, curv, t, delta, delta_dot)
            psis.append(psi)
            dpsis.append(dpsi)
        phi = self._assemble(u, psis)
        if self.partition is None:
            dphi = dpsis[0]
        else:
            dphi = ad.add(
                ad.scatter_cols(dpsis[0], self.partition[0], self.dim),
                ad.scatter_cols(dpsis[1], self.partition[1], self.dim),
            )
        return phi, dphi

    def __call__(self, system, u, t, eps=None):
        arr, single = _as_batch(u, self.dim)
        tv = _as_time_column(t, arr.shape[0])
        with no_grad():
            out = self.eval_tensor(system, Tensor(arr), Tensor(tv), eps=eps).value
        return _unbatch(out, single)


def t0_centered_eval(fixed_map, var_map, system, u, t, eps=None):
    """Phi(Phi_T0(u), t - T0) for t >= T0."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < fixed_map.t0):
        raise ParameterError(f"t0-centered map needs t >= T0 = {fixed_map.t0}")
    arr, single = _as_batch(u, fixed_map.dim)
    tv = _as_time_column(t_arr, arr.shape[0]) - fixed_map.t0
    with no_grad():
        mid = fixed_map.eval_tensor(system, Tensor(arr), eps=eps)
        out = var_map.eval_tensor(system, mid, Tensor(tv), eps=eps).value
    return _unbatch(out, single)


def rollout_compose(flow_map, system, u0, dt, n_steps, eps=None):
    """Iterate a map: row k holds Phi^(k)(u0, dt), row 0 the initial state."""
    u0 = np.asarray(u0, dtype=float)
    if u0.ndim != 1:
        raise DimensionError("rollout_compose expects a single state")
    if isinstance(flow_map, FixedStepFlowMap):
        if abs(dt - flow_map.t0) > 1e-12:
            raise ParameterError(f"fixed-step map advances by T0={flow_map.t0}, got dt={dt}")
        advance = lambda u: flow_map(system, u, eps=eps)
    elif isinstance(flow_map, TaylorFlowMap):
        advance = lambda u: flow_map(system, u, dt, eps=eps)
    else:
        advance = lambda u: flow_map(u, dt)
    out = np.empty((n_steps + 1, u0.size))
    out[0] = u0
    u = u0
    for k in range(n_steps):
        try:
            u = np.asarray(advance(u), dtype=float)
        except Exception as exc:
            raise type(exc)(f"rollout failed at step {k + 1}: {exc}") from exc
        out[k + 1] = u
    return out


def save_flow_map(flow_map, path_prefix, metadata=None):
    """Write <prefix>.bin (parameters) and <prefix>.json (architecture manifest)."""
    manifest = {"format": 1}
    if isinstance(flow_map, FixedStepFlowMap):
        manifest.update(kind="fixed", dim=flow_map.dim, t0=flow_map.t0,
                        hidden=list(flow_map.config.hidden))
    elif isinstance(flow_map, TaylorFlowMap):
        manifest.update(
            kind="taylor",
            dim=flow_map.dim,
            hidden=list(flow_map.hidden),
            conditioned=flow_map.conditioned,
            speed_preserving=flow_map.speed_preserving,
            velocity_indices=flow_map.velocity_indices.tolist(),
            t_max=flow_map.t_max,
        )
        if flow_map.partition is None:
            manifest["order"] = flow_map.chains[0].order
        else:
            manifest["order"] = list(flow_map.orders)
            manifest["partition"] = [ix.tolist() for ix in flow_map.partition]
    else:
        raise ParameterError("unknown flow-map type")
    manifest.update(metadata or {})
    with open(str(path_prefix) + ".json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    flow_map.params.save(str(path_prefix) + ".bin")


def load_flow_map(path_prefix):
    """Rebuild a saved map; returns (flow_map, manifest)."""
    with open(str(path_prefix) + ".json") as fh:
        manifest = json.load(fh)
    params = ParameterSet.load(str(path_prefix) + ".bin")
    if manifest["kind"] == "fixed":
        fmap = FixedStepFlowMap(
            manifest["dim"], manifest["t0"], hidden=tuple(manifest["hidden"]), params=params
        )
    elif manifest["kind"] == "taylor":
        order = manifest["order"]
        partition = manifest.get("partition")
        fmap = TaylorFlowMap(
            manifest["dim"],
            order=tuple(order) if isinstance(order, list) else order,
            partition=None if partition is None else tuple(partition),
            conditioned=manifest["conditioned"],
            speed_preserving=manifest["speed_preserving"],
            velocity_indices=manifest["velocity_indices"],
            hidden=tuple(manifest["hidden"]),
            t_max=manifest["t_max"],
            params=params,
        )
    else:
        raise ParameterError(f"unknown flow-map kind '{manifest['kind']}'")
    return fmap, manifest


def flow_map_for_system(system_name, **kwargs):
    """Build a TaylorFlowMap with the per-system default structure."""
    system = make_system(system_name, kwargs.pop("system_params", None))
    if system.name == "fput":
        defaults = dict(
            order=(2, 0),
            partition=(system.slow_indices, system.fast_indices),
        )
    elif system.name == "alpha":
        defaults = dict(order=2, conditioned=True, speed_preserving=True,
                        velocity_indices=(0, 1))
    else:
        defaults = dict(order=2)
    defaults.update(kwargs)
    return system, TaylorFlowMap(system.dim, **defaults)
