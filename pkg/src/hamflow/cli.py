"""Command-line entry point wiring configs to the library.

Subcommands: simulate, sample, train, evaluate, bench, verify-adjoint.
Every run writes its artifacts plus a manifest (resolved config, config
hash, seed, versions) into the output directory; the HAMFLOW_OUT
environment variable overrides the output root.  Exit codes: 0 success,
1 runtime failure, 2 config failure, with a machine-readable JSON error
line on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .adjoint import first_variation_check, midpoint_condition_scan, residual_sequence
from .config import load_config
from .errors import ConfigError, HamflowError
from .evalharness import (
    benchmark,
    energy_exchange_profile,
    error_series,
    export_results,
    map_solver,
    poincare_section,
    profile_to_csv,
    scheme_solver,
)
from .flowmap import (
    FixedStepFlowMap,
    TaylorFlowMap,
    load_flow_map,
    rollout_compose,
    save_flow_map,
)
from .integrators import ImplicitMidpoint, integrate, make_scheme
from .losses import (
    CollocationSpec,
    NormSpec,
    data_loss,
    exact_residual_loss,
    joint_loss,
    residual_loss,
    rollout_targets,
    train,
)
from .mcsampler import McSamplerConfig, SampleSet, narrowband_dataset
from .optim import AdamConfig
from .systems import make_system

_NAMED_INITIALS = {
    "harmonic": {"unit": [0.0, 1.0]},
    "npco": {"default": [0.8, 0.4, 0.3, 0.5]},
    "alpha": {"default": [1.2, 0.76, 3.1, 3.1]},
}


def named_initial(system, spec):
    """Resolve run.initial: an explicit list or a named starting point."""
    if isinstance(spec, (list, tuple)):
        u0 = np.asarray(spec, dtype=float)
        if u0.size != system.dim:
            raise ConfigError(f"initial state needs {system.dim} entries, got {u0.size}")
        return u0
    if system.name == "fput" and spec in (None, "classic"):
        u0 = np.zeros(system.dim)
        m = system.m
        u0[0] = 1.0  # y_s1
        u0[m] = 1.0  # x_s1
        u0[2 * m] = 1.0  # y_f1
        u0[3 * m] = 1.0 / system.omega  # x_f1
        return u0
    table = _NAMED_INITIALS.get(system.name, {})
    if spec is None and table:
        spec = next(iter(table))
    if spec in table:
        return np.asarray(table[spec], dtype=float)
    raise ConfigError(f"unknown initial state '{spec}' for system '{system.name}'")


def build_system(config):
    section = config.section("system")
    name = section.pop("name", None)
    if name is None:
        raise ConfigError("config needs system.name")
    if "k" in section:
        section["k"] = tuple(section["k"])
    return make_system(name, section)


def build_scheme(config, require_h=True):
    section = config.section("scheme")
    name = section.pop("name", None)
    if name is None:
        raise ConfigError("config needs scheme.name")
    h = section.pop("h", None)
    if require_h and h is None:
        raise ConfigError("config needs scheme.h")
    return make_scheme(name, h=h, **{k: v for k, v in section.items()})


def build_norm(config):
    section = config.section("loss")
    mode = section.get("norm", "plain")
    if mode == "plain":
        return NormSpec()
    return NormSpec(
        mode="energy_balanced",
        omega=float(section.get("norm_omega", 1.0)),
        block_m=section.get("norm_block_m"),
    )


def _expand_box(raw, dim):
    box = np.asarray(raw, dtype=float)
    if box.shape == (2,):
        box = np.tile(box, (dim, 1))
    return box


def build_collocation(config, system, samples=None):
    section = config.section("loss")
    phase_mode = section.get("phase_mode", "box")
    kwargs = dict(
        time_mode=section.get("time_mode", "uniform"),
        t_final=section.get("t_final"),
        n_times=section.get("n_times"),
        tau=section.get("tau", 0.0),
        fixed_time=section.get("fixed_time"),
        batch_size=int(section.get("batch_size", 128)),
    )
    if section.get("eps_min") is not None:
        kwargs["eps_range"] = (float(section["eps_min"]), float(section["eps_max"]))
    if phase_mode == "box":
        kwargs.update(phase_mode="box", box=_expand_box(section.get("box", [-1.0, 1.0]), system.dim))
    elif phase_mode == "shell":
        vel = np.array([0, 1])  # the charged-particle velocity block
        pos_box = _expand_box(section.get("position_box", [0.0, 2 * np.pi]),
                              system.dim - len(vel))
        kwargs.update(
            phase_mode="shell",
            velocity_indices=vel,
            r_min=float(section.get("r_min", np.sqrt(2) - 0.3)),
            r_max=float(section.get("r_max", np.sqrt(2) + 0.3)),
            position_box=pos_box,
        )
    elif phase_mode in ("samples", "hmc"):
        if samples is None:
            raise ConfigError("phase_mode samples/hmc needs a sample pool")
        kwargs.update(phase_mode="samples", samples=samples)
    else:
        raise ConfigError(f"unknown phase_mode '{phase_mode}'")
    return CollocationSpec(**kwargs)


def build_sampler_config(config, seed):
    section = config.section("sampler")
    if "h0" not in section:
        raise ConfigError("config needs sampler.h0")
    return McSamplerConfig(
        h0=float(section["h0"]),
        band_std=section.get("band_std"),
        mean_duration=float(section.get("lambda", 1.0)),
        proposal_scheme=section.get("proposal_scheme", "velocity_verlet"),
        proposal_h=section.get("proposal_h"),
        n_samples=int(section.get("n_samples", 1000)),
        n_levels=int(section.get("n_levels", 16)),
        seed=seed,
    )


def build_model(config, system, for_loss=None):
    section = config.section("model")
    checkpoint = section.get("checkpoint")
    if checkpoint:
        fmap, _ = load_flow_map(checkpoint)
        return fmap
    kind = section.get("kind", "taylor")
    hidden = tuple(section.get("hidden", [128, 128, 128, 128]))
    seed = int(section.get("seed", 0))
    if kind == "fixed":
        return FixedStepFlowMap(system.dim, t0=float(section.get("t0", 1.0)),
                                hidden=hidden, seed=seed)
    if kind != "taylor":
        raise ConfigError(f"unknown model.kind '{kind}'")
    partition = None
    order = section.get("order", 2)
    if section.get("partition") == "slowfast":
        if system.slow_indices is None:
            raise ConfigError(f"system '{system.name}' has no slow/fast partition")
        partition = (system.slow_indices, system.fast_indices)
        if not isinstance(order, (list, tuple)):
            order = (int(order), int(order))
        else:
            order = tuple(int(v) for v in order)
    elif isinstance(order, (list, tuple)):
        raise ConfigError("model.order may be a pair only with partition=slowfast")
    else:
        order = int(order)
    t_max = section.get("t_max")
    if t_max is None and for_loss is not None:
        t_final = config.get("loss", "t_final")
        h = config.get("scheme", "h", default=0.0) or 0.0
        if t_final is not None:
            t_max = 1.1 * (float(t_final) + float(h))
    return TaylorFlowMap(
        system.dim,
        order=order,
        partition=partition,
        conditioned=bool(section.get("conditioned", False)),
        speed_preserving=bool(section.get("speed_preserving", False)),
        velocity_indices=section.get("velocity_indices", (0, 1)),
        hidden=hidden,
        seed=seed,
        t_max=t_max,
    )


def resolve_out_dir(config, command):
    root = os.environ.get("HAMFLOW_OUT", ".")
    sub = config.get("run", "out_dir", default=os.path.join("runs", command))
    path = os.path.join(root, sub)
    os.makedirs(path, exist_ok=True)
    return path


def write_manifest(out, command, config, artifacts):
    manifest = {
        "command": command,
        "config": config.tree,
        "config_hash": config.digest(),
        "seed": config.get("run", "seed", default=0),
        "versions": {
            "hamflow": __version__,
            "numpy": np.__version__,
            "python": ".".join(map(str, sys.version_info[:3])),
        },
        "artifacts": sorted(artifacts),
    }
    path = os.path.join(out, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return path


def _trajectory_to_csv(path, traj):
    dim = traj.states.shape[-1]
    with open(path, "w") as fh:
        fh.write("t," + ",".join(f"u{i}" for i in range(dim)) + "\n")
        for t, row in zip(traj.times, traj.states):
            fh.write(f"{float(t)!r}," + ",".join(repr(float(v)) for v in row) + "\n")


def cmd_simulate(config):
    system = build_system(config)
    scheme = build_scheme(config)
    u0 = named_initial(system, config.get("run", "initial"))
    h = float(config.get("scheme", "h", required=True))
    n_steps = config.get("run", "n_steps")
    if n_steps is None:
        t_final = config.get("run", "t_final", required=True)
        n_steps = int(round(float(t_final) / h))
    traj = integrate(system, scheme, u0, h, int(n_steps))
    out = resolve_out_dir(config, "simulate")
    _trajectory_to_csv(os.path.join(out, "trajectory.csv"), traj)
    artifacts = ["trajectory.csv"]
    if system.name == "fput":
        t, e, tot, ham = energy_exchange_profile(system, traj.times, traj.states)
        profile_to_csv(os.path.join(out, "profile.csv"), t, e, tot, ham)
        artifacts.append("profile.csv")
    write_manifest(out, "simulate", config, artifacts)
    print(f"simulate: {len(traj) - 1} steps of {scheme.name} -> {out}")
    return 0


def _generate_samples(config, system, seed):
    sampler_config = build_sampler_config(config, seed)
    q0_raw = config.get("sampler", "q0")
    if q0_raw is not None:
        q0 = np.atleast_2d(np.asarray(q0_raw, dtype=float))
    else:
        u0 = named_initial(system, config.get("run", "initial"))
        q0 = u0[system.position_indices][None, :]
    per_level = int(config.get("sampler", "per_level",
                               default=sampler_config.n_samples))
    return narrowband_dataset(system, q0, sampler_config, per_level)


def cmd_sample(config):
    system = build_system(config)
    seed = int(config.get("run", "seed", default=0))
    samples = _generate_samples(config, system, seed)
    out = resolve_out_dir(config, "sample")
    samples.to_csv(os.path.join(out, "samples.csv"))
    samples.save_container(os.path.join(out, "samples.bin"))
    write_manifest(out, "sample", config, ["samples.csv", "samples.bin"])
    print(f"sample: {len(samples)} states over {len(np.unique(samples.levels))} levels -> {out}")
    return 0


def _load_sample_pool(config, system, seed):
    path = config.get("loss", "dataset")
    if path:
        if path.endswith(".csv"):
            return SampleSet.from_csv(path).states
        return SampleSet.load_container(path).states
    return _generate_samples(config, system, seed).states


def _progressive_schedule(config):
    until = config.get("loss", "progressive_until")
    if until is None:
        return None
    until = int(until)
    return lambda it: min(1.0, 0.1 + 0.9 * it / max(until, 1))


def cmd_train(config):
    system = build_system(config)
    loss_type = config.get("loss", "type", required=True)
    seed = int(config.get("run", "seed", default=0))
    iterations = int(config.get("run", "iterations", default=1000))
    eval_every = int(config.get("run", "eval_every", default=1000))
    opt = AdamConfig(lr=float(config.get("run", "lr", default=1e-3)))
    stop_below = config.get("run", "stop_below")
    stop_below = None if stop_below is None else float(stop_below)
    norm = build_norm(config)
    out = resolve_out_dir(config, "train")
    schedule = _progressive_schedule(config)

    samples = None
    if config.get("loss", "phase_mode") in ("samples", "hmc"):
        samples = _load_sample_pool(config, system, seed)

    if loss_type in ("residual", "exact"):
        fmap = build_model(config, system, for_loss=loss_type)
        scheme = build_scheme(config) if loss_type == "residual" else None
        colloc = build_collocation(config, system, samples=samples)

        def objective(it, rng):
            scale = schedule(it) if schedule else 1.0
            if loss_type == "residual":
                return residual_loss(fmap, scheme, system, colloc, norm=norm, rng=rng,
                                     horizon_scale=scale)
            return exact_residual_loss(fmap, system, colloc, norm=norm, rng=rng)

        def test_objective():
            if loss_type == "residual":
                return residual_loss(fmap, scheme, system, colloc, norm=norm,
                                     rng=np.random.default_rng(seed + 1))
            return exact_residual_loss(fmap, system, colloc, norm=norm,
                                       rng=np.random.default_rng(seed + 1))

        maps_to_save = [("model", fmap)]
    elif loss_type == "data":
        fmap = build_model(config, system, for_loss=loss_type)
        if not isinstance(fmap, FixedStepFlowMap):
            raise ConfigError("data loss trains a fixed-step map (model.kind=fixed)")
        pool = samples if samples is not None else _load_sample_pool(config, system, seed)
        n_data = int(config.get("loss", "n_data", default=min(len(pool), 4096)))
        u0 = pool[:n_data]
        n_compose = int(config.get("loss", "n_compose", default=1))
        tol = float(config.get("run", "reference_tol", default=1e-10))
        targets = rollout_targets(system, u0, fmap.t0, n_compose, tol=tol)
        n_test = max(1, n_data // 10)
        batch = int(config.get("loss", "batch_size", default=min(256, n_data - n_test)))

        def objective(it, rng):
            idx = rng.integers(0, n_data - n_test, size=batch)
            return data_loss(fmap, system, u0[idx], targets[:, idx], norm=norm)

        def test_objective():
            return data_loss(fmap, system, u0[n_data - n_test:],
                             targets[:, n_data - n_test:], norm=norm)

        maps_to_save = [("model", fmap)]
    elif loss_type == "joint":
        fixed = FixedStepFlowMap(
            system.dim,
            t0=float(config.get("model", "t0", default=1.0)),
            hidden=tuple(config.get("model", "hidden", default=[64, 64])),
            seed=int(config.get("model", "seed", default=0)),
        )
        var = build_model(config, system, for_loss=loss_type)
        scheme = build_scheme(config)
        colloc = build_collocation(config, system, samples=samples)
        pool = samples if samples is not None else colloc.sample_phase(
            np.random.default_rng(seed + 2), system.dim
        )
        n_data = int(config.get("loss", "n_data", default=min(len(pool), 512)))
        u0 = np.asarray(pool)[:n_data]
        n_compose = int(config.get("loss", "n_compose", default=1))
        tol = float(config.get("run", "reference_tol", default=1e-10))
        targets = rollout_targets(system, u0, fixed.t0, n_compose, tol=tol)
        merged = fixed.params
        for name, tensor in var.params.items():
            merged._tensors[f"var:{name}"] = tensor

        def objective(it, rng):
            return joint_loss(fixed, var, scheme, system, u0, targets, colloc,
                              norm=norm, rng=rng)

        def test_objective():
            return joint_loss(fixed, var, scheme, system, u0, targets, colloc,
                              norm=norm, rng=np.random.default_rng(seed + 1))

        maps_to_save = [("model_fixed", fixed), ("model_var", var)]
        fmap = var
    else:
        raise ConfigError(f"unknown loss.type '{loss_type}'")

    params = fmap.params if loss_type != "joint" else merged
    record = train(objective, params, opt=opt, iterations=iterations,
                   eval_every=eval_every, test_objective=test_objective,
                   stop_below=stop_below, rng=seed)
    artifacts = ["train_record.csv"]
    metadata = {"system": system.name, "loss": loss_type, "seed": seed,
                "trained_iterations": record.iterations}
    for stem, fm in maps_to_save:
        save_flow_map(fm, os.path.join(out, stem), metadata=metadata)
        artifacts.extend([f"{stem}.bin", f"{stem}.json"])
    record.to_csv(os.path.join(out, "train_record.csv"))
    write_manifest(out, "train", config, artifacts)
    print(f"train[{loss_type}]: {record.iterations} iterations, "
          f"final loss {record.final_loss:.3e} -> {out}")
    return 0


def _model_eps(config, fmap):
    eps = config.get("run", "eps")
    if getattr(fmap, "conditioned", False):
        if eps is None:
            raise ConfigError("this model is eps-conditioned: set run.eps")
        return float(eps)
    return None


def cmd_evaluate(config):
    system = build_system(config)
    checkpoint = config.get("model", "checkpoint", required=True)
    fmap, _ = load_flow_map(checkpoint)
    u0 = named_initial(system, config.get("run", "initial"))
    dt = config.get("run", "dt")
    dt = float(dt) if dt is not None else getattr(fmap, "t0", None)
    if dt is None:
        raise ConfigError("evaluate needs run.dt for a variable-timestep model")
    n_steps = int(config.get("run", "n_steps", default=10))
    eps = _model_eps(config, fmap)
    tol = float(config.get("run", "reference_tol", default=1e-10))
    out = resolve_out_dir(config, "evaluate")
    series = error_series(fmap, system, u0, dt, n_steps, eps=eps, reference_tol=tol)
    series.to_csv(os.path.join(out, "errors.csv"))
    artifacts = ["errors.csv"]
    rollout = rollout_compose(fmap, system, u0, dt, n_steps, eps=eps)
    times = dt * np.arange(n_steps + 1)
    if system.name == "fput":
        t, e, tot, ham = energy_exchange_profile(system, times, rollout)
        profile_to_csv(os.path.join(out, "profile.csv"), t, e, tot, ham)
        artifacts.append("profile.csv")
    if system.name == "alpha":
        section = poincare_section(times, rollout)
        section.to_csv(os.path.join(out, "section.csv"))
        artifacts.append("section.csv")
    write_manifest(out, "evaluate", config, artifacts)
    print(f"evaluate: {n_steps} steps of dt={dt}, "
          f"final traj err {series.traj_errors[-1]:.3e} -> {out}")
    return 0


def cmd_bench(config):
    system = build_system(config)
    u0 = named_initial(system, config.get("run", "initial"))
    batch = int(config.get("loss", "batch_size", default=8))
    u0_batch = np.tile(u0, (batch, 1))
    t_s = float(config.get("run", "t_final", required=True))
    repeats = int(config.get("run", "repeats", default=3))
    long_factor = config.get("run", "long_factor")
    tol = float(config.get("run", "reference_tol", default=1e-10))
    solvers = []
    if config.get("scheme", "name") is not None:
        scheme = build_scheme(config)
        solvers.append((f"{scheme.name}(h={scheme.h})", scheme_solver(scheme, scheme.h)))
    checkpoint = config.get("model", "checkpoint")
    if checkpoint:
        fmap, _ = load_flow_map(checkpoint)
        dt = config.get("run", "dt")
        dt = float(dt) if dt is not None else getattr(fmap, "t0", t_s)
        solvers.append((f"flowmap(dt={dt})", map_solver(fmap, dt, eps=_model_eps(config, fmap))))
    reports = benchmark(solvers, system, u0_batch, t_s, repeats=repeats,
                        long_factor=None if long_factor is None else int(long_factor),
                        reference_tol=tol)
    out = resolve_out_dir(config, "bench")
    export_results(reports, os.path.join(out, "bench.csv"), fmt="csv")
    write_manifest(out, "bench", config, ["bench.csv"])
    for r in reports:
        print(f"bench: {r.solver}: {1000 * r.wall_seconds:.3f} ms, "
              f"traj {r.traj_err:.2e}, H {r.energy_err:.2e}")
    return 0


def cmd_verify_adjoint(config):
    system = build_system(config)
    scheme = build_scheme(config)
    h = scheme.h
    checkpoint = config.get("model", "checkpoint")
    if checkpoint:
        fmap, _ = load_flow_map(checkpoint)
    else:
        fmap = build_model(config, system, for_loss="residual")
    n_steps = int(config.get("run", "n_steps", default=8))
    grid = h * np.arange(n_steps)
    seed = int(config.get("run", "seed", default=0))
    rng = np.random.default_rng(seed)
    if config.get("loss", "phase_mode") is not None:
        colloc = build_collocation(config, system)
        batch = colloc.sample_phase(rng, system.dim)
    else:
        batch = named_initial(system, config.get("run", "initial"))[None, :]
    eps = _model_eps(config, fmap)
    out = resolve_out_dir(config, "verify-adjoint")
    artifacts = []

    rows = []
    for i, u in enumerate(batch):
        direction = rng.standard_normal(system.dim)

        def psi(uu, tt, d=direction, t0=grid[0]):
            return (tt - t0) * d

        lhs, rhs, gap = first_variation_check(fmap, scheme, system, u, grid, psi,
                                              h=h, eps=eps)
        chain = residual_sequence(fmap, scheme, system, u, grid, h=h, eps=eps)
        rows.append({"point": i, "lhs": lhs, "rhs": rhs, "gap": gap,
                     "max_residual": chain.max_residual_norm()})
    export_results(rows, os.path.join(out, "firstvar.csv"), fmt="csv")
    artifacts.append("firstvar.csv")

    if isinstance(scheme, ImplicitMidpoint):
        report = midpoint_condition_scan(fmap, system, batch, grid, h, eps=eps)
        report.to_csv(os.path.join(out, "conditions.csv"))
        artifacts.append("conditions.csv")
        print(f"verify-adjoint: min midpoint margin {report.min_margin:.3e}")
    worst = max(r["gap"] for r in rows)
    write_manifest(out, "verify-adjoint", config, artifacts)
    print(f"verify-adjoint: worst first-variation gap {worst:.3e} -> {out}")
    return 0


_COMMANDS = {
    "simulate": cmd_simulate,
    "sample": cmd_sample,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "bench": cmd_bench,
    "verify-adjoint": cmd_verify_adjoint,
}


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="hamflow",
        description="Learn and evaluate Hamiltonian flow maps from numerical schemes.",
    )
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True,
                        help="config file path or packaged preset name")
    parser.add_argument("--override", nargs="*", default=[],
                        metavar="SECTION.KEY=VALUE",
                        help="dotted-path config overrides")
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
        config.apply_overrides(args.override)
        return _COMMANDS[args.command](config)
    except ConfigError as exc:
        print(json.dumps({"error": "config", "message": str(exc)}), file=sys.stderr)
        return 2
    except HamflowError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    except Exception as exc:  # runtime contract: exit 1 with a JSON error line
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
