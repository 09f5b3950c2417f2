"""Run configuration: INI-style files with typed values and dotted overrides.

A config is a tree of sections (system, scheme, model, loss, sampler, run)
whose values are parsed as JSON fragments where possible (numbers, lists,
booleans) and kept as strings otherwise.  Command-line overrides use dotted
paths, e.g. ``model.hidden=[64,64]`` or ``run.iterations=5000``.

Named presets ship inside the package; ``load_config`` resolves a path
first and falls back to the preset directory.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from importlib import resources

from .errors import ConfigError

SECTIONS = ("system", "scheme", "model", "loss", "sampler", "run")

_KNOWN_KEYS = {
    "system": {"name", "eps", "omega", "m", "b0", "a1", "a2", "k"},
    "scheme": {"name", "h", "newton_tol", "newton_max_iter"},
    "model": {
        "kind", "order", "hidden", "t0", "conditioned", "speed_preserving",
        "velocity_indices", "t_max", "partition", "checkpoint", "seed",
    },
    "loss": {
        "type", "norm", "norm_omega", "norm_block_m", "time_mode", "t_final",
        "n_times", "tau", "fixed_time", "phase_mode", "box", "r_min", "r_max",
        "position_box", "batch_size", "eps_min", "eps_max", "n_compose",
        "dataset", "n_data", "progressive_until",
    },
    "sampler": {
        "h0", "band_std", "lambda", "proposal_scheme", "proposal_h",
        "n_samples", "n_levels", "per_level", "q0",
    },
    "run": {
        "seed", "iterations", "eval_every", "lr", "stop_below", "out_dir",
        "initial", "t_final", "n_steps", "dt", "workers", "repeats",
        "long_factor", "eps", "label", "reference_tol",
    },
}


def _parse_value(raw):
    raw = raw.strip()
    try:
        return json.loads(raw)
    except (json.JSONDecodeError, ValueError):
        return raw


class RunConfig:
    """Validated section/key tree with typed access helpers."""

    def __init__(self, tree=None):
        self.tree = {section: dict(values) for section, values in (tree or {}).items()}
        self.validate_schema()

    def validate_schema(self):
        for section, values in self.tree.items():
            if section not in SECTIONS:
                raise ConfigError(f"unknown config section [{section}]")
            unknown = set(values) - _KNOWN_KEYS[section]
            if unknown:
                raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")

    def get(self, section, key, default=None, required=False):
        value = self.tree.get(section, {}).get(key, default)
        if required and value is None:
            raise ConfigError(f"missing required config value {section}.{key}")
        return value

    def section(self, name):
        return dict(self.tree.get(name, {}))

    def apply_overrides(self, overrides):
        for item in overrides or []:
            if "=" not in item:
                raise ConfigError(f"override '{item}' is not of the form section.key=value")
            path, raw = item.split("=", 1)
            if "." not in path:
                raise ConfigError(f"override path '{path}' needs a section.key form")
            section, key = path.split(".", 1)
            self.tree.setdefault(section, {})[key] = _parse_value(raw)
        self.validate_schema()
        return self

    def canonical_json(self):
        return json.dumps(self.tree, sort_keys=True, default=str)

    def digest(self):
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]


def parse_config_text(text):
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse failure: {exc}") from None
    tree = {section: {k: _parse_value(v) for k, v in parser.items(section)}
            for section in parser.sections()}
    return RunConfig(tree)


def preset_names():
    pkg = resources.files("hamflow") / "presets"
    return sorted(p.name[:-4] for p in pkg.iterdir() if p.name.endswith(".cfg"))


def load_config(path_or_name):
    """Load a config file, or a packaged preset by bare name."""
    import os

    if os.path.exists(path_or_name):
        with open(path_or_name) as fh:
            return parse_config_text(fh.read())
    name = str(path_or_name)
    if name.endswith(".cfg"):
        name = name[:-4]
    name = os.path.basename(name)
    candidate = resources.files("hamflow") / "presets" / f"{name}.cfg"
    if candidate.is_file():
        return parse_config_text(candidate.read_text())
    raise ConfigError(
        f"no config file at '{path_or_name}' and no preset named '{name}' "
        f"(presets: {', '.join(preset_names())})"
    )
