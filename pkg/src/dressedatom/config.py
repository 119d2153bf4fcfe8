"""Run configuration: JSON schema validation, dotted overrides and model construction."""

import copy
import hashlib
import json
from dataclasses import dataclass
from importlib import resources

import jsonschema

from .atom import FormFactorSpec, PotentialSpec, Profile, RadialGrid, solve_atom
from .errors import ConfigError
from .fiber import FiberConfig
from .fock import build_basis, make_mode_grid


def _load(name):
    return json.loads(resources.files("dressedatom").joinpath("data", name).read_text())


def defaults():
    return _load("defaults.json")


def schema():
    return _load("config.schema.json")


def merge(base, update):
    """Recursive dict merge; lists and scalars in `update` replace those in `base`."""
    out = copy.deepcopy(base)
    for key, val in update.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def parse_override(text):
    """'a.b.c=value' -> (['a', 'b', 'c'], value); value parsed as JSON when possible."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value", path=text)
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def apply_overrides(config, overrides):
    config = copy.deepcopy(config)
    for text in overrides or ():
        path, value = parse_override(text)
        node = config
        for part in path[:-1]:
            if not isinstance(node.get(part), dict):
                node[part] = {}
            node = node[part]
        node[path[-1]] = value
    return config


def validate(config):
    validator = jsonschema.Draft202012Validator(schema())
    errors = sorted(validator.iter_errors(config), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        path = ".".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"{path}: {err.message}", path=path)
    return config


def resolve(user=None, overrides=None):
    """Defaults <- user file contents <- --set overrides, then schema-checked."""
    config = merge(defaults(), user or {})
    config = apply_overrides(config, overrides)
    return validate(config)


def load(path=None, overrides=None):
    user = None
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}", path="<file>") from exc
    return resolve(user, overrides)


def config_hash(config):
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class Model:
    """Everything built from a resolved config that the analyses share."""

    config: dict
    atom: object
    ff: FormFactorSpec

    def fiber(self, grid=None, g=None, Pi=None):
        """FiberConfig on the global discretization or on a named analysis sub-grid."""
        disc = dict(self.config["discretization"])
        if grid is not None:
            sub = self.config["analysis"].get(grid, {})
            disc.update({k: sub[k] for k in ("n_radial", "directions", "n_max") if k in sub})
        mode_grid = make_mode_grid(self.ff.k_uv, disc["n_radial"], disc["directions"], sigma=self.ff.sigma)
        basis = build_basis(mode_grid, disc["n_max"], cap=disc["size_cap"])
        Pi = self.config["analysis"]["Pi"] if Pi is None else Pi
        return FiberConfig(
            self.atom, basis, self.ff, Pi=Pi, g=self.ff.g if g is None else g, size_cap=disc["size_cap"]
        )


def potential_from(model):
    pot = dict(model["potential"])
    m_n = float("inf") if model["m_n"] == "inf" else model["m_n"]
    for key in ("table_r", "table_v"):
        if key in pot:
            pot[key] = tuple(pot[key])
    return PotentialSpec(m_e=model["m_e"], m_n=m_n, **pot)


def form_factor_from(model):
    return FormFactorSpec(
        kappa_e=Profile(**model["kappa_e"]),
        kappa_n=Profile(**model["kappa_n"]),
        sigma=model["sigma"],
        g=model["g"],
    )


def build_model(config):
    disc = config["discretization"]
    atom = solve_atom(
        potential_from(config["model"]),
        disc["l_max"],
        disc["n_levels"],
        RadialGrid(**disc["atom_grid"]),
    )
    return Model(config, atom, form_factor_from(config["model"]))
