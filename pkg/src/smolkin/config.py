"""TOML run configuration.

Schema (all sections optional except where a subcommand needs them)::

    [model]
    dimension = 3
    N = 1000
    Z = 1.0                       # optional, inferred from the profiles
    alpha = 8.0                   # scalar, or an M x M table
    diffusivity = 1.0             # scalar, list, or {d1 = 1.0, exponent = -0.5}
    mass_cap = 64
    potential = {kind = "radial_poly_bump", v0 = 1.0, R = 1.0}
    [[model.profiles]]
    mass = 1
    kind = "box"                  # or "radial_bump"
    value = 1.0
    lo = [0, 0, 0]
    hi = [1, 1, 1]

    [domain]
    kind = "torus"                # or "free_space"
    L = 1.0

    [run]
    T = 1.0
    engine = "stepper"            # or "encounter" (torus, constant d and alpha)
    annihilation = false
    c_dt = 0.05
    times = [0.0, 0.5, 1.0]
    observers = ["alive", "tracer"]
    snapshot_times = []
    events = true

The ``kernel``, ``pde``, ``ode``, ``analyze`` and ``experiment`` sections
hold the options of the matching subcommands. Unknown keys are errors.
"""
from __future__ import annotations

import copy
import hashlib
import json
import sys

import numpy as np

from .errors import ConfigurationError
from .params import (ODE_MASS_CAP, SIM_MASS_CAP, DomainSpec, InitialProfile, ModelParams,
                     PotentialSpec, diffusivity_power)

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

SCHEMA = {
    "model": {"dimension", "N", "Z", "alpha", "diffusivity", "mass_cap", "potential", "profiles"},
    "domain": {"kind", "L"},
    "run": {"T", "engine", "annihilation", "c_dt", "max_rate_dt", "times", "observers",
            "snapshot_times", "events", "coarse_dt", "test_function"},
    "kernel": {"method", "M", "resolution", "n_paths", "c0", "field_pairs"},
    "pde": {"shape", "h", "kind", "dt", "T", "M", "save_times", "init", "beta", "react_cfl"},
    "ode": {"M", "T", "times", "init", "beta", "rtol"},
    "analyze": {"input", "delta", "beta", "n", "m", "k", "n_boxes", "times"},
    "experiment": {"name", "alpha", "Ns", "T", "times", "n_paths", "resolution", "delta",
                   "replicas", "n_boxes"},
}
_POTENTIAL_KEYS = {"kind", "v0", "R", "radii", "values"}
_PROFILE_KEYS = {"mass", "kind", "value", "lo", "hi", "center", "radius"}
_TEST_FN_KEYS = {"amplitude", "radius", "center"}


def _reject_unknown(where: str, got, allowed):
    extra = set(got) - set(allowed)
    if extra:
        raise ConfigurationError(f"unknown key(s) in [{where}]: {', '.join(sorted(extra))}")


def validate_config(cfg: dict) -> dict:
    _reject_unknown("top level", cfg, SCHEMA)
    for sec, keys in SCHEMA.items():
        if sec in cfg:
            if not isinstance(cfg[sec], dict):
                raise ConfigurationError(f"[{sec}] must be a table")
            _reject_unknown(sec, cfg[sec], keys)
    model = cfg.get("model", {})
    if isinstance(model.get("potential"), dict):
        _reject_unknown("model.potential", model["potential"], _POTENTIAL_KEYS)
    for p in model.get("profiles", []):
        _reject_unknown("model.profiles", p, _PROFILE_KEYS)
    tf = cfg.get("run", {}).get("test_function")
    if isinstance(tf, dict):
        _reject_unknown("run.test_function", tf, _TEST_FN_KEYS)
    return cfg


def load_config(path) -> dict:
    with open(path, "rb") as fh:
        try:
            cfg = tomllib.load(fh)
        except tomllib.TOMLDecodeError as e:
            raise ConfigurationError(f"{path}: {e}") from None
    return validate_config(cfg)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not serializable: {type(x)}")


def config_hash(cfg: dict) -> str:
    """SHA-256 of the canonical (key-sorted) JSON form."""
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()


def merged(cfg: dict, overrides: dict) -> dict:
    out = copy.deepcopy(cfg)
    for sec, vals in overrides.items():
        out.setdefault(sec, {}).update(vals)
    return validate_config(out)


def _table(value, M, name):
    a = np.asarray(value, dtype=float)
    if a.ndim == 0:
        return np.full((M, M), float(a)) if name == "alpha" else np.full(M, float(a))
    return a


def model_from_config(cfg: dict) -> ModelParams:
    m = cfg.get("model")
    if not m:
        raise ConfigurationError("config has no [model] section")
    d = int(m.get("dimension", 3))
    M = int(m.get("mass_cap", SIM_MASS_CAP))
    dif = m.get("diffusivity", 1.0)
    if isinstance(dif, dict):
        dif = diffusivity_power(float(dif.get("d1", 1.0)), float(dif.get("exponent", 0.0)), M)
    dif = _table(dif, M, "diffusivity")
    alpha = _table(m.get("alpha", 1.0), dif.size, "alpha")
    pot = m.get("potential", {})
    potential = PotentialSpec(pot.get("kind", "radial_poly_bump"), v0=float(pot.get("v0", 1.0)),
                              R=float(pot.get("R", 1.0)),
                              radii=tuple(pot["radii"]) if "radii" in pot else None,
                              values=tuple(pot["values"]) if "values" in pot else None, dim=d)
    profs = []
    for p in m.get("profiles", []):
        kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in p.items()}
        profs.append(InitialProfile(**kw))
    if not profs:
        dom = domain_from_config(cfg)
        L = dom.L if dom.periodic else 1.0
        profs.append(InitialProfile(mass=1, kind="box", value=1.0, lo=(0.0,) * d, hi=(L,) * d))
    return ModelParams(d, dif, alpha, potential, tuple(profs), int(m.get("N", 1000)), m.get("Z"))


def domain_from_config(cfg: dict) -> DomainSpec:
    dom = cfg.get("domain", {})
    return DomainSpec(dom.get("kind", "free_space"), float(dom.get("L", 1.0)))


def ode_mass_cap(cfg: dict) -> int:
    return int(cfg.get("ode", {}).get("M", ODE_MASS_CAP))
