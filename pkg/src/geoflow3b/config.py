"""Run configuration: JSON schema, validation and construction of the problem.

Units follow the internal dimensionless system of the library: lengths in
units of ``R0``, masses as given, and the effective one-particle mass ``mu0``
scaling the mass-weighted coordinates. Angles are radians.
"""
import copy
import json
import secrets

import jsonschema
import numpy as np

from .errors import ConfigError
from .geodesic import FixedGauge, RandomStepGauge
from .kinematics import JacobiState, LabState, PotentialSpec, derive_masses, hyperspherical_rates
from .manifold import conformal_factor
from .newtonian import hamiltonian, phase_from_jacobi, phase_from_lab, phase_to_jacobi
from .system import SystemSpec
from .transform import check_gauge

__all__ = ["SCHEMA", "COMMANDS", "load_config", "validate_config", "resolve_seed", "build_system",
           "build_initial", "build_gauge", "RunSetup", "setup_run"]

COMMANDS = ("simulate-newton", "simulate-geodesic", "compare", "deviate", "ensemble", "fp",
            "analyze")

_vec3 = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}
_mat3 = {"type": "array", "items": _vec3, "minItems": 3, "maxItems": 3}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_range = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_axes = {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1, "maxItems": 2}
_scalar_or_3 = {"oneOf": [{"type": "number"}, _vec3]}

SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "geoflow3b run configuration",
    "type": "object",
    "required": ["system", "initial"],
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 63 - 1,
                 "description": "Run seed; generated and recorded when absent."},
        "output": {"type": "string", "description": "Output directory (overridden by --out)."},
        "system": {
            "type": "object",
            "required": ["masses", "potential"],
            "additionalProperties": False,
            "properties": {
                "masses": {"type": "array", "items": _pos, "minItems": 3, "maxItems": 3,
                           "description": "Body masses m1, m2, m3 (> 0)."},
                "potential": {
                    "type": "object",
                    "required": ["kind"],
                    "properties": {
                        "kind": {"enum": ["gravity", "morse", "tabulated", "free"]},
                        "G": _pos,
                        "softening": {**_nonneg, "description": "Plummer length (gravity)."},
                        "depth": _scalar_or_3, "width": _scalar_or_3, "d0": _scalar_or_3,
                        "distances": {"type": "array", "items": {"type": "number"}, "minItems": 2},
                        "values": {"type": "array", "items": {"type": "number"}, "minItems": 2},
                    },
                    "allOf": [
                        {"if": {"properties": {"kind": {"const": "tabulated"}}},
                         "then": {"required": ["distances", "values"]}},
                    ],
                },
                "energy": {"type": "number",
                           "description": "Total energy E; must match the initial state when given."},
                "R0": {**_pos, "description": "Length scale of the angle coordinates."},
                "J": {"oneOf": [_vec3, {"const": "auto"}],
                      "description": "First integrals of the external motion; 'auto' derives "
                                     "them from the initial state."},
                "U0": {**_pos, "description": "Normalisation of the conformal factor."},
                "u0_box": {"type": "object", "additionalProperties": False,
                           "required": ["r", "R"],
                           "properties": {"r": _range, "R": _range, "theta": _range}},
                "level": {**_pos, "description": "Reduced Hamiltonian level (rescales s)."},
            },
        },
        "initial": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "jacobi": {"type": "object", "required": ["r", "R", "dr", "dR"],
                           "additionalProperties": False,
                           "properties": {"r": _vec3, "R": _vec3, "dr": _vec3, "dR": _vec3},
                           "description": "Jacobi vectors and their time derivatives."},
                "lab": {"type": "object", "required": ["positions", "velocities"],
                        "additionalProperties": False,
                        "properties": {"positions": _mat3, "velocities": _mat3}},
                "t0": {"type": "number"},
            },
            "oneOf": [{"required": ["jacobi"]}, {"required": ["lab"]}],
        },
        "integrator": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "rtol": _pos, "atol": _pos,
                "max_step": {"oneOf": [_pos, {"type": "null"}]},
                "t_end": _pos,
                "s_end": _pos,
                "method": {"enum": ["DOP853", "verlet"]},
                "dt": _pos,
                "order": {"enum": [5, 6]},
                "g_guard": _pos,
                "convention": {"enum": ["rotation", "printed"]},
            },
        },
        "gauge": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"policy": {"enum": ["fixed", "random-step"]}, "matrix": _mat3},
        },
        "compare": {"type": "object", "additionalProperties": False,
                    "properties": {"tol": _pos, "midpoints": {"type": "boolean"}}},
        "deviation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "zeta0": _vec3, "zeta_dot0": _vec3,
                "n_out": {"type": "integer", "minimum": 2},
                "fd_eta": _pos,
                "fd_check": {"type": "boolean"},
                "window": _range,
                "metric_norm": {"type": "boolean"},
            },
        },
        "noise": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "eps": {"oneOf": [_nonneg, _mat3]},
                "ds": _pos,
                "noise_on": {"enum": ["all", "momentum"]},
                "calculus": {"enum": ["ito", "stratonovich"]},
            },
        },
        "ensemble": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "model": {"enum": ["phase", "frozen-phase", "metric"]},
                "n_paths": {"type": "integer", "minimum": 1},
                "s_end": _pos,
                "stamps": {"type": "array", "items": _nonneg, "minItems": 1},
                "axes": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
                "bins": {"type": "integer", "minimum": 1},
                "ranges": {"type": "array", "items": _range},
                "initial_std": _nonneg,
                "a": _vec3, "lam2": _nonneg,
                "block": {"type": "integer", "minimum": 1},
            },
        },
        "fp": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind", "a", "grid", "s_end"],
            "properties": {
                "kind": {"enum": ["phase", "momentum"]},
                "a": _vec3, "lam2": _nonneg,
                "axes": _axes,
                "fixed": {"type": "array", "items": {"type": "number"}},
                "grid": {"type": "array", "minItems": 1, "maxItems": 2,
                         "items": {"type": "array", "items": {"type": "number"},
                                   "minItems": 3, "maxItems": 3},
                         "description": "Per axis [lo, hi, cells]."},
                "initial_mean": {"type": "array", "items": {"type": "number"}},
                "initial_std": {"type": "array", "items": _pos},
                "s_end": _pos,
                "dt": _pos, "cfl": _pos,
                "frozen_b": {"type": "array"},
                "mc_paths": {"type": "integer", "minimum": 1},
                "coarsen": {"type": "integer", "minimum": 1},
            },
        },
        "analyze": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kl": {"type": "object", "additionalProperties": False,
                       "properties": {"alpha": _nonneg, "r2_threshold": _nonneg}},
                "zero_accel": {"type": "object", "additionalProperties": False,
                               "properties": {"rho": _vec3, "n_seeds": {"type": "integer", "minimum": 1}}},
                "level_surface": {"type": "object", "additionalProperties": False,
                                  "required": ["h", "box"],
                                  "properties": {"h": {"type": "array", "items": _pos, "minItems": 1},
                                                 "box": {"type": "array", "items": _range,
                                                         "minItems": 3, "maxItems": 3},
                                                 "n_rays": {"type": "integer", "minimum": 1}}},
                "channels": {"type": "object", "additionalProperties": False,
                             "properties": {"eps_E": _pos, "R_cut": _pos, "R_far": _pos,
                                            "final": {"type": "string"}}},
            },
        },
    },
}


def validate_config(config):
    """Schema validation; raises :class:`ConfigError` with the offending path."""
    try:
        jsonschema.validate(config, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from exc
    return config


def load_config(path):
    try:
        with open(path) as f:
            config = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return validate_config(config)


def resolve_seed(config):
    """Copy of ``config`` with a seed; a fresh one is drawn when absent."""
    out = copy.deepcopy(config)
    if "seed" not in out:
        out["seed"] = secrets.randbits(63)
    return out


def _potential(spec, masses):
    kind = spec["kind"]
    if kind == "gravity":
        return PotentialSpec.gravity(masses, spec.get("G", 1.0), spec.get("softening", 0.0))
    if kind == "morse":
        return PotentialSpec.morse(spec.get("depth", 1.0), spec.get("width", 1.0), spec.get("d0", 1.0))
    if kind == "tabulated":
        return PotentialSpec.tabulated(spec["distances"], spec["values"])
    return PotentialSpec.free()


def build_initial(config, masses):
    """Newtonian phase point from the ``initial`` block."""
    init = config["initial"]
    t0 = float(init.get("t0", 0.0))
    try:
        if "jacobi" in init:
            b = init["jacobi"]
            vr, vR = np.asarray(b["dr"], float), np.asarray(b["dR"], float)
            j = JacobiState(r=np.asarray(b["r"], float), R=np.asarray(b["R"], float),
                            P3=np.sqrt(masses.mu0 * masses.mu3) * vr,
                            P2=np.sqrt(masses.mu0 * masses.mu2) * vR)
            if np.linalg.norm(j.r) == 0 or np.linalg.norm(j.R) == 0:
                raise ConfigError("initial Jacobi vectors must be nonzero")
            return phase_from_jacobi(j, masses, t0)
        b = init["lab"]
        v = np.asarray(b["velocities"], float)
        lab = LabState(np.asarray(b["positions"], float), masses.masses[:, None] * v)
        return phase_from_lab(lab, masses, t0)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"initial state: {exc}") from exc


def build_system(config, phase=None):
    """:class:`SystemSpec` from the ``system`` block (and the initial state).

    The energy and, with ``J = "auto"`` (default), the external integrals are
    taken from the initial state. A stated energy must agree with it.
    """
    sb = config["system"]
    masses = derive_masses(*sb["masses"])
    pot = _potential(sb["potential"], masses)
    phase = build_initial(config, masses) if phase is None else phase
    R0 = float(sb.get("R0", 1.0))
    box = sb.get("u0_box")
    try:
        probe = SystemSpec(masses, pot, 0.0, R0, U0=sb.get("U0"), u0_box=box)
        E = hamiltonian(phase, probe)
        if "energy" in sb:
            stated = float(sb["energy"])
            if abs(stated - E) > 1e-9 * max(1.0, abs(E)):
                raise ConfigError(f"system.energy={stated} disagrees with the initial state (E={E})")
        J = sb.get("J", "auto")
        if J == "auto":
            base = SystemSpec(masses, pot, E, R0, U0=probe.U0, level=sb.get("level"))
            hyper, rates = hyperspherical_rates(phase_to_jacobi(phase, masses), R0, masses)
            J = conformal_factor(hyper.internal, base) * rates[3:]
            J = np.where(np.abs(J) < 1e-14, 0.0, J)
        return SystemSpec(masses, pot, E, R0, J, U0=probe.U0, level=sb.get("level"))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"system: {exc}") from exc


def build_gauge(config):
    g = config.get("gauge", {})
    if g.get("policy", "fixed") == "random-step":
        return RandomStepGauge(config["seed"])
    try:
        return FixedGauge(check_gauge(g.get("matrix")))
    except ValueError as exc:
        raise ConfigError(f"gauge: {exc}") from exc


class RunSetup:
    """Resolved pieces shared by the commands."""

    def __init__(self, config, system, phase, integrator):
        self.config = config
        self.system = system
        self.phase = phase
        self.integrator = integrator

    def gauge(self):
        """A fresh gauge policy (random-step gauges carry RNG state)."""
        return build_gauge(self.config)


INTEGRATOR_DEFAULTS = {"rtol": 1e-12, "atol": 1e-12, "max_step": None, "t_end": 5.0,
                       "method": "DOP853", "order": 6, "g_guard": 0.05, "convention": "rotation"}


def setup_run(config):
    """Validate, seed and build the system; returns :class:`RunSetup`."""
    validate_config(config)
    config = resolve_seed(config)
    masses = derive_masses(*config["system"]["masses"])
    phase = build_initial(config, masses)
    system = build_system(config, phase)
    integ = {**INTEGRATOR_DEFAULTS, **config.get("integrator", {})}
    if integ["method"] == "verlet" and "dt" not in integ:
        raise ConfigError("integrator.method='verlet' needs integrator.dt")
    if integ["max_step"] is None:
        integ["max_step"] = np.inf
    return RunSetup(config, system, phase, integ)
