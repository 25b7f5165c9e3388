"""Run configuration: JSON schema, defaults, parsing and model construction.

Defaults reproduce the material table of the reference study (film
mu = 100, kappa = 1e5; substrate mu = 1, kappa = 1e3; fibre direction
[0, 1, 0]) and the long-strip geometry 1 x 240 x 4 with a 0.5 film.
"""

import copy
import json
import math
import os

import jsonschema

from .errors import ConfigError
from .material import GrowthSpec, MaterialParams
from .mesh import FILM, SUBSTRATE, build_bilayer_box
from .solver import ContinuationConfig, PerturbationSpec, Problem

_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_count = {"type": "integer", "minimum": 1}
_vec3 = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}
_vec2 = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}

_material = {
    "type": "object",
    "additionalProperties": False,
    "required": ["mu0", "kappa"],
    "properties": {
        "mu0": _pos,
        "kappa": _pos,
        "mu_fiber": _nonneg,
        "n0": _vec3,
        "tension_only": {"type": "boolean"},
    },
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "morphofem run configuration",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "geometry": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "Lx": _pos,
                "Ly": _pos,
                "H": _pos,
                "h_film": _pos,
                "nx": _count,
                "ny": _count,
                "nz_substrate": _count,
                "nz_film": _count,
                "periodic": {"type": "array", "items": {"enum": ["x", "y"]}, "uniqueItems": True},
            },
        },
        "materials": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"film": _material, "substrate": _material},
        },
        "growth": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["planar", "isotropic"]},
                "m0": _vec3,
                "g_max": _pos,
            },
        },
        "continuation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dt0": _pos,
                "max_halvings": {"type": "integer", "minimum": 0},
                "newton_max_iter": _count,
                "newton_rel_tol": _pos,
                "newton_abs_tol": _pos,
                "reset_after_buckling": {"type": "boolean"},
                "stability_check": {"type": "boolean"},
                "stop_after_buckling": {"type": ["number", "null"], "minimum": 0},
            },
        },
        "perturbation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "amplitude": _nonneg,
                "pattern": {"enum": ["patch", "sinusoid"]},
                "active_window": {
                    "type": "array",
                    "items": {"type": ["number", "null"]},
                    "minItems": 2,
                    "maxItems": 2,
                },
                "center": _vec2,
                "width": _pos,
                "direction": _vec2,
            },
        },
        "study": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mu_fiber": {"type": "array", "items": _nonneg, "minItems": 1},
                "wavelength": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "strip_summary": {"type": ["string", "null"]},
                "element_size": _pos,
                "mesh_scale": _pos,
                "workers": _count,
            },
        },
        "outputs": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "directory": {"type": "string", "minLength": 1},
                "vtu_every_n_steps": {"type": "integer", "minimum": 0},
                "checkpoint_every_g": {"type": ["number", "null"], "exclusiveMinimum": 0},
            },
        },
    },
}

DEFAULTS = {
    "geometry": {
        "Lx": 1.0,
        "Ly": 240.0,
        "H": 4.0,
        "h_film": 0.5,
        "nx": 2,
        "ny": 480,
        "nz_substrate": 7,
        "nz_film": 1,
        "periodic": ["x", "y"],
    },
    "materials": {
        "film": {"mu0": 100.0, "kappa": 1e5, "mu_fiber": 100.0, "n0": [0.0, 1.0, 0.0], "tension_only": False},
        "substrate": {"mu0": 1.0, "kappa": 1e3, "mu_fiber": 0.0, "n0": [0.0, 1.0, 0.0], "tension_only": False},
    },
    "growth": {"kind": "planar", "m0": [0.0, 0.0, 1.0], "g_max": 0.04},
    "continuation": {
        "dt0": 1e-4,
        "max_halvings": 5,
        "newton_max_iter": 20,
        "newton_rel_tol": 1e-8,
        "newton_abs_tol": 1e-10,
        "reset_after_buckling": True,
        "stability_check": True,
        "stop_after_buckling": None,
    },
    "perturbation": {
        "amplitude": 0.1,
        "pattern": "patch",
        "active_window": [0.0, None],
        "center": [0.31, 0.37],
        "width": 0.05,
        "direction": [0.6, 0.8],
    },
    "study": {
        "mu_fiber": [100.0, 250.0, 750.0, 1000.0, 2500.0],
        "wavelength": None,
        "strip_summary": None,
        "element_size": 0.5,
        "mesh_scale": 1.0,
        "workers": 1,
    },
    "outputs": {"directory": "morphofem-out", "vtu_every_n_steps": 0, "checkpoint_every_g": None},
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _path(err):
    return ".".join(str(p) for p in err.absolute_path) or "<root>"


def validate(doc):
    """Schema check; raises ConfigError naming the offending field."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        msg = "; ".join(f"{_path(e)}: {e.message}" for e in errors)
        raise ConfigError(f"invalid configuration: {msg}")
    geo = doc.get("geometry", {})
    if "h_film" in geo and "H" in geo and not geo["h_film"] < geo["H"]:
        raise ConfigError("invalid configuration: geometry.h_film: must be smaller than geometry.H")
    win = doc.get("perturbation", {}).get("active_window")
    if win is not None and win[0] is not None and win[1] is not None and win[1] < win[0]:
        raise ConfigError("invalid configuration: perturbation.active_window: upper bound below lower bound")


def resolve(doc=None):
    """Validate ``doc`` and return it with all defaults filled in."""
    doc = {} if doc is None else doc
    if not isinstance(doc, dict):
        raise ConfigError("invalid configuration: <root>: must be a JSON object")
    # partial sections are allowed, so only the merged document is checked
    full = _merge(DEFAULTS, doc)
    validate(full)
    return full


def load(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return resolve(doc)


def dumps(cfg):
    return json.dumps(cfg, indent=2, sort_keys=True) + "\n"


def parse(text):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"not valid JSON ({exc})") from exc
    return resolve(doc)


def save(cfg, path):
    with open(path, "w") as fh:
        fh.write(dumps(cfg))


def check_writable(directory):
    """Create ``directory`` if needed and make sure files can be written."""
    try:
        os.makedirs(directory, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"outputs.directory: cannot create {directory!r}: {exc.strerror}") from exc
    if not os.access(directory, os.W_OK):
        raise ConfigError(f"outputs.directory: {directory!r} is not writable")


# model construction


def material_params(m):
    return MaterialParams(
        mu0=m["mu0"],
        penalty_lambda=m["kappa"],
        mu_fiber=m.get("mu_fiber", 0.0),
        n0=tuple(m.get("n0", (0.0, 1.0, 0.0))),
        tension_only=m.get("tension_only", False),
    )


def continuation_config(cfg):
    c = cfg["continuation"]
    return ContinuationConfig(
        dt0=c["dt0"],
        max_halvings=c["max_halvings"],
        newton_max_iter=c["newton_max_iter"],
        newton_rel_tol=c["newton_rel_tol"],
        newton_abs_tol=c["newton_abs_tol"],
        g_max=cfg["growth"]["g_max"],
        reset_after_buckling=c["reset_after_buckling"],
        stability_check=c["stability_check"],
    )


def perturbation_spec(cfg):
    p = cfg["perturbation"]
    lo, hi = p["active_window"]
    return PerturbationSpec(
        amplitude=p["amplitude"],
        pattern=p["pattern"],
        active_window=(0.0 if lo is None else lo, math.inf if hi is None else hi),
        center=tuple(p["center"]),
        width=p["width"],
        direction=tuple(p["direction"]),
    )


def mesh_counts(geo, scale=1.0):
    def sc(n):
        return max(1, int(round(n * scale)))

    return sc(geo["nx"]), sc(geo["ny"]), sc(geo["nz_substrate"]), max(1, int(round(geo["nz_film"] * min(scale, 1.0))))


def build_mesh(cfg):
    geo = cfg["geometry"]
    nx, ny, nzs, nzf = mesh_counts(geo, cfg["study"]["mesh_scale"])
    return build_bilayer_box(geo["Lx"], geo["Ly"], geo["H"], geo["h_film"], nx, ny, nzs, nzf)


def build_problem(cfg, mesh=None):
    mesh = mesh if mesh is not None else build_mesh(cfg)
    mats = cfg["materials"]
    params = {FILM: material_params(mats["film"]), SUBSTRATE: material_params(mats["substrate"])}
    gr = cfg["growth"]
    growth = GrowthSpec(gr["kind"], 0.0, tuple(gr["m0"]))
    return Problem(
        mesh,
        params,
        growth,
        periodic_axes=tuple(cfg["geometry"]["periodic"]),
        perturbation=perturbation_spec(cfg),
    )


def with_mu_fiber(cfg, mu_fiber):
    out = copy.deepcopy(cfg)
    out["materials"]["film"]["mu_fiber"] = float(mu_fiber)
    return out


def rve_geometry(cfg, wavelength):
    """Square periodic cell of side twice the wavelength, meshed at the
    study element size."""
    out = copy.deepcopy(cfg)
    geo = out["geometry"]
    h = out["study"]["element_size"]
    L = 2.0 * wavelength
    n = max(1, int(round(L / h)))
    geo.update(Lx=L, Ly=L, nx=n, ny=n, periodic=["x", "y"])
    geo["nz_film"] = max(1, int(round(geo["h_film"] / h)))
    geo["nz_substrate"] = max(1, int(round((geo["H"] - geo["h_film"]) / h)))
    out["study"]["wavelength"] = float(wavelength)
    return out
