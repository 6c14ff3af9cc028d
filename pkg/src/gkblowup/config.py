"""Run configuration: a nested JSON document validated against a fixed schema.

Unknown keys are rejected, and every error names the offending field path
(``flow.t_grid[2]``, ``atlas``, ...).  Missing keys take the defaults below.
"""

import copy
import json
import math
from dataclasses import dataclass

from .errors import ConfigInvalid

DEFAULTS = {
    "model": {"t0": 0.05, "half_width": 1.2, "step": 0.0025},
    "atlas": {"r0": 0.2, "r1": 0.45, "r2": 0.7, "r_max": 1.0},
    "potential": {"c_grid": [0.4, 0.2, 0.1, 0.05, 0.025, 0.0125]},
    "flow": {
        "step": 0.01,
        "max_steps": 10000,
        "t_grid": [0.08, -0.08, 0.04, -0.04, 0.02, -0.02],
        "convergence_t": [-0.08, -0.04, -0.02],
        "scaling_factors": [0.5, 0.25],
    },
    "grids": {
        "model_counts": 4,
        "model_half_width": 1.0,
        "base_half_width": 1.0,
        "fiber_half_width": 0.7,
        "scan_counts": [5, 5, 8, 8],
        "scan_samples": 200,
        "residual_counts": [4, 4, 6, 6],
        "convergence_counts": [4, 4, 6, 6],
        "divisor_counts": 8,
        "margin": 0.001,
        "overlap_points": 100,
        "annulus_points": 50,
    },
    "tolerances": {"residual": 1e-6, "algebra": 1e-12, "derived": 1e-10, "degenerate": 1e-9},
    "derivatives": {"mode": "dual", "fd_step": 1e-5, "richardson": False},
    "output": {"dir": "gk-out"},
    "seed": 0,
}


def _fail(path, msg):
    raise ConfigInvalid(path, msg)


def _merge(defaults, given, path):
    if not isinstance(given, dict):
        _fail(path or "<root>", f"expected an object, got {type(given).__name__}")
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        sub = f"{path}.{key}" if path else key
        if key not in defaults:
            _fail(sub, "unknown key")
        out[key] = _merge(defaults[key], value, sub) if isinstance(defaults[key], dict) else value
    return out


def _num(d, path, key, positive=False, nonzero=False, integer=False, lo=None, hi=None):
    v = d[key]
    p = f"{path}.{key}" if path else key
    if isinstance(v, bool) or not isinstance(v, (int, float)) or (integer and not isinstance(v, int)):
        _fail(p, f"expected {'an integer' if integer else 'a number'}, got {v!r}")
    if not math.isfinite(v):
        _fail(p, f"must be finite, got {v!r}")
    if positive and not v > 0:
        _fail(p, f"must be positive, got {v!r}")
    if nonzero and v == 0:
        _fail(p, "must be nonzero")
    if lo is not None and v < lo or hi is not None and v > hi:
        _fail(p, f"must lie in [{lo}, {hi}], got {v!r}")
    return v


def _list(d, path, key, length=None, **kw):
    v = d[key]
    p = f"{path}.{key}"
    if not isinstance(v, list) or not v:
        _fail(p, f"expected a nonempty list, got {v!r}")
    if length is not None and len(v) != length:
        _fail(p, f"expected {length} entries, got {len(v)}")
    for i in range(len(v)):
        _num({f"{key}[{i}]": v[i]}, path, f"{key}[{i}]", **kw)
    return v


def validate(cfg):
    """Check every constraint; returns ``cfg`` unchanged or raises :class:`ConfigInvalid`."""
    m, a, f, g = cfg["model"], cfg["atlas"], cfg["flow"], cfg["grids"]
    _num(m, "model", "t0", nonzero=True)
    _num(m, "model", "half_width", positive=True)
    _num(m, "model", "step", positive=True)
    for k in ("r0", "r1", "r2", "r_max"):
        _num(a, "atlas", k, positive=True)
    if not a["r0"] < a["r1"] < a["r2"] <= a["r_max"]:
        _fail("atlas", f"radii must satisfy r0 < r1 < r2 <= r_max, got r0={a['r0']}, r1={a['r1']}, "
                       f"r2={a['r2']}, r_max={a['r_max']}")
    if a["r_max"] > m["half_width"]:
        _fail("atlas.r_max", f"atlas radius {a['r_max']} exceeds the model box half width {m['half_width']}")
    _list(cfg["potential"], "potential", "c_grid", positive=True)
    _num(f, "flow", "step", positive=True)
    _num(f, "flow", "max_steps", positive=True, integer=True)
    _list(f, "flow", "t_grid", nonzero=True)
    ct = _list(f, "flow", "convergence_t", nonzero=True)
    if len(ct) < 2 or any(ct[i + 1] != ct[i] / 2 for i in range(len(ct) - 1)):
        _fail("flow.convergence_t", f"needs at least two values, each half the previous, got {ct}")
    _list(f, "flow", "scaling_factors", positive=True, hi=1.0)
    _num(g, "grids", "model_counts", integer=True, lo=2)
    for k in ("model_half_width", "base_half_width", "fiber_half_width"):
        _num(g, "grids", k, positive=True)
    if g["model_half_width"] > m["half_width"]:
        _fail("grids.model_half_width", "model grid leaves the model box")
    for k in ("scan_counts", "residual_counts", "convergence_counts"):
        _list(g, "grids", k, length=4, integer=True, lo=2)
    for k in ("scan_samples",):
        _num(g, "grids", k, integer=True, lo=0)
    for k in ("divisor_counts", "overlap_points", "annulus_points"):
        _num(g, "grids", k, integer=True, lo=2)
    _num(g, "grids", "margin", lo=0.0, hi=0.1)
    for k in ("residual", "algebra", "derived", "degenerate"):
        _num(cfg["tolerances"], "tolerances", k, positive=True)
    d = cfg["derivatives"]
    if d["mode"] not in ("dual", "fd"):
        _fail("derivatives.mode", f"must be 'dual' or 'fd', got {d['mode']!r}")
    _num(d, "derivatives", "fd_step", lo=1e-9, hi=1e-2)
    if not isinstance(d["richardson"], bool):
        _fail("derivatives.richardson", "must be true or false")
    if not isinstance(cfg["output"]["dir"], str) or not cfg["output"]["dir"]:
        _fail("output.dir", "must be a nonempty string")
    _num(cfg, "", "seed", integer=True, lo=0)
    return cfg


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration; ``data`` is the full nested document (defaults filled in)."""

    data: dict

    @classmethod
    def from_dict(cls, given=None):
        return cls(validate(_merge(DEFAULTS, given or {}, "")))

    @classmethod
    def load(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                given = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigInvalid("<file>", f"{path}: not valid JSON ({exc})") from exc
        except OSError as exc:
            raise ConfigInvalid("<file>", f"cannot read {path}: {exc}") from exc
        return cls.from_dict(given)

    def replace(self, path, value):
        """Copy with one dotted field replaced (validated again)."""
        data = copy.deepcopy(self.data)
        *head, last = path.split(".")
        node = data
        for key in head:
            node = node[key]
        node[last] = value
        return RunConfig(validate(data))

    def __getitem__(self, key):
        return self.data[key]

    def to_json(self):
        return json.dumps(self.data, indent=2, sort_keys=True)


def template():
    return json.dumps(DEFAULTS, indent=2)
