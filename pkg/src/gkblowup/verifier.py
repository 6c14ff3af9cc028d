"""Grid certification: positivity scans, degeneracy on E, residual suites, convergence.

Every operation evaluates a jitted, vmapped per-point kernel over a fixed,
ordered list of points and then reduces the per-point records in that order,
so a report is reproducible bit for bit.  Kernels are cached by the numerical
content of the structure (not its identity), and ``c`` and ``t`` are traced
arguments: one compiled kernel per chart serves a whole parameter grid.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import _backend  # noqa: F401
import jax
import jax.numpy as jnp

from . import tensors as ta
from .blowup import (
    assemble_pointwise,
    blowdown,
    deformation_class_closed_form,
    deformation_class_Z,
    deformation_form,
    lift_poisson,
    omega_E_closed_form,
    radius2,
    smooth_ddcf,
    transition,
    transition_jacobian,
)
from .errors import GKError, OutOfDomain
from .fields import DUAL, ddc_fn, gk_residual_from_jets, nijenhuis_fn, nijenhuis_from_jet
from .flow import FlowConfig, model_flow_form, model_pointwise, model_Q

RESIDUAL_TOL = 1e-6
DEGENERATE_TOL = 1e-9
NONDEGENERATE_MIN = 1e-4
THIRD_TERM_TOL = 1e-10

ZONES = ("E", "U_E", "K\\U_E", "outside K")


# --------------------------------------------------------------------------
# grids


def _divisor_index(chart):
    return (2, 3) if chart == 0 else (0, 1)


@dataclass(frozen=True)
class GridSpec:
    """Lattice (plus optional random samples) in one chart, filtered by blow-down radius.

    ``chart`` is 0 or 1 for the blow-up charts, or ``"model"`` for the base.
    Points closer than ``margin`` to E are dropped; ``include_divisor`` adds the
    slice of the lattice lying on E.
    """

    chart: object = 0
    ranges: tuple = ((-1.0, 1.0),) * 4
    counts: tuple = (4, 4, 4, 4)
    margin: float = 1e-3
    r_bounds: tuple = None
    include_divisor: bool = False
    samples: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.chart not in (0, 1, "model"):
            raise ValueError(f"chart must be 0, 1 or 'model', got {self.chart!r}")
        ranges = tuple((float(lo), float(hi)) for lo, hi in self.ranges)
        counts = tuple(int(n) for n in self.counts)
        if len(ranges) != 4 or len(counts) != 4:
            raise ValueError("a grid needs 4 ranges and 4 counts")
        if any(lo >= hi for lo, hi in ranges):
            raise ValueError(f"empty grid range in {ranges}")
        if any(n < 2 for n in counts):
            raise ValueError(f"grid counts must be >= 2, got {counts}")
        if self.margin < 0 or self.samples < 0:
            raise ValueError("margin and samples must be nonnegative")
        if self.r_bounds is not None:
            lo, hi = self.r_bounds
            if not 0 <= lo < hi:
                raise ValueError(f"bad radius bounds {self.r_bounds}")
            object.__setattr__(self, "r_bounds", (float(lo), float(hi)))
        if self.include_divisor and self.chart == "model":
            raise ValueError("the model chart has no divisor")
        object.__setattr__(self, "ranges", ranges)
        object.__setattr__(self, "counts", counts)

    def _radius(self, pts):
        return chart_radius(self.chart, pts)

    def divisor_points(self):
        """The lattice's slice on E (divisor coordinates set to zero)."""
        if self.chart == "model":
            return np.zeros((0, 4))
        k = _divisor_index(self.chart)
        free = [i for i in range(4) if i not in k]
        axes = [np.linspace(*self.ranges[i], self.counts[i]) for i in free]
        a, b = np.meshgrid(*axes, indexing="ij")
        pts = np.zeros((a.size, 4))
        pts[:, free[0]], pts[:, free[1]] = a.ravel(), b.ravel()
        return pts

    def points(self):
        axes = [np.linspace(lo, hi, n) for (lo, hi), n in zip(self.ranges, self.counts)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 4)
        if self.samples:
            lo = np.array([a for a, _ in self.ranges])
            hi = np.array([b for _, b in self.ranges])
            rng = np.random.default_rng(self.seed)
            pts = np.concatenate([pts, lo + (hi - lo) * rng.random((self.samples, 4))])
        if self.chart == "model":
            return pts
        k = _divisor_index(self.chart)
        pts = pts[np.hypot(pts[:, k[0]], pts[:, k[1]]) > self.margin]
        if self.r_bounds is not None:
            r = self._radius(pts)
            pts = pts[(r > self.r_bounds[0]) & (r < self.r_bounds[1])]
        if self.include_divisor:
            pts = np.concatenate([self.divisor_points(), pts])
        return np.ascontiguousarray(pts)


def _grids(grid):
    return (grid,) if isinstance(grid, GridSpec) else tuple(grid)


def chart_radius(chart, pts):
    """Blow-down radius of an (N, 4) array of chart points."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 4)
    return np.sqrt(radius2(chart, pts.T))


def zones(spec, chart, pts):
    """Zone label of each chart point: E, U_E (r < r0), K\\U_E (r <= r1) or outside K."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 4)
    if chart == "model":
        return [""] * len(pts)
    k = _divisor_index(chart)
    on_E = (pts[:, k[0]] == 0.0) & (pts[:, k[1]] == 0.0)
    r = chart_radius(chart, pts)
    return ["E" if e else "U_E" if x < spec.r0 else "K\\U_E" if x <= spec.r1 else "outside K"
            for e, x in zip(on_E, r)]


# --------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class PointRecord:
    chart: object
    coords: tuple
    min_eig: float = math.nan
    res_brane: float = math.nan
    res_nijenhuis: float = math.nan
    res_gk: float = math.nan
    zone: str = ""
    notes: str = ""


def _clean(x):
    """JSON-friendly copy: numpy scalars to Python, NaN/inf to None, tuples to lists."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    return x


def _nanext(values, fn):
    v = np.asarray([x for x in values if not math.isnan(x)], dtype=float)
    return float(fn(v)) if v.size else math.nan


def summarize(records):
    """Extrema of the per-point columns (NaN entries skipped and counted)."""
    col = lambda name: [getattr(r, name) for r in records]
    mins = col("min_eig")
    return {
        "n_points": len(records),
        "n_failed_points": sum(1 for r in records if r.notes.startswith("error")),
        "global_min_eig": _nanext(mins, np.min),
        "max_res_brane": _nanext(col("res_brane"), np.max),
        "max_res_nijenhuis": _nanext(col("res_nijenhuis"), np.max),
        "max_res_gk": _nanext(col("res_gk"), np.max),
    }


@dataclass
class ScanReport:
    name: str
    parameters: dict
    records: list
    summary: dict
    criteria: dict
    provenance: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(self.criteria.values())

    def to_dict(self):
        return _clean({
            "name": self.name,
            "parameters": self.parameters,
            "summary": self.summary,
            "criteria": self.criteria,
            "passed": self.passed,
            "provenance": self.provenance,
            "tables": self.tables,
        })


def _provenance(conventions, deriv=DUAL, **extra):
    return {
        "deriv_mode": deriv.mode,
        "fd_step": deriv.fd_step if deriv.mode == "fd" else None,
        "tolerances": {"residual": RESIDUAL_TOL, "algebra": ta.ALG_TOL, "derived": ta.DERIVED_TOL,
                       "degenerate": DEGENERATE_TOL},
        "conventions": conventions.as_dict(),
        **extra,
    }


# --------------------------------------------------------------------------
# kernels

_KERNELS = {}


def _model_key(model):
    return (model.t0, model.domain, model.provenance.get("flow_step"), model.conventions)


def _structure_key(structure):
    s = structure.spec
    return (_model_key(structure.model), (s.r0, s.r1, s.r2), structure.atlas, structure.conventions)


def _cached(key, build):
    if key not in _KERNELS:
        _KERNELS[key] = build()
    return _KERNELS[key]


def clear_kernel_cache():
    _KERNELS.clear()


def _maxabs(x):
    return jnp.max(jnp.abs(x))


def _deformed_point(structure, chart, n):
    """Traceable ``(p, t, c) -> dict`` of every tensor of the deformed structure at p."""
    conv = structure.conventions

    def fn(p, t, c):
        F, exit_step = deformation_form(structure.spec, t, n, chart, conv)(p, c)
        lifted = structure.lifted(chart, p)
        Ip, Im, g, b, w, Q = lifted
        g_t, b_t, _, g_prime, third = assemble_pointwise(structure, F, chart, p, lifted)
        return {"F": F, "exit": exit_step, "Ip": Ip, "Im": Im, "g": g, "b": b, "w": w, "Q": Q,
                "Ipt": Ip + Q @ F, "g_t": g_t, "b_t": b_t, "g_prime": g_prime, "third": third}

    return fn


def _positivity_kernel(structure, chart, n):
    def build():
        point = _deformed_point(structure, chart, n)

        def k(p, t, c):
            d = point(p, t, c)
            return {"eig_t": jnp.linalg.eigvalsh(d["g_t"]), "eig": jnp.linalg.eigvalsh(d["g"]),
                    "g_t": d["g_t"], "g": d["g"], "g_prime": d["g_prime"], "third": d["third"],
                    "exit": d["exit"]}

        return jax.jit(jax.vmap(k, in_axes=(0, None, None)))

    return _cached(("positivity", _structure_key(structure), chart, n), build)


def _jets_residuals(v, jet, conventions):
    """Per-point residual maxima from tensor values ``v`` and first derivatives ``jet``."""
    brane_w = _maxabs(ta.brane_residual(v["w"], v["Im"], v["Q"]))
    brane_F = _maxabs(ta.brane_residual(v["F"], v["Ip"], v["Q"]))
    brane_wF = _maxabs(ta.brane_residual(v["w"] + v["F"], v["Im"], v["Q"]))
    nij_m = _maxabs(nijenhuis_from_jet(v["Im"], jet["Im"]))
    nij_p = _maxabs(nijenhuis_from_jet(v["Ip"], jet["Ip"]))
    nij_pt = _maxabs(nijenhuis_from_jet(v["Ipt"], jet["Ipt"]))
    rp, rm = gk_residual_from_jets(v["g_t"], jet["g_t"], v["b_t"], jet["b_t"],
                                   v["Ipt"], jet["Ipt"], v["Im"], jet["Im"], conventions)
    return {"brane_w": brane_w, "brane_F": brane_F, "brane_wF": brane_wF,
            "nij_m": nij_m, "nij_p": nij_p, "nij_pt": nij_pt,
            "gk_plus": _maxabs(rp), "gk_minus": _maxabs(rm)}


_JET_KEYS = ("g_t", "b_t", "Ip", "Ipt", "Im")
_OUT_KEYS = ("g_t", "b_t", "Ipt", "Im", "exit")


def _residual_kernel(structure, chart, n, deriv):
    conv = structure.conventions

    def build():
        point = _deformed_point(structure, chart, n)
        if deriv.mode == "dual":
            def k(p, t, c):
                def T(x):
                    d = point(x, t, c)
                    return tuple(d[key] for key in _JET_KEYS), d

                jac, v = jax.jacfwd(T, has_aux=True)(p)
                res = _jets_residuals(v, dict(zip(_JET_KEYS, jac)), conv)
                return {**res, **{key: v[key] for key in _OUT_KEYS}}

            return jax.jit(jax.vmap(k, in_axes=(0, None, None)))

        values = jax.jit(jax.vmap(point, in_axes=(0, None, None)))
        res_fn = jax.jit(jax.vmap(lambda v, j: _jets_residuals(v, j, conv)))

        def k(P, t, c):
            v = values(P, t, c)
            jet = _fd_jets(lambda Q: values(Q, t, c), P, deriv)
            res = res_fn(v, jet)
            return {**res, **{key: v[key] for key in _OUT_KEYS}}

        return k

    return _cached(("residual", _structure_key(structure), chart, n, deriv), build)


def _fd_jets(values, P, deriv):
    """Central-difference jets of every tensor in ``values(P)`` (index last)."""

    def central(h):
        cols = []
        for i in range(4):
            e = np.zeros(4)
            e[i] = h
            vp, vm = values(P + e), values(P - e)
            cols.append({key: (vp[key] - vm[key]) / (2 * h) for key in _JET_KEYS})
        return {key: jnp.stack([c[key] for c in cols], axis=-1) for key in _JET_KEYS}

    jet = central(deriv.fd_step)
    if deriv.richardson:
        half = central(deriv.fd_step / 2)
        jet = {key: (4 * half[key] - jet[key]) / 3 for key in _JET_KEYS}
    return jet


def _model_kernel(model, deriv):
    conv = model.conventions

    def build():
        def tensors(p):
            Ip, Im, g, b, w, Q = model_pointwise(model.F.fn, p)
            return {"F": -w, "Ip": Ip, "Im": Im, "g": g, "b": b, "w": w, "Q": Q}

        def residuals(v, jet):
            rp, rm = gk_residual_from_jets(v["g"], jet["g"], v["b"], jet["b"],
                                           v["Ip"], jet["Ip"], v["Im"], jet["Im"], conv)
            return {"brane": _maxabs(ta.brane_residual(v["F"], v["Ip"], v["Q"])),
                    "nij_m": _maxabs(nijenhuis_from_jet(v["Im"], jet["Im"])),
                    "gk_plus": _maxabs(rp), "gk_minus": _maxabs(rm),
                    "eig": jnp.linalg.eigvalsh(v["g"]),
                    **{key: v[key] for key in ("g", "b", "Ip", "Im")}}

        keys = ("g", "b", "Ip", "Im")
        if deriv.mode == "dual":
            def k(p):
                def T(x):
                    v = tensors(x)
                    return tuple(v[key] for key in keys), v

                jac, v = jax.jacfwd(T, has_aux=True)(p)
                return residuals(v, dict(zip(keys, jac)))

            return jax.jit(jax.vmap(k))

        values = jax.jit(jax.vmap(tensors))
        res_fn = jax.jit(jax.vmap(residuals))

        def k(P):
            h = deriv.fd_step
            cols = []
            for i in range(4):
                e = np.zeros(4)
                e[i] = h
                vp, vm = values(P + e), values(P - e)
                cols.append({key: (vp[key] - vm[key]) / (2 * h) for key in keys})
            jet = {key: jnp.stack([c[key] for c in cols], axis=-1) for key in keys}
            return res_fn(values(P), jet)

        return k

    return _cached(("model", _model_key(model), deriv), build)


def _model_brane_kernel(t0, n, conventions):
    def build():
        F_fn = model_flow_form(t0, n, conventions)
        k = lambda p: _maxabs(ta.brane_residual(F_fn(p)[0], jnp.asarray(ta.STD_I), model_Q(p)))
        return jax.jit(jax.vmap(k))

    return _cached(("model-brane", t0, n, conventions), build)


def _np(d):
    return {k: np.asarray(v) for k, v in d.items()}


# --------------------------------------------------------------------------
# J algebra (numpy, per point)


def j_algebra(b, ip, im, g):
    """``(max |J+^2 + Id|, max |J-^2 + Id|, max |[J+, J-]|)`` from bi-Hermitian data."""
    wp, wm = g @ ip, g @ im
    Jp = ta.reconstruct_J(b, ip, im, wp, wm, "+")
    Jm = ta.reconstruct_J(b, ip, im, wp, wm, "-")
    eye = np.eye(8)
    return ta.max_abs(Jp @ Jp + eye), ta.max_abs(Jm @ Jm + eye), ta.max_abs(ta.commutator(Jp, Jm))


# --------------------------------------------------------------------------
# the local model


def model_residual_suite(model, grid, deriv=DUAL, tol=RESIDUAL_TOL, alg_tol=ta.ALG_TOL, derived_tol=ta.DERIVED_TOL):
    """Brane, Nijenhuis, generalized Kaehler and J-algebra residuals of the local model."""
    pts = grid.points()
    model.domain.check(pts.min(axis=0))
    model.domain.check(pts.max(axis=0))
    out = _np(_model_kernel(model, deriv)(jnp.asarray(pts)))
    records, j2, comm = [], [], []
    for i, p in enumerate(pts):
        jp, jm, cm = j_algebra(out["b"][i], out["Ip"][i], out["Im"][i], out["g"][i])
        j2.append(max(jp, jm))
        comm.append(cm)
        records.append(PointRecord("model", tuple(map(float, p)), float(out["eig"][i, 0]),
                                   float(out["brane"][i]), float(out["nij_m"][i]),
                                   float(max(out["gk_plus"][i], out["gk_minus"][i])),
                                   notes=f"J2={j2[-1]!r};comm={cm!r}"))
    summary = summarize(records)
    summary.update(max_gk_plus=float(out["gk_plus"].max()), max_gk_minus=float(out["gk_minus"].max()),
                   max_J_squared=max(j2), max_J_commutator=max(comm))
    criteria = {
        "metric_positive": summary["global_min_eig"] > 0,
        "brane": summary["max_res_brane"] <= tol,
        "nijenhuis": summary["max_res_nijenhuis"] <= tol,
        "gk_condition": summary["max_res_gk"] <= tol,
        "J_squared": summary["max_J_squared"] <= alg_tol,
        "J_commute": summary["max_J_commutator"] <= derived_tol,
    }
    params = {"t0": model.t0, "flow_step": model.provenance.get("flow_step")}
    return ScanReport("model", params, records, summary, criteria, _provenance(model.conventions, deriv))


def step_halving(model, grid, step=1e-2, min_ratio=8.0):
    """Brane residual of the model flow form at ``step`` and ``step/2``.

    The residual of an exact solution is zero, so what remains is the time
    discretization (plus roundoff); the ratio should approach 16 for RK4.
    """
    pts = jnp.asarray(grid.points())
    t0 = model.t0
    res = {}
    for h in (step, step / 2):
        n = FlowConfig(h).n_steps(t0)
        res[h] = float(np.max(np.asarray(_model_brane_kernel(t0, n, model.conventions)(pts))))
    ratio = res[step] / res[step / 2] if res[step / 2] > 0 else math.inf
    summary = {"residual_h": res[step], "residual_h2": res[step / 2], "ratio": ratio}
    criteria = {"brane_at_step": res[step] <= RESIDUAL_TOL, "halving_ratio": ratio >= min_ratio}
    return ScanReport("step-halving", {"t0": t0, "step": step, "n_points": int(pts.shape[0])}, [],
                      summary, criteria, _provenance(model.conventions))


def negative_control(model, grid, threshold=1e-3):
    """Nijenhuis tensor of ``I0 + Q F`` for the closed but non-brane form ``F = t0 dd^c(|u|^2+|v|^2)``.

    The first-order term of the flow form alone does not solve the brane
    equation, so the deformed structure must fail to be integrable.
    """
    conv = model.conventions
    I0 = lambda p: jnp.asarray(ta.STD_I)
    A = ddc_fn(lambda p: jnp.sum(p * p), I0, conv)
    t0 = model.t0
    Im = lambda p: I0(p) + model_Q(p) @ (t0 * A(p))
    N = jax.vmap(lambda p: _maxabs(nijenhuis_fn(Im)(p)))(jnp.asarray(grid.points()))
    value = float(np.max(np.asarray(N)))
    return ScanReport("negative-control", {"form": "t0 * ddc(|u|^2+|v|^2)", "t0": t0}, [],
                      {"max_nijenhuis": value}, {"detects_non_brane": value >= threshold},
                      _provenance(conv))


# --------------------------------------------------------------------------
# the blow-up


def _check_guard(structure, grids):
    for grid in grids:
        if grid.chart == "model":
            raise ValueError("blow-up scans need chart grids")
        pts = grid.points()
        r = grid._radius(pts) if len(pts) else np.zeros(0)
        if np.any(r >= structure.spec.r2):
            raise OutOfDomain(f"grid in chart {grid.chart} reaches r = {r.max():.4g} >= r2 = {structure.spec.r2}")


def _evaluate(kernel_for, structure, grids, t, c):
    """Run the chart kernels over the grids; returns [(chart, points, outputs)]."""
    out = []
    for grid in grids:
        pts = grid.points()
        res = _np(kernel_for(grid.chart)(jnp.asarray(pts), float(t), float(c))) if len(pts) else {}
        out.append((grid.chart, pts, res))
    return out


def _exit_note(e):
    return f"error: LeftDomain(step {int(e)})" if e >= 0 else ""


def _n(cfg, t, n):
    return n if n is not None else max(cfg.n_steps(t), 1)


def positivity_scan(structure, c, t, grid, cfg=FlowConfig(), n=None):
    """Minimum eigenvalue of ``g~_t`` at every grid point, with the three-zone breakdown.

    ``n`` fixes the number of flow steps (default: from ``cfg``); pass the same
    ``n`` for a whole parameter grid to reuse one compiled kernel.
    """
    grids = _grids(grid)
    _check_guard(structure, grids)
    n = _n(cfg, t, n)
    spec = structure.spec
    evals = _evaluate(lambda ch: _positivity_kernel(structure, ch, n), structure, grids, t, c)
    records = []
    zone_min = {z: math.inf for z in ZONES}
    third_on_E, third_full, outside_equal, n_outside = 0.0, 0.0, True, 0
    for chart, pts, out in evals:
        for i, (p, z) in enumerate(zip(pts, zones(spec, chart, pts))):
            note = _exit_note(out["exit"][i])
            m = math.nan if note else float(out["eig_t"][i, 0])
            if not note:
                zone_min[z] = min(zone_min[z], m)
            if z == "E":
                # omega~ kills TE, so the third summand vanishes on TE x TE
                te = [j for j in range(4) if j not in _divisor_index(chart)]
                third_on_E = max(third_on_E, float(np.max(np.abs(out["third"][i][np.ix_(te, te)]))))
                third_full = max(third_full, float(np.max(np.abs(out["third"][i]))))
            if z == "outside K":
                n_outside += 1
                same = np.array_equal(out["g_t"][i], out["g"][i])
                outside_equal &= bool(same)
                if not same:
                    note = (note + ";" if note else "") + "g_t differs from g outside K"
            records.append(PointRecord(chart, tuple(map(float, p)), m, zone=z, notes=note))
    summary = summarize(records)
    summary.update(zone_min={z: (v if math.isfinite(v) else math.nan) for z, v in zone_min.items()},
                   max_third_on_TE=third_on_E, max_third_on_E_full=third_full, n_outside_K=n_outside)
    criteria = {
        "positive": summary["n_failed_points"] == 0 and summary["global_min_eig"] > 0,
        "equals_base_outside_K": outside_equal,
        "third_term_vanishes_on_E": third_on_E <= THIRD_TERM_TOL,
    }
    params = _params(structure, c, t, cfg, n)
    return ScanReport("positivity", params, records, summary, criteria,
                      _provenance(structure.conventions))


def _params(structure, c, t, cfg, n):
    s = structure.spec
    return {"c": float(c), "t": float(t), "t0": structure.model.t0, "radii": [s.r0, s.r1, s.r2],
            "flow_steps": n, "effective_step": abs(t) / n if n else 0.0, "max_step": cfg.step}


def degeneracy_check(structure, grid, off_divisor_offset=0.05, n=1, tol=DEGENERATE_TOL):
    """Eigenvalues of ``g~`` on E: two vanish (the kernel is TE), two stay positive.

    Each grid contributes its E slice; the same points moved off E by
    ``off_divisor_offset`` must have all four eigenvalues positive.
    """
    grids = _grids(grid)
    spec = structure.spec
    records = []
    worst_small, worst_large, worst_kernel, worst_off = 0.0, math.inf, 0.0, math.inf
    for g in grids:
        pts = g.divisor_points()
        k = _divisor_index(g.chart)
        off = pts.copy()
        off[:, k[0]] = off_divisor_offset
        kern = _positivity_kernel(structure, g.chart, n)
        on = _np(kern(jnp.asarray(pts), 0.0, spec.c))
        offv = _np(kern(jnp.asarray(off), 0.0, spec.c))
        te = [i for i in range(4) if i not in k]
        for i, p in enumerate(pts):
            eig = on["eig"][i]
            mags = np.sort(np.abs(eig))
            kernel_err = float(np.max(np.abs(on["g"][i][:, te])))
            worst_small = max(worst_small, float(mags[1]))
            worst_large = min(worst_large, float(mags[2]))
            worst_kernel = max(worst_kernel, kernel_err)
            worst_off = min(worst_off, float(offv["eig"][i, 0]))
            records.append(PointRecord(g.chart, tuple(map(float, p)), float(eig[0]), zone="E",
                                       notes=f"eigs={';'.join(repr(float(x)) for x in eig)};TE_kernel={kernel_err!r}"))
    summary = summarize(records)
    summary.update(max_small_eig=worst_small, min_large_eig=worst_large, max_TE_kernel=worst_kernel,
                   min_eig_off_E=worst_off)
    criteria = {
        "two_vanish": worst_small <= tol,
        "two_nondegenerate": worst_large >= NONDEGENERATE_MIN,
        "TE_in_kernel": worst_kernel <= tol,
        "positive_off_E": worst_off > 0,
    }
    return ScanReport("degeneracy", {"t0": structure.model.t0, "offset": off_divisor_offset}, records,
                      summary, criteria, _provenance(structure.conventions))


def pullback_check(structure, grid, tol=ta.ALG_TOL):
    """``g~ + b~ = pi^*(g + b)`` off E, with ``pi^*`` computed from the blow-down Jacobian."""
    worst = 0.0
    n_points = 0
    for g in _grids(grid):
        pts = jnp.asarray(g.points())

        def build(chart=g.chart):
            def k(p):
                _, _, gt, bt, _, _ = structure.lifted(chart, p)
                return _maxabs(gt + bt - structure.pullback_g_plus_b(chart, p))
            return jax.jit(jax.vmap(k))

        kern = _cached(("pullback", _structure_key(structure), g.chart), build)
        worst = max(worst, float(np.max(np.asarray(kern(pts)))))
        n_points += int(pts.shape[0])
    return ScanReport("pullback", {"n_points": n_points}, [], {"max_error": worst},
                      {"pullback_identity": worst <= tol}, _provenance(structure.conventions))


def residual_suite(structure, c, t, grid, cfg=FlowConfig(), n=None, deriv=DUAL, tol=RESIDUAL_TOL):
    """Every identity of the deformed structure, point by point.

    Brane residuals of ``omega~`` for ``(I-~, Q~)``, of ``F_t`` for
    ``(I+~, Q~)`` and of ``omega~ + F_t`` for ``(I-~, Q~)``; Nijenhuis tensors of
    ``I-~``, ``I+~`` and ``I+~^t``; the generalized Kaehler condition for
    ``(g~_t, b~_t, I+~^t, I-~)``; and the J algebra where ``g~_t`` is positive.
    """
    grids = _grids(grid)
    _check_guard(structure, grids)
    n = _n(cfg, t, n)
    evals = _evaluate(lambda ch: _residual_kernel(structure, ch, n, deriv), structure, grids, t, c)
    records = []
    detail = {k: 0.0 for k in ("brane_w", "brane_F", "brane_wF", "nij_m", "nij_p", "nij_pt", "gk_plus", "gk_minus")}
    j2_max, comm_max, n_j = 0.0, 0.0, 0
    for chart, pts, out in evals:
        for i, (p, z) in enumerate(zip(pts, zones(structure.spec, chart, pts))):
            note = _exit_note(out["exit"][i])
            if note:
                records.append(PointRecord(chart, tuple(map(float, p)), zone=z, notes=note))
                continue
            for key in detail:
                detail[key] = max(detail[key], float(out[key][i]))
            g_t = out["g_t"][i]
            m = float(np.linalg.eigvalsh(g_t)[0])
            parts = []
            if m > 0:
                jp, jm, cm = j_algebra(out["b_t"][i], out["Ipt"][i], out["Im"][i], g_t)
                j2_max, comm_max, n_j = max(j2_max, jp, jm), max(comm_max, cm), n_j + 1
                parts.append(f"J2={max(jp, jm)!r};comm={cm!r}")
            records.append(PointRecord(
                chart, tuple(map(float, p)), m,
                float(max(out["brane_w"][i], out["brane_F"][i], out["brane_wF"][i])),
                float(max(out["nij_m"][i], out["nij_p"][i], out["nij_pt"][i])),
                float(max(out["gk_plus"][i], out["gk_minus"][i])),
                z, ";".join(parts)))
    summary = summarize(records)
    summary.update(detail=detail, max_J_squared=j2_max, max_J_commutator=comm_max, n_J_points=n_j)
    criteria = {
        "no_flow_failures": summary["n_failed_points"] == 0,
        "brane": summary["max_res_brane"] <= tol,
        "nijenhuis": summary["max_res_nijenhuis"] <= tol,
        "gk_condition": summary["max_res_gk"] <= tol,
    }
    return ScanReport("residuals", _params(structure, c, t, cfg, n), records, summary, criteria,
                      _provenance(structure.conventions, deriv))


EXACT_TOL = 1e-13


def _limit_kernel(structure, chart):
    """``(p, c) -> (auto, closed)``: the t -> 0 limit of ``(1/t) g~'_t`` two ways.

    ``auto`` is ``-sym(c dd^c f1 . I+~)`` by automatic differentiation,
    ``closed`` the same with the Fubini-Study closed form (valid in U_E only).
    """
    def build():
        s1 = structure.spec.with_c(1.0)
        conv = structure.conventions
        I = jnp.asarray(ta.STD_I)

        def k(p, c):
            auto = ta.sym(-c * smooth_ddcf(s1, chart, p, conv) @ I)
            closed = ta.sym(-c * omega_E_closed_form(s1, chart, p, conv) @ I)
            return auto, closed

        return jax.jit(jax.vmap(k, in_axes=(0, None)))

    return _cached(("limit", _structure_key(structure), chart), build)


def convergence_study(structure, c, ts, grid, outer_grid=None, cfg=FlowConfig(), n=None,
                      ratio_window=(0.4, 0.6)):
    """``max |(1/t) g~'_t - h~|`` per zone for a halving sequence of ``t``.

    Inside U_E the limit ``h~`` is the closed form ``-sym(c omega_E I+~)``;
    in K\\U_E it is ``-sym(dd^c f . I+~)`` evaluated by automatic
    differentiation.  In U_E the flow preserves ``omega_E`` and the quadratic
    term ``A Q A`` vanishes, so there the limit is attained exactly and the
    error sits at roundoff for every ``t``; the first-order ratio is measured
    wherever the error is above roundoff.  On ``outer_grid`` (outside K)
    ``g~'_t`` must vanish exactly.
    """
    ts = [float(t) for t in ts]
    grids = _grids(grid)
    outer = _grids(outer_grid) if outer_grid is not None else ()
    _check_guard(structure, grids + outer)
    n = n if n is not None else max(cfg.n_steps(max(ts, key=abs)), 1)
    conv = structure.conventions
    zone_err = {z: [] for z in ("U_E", "K\\U_E")}
    per_point, outer_max, closed_vs_auto = {}, 0.0, 0.0
    limits = {}
    for grid_ in grids:
        pts = grid_.points()
        auto, closed = (np.asarray(x) for x in _limit_kernel(structure, grid_.chart)(jnp.asarray(pts), float(c)))
        zs = zones(structure.spec, grid_.chart, pts)
        inner = np.array([z in ("E", "U_E") for z in zs], dtype=bool)
        h = np.where(inner[:, None, None], closed, auto)
        if inner.any():
            closed_vs_auto = max(closed_vs_auto, ta.max_abs(closed[inner] - auto[inner]))
        limits[grid_.chart] = (pts, zs, h)
    for t in ts:
        worst = {z: 0.0 for z in zone_err}
        for chart, pts, out in _evaluate(lambda ch: _positivity_kernel(structure, ch, n), structure, grids, t, c):
            _, zs, h = limits[chart]
            for i, (p, z) in enumerate(zip(pts, zs)):
                e = math.nan if out["exit"][i] >= 0 else ta.max_abs(out["g_prime"][i] / t - h[i])
                per_point.setdefault((chart, tuple(map(float, p)), z), []).append(e)
                key = "U_E" if z in ("E", "U_E") else "K\\U_E" if z == "K\\U_E" else None
                if key is not None:
                    worst[key] = math.nan if math.isnan(e) or math.isnan(worst[key]) else max(worst[key], e)
        for z in zone_err:
            zone_err[z].append(worst[z])
        for chart, pts, out in _evaluate(lambda ch: _positivity_kernel(structure, ch, n), structure, outer, t, c):
            if len(pts):
                outer_max = max(outer_max, float(np.max(np.abs(out["g_prime"]))))
    ratios = {z: [e[i + 1] / e[i] if e[i] > 0 else math.nan for i in range(len(e) - 1)]
              for z, e in zone_err.items()}
    lo, hi = ratio_window
    in_window = lambda rs: bool(rs) and all(lo <= r <= hi for r in rs)
    records = [PointRecord(chart, p, zone=z, notes=";".join(f"err(t={t!r})={e!r}" for t, e in zip(ts, errs)))
               for (chart, p, z), errs in per_point.items()]
    summary = summarize(records)
    summary.update(errors=zone_err, ratios=ratios, max_g_prime_outside_K=outer_max,
                   closed_form_vs_autodiff_U_E=closed_vs_auto)
    has_transition = any(z == "K\\U_E" for (_, _, z) in per_point)
    criteria = {
        "U_E_limit": in_window(ratios["U_E"]) or all(e <= EXACT_TOL for e in zone_err["U_E"]),
        "transition_first_order": in_window(ratios["K\\U_E"]) if has_transition else True,
        "closed_form_matches_autodiff": closed_vs_auto <= ta.DERIVED_TOL,
        "zero_outside_K": outer_max == 0.0,
    }
    table = [{"t": t, **{f"error {z}": zone_err[z][i] for z in zone_err}} for i, t in enumerate(ts)]
    return ScanReport("convergence", {"c": float(c), "t_sequence": ts, "flow_steps": n}, records, summary,
                      criteria, _provenance(conv), {"t_halving": table})


def parameter_search(structure, c_grid, t_grid, grid, cfg=FlowConfig(), n=None):
    """Positivity over the full ``(c, t)`` matrix; certifies the first passing pair.

    Pairs are visited with ``c`` in the given order (outer loop) and ``t`` in
    the given order (inner loop).
    """
    grids = _grids(grid)
    n = n if n is not None else max(cfg.n_steps(max(t_grid, key=abs)), 1)
    matrix, first = [], None
    for c in c_grid:
        row = []
        for t in t_grid:
            rep = positivity_scan(structure, c, t, grids, cfg, n)
            row.append({"c": float(c), "t": float(t), "global_min_eig": rep.summary["global_min_eig"],
                        "n_failed_points": rep.summary["n_failed_points"], "passed": rep.passed})
            if first is None and rep.passed:
                first = (float(c), float(t))
        matrix.append(row)
    summary = {"certified": list(first) if first else None}
    params = {"c_grid": [float(c) for c in c_grid], "t_grid": [float(t) for t in t_grid], "flow_steps": n}
    return ScanReport("parameter-search", params, [], summary, {"found_positive_pair": first is not None},
                      _provenance(structure.conventions), {"matrix": matrix})


def scaling_check(structure, c0, t, grid, factors=(0.5, 0.25), cfg=FlowConfig(), n=None):
    """If positivity holds at ``c0``, it must also hold at ``lambda c0``."""
    n = _n(cfg, t, n)
    base = positivity_scan(structure, c0, t, grid, cfg, n)
    rows = [{"c": float(c0), "global_min_eig": base.summary["global_min_eig"], "passed": base.passed}]
    for lam in factors:
        rep = positivity_scan(structure, lam * c0, t, grid, cfg, n)
        rows.append({"c": float(lam * c0), "global_min_eig": rep.summary["global_min_eig"], "passed": rep.passed})
    holds = (not base.passed) or all(r["passed"] for r in rows[1:])
    return ScanReport("scaling", {"c0": float(c0), "t": float(t), "factors": list(factors)}, [],
                      {"base_passed": base.passed}, {"implication_holds": holds, "base_positive": base.passed},
                      _provenance(structure.conventions), {"scaling": rows})


# --------------------------------------------------------------------------
# atlas and deformation-class checks (sampled points)


def overlap_points(n, seed, r_max=0.9):
    """Random chart-0 points with ``1/2 <= |u0| <= 2`` and ``0 < r < r_max``."""
    rng = np.random.default_rng(seed)
    mod = rng.uniform(0.5, 2.0, n)
    arg = rng.uniform(0, 2 * np.pi, n)
    r = rng.uniform(0.05, r_max, n)
    vmod = r / np.sqrt(1 + mod ** 2)
    varg = rng.uniform(0, 2 * np.pi, n)
    return np.stack([mod * np.cos(arg), mod * np.sin(arg), vmod * np.cos(varg), vmod * np.sin(varg)], -1)


def poisson_lift_check(n=100, seed=0, tol=ta.ALG_TOL):
    """The two chart expressions of the lifted Poisson bivector agree on the overlap."""
    pts = overlap_points(n, seed)
    sigma_err = round_err = down_err = 0.0
    for p in pts:
        q = transition(0, p)
        D = np.asarray(transition_jacobian(0, jnp.asarray(p)))
        pushed = D @ np.asarray(lift_poisson(0, jnp.asarray(p))) @ D.T
        sigma_err = max(sigma_err, ta.max_abs(pushed - np.asarray(lift_poisson(1, jnp.asarray(q)))))
        round_err = max(round_err, ta.max_abs(transition(1, q) - p))
        down_err = max(down_err, ta.max_abs(np.asarray(blowdown(0, jnp.asarray(p))) - np.asarray(blowdown(1, jnp.asarray(q)))))
    summary = {"max_sigma_mismatch": sigma_err, "max_round_trip": round_err, "max_blowdown_mismatch": down_err}
    criteria = {"sigma_agrees": sigma_err <= tol, "round_trip": round_err <= tol, "blowdown_agrees": down_err <= tol}
    return ScanReport("poisson-lift", {"n_points": n, "seed": seed}, [], summary, criteria)


def annulus_points(spec, n, seed):
    """Random points with ``r1 < r < r2``, alternating between the charts."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        chart = i % 2
        z = rng.uniform(-1, 1, 2)
        r = rng.uniform(spec.r1 + 1e-3, spec.r2 - 1e-3)
        arg = rng.uniform(0, 2 * np.pi)
        w = r / math.sqrt(1 + z @ z)
        w = np.array([w * math.cos(arg), w * math.sin(arg)])
        out.append((chart, np.concatenate([z, w]) if chart == 0 else np.concatenate([w, z])))
    return out


def deformation_class_check(spec, n=50, seed=0, tol=ta.DERIVED_TOL):
    """``Z^{1,0} = sigma(df)`` on the annulus against its closed form."""
    worst = 0.0
    records = []
    for chart, p in annulus_points(spec, n, seed):
        try:
            err = float(np.max(np.abs(deformation_class_Z(spec, chart, p) - deformation_class_closed_form(spec, chart, p))))
            note = ""
        except GKError as exc:
            err, note = math.nan, f"error: {type(exc).__name__}: {exc}"
        worst = max(worst, err) if not math.isnan(err) else math.inf
        records.append(PointRecord(chart, tuple(map(float, p)), notes=note or f"Z_err={err!r}"))
    return ScanReport("deformation-class", {"c": spec.c, "n_points": n, "seed": seed}, records,
                      {**summarize(records), "max_error": worst}, {"matches_closed_form": worst <= tol})
