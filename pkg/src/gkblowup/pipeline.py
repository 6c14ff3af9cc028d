"""End-to-end scenario: local model, blow-up, deformation search, certification.

Stages run in a fixed order and share one :class:`Context`, which builds the
model, the lifted structure and the parameter search lazily.  A single stage
run on a fresh context recomputes exactly the inputs it needs, so its numbers
agree bit for bit with the full run.
"""

import csv
import io
import json
import os
from functools import cached_property

from . import __version__
from . import verifier as V
from .blowup import BlowupAtlas, PotentialSpec, lift_model
from .config import RunConfig
from .conventions import calibrate
from .errors import GKError, UnknownStage
from .fields import ChartDomain, DerivConfig
from .flow import FlowConfig, make_local_model

STAGES = ("model", "lift", "positivity", "deform", "convergence")
SCHEMA_VERSION = "1"
CSV_HEADER = ("chart", "coord1", "coord2", "coord3", "coord4", "min_eig", "res_brane", "res_nijenhuis",
              "res_gk", "notes")


class Context:
    def __init__(self, config):
        self.config = config if isinstance(config, RunConfig) else RunConfig.from_dict(config)

    # inputs -----------------------------------------------------------------
    @cached_property
    def calibration(self):
        conventions, log = calibrate(step=self.config["model"]["step"])
        return conventions, log

    @property
    def conventions(self):
        return self.calibration[0]

    @cached_property
    def model(self):
        m = self.config["model"]
        w = m["half_width"]
        return make_local_model(m["t0"], ChartDomain("model", ((-w, w),) * 4), conventions=self.conventions,
                                step=m["step"])

    @cached_property
    def structure(self):
        a = self.config["atlas"]
        spec = PotentialSpec(self.config["potential"]["c_grid"][0], a["r0"], a["r1"], a["r2"])
        return lift_model(self.model, spec, BlowupAtlas(a["r_max"]))

    @cached_property
    def flow_cfg(self):
        f = self.config["flow"]
        return FlowConfig(step=f["step"], max_steps=f["max_steps"])

    @cached_property
    def n_steps(self):
        """One step count for every deformation flow, so each chart compiles one kernel."""
        f = self.config["flow"]
        return max(self.flow_cfg.n_steps(t) for t in f["t_grid"] + f["convergence_t"])

    @cached_property
    def deriv(self):
        d = self.config["derivatives"]
        return DerivConfig(d["mode"], d["fd_step"], d["richardson"])

    @property
    def tol(self):
        return self.config["tolerances"]

    # grids ------------------------------------------------------------------
    def chart_grid(self, chart, counts, r_bounds, include_divisor=False, samples=0):
        g = self.config["grids"]
        base = (-g["base_half_width"], g["base_half_width"])
        fiber = (-g["fiber_half_width"], g["fiber_half_width"])
        if chart == 0:
            ranges, counts = (base, base, fiber, fiber), tuple(counts)
        else:
            ranges, counts = (fiber, fiber, base, base), (counts[2], counts[3], counts[0], counts[1])
        return V.GridSpec(chart, ranges, counts, g["margin"], r_bounds, include_divisor, samples,
                          self.config["seed"] + chart)

    def model_grid(self):
        g = self.config["grids"]
        w = g["model_half_width"]
        return V.GridSpec("model", ((-w, w),) * 4, (g["model_counts"],) * 4)

    @property
    def r_scan(self):
        return 0.9 * self.config["atlas"]["r2"]

    def scan_grids(self):
        g = self.config["grids"]
        return [self.chart_grid(ch, g["scan_counts"], (0.0, self.r_scan), True, g["scan_samples"]) for ch in (0, 1)]

    def residual_grids(self):
        return [self.chart_grid(ch, self.config["grids"]["residual_counts"], (0.0, self.r_scan)) for ch in (0, 1)]

    def pullback_grids(self):
        # no flow involved, so the denser scan lattice is affordable
        g = self.config["grids"]
        return [self.chart_grid(ch, g["scan_counts"], (0.0, self.r_scan), False, g["scan_samples"]) for ch in (0, 1)]

    def divisor_grids(self):
        k = self.config["grids"]["divisor_counts"]
        return [self.chart_grid(ch, (k, k, 2, 2), None) for ch in (0, 1)]

    def convergence_grids(self):
        counts, r1 = self.config["grids"]["convergence_counts"], self.config["atlas"]["r1"]
        inner = [self.chart_grid(ch, counts, (0.0, r1), True) for ch in (0, 1)]
        outer = [self.chart_grid(ch, counts, (r1, self.r_scan)) for ch in (0, 1)]
        return inner, outer

    # parameter search ---------------------------------------------------------
    @cached_property
    def search(self):
        return V.parameter_search(self.structure, self.config["potential"]["c_grid"], self.config["flow"]["t_grid"],
                                  self.scan_grids(), self.flow_cfg, self.n_steps)

    @property
    def certified(self):
        pair = self.search.summary["certified"]
        return tuple(pair) if pair else None


# --------------------------------------------------------------------------
# stages


def stage_model(ctx):
    model, grid = ctx.model, ctx.model_grid()
    suite = V.model_residual_suite(model, grid, ctx.deriv, ctx.tol["residual"], ctx.tol["algebra"], ctx.tol["derived"])
    halving = V.step_halving(model, grid, step=ctx.flow_cfg.step)
    control = V.negative_control(model, grid)
    return [suite, halving, control]


def stage_lift(ctx):
    s, c = ctx.structure, ctx.config["potential"]["c_grid"][0]
    return [
        V.degeneracy_check(s, ctx.divisor_grids(), n=ctx.n_steps, tol=ctx.tol["degenerate"]),
        V.pullback_check(s, ctx.pullback_grids(), tol=ctx.tol["algebra"]),
        V.residual_suite(s, c, 0.0, ctx.residual_grids(), ctx.flow_cfg, ctx.n_steps, ctx.deriv, ctx.tol["residual"]),
        V.poisson_lift_check(ctx.config["grids"]["overlap_points"], ctx.config["seed"], ctx.tol["algebra"]),
    ]


def stage_positivity(ctx):
    reports = [ctx.search]
    pair = ctx.certified
    grids = ctx.scan_grids()
    if pair is None:
        # diagnostics: the pair that came closest
        best = max((cell for row in ctx.search.tables["matrix"] for cell in row),
                   key=lambda cell: cell["global_min_eig"] if cell["global_min_eig"] == cell["global_min_eig"] else -1e300)
        pair = (best["c"], best["t"])
        reports.append(V.positivity_scan(ctx.structure, *pair, grids, ctx.flow_cfg, ctx.n_steps))
        return reports
    reports.append(V.positivity_scan(ctx.structure, *pair, grids, ctx.flow_cfg, ctx.n_steps))
    reports.append(V.scaling_check(ctx.structure, *pair, grids, ctx.config["flow"]["scaling_factors"],
                                   ctx.flow_cfg, ctx.n_steps))
    return reports


def _no_pair():
    return V.ScanReport("certified-pair", {}, [], {"certified": None}, {"certified_pair_available": False})


def stage_deform(ctx):
    pair = ctx.certified
    if pair is None:
        return [_no_pair()]
    c, t = pair
    s = ctx.structure
    return [
        V.residual_suite(s, c, t, ctx.residual_grids(), ctx.flow_cfg, ctx.n_steps, ctx.deriv, ctx.tol["residual"]),
        V.deformation_class_check(s.spec.with_c(c), ctx.config["grids"]["annulus_points"], ctx.config["seed"],
                                  ctx.tol["derived"]),
    ]


def stage_convergence(ctx):
    pair = ctx.certified
    if pair is None:
        return [_no_pair()]
    inner, outer = ctx.convergence_grids()
    return [V.convergence_study(ctx.structure, pair[0], ctx.config["flow"]["convergence_t"], inner, outer,
                                ctx.flow_cfg, ctx.n_steps)]


_STAGE_FNS = {"model": stage_model, "lift": stage_lift, "positivity": stage_positivity,
              "deform": stage_deform, "convergence": stage_convergence}


def run_stage(ctx, name):
    """``(stage summary dict, records)``; package errors are recorded, not raised."""
    if name not in _STAGE_FNS:
        raise UnknownStage(f"unknown stage {name!r}; expected one of {', '.join(STAGES)}")
    try:
        reports = _STAGE_FNS[name](ctx)
    except GKError as exc:
        return {"passed": False, "error": f"{type(exc).__name__}: {exc}", "reports": []}, []
    records = [r for rep in reports for r in rep.records]
    return {"passed": all(r.passed for r in reports), "error": None,
            "reports": [r.to_dict() for r in reports]}, records


# --------------------------------------------------------------------------
# serialization


def csv_text(records):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in records:
        notes = ";".join(x for x in (f"zone={r.zone}" if r.zone else "", r.notes) if x)
        w.writerow([r.chart, *(repr(float(x)) for x in r.coords), repr(float(r.min_eig)), repr(float(r.res_brane)),
                    repr(float(r.res_nijenhuis)), repr(float(r.res_gk)), notes])
    return buf.getvalue()


def _report(ctx, stages):
    conventions, log = ctx.calibration if stages else (None, [])
    try:
        certified = ctx.certified if "positivity" in stages or "deform" in stages or "convergence" in stages else None
    except GKError:
        certified = None
    return {
        "schema_version": SCHEMA_VERSION,
        "package_version": __version__,
        "config": ctx.config.data,
        "calibration": {
            "conventions": conventions.as_dict() if conventions else None,
            "log": log,
            "t0_trials": ctx.model.provenance.get("t0_trials") if "model" in ctx.__dict__ else None,
        },
        "certified": {"c": certified[0], "t": certified[1]} if certified else None,
        "stages": stages,
        "verdict": "pass" if stages and all(s["passed"] for s in stages.values()) else "fail",
    }


def write_outputs(out_dir, report, tables):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    for name, records in tables.items():
        with open(os.path.join(out_dir, f"{name}.csv"), "w", encoding="utf-8", newline="") as fh:
            fh.write(csv_text(records))


def run_scenario(config, out_dir=None, stages=STAGES, context=None):
    """Run the given stages in order; returns ``(report, tables)`` and writes files when ``out_dir`` is set."""
    ctx = context or Context(config)
    for name in stages:
        if name not in _STAGE_FNS:
            raise UnknownStage(f"unknown stage {name!r}; expected one of {', '.join(STAGES)}")
    results, tables = {}, {}
    for name in stages:
        results[name], tables[name] = run_stage(ctx, name)
    report = _report(ctx, results)
    if out_dir is not None:
        write_outputs(out_dir, report, tables)
    return report, tables


def verify_only(config, stage, out_dir=None):
    return run_scenario(config, out_dir, (stage,))
