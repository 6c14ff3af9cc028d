"""Blow-up of the local model at the origin and its flow deformation.

Chart 0 has coordinates ``(u0, v0) = (u/v, v)``, chart 1 has
``(u1, v1) = (u, v/u)``; the exceptional divisor is ``{v0 = 0} u {u1 = 0}``.
Both charts are holomorphic for the lift of the standard structure ``I+``, so
``I+~`` is the constant standard structure in either chart.

All per-point functions are jax-traceable; the ``chart`` argument selecting
between formulas must be a Python int unless stated otherwise.
"""

from dataclasses import dataclass, field

from . import _backend  # noqa: F401
import jax
import jax.numpy as jnp
import numpy as np

from . import tensors as ta
from .conventions import DEFAULT
from .errors import DomainMismatch, LeftDomain, OnExcludedLocus, OutOfDomain
from .fields import ChartDomain, ExcludedLocus, ddc_fn
from .flow import FlowConfig, integrate, model_pointwise, unpack6

CHARTS = (0, 1)
SWITCH_RADIUS = 2.0

_STD_I = jnp.asarray(ta.STD_I)


def _std_I(p):
    return _STD_I


def _cplx(p):
    return p[0] + 1j * p[1], p[2] + 1j * p[3]


def _real(a, b):
    return jnp.stack([a.real, a.imag, b.real, b.imag])


def _abs2(z):
    return z.real ** 2 + z.imag ** 2


# --------------------------------------------------------------------------
# atlas


def blowdown(chart, p):
    """Image in C^2 of a chart point: chart 0 ``(u0 v0, v0)``, chart 1 ``(u1, u1 v1)``."""
    a, b = _cplx(p)
    if chart == 0:
        return _real(a * b, b)
    return _real(a, a * b)


def _transition_raw(from_chart, p):
    a, b = _cplx(p)
    if from_chart == 0:
        return _real(a * b, 1.0 / a)
    return _real(1.0 / b, a * b)


def transition(from_chart, p):
    """Coordinates of ``p`` in the other chart.

    Raises :class:`OnExcludedLocus` on ``u0 = 0`` (from chart 0) or ``v1 = 0``
    (from chart 1), where the other chart does not reach.
    """
    p = np.asarray(p, dtype=float)
    k = 0 if from_chart == 0 else 2
    if p[k] == 0.0 and p[k + 1] == 0.0:
        name = "u0 = 0" if from_chart == 0 else "v1 = 0"
        raise OnExcludedLocus(f"point {p.tolist()} on {name} is not in chart {1 - from_chart}")
    a = complex(p[0], p[1])
    b = complex(p[2], p[3])
    if from_chart == 0:
        u, v = a * b, 1.0 / a
    else:
        u, v = 1.0 / b, a * b
    return np.array([u.real, u.imag, v.real, v.imag])


def radius2(chart, p):
    """``|u|^2 + |v|^2`` of the blow-down image, in chart form."""
    a, b = _cplx(p)
    if chart == 0:
        return _abs2(b) * (1.0 + _abs2(a))
    return _abs2(a) * (1.0 + _abs2(b))


def on_divisor(chart, p):
    k = 2 if chart == 0 else 0
    return p[k] == 0.0 and p[k + 1] == 0.0


def blowdown_jacobian(chart, p):
    return jax.jacfwd(lambda x: blowdown(chart, x))(p)


def transition_jacobian(from_chart, p):
    return jax.jacfwd(lambda x: _transition_raw(from_chart, x))(p)


def lift_poisson(chart, p):
    """Real part of the lifted Poisson structure: ``u0 d_u0 ^ d_v0`` or ``d_u1 ^ d_v1``."""
    if chart == 0:
        return ta.real_bivector(p[0] + 1j * p[1])
    return ta.real_bivector(jnp.asarray(1.0 + 0j))


@dataclass(frozen=True)
class BlowupAtlas:
    """The two standard charts of the blow-up of C^2 at the origin, restricted to ``r < r_max``."""

    r_max: float = 1.0
    chart0: ChartDomain = ChartDomain("chart0", ((-4.0, 4.0), (-4.0, 4.0), (-1.0, 1.0), (-1.0, 1.0)),
                                      (ExcludedLocus("E: v0 = 0", 1),))
    chart1: ChartDomain = ChartDomain("chart1", ((-1.0, 1.0), (-1.0, 1.0), (-4.0, 4.0), (-4.0, 4.0)),
                                      (ExcludedLocus("E: u1 = 0", 0),))

    def domain(self, chart):
        return self.chart0 if chart == 0 else self.chart1

    blowdown = staticmethod(blowdown)
    transition = staticmethod(transition)
    radius2 = staticmethod(radius2)


# --------------------------------------------------------------------------
# potential


@dataclass(frozen=True)
class PotentialSpec:
    """Constant ``c`` and radii ``r0 < r1 < r2`` of U_E, K and the flow guard V."""

    c: float = 0.1
    r0: float = 0.2
    r1: float = 0.45
    r2: float = 0.7

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError(f"potential constant c must be positive, got {self.c}")
        if not 0 < self.r0 < self.r1 < self.r2:
            raise ValueError(f"radii must satisfy 0 < r0 < r1 < r2, got {self.r0}, {self.r1}, {self.r2}")

    def with_c(self, c):
        return PotentialSpec(c, self.r0, self.r1, self.r2)


def smoothstep(s):
    """C-infinity step: 0 for s <= 0, 1 for s >= 1, ``e^{-1/s} / (e^{-1/s} + e^{-1/(1-s)})`` between."""
    inside = (s > 0) & (s < 1)
    ss = jnp.where(inside, s, 0.5)
    a = jnp.exp(-1.0 / ss)
    b = jnp.exp(-1.0 / (1.0 - ss))
    return jnp.where(s <= 0, 0.0, jnp.where(s >= 1, 1.0, a / (a + b)))


def _bump_param(spec, chart, p):
    r2 = radius2(chart, p)
    r = jnp.sqrt(jnp.where(r2 > 0, r2, 1.0))
    s = (r - spec.r0) / (spec.r1 - spec.r0)
    return jnp.where(r2 > 0, s, -1.0)


def bump(spec, chart, p):
    return smoothstep(_bump_param(spec, chart, p))


def _fs_log(chart, p):
    """``log(1 + |u0|^2)`` (chart 0) or ``log(1 + |v1|^2)`` (chart 1)."""
    a, b = _cplx(p)
    return jnp.log1p(_abs2(a) if chart == 0 else _abs2(b))


def _divisor_coord2(chart, p):
    """``|v0|^2`` or ``|u1|^2``: the squared local equation of E."""
    a, b = _cplx(p)
    return _abs2(b) if chart == 0 else _abs2(a)


def fs_potential(chart, p):
    """Fubini-Study potential ``log(|u0|^2 / (1 + |u0|^2)) = -log(1 + |v1|^2)``."""
    p = np.asarray(p, dtype=float)
    if chart == 0:
        if p[0] == 0.0 and p[1] == 0.0:
            from .errors import SingularPotential
            raise SingularPotential("f0 is singular on u0 = 0")
        return float(np.log(p[0] ** 2 + p[1] ** 2) - np.log1p(p[0] ** 2 + p[1] ** 2))
    return float(-np.log1p(p[2] ** 2 + p[3] ** 2))


def _f_eps(spec, chart, p):
    eps = bump(spec, chart, p)
    r2 = radius2(chart, p)
    return jnp.where(eps > 0, eps * jnp.log(jnp.where(eps > 0, r2, 1.0)), 0.0)


def bump_and_feps(spec, chart, p):
    """``(eps, f_eps)`` with ``f_eps = eps log r^2`` (zero where eps vanishes)."""
    p = jnp.asarray(p, dtype=float)
    return float(bump(spec, chart, p)), float(_f_eps(spec, chart, p))


def _smooth_part(spec, chart, p):
    """``f - c log|u0|^2`` (chart 0) or ``f`` (chart 1), written without singular terms.

    Both equal ``c ((eps - 1) L + eps log|w|^2)`` with ``L`` the Fubini-Study
    log and ``w`` the local equation of E.
    """
    eps = bump(spec, chart, p)
    w2 = _divisor_coord2(chart, p)
    logw = jnp.where(eps > 0, jnp.log(jnp.where(eps > 0, w2, 1.0)), 0.0)
    return spec.c * ((eps - 1.0) * _fs_log(chart, p) + eps * logw)


def smooth_X(spec, chart, p):
    """Hamiltonian field ``Q(df, .)`` of ``f = c (f0 + f_eps)``, smooth across E and u0 = 0.

    In chart 0 the singular ``log|u0|^2`` contributes the closed form
    ``Q(d log|u0|^2, .) = Re(d_v0) = (1/2) d/dRe v0``.
    """
    Q = lift_poisson(chart, p)
    X = Q.T @ jax.grad(lambda x: _smooth_part(spec, chart, x))(p)
    if chart == 0:
        X = X + spec.c * jnp.array([0.0, 0.0, 0.5, 0.0])
    return X


def smooth_ddcf(spec, chart, p, conventions=DEFAULT):
    """``dd^c f`` with the pluriharmonic ``c log|u0|^2`` removed; exactly zero where eps = 1."""
    A = ddc_fn(lambda x: _smooth_part(spec, chart, x), _std_I, conventions)(p)
    return jnp.where(_bump_param(spec, chart, p) >= 1.0, 0.0, A)


def omega_E_closed_form(spec, chart, p, conventions=DEFAULT):
    """``dd^c (-c L)``: the value of :func:`smooth_ddcf` inside U_E, in closed form.

    For a function of one complex coordinate, ``dd^c phi = dc_sign * (Laplacian phi) J``
    on that coordinate's block; ``Laplacian log(1 + |z|^2) = 4 / (1 + |z|^2)^2``.
    """
    a, b = _cplx(p)
    z2 = _abs2(a) if chart == 0 else _abs2(b)
    lap = -spec.c * 4.0 / (1.0 + z2) ** 2
    block = jnp.zeros((4, 4)).at[0, 1].set(-1.0).at[1, 0].set(1.0)
    if chart == 1:
        block = jnp.zeros((4, 4)).at[2, 3].set(-1.0).at[3, 2].set(1.0)
    return conventions.dc_sign * lap * block


def deformation_class_Z(spec, chart, p):
    """Coefficients of ``Z^{1,0} = sigma(d f)`` on the annulus ``r1 < r < r2``.

    ``sigma(df)`` is twice the (1,0) part of the real field ``Q(df, .)``.
    Returns a complex 2-vector (coefficients of d_u0, d_v0 or d_u1, d_v1).
    """
    p = np.asarray(p, dtype=float)
    if on_divisor(chart, p):
        raise OnExcludedLocus(f"{p.tolist()} lies on E")
    r = float(np.sqrt(radius2(chart, jnp.asarray(p))))
    if not spec.r1 < r < spec.r2:
        raise OutOfDomain(f"r = {r:.4g} is outside the annulus ({spec.r1}, {spec.r2})")
    X = np.asarray(smooth_X(spec, chart, jnp.asarray(p)))
    return 2.0 * np.array([X[0] + 1j * X[1], X[2] + 1j * X[3]])


def deformation_class_closed_form(spec, chart, p):
    """Closed form of the deformation class: ``c (d_v0 - (u0/v0) d_u0)`` in chart 0.

    In chart 1 the same field ``c d_v`` reads ``(c/u1) d_v1``.
    """
    a, b = _cplx(np.asarray(p, dtype=float))
    if chart == 0:
        return np.array([-spec.c * a / b, spec.c])
    # v = u1 v1, u = u1: d_v = (1/u1) d_v1
    return np.array([0.0, spec.c / a])


# --------------------------------------------------------------------------
# lifted structure


def _chart_select(c, f0, f1):
    return jax.lax.cond(c == 0, f0, f1)


def _switch(c, x, J):
    """Move the flow state to the preferred chart when leaving |u0| <= 2 or |v1| <= 2."""
    to1 = (c == 0) & (x[0] ** 2 + x[1] ** 2 > SWITCH_RADIUS ** 2)
    to0 = (c == 1) & (x[2] ** 2 + x[3] ** 2 > SWITCH_RADIUS ** 2)
    safe = jnp.where(to1 | to0, x, jnp.ones(4))
    x1, D1 = _transition_raw(0, safe), transition_jacobian(0, safe)
    x0, D0 = _transition_raw(1, safe), transition_jacobian(1, safe)
    xn = jnp.where(to1, x1, jnp.where(to0, x0, x))
    Jn = jnp.where(to1, D1 @ J, jnp.where(to0, D0 @ J, J))
    cn = jnp.where(to1, 1, jnp.where(to0, 0, c))
    return cn, xn, Jn


def deformation_form(spec, t, n, chart, conventions=DEFAULT):
    """Raw function ``(p, c) -> (F_t(p), exit_step)`` for the deformation flow.

    ``c`` overrides ``spec.c`` (so one compiled kernel serves a whole c-grid);
    the guard is the region ``r < spec.r2``.
    """

    def F(p, c):
        s = PotentialSpec(1.0, spec.r0, spec.r1, spec.r2)

        def vf(ch, x):
            return c * jax.lax.switch(ch, [lambda y: smooth_X(s, 0, y), lambda y: smooth_X(s, 1, y)], x)

        def integrand(ch, x):
            return c * jax.lax.switch(ch, [lambda y: smooth_ddcf(s, 0, y, conventions),
                                           lambda y: smooth_ddcf(s, 1, y, conventions)], x)

        def inside(ch, x):
            r2 = jax.lax.switch(ch, [lambda y: radius2(0, y), lambda y: radius2(1, y)], x)
            return r2 < spec.r2 ** 2

        _, _, F6, _, exit_step = integrate(vf, integrand, p, t, n, inside, chart, _switch)
        return unpack6(F6), exit_step

    return F


@dataclass(frozen=True)
class BlownUpStructure:
    """Degenerate bi-Hermitian structure on the blow-up, with its deformation data."""

    atlas: BlowupAtlas
    model: object
    spec: PotentialSpec
    conventions: object = DEFAULT
    provenance: dict = field(default_factory=dict, compare=False)

    # base tensors pulled back --------------------------------------------
    def base_at(self, chart, p):
        """Model ``(I+, I-, g, b, omega, Q)`` at the blow-down image of ``p``."""
        return model_pointwise(self.model.F.fn, blowdown(chart, p))

    def lifted(self, chart, p):
        """``(I+~, I-~, g~, b~, omega~, Q~)`` at a chart point (traceable)."""
        _, _, g, b, w, _ = self.base_at(chart, p)
        D = blowdown_jacobian(chart, p)
        pull = lambda m: D.T @ m @ D
        gt, bt, wt = ta.sym(pull(g)), ta.antisym(pull(b)), ta.antisym(pull(w))
        Qt = lift_poisson(chart, p)
        Ip = _STD_I
        Im = Ip - Qt @ wt
        return Ip, Im, gt, bt, wt, Qt

    def pullback_g_plus_b(self, chart, p):
        _, _, g, b, _, _ = self.base_at(chart, p)
        D = blowdown_jacobian(chart, p)
        return D.T @ (g + b) @ D


def lift_model(model, spec=PotentialSpec(), atlas=None):
    """Lift the local model to the blow-up (the degenerate bi-Hermitian structure)."""
    atlas = atlas or BlowupAtlas()
    lo = min(lo for lo, _ in model.domain.box)
    hi = max(hi for _, hi in model.domain.box)
    if atlas.r_max > min(-lo, hi):
        raise DomainMismatch(f"atlas radius {atlas.r_max} exceeds model domain {model.domain.box}")
    if spec.r2 > atlas.r_max:
        raise DomainMismatch(f"flow guard r2={spec.r2} exceeds atlas radius {atlas.r_max}")
    prov = {"t0": model.t0, "spec": vars(spec).copy(), "r_max": atlas.r_max}
    return BlownUpStructure(atlas, model, spec, model.conventions, prov)


def deform_pointwise(structure, F_fn, chart, p, c):
    """``(F_t, I+^t)`` at p (traceable), given a deformation-form function."""
    F, _ = F_fn(p, c)
    return F, _STD_I + lift_poisson(chart, p) @ F


def assemble_pointwise(structure, F, chart, p, lifted=None):
    """``(g~_t, b~_t, g~_t direct, g~'_t, third term)`` from the deformation form F at p.

    ``lifted`` may carry a precomputed ``structure.lifted(chart, p)``.
    """
    Ip, Im, gt, bt, wt, Qt = structure.lifted(chart, p) if lifted is None else lifted
    Ipt = Ip + Qt @ F
    g_prime = ta.sym(-0.5 * F @ (Ip + Ipt))
    third = ta.sym(-0.5 * (wt @ Qt @ F - F @ Qt @ wt))
    g_t = gt + g_prime + third
    W = wt + F
    g_direct = ta.sym(-0.5 * W @ (Im + Ipt))
    b_t = ta.antisym(-0.5 * W @ (-Im + Ipt))
    return g_t, b_t, g_direct, g_prime, third


def _check_point(structure, chart, p):
    p = np.asarray(p, dtype=float)
    if p.shape != (4,):
        raise OutOfDomain(f"expected 4 coordinates, got shape {p.shape}")
    r = float(np.sqrt(radius2(chart, jnp.asarray(p))))
    if r >= structure.atlas.r_max:
        raise OutOfDomain(f"r = {r:.4g} outside atlas region r < {structure.atlas.r_max}")
    return jnp.asarray(p)


def deform(structure, t, cfg=FlowConfig(), chart=0, p=None):
    """``(F_t, I+~^t)`` at ``p``: the flow deformation of the blown-up structure."""
    p = _check_point(structure, chart, p)
    n = cfg.n_steps(t)
    F_fn = deformation_form(structure.spec, float(t), n, chart, structure.conventions)
    F, exit_step = F_fn(p, structure.spec.c)
    if int(exit_step) >= 0:
        raise LeftDomain(int(exit_step))
    return np.asarray(F), np.asarray(_STD_I + lift_poisson(chart, p) @ F)


def assemble_gt(structure, t, cfg=FlowConfig(), chart=0, p=None):
    """``(g~_t, b~_t)`` of the composed structure ``I-~ -> I+~ -> I+~^t``."""
    F, _ = deform(structure, t, cfg, chart, p)
    g_t, b_t, *_ = assemble_pointwise(structure, jnp.asarray(F), chart, jnp.asarray(p, dtype=float))
    return np.asarray(g_t), np.asarray(b_t)
