"""Smooth tensor fields on boxed chart domains and the exterior calculus on them.

A field wraps a jax-traceable function of a point ``p = (Re u, Im u, Re v, Im v)``.
Derivatives default to forward-mode automatic differentiation (``jax.jacfwd``,
i.e. dual numbers); central finite differences are available as a cross-check.

Jacobian arrays carry the differentiation index last:
``jacobian(field, p)[..., i] = d field[...] / d x_i``.
"""

from dataclasses import dataclass, field as dc_field

from . import _backend  # noqa: F401
import jax
import jax.numpy as jnp
import numpy as np

from .conventions import DEFAULT
from .errors import OutOfDomain, SingularLocus

KINDS = ("scalar", "vec4", "form1", "mat4", "form2", "bivec", "sym4", "form3")


@dataclass(frozen=True)
class ExcludedLocus:
    """Locus ``{z_k = 0}`` of a complex coordinate (k = 0 for u, 1 for v)."""

    name: str
    complex_index: int

    def distance(self, p):
        k = 2 * self.complex_index
        return float(np.hypot(p[k], p[k + 1]))


@dataclass(frozen=True)
class ChartDomain:
    name: str
    box: tuple = ((-1.0, 1.0),) * 4
    excluded: tuple = ()

    def __post_init__(self):
        box = tuple((float(lo), float(hi)) for lo, hi in self.box)
        if len(box) != 4 or any(lo >= hi for lo, hi in box):
            raise ValueError(f"chart domain {self.name!r} needs 4 nonempty intervals, got {self.box}")
        object.__setattr__(self, "box", box)

    def contains(self, p, margin=0.0):
        return all(lo + margin <= x <= hi - margin for x, (lo, hi) in zip(p, self.box))

    def check(self, p, margin=0.0, locus_tol=0.0):
        """Raise unless ``p`` is inside the box (with ``margin``) and off excluded loci."""
        p = np.asarray(p, dtype=float)
        if p.shape != (4,):
            raise OutOfDomain(f"expected a point with 4 real coordinates, got shape {p.shape}")
        if not self.contains(p, margin):
            raise OutOfDomain(f"point {p.tolist()} outside {self.name} (margin {margin:g})")
        for locus in self.excluded:
            if locus.distance(p) <= locus_tol:
                raise SingularLocus(f"point {p.tolist()} lies on excluded locus {locus.name}")
        return p

    def enlarged(self, factor):
        box = tuple((0.5 * (lo + hi) - factor * 0.5 * (hi - lo), 0.5 * (lo + hi) + factor * 0.5 * (hi - lo))
                    for lo, hi in self.box)
        return ChartDomain(f"{self.name}*{factor:g}", box, self.excluded)


@dataclass(frozen=True)
class DerivConfig:
    mode: str = "dual"
    fd_step: float = 1e-5
    richardson: bool = False

    def __post_init__(self):
        if self.mode not in ("dual", "fd"):
            raise ValueError(f"derivative mode must be 'dual' or 'fd', got {self.mode!r}")
        if not 1e-9 <= self.fd_step <= 1e-2:
            raise ValueError(f"fd_step {self.fd_step} outside [1e-9, 1e-2]")


DUAL = DerivConfig()


@dataclass(frozen=True)
class SmoothField:
    """A tensor-valued function on a chart domain."""

    fn: object
    domain: ChartDomain
    kind: str = "scalar"
    deriv: DerivConfig = DUAL
    meta: dict = dc_field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown field kind {self.kind!r}")

    def __call__(self, p):
        p = self.domain.check(p)
        return np.asarray(self.fn(jnp.asarray(p)))

    @property
    def provenance(self):
        return {"kind": self.kind, "domain": self.domain.name, "deriv_mode": self.deriv.mode,
                "fd_step": self.deriv.fd_step if self.deriv.mode == "fd" else None, **self.meta}

    def with_deriv(self, deriv):
        return SmoothField(self.fn, self.domain, self.kind, deriv, self.meta)


# --------------------------------------------------------------------------
# differentiation


def _fd_derivative(fn, h, richardson):
    def central(p, step):
        p = np.asarray(p, dtype=float)
        cols = []
        for i in range(4):
            e = np.zeros(4)
            e[i] = step
            cols.append((np.asarray(fn(p + e)) - np.asarray(fn(p - e))) / (2 * step))
        return np.stack(cols, axis=-1)

    def deriv(p):
        d = central(p, h)
        if richardson:
            d = (4.0 * central(p, h / 2) - d) / 3.0
        return d

    return deriv


def derivative(fn, deriv=DUAL):
    """Function ``p -> jacobian of fn at p`` in the requested mode."""
    if deriv.mode == "dual":
        return jax.jacfwd(fn)
    return _fd_derivative(fn, deriv.fd_step, deriv.richardson)


def _stencil_margin(deriv):
    return 0.0 if deriv.mode == "dual" else 2 * deriv.fd_step


def _prepare(field, p):
    if not isinstance(field, SmoothField):
        raise TypeError(f"expected SmoothField, got {type(field).__name__}")
    return field.domain.check(p, margin=_stencil_margin(field.deriv))


def jacobian(field, p):
    """All first partial derivatives of ``field`` at ``p``."""
    p = _prepare(field, p)
    return np.asarray(derivative(field.fn, field.deriv)(p if field.deriv.mode == "fd" else jnp.asarray(p)))


# --------------------------------------------------------------------------
# exterior calculus on raw functions (usable inside jit/vmap for dual mode)


def antisymmetrize_derivative(D):
    """(k+1)-form from the jacobian ``D[i1..ik, i0] = d_i0 T[i1..ik]`` of a k-form."""
    xp = jnp if isinstance(D, jax.Array) else np
    E = xp.moveaxis(D, -1, 0)
    k = E.ndim - 1
    out = E
    for a in range(1, k + 1):
        out = out + (-1) ** a * xp.moveaxis(E, 0, a)
    return out


def d_fn(fn, deriv=DUAL):
    """Exterior derivative as a function of the point."""
    dfn = derivative(fn, deriv)
    return lambda p: antisymmetrize_derivative(dfn(p))


def dc_fn(f, I, conventions=DEFAULT, deriv=DUAL):
    """``p -> d^c f`` at p for scalar ``f`` and complex structure ``I`` (raw functions)."""
    grad = derivative(f, deriv)
    s = conventions.dc_sign
    return lambda p: s * (I(p).T @ grad(p))


def ddc_fn(f, I, conventions=DEFAULT, deriv=DUAL):
    return d_fn(dc_fn(f, I, conventions, deriv), deriv)


def transform3(T, I):
    """``(X, Y, Z) -> T(I X, I Y, I Z)`` for a 3-form given as a 4x4x4 array."""
    xp = jnp if isinstance(T, jax.Array) or isinstance(I, jax.Array) else np
    return xp.einsum("ijk,ia,jb,kc->abc", T, I, I, I)


def dc2_fn(omega, I, conventions=DEFAULT, deriv=DUAL):
    dw = d_fn(omega, deriv)
    s = conventions.dc_sign
    return lambda p: s * transform3(dw(p), I(p))


def nijenhuis_from_jet(I, dI):
    """Nijenhuis tensor ``N[k, a, b]`` from ``I`` and ``dI[k, m, j] = d_j I[k, m]``."""
    xp = jnp if isinstance(dI, jax.Array) or isinstance(I, jax.Array) else np
    # [I e_a, I e_b] - I[I e_a, e_b] - I[e_a, I e_b]  (coordinate fields commute)
    t1 = xp.einsum("ja,kbj->kab", I, dI) - xp.einsum("jb,kaj->kab", I, dI)
    t2 = xp.einsum("km,mab->kab", I, dI - xp.swapaxes(dI, 1, 2))
    return t1 + t2


def nijenhuis_fn(I, deriv=DUAL):
    """``p -> N[k, a, b]``, the Nijenhuis tensor on coordinate frame pairs."""
    dI_fn = derivative(I, deriv)
    return lambda p: nijenhuis_from_jet(I(p), dI_fn(p))


def gk_residual_fn(g, b, Ip, Im, conventions=DEFAULT, deriv=DUAL):
    """``p -> (d^c_+ w_+ - s db, d^c_- w_- + s db)`` as 3-form arrays."""
    wp = lambda p: g(p) @ Ip(p)
    wm = lambda p: g(p) @ Im(p)
    dcp, dcm = dc2_fn(wp, Ip, conventions, deriv), dc2_fn(wm, Im, conventions, deriv)
    db = d_fn(b, deriv)
    s = conventions.db_sign

    def res(p):
        dbp = s * db(p)
        return dcp(p) - dbp, dcm(p) + dbp

    return res


def gk_residual_from_jets(g, dg, b, db, Ip, dIp, Im, dIm, conventions=DEFAULT):
    """Same residuals as :func:`gk_residual_fn` from values and first derivatives.

    Derivative arrays carry the differentiation index last.  Useful when all
    tensors come out of one forward-mode pass.
    """
    xp = jnp if any(isinstance(a, jax.Array) for a in (g, dg, Ip, dIp, Im, dIm)) else np
    s = conventions.dc_sign

    def dc_omega(I, dI):
        Dw = xp.einsum("abk,bc->ack", dg, I) + xp.einsum("ab,bck->ack", g, dI)
        return s * transform3(antisymmetrize_derivative(Dw), I)

    dbp = conventions.db_sign * antisymmetrize_derivative(db)
    return dc_omega(Ip, dIp) - dbp, dc_omega(Im, dIm) + dbp


# --------------------------------------------------------------------------
# public pointwise operations on SmoothField values


def exterior_derivative(form, p):
    """Value at ``p`` of the exterior derivative of a k-form field (k = 0, 1, 2)."""
    p = _prepare(form, p)
    return np.asarray(d_fn(form.fn, form.deriv)(_arg(p, form.deriv)))


def dc_scalar(f, I, p, conventions=DEFAULT):
    p = _prepare(f, p)
    return np.asarray(dc_fn(f.fn, I.fn, conventions, f.deriv)(_arg(p, f.deriv)))


def ddc_scalar(f, I, p, conventions=DEFAULT):
    p = _prepare(f, p)
    return np.asarray(ddc_fn(f.fn, I.fn, conventions, f.deriv)(_arg(p, f.deriv)))


def dc_two_form(omega, I, p, conventions=DEFAULT):
    p = _prepare(omega, p)
    return np.asarray(dc2_fn(omega.fn, I.fn, conventions, omega.deriv)(_arg(p, omega.deriv)))


def nijenhuis_tensor(I, p):
    p = _prepare(I, p)
    return np.asarray(nijenhuis_fn(I.fn, I.deriv)(_arg(p, I.deriv)))


def nijenhuis(I, p):
    """Max-norm of the Nijenhuis tensor over coordinate frame pairs."""
    return float(np.max(np.abs(nijenhuis_tensor(I, p))))


def gk_condition_residual(g, b, Ip, Im, p, conventions=DEFAULT):
    """Max-norm residuals ``(r_+, r_-)`` of ``d^c_+ w_+ = s db = -d^c_- w_-``."""
    p = _prepare(g, p)
    rp, rm = gk_residual_fn(g.fn, b.fn, Ip.fn, Im.fn, conventions, g.deriv)(_arg(p, g.deriv))
    return float(np.max(np.abs(rp))), float(np.max(np.abs(rm)))


def _arg(p, deriv):
    return p if deriv.mode == "fd" else jnp.asarray(p)
