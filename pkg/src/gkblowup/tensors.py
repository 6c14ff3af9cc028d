"""Pointwise linear algebra on a real 4-dimensional tangent space.

Coordinates are ordered ``(Re u, Im u, Re v, Im v)``.  All tensors are plain
4x4 arrays:

* endomorphisms (complex structures) act on column vectors,
* covariant 2-forms and metrics satisfy ``F(X, Y) = X.T @ F @ Y``,
* contravariant bivectors are antisymmetric matrices ``Q[i, j]``.

Juxtapositions of forms with endomorphisms (``F I``, ``F Q F``, ``g I``) are
plain matrix products.  The dual action ``I*`` on covectors is ``I.T``.

The raw formulas here are written with operators only, so they accept numpy
and jax arrays alike; the validating wrappers need concrete values.
"""

import numpy as np

from .errors import (
    BraneViolated,
    MorphismViolated,
    NotAntisymmetric,
    NotComplexStructure,
    SingularForm,
)

ALG_TOL = 1e-12
DERIVED_TOL = 1e-10
DISC_TOL = 1e-6

_J2 = np.array([[0.0, -1.0], [1.0, 0.0]])
#: standard complex structure: d/dRe u -> d/dIm u, d/dRe v -> d/dIm v
STD_I = np.kron(np.eye(2), _J2)
ID4 = np.eye(4)

# index pairs of the 6 independent components of a 2-form
FORM_INDEX = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))


def wedge(i, j):
    """Matrix of the elementary 2-form (or bivector) e_i ^ e_j."""
    m = np.zeros((4, 4))
    m[i, j] = 1.0
    m[j, i] = -1.0
    return m


# Re(d_z1 ^ d_z2) and Re(-i d_z1 ^ d_z2), with d_z = (d_x - i d_y) / 2.
_RE_DZDZ = 0.25 * (wedge(0, 2) - wedge(1, 3))
_IM_DZDZ = -0.25 * (wedge(0, 3) + wedge(1, 2))


def real_bivector(a):
    """Real part of the holomorphic bivector ``a d_z1 ^ d_z2``.

    ``a`` may be complex (numpy or jax scalar); the result is a real 4x4
    antisymmetric matrix.
    """
    return a.real * _RE_DZDZ - a.imag * _IM_DZDZ


def realify(m):
    """Real 4x4 matrix of a complex-linear map given as a 2x2 complex matrix."""
    re, im = m.real, m.imag
    out = np.zeros((4, 4))
    for r in range(2):
        for c in range(2):
            out[2 * r:2 * r + 2, 2 * c:2 * c + 2] = [[re[r, c], -im[r, c]], [im[r, c], re[r, c]]]
    return out


def pack_form(f):
    """Six independent components (upper triangle) of an antisymmetric 4x4 array."""
    return np.stack([f[..., i, j] for i, j in FORM_INDEX], axis=-1)


def antisym(m):
    """Exactly antisymmetric part of a square matrix (or stack of them)."""
    return 0.5 * (m - np.swapaxes(m, -1, -2))


def sym(m):
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def max_abs(a):
    return float(np.max(np.abs(np.asarray(a))))


def check_complex_structure(m, tol=ALG_TOL, name="matrix"):
    err = max_abs(np.asarray(m) @ np.asarray(m) + ID4)
    if err > tol:
        raise NotComplexStructure(f"{name} does not square to -Id (residual {err:.3e})")
    return m


def check_antisymmetric(m, tol=0.0, name="matrix"):
    m = np.asarray(m)
    err = max_abs(m + m.T)
    if err > tol:
        raise NotAntisymmetric(f"{name} is not antisymmetric (residual {err:.3e})")
    return m


def commutator(a, b):
    return a @ b - b @ a


def compute_Q(ip, im, ginv, tol=DERIVED_TOL):
    """Real Poisson tensor ``(1/8)[I+, I-] g^{-1}`` of a bi-Hermitian pair.

    Raises :class:`NotAntisymmetric` when the result is not antisymmetric,
    which happens when ``g`` is not Hermitian for both structures.
    """
    q = commutator(np.asarray(ip), np.asarray(im)) @ np.asarray(ginv) / 8.0
    if max_abs(q + q.T) > tol * max(1.0, max_abs(q)):
        raise NotAntisymmetric(f"[I+, I-] g^-1 is not antisymmetric ({max_abs(q + q.T):.3e})")
    return antisym(q)


def hermitian_form(g, i):
    """The 2-form ``omega = g I``."""
    return g @ i


def real_poisson(ip, im, ginv, sign, g=None, tol=DERIVED_TOL):
    """Real Poisson structure ``P_sign = (1/2)(I+ -/+ I-) g^{-1}``.

    When the metric ``g`` itself is supplied, the result is cross-checked
    against ``-(1/2)(omega_+^{-1} -/+ omega_-^{-1})``; a singular Hermitian
    form raises :class:`SingularForm`.
    """
    s = _sign(sign)
    p = 0.5 * (np.asarray(ip) - s * np.asarray(im)) @ np.asarray(ginv)
    if g is not None:
        wp, wm = hermitian_form(g, ip), hermitian_form(g, im)
        other = -0.5 * (_inverse(wp, "omega_+") - s * _inverse(wm, "omega_-"))
        err = max_abs(other - p)
        if err > tol * max(1.0, max_abs(p)):
            raise NotAntisymmetric(f"the two expressions for P disagree by {err:.3e}")
    return p


def _sign(sign):
    if sign in ("+", 1, +1):
        return 1.0
    if sign in ("-", -1):
        return -1.0
    raise ValueError(f"sign must be '+' or '-', got {sign!r}")


def _inverse(m, name):
    m = np.asarray(m)
    cond = np.linalg.cond(m)
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularForm(f"{name} is singular (condition number {cond:.3e})")
    return np.linalg.inv(m)


def reconstruct_J(b, ip, im, wp, wm, sign):
    """8x8 generalized complex structure on ``T + T*`` built from bi-Hermitian data.

    Block ordering is (vector, covector).  Requires both Hermitian forms to be
    invertible.
    """
    s = _sign(sign)
    ip, im, b = np.asarray(ip), np.asarray(im), np.asarray(b)
    wpi, wmi = _inverse(wp, "omega_+"), _inverse(wm, "omega_-")
    core = np.block([
        [ip + s * im, -(wpi - s * wmi)],
        [np.asarray(wp) - s * np.asarray(wm), -(ip.T + s * im.T)],
    ])
    zero = np.zeros((4, 4))
    left = np.block([[ID4, zero], [-b, ID4]])
    right = np.block([[ID4, zero], [b, ID4]])
    return 0.5 * left @ core @ right


def brane_residual(F, I0, Q):
    """``F I0 + I0* F + F Q F``; vanishes exactly for solutions of the brane equation."""
    return F @ I0 + I0.T @ F + F @ Q @ F


def derived_structures(F, I0, Q, tol=1e-8):
    """Complex structure, metric and B-field determined by a brane solution ``F``.

    Returns ``(I1, g, b)`` with ``I1 = I0 + Q F``, ``g = -(1/2) F (I0 + I1)``
    and ``b = -(1/2) F (I1 - I0)``.
    """
    F, I0, Q = np.asarray(F), np.asarray(I0), np.asarray(Q)
    res = max_abs(brane_residual(F, I0, Q))
    if res > tol:
        raise BraneViolated(f"brane residual {res:.3e} exceeds {tol:.1e}")
    I1 = I0 + Q @ F
    g = -0.5 * F @ (I0 + I1)
    b = -0.5 * F @ (I1 - I0)
    return I1, sym(g), antisym(b)


def compose_morphisms(F01, F12, I0=None, Q=None, tol=1e-8):
    """Compose two morphisms of the holomorphic Poisson groupoid (sum of forms).

    With ``I0`` and ``Q`` given, both legs are checked: ``F01`` against
    ``(I0, Q)`` and ``F12`` against ``(I0 + Q F01, Q)``.
    """
    F01, F12 = np.asarray(F01), np.asarray(F12)
    if I0 is not None and Q is not None:
        I0, Q = np.asarray(I0), np.asarray(Q)
        r01 = max_abs(brane_residual(F01, I0, Q))
        r12 = max_abs(brane_residual(F12, I0 + Q @ F01, Q))
        if max(r01, r12) > tol:
            raise MorphismViolated(f"morphism residuals {r01:.3e}, {r12:.3e} exceed {tol:.1e}")
    return F01 + F12


def sym_eigen(S):
    """Eigenvalues of a symmetric 4x4 matrix, ascending."""
    return np.linalg.eigvalsh(sym(np.asarray(S)))
