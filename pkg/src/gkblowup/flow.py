"""Hamiltonian flows of potentials and the flow-built generalized Kaehler local model.

The position, the flow Jacobian and the pulled-back form are integrated as a
single 4 + 16 + 6 dimensional system with the classical fourth-order
Runge-Kutta scheme, so the time quadrature of the form sees exactly the same
stages as the trajectory.
"""

import math
from dataclasses import dataclass, field

from . import _backend  # noqa: F401
import jax
import jax.numpy as jnp
import numpy as np

from . import tensors as ta
from .conventions import DEFAULT
from .errors import DomainMismatch, LeftDomain, MaxSteps, NotPositive
from .fields import DUAL, ChartDomain, SmoothField, ddc_fn

MODEL_BOX = ((-1.2, 1.2),) * 4

_IU = jnp.triu_indices(4, 1)


def pack6(m):
    return m[_IU]


def unpack6(v):
    m = jnp.zeros((4, 4), dtype=v.dtype).at[_IU].set(v)
    return m - m.T


@dataclass(frozen=True)
class FlowConfig:
    step: float = 1e-2
    max_steps: int = 10_000
    domain_guard: ChartDomain = None
    quadrature: str = "joint-rk4"

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError(f"flow step must be positive, got {self.step}")
        if self.quadrature != "joint-rk4":
            raise ValueError(f"unsupported quadrature {self.quadrature!r}")

    def n_steps(self, t):
        n = int(math.ceil(abs(t) / self.step - 1e-12))
        if n > self.max_steps:
            raise MaxSteps(f"{n} steps needed for t={t}, max_steps={self.max_steps}")
        return n


@dataclass(frozen=True)
class FlowResult:
    endpoint: np.ndarray
    jac: np.ndarray
    Ft: np.ndarray = None
    steps_taken: int = 0
    det: float = 1.0


# --------------------------------------------------------------------------
# the integrator


def integrate(vf, integrand, p, t, n, inside=None, chart=0, switch=None):
    """Fixed-step joint RK4 for (position, flow Jacobian, accumulated form).

    ``vf(chart, x)`` is the vector field, ``integrand(chart, x)`` the 2-form to
    pull back (or None).  ``switch(chart, x, J)`` may move the state to another
    chart between steps.  Returns ``(x, J, F, chart, exit_step)``, where
    ``exit_step`` is the first step after which ``inside`` failed (-1 if never).
    Traceable by jax; ``n`` must be a Python int.
    """
    p = jnp.asarray(p, dtype=float)
    dvf = jax.jacfwd(vf, argnums=1)
    eye = jnp.eye(4, dtype=p.dtype)
    F0 = jnp.zeros(6, dtype=p.dtype)
    if n == 0:
        return p, eye, F0, jnp.asarray(chart), jnp.asarray(-1)
    dt = t / n

    # jitted so the four stages share one trace
    @jax.jit
    def rhs(c, x, J):
        dF = pack6(J.T @ integrand(c, x) @ J) if integrand is not None else F0
        return vf(c, x), dvf(c, x) @ J, dF

    def step(k, state):
        x, J, F, c, exit_step = state
        k1 = rhs(c, x, J)
        k2 = rhs(c, x + 0.5 * dt * k1[0], J + 0.5 * dt * k1[1])
        k3 = rhs(c, x + 0.5 * dt * k2[0], J + 0.5 * dt * k2[1])
        k4 = rhs(c, x + dt * k3[0], J + dt * k3[1])
        x = x + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        J = J + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        F = F + dt / 6 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        if switch is not None:
            c, x, J = switch(c, x, J)
        if inside is not None:
            exit_step = jnp.where((exit_step < 0) & ~inside(c, x), k + 1, exit_step)
        return x, J, F, c, exit_step

    state = (p, eye, F0, jnp.asarray(chart), jnp.asarray(-1))
    return jax.lax.fori_loop(0, n, step, state)


def box_inside(domain):
    lo = jnp.array([a for a, _ in domain.box])
    hi = jnp.array([b for _, b in domain.box])
    return lambda c, x: jnp.all((x >= lo) & (x <= hi))


# --------------------------------------------------------------------------
# public operations


def hamiltonian_field(Q, df):
    """``X = Q(df, .)``: the covector contracted into the first slot of the bivector."""
    if Q.domain != df.domain:
        raise DomainMismatch(f"bivector on {Q.domain.name}, covector on {df.domain.name}")
    fn = lambda p: Q.fn(p).T @ df.fn(p)
    return SmoothField(fn, Q.domain, "vec4", Q.deriv, {"construction": "Q(df, .)"})


def _guard(X, cfg):
    return cfg.domain_guard if cfg.domain_guard is not None else X.domain


def _run(X, p, t, cfg, integrand=None):
    guard = _guard(X, cfg)
    p = guard.check(p)
    n = cfg.n_steps(t)
    vf = lambda c, x: X.fn(x)
    x, J, F, _, exit_step = integrate(vf, integrand, p, float(t), n, box_inside(guard))
    if int(exit_step) >= 0:
        raise LeftDomain(int(exit_step))
    return n, np.asarray(x), np.asarray(J), np.asarray(unpack6(F))


def flow_map(X, p, t, cfg=FlowConfig()):
    """Time-``t`` flow of ``X`` from ``p`` together with its Jacobian."""
    n, x, J, _ = _run(X, p, t, cfg)
    return FlowResult(x, J, None, n, float(np.linalg.det(J)))


def accumulate_F(ddcf, X, p, t, cfg=FlowConfig()):
    """``F_t(p) = int_0^t phi_s^*(ddcf) ds`` along the flow of ``X``."""
    integrand = lambda c, x: ddcf.fn(x)
    n, x, J, F = _run(X, p, t, cfg, integrand)
    return F


# --------------------------------------------------------------------------
# the local model: sigma = u d_u ^ d_v, potential |u|^2 + |v|^2


def model_Q(p):
    return ta.real_bivector(p[0] + 1j * p[1])


def model_potential(p):
    return jnp.sum(p * p)


def _std_I(p):
    return jnp.asarray(ta.STD_I)


def model_vector_field(p):
    return model_Q(p).T @ jax.grad(model_potential)(p)


def model_flow_form(t, n, conventions=DEFAULT):
    """Raw function ``p -> (F_t(p), exit_step)`` for the model potential."""
    A = ddc_fn(model_potential, _std_I, conventions)
    vf = lambda c, x: model_vector_field(x)
    integrand = lambda c, x: A(x)

    def F(p, inside=None):
        _, _, F6, _, exit_step = integrate(vf, integrand, p, t, n, inside)
        return unpack6(F6), exit_step

    return F


def probe_brane_residual(p, t, step=1e-2, conventions=DEFAULT):
    n = FlowConfig(step).n_steps(t)
    F, _ = model_flow_form(t, n, conventions)(jnp.asarray(p))
    return ta.max_abs(ta.brane_residual(np.asarray(F), ta.STD_I, np.asarray(model_Q(jnp.asarray(p)))))


@dataclass(frozen=True)
class BiHermitianModel:
    """Flow-built bi-Hermitian data ``(g, b, I+, I-)`` near a nondegenerate zero of sigma_+.

    ``I+`` is the standard structure, ``F`` the flow form ``F_{t0}`` (a morphism
    ``I+ -> I-``) and ``omega = -F`` the inverse morphism ``I- -> I+``.
    """

    domain: ChartDomain
    t0: float
    I_plus: SmoothField
    I_minus: SmoothField
    g: SmoothField
    b: SmoothField
    omega: SmoothField
    F: SmoothField
    Q: SmoothField
    conventions: object = DEFAULT
    provenance: dict = field(default_factory=dict, compare=False)

    def structures(self, p):
        """``(I+, I-, g, b, omega, Q)`` evaluated at ``p`` as numpy arrays."""
        return tuple(np.asarray(x) for x in model_pointwise(self.F.fn, jnp.asarray(p)))


def model_pointwise(F_fn, p):
    """All model tensors at p from the flow-form function (traceable)."""
    F = F_fn(p)
    Q = model_Q(p)
    Ip = _std_I(p)
    Im = Ip + Q @ F
    omega = -F
    # omega is a morphism I- -> I+:  g = -(1/2) omega (I- + I+),  b = -(1/2) omega (I+ - I-)
    g = -0.5 * omega @ (Im + Ip)
    b = -0.5 * omega @ (Ip - Im)
    return Ip, Im, 0.5 * (g + g.T), 0.5 * (b - b.T), omega, Q


def _sample_points(domain, k=3):
    axes = [np.linspace(lo, hi, k) for lo, hi in domain.box]
    return np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 4)


def make_local_model(t0=0.05, domain=None, cfg=None, conventions=DEFAULT, step=1e-2):
    """Build the local model by flowing the potential ``|u|^2 + |v|^2`` for time ``t0``.

    Both signs of ``t0`` are tried (given sign first); the first one giving a
    positive-definite metric on sample points of the domain is kept.
    """
    if t0 == 0:
        raise ValueError("t0 must be nonzero")
    domain = domain or ChartDomain("model", MODEL_BOX)
    cfg = cfg or FlowConfig(step=step, domain_guard=domain.enlarged(1.5))
    guard = cfg.domain_guard or domain.enlarged(1.5)
    inside = box_inside(guard)
    samples = jnp.asarray(_sample_points(domain))
    tried = []
    for t in (t0, -t0):
        n = cfg.n_steps(t)
        raw = model_flow_form(float(t), n, conventions)
        exits = jax.vmap(lambda p: raw(p, inside)[1])(samples)
        if np.any(np.asarray(exits) >= 0):
            raise LeftDomain(int(np.max(exits)), f"model flow for t0={t} leaves {guard.name}")
        F_fn = lambda p, raw=raw: raw(p)[0]
        gs = jax.vmap(lambda p: model_pointwise(F_fn, p)[2])(samples)
        min_eig = float(np.min(np.linalg.eigvalsh(np.asarray(gs))))
        tried.append((t, min_eig))
        if min_eig > 0:
            return _assemble(F_fn, domain, float(t), conventions, cfg, tried)
    raise NotPositive(f"no sign of t0 gives a positive metric on {domain.name}: {tried}")


def _assemble(F_fn, domain, t0, conventions, cfg, tried):
    part = lambda k: (lambda p: model_pointwise(F_fn, p)[k])
    meta = {"t0": t0}
    mk = lambda k, kind: SmoothField(part(k), domain, kind, DUAL, meta)
    prov = {
        "potential": "|u|^2+|v|^2",
        "poisson": "Re(u d_u ^ d_v)",
        "t0": t0,
        "t0_trials": [{"t0": t, "min_eig": m} for t, m in tried],
        "flow_step": cfg.step,
        "deriv_mode": "dual",
    }
    return BiHermitianModel(
        domain=domain, t0=t0,
        I_plus=mk(0, "mat4"), I_minus=mk(1, "mat4"), g=mk(2, "sym4"), b=mk(3, "form2"),
        omega=mk(4, "form2"), F=SmoothField(F_fn, domain, "form2", DUAL, meta), Q=mk(5, "bivec"),
        conventions=conventions, provenance=prov,
    )
