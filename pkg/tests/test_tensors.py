import numpy as np
import pytest
from hypothesis import given, strategies as st

from gkblowup import tensors as ta
from gkblowup.errors import BraneViolated, MorphismViolated, NotAntisymmetric, NotComplexStructure, SingularForm

I_STD = ta.STD_I
# a second orthogonal complex structure anticommuting with the standard one
J_Q = np.array([[0.0, 0.0, -1.0, 0.0], [0.0, 0.0, 0.0, 1.0], [1.0, 0.0, 0.0, 0.0], [0.0, -1.0, 0.0, 0.0]])
K_Q = I_STD @ J_Q

seeds = st.integers(0, 2 ** 32 - 1)


def random_orthogonal(rng):
    q, r = np.linalg.qr(rng.normal(size=(4, 4)))
    return q * np.sign(np.diag(r))


def random_complex_structure(rng):
    a = rng.normal(size=(4, 4)) + 2 * np.eye(4)
    return a @ I_STD @ np.linalg.inv(a)


def random_bihermitian(rng):
    """g = A^T A with I+- = A^-1 K+- A, K+- orthogonal: g is Hermitian for both."""
    A = rng.normal(size=(4, 4)) + 3 * np.eye(4)
    Ks = []
    for _ in range(2):
        O = random_orthogonal(rng)
        Ks.append(O @ I_STD @ O.T)
    Ainv = np.linalg.inv(A)
    return A.T @ A, Ainv @ Ks[0] @ A, Ainv @ Ks[1] @ A


def test_quaternion_oracle_is_consistent():
    for m in (I_STD, J_Q, K_Q):
        np.testing.assert_allclose(m @ m, -np.eye(4), atol=0)
        np.testing.assert_allclose(m.T, -m, atol=0)
    np.testing.assert_allclose(J_Q @ I_STD, -K_Q, atol=0)


def test_real_bivector_from_complex_vectors():
    dz1 = np.array([1, -1j, 0, 0]) / 2
    dz2 = np.array([0, 0, 1, -1j]) / 2
    for a in (1.0, 1j, 0.3 - 0.7j):
        expected = (a * (np.outer(dz1, dz2) - np.outer(dz2, dz1))).real
        np.testing.assert_allclose(ta.real_bivector(np.complex128(a)), expected, atol=1e-15)


def test_realify_matches_complex_multiplication(rng):
    m = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    z = rng.normal(size=2) + 1j * rng.normal(size=2)
    x = np.array([z[0].real, z[0].imag, z[1].real, z[1].imag])
    w = m @ z
    np.testing.assert_allclose(ta.realify(m) @ x, [w[0].real, w[0].imag, w[1].real, w[1].imag], atol=1e-14)
    np.testing.assert_allclose(ta.realify(1j * np.eye(2)), I_STD)


def test_commutator_trivial_cases(rng):
    a = rng.normal(size=(4, 4))
    assert ta.max_abs(ta.commutator(a, a)) == 0
    assert ta.max_abs(ta.commutator(I_STD, -I_STD)) == 0


@given(seeds)
def test_commutator_identity(seed):
    rng = np.random.default_rng(seed)
    ip, im = random_complex_structure(rng), random_complex_structure(rng)
    lhs = ta.commutator(ip, im)
    rhs = (ip - im) @ (im + ip)
    assert ta.max_abs(lhs - rhs) <= 1e-12 * max(1.0, ta.max_abs(lhs))


def test_compute_Q_trivial():
    assert ta.max_abs(ta.compute_Q(I_STD, I_STD, np.eye(4))) == 0


def test_compute_Q_rejects_non_hermitian_metric(rng):
    g = rng.normal(size=(4, 4))
    g = g @ g.T + np.eye(4)
    with pytest.raises(NotAntisymmetric):
        ta.compute_Q(I_STD, J_Q, np.linalg.inv(g))


def test_compute_Q_on_hyperkaehler_pair():
    # [I, J] = 2K, so (1/8)[I, J] = K/4
    np.testing.assert_allclose(ta.compute_Q(I_STD, J_Q, np.eye(4)), K_Q / 4, atol=1e-15)


@given(seeds)
def test_bihermitian_data_gives_antisymmetric_Q(seed):
    g, ip, im = random_bihermitian(np.random.default_rng(seed))
    q = ta.compute_Q(ip, im, np.linalg.inv(g))
    assert ta.max_abs(q + q.T) == 0


def test_real_poisson_trivial():
    assert ta.max_abs(ta.real_poisson(I_STD, I_STD, np.eye(4), "+")) == 0
    np.testing.assert_allclose(ta.real_poisson(I_STD, I_STD, np.eye(4), "-"), I_STD)


@given(seeds, st.sampled_from(["+", "-"]))
def test_real_poisson_two_formulas(seed, sign):
    g, ip, im = random_bihermitian(np.random.default_rng(seed))
    # the cross-check inside raises if the two expressions differ beyond 1e-10
    ta.real_poisson(ip, im, np.linalg.inv(g), sign, g=g)


def test_real_poisson_singular_form():
    with pytest.raises(SingularForm):
        ta.real_poisson(I_STD, J_Q, np.eye(4), "+", g=np.zeros((4, 4)))
    with pytest.raises(ValueError):
        ta.real_poisson(I_STD, J_Q, np.eye(4), "x")


def test_reconstruct_J_kaehler_case():
    w = np.eye(4) @ I_STD
    jp = ta.reconstruct_J(np.zeros((4, 4)), I_STD, I_STD, w, w, "+")
    jm = ta.reconstruct_J(np.zeros((4, 4)), I_STD, I_STD, w, w, "-")
    z = np.zeros((4, 4))
    np.testing.assert_allclose(jp, np.block([[I_STD, z], [z, -I_STD.T]]), atol=1e-15)
    np.testing.assert_allclose(jm, np.block([[z, -np.linalg.inv(w)], [w, z]]), atol=1e-15)


@given(seeds)
def test_reconstruct_J_squares_and_commutes(seed):
    rng = np.random.default_rng(seed)
    g, ip, im = random_bihermitian(rng)
    b = ta.antisym(rng.normal(size=(4, 4)))
    jp = ta.reconstruct_J(b, ip, im, g @ ip, g @ im, "+")
    jm = ta.reconstruct_J(b, ip, im, g @ ip, g @ im, "-")
    scale = max(1.0, ta.max_abs(jp), ta.max_abs(jm)) ** 2
    assert ta.max_abs(jp @ jp + np.eye(8)) <= 1e-12 * scale
    assert ta.max_abs(jm @ jm + np.eye(8)) <= 1e-12 * scale
    assert ta.max_abs(ta.commutator(jp, jm)) <= 1e-10 * scale


def test_reconstruct_J_square_needs_a_common_metric(rng):
    # each omega is Hermitian for its own structure, but with different metrics
    gp, ip, _ = random_bihermitian(rng)
    gm, _, im = random_bihermitian(rng)
    jp = ta.reconstruct_J(np.zeros((4, 4)), ip, im, gp @ ip, gm @ im, "+")
    assert ta.max_abs(jp @ jp + np.eye(8)) > 1e-3


def test_reconstruct_J_singular():
    with pytest.raises(SingularForm):
        ta.reconstruct_J(np.zeros((4, 4)), I_STD, I_STD, np.zeros((4, 4)), I_STD, "+")


def test_brane_residual_trivial():
    assert ta.max_abs(ta.brane_residual(np.zeros((4, 4)), I_STD, K_Q)) == 0
    assert ta.max_abs(ta.brane_residual(I_STD, I_STD, np.zeros((4, 4)))) == 0


def test_hyperkaehler_morphism():
    # F = I + J is a morphism from I to J for Q = K (flat metric)
    F = I_STD + J_Q
    assert ta.max_abs(ta.brane_residual(F, I_STD, K_Q)) == 0
    I1, g, b = ta.derived_structures(F, I_STD, K_Q)
    np.testing.assert_allclose(I1, J_Q, atol=1e-15)
    np.testing.assert_allclose(g, np.eye(4), atol=1e-15)
    np.testing.assert_allclose(b, -K_Q, atol=1e-15)


def test_derived_structures_kaehler_and_zero():
    I1, g, b = ta.derived_structures(np.eye(4) @ I_STD, I_STD, np.zeros((4, 4)))
    np.testing.assert_allclose(I1, I_STD)
    np.testing.assert_allclose(g, np.eye(4), atol=1e-15)
    assert ta.max_abs(b) == 0
    I1, g, b = ta.derived_structures(np.zeros((4, 4)), I_STD, K_Q)
    np.testing.assert_allclose(I1, I_STD)
    assert ta.max_abs(g) == 0 and ta.max_abs(b) == 0


def test_derived_structures_rejects_non_brane(rng):
    F = ta.antisym(rng.normal(size=(4, 4)))
    with pytest.raises(BraneViolated):
        ta.derived_structures(F, I_STD, K_Q)


def test_compose_morphisms_trivial_and_violation(rng):
    F = I_STD + J_Q
    assert ta.max_abs(ta.compose_morphisms(F, -F, I_STD, K_Q)) == 0
    np.testing.assert_array_equal(ta.compose_morphisms(np.zeros((4, 4)), F, I_STD, K_Q), F)
    with pytest.raises(MorphismViolated):
        ta.compose_morphisms(F, ta.antisym(rng.normal(size=(4, 4))), I_STD, K_Q)


def test_check_helpers():
    ta.check_complex_structure(I_STD)
    with pytest.raises(NotComplexStructure):
        ta.check_complex_structure(np.eye(4))
    with pytest.raises(NotAntisymmetric):
        ta.check_antisymmetric(np.eye(4))


def test_sym_eigen(rng):
    np.testing.assert_allclose(ta.sym_eigen(np.diag([3.0, 1.0, 4.0, 2.0])), [1, 2, 3, 4])
    np.testing.assert_array_equal(ta.sym_eigen(np.zeros((4, 4))), np.zeros(4))
    S = ta.sym(rng.normal(size=(4, 4)))
    lam, V = np.linalg.eigh(S)
    np.testing.assert_allclose(ta.sym_eigen(S), lam)
    assert ta.max_abs(S - V @ np.diag(lam) @ V.T) <= 1e-12
