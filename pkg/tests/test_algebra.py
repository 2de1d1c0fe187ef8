"""Tests for the twisted Fourier algebra core."""

import cmath
import math

import numpy as np
import pytest

from nctorus import algebra as alg
from nctorus.algebra import (
    GOLDEN,
    AlgebraError,
    ConformalData,
    DeformationAngle,
    ModuliPoint,
    NcElement,
    add,
    adjoint,
    dbar,
    dbar_star,
    delta,
    exp_selfadjoint,
    inner_product,
    invert_positive,
    make_monomial,
    modular,
    mul,
    norm_bounds,
    phi,
    scale,
    trace_t,
    truncate,
    unit,
)

THETA = GOLDEN.theta
OMEGA = cmath.exp(2j * math.pi * THETA)

U = make_monomial(1, 0)
V = make_monomial(0, 1)
ONE = unit()


def word_product_oracle(*factors):
    """Independent product oracle: rewrite generator words letter by letter.

    Each factor is a pair (m, n) standing for U^m V^n.  The word is flattened
    to single-exponent letters and V-letters are bubbled right past U-letters
    using V^s U^t -> e^{2*pi*i*theta*s*t} U^t V^s, one swap at a time.
    """
    letters = []
    for m, n in factors:
        letters += [("U", int(math.copysign(1, m)))] * abs(m)
        letters += [("V", int(math.copysign(1, n)))] * abs(n)
    phase = 1.0 + 0.0j
    changed = True
    while changed:
        changed = False
        for i in range(len(letters) - 1):
            (g1, s), (g2, t) = letters[i], letters[i + 1]
            if g1 == "V" and g2 == "U":
                phase *= cmath.exp(2j * math.pi * THETA * s * t)
                letters[i], letters[i + 1] = letters[i + 1], letters[i]
                changed = True
    m = sum(s for g, s in letters if g == "U")
    n = sum(s for g, s in letters if g == "V")
    return (m, n), phase


def test_make_monomial_identity_and_generators():
    assert ONE.coeffs == {(0, 0): 1.0 + 0.0j}
    assert U.coeffs == {(1, 0): 1.0 + 0.0j}
    assert V.coeffs == {(0, 1): 1.0 + 0.0j}
    assert make_monomial(3, -2).bandwidth == 3


def test_mul_basic_relation():
    uv = mul(U, V)
    assert uv.coeff(1, 1) == pytest.approx(1.0)
    vu = mul(V, U)
    assert vu.coeff(1, 1) == pytest.approx(OMEGA)
    assert vu.bandwidth == 2


def test_mul_against_word_oracle():
    # U^2 V times U V^3 and a handful of other generator words
    cases = [((2, 1), (1, 3)), ((1, 2), (2, 1)), ((-1, 2), (3, -1)), ((0, 2), (2, 0))]
    for f1, f2 in cases:
        a = mul(make_monomial(*f1), make_monomial(*f2))
        (m, n), phase = word_product_oracle(f1, f2)
        assert a.coeff(m, n) == pytest.approx(phase, abs=1e-13)
        assert len(a.coeffs) == 1


def test_mul_angle_mismatch_raises():
    other = make_monomial(1, 0, 1.0, DeformationAngle(0.3))
    with pytest.raises(AlgebraError):
        mul(U, other)


def test_adjoint_involution_and_oracle():
    assert adjoint(ONE) == ONE
    # adjoint(UV) = conj via V^{-1} U^{-1} word rewriting
    uv = mul(U, V)
    (m, n), phase = word_product_oracle((0, -1), (-1, 0))
    a = adjoint(uv)
    assert (m, n) == (-1, -1)
    assert a.coeff(-1, -1) == pytest.approx(phase, abs=1e-13)
    # conjugate linearity with mn = 0
    iu = make_monomial(1, 0, 1j)
    assert adjoint(iu).coeff(-1, 0) == pytest.approx(-1j)
    rng = np.random.default_rng(7)
    for _ in range(50):
        a = alg.random_element(rng, 4)
        assert adjoint(adjoint(a)).isclose(a, 1e-14)


def test_trace_examples():
    assert trace_t(ONE) == 1.0
    assert trace_t(make_monomial(3, -2)) == 0.0


def test_trace_cyclic_against_coefficient_sum_oracle():
    rng = np.random.default_rng(11)
    for _ in range(50):
        a = alg.random_element(rng, 8)
        b = alg.random_element(rng, 8)
        lhs = trace_t(mul(a, b))
        rhs = trace_t(mul(b, a))
        direct = sum(
            ca * b.coeff(-m, -n) * cmath.exp(-2j * math.pi * THETA * m * n)
            for (m, n), ca in a.coeffs.items()
        )
        assert abs(lhs - rhs) < 1e-12
        assert lhs == pytest.approx(direct, abs=1e-12)


def test_delta_examples_and_leibniz():
    assert delta(1, U) == U
    assert delta(2, ONE).coeffs == {}
    lhs = delta(1, mul(U, V))
    rhs = add(mul(delta(1, U), V), mul(U, delta(1, V)))
    assert lhs.isclose(rhs, 1e-14)
    assert lhs.coeff(1, 1) == pytest.approx(1.0)
    with pytest.raises(AlgebraError):
        delta(3, U)


def test_dbar_examples():
    ti = ModuliPoint(0.0, 1.0)
    assert dbar(U, ti) == U
    assert dbar(V, ti).coeff(0, 1) == pytest.approx(-1j)
    t2i = ModuliPoint(0.0, 2.0)
    assert dbar_star(V, t2i).coeff(0, 1) == pytest.approx(2j)


def exp_series_oracle(h, scl, tol=1e-13):
    """Power series sum h^j / j! with a rigorous l1 tail bound."""
    x = scale(scl, h)
    norm = x.l1_norm()
    term = unit(h.angle)
    acc = unit(h.angle)
    j = 0
    while True:
        j += 1
        term = scale(1.0 / j, mul(term, x))
        acc = add(acc, term)
        # tail <= norm^{j+1}/(j+1)! * e^norm
        tail = norm ** (j + 1) / math.factorial(j + 1) * math.exp(norm)
        if tail < tol:
            return acc


def test_exp_trivial_and_scalar():
    e, conv = exp_selfadjoint(alg.zero(), 0.5, pad=4)
    assert e == ONE
    assert conv < 1e-14
    s = 0.7
    e, _ = exp_selfadjoint(scale(s, ONE), 1.0, pad=4)
    assert e.coeff(0, 0) == pytest.approx(math.exp(s), rel=1e-12)


def test_exp_matches_power_series():
    h = scale(0.4, add(U, adjoint(U)))
    e, conv = exp_selfadjoint(h, 1.0, pad=24)
    oracle = exp_series_oracle(h, 1.0)
    assert conv < 1e-12
    keys = set(e.coeffs) | {k for k in oracle.coeffs if abs(oracle.coeff(*k)) > 1e-12}
    for k in keys:
        assert e.coeff(*k) == pytest.approx(oracle.coeff(*k), abs=1e-10)


def test_exp_rejects_non_selfadjoint():
    with pytest.raises(AlgebraError):
        exp_selfadjoint(make_monomial(1, 0, 1.0), 1.0)


def test_exp_consistency_inverse_pair():
    rng = np.random.default_rng(3)
    h = alg.random_selfadjoint(rng, 2, scale_coeff=0.4)
    ep, _ = exp_selfadjoint(h, 1.0, pad=20)
    em, _ = exp_selfadjoint(h, -1.0, pad=20)
    resid = add(mul(ep, em), scale(-1.0, ONE))
    assert resid.l1_norm() < 1e-9


@pytest.fixture(scope="module")
def cd_default():
    h = scale(0.4, add(U, adjoint(U)))
    return ConformalData.build(ModuliPoint(0.0, 1.0), h, pad=16)


def test_phi_examples(cd_default):
    flat = ConformalData.build(ModuliPoint(0.0, 1.0), alg.zero(), pad=2)
    assert phi(ONE, flat) == pytest.approx(1.0)
    assert phi(ONE, cd_default) == pytest.approx(trace_t(cd_default.k_inv2))
    # t(e^{-h}) for h = 0.4(U + U*) is the Bessel integral I_0(0.8)
    from scipy.special import iv

    assert phi(ONE, cd_default) == pytest.approx(iv(0, 0.8), abs=1e-9)


def test_kms_twisted_trace(cd_default):
    rng = np.random.default_rng(5)
    for _ in range(20):
        a = alg.random_element(rng, 3)
        b = alg.random_element(rng, 3)
        lhs = phi(mul(a, b), cd_default)
        rhs = phi(mul(b, modular(a, cd_default)), cd_default)
        assert abs(lhs - rhs) < 1e-10


def test_modular_examples(cd_default):
    flat = ConformalData.build(ModuliPoint(0.0, 1.0), alg.zero(), pad=2)
    rng = np.random.default_rng(9)
    a = alg.random_element(rng, 3)
    assert modular(ONE, cd_default).isclose(ONE, 1e-9)
    assert modular(a, flat).isclose(a, 1e-12)
    assert abs(trace_t(modular(a, cd_default)) - trace_t(a)) < 1e-9


def test_norm_bounds():
    lo, hi = norm_bounds(ONE)
    assert lo == pytest.approx(1.0) and hi == pytest.approx(1.0)
    lo, hi = norm_bounds(U)
    assert lo == pytest.approx(1.0, abs=1e-12) and hi == 1.0
    h = add(U, adjoint(U))
    prev = 0.0
    for w in (4, 8, 16):
        lo, hi = norm_bounds(h, w)
        assert hi == pytest.approx(2.0)
        assert lo >= prev - 1e-13
        assert lo <= 2.0 + 1e-12
        prev = lo
    assert prev > 1.95  # spectrum of 2cos approaches 2


def test_truncate():
    u3 = make_monomial(3, 0)
    t, lost = truncate(u3, 2)
    assert t.coeffs == {} and lost == pytest.approx(1.0)
    rng = np.random.default_rng(13)
    a = alg.random_element(rng, 3)
    b = alg.random_element(rng, 3)
    t, lost = truncate(a, a.bandwidth)
    assert t == a and lost == 0.0
    # truncating a product agrees with naive convolution-then-drop
    prod = mul(a, b)
    tr, _ = truncate(prod, 2)
    for (m, n), c in tr.coeffs.items():
        direct = sum(
            ca * b.coeff(m - p, n - q) * cmath.exp(2j * math.pi * THETA * q * (m - p))
            for (p, q), ca in a.coeffs.items()
        )
        assert c == pytest.approx(direct, abs=1e-12)


def test_integration_by_parts_and_star_derivation():
    rng = np.random.default_rng(17)
    for _ in range(50):
        a = alg.random_element(rng, 4)
        b = alg.random_element(rng, 4)
        for j in (1, 2):
            s = trace_t(mul(a, delta(j, b))) + trace_t(mul(delta(j, a), b))
            assert abs(s) < 1e-12
            lhs = delta(j, adjoint(a))
            rhs = scale(-1.0, adjoint(delta(j, a)))
            assert lhs.isclose(rhs, 1e-12)


def test_positivity_of_trace():
    rng = np.random.default_rng(19)
    for _ in range(30):
        a = alg.random_element(rng, 4)
        v = trace_t(mul(adjoint(a), a))
        assert abs(v.imag) < 1e-12
        assert v.real >= -1e-12
        # equals the coefficient l2 norm squared
        assert v.real == pytest.approx(sum(abs(c) ** 2 for c in a.coeffs.values()), rel=1e-12)


def test_commutation_invariant():
    resid = add(mul(V, U), scale(-OMEGA, mul(U, V)))
    assert all(abs(c) < 1e-14 for c in resid.coeffs.values())


def test_invert_positive_neumann():
    h = scale(0.4, add(U, adjoint(U)))
    k2, _ = exp_selfadjoint(h, 1.0, pad=16)
    inv = invert_positive(k2, bandwidth_cap=24)
    resid = add(mul(inv, k2), scale(-1.0, ONE))
    assert resid.l1_norm() < 1e-10
    em, _ = exp_selfadjoint(h, -1.0, pad=16)
    assert abs(trace_t(inv) - trace_t(em)) < 1e-10


def test_json_round_trip_and_unsorted_reader():
    rng = np.random.default_rng(23)
    a = alg.random_element(rng, 5)
    d = alg.to_json_dict(a)
    # writer emits sorted coefficient rows
    assert d["coeffs"] == sorted(d["coeffs"], key=lambda r: (r[0], r[1]))
    assert alg.from_json_dict(d).isclose(a, 0.0)
    # reader accepts shuffled input
    shuffled = {"theta": d["theta"], "coeffs": list(reversed(d["coeffs"]))}
    assert alg.from_json_dict(shuffled).isclose(a, 0.0)
    assert alg.loads(alg.dumps(a)).isclose(a, 0.0)


def test_inner_product_orthonormal_monomials():
    assert inner_product(U, U) == pytest.approx(1.0)
    assert inner_product(U, V) == 0.0
    uv = mul(U, V)
    assert inner_product(uv, uv) == pytest.approx(1.0)


def test_trace_of_product_pairing():
    rng = np.random.default_rng(29)
    for _ in range(30):
        a = alg.random_element(rng, 4)
        b = alg.random_element(rng, 4)
        assert alg.trace_of_product(a, b) == pytest.approx(
            trace_t(mul(a, b)), abs=1e-13
        )
