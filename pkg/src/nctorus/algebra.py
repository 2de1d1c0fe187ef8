"""Exact arithmetic in the smooth noncommutative torus algebra.

Elements are finite twisted Fourier series sum_{m,n} a_{m,n} U^m V^n over the
unitary generators U, V with VU = e^{2*pi*i*theta} UV.  All operations here are
pure functions of immutable values: products never truncate, the trace reads
the (0,0) coefficient, and the two torus derivations act diagonally on the
monomial basis.  The conformal data (Weyl factor k = e^{h/2}, its inverse
square, the weight phi and the modular automorphism) live here as well.
"""

from __future__ import annotations

import cmath
import json
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

DEFAULT_TOL = 1e-12

GOLDEN_RATIO_THETA = (math.sqrt(5.0) - 1.0) / 2.0


class AlgebraError(ValueError):
    """Invalid algebraic input (mismatched angles, bad axis, ...)."""


class NonConvergence(AlgebraError):
    """A padded approximation failed its self-reported convergence check."""


@dataclass(frozen=True)
class DeformationAngle:
    """Deformation parameter theta in (0,1), irrational by intent.

    Stored in full binary precision and never reduced after construction.
    """

    theta: float

    def __post_init__(self):
        if not 0.0 < self.theta < 1.0:
            raise AlgebraError(f"theta must lie in (0,1), got {self.theta}")


GOLDEN = DeformationAngle(GOLDEN_RATIO_THETA)


@dataclass(frozen=True)
class ModuliPoint:
    """Conformal modulus tau = re + i*im in the upper half-plane."""

    re: float
    im: float

    def __post_init__(self):
        if not self.im > 0.0:
            raise AlgebraError(f"moduli point needs im > 0, got {self.im}")

    @property
    def value(self) -> complex:
        return complex(self.re, self.im)

    @property
    def abs2(self) -> float:
        return self.re * self.re + self.im * self.im


def _phase(theta: float, k: float) -> complex:
    # e^{2*pi*i*theta*k}
    return cmath.exp(2j * math.pi * theta * k)


class NcElement:
    """A bandwidth-bounded twisted Fourier series.

    coeffs maps integer pairs (m, n) with |m|,|n| <= bandwidth to complex
    coefficients; absent entries are zero.  Instances are immutable by
    convention: no method mutates self.
    """

    __slots__ = ("angle", "bandwidth", "coeffs")

    def __init__(self, angle: DeformationAngle, bandwidth: int, coeffs: dict):
        if bandwidth < 0:
            raise AlgebraError("bandwidth must be non-negative")
        clean = {}
        for (m, n), c in coeffs.items():
            if abs(m) > bandwidth or abs(n) > bandwidth:
                raise AlgebraError(
                    f"coefficient index ({m},{n}) outside bandwidth box {bandwidth}"
                )
            c = complex(c)
            if c != 0.0:
                clean[(int(m), int(n))] = c
        self.angle = angle
        self.bandwidth = int(bandwidth)
        self.coeffs = clean

    @property
    def theta(self) -> float:
        return self.angle.theta

    def coeff(self, m: int, n: int) -> complex:
        return self.coeffs.get((m, n), 0.0 + 0.0j)

    def l1_norm(self) -> float:
        return sum(abs(c) for c in self.coeffs.values())

    def support_bandwidth(self) -> int:
        """Smallest box actually containing the support."""
        if not self.coeffs:
            return 0
        return max(max(abs(m), abs(n)) for (m, n) in self.coeffs)

    def trimmed(self, tol: float = 0.0) -> "NcElement":
        """Drop coefficients of magnitude <= tol and shrink the declared box."""
        kept = {mn: c for mn, c in self.coeffs.items() if abs(c) > tol}
        bw = max((max(abs(m), abs(n)) for (m, n) in kept), default=0)
        return NcElement(self.angle, bw, kept)

    def isclose(self, other: "NcElement", tol: float = DEFAULT_TOL) -> bool:
        if self.angle != other.angle:
            return False
        keys = set(self.coeffs) | set(other.coeffs)
        return all(abs(self.coeff(*k) - other.coeff(*k)) <= tol for k in keys)

    # arithmetic sugar; the canonical entry points are the module functions
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(-1.0, other))

    def __mul__(self, other):
        if isinstance(other, NcElement):
            return mul(self, other)
        return scale(other, self)

    def __rmul__(self, other):
        return scale(other, self)

    def __neg__(self):
        return scale(-1.0, self)

    def __eq__(self, other):
        if not isinstance(other, NcElement):
            return NotImplemented
        return self.isclose(other)

    __hash__ = None

    def __repr__(self):
        terms = ", ".join(
            f"({m},{n}): {c:.6g}" for (m, n), c in sorted(self.coeffs.items())
        )
        return f"NcElement(theta={self.theta:.12g}, bw={self.bandwidth}, {{{terms}}})"


def make_monomial(m: int, n: int, c: complex = 1.0, angle: DeformationAngle = GOLDEN) -> NcElement:
    """The single-term element c * U^m V^n."""
    return NcElement(angle, max(abs(m), abs(n)), {(m, n): c})


def unit(angle: DeformationAngle = GOLDEN) -> NcElement:
    return make_monomial(0, 0, 1.0, angle)


def zero(angle: DeformationAngle = GOLDEN) -> NcElement:
    return NcElement(angle, 0, {})


def _check_same_angle(a: NcElement, b: NcElement):
    if a.angle != b.angle:
        raise AlgebraError("deformation angles do not match")


def add(a: NcElement, b: NcElement) -> NcElement:
    _check_same_angle(a, b)
    out = dict(a.coeffs)
    for mn, c in b.coeffs.items():
        out[mn] = out.get(mn, 0.0) + c
    return NcElement(a.angle, max(a.bandwidth, b.bandwidth), out)


def scale(c: complex, a: NcElement) -> NcElement:
    return NcElement(a.angle, a.bandwidth, {mn: c * v for mn, v in a.coeffs.items()})


def mul(a: NcElement, b: NcElement) -> NcElement:
    """Exact twisted product; bandwidth grows to a.bandwidth + b.bandwidth.

    (U^m V^n)(U^p V^q) = e^{2*pi*i*theta*n*p} U^{m+p} V^{n+q}.
    """
    _check_same_angle(a, b)
    theta = a.theta
    out: dict = {}
    for (m, n), ca in a.coeffs.items():
        for (p, q), cb in b.coeffs.items():
            w = ca * cb * _phase(theta, n * p)
            key = (m + p, n + q)
            out[key] = out.get(key, 0.0) + w
    return NcElement(a.angle, a.bandwidth + b.bandwidth, out)


def adjoint(a: NcElement) -> NcElement:
    """Star involution: (U^m V^n)* = e^{2*pi*i*theta*m*n} U^{-m} V^{-n}."""
    theta = a.theta
    out = {}
    for (m, n), c in a.coeffs.items():
        out[(-m, -n)] = c.conjugate() * _phase(theta, m * n)
    return NcElement(a.angle, a.bandwidth, out)


def trace_t(a: NcElement) -> complex:
    """The unique normalized trace: the (0,0) Fourier coefficient."""
    return a.coeff(0, 0)


def trace_of_product(a: NcElement, b: NcElement) -> complex:
    """trace(a b) as a sparse pairing, without materializing the product:
    sum over (m,n) of a_{m,n} b_{-m,-n} e^{-2 pi i theta m n}."""
    _check_same_angle(a, b)
    theta = a.theta
    small, big = (a, b) if len(a.coeffs) <= len(b.coeffs) else (b, a)
    out = 0.0 + 0.0j
    if small is a:
        for (m, n), c in a.coeffs.items():
            other = b.coeffs.get((-m, -n))
            if other is not None:
                out += c * other * _phase(theta, -m * n)
    else:
        for (m, n), c in b.coeffs.items():
            other = a.coeffs.get((-m, -n))
            if other is not None:
                out += other * c * _phase(theta, -m * n)
    return out


def inner_product(a: NcElement, b: NcElement) -> complex:
    """GNS inner product <a,b> = trace(b* a)."""
    return trace_t(mul(adjoint(b), a))


def delta(axis: int, a: NcElement) -> NcElement:
    """Basis derivations: delta_1 scales by m, delta_2 by n."""
    if axis not in (1, 2):
        raise AlgebraError(f"axis must be 1 or 2, got {axis}")
    pick = 0 if axis == 1 else 1
    out = {mn: mn[pick] * c for mn, c in a.coeffs.items()}
    return NcElement(a.angle, a.bandwidth, out)


def dbar(a: NcElement, tau: ModuliPoint) -> NcElement:
    """Dolbeault-type derivation delta_1 + conj(tau) * delta_2."""
    return add(delta(1, a), scale(tau.value.conjugate(), delta(2, a)))


def dbar_star(a: NcElement, tau: ModuliPoint) -> NcElement:
    """Formal adjoint delta_1 + tau * delta_2."""
    return add(delta(1, a), scale(tau.value, delta(2, a)))


def is_selfadjoint(a: NcElement, tol: float = DEFAULT_TOL) -> bool:
    return a.isclose(adjoint(a), tol)


def _left_mult_sparse(a: NcElement, band: int) -> sp.csr_matrix:
    """Sparse finite section of left multiplication on the band window.

    Column (m,n) holds the coefficients of a * U^m V^n clipped to the window;
    used internally for the exponential and for norm bounds.
    """
    side = 2 * band + 1
    dim = side * side
    mm, nn = np.divmod(np.arange(dim), side)
    mm -= band
    nn -= band
    rows, cols, vals = [], [], []
    theta = a.theta
    for (p, q), c in a.coeffs.items():
        tm = mm + p
        tn = nn + q
        ok = (np.abs(tm) <= band) & (np.abs(tn) <= band)
        r = (tm[ok] + band) * side + (tn[ok] + band)
        phases = np.exp(2j * math.pi * theta * q * mm[ok])
        rows.append(r)
        cols.append(np.nonzero(ok)[0])
        vals.append(c * phases)
    if not rows:
        return sp.csr_matrix((dim, dim), dtype=complex)
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(dim, dim),
    )


def _exp_image(h: NcElement, scl: float, band: int) -> NcElement:
    """e^{scl*h} applied to the vacuum vector on the given window."""
    side = 2 * band + 1
    dim = side * side
    mat = _left_mult_sparse(h, band) * scl
    e0 = np.zeros(dim, dtype=complex)
    e0[(0 + band) * side + (0 + band)] = 1.0
    img = spla.expm_multiply(mat, e0)
    out = {}
    for idx in np.nonzero(np.abs(img) > 1e-300)[0]:
        m, n = divmod(int(idx), side)
        out[(m - band, n - band)] = complex(img[idx])
    return NcElement(h.angle, band, out)


def exp_selfadjoint(h: NcElement, scl: float = 1.0, pad: int = 16,
                    conv_tol: float | None = 1e-8):
    """Approximate e^{scl*h} as an element of bandwidth h.bandwidth + pad.

    The exponential is realized as the action of the matrix exponential of the
    left-multiplication finite section on the vacuum basis vector of a padded
    window.  Returns (element, convergence) where convergence is the l1 change
    of the coefficients between pads pad and pad-1; raises NonConvergence when
    that metric exceeds conv_tol (pass conv_tol=None to skip the check).
    """
    if not is_selfadjoint(h, 1e-10):
        raise AlgebraError("exp_selfadjoint requires a selfadjoint element")
    if pad < 1:
        raise AlgebraError("pad must be >= 1")
    bw = h.support_bandwidth()
    full = _exp_image(h, scl, bw + pad)
    prev = _exp_image(h, scl, bw + pad - 1)
    diff = dict(full.coeffs)
    for mn, c in prev.coeffs.items():
        diff[mn] = diff.get(mn, 0.0) - c
    convergence = sum(abs(c) for c in diff.values())
    if conv_tol is not None and convergence > conv_tol:
        raise NonConvergence(
            f"exp_selfadjoint pad={pad} convergence metric {convergence:.3e} > {conv_tol:.1e}"
        )
    return full, convergence


def invert_positive(a: NcElement, bandwidth_cap: int, tol: float = 1e-13,
                    max_terms: int = 4000) -> NcElement:
    """Inverse of a positive invertible element by a scaled Neumann series.

    Writes a = c(1 - x) with c = l1 norm of a, so the series sum x^j / c
    converges; coefficients are truncated to bandwidth_cap each step.  Stops
    once the l1 norm of the running term drops below tol.
    """
    c = a.l1_norm()
    if c == 0.0:
        raise AlgebraError("cannot invert the zero element")
    x = add(unit(a.angle), scale(-1.0 / c, a))
    x, _ = truncate(x, bandwidth_cap)
    term = unit(a.angle)
    acc = unit(a.angle)
    for _ in range(max_terms):
        term = mul(term, x)
        term, _ = truncate(term, bandwidth_cap)
        acc = add(acc, term)
        if term.l1_norm() < tol:
            return scale(1.0 / c, acc)
    raise NonConvergence(
        f"Neumann inverse did not reach tol={tol:.1e} in {max_terms} terms"
    )


@dataclass(frozen=True)
class ConformalData:
    """Conformal modulus plus the Weyl factor caches k = e^{h/2}, k^{-2} = e^{-h}."""

    tau: ModuliPoint
    h: NcElement
    k: NcElement
    k_inv2: NcElement

    def __post_init__(self):
        if not is_selfadjoint(self.h, 1e-10):
            raise AlgebraError("conformal data requires selfadjoint h")
        k2 = mul(self.k, self.k)
        resid = add(mul(self.k_inv2, k2), scale(-1.0, unit(self.h.angle)))
        if resid.l1_norm() > 1e-7:
            raise AlgebraError(
                f"inconsistent Weyl factor caches: |k_inv2*k*k - 1|_1 = {resid.l1_norm():.3e}"
            )

    @classmethod
    def build(cls, tau: ModuliPoint, h: NcElement, pad: int = 16,
              trim: float = 1e-15) -> "ConformalData":
        k, _ = exp_selfadjoint(h, 0.5, pad)
        k_inv2, _ = exp_selfadjoint(h, -1.0, pad)
        return cls(tau=tau, h=h, k=k.trimmed(trim), k_inv2=k_inv2.trimmed(trim))

    @property
    def angle(self) -> DeformationAngle:
        return self.h.angle


def phi(a: NcElement, cd: ConformalData) -> complex:
    """The conformal weight phi(a) = trace(a e^{-h})."""
    _check_same_angle(a, cd.h)
    return trace_t(mul(a, cd.k_inv2))


def phi_inner_product(a: NcElement, b: NcElement, cd: ConformalData) -> complex:
    """Weighted inner product <a,b>_phi = phi(b* a)."""
    return phi(mul(adjoint(b), a), cd)


def modular(a: NcElement, cd: ConformalData) -> NcElement:
    """Modular automorphism e^{-h} a e^{h} via the cached exponentials."""
    k2 = mul(cd.k, cd.k)
    return mul(cd.k_inv2, mul(a, k2))


def norm_bounds(a: NcElement, window_size: int = 8):
    """Two-sided bounds for the operator norm of left multiplication by a.

    lower: largest singular value of the finite section on a window of the
    given bandwidth (monotone nondecreasing in window_size); upper: l1 norm of
    the coefficients.  lower <= ||a|| <= upper always.
    """
    upper = a.l1_norm()
    if not a.coeffs:
        return 0.0, 0.0
    mat = _left_mult_sparse(a, window_size).toarray()
    lower = float(np.linalg.norm(mat, ord=2))
    return min(lower, upper), upper


def truncate(a: NcElement, band: int):
    """Clip to the band box; returns (element, discarded l1 mass)."""
    if band < 0:
        raise AlgebraError("truncation bandwidth must be >= 0")
    kept, lost = {}, 0.0
    for (m, n), c in a.coeffs.items():
        if abs(m) <= band and abs(n) <= band:
            kept[(m, n)] = c
        else:
            lost += abs(c)
    return NcElement(a.angle, band, kept), lost


def random_element(rng: np.random.Generator, band: int, n_terms: int = 6,
                   angle: DeformationAngle = GOLDEN, scale_coeff: float = 1.0) -> NcElement:
    """Random test element with n_terms coefficients inside the band box."""
    out = {}
    for _ in range(n_terms):
        m = int(rng.integers(-band, band + 1))
        n = int(rng.integers(-band, band + 1))
        out[(m, n)] = complex(rng.standard_normal(), rng.standard_normal()) * scale_coeff
    return NcElement(angle, band, out)


def random_selfadjoint(rng: np.random.Generator, band: int, n_terms: int = 4,
                       angle: DeformationAngle = GOLDEN, scale_coeff: float = 0.3) -> NcElement:
    a = random_element(rng, band, n_terms, angle, scale_coeff)
    return scale(0.5, add(a, adjoint(a)))


# ---------------------------------------------------------------------------
# JSON serialization: {"theta": t, "coeffs": [[m, n, re, im], ...]}
# Writers emit coefficients sorted lexicographically; readers accept any order.

def to_json_dict(a: NcElement) -> dict:
    rows = [
        [m, n, c.real, c.imag] for (m, n), c in sorted(a.coeffs.items())
    ]
    return {"theta": a.theta, "coeffs": rows}


def from_json_dict(d: dict) -> NcElement:
    angle = DeformationAngle(float(d["theta"]))
    coeffs = {}
    for m, n, re, im in d["coeffs"]:
        coeffs[(int(m), int(n))] = coeffs.get((int(m), int(n)), 0.0) + complex(re, im)
    bw = max((max(abs(m), abs(n)) for (m, n) in coeffs), default=0)
    return NcElement(angle, bw, coeffs)


def dumps(a: NcElement) -> str:
    return json.dumps(to_json_dict(a))


def loads(s: str) -> NcElement:
    return from_json_dict(json.loads(s))
