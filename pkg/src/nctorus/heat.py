"""Parametrix terms, contour calculus and heat coefficients.

The resolvent parametrix of the perturbed Laplacian is represented as an
expression DAG over a handful of atoms: the resolvent (Q(xi) k^2 - lambda)^{-1},
fixed algebra elements acting by left multiplication, and numeric xi-monomials.
Differentiation in xi acts structurally on the DAG, so every term of the
recursion for the subleading symbols is exact.  Heat coefficients come from a
nested quadrature: lambda over a parabolic contour around the positive axis
(validated against the matrix exponential before every run) and xi over the
sheared polar grid in which the leading quadratic form is exactly r^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .algebra import ConformalData, ModuliPoint, NcElement, add, delta, mul, scale
from .gns import BasisWindow, FiniteSectionOperator, left_mult_matrix
from .symbols import SymbolError


class HeatError(RuntimeError):
    """Contour, quadrature or fit failure."""


# ---------------------------------------------------------------------------
# Laplace symbol data

@dataclass(frozen=True)
class LaplaceSymbolData:
    """Coefficients of the symbol of the conformally rescaled Laplacian.

    The quadratic form Q(xi) carries coefficients a2_q = (1, 2 Re tau, |tau|^2);
    the full leading term is Q(xi) k2.  a1_1, a1_2 are the algebra coefficients
    of xi1 and xi2 in the subleading term and a0 is the zeroth-order part.
    """

    tau: ModuliPoint
    a2_q: tuple
    k2: NcElement
    a1_1: NcElement
    a1_2: NcElement
    a0: NcElement
    k2_d1: NcElement
    k2_d2: NcElement

    @property
    def angle(self):
        return self.k2.angle


def trimmed_symbol_data(ls: LaplaceSymbolData, tol: float) -> LaplaceSymbolData:
    """Drop tiny coefficients from every element; a resolution knob for the
    quadrature engine (smaller windows for the expensive subleading terms)."""
    k2 = ls.k2.trimmed(tol)
    return LaplaceSymbolData(
        tau=ls.tau,
        a2_q=ls.a2_q,
        k2=k2,
        a1_1=ls.a1_1.trimmed(tol),
        a1_2=ls.a1_2.trimmed(tol),
        a0=ls.a0.trimmed(tol),
        k2_d1=delta(1, k2),
        k2_d2=delta(2, k2),
    )


def laplace_symbol(cd: ConformalData) -> LaplaceSymbolData:
    """Exact coefficients built from the Weyl factor and its derivations."""
    k = cd.k
    tau = cd.tau
    tre, tabs2 = tau.re, tau.abs2
    d1k = delta(1, k)
    d2k = delta(2, k)
    a1_1 = add(scale(2.0, mul(k, d1k)), scale(2.0 * tre, mul(k, d2k)))
    a1_2 = add(scale(2.0 * tabs2, mul(k, d2k)), scale(2.0 * tre, mul(k, d1k)))
    a0 = add(
        add(mul(k, delta(1, d1k)), scale(tabs2, mul(k, delta(2, d2k)))),
        scale(2.0 * tre, mul(k, delta(2, d1k))),
    )
    k2 = mul(k, k).trimmed(1e-14)
    return LaplaceSymbolData(
        tau=tau,
        a2_q=(1.0, 2.0 * tre, tabs2),
        k2=k2,
        a1_1=a1_1.trimmed(1e-15),
        a1_2=a1_2.trimmed(1e-15),
        a0=a0.trimmed(1e-15),
        k2_d1=delta(1, k2),
        k2_d2=delta(2, k2),
    )


# ---------------------------------------------------------------------------
# expression DAG

class Expr:
    __slots__ = ()


class Resolvent(Expr):
    """The atom (Q(xi) k^2 - lambda)^{-1}; lambda lives only here."""

    __slots__ = ()

    def __repr__(self):
        return "B0"


class ElementAtom(Expr):
    """Left multiplication by a fixed algebra element."""

    __slots__ = ("elem", "label")

    def __init__(self, elem: NcElement, label: str = ""):
        self.elem = elem
        self.label = label

    def __repr__(self):
        return self.label or "elem"


class ScalarPoly(Expr):
    """Numeric polynomial in (xi1, xi2): {(e1, e2): complex}."""

    __slots__ = ("coeffs",)

    def __init__(self, coeffs: dict):
        self.coeffs = {k: complex(v) for k, v in coeffs.items() if v != 0.0}

    def eval(self, x1: float, x2: float) -> complex:
        return sum(c * (x1 ** e1) * (x2 ** e2) for (e1, e2), c in self.coeffs.items())

    def derivative(self, axis: int) -> "ScalarPoly":
        out: dict = {}
        for (e1, e2), c in self.coeffs.items():
            if axis == 1 and e1 > 0:
                out[(e1 - 1, e2)] = out.get((e1 - 1, e2), 0.0) + e1 * c
            if axis == 2 and e2 > 0:
                out[(e1, e2 - 1)] = out.get((e1, e2 - 1), 0.0) + e2 * c
        return ScalarPoly(out)

    def __repr__(self):
        return f"poly{self.coeffs}"


class Scaled(Expr):
    __slots__ = ("c", "child")

    def __init__(self, c: complex, child: Expr):
        self.c = complex(c)
        self.child = child

    def __repr__(self):
        return f"({self.c:g})*{self.child!r}"


class Sum(Expr):
    __slots__ = ("children",)

    def __init__(self, children):
        self.children = tuple(children)

    def __repr__(self):
        return "(" + " + ".join(map(repr, self.children)) + ")" if self.children else "0"


class Prod(Expr):
    __slots__ = ("factors",)

    def __init__(self, factors):
        self.factors = tuple(factors)

    def __repr__(self):
        return "*".join(map(repr, self.factors))


ZERO = Sum(())
B0 = Resolvent()


def is_zero(e: Expr) -> bool:
    return isinstance(e, Sum) and not e.children


def _sum(children) -> Expr:
    flat = []
    for c in children:
        if is_zero(c):
            continue
        if isinstance(c, Sum):
            flat.extend(c.children)
        else:
            flat.append(c)
    if not flat:
        return ZERO
    if len(flat) == 1:
        return flat[0]
    return Sum(flat)


def _prod(factors) -> Expr:
    flat = []
    for f in factors:
        if is_zero(f):
            return ZERO
        if isinstance(f, Prod):
            flat.extend(f.factors)
        else:
            flat.append(f)
    if len(flat) == 1:
        return flat[0]
    return Prod(flat)


def _q_poly(ls: LaplaceSymbolData) -> ScalarPoly:
    c0, c1, c2 = ls.a2_q
    return ScalarPoly({(2, 0): c0, (1, 1): c1, (0, 2): c2})


def _dq_poly(ls: LaplaceSymbolData, axis: int) -> ScalarPoly:
    return _q_poly(ls).derivative(axis)


def xi_derivative_expr(e: Expr, axis: int, ls: LaplaceSymbolData) -> Expr:
    """Exact structural derivative; on the resolvent atom
    d_i B0 = -B0 (d_i Q) k^2 B0."""
    if isinstance(e, Resolvent):
        return Scaled(-1.0, _prod([B0, _dq_poly(ls, axis),
                                   ElementAtom(ls.k2, "k2"), B0]))
    if isinstance(e, ElementAtom):
        return ZERO
    if isinstance(e, ScalarPoly):
        d = e.derivative(axis)
        return d if d.coeffs else ZERO
    if isinstance(e, Scaled):
        inner = xi_derivative_expr(e.child, axis, ls)
        return ZERO if is_zero(inner) else Scaled(e.c, inner)
    if isinstance(e, Sum):
        return _sum(xi_derivative_expr(c, axis, ls) for c in e.children)
    if isinstance(e, Prod):
        terms = []
        for i in range(len(e.factors)):
            d = xi_derivative_expr(e.factors[i], axis, ls)
            if is_zero(d):
                continue
            terms.append(_prod(list(e.factors[:i]) + [d] + list(e.factors[i + 1:])))
        return _sum(terms)
    raise HeatError(f"unknown expression node {e!r}")


def delta_expr(e: Expr, axis: int, ls: LaplaceSymbolData) -> Expr:
    """Torus derivation applied to the algebra content of an expression."""
    if isinstance(e, Resolvent):
        dk2 = ls.k2_d1 if axis == 1 else ls.k2_d2
        if not dk2.coeffs:
            return ZERO
        return Scaled(-1.0, _prod([B0, _q_poly(ls), ElementAtom(dk2, f"d{axis}k2"), B0]))
    if isinstance(e, ElementAtom):
        d = delta(axis, e.elem)
        return ElementAtom(d, f"d{axis}({e.label})") if d.coeffs else ZERO
    if isinstance(e, ScalarPoly):
        return ZERO
    if isinstance(e, Scaled):
        inner = delta_expr(e.child, axis, ls)
        return ZERO if is_zero(inner) else Scaled(e.c, inner)
    if isinstance(e, Sum):
        return _sum(delta_expr(c, axis, ls) for c in e.children)
    if isinstance(e, Prod):
        terms = []
        for i in range(len(e.factors)):
            d = delta_expr(e.factors[i], axis, ls)
            if is_zero(d):
                continue
            terms.append(_prod(list(e.factors[:i]) + [d] + list(e.factors[i + 1:])))
        return _sum(terms)
    raise HeatError(f"unknown expression node {e!r}")


def symbol_term_expr(ls: LaplaceSymbolData, k: int) -> Expr:
    """The order-k part of the Laplacian symbol as an expression (without
    the -lambda of the leading term)."""
    if k == 0:
        return ElementAtom(ls.a0, "a0") if ls.a0.coeffs else ZERO
    if k == 1:
        parts = []
        if ls.a1_1.coeffs:
            parts.append(_prod([ScalarPoly({(1, 0): 1.0}), ElementAtom(ls.a1_1, "a1_1")]))
        if ls.a1_2.coeffs:
            parts.append(_prod([ScalarPoly({(0, 1): 1.0}), ElementAtom(ls.a1_2, "a1_2")]))
        return _sum(parts)
    if k == 2:
        return _prod([_q_poly(ls), ElementAtom(ls.k2, "k2")])
    raise HeatError("symbol order k must be 0, 1 or 2")


@dataclass(frozen=True)
class ParametrixTerms:
    """Resolvent parametrix terms b_0 .. b_n with leaf-term counts."""

    terms: tuple
    term_counts: tuple


def _leaf_count(e: Expr) -> int:
    if is_zero(e):
        return 0
    if isinstance(e, Sum):
        return sum(_leaf_count(c) for c in e.children)
    return 1


def parametrix_terms(ls: LaplaceSymbolData, n_max: int = 2) -> ParametrixTerms:
    """Structural expansion of the recursion
    b_n = - sum 1/(l1! l2!) d^l(b_j) delta^l(a_k) b_0 over 2+j+l1+l2-k = n."""
    if n_max > 2:
        raise HeatError("parametrix terms beyond n = 2 are not supported")
    bs = [B0]
    for n in range(1, n_max + 1):
        terms = []
        for j in range(n):
            for k in range(3):
                rem = n - 2 - j + k
                if rem < 0:
                    continue
                for l1 in range(rem + 1):
                    l2 = rem - l1
                    ak = symbol_term_expr(ls, k)
                    for _ in range(l1):
                        ak = delta_expr(ak, 1, ls)
                    for _ in range(l2):
                        ak = delta_expr(ak, 2, ls)
                    if is_zero(ak):
                        continue
                    pb = bs[j]
                    for _ in range(l1):
                        pb = xi_derivative_expr(pb, 1, ls)
                    for _ in range(l2):
                        pb = xi_derivative_expr(pb, 2, ls)
                    if is_zero(pb):
                        continue
                    f = -1.0 / (math.factorial(l1) * math.factorial(l2))
                    terms.append(Scaled(f, _prod([pb, ak, B0])))
        bs.append(_sum(terms))
    return ParametrixTerms(tuple(bs), tuple(_leaf_count(b) for b in bs))


# ---------------------------------------------------------------------------
# normal form: scalar xi-polynomial times an ordered word of matrix factors

def _elem_key(elem: NcElement):
    return tuple(sorted(elem.coeffs.items()))


def _word_key(word):
    return tuple(
        "B0" if isinstance(f, Resolvent) else _elem_key(f.elem) for f in word
    )


def _raw_terms(e: Expr):
    if is_zero(e):
        return []
    if isinstance(e, (Resolvent, ElementAtom)):
        return [(1.0 + 0.0j, {(0, 0): 1.0 + 0.0j}, (e,))]
    if isinstance(e, ScalarPoly):
        return [(1.0 + 0.0j, dict(e.coeffs), ())]
    if isinstance(e, Scaled):
        return [(c * e.c, p, wds) for c, p, wds in _raw_terms(e.child)]
    if isinstance(e, Sum):
        out = []
        for ch in e.children:
            out.extend(_raw_terms(ch))
        return out
    if isinstance(e, Prod):
        out = [(1.0 + 0.0j, {(0, 0): 1.0 + 0.0j}, ())]
        for f in e.factors:
            nxt = []
            for c1, p1, w1 in out:
                for c2, p2, w2 in _raw_terms(f):
                    p = {}
                    for (a1, a2), ca in p1.items():
                        for (b1, b2), cb in p2.items():
                            key = (a1 + b1, a2 + b2)
                            p[key] = p.get(key, 0.0) + ca * cb
                    nxt.append((c1 * c2, p, w1 + w2))
            out = nxt
        return out
    raise HeatError(f"unknown expression node {e!r}")


def normal_terms(e: Expr):
    """Expand into [(poly, word)] pairs, poly a xi-monomial dict and word an
    ordered tuple of Resolvent / ElementAtom factors; terms sharing the same
    word (by coefficient value) are merged into a single polynomial."""
    grouped: dict = {}
    for c, poly, word in _raw_terms(e):
        key = _word_key(word)
        if key in grouped:
            acc_poly, _ = grouped[key]
            for mono, pc in poly.items():
                acc_poly[mono] = acc_poly.get(mono, 0.0) + c * pc
        else:
            grouped[key] = ({mono: c * pc for mono, pc in poly.items()}, word)
    out = []
    for poly, word in grouped.values():
        poly = {mono: pc for mono, pc in poly.items() if pc != 0.0}
        if poly:
            out.append((poly, word))
    return out


# ---------------------------------------------------------------------------
# pointwise matrix evaluation

def _poly_eval(poly: dict, x1: float, x2: float) -> complex:
    return sum(c * (x1 ** e1) * (x2 ** e2) for (e1, e2), c in poly.items())


def eval_expr(e: Expr, xi, lam: complex, w: BasisWindow, ls: LaplaceSymbolData,
              dist_tol: float = 1e-9) -> FiniteSectionOperator:
    """Evaluate an expression to a dense matrix at the point (xi, lambda).

    The resolvent atom is realized by a dense solve; the distance from lambda
    to the spectrum of Q(xi) k^2 is checked first and a near-singular solve is
    refused.
    """
    x1, x2 = float(xi[0]), float(xi[1])
    k2m = left_mult_matrix(ls.k2, w).entries
    qv = _q_poly(ls).eval(x1, x2).real
    svals = np.linalg.eigvalsh((k2m + k2m.conj().T) / 2.0)
    dist = float(np.min(np.abs(qv * svals - lam)))
    if dist < dist_tol:
        raise HeatError(
            f"lambda {lam:g} within {dist:.2e} of the section spectrum"
        )
    dim = w.dim
    b0m = np.linalg.inv(qv * k2m - lam * np.eye(dim))
    atom_cache: dict = {}

    def matrix_of(node) -> np.ndarray:
        if isinstance(node, Resolvent):
            return b0m
        key = _elem_key(node.elem)
        if key not in atom_cache:
            atom_cache[key] = left_mult_matrix(node.elem, w).entries
        return atom_cache[key]

    total = np.zeros((dim, dim), dtype=complex)
    for poly, word in normal_terms(e):
        val = _poly_eval(poly, x1, x2)
        if val == 0.0:
            continue
        acc = None
        for node in word:
            m = matrix_of(node)
            acc = m.copy() if acc is None else acc @ m
        if acc is None:
            acc = np.eye(dim, dtype=complex)
        total += val * acc
    return FiniteSectionOperator(w, total)


# ---------------------------------------------------------------------------
# contour

@dataclass(frozen=True)
class ContourSpec:
    """Parabolic arc around the non-negative real axis.

    lambda(v) = alpha v^2 - beta + i gamma v with v = sinh(u) on a uniform u
    grid (double-exponential decay of the integrand), traversed from the lower
    to the upper branch so that (1/2 pi i) contour-int e^{-lambda}/(s-lambda)
    equals e^{-s} for s >= 0.
    """

    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 4.0
    nodes: int = 96
    truncation: float | None = None

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0 or self.gamma <= 0:
            raise HeatError("contour parameters must be positive")
        if self.nodes < 8:
            raise HeatError("contour needs at least 8 nodes")

    def points(self):
        """(lambda nodes, quadrature weights) with weights absorbing
        dlambda/du, the trapezoid step and the 1/(2 pi i) prefactor."""
        U = self.truncation
        if U is None:
            U = math.asinh(math.sqrt(45.0 / self.alpha))
        u = np.linspace(-U, U, self.nodes)
        du = u[1] - u[0]
        v = np.sinh(u)
        lam = self.alpha * v * v - self.beta + 1j * self.gamma * v
        dlam = (2.0 * self.alpha * v + 1j * self.gamma) * np.cosh(u)
        wts = np.full(self.nodes, du)
        wts[0] *= 0.5
        wts[-1] *= 0.5
        return lam, wts * dlam / (2j * math.pi)

    def exp_values(self, svals) -> np.ndarray:
        """Quadrature estimate of e^{-s} for each s >= 0."""
        lam, wq = self.points()
        s = np.asarray(svals, dtype=float).reshape(-1, 1)
        return np.sum(wq * np.exp(-lam) / (s - lam), axis=1)

    def max_exp_error(self, svals) -> float:
        return float(np.max(np.abs(self.exp_values(svals) - np.exp(-np.asarray(svals)))))


def contour_gate(contour: ContourSpec, s_max: float, tol: float = 1e-8) -> float:
    """Validate the contour calculus against e^{-s} before use; raises on failure."""
    samples = np.concatenate([[0.0], np.geomspace(1e-3, max(s_max, 1.0), 40)])
    err = contour.max_exp_error(samples)
    if err > tol:
        raise HeatError(
            f"contour sanity gate failed: max |quad - exp| = {err:.3e} > {tol:.1e}"
        )
    return err


# ---------------------------------------------------------------------------
# heat coefficients by nested quadrature

@dataclass(frozen=True)
class HeatCoefficientResult:
    value: float
    tail: float
    contour_error: float
    imag_residual: float
    params: dict = field(default_factory=dict)


class _EigenEngine:
    """Shared spectral data of the k^2 section for fast repeated evaluation."""

    def __init__(self, ls: LaplaceSymbolData, window: BasisWindow):
        self.ls = ls
        self.window = window
        k2m = left_mult_matrix(ls.k2, window).entries
        k2m = (k2m + k2m.conj().T) / 2.0
        self.svals, self.basis = np.linalg.eigh(k2m)
        if self.svals.min() <= 0:
            raise HeatError("k^2 section is not positive definite")
        self.vac = np.conj(self.basis[window.vacuum, :])
        self._atoms: dict = {}

    def atom(self, elem: NcElement) -> np.ndarray:
        key = _elem_key(elem)
        if key not in self._atoms:
            m = left_mult_matrix(elem, self.window).entries
            self._atoms[key] = self.basis.conj().T @ m @ self.basis
        return self._atoms[key]

    def word_vacuum(self, word, rdiag: np.ndarray) -> np.ndarray:
        """w^H (product of word factors) w batched over the lambda axis.

        rdiag has shape (n_lambda, dim) and holds the resolvent diagonal in
        the eigenbasis; returns shape (n_lambda,).
        """
        V = np.broadcast_to(self.vac, rdiag.shape).copy()
        for node in reversed(word):
            if isinstance(node, Resolvent):
                V = V * rdiag
            else:
                V = V @ self.atom(node.elem).T
        return V @ np.conj(self.vac)


def _radial_rule(n: int, rmax: float):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * rmax * (x + 1.0), 0.5 * rmax * w


def heat_coefficient(n: int, ls: LaplaceSymbolData, contour: ContourSpec | None = None,
                     radial_nodes: int | None = None, rmax: float | None = None,
                     angular_nodes: int = 32, window_pad: int | None = None,
                     tail_eps: float = 1e-14, tail_tol: float = 1e-6,
                     element_trim: float | None = None) -> HeatCoefficientResult:
    """Heat trace coefficient by the double integral of the parametrix trace,
    lambda over the contour and xi over the sheared polar grid.

    n = 0 integrates the bare resolvent trace (angle-independent in the polar
    coordinates, where the quadratic form is exactly r^2); n = 2 integrates
    the second parametrix term, whose angular content is a trigonometric
    polynomial handled exactly by the angular rule.  The radial truncation
    tail of the n = 0 integrand is added in closed form from the spectral
    decay e^{-r^2 s_i} and reported.
    """
    if n not in (0, 2):
        raise HeatError("only the coefficients n = 0 and n = 2 are built")
    if radial_nodes is None:
        radial_nodes = 64 if n == 0 else 24
    if window_pad is None:
        window_pad = 8 if n == 0 else 4
    if element_trim is None and n == 2:
        element_trim = 1e-7
    if element_trim is not None:
        ls = trimmed_symbol_data(ls, element_trim)
    bw = ls.k2.support_bandwidth()
    engine = _EigenEngine(ls, BasisWindow(bw + window_pad))
    s = engine.svals
    smin = float(s.min())
    if rmax is None:
        rmax = math.sqrt(math.log(1.0 / tail_eps) / smin)
    if contour is None:
        contour = ContourSpec()
    cerr = contour_gate(contour, s_max=float(s.max()) * rmax * rmax)
    lam, wq = contour.points()
    rs, wr = _radial_rule(radial_nodes, rmax)
    im_tau = ls.tau.im
    w0sq = np.abs(engine.vac) ** 2

    if n == 0:
        total = 0.0 + 0.0j
        for r, wgt in zip(rs, wr):
            # trace of the resolvent summed over the contour, then radial weight
            denom = (r * r) * s[np.newaxis, :] - lam[:, np.newaxis]
            heat_diag = np.sum(wq[:, np.newaxis] * np.exp(-lam)[:, np.newaxis] / denom, axis=0)
            total += wgt * r * np.dot(heat_diag, w0sq)
        total *= 2.0 * math.pi / im_tau
        tail = math.pi / im_tau * float(np.sum(w0sq * np.exp(-rmax * rmax * s) / s))
        if tail > tail_tol:
            raise HeatError(
                f"radial tail bound {tail:.3e} exceeds tolerance {tail_tol:.1e}; "
                f"increase rmax"
            )
        value = total.real + tail
        return HeatCoefficientResult(
            value=value, tail=tail, contour_error=cerr,
            imag_residual=abs(total.imag),
            params={"radial_nodes": radial_nodes, "rmax": rmax,
                    "window": engine.window.bandwidth, "contour_nodes": contour.nodes},
        )

    b2 = parametrix_terms(ls, 2).terms[2]
    terms = normal_terms(b2)
    if not terms:
        return HeatCoefficientResult(
            value=0.0, tail=0.0, contour_error=cerr, imag_residual=0.0,
            params={"note": "second parametrix term vanishes identically"},
        )
    # angular rule: xi(r, a) = r * (cos a - (Re tau / Im tau) sin a, sin a / Im tau)
    tail_scale = math.exp(-rmax * rmax * smin)
    if tail_scale > tail_tol:
        raise HeatError(
            f"radial tail scale {tail_scale:.3e} exceeds tolerance {tail_tol:.1e}; "
            f"increase rmax"
        )
    angs = 2.0 * math.pi * np.arange(angular_nodes) / angular_nodes
    shear = ls.tau.re / im_tau
    dir1 = np.cos(angs) - shear * np.sin(angs)
    dir2 = np.sin(angs) / im_tau
    w_ang = 2.0 * math.pi / angular_nodes
    exp_lam = np.exp(-lam)
    total = 0.0 + 0.0j
    imag_acc = 0.0
    for r, wgt in zip(rs, wr):
        rdiag = 1.0 / ((r * r) * s[np.newaxis, :] - lam[:, np.newaxis])
        for poly, word in terms:
            # angular integral of the scalar polynomial factor at radius r
            pvals = np.zeros(angular_nodes, dtype=complex)
            for (e1, e2), pc in poly.items():
                pvals += pc * (r * dir1) ** e1 * (r * dir2) ** e2
            ang_int = w_ang * np.sum(pvals)
            if abs(ang_int) < 1e-300:
                continue
            vac = engine.word_vacuum(word, rdiag)
            lam_int = np.sum(wq * exp_lam * vac)
            total += wgt * r * ang_int * lam_int
    total /= im_tau
    imag_acc = abs(total.imag)
    return HeatCoefficientResult(
        value=total.real, tail=0.0, contour_error=cerr, imag_residual=imag_acc,
        params={"radial_nodes": radial_nodes, "rmax": rmax,
                "angular_nodes": angular_nodes, "terms": len(terms),
                "window": engine.window.bandwidth, "contour_nodes": contour.nodes},
    )


# ---------------------------------------------------------------------------
# parametrix identity at fixed lambda (graded composition residual)

def parametrix_residual(ls: LaplaceSymbolData, lam: complex, window: BasisWindow,
                        xi_samples=None, dist_tol: float = 1e-9) -> dict:
    """Magnitude of the graded composition of (b0+b1+b2) with the full symbol.

    For each relative order g = 0, -1, -2 the terms 1/l! d^l(b_j) delta^l(a_k)
    with k - 2 - j - |l| = g are evaluated at the sample points and summed; at
    order 0 the identity is subtracted.  Returns {order: max matrix entry}.
    """
    if xi_samples is None:
        xi_samples = [(1.3, 0.4), (-0.7, 1.1), (0.9, -1.2)]
    bs = parametrix_terms(ls, 2).terms
    out = {}
    dim = window.dim
    for g in (0, -1, -2):
        pieces = []
        for j in range(3):
            for k in range(3):
                lsum = k - 2 - j - g
                if lsum < 0:
                    continue
                for l1 in range(lsum + 1):
                    l2 = lsum - l1
                    ak = symbol_term_expr(ls, k)
                    for _ in range(l1):
                        ak = delta_expr(ak, 1, ls)
                    for _ in range(l2):
                        ak = delta_expr(ak, 2, ls)
                    pb = bs[j]
                    for _ in range(l1):
                        pb = xi_derivative_expr(pb, 1, ls)
                    for _ in range(l2):
                        pb = xi_derivative_expr(pb, 2, ls)
                    if is_zero(ak) or is_zero(pb):
                        continue
                    f = 1.0 / (math.factorial(l1) * math.factorial(l2))
                    pieces.append(Scaled(f, _prod([pb, ak])))
                    if k == 2 and l1 == 0 and l2 == 0:
                        # leading symbol carries -lambda
                        pieces.append(Scaled(-lam * f, pb))
        expr = _sum(pieces)
        worst = 0.0
        for xi in xi_samples:
            m = eval_expr(expr, xi, lam, window, ls, dist_tol).entries
            if g == 0:
                m = m - np.eye(dim)
            worst = max(worst, float(np.max(np.abs(m))))
        out[g] = worst
    return out


# ---------------------------------------------------------------------------
# heat trace fit

@dataclass(frozen=True)
class HeatFitResult:
    b0: float
    b2: float
    guard: float
    t_window: tuple
    n_points: int
    residual_rms: float


def heat_trace_fit(eigenvalues, t_grid=None, n_points: int = 40,
                   guard: bool = True, tail_tol: float = 1e-12) -> HeatFitResult:
    """Fit t * sum e^{-t lambda_j} to b0 + b2 t (+ guard t^2) on small t.

    Only t with e^{-t lambda_max} < tail_tol are admissible (larger windows
    would see the missing spectral tail); if the provided grid has no
    admissible points the fit fails loudly.
    """
    eigs = np.sort(np.asarray(eigenvalues, dtype=float))
    lam_max = eigs[-1]
    t_min = math.log(1.0 / tail_tol) / lam_max
    if t_grid is None:
        t_grid = np.geomspace(t_min * 1.02, min(0.2, 60.0 * t_min), n_points)
    t_grid = np.asarray(t_grid, dtype=float)
    admissible = t_grid[np.exp(-t_grid * lam_max) < tail_tol]
    if admissible.size < 3:
        raise HeatError(
            f"no admissible t-window: need t >= {t_min:.3e}; spectrum window too small"
        )
    y = admissible * np.array([np.sum(np.exp(-t * eigs)) for t in admissible])
    cols = [np.ones_like(admissible), admissible]
    if guard:
        cols.append(admissible ** 2)
    design = np.stack(cols, axis=1)
    coef, _, _, _ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    rms = float(np.sqrt(np.mean(resid ** 2)))
    return HeatFitResult(
        b0=float(coef[0]),
        b2=float(coef[1]),
        guard=float(coef[2]) if guard else 0.0,
        t_window=(float(admissible[0]), float(admissible[-1])),
        n_points=int(admissible.size),
        residual_rms=rms,
    )
