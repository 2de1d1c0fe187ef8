"""Exact calculus of classical pseudodifferential symbols on the torus algebra.

A classical symbol is stored layer by layer: homogeneity degree d maps to an
angular spectrum, winding number w maps to an algebra element, and evaluation
at xi = r (cos a, sin a) means sum_d r^d sum_w e^{i w a} coef(d, w).  In this
representation homogeneity is structural, the xi derivatives act exactly on
(degree, winding) pairs, and the noncommutative residue is a single read-out
of the winding-zero coefficient at degree -2.
"""

from __future__ import annotations

import cmath
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .algebra import (
    AlgebraError,
    DeformationAngle,
    ModuliPoint,
    NcElement,
    adjoint,
    add,
    delta,
    from_json_dict,
    make_monomial,
    mul,
    scale,
    to_json_dict,
    trace_t,
    unit,
    zero,
)
from .gns import BasisWindow, FiniteSectionOperator, quadratic_form_values

DEFAULT_WINDING_CUTOFF = 32
# default depth below the leading term retained by compositions
DEFAULT_EXTRA_LAYERS = 3


class SymbolError(ValueError):
    """Invalid symbol data or unsupported symbol operation."""


class OriginRegularization(UserWarning):
    """A negative-order homogeneous layer was dropped at xi = 0."""


def _layer_add(layers: dict, d: int, w: int, elem: NcElement):
    if not elem.coeffs:
        return
    spectrum = layers.setdefault(d, {})
    if w in spectrum:
        spectrum[w] = add(spectrum[w], elem)
        if not spectrum[w].coeffs:
            del spectrum[w]
    else:
        spectrum[w] = elem
    if not spectrum:
        layers.pop(d, None)


class GradedSymbol:
    """Classical symbol graded by homogeneity degree and angular winding.

    layers: {degree d: {winding w: NcElement}}; absent entries are zero.
    Retained degrees run from top_order down to top_order - depth + 1.  An
    optional exact evaluator (callable (x1, x2) -> NcElement) represents the
    full symbol when one is available in closed form; it takes precedence in
    pointwise evaluation, the layers being its classical expansion.
    """

    __slots__ = ("angle", "top_order", "depth", "layers", "winding_cutoff",
                 "exact_eval", "diagnostics")

    def __init__(self, angle: DeformationAngle, top_order: int, depth: int,
                 layers: dict, winding_cutoff: int = DEFAULT_WINDING_CUTOFF,
                 exact_eval=None, diagnostics: dict | None = None):
        if depth < 1:
            raise SymbolError("depth must be >= 1")
        lo = top_order - depth + 1
        clean: dict = {}
        for d, spectrum in layers.items():
            if not lo <= d <= top_order:
                raise SymbolError(
                    f"layer degree {d} outside retained range [{lo}, {top_order}]"
                )
            for w, elem in spectrum.items():
                if abs(w) > winding_cutoff:
                    raise SymbolError(f"winding {w} beyond cutoff {winding_cutoff}")
                _layer_add(clean, d, w, elem)
        self.angle = angle
        self.top_order = int(top_order)
        self.depth = int(depth)
        self.layers = clean
        self.winding_cutoff = int(winding_cutoff)
        self.exact_eval = exact_eval
        self.diagnostics = dict(diagnostics or {})

    def layer(self, d: int) -> dict:
        return self.layers.get(d, {})

    def coefficient(self, d: int, w: int) -> NcElement:
        return self.layers.get(d, {}).get(w, zero(self.angle))

    def eval_at(self, x1: float, x2: float) -> NcElement:
        """Pointwise value as an algebra element.

        Negative-order homogeneous layers are singular at the origin; there
        the exact evaluator is used when attached, otherwise those layers are
        treated as zero and a warning is emitted.
        """
        if self.exact_eval is not None:
            return self.exact_eval(x1, x2)
        r = math.hypot(x1, x2)
        if r == 0.0:
            out = self.coefficient(0, 0)
            dropped = [d for d in self.layers if d < 0]
            if dropped:
                warnings.warn(
                    "negative-order layers treated as 0 at xi = 0 "
                    f"(degrees {sorted(dropped)})",
                    OriginRegularization,
                    stacklevel=2,
                )
            return out
        ang = math.atan2(x2, x1)
        out = zero(self.angle)
        for d, spectrum in self.layers.items():
            rd = r ** d
            for w, elem in spectrum.items():
                out = add(out, scale(rd * cmath.exp(1j * w * ang), elem))
        return out

    def star(self) -> "GradedSymbol":
        """Symbol-level star: winding reflection with coefficient adjoints."""
        out: dict = {}
        for d, spectrum in self.layers.items():
            for w, elem in spectrum.items():
                _layer_add(out, d, -w, adjoint(elem))
        return GradedSymbol(self.angle, self.top_order, self.depth, out,
                            self.winding_cutoff)

    def scaled(self, c: complex) -> "GradedSymbol":
        out = {
            d: {w: scale(c, e) for w, e in spec.items()}
            for d, spec in self.layers.items()
        }
        return GradedSymbol(self.angle, self.top_order, self.depth, out,
                            self.winding_cutoff, self.exact_eval)

    def __repr__(self):
        degs = sorted(self.layers, reverse=True)
        return (f"GradedSymbol(top={self.top_order}, depth={self.depth}, "
                f"degrees={degs})")


@dataclass
class PolySymbol:
    """Polynomial symbol of a differential operator: {(j1, j2): coefficient}."""

    angle: DeformationAngle
    monomials: dict

    def __post_init__(self):
        self.monomials = {
            (int(j1), int(j2)): c
            for (j1, j2), c in self.monomials.items()
            if c.coeffs
        }
        for j1, j2 in self.monomials:
            if j1 < 0 or j2 < 0:
                raise SymbolError("polynomial exponents must be non-negative")

    @property
    def order(self) -> int:
        return max((j1 + j2 for j1, j2 in self.monomials), default=0)

    def eval_at(self, x1: float, x2: float) -> NcElement:
        out = zero(self.angle)
        for (j1, j2), c in self.monomials.items():
            out = add(out, scale((x1 ** j1) * (x2 ** j2), c))
        return out

    def to_graded(self, winding_cutoff: int = DEFAULT_WINDING_CUTOFF) -> GradedSymbol:
        """Exact conversion: a xi-monomial of degree d fills layer d with
        windings |w| <= d of matching parity."""
        layers: dict = {}
        for (j1, j2), c in self.monomials.items():
            wind = {0: 1.0 + 0.0j}
            for _ in range(j1):
                wind = _winding_mul(wind, {1: 0.5, -1: 0.5})
            for _ in range(j2):
                wind = _winding_mul(wind, {1: -0.5j, -1: 0.5j})
            for w, amp in wind.items():
                if amp != 0.0:
                    _layer_add(layers, j1 + j2, w, scale(amp, c))
        top = self.order
        return GradedSymbol(self.angle, top, top + 1, layers, winding_cutoff)


def _winding_mul(a: dict, b: dict) -> dict:
    out: dict = {}
    for wa, ca in a.items():
        for wb, cb in b.items():
            out[wa + wb] = out.get(wa + wb, 0.0) + ca * cb
    return out


def poly_from_coeffs(angle: DeformationAngle, entries: dict) -> PolySymbol:
    """entries maps (j1, j2) to NcElement coefficients."""
    return PolySymbol(angle, dict(entries))


def flat_laplacian_symbol(tau: ModuliPoint, angle: DeformationAngle) -> PolySymbol:
    """Symbol of the flat Laplacian: Q(xi) with scalar coefficients."""
    one = unit(angle)
    return PolySymbol(angle, {
        (2, 0): one,
        (1, 1): scale(2.0 * tau.re, one),
        (0, 2): scale(tau.abs2, one),
    })


# ---------------------------------------------------------------------------
# xi derivatives

def xi_derivative(s: GradedSymbol, axis: int) -> GradedSymbol:
    """Exact derivative on r^d e^{i w a}:

    d/dxi1 -> r^{d-1} [ (d-w)/2 e^{i(w+1)a} + (d+w)/2 e^{i(w-1)a} ]
    d/dxi2 -> same winding shifts with factors -i and +i respectively.
    """
    if axis not in (1, 2):
        raise SymbolError("axis must be 1 or 2")
    up = 1.0 if axis == 1 else -1.0j
    down = 1.0 if axis == 1 else 1.0j
    layers: dict = {}
    lost = 0.0
    W = s.winding_cutoff
    for d, spectrum in s.layers.items():
        for w, elem in spectrum.items():
            cu = up * (d - w) / 2.0
            cdn = down * (d + w) / 2.0
            for wn, cc in ((w + 1, cu), (w - 1, cdn)):
                if cc == 0.0:
                    continue
                if abs(wn) > W:
                    lost += abs(cc) * elem.l1_norm()
                    continue
                _layer_add(layers, d - 1, wn, scale(cc, elem))
    out = GradedSymbol(s.angle, s.top_order - 1, s.depth, layers, W)
    if lost > 0.0:
        out.diagnostics["discarded_winding_mass"] = lost
    return out


def poly_xi_derivative(p: PolySymbol, axis: int) -> PolySymbol:
    out: dict = {}
    for (j1, j2), c in p.monomials.items():
        if axis == 1 and j1 > 0:
            key = (j1 - 1, j2)
            out[key] = add(out[key], scale(j1, c)) if key in out else scale(j1, c)
        if axis == 2 and j2 > 0:
            key = (j1, j2 - 1)
            out[key] = add(out[key], scale(j2, c)) if key in out else scale(j2, c)
    return PolySymbol(p.angle, out)


def _poly_delta(p: PolySymbol, axis: int) -> PolySymbol:
    return PolySymbol(p.angle, {k: delta(axis, c) for k, c in p.monomials.items()})


def _graded_delta(s: GradedSymbol, axis: int) -> GradedSymbol:
    layers = {
        d: {w: delta(axis, e) for w, e in spec.items()}
        for d, spec in s.layers.items()
    }
    return GradedSymbol(s.angle, s.top_order, s.depth, layers, s.winding_cutoff)


# ---------------------------------------------------------------------------
# composition and adjoint

def compose_poly(p: PolySymbol, q: PolySymbol) -> PolySymbol:
    """Exact product symbol of two differential operators:
    sum_l (1/l!) d_xi^l(p) delta^l(q); the sum terminates."""
    if p.angle != q.angle:
        raise SymbolError("deformation angles do not match")
    out: dict = {}
    max1 = max((j1 for j1, _ in p.monomials), default=0)
    max2 = max((j2 for _, j2 in p.monomials), default=0)
    for l1 in range(max1 + 1):
        for l2 in range(max2 + 1):
            pd = p
            for _ in range(l1):
                pd = poly_xi_derivative(pd, 1)
            for _ in range(l2):
                pd = poly_xi_derivative(pd, 2)
            if not pd.monomials:
                continue
            qd = q
            for _ in range(l1):
                qd = _poly_delta(qd, 1)
            for _ in range(l2):
                qd = _poly_delta(qd, 2)
            f = 1.0 / (math.factorial(l1) * math.factorial(l2))
            for (a1, a2), ca in pd.monomials.items():
                for (b1, b2), cb in qd.monomials.items():
                    key = (a1 + b1, a2 + b2)
                    term = scale(f, mul(ca, cb))
                    out[key] = add(out[key], term) if key in out else term
    return PolySymbol(p.angle, out)


def compose(p: GradedSymbol, q: GradedSymbol, order_cutoff: int | None = None) -> GradedSymbol:
    """Asymptotic product of classical symbols, retaining layers >= order_cutoff.

    Terms of the expansion sum_l (1/l!) d_xi^l(p) delta^l(q) land at degree
    d_p - |l| + d_q; the default cutoff keeps DEFAULT_EXTRA_LAYERS layers below
    the leading degree.  Winding overflow beyond the cutoff is discarded and
    its l1 mass reported in diagnostics.
    """
    if p.angle != q.angle:
        raise SymbolError("deformation angles do not match")
    top = p.top_order + q.top_order
    if order_cutoff is None:
        order_cutoff = top - DEFAULT_EXTRA_LAYERS
    if order_cutoff > top:
        raise SymbolError("order_cutoff above the top order of the product")
    W = max(p.winding_cutoff, q.winding_cutoff)
    layers: dict = {}
    lost = 0.0
    max_l = top - order_cutoff
    for l1 in range(max_l + 1):
        for l2 in range(max_l + 1 - l1):
            pd = p
            for _ in range(l1):
                pd = xi_derivative(pd, 1)
            for _ in range(l2):
                pd = xi_derivative(pd, 2)
            lost += pd.diagnostics.get("discarded_winding_mass", 0.0)
            if not pd.layers:
                continue
            qd = q
            for _ in range(l1):
                qd = _graded_delta(qd, 1)
            for _ in range(l2):
                qd = _graded_delta(qd, 2)
            f = 1.0 / (math.factorial(l1) * math.factorial(l2))
            for dp, pspec in pd.layers.items():
                for dq, qspec in qd.layers.items():
                    dtot = dp + dq
                    if dtot < order_cutoff:
                        continue
                    for wp, ep in pspec.items():
                        for wq, eq in qspec.items():
                            term = scale(f, mul(ep, eq))
                            if abs(wp + wq) > W:
                                lost += term.l1_norm()
                                continue
                            _layer_add(layers, dtot, wp + wq, term)
    diag = {"discarded_winding_mass": lost} if lost > 0.0 else {}
    return GradedSymbol(p.angle, top, top - order_cutoff + 1, layers, W,
                        diagnostics=diag)


def adjoint_symbol(p: GradedSymbol, order_cutoff: int | None = None) -> GradedSymbol:
    """Truncated adjoint expansion sum_l (1/l!) d_xi^l delta^l (p*)."""
    if order_cutoff is None:
        order_cutoff = p.top_order - DEFAULT_EXTRA_LAYERS
    if order_cutoff > p.top_order:
        raise SymbolError("order_cutoff above the symbol's top order")
    starred = p.star()
    layers: dict = {}
    lost = 0.0
    max_l = p.top_order - order_cutoff
    for l1 in range(max_l + 1):
        for l2 in range(max_l + 1 - l1):
            term = starred
            for _ in range(l1):
                term = _graded_delta(term, 1)
            for _ in range(l2):
                term = _graded_delta(term, 2)
            for _ in range(l1):
                term = xi_derivative(term, 1)
            for _ in range(l2):
                term = xi_derivative(term, 2)
            lost += term.diagnostics.get("discarded_winding_mass", 0.0)
            f = 1.0 / (math.factorial(l1) * math.factorial(l2))
            for d, spectrum in term.layers.items():
                if d < order_cutoff:
                    continue
                for w, elem in spectrum.items():
                    _layer_add(layers, d, w, scale(f, elem))
    diag = {"discarded_winding_mass": lost} if lost > 0.0 else {}
    return GradedSymbol(p.angle, p.top_order, p.top_order - order_cutoff + 1,
                        layers, p.winding_cutoff, diagnostics=diag)


def adjoint_poly(p: PolySymbol) -> PolySymbol:
    """Exact adjoint symbol of a differential operator."""
    starred = PolySymbol(p.angle, {k: adjoint(c) for k, c in p.monomials.items()})
    out: dict = {}
    max1 = max((j1 for j1, _ in starred.monomials), default=0)
    max2 = max((j2 for _, j2 in starred.monomials), default=0)
    for l1 in range(max1 + 1):
        for l2 in range(max2 + 1):
            term = starred
            for _ in range(l1):
                term = _poly_delta(term, 1)
            for _ in range(l2):
                term = _poly_delta(term, 2)
            for _ in range(l1):
                term = poly_xi_derivative(term, 1)
            for _ in range(l2):
                term = poly_xi_derivative(term, 2)
            f = 1.0 / (math.factorial(l1) * math.factorial(l2))
            for key, c in term.monomials.items():
                sc = scale(f, c)
                out[key] = add(out[key], sc) if key in out else sc
    return PolySymbol(p.angle, out)


# ---------------------------------------------------------------------------
# operator action

def apply_op(p, a: NcElement) -> NcElement:
    """Apply the pseudodifferential operator of p to an algebra element.

    On monomials the action is diagonal in the Fourier index: the operator
    sends U^m V^n to p(m, n) U^m V^n, extended linearly.
    """
    out = zero(a.angle)
    for (m, n), c in a.coeffs.items():
        val = p.eval_at(float(m), float(n))
        out = add(out, scale(c, mul(val, make_monomial(m, n, 1.0, a.angle))))
    return out


def finite_section_of_op(p, w: BasisWindow) -> FiniteSectionOperator:
    """Column (m,n) holds the coefficients of the operator applied to U^m V^n,
    clipped to the window."""
    angle = p.angle
    theta = angle.theta
    N = w.bandwidth
    out = np.zeros((w.dim, w.dim), dtype=complex)
    regularized = 0
    for col in range(w.dim):
        m, n = w.pair_of(col)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", OriginRegularization)
            val = p.eval_at(float(m), float(n))
        regularized += sum(
            1 for c in caught if issubclass(c.category, OriginRegularization)
        )
        for (r, s), c in val.coeffs.items():
            tm, tn = m + r, n + s
            if abs(tm) <= N and abs(tn) <= N:
                out[w.index_of(tm, tn), col] = c * cmath.exp(
                    2j * math.pi * theta * s * m
                )
    if regularized:
        warnings.warn(
            f"{regularized} column(s) used the origin regularization policy",
            OriginRegularization,
            stacklevel=2,
        )
    return FiniteSectionOperator(w, out)


# ---------------------------------------------------------------------------
# resolvent classicalization and the residue

def classicalize_resolvent(c0: float, tau: ModuliPoint, depth: int,
                           angle: DeformationAngle,
                           winding_cutoff: int = DEFAULT_WINDING_CUTOFF,
                           n_angular: int = 2048,
                           insufficiency_tol: float = 1e-9) -> GradedSymbol:
    """Classical expansion of (c0 + flat Laplacian)^{-1}.

    Layer j sits at degree -2-2j and equals (-c0)^j Q(xi)^{-1-j}, expanded in
    angular windings by FFT projection on the unit circle (a single winding
    when tau = i).  The trailing angular mass beyond the winding cutoff is
    recorded in diagnostics and warned about above insufficiency_tol.
    """
    if depth < 1:
        raise SymbolError("depth must be >= 1")
    if c0 <= 0:
        raise SymbolError("c0 must be positive")
    phis = 2.0 * math.pi * np.arange(n_angular) / n_angular
    q = quadratic_form_values(tau, np.cos(phis), np.sin(phis))
    one = unit(angle)
    layers: dict = {}
    lost = 0.0
    W = winding_cutoff
    for j in range(depth):
        vals = ((-c0) ** j) * q ** (-1.0 - j)
        fc = np.fft.fft(vals) / n_angular
        tiny = 1e-15 * float(np.max(np.abs(fc)))
        for w in range(-n_angular // 2 + 1, n_angular // 2 + 1):
            c = complex(fc[w % n_angular])
            if abs(c) <= tiny:
                continue
            if abs(w) > W:
                lost += abs(c)
                continue
            _layer_add(layers, -2 - 2 * j, w, scale(c, one))
    if lost > insufficiency_tol:
        warnings.warn(
            f"angular winding cutoff {W} insufficient: discarded mass {lost:.3e}",
            UserWarning,
            stacklevel=2,
        )
    qq = [1.0, 2.0 * tau.re, tau.abs2]

    def exact(x1: float, x2: float) -> NcElement:
        qval = qq[0] * x1 * x1 + qq[1] * x1 * x2 + qq[2] * x2 * x2
        return scale(1.0 / (qval + c0), one)

    diag = {"discarded_winding_mass": lost} if lost > 0.0 else {}
    return GradedSymbol(angle, -2, 2 * depth - 1, layers, W,
                        exact_eval=exact, diagnostics=diag)


def residue(p: GradedSymbol) -> complex:
    """Noncommutative residue: the circle integral of the trace of the
    degree -2 layer, i.e. 2 pi times the trace of its winding-zero part."""
    return 2.0 * math.pi * trace_t(p.coefficient(-2, 0))


# ---------------------------------------------------------------------------
# ellipticity

@dataclass(frozen=True)
class EllipticityReport:
    verdict: str
    c_empirical: float
    min_singular: float
    n_directions: int
    window: int


def ellipticity_check(p: GradedSymbol, grid: int = 64, window: int = 6,
                      tol: float = 1e-8) -> EllipticityReport:
    """Sample the principal layer over directions and test invertibility.

    For each sampled direction the finite section of the principal value is
    assembled; the smallest singular value decides invertibility and the
    empirical ellipticity constant is sup over directions of the inverse norm
    scaled by (1+|xi|)^{top order} on the unit circle.
    """
    w = BasisWindow(window)
    spectrum = p.layer(p.top_order)
    smin_all = math.inf
    c_emp = 0.0
    for idx in range(grid):
        ang = 2.0 * math.pi * idx / grid
        val = zero(p.angle)
        for wind, elem in spectrum.items():
            val = add(val, scale(cmath.exp(1j * wind * ang), elem))
        if not val.coeffs:
            smin_all = 0.0
            break
        mat = np.zeros((w.dim, w.dim), dtype=complex)
        theta = p.angle.theta
        for (r, s), c in val.coeffs.items():
            mm, nn = w.index_grids()
            tm, tn = mm + r, nn + s
            ok = (np.abs(tm) <= window) & (np.abs(tn) <= window)
            rows = (tm[ok] + window) * w.side + (tn[ok] + window)
            mat[rows, np.nonzero(ok)[0]] += c * np.exp(
                2j * math.pi * theta * s * mm[ok]
            )
        smin = float(np.linalg.svd(mat, compute_uv=False)[-1])
        smin_all = min(smin_all, smin)
        if smin > 0.0:
            c_emp = max(c_emp, (2.0 ** p.top_order) / smin)
    if smin_all > tol:
        verdict = "elliptic"
    elif smin_all < 1e-12:
        verdict = "degenerate"
    else:
        verdict = "inconclusive"
    return EllipticityReport(verdict, c_emp, smin_all, grid, window)


# ---------------------------------------------------------------------------
# serialization and pretty printing

def symbol_to_json_dict(p: GradedSymbol) -> dict:
    layers = {
        str(d): {str(w): to_json_dict(e) for w, e in sorted(spec.items())}
        for d, spec in sorted(p.layers.items())
    }
    return {
        "top_order": p.top_order,
        "depth": p.depth,
        "winding_cutoff": p.winding_cutoff,
        "theta": p.angle.theta,
        "layers": layers,
    }


def symbol_from_json_dict(d: dict) -> GradedSymbol:
    angle = DeformationAngle(float(d["theta"]))
    layers: dict = {}
    for ds, spec in d["layers"].items():
        for ws, ej in spec.items():
            _layer_add(layers, int(ds), int(ws), from_json_dict(ej))
    return GradedSymbol(angle, int(d["top_order"]), int(d["depth"]), layers,
                        int(d.get("winding_cutoff", DEFAULT_WINDING_CUTOFF)))


def symbol_dumps(p: GradedSymbol) -> str:
    return json.dumps(symbol_to_json_dict(p), sort_keys=True)


def symbol_loads(s: str) -> GradedSymbol:
    return symbol_from_json_dict(json.loads(s))


def format_symbol(p: GradedSymbol, max_terms: int = 6) -> str:
    """Human-readable rendering of the layers as xi-expressions."""
    lines = [f"classical symbol, order {p.top_order}, depth {p.depth}"]
    for d in sorted(p.layers, reverse=True):
        parts = []
        for w in sorted(p.layer(d)):
            elem = p.layer(d)[w]
            coeffs = sorted(elem.coeffs.items())
            body = " + ".join(
                f"({c:.6g})U^{m}V^{n}" for (m, n), c in coeffs[:max_terms]
            )
            if len(coeffs) > max_terms:
                body += f" + ... [{len(coeffs)} terms]"
            angular = "" if w == 0 else f" e^{{{w}i phi}}"
            parts.append(f"[{body}]{angular}")
        lines.append(f"  r^{d} * ( " + " + ".join(parts) + " )")
    return "\n".join(lines)
