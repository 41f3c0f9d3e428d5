"""Polynomial phase-space symbols in complex oscillator coordinates.

A symbol is a finite sum ``sum c[a, b] z**a * conj(z)**b`` with
``z_j = x_j + 1j * xi_j``.  In these coordinates the oscillator flows act
diagonally (``z_j -> exp(-1j t) z_j``), so averaging, flow composition and
the cohomological equation reduce to bookkeeping on the exponents.

Bracket convention: ``{f, g} = sum_j d_xi f * d_x g - d_x f * d_xi g``, so
that ``{H, f}`` is the derivative of ``f`` along the flow of ``H`` and
``{xi_1, x_1} = 1``.  With ``d_x = d_z + d_zbar`` and
``d_xi = 1j (d_z - d_zbar)`` this becomes
``{f, g} = 2j * sum_j (d_z f * d_zbar g - d_zbar f * d_z g)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Iterable, Mapping

import numpy as np

from .frequency import FrequencySpec, ResonanceModule, resonance_module

Key = tuple[tuple[int, ...], tuple[int, ...]]

PRUNE = 1e-15


class SymbolError(ValueError):
    pass


class CohomologicalObstruction(SymbolError):
    """The right-hand side has a nonzero resonant part."""


def _clean(terms: Mapping[Key, complex]) -> dict[Key, complex]:
    return {k: complex(c) for k, c in terms.items() if abs(c) > PRUNE}


class WeylSymbol:
    """Finite combination of monomials ``z^a zbar^b`` in ``d`` planes."""

    def __init__(self, d: int, terms: Mapping[Key, complex] | None = None):
        self.d = int(d)
        self.terms = _clean(terms or {})
        for a, b in self.terms:
            if len(a) != self.d or len(b) != self.d:
                raise SymbolError("exponent of wrong length")
            if min(a + b, default=0) < 0:
                raise SymbolError("negative exponent")

    # construction

    @classmethod
    def zero(cls, d: int) -> "WeylSymbol":
        return cls(d)

    @classmethod
    def constant(cls, c: complex, d: int) -> "WeylSymbol":
        zero = (0,) * d
        return cls(d, {(zero, zero): c})

    @classmethod
    def monomial(cls, a, b, c: complex = 1.0) -> "WeylSymbol":
        a, b = tuple(int(i) for i in a), tuple(int(i) for i in b)
        return cls(len(a), {(a, b): c})

    @classmethod
    def z(cls, j: int, d: int) -> "WeylSymbol":
        e = tuple(int(i == j) for i in range(d))
        return cls.monomial(e, (0,) * d)

    @classmethod
    def zbar(cls, j: int, d: int) -> "WeylSymbol":
        e = tuple(int(i == j) for i in range(d))
        return cls.monomial((0,) * d, e)

    @classmethod
    def x(cls, j: int, d: int) -> "WeylSymbol":
        return 0.5 * (cls.z(j, d) + cls.zbar(j, d))

    @classmethod
    def xi(cls, j: int, d: int) -> "WeylSymbol":
        return -0.5j * (cls.z(j, d) - cls.zbar(j, d))

    @classmethod
    def action(cls, j: int, d: int) -> "WeylSymbol":
        """``H_j = (x_j**2 + xi_j**2) / 2 = |z_j|**2 / 2``."""
        e = tuple(int(i == j) for i in range(d))
        return cls.monomial(e, e, 0.5)

    @classmethod
    def harmonic(cls, omega) -> "WeylSymbol":
        omega = np.asarray(omega, dtype=float)
        d = len(omega)
        out = cls.zero(d)
        for j, w in enumerate(omega):
            out = out + float(w) * cls.action(j, d)
        return out

    @classmethod
    def from_xxi(cls, d: int, poly: Mapping[tuple, complex]) -> "WeylSymbol":
        """Build from ``{(p, q): c}`` meaning ``c * x**p * xi**q``."""
        out = cls.zero(d)
        xs = [cls.x(j, d) for j in range(d)]
        xis = [cls.xi(j, d) for j in range(d)]
        for (p, q), c in poly.items():
            term = cls.constant(c, d)
            for j in range(d):
                for _ in range(p[j]):
                    term = term * xs[j]
                for _ in range(q[j]):
                    term = term * xis[j]
            out = out + term
        return out

    # algebra

    def _coerce(self, other) -> "WeylSymbol":
        if isinstance(other, WeylSymbol):
            if other.d != self.d:
                raise SymbolError("dimension mismatch")
            return other
        if np.isscalar(other):
            return WeylSymbol.constant(complex(other), self.d)
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        terms = dict(self.terms)
        for k, c in other.terms.items():
            terms[k] = terms.get(k, 0) + c
        return WeylSymbol(self.d, terms)

    __radd__ = __add__

    def __neg__(self):
        return WeylSymbol(self.d, {k: -c for k, c in self.terms.items()})

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if np.isscalar(other):
            return WeylSymbol(self.d, {k: c * other for k, c in self.terms.items()})
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        terms: dict[Key, complex] = {}
        for (a1, b1), c1 in self.terms.items():
            for (a2, b2), c2 in other.terms.items():
                key = (tuple(i + j for i, j in zip(a1, a2)), tuple(i + j for i, j in zip(b1, b2)))
                terms[key] = terms.get(key, 0) + c1 * c2
        return WeylSymbol(self.d, terms)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self * (1.0 / other)

    def __pow__(self, n: int):
        out = WeylSymbol.constant(1.0, self.d)
        for _ in range(int(n)):
            out = out * self
        return out

    def conj(self) -> "WeylSymbol":
        return WeylSymbol(self.d, {(b, a): np.conj(c) for (a, b), c in self.terms.items()})

    def real_part(self) -> "WeylSymbol":
        return 0.5 * (self + self.conj())

    def is_real(self, tol: float = 1e-13) -> bool:
        return (self - self.conj()).max_coeff() <= tol

    def max_coeff(self) -> float:
        return max((abs(c) for c in self.terms.values()), default=0.0)

    @property
    def max_degree(self) -> int:
        return max((sum(a) + sum(b) for a, b in self.terms), default=0)

    def is_zero(self, tol: float = 0.0) -> bool:
        return self.max_coeff() <= tol

    def __eq__(self, other):
        if not isinstance(other, WeylSymbol):
            return NotImplemented
        return self.d == other.d and (self - other).is_zero()

    def __hash__(self):
        return hash((self.d, tuple(sorted(self.terms.items(), key=lambda kv: kv[0]))))

    def __repr__(self):
        parts = [f"{c:.6g}*z^{a}zb^{b}" for (a, b), c in sorted(self.terms.items())]
        return f"WeylSymbol(d={self.d}: " + (" + ".join(parts) or "0") + ")"

    # derivatives

    def d_z(self, j: int) -> "WeylSymbol":
        terms = {}
        for (a, b), c in self.terms.items():
            if a[j]:
                na = a[:j] + (a[j] - 1,) + a[j + 1 :]
                terms[(na, b)] = terms.get((na, b), 0) + c * a[j]
        return WeylSymbol(self.d, terms)

    def d_zbar(self, j: int) -> "WeylSymbol":
        terms = {}
        for (a, b), c in self.terms.items():
            if b[j]:
                nb = b[:j] + (b[j] - 1,) + b[j + 1 :]
                terms[(a, nb)] = terms.get((a, nb), 0) + c * b[j]
        return WeylSymbol(self.d, terms)

    def d_x(self, j: int) -> "WeylSymbol":
        return self.d_z(j) + self.d_zbar(j)

    def d_xi(self, j: int) -> "WeylSymbol":
        return 1j * (self.d_z(j) - self.d_zbar(j))

    @cached_property
    def _gradient_symbols(self) -> list["WeylSymbol"]:
        return [self.d_x(j) for j in range(self.d)] + [self.d_xi(j) for j in range(self.d)]

    @cached_property
    def _hessian_symbols(self) -> list[list["WeylSymbol"]]:
        grads = self._gradient_symbols
        rows = []
        for g in grads:
            rows.append([g.d_x(j) for j in range(self.d)] + [g.d_xi(j) for j in range(self.d)])
        return rows

    @cached_property
    def _arrays(self):
        keys = list(self.terms)
        A = np.array([a for a, _ in keys], dtype=np.int64).reshape(len(keys), self.d)
        B = np.array([b for _, b in keys], dtype=np.int64).reshape(len(keys), self.d)
        C = np.array([self.terms[k] for k in keys], dtype=complex)
        return A, B, C

    # evaluation

    def evaluate(self, points) -> np.ndarray | complex:
        """Evaluate at phase points given as arrays ``(..., 2d)`` = (x, xi)."""
        pts = np.asarray(points, dtype=float)
        if pts.shape[-1] != 2 * self.d:
            raise SymbolError("phase point has wrong length")
        A, B, C = self._arrays
        if len(C) == 0:
            out = np.zeros(pts.shape[:-1], dtype=complex)
            return out if out.ndim else complex(out)
        zz = pts[..., : self.d] + 1j * pts[..., self.d :]
        zz = zz[..., None, :]
        mon = np.prod(zz ** A * np.conj(zz) ** B, axis=-1)
        out = mon @ C
        return out if np.ndim(out) else complex(out)

    def __call__(self, points):
        return self.evaluate(points)

    def evaluate_real(self, points):
        return np.real(self.evaluate(points))

    def gradient(self, points) -> np.ndarray:
        """Real gradient ``(d_x, d_xi)`` at points ``(..., 2d)``."""
        vals = [np.real(g.evaluate(points)) for g in self._gradient_symbols]
        return np.stack(vals, axis=-1)

    def hessian(self, points) -> np.ndarray:
        vals = [[np.real(h.evaluate(points)) for h in row] for row in self._hessian_symbols]
        return np.stack([np.stack(r, axis=-1) for r in vals], axis=-2)

    # serialization

    def to_json(self) -> dict:
        items = []
        for (a, b), c in sorted(self.terms.items()):
            items.append({"a": list(a), "b": list(b), "re": float(np.real(c)), "im": float(np.imag(c))})
        return {"d": self.d, "terms": items}

    @classmethod
    def from_json(cls, data) -> "WeylSymbol":
        if isinstance(data, str):
            data = json.loads(data)
        items = data["terms"]
        if not items and "d" not in data:
            raise SymbolError("cannot infer dimension of empty symbol")
        d = int(data.get("d", len(items[0]["a"]) if items else 0))
        terms: dict[Key, complex] = {}
        for it in items:
            key = (tuple(it["a"]), tuple(it["b"]))
            terms[key] = terms.get(key, 0) + complex(it.get("re", 0.0), it.get("im", 0.0))
        return cls(d, terms)


def evaluate(s: WeylSymbol, z) -> complex:
    return s.evaluate(z)


def poisson(f: WeylSymbol, g: WeylSymbol) -> WeylSymbol:
    if f.d != g.d:
        raise SymbolError("dimension mismatch")
    out = WeylSymbol.zero(f.d)
    for j in range(f.d):
        out = out + 2j * (f.d_z(j) * g.d_zbar(j) - f.d_zbar(j) * g.d_z(j))
    return out


def flow_compose(s: WeylSymbol, tau) -> WeylSymbol:
    """``s`` composed with the oscillator multiflow at angles ``tau``."""
    tau = np.asarray(tau, dtype=float)
    terms = {}
    for (a, b), c in s.terms.items():
        k = np.subtract(a, b)
        terms[(a, b)] = c * np.exp(-1j * float(k @ tau))
    return WeylSymbol(s.d, terms)


def _module(rm) -> ResonanceModule:
    if isinstance(rm, FrequencySpec):
        return resonance_module(rm)
    return rm


def _resonant(a, b, rm: ResonanceModule) -> bool:
    return bool(rm.contains(np.subtract(a, b)))


def average(s: WeylSymbol, rm) -> WeylSymbol:
    """Average along the oscillator flow: keep the resonant monomials."""
    rm = _module(rm)
    return WeylSymbol(s.d, {(a, b): c for (a, b), c in s.terms.items() if _resonant(a, b, rm)})


def nonresonant_part(s: WeylSymbol, rm) -> WeylSymbol:
    return s - average(s, rm)


@dataclass(frozen=True)
class FourierDecomposition:
    """Components of a symbol along the periodic flows ``Phi^{H_n}``.

    ``components[k]`` changes by the phase ``exp(1j k . tau)`` when composed
    with the multiflow at angle ``tau`` in the d_omega periodic directions.
    """

    d: int
    components: dict[tuple[int, ...], WeylSymbol]

    def reassemble(self) -> WeylSymbol:
        out = WeylSymbol.zero(self.d)
        for comp in self.components.values():
            out = out + comp
        return out


def fourier_decompose(s: WeylSymbol, spec: FrequencySpec) -> FourierDecomposition:
    nu = spec.nu_matrix
    comps: dict[tuple[int, ...], dict] = {}
    for (a, b), c in s.terms.items():
        k = tuple(int(v) for v in -(nu @ np.subtract(a, b)))
        comps.setdefault(k, {})[(a, b)] = c
    return FourierDecomposition(s.d, {k: WeylSymbol(s.d, t) for k, t in comps.items()})


def periodic_flow(z, spec: FrequencySpec, tau) -> np.ndarray:
    """Multiflow of the periodic Hamiltonians ``H_n`` at angles ``tau``."""
    from .classical_flow import oscillator_flow

    angles = np.asarray(tau, dtype=float) @ spec.nu_matrix.astype(float)
    return oscillator_flow(z, angles)


class QuadratureError(RuntimeError):
    pass


def average_numeric(
    f: Callable,
    spec: FrequencySpec,
    z,
    grid: int = 8,
    tol: float = 1e-10,
    max_doublings: int = 6,
) -> float:
    """Torus average of ``f`` along the periodic flows by the trapezoid rule.

    The grid is doubled until two successive values agree within ``tol``.
    Raises QuadratureError if that fails three times in a row beyond the
    allowed number of doublings.
    """
    if grid < 4:
        raise SymbolError("grid must have at least 4 points per direction")
    z = np.asarray(z, dtype=float)
    dw = spec.d_omega

    def value(n):
        ang = 2 * np.pi * np.arange(n) / n
        mesh = np.stack(np.meshgrid(*([ang] * dw), indexing="ij"), axis=-1).reshape(-1, dw)
        pts = periodic_flow(z, spec, mesh)
        return np.mean(f(pts))

    prev = value(grid)
    fails = 0
    n = grid
    for _ in range(max_doublings + 3):
        n *= 2
        cur = value(n)
        if abs(cur - prev) < tol:
            return float(np.real(cur))
        fails += 1
        if fails >= 3 and n >= grid * 2 ** max_doublings:
            break
        prev = cur
    raise QuadratureError("torus average did not converge")


def solve_cohomological(g: WeylSymbol, spec: FrequencySpec, rm: ResonanceModule | None = None) -> WeylSymbol:
    """Solve ``{H, f} = g`` for ``g`` with empty resonant part.

    Since ``{H, z^a zbar^b} = -1j (a - b).omega z^a zbar^b`` the solution is
    ``f = sum 1j c / ((a - b).omega) z^a zbar^b``, which has zero average.
    """
    if not average(g, rm or spec).is_zero():
        raise CohomologicalObstruction("right-hand side has a resonant part")
    omega = spec.omega
    terms = {}
    for (a, b), c in g.terms.items():
        kw = float(np.subtract(a, b) @ omega)
        terms[(a, b)] = 1j * c / kw
    return WeylSymbol(g.d, terms)


def _period(spec: FrequencySpec) -> float:
    if spec.d_omega != 1:
        raise SymbolError("periodic formulas need a single periodic direction")
    return 2 * np.pi / float(spec.v[0])


def solve_cohomological_periodic(
    g: Callable,
    spec: FrequencySpec,
    z,
    quad: int = 64,
    tol: float = 1e-9,
) -> float:
    """Pointwise solution of ``{H, f} = g`` when the flow of H is periodic.

    Uses ``f(z) = -(1/P) int_0^P int_0^t g(phi_s z) ds dt``, rewritten as
    the single integral ``-(1/P) int_0^P (P - s) g(phi_s z) ds`` and
    evaluated with Gauss-Legendre nodes.
    """
    P = _period(spec)
    z = np.asarray(z, dtype=float)
    nodes, weights = np.polynomial.legendre.leggauss(quad)
    s = 0.5 * P * (nodes + 1)
    w = 0.5 * P * weights
    pts = periodic_flow(z, spec, s[:, None])
    vals = np.asarray(g(pts))
    mean = np.sum(w * vals) / P
    if abs(mean) > tol:
        raise CohomologicalObstruction(f"flow average of g is {abs(mean):.3g}, not zero")
    return float(np.real(-np.sum(w * (P - s) * vals) / P))


def _double_phase_integral(alpha: int, beta: int) -> complex:
    """``int_0^{2pi} int_0^t exp(-1j alpha s) exp(-1j beta t) ds dt``."""
    two_pi = 2 * np.pi
    if alpha == 0:
        if beta == 0:
            return two_pi**2 / 2
        return two_pi * 1j / beta
    val = 0.0
    if beta == 0:
        val += two_pi
    if alpha + beta == 0:
        val -= two_pi
    return val / (1j * alpha)


def second_order_symbol(V: WeylSymbol, spec: FrequencySpec) -> WeylSymbol:
    """Averaged second-order symbol for the homogeneous periodic oscillator.

    Computes the average of ``(1/4pi) int_0^{2pi} int_0^t {V o phi_s, V o phi_t} ds dt``
    exactly, monomial by monomial.
    """
    if spec.d_omega != 1 or not np.allclose(spec.omega, 1.0):
        raise SymbolError("second_order_symbol needs omega = (1, ..., 1)")
    items = list(V.terms.items())
    kappa = [int(sum(a) - sum(b)) for (a, b), _ in items]
    monos = [WeylSymbol(V.d, {k: 1.0}) for k, _ in items]
    out = WeylSymbol.zero(V.d)
    for i, (_, ci) in enumerate(items):
        for j, (_, cj) in enumerate(items):
            if kappa[i] + kappa[j] != 0:
                continue
            weight = _double_phase_integral(kappa[i], kappa[j]) / (4 * np.pi)
            if weight == 0:
                continue
            out = out + (weight * ci * cj) * poisson(monos[i], monos[j])
    return average(out, spec)


def compose_linear(s: WeylSymbol, M: np.ndarray) -> WeylSymbol:
    """``s`` composed with the real linear map ``(x, xi) -> M (x, xi)``."""
    d = s.d
    M = np.asarray(M, dtype=float)
    coords = [WeylSymbol.x(j, d) for j in range(d)] + [WeylSymbol.xi(j, d) for j in range(d)]
    new = []
    for r in range(2 * d):
        acc = WeylSymbol.zero(d)
        for c in range(2 * d):
            if M[r, c] != 0:
                acc = acc + float(M[r, c]) * coords[c]
        new.append(acc)
    zs = [new[j] + 1j * new[d + j] for j in range(d)]
    zbs = [new[j] - 1j * new[d + j] for j in range(d)]
    out = WeylSymbol.zero(d)
    for (a, b), c in s.terms.items():
        term = WeylSymbol.constant(c, d)
        for j in range(d):
            term = term * zs[j] ** a[j] * zbs[j] ** b[j]
        out = out + term
    return out


def random_symbol(d: int, max_degree: int, rng: np.random.Generator, real: bool = True, density: float = 0.6) -> WeylSymbol:
    """Random polynomial symbol with Gaussian coefficients (test helper)."""
    terms: dict[Key, complex] = {}
    for total in range(max_degree + 1):
        for ab in _compositions(total, 2 * d):
            if rng.random() < density:
                terms[(ab[:d], ab[d:])] = complex(rng.normal(), rng.normal())
    s = WeylSymbol(d, terms)
    return s.real_part() if real else s


def _compositions(total: int, parts: int) -> Iterable[tuple[int, ...]]:
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def harmonic_symbol(spec: FrequencySpec) -> WeylSymbol:
    return WeylSymbol.harmonic(spec.omega)
