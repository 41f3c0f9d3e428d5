"""Frequency vectors, resonance lattices and reduced periodic Hamiltonians.

A frequency vector is never stored as a bare float array.  It is given as
``omega = sum_n v[n] * nu[n]`` with primitive, pairwise orthogonal integer
vectors ``nu[n]`` and rationally independent coefficients ``v[n]``.  With
that factorization an integer vector ``k`` is resonant (``k . omega == 0``)
exactly when ``k . nu[n] == 0`` for every ``n``, which is decidable in
integer arithmetic.
"""

from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence, Union

import numpy as np


class FrequencyError(ValueError):
    """Raised for inconsistent frequency data."""


def _squarefree_split(n: int) -> tuple[int, int]:
    """Return (s, r) with n = s**2 * r and r squarefree."""
    s, r = 1, 1
    p = 2
    m = n
    while p * p <= m:
        while m % (p * p) == 0:
            m //= p * p
            s *= p
        p += 1
    r = m
    return s, r


@dataclass(frozen=True)
class Surd:
    """Exact real number ``coef * sqrt(root)`` with squarefree ``root``."""

    coef: Fraction
    root: int

    def __post_init__(self):
        if self.root < 1:
            raise FrequencyError("surd root must be a positive integer")
        s, r = _squarefree_split(self.root)
        object.__setattr__(self, "coef", Fraction(self.coef) * s)
        object.__setattr__(self, "root", r)

    def __float__(self) -> float:
        return float(self.coef) * math.sqrt(self.root)

    def __repr__(self) -> str:
        if self.root == 1:
            return f"{self.coef}"
        return f"{self.coef}*sqrt({self.root})"


Exact = Union[Fraction, Surd, float]


def _as_exact(x) -> Exact:
    if isinstance(x, Surd):
        return Fraction(x.coef) if x.root == 1 else x
    if isinstance(x, (Fraction, int)):
        return Fraction(x)
    if isinstance(x, float):
        return x
    raise FrequencyError(f"unsupported frequency coefficient {x!r}")


def _exact_class(x: Exact):
    """Key identifying the Q-linear span a coefficient lives in."""
    if isinstance(x, Fraction):
        return ("surd", 1)
    if isinstance(x, Surd):
        return ("surd", x.root)
    return None


def _rational_part(x: Exact) -> Fraction:
    return x if isinstance(x, Fraction) else x.coef


def _primitive(vec: Sequence[int]) -> tuple[tuple[int, ...], int]:
    g = 0
    for c in vec:
        g = math.gcd(g, int(c))
    if g == 0:
        raise FrequencyError("zero vector")
    return tuple(int(c) // g for c in vec), g


@dataclass(frozen=True)
class FrequencySpec:
    """Exact factorization ``omega = sum_n v[n] * nu[n]``.

    Use :meth:`create` to build a spec from arbitrary input; it merges
    rationally dependent coefficients so that the resulting ``v`` are
    independent over the rationals.
    """

    d: int
    nu: tuple[tuple[int, ...], ...]
    v: tuple[Exact, ...]
    omega: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        nu = tuple(tuple(int(c) for c in row) for row in self.nu)
        v = tuple(_as_exact(x) for x in self.v)
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "v", v)
        if not 1 <= len(nu) <= self.d:
            raise FrequencyError("need 1 <= d_omega <= d")
        if len(v) != len(nu):
            raise FrequencyError("nu and v differ in length")
        for row in nu:
            if len(row) != self.d:
                raise FrequencyError("nu vector of wrong length")
            if _primitive(row)[1] != 1:
                raise FrequencyError(f"nu vector {row} is not primitive")
        for i, j in itertools.combinations(range(len(nu)), 2):
            if sum(a * b for a, b in zip(nu[i], nu[j])) != 0:
                raise FrequencyError("nu vectors must be pairwise orthogonal")
        if any(float(x) == 0.0 for x in v):
            raise FrequencyError("coefficients v must be nonzero")
        omega = np.zeros(self.d)
        for row, x in zip(nu, v):
            omega += float(x) * np.asarray(row, dtype=float)
        if np.any(omega <= 0):
            raise FrequencyError(f"omega = {omega} must have positive entries")
        omega.setflags(write=False)
        object.__setattr__(self, "omega", omega)

    @property
    def d_omega(self) -> int:
        return len(self.nu)

    @property
    def nu_matrix(self) -> np.ndarray:
        """Integer matrix with rows nu[n], shape (d_omega, d)."""
        return np.array(self.nu, dtype=np.int64).reshape(self.d_omega, self.d)

    @classmethod
    def create(cls, nu, v) -> "FrequencySpec":
        """Build a spec, collapsing rationally dependent coefficients."""
        nu = [tuple(int(c) for c in row) for row in nu]
        v = [_as_exact(x) for x in v]
        if not nu:
            raise FrequencyError("empty frequency data")
        d = len(nu[0])
        groups: dict = {}
        loose = []
        for row, x in zip(nu, v):
            key = _exact_class(x)
            if key is None:
                loose.append((row, x))
            else:
                groups.setdefault(key, []).append((row, x))
        new_nu, new_v = [], []
        for (_, root), members in groups.items():
            vec = [Fraction(0)] * d
            for row, x in members:
                q = _rational_part(x)
                vec = [a + q * b for a, b in zip(vec, row)]
            den = math.lcm(*[c.denominator for c in vec])
            ints = [int(c * den) for c in vec]
            prim, g = _primitive(ints)
            coef = Fraction(g, den)
            new_nu.append(prim)
            new_v.append(coef if root == 1 else Surd(coef, root))
        for row, x in loose:
            new_nu.append(row)
            new_v.append(x)
        spec = cls(d, tuple(new_nu), tuple(new_v))
        spec.check_independence()
        return spec

    @classmethod
    def from_omega_int(cls, omega: Sequence[int]) -> "FrequencySpec":
        """Periodic spec from an integer frequency vector."""
        return cls.create([tuple(omega)], [Fraction(1)])

    def check_independence(self, qmax: int = 6, tol: float = 1e-12) -> bool:
        """Heuristic search for small rational relations among float entries.

        Exact entries from different surd classes are independent by
        construction; only float entries are screened.  Emits a warning
        when a relation is found and returns False.
        """
        if not any(isinstance(x, float) for x in self.v):
            return True
        vals = np.array([float(x) for x in self.v])
        n = len(vals)
        for q in itertools.product(range(-qmax, qmax + 1), repeat=n):
            if any(q) and abs(np.dot(q, vals)) < tol:
                warnings.warn(f"frequency coefficients look rationally dependent: {q}")
                return False
        return True

    def to_json(self) -> dict:
        vs = []
        for x in self.v:
            if isinstance(x, Fraction):
                vs.append({"rat": [x.numerator, x.denominator]})
            elif isinstance(x, Surd):
                vs.append({"surd": {"rat": [x.coef.numerator, x.coef.denominator], "root": x.root}})
            else:
                vs.append(float(x))
        return {"d": self.d, "nu": [list(r) for r in self.nu], "v": vs}

    @classmethod
    def from_json(cls, data) -> "FrequencySpec":
        if isinstance(data, str):
            data = json.loads(data)
        for key in ("d", "nu", "v"):
            if key not in data:
                raise FrequencyError(f"missing key {key!r}")
        vs = []
        for item in data["v"]:
            if isinstance(item, dict) and "rat" in item:
                vs.append(Fraction(*item["rat"]))
            elif isinstance(item, dict) and "surd" in item:
                s = item["surd"]
                vs.append(Surd(Fraction(*s["rat"]), int(s["root"])))
            elif isinstance(item, (int, float)):
                vs.append(float(item))
            else:
                raise FrequencyError(f"cannot parse coefficient {item!r}")
        spec = cls.create(data["nu"], vs)
        if spec.d != int(data["d"]):
            raise FrequencyError("d does not match nu vectors")
        return spec


def integer_kernel(mat: np.ndarray) -> np.ndarray:
    """Basis of the integer kernel ``{k : mat @ k = 0}``.

    Unimodular column operations on ``[mat; I]`` reduce ``mat`` to column
    echelon form; the identity block then holds a basis of the full
    (saturated) kernel lattice.  Returns an array of shape (r, n) whose
    rows are the basis vectors.
    """
    m = [[int(c) for c in row] for row in np.atleast_2d(mat)]
    nrows = len(m)
    n = len(m[0])
    cols = [[m[i][j] for i in range(nrows)] + [int(i == j) for i in range(n)] for j in range(n)]

    pivot = 0
    for row in range(nrows):
        while True:
            nz = [j for j in range(pivot, n) if cols[j][row] != 0]
            if len(nz) <= 1:
                break
            jmin = min(nz, key=lambda j: abs(cols[j][row]))
            for j in nz:
                if j != jmin:
                    q = cols[j][row] // cols[jmin][row]
                    cols[j] = [a - q * b for a, b in zip(cols[j], cols[jmin])]
        nz = [j for j in range(pivot, n) if cols[j][row] != 0]
        if nz:
            j = nz[0]
            cols[pivot], cols[j] = cols[j], cols[pivot]
            pivot += 1
    basis = []
    for j in range(pivot, n):
        k = cols[j][nrows:]
        first = next(c for c in k if c != 0)
        if first < 0:
            k = [-c for c in k]
        basis.append(k)
    return np.array(basis, dtype=np.int64).reshape(len(basis), n)


@dataclass(frozen=True)
class ResonanceModule:
    lattice_basis: np.ndarray
    perp_basis: np.ndarray

    @property
    def rank(self) -> int:
        return self.lattice_basis.shape[0]

    def contains(self, k) -> np.ndarray:
        """Membership test for one vector or a stack of vectors (last axis)."""
        k = np.asarray(k, dtype=np.int64)
        return np.all(k @ self.perp_basis.T == 0, axis=-1)


def resonance_module(spec: FrequencySpec) -> ResonanceModule:
    nu = spec.nu_matrix
    basis = integer_kernel(nu)
    if basis.shape[0] + spec.d_omega != spec.d:
        raise FrequencyError("kernel rank mismatch; nu vectors are dependent")
    return ResonanceModule(lattice_basis=basis, perp_basis=nu)


def project_degenerate(E, w) -> np.ndarray:
    """Zero the entries of ``w`` where the action ``E`` vanishes."""
    E = np.asarray(E, dtype=float)
    w = np.asarray(w)
    if np.any(E < 0):
        raise FrequencyError("actions E must be nonnegative")
    return np.where(E > 0, w, 0 * w)


def _frac_rank(vectors: list[list[Fraction]]) -> int:
    rows = [list(r) for r in vectors]
    rank = 0
    ncol = len(rows[0]) if rows else 0
    for c in range(ncol):
        piv = next((i for i in range(rank, len(rows)) if rows[i][c] != 0), None)
        if piv is None:
            continue
        rows[rank], rows[piv] = rows[piv], rows[rank]
        for i in range(len(rows)):
            if i != rank and rows[i][c] != 0:
                f = rows[i][c] / rows[rank][c]
                rows[i] = [a - f * b for a, b in zip(rows[i], rows[rank])]
        rank += 1
    return rank


def _frac_solve(columns: list[list[Fraction]], target: list[Fraction]) -> list[Fraction]:
    """Solve sum_j b_j columns[j] = target exactly (columns independent)."""
    m = len(target)
    r = len(columns)
    aug = [[columns[j][i] for j in range(r)] + [target[i]] for i in range(m)]
    row = 0
    where = [-1] * r
    for c in range(r):
        piv = next((i for i in range(row, m) if aug[i][c] != 0), None)
        if piv is None:
            continue
        aug[row], aug[piv] = aug[piv], aug[row]
        p = aug[row][c]
        aug[row] = [a / p for a in aug[row]]
        for i in range(m):
            if i != row and aug[i][c] != 0:
                f = aug[i][c]
                aug[i] = [a - f * b for a, b in zip(aug[i], aug[row])]
        where[c] = row
        row += 1
    for i in range(row, m):
        if aug[i][r] != 0:
            raise FrequencyError("vector is not in the span")
    return [aug[where[c]][r] if where[c] >= 0 else Fraction(0) for c in range(r)]


@dataclass(frozen=True)
class ReducedHamiltonianSet:
    """Reduced periodic Hamiltonians adapted to an action vector ``E``.

    ``coeffs[j]`` is the integer coefficient vector ``c`` of the j-th reduced
    Hamiltonian ``sum_i c_i H_i``; ``v_tilde`` gives ``H = sum_j
    v_tilde[j] * reduced_j`` on the torus with actions ``E``.
    """

    spec: FrequencySpec
    E: tuple[float, ...]
    selection: tuple[int, ...]
    gcds: tuple[int, ...]
    coeffs: tuple[tuple[int, ...], ...]
    b: tuple[tuple[Fraction, ...], ...]
    v_tilde: tuple[float, ...]

    @property
    def d_E(self) -> int:
        return len(self.selection)

    @property
    def base_coeffs(self) -> tuple[tuple[int, ...], ...]:
        """Coefficient vectors of the periodic Hamiltonians before reduction."""
        return self.spec.nu

    @property
    def coeff_matrix(self) -> np.ndarray:
        return np.array(self.coeffs, dtype=float).reshape(self.d_E, self.spec.d)

    def values(self, z) -> np.ndarray:
        """Values of the reduced Hamiltonians at phase points (..., 2d)."""
        z = np.asarray(z, dtype=float)
        d = self.spec.d
        actions = 0.5 * (z[..., :d] ** 2 + z[..., d:] ** 2)
        return actions @ self.coeff_matrix.T

    def times(self, sigma) -> np.ndarray:
        """Per-plane rotation angles of the reduced multiflow at ``sigma``."""
        return np.asarray(sigma, dtype=float) @ self.coeff_matrix


def reduced_hamiltonians(spec: FrequencySpec, E) -> ReducedHamiltonianSet:
    E = np.asarray(E, dtype=float)
    if E.shape != (spec.d,):
        raise FrequencyError("E has wrong length")
    if np.any(E < 0):
        raise FrequencyError("actions E must be nonnegative")
    if not np.any(E > 0):
        raise FrequencyError("at least one action must be positive")
    mask = E > 0
    proj = [[Fraction(c) if mask[i] else Fraction(0) for i, c in enumerate(row)] for row in spec.nu]
    if all(all(c == 0 for c in row) for row in proj):
        raise FrequencyError("all projected periodic directions vanish")

    selection: list[int] = []
    for n in range(spec.d_omega):
        trial = [proj[i] for i in selection + [n]]
        if _frac_rank(trial) == len(selection) + 1:
            selection.append(n)

    chosen = [proj[i] for i in selection]
    bcoef = []
    for n in range(spec.d_omega):
        bcoef.append(tuple(_frac_solve(chosen, proj[n])))

    gcds, coeffs = [], []
    for i in selection:
        vec, g = _primitive([int(c) for c in proj[i]])
        gcds.append(g)
        coeffs.append(vec)

    selected = set(selection)
    v_tilde = []
    for j, lj in enumerate(selection):
        total = float(spec.v[lj])
        for n in range(spec.d_omega):
            if n not in selected:
                total += float(bcoef[n][j]) * float(spec.v[n])
        v_tilde.append(gcds[j] * total)
    return ReducedHamiltonianSet(
        spec=spec,
        E=tuple(float(e) for e in E),
        selection=tuple(selection),
        gcds=tuple(gcds),
        coeffs=tuple(coeffs),
        b=tuple(bcoef),
        v_tilde=tuple(v_tilde),
    )


@dataclass(frozen=True)
class DenominatorProfile:
    shells: np.ndarray
    minima: np.ndarray
    sigma0: float
    gamma_hat: float
    witness: tuple[int, ...] | None

    def rows(self):
        return list(zip(self.shells.tolist(), self.minima.tolist()))


def denominator_profile(spec: FrequencySpec, K: int) -> DenominatorProfile:
    """Small-denominator scan over ``0 < |k|_inf <= K``, k non-resonant.

    ``minima[n-1]`` is the smallest ``|omega . k|`` over non-resonant k with
    ``|k|_inf <= n`` (so the sequence is nonincreasing).  ``gamma_hat`` is
    the largest observed ``log(sigma0/|omega.k|)/log|k|`` (clipped at 0),
    an empirical lower-bound witness for the Diophantine exponent.
    """
    if K < 1:
        raise FrequencyError("K must be >= 1")
    d = spec.d
    grid = np.array(list(itertools.product(range(-K, K + 1), repeat=d)), dtype=np.int64)
    norms = np.abs(grid).max(axis=1)
    resonant = np.all(grid @ spec.nu_matrix.T == 0, axis=1)
    keep = (norms > 0) & ~resonant
    ks, norms = grid[keep], norms[keep]
    dens = np.abs(ks.astype(float) @ spec.omega)
    shell_min = np.full(K, np.inf)
    np.minimum.at(shell_min, norms - 1, dens)
    minima = np.minimum.accumulate(shell_min)
    sigma0 = float(shell_min[0])
    gamma_hat, witness = 0.0, None
    far = norms >= 2
    if np.any(far):
        ratios = np.log(sigma0 / dens[far]) / np.log(norms[far])
        i = int(np.argmax(ratios))
        if ratios[i] > 0:
            gamma_hat = float(ratios[i])
            witness = tuple(int(c) for c in ks[far][i])
    return DenominatorProfile(np.arange(1, K + 1), minima, sigma0, gamma_hat, witness)
