"""Weyl quantization in a truncated tensor Hermite basis.

With ``x = sqrt(hbar/2) (a + a^+)`` and ``xi = 1j sqrt(hbar/2) (a^+ - a)`` the
complex coordinates quantize to ``z -> sqrt(2 hbar) a`` and
``zbar -> sqrt(2 hbar) a^+``.  The Weyl quantization of ``z^p zbar^q`` in one
plane is the fully symmetrized product of ``p`` copies of ``a`` and ``q``
copies of ``a^+``; planes commute, so a monomial quantizes to a Kronecker
product of single-plane matrices.

Single-plane matrices are built in an enlarged space and then truncated,
so every retained entry is exact.
"""

from __future__ import annotations

import itertools
import os
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .frequency import FrequencySpec, ResonanceModule, resonance_module
from .symbol_algebra import WeylSymbol

MEMORY_CAP = int(os.environ.get("OSCILAB_MAX_STATES", 6000))


class BasisError(ValueError):
    pass


class BandError(ValueError):
    """Requested quantity involves basis states near the truncation edge."""


@dataclass(frozen=True)
class HermiteBasisSpec:
    d: int
    hbar: float
    nmax: int

    def __post_init__(self):
        if self.nmax < 2:
            raise BasisError("nmax must be at least 2")
        if self.hbar <= 0:
            raise BasisError("hbar must be positive")
        if self.nmax**self.d > MEMORY_CAP:
            raise BasisError(f"basis size {self.nmax ** self.d} exceeds cap {MEMORY_CAP}")

    @property
    def size(self) -> int:
        return self.nmax**self.d

    @property
    def indices(self) -> np.ndarray:
        return _indices(self.d, self.nmax)

    def index_of(self, k) -> int:
        k = tuple(int(c) for c in k)
        if any(c < 0 or c >= self.nmax for c in k):
            raise BasisError(f"multi-index {k} outside the basis")
        return int(np.ravel_multi_index(k, (self.nmax,) * self.d))

    def basis_vector(self, k) -> np.ndarray:
        v = np.zeros(self.size, dtype=complex)
        v[self.index_of(k)] = 1.0
        return v

    def energies(self, omega) -> np.ndarray:
        omega = np.asarray(omega, dtype=float)
        return self.hbar * (self.indices @ omega + omega.sum() / 2)

    def cutoff_energy(self, omega) -> float:
        """Lowest oscillator energy of a state outside the basis."""
        omega = np.asarray(omega, dtype=float)
        return self.hbar * (omega.min() * self.nmax + omega.sum() / 2)

    def band_limit(self, omega, degree: int = 1) -> float:
        """Energies up to this value are treated as reliable."""
        omega = np.asarray(omega, dtype=float)
        return self.cutoff_energy(omega) - 3 * self.hbar * omega.sum() * max(degree, 1)

    def band_mask(self, omega, emax: float | None = None, degree: int = 1) -> np.ndarray:
        limit = self.band_limit(omega, degree) if emax is None else emax
        return self.energies(omega) <= limit + 1e-12

    def to_json(self) -> dict:
        return {"d": self.d, "hbar": self.hbar, "nmax": self.nmax}

    @classmethod
    def from_json(cls, obj: dict) -> "HermiteBasisSpec":
        return cls(int(obj["d"]), float(obj["hbar"]), int(obj["nmax"]))


@lru_cache(maxsize=None)
def _indices(d: int, nmax: int) -> np.ndarray:
    idx = np.array(list(itertools.product(range(nmax), repeat=d)), dtype=np.int64).reshape(-1, d)
    idx.setflags(write=False)
    return idx


def basis_for(d: int, hbar: float, emax: float, omega=None, degree: int = 2) -> HermiteBasisSpec:
    """Basis whose reliable band reaches ``emax``, with one spare level per plane."""
    omega = np.ones(d) if omega is None else np.asarray(omega, dtype=float)
    need = (emax + 3 * hbar * omega.sum() * degree) / hbar - omega.sum() / 2
    nmax = int(np.ceil(need / omega.min())) + 1
    return HermiteBasisSpec(d, hbar, max(nmax, 2))


@dataclass
class OperatorMatrix:
    basis: HermiteBasisSpec
    entries: np.ndarray
    symbol_tag: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.entries.shape

    def hermitian_defect(self) -> float:
        return float(np.max(np.abs(self.entries - self.entries.conj().T), initial=0.0))

    def __add__(self, other):
        other = other.entries if isinstance(other, OperatorMatrix) else other
        return OperatorMatrix(self.basis, self.entries + other, self.symbol_tag)

    def __sub__(self, other):
        other = other.entries if isinstance(other, OperatorMatrix) else other
        return OperatorMatrix(self.basis, self.entries - other, self.symbol_tag)

    def __mul__(self, c):
        return OperatorMatrix(self.basis, self.entries * c, self.symbol_tag)

    __rmul__ = __mul__

    def __matmul__(self, other):
        other = other.entries if isinstance(other, OperatorMatrix) else other
        return self.entries @ other

    def apply(self, psi) -> np.ndarray:
        return self.entries @ np.asarray(psi)


def _entries(A) -> np.ndarray:
    return A.entries if isinstance(A, OperatorMatrix) else np.asarray(A)


def ladder(n: int) -> sp.csr_matrix:
    """Annihilation operator on ``n`` Fock levels."""
    return sp.diags(np.sqrt(np.arange(1, n)), 1, shape=(n, n), format="csr", dtype=float)


@lru_cache(maxsize=None)
def weyl_ordered(p: int, q: int, nmax: int) -> sp.csr_matrix:
    """Symmetrized product of ``p`` annihilators and ``q`` creators.

    Uses ``Op(l f) = (Op(l) Op(f) + Op(f) Op(l)) / 2`` for linear ``l``,
    which is exact for Weyl quantization.
    """
    n = nmax + p + q
    a = ladder(n)
    ad = a.T.tocsr()

    @lru_cache(maxsize=None)
    def W(i, j):
        if i == 0 and j == 0:
            return sp.identity(n, format="csr")
        if i > 0:
            prev = W(i - 1, j)
            return (0.5 * (a @ prev + prev @ a)).tocsr()
        prev = W(0, j - 1)
        return (0.5 * (ad @ prev + prev @ ad)).tocsr()

    return W(p, q)[:nmax, :nmax].tocsr()


def _kron_all(mats):
    out = mats[0]
    for m in mats[1:]:
        out = sp.kron(out, m, format="csr")
    return out


def _symbol_key(s: WeylSymbol) -> str:
    parts = [f"{a}{b}:{c.real:.17g},{c.imag:.17g}" for (a, b), c in sorted(s.terms.items())]
    return ";".join(parts)


def quantize(s: WeylSymbol, basis: HermiteBasisSpec, tag: str = "", sparse: bool = False):
    """Matrix of the Weyl quantization of ``s`` in ``basis``."""
    if s.d != basis.d:
        raise BasisError("symbol and basis dimensions differ")
    from . import cache

    cached = None if sparse else cache.load_matrix(basis, _symbol_key(s))
    if cached is not None:
        return OperatorMatrix(basis, cached, tag or "cached")
    N = basis.size
    acc = sp.csr_matrix((N, N), dtype=complex)
    scale = np.sqrt(2 * basis.hbar)
    for (a, b), c in s.terms.items():
        factors = [weyl_ordered(a[j], b[j], basis.nmax) for j in range(basis.d)]
        acc = acc + (c * scale ** (sum(a) + sum(b))) * _kron_all(factors)
    if sparse:
        return acc.tocsr()
    M = acc.toarray()
    cache.store_matrix(basis, _symbol_key(s), M)
    return OperatorMatrix(basis, M, tag or repr(s))


def harmonic_matrix(spec: FrequencySpec, basis: HermiteBasisSpec) -> OperatorMatrix:
    return OperatorMatrix(basis, np.diag(basis.energies(spec.omega)).astype(complex), "H")


def resonant_mask(basis: HermiteBasisSpec, rm: ResonanceModule) -> np.ndarray:
    """Boolean matrix: True where ``k - k'`` lies in the resonance lattice."""
    proj = basis.indices @ rm.perp_basis.T
    return np.all(proj[:, None, :] == proj[None, :, :], axis=-1)


def quantum_average(A, rm) -> OperatorMatrix:
    if isinstance(rm, FrequencySpec):
        rm = resonance_module(rm)
    M = _entries(A)
    basis = A.basis if isinstance(A, OperatorMatrix) else None
    if basis is None:
        raise BasisError("quantum_average needs an OperatorMatrix")
    return OperatorMatrix(basis, np.where(resonant_mask(basis, rm), M, 0), "avg")


def band_norm(A, mask: np.ndarray) -> float:
    """Largest singular value of the band-restricted block of ``A``."""
    if sp.issparse(A):
        idx = np.flatnonzero(mask)
        M = A.tocsr()[idx][:, idx].toarray()
    else:
        M = _entries(A)[np.ix_(mask, mask)]
    if M.size == 0:
        return 0.0
    if np.allclose(M, M.conj().T, atol=1e-14 * max(1.0, np.abs(M).max())):
        return float(np.max(np.abs(np.linalg.eigvalsh(0.5 * (M + M.conj().T)))))
    return float(np.linalg.norm(M, 2))


@dataclass
class Eigenpairs:
    values: np.ndarray
    vectors: np.ndarray
    residual: float


def _check_window(basis: HermiteBasisSpec, omega, window, degree: int = 1):
    if window[1] > basis.band_limit(omega, degree):
        raise BandError(
            f"window top {window[1]:.4g} exceeds reliable band {basis.band_limit(omega, degree):.4g}"
        )


def spectrum(P, window, omega=None, degree: int = 1) -> Eigenpairs:
    """Eigenpairs of a Hermitian matrix with eigenvalues inside ``window``."""
    M = _entries(P)
    if isinstance(P, OperatorMatrix):
        om = np.ones(P.basis.d) if omega is None else omega
        _check_window(P.basis, om, window, degree)
    w, V = sla.eigh(0.5 * (M + M.conj().T))
    keep = (w >= window[0]) & (w <= window[1])
    w, V = w[keep], V[:, keep]
    res = float(np.max(np.linalg.norm(M @ V - V * w, axis=0), initial=0.0))
    return Eigenpairs(w, V, res)


class ClusterAmbiguityError(RuntimeError):
    pass


@dataclass
class Cluster:
    center: float
    members: np.ndarray
    width: float


@dataclass
class ClusterReport:
    clusters: list
    min_gap: float
    max_width: float
    max_shift: float

    def rows(self):
        return [(c.center, len(c.members), c.width, float(np.max(np.abs(c.members - c.center), initial=0.0))) for c in self.clusters]


def cluster_spectrum(P, H, eps: float, window, vnorm: float | None = None, omega=None) -> ClusterReport:
    """Group eigenvalues of ``P`` around the distinct eigenvalues of ``H``.

    Each eigenvalue goes to the nearest unperturbed level.  The assignment
    is rejected as ambiguous when a displacement reaches half the local
    unperturbed gap, or when ``eps * vnorm`` already does.
    """
    Hd = np.real(np.diag(_entries(H)))
    centers = np.unique(np.round(Hd, 12))
    lo, hi = window
    pairs = spectrum(P, (lo, hi), omega=omega)
    gaps = np.diff(centers)
    local = (centers[1:] >= lo) & (centers[:-1] <= hi)
    min_gap = float(gaps[local].min(initial=np.inf))
    if vnorm is not None and eps * vnorm >= 0.5 * min_gap:
        raise ClusterAmbiguityError("perturbation too large for the unperturbed spacing")
    assigned: dict[float, list] = {}
    max_shift = 0.0
    for lam in pairs.values:
        i = int(np.argmin(np.abs(centers - lam)))
        shift = abs(centers[i] - lam)
        if shift >= 0.5 * min_gap:
            raise ClusterAmbiguityError(f"eigenvalue {lam:.6g} cannot be assigned to a level")
        assigned.setdefault(float(centers[i]), []).append(lam)
        max_shift = max(max_shift, float(shift))
    clusters = [Cluster(c, np.array(sorted(m)), float(max(m) - min(m))) for c, m in sorted(assigned.items())]
    max_width = max((c.width for c in clusters), default=0.0)
    return ClusterReport(clusters, min_gap, max_width, max_shift)


class ProjectionError(RuntimeError):
    pass


def project_to_cluster(psi, H, lam: float, delta: float):
    """Project onto the eigenspace of diagonal ``H`` in ``[lam-delta, lam+delta]``.

    Returns ``(normalized state, eigenvalue, norm of the removed part)``.
    """
    Hd = np.real(np.diag(_entries(H)))
    sel = np.abs(Hd - lam) <= delta
    vals = np.unique(np.round(Hd[sel], 12))
    if len(vals) != 1:
        raise ProjectionError(f"{len(vals)} eigenvalues in the window, need exactly one")
    psi = np.asarray(psi, dtype=complex)
    proj = np.where(sel, psi, 0)
    removed = float(np.linalg.norm(psi - proj))
    nrm = np.linalg.norm(proj)
    if nrm == 0:
        raise ProjectionError("state has no component in the window")
    return proj / nrm, float(vals[0]), removed


def wigner_pairing(psi, a, basis: HermiteBasisSpec | None = None) -> float | complex:
    """``<psi, Op(a) psi>``; ``a`` may be a symbol or a quantized matrix."""
    psi = np.asarray(psi)
    if isinstance(a, WeylSymbol):
        if basis is None:
            raise BasisError("basis required to quantize the observable")
        A = quantize(a, basis, sparse=True)
        val = np.vdot(psi, A @ psi)
        return float(np.real(val)) if a.is_real() else complex(val)
    val = np.vdot(psi, _entries(a) @ psi)
    return complex(val)


def hermite_functions(nmax: int, y: np.ndarray) -> np.ndarray:
    """Normalized Hermite functions ``h_n(y)`` (unit hbar), shape (nmax, len(y)).

    Three-term recurrence, stable for large n.
    """
    y = np.asarray(y, dtype=float)
    out = np.zeros((nmax,) + y.shape)
    out[0] = np.pi ** (-0.25) * np.exp(-0.5 * y**2)
    if nmax > 1:
        out[1] = np.sqrt(2.0) * y * out[0]
    for n in range(1, nmax - 1):
        out[n + 1] = np.sqrt(2.0 / (n + 1)) * y * out[n] - np.sqrt(n / (n + 1)) * out[n - 1]
    return out


def hermite_wavefunctions(basis: HermiteBasisSpec, x: np.ndarray) -> np.ndarray:
    """``Psi_n(x)`` for one plane at the given hbar, shape (nmax, len(x))."""
    h = basis.hbar
    return hermite_functions(basis.nmax, np.asarray(x) / np.sqrt(h)) / h**0.25


def edge_weight(psi, basis: HermiteBasisSpec, levels: int = 2) -> float:
    """Norm carried by basis states within ``levels`` of the per-plane cutoff."""
    idx = basis.indices
    edge = np.any(idx >= basis.nmax - levels, axis=1)
    return float(np.linalg.norm(np.asarray(psi)[edge]))
