"""Quantum Birkhoff normal form at matrix level.

Step j removes the non-resonant part of the order-``eps**j`` coefficient by
conjugating with ``U_j = exp(-1j eps**j F_j / hbar)``, where ``F_j`` solves
``(1j/hbar) [F_j, H] = <A_j> - A_j`` entrywise (``H`` is diagonal).

Two representations are carried along:

* a formal power series in ``eps`` (list of sparse matrix coefficients),
  which makes every ``F_j`` and every averaged remainder ``<R_j>``
  independent of the numerical value of ``eps``;
* the actual conjugated matrix for the given ``eps``, built from dense
  unitaries, whose non-resonant part is the residual of the construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np
import scipy.sparse as sp

from .frequency import FrequencySpec, resonance_module
from .quantization import HermiteBasisSpec, OperatorMatrix, _entries, band_norm, quantize
from .symbol_algebra import WeylSymbol, nonresonant_part, solve_cohomological


def _resonant_pairs(basis: HermiteBasisSpec, spec: FrequencySpec, rows, cols) -> np.ndarray:
    proj = basis.indices @ resonance_module(spec).perp_basis.T
    return np.all(proj[rows] == proj[cols], axis=-1)


def split_resonant(A, basis: HermiteBasisSpec, spec: FrequencySpec):
    """Return ``(<A>, A - <A>)``; sparse input gives sparse output."""
    if sp.issparse(A):
        C = A.tocoo()
        res = _resonant_pairs(basis, spec, C.row, C.col)
        shape = C.shape
        on = sp.csr_matrix((C.data[res], (C.row[res], C.col[res])), shape=shape)
        off = sp.csr_matrix((C.data[~res], (C.row[~res], C.col[~res])), shape=shape)
        return on, off
    M = _entries(A)
    n = len(M)
    r, c = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    res = _resonant_pairs(basis, spec, r, c)
    return np.where(res, M, 0), np.where(res, 0, M)


def solve_quantum_cohomological(V, spec: FrequencySpec, basis: HermiteBasisSpec | None = None):
    """Hermitian ``F`` with ``(1j/hbar)[F, H] = <V> - V``.

    Entrywise ``F[k, k'] = V[k, k'] / (1j omega.(k - k'))`` off resonance and
    0 on resonance.  Sparse input returns a sparse matrix, dense input an
    OperatorMatrix.
    """
    basis = basis or V.basis
    energy = basis.indices @ spec.omega
    if sp.issparse(V):
        C = V.tocoo()
        res = _resonant_pairs(basis, spec, C.row, C.col)
        r, c, v = C.row[~res], C.col[~res], C.data[~res]
        vals = v / (1j * (energy[r] - energy[c]))
        return sp.csr_matrix((vals, (r, c)), shape=C.shape)
    M = _entries(V)
    _, off = split_resonant(M, basis, spec)
    denom = energy[:, None] - energy[None, :]
    safe = np.where(off != 0, denom, 1.0)
    return OperatorMatrix(basis, np.where(off != 0, off / (1j * safe), 0), "F")


def unitary_exp(F, scale: float) -> np.ndarray:
    """``exp(-1j * scale * F)`` for Hermitian ``F`` via eigendecomposition."""
    M = F.toarray() if sp.issparse(F) else _entries(F)
    w, Q = np.linalg.eigh(0.5 * (M + M.conj().T))
    return (Q * np.exp(-1j * scale * w)) @ Q.conj().T


def unitarity_defect(U: np.ndarray) -> float:
    return float(np.max(np.abs(U.conj().T @ U - np.eye(len(U)))))


def conjugate_step(P, F, eps: float, hbar: float):
    """Return ``(U^* P U, U)`` with ``U = exp(-1j eps F / hbar)``."""
    U = unitary_exp(F, eps / hbar)
    if unitarity_defect(U) > 1e-10:
        raise ArithmeticError("matrix exponential lost unitarity")
    M = _entries(P)
    out = U.conj().T @ M @ U
    basis = P.basis if isinstance(P, OperatorMatrix) else None
    return OperatorMatrix(basis, out, "conjugated"), U


def series_conjugate(series: list, F, j: int, hbar: float) -> list:
    """Conjugate a truncated eps-series by ``exp(-1j eps^j F/hbar)``.

    Uses ``U^* A U = sum_n (1/n!) (1j eps^j / hbar)^n ad_F^n (A)``.
    """
    N = len(series) - 1
    out = [c.copy() for c in series]
    for m, A in enumerate(series):
        term = A
        n = 1
        while m + n * j <= N:
            term = (1j / hbar) * (F @ term - term @ F)
            out[m + n * j] = out[m + n * j] + term / factorial(n)
            n += 1
    return out


@dataclass
class NormalFormStep:
    j: int
    F: sp.csr_matrix
    unitary: np.ndarray | None
    averaged_remainder: sp.csr_matrix
    residual_norm: float
    F_symbol: WeylSymbol | None = None


@dataclass
class NormalFormResult:
    steps: list
    matrix: OperatorMatrix | None
    series: list
    residual_norm: float
    band: np.ndarray

    def remainder(self, j: int) -> np.ndarray:
        """Averaged order-j coefficient ``<R_j>`` as a dense array."""
        return self.steps[j - 1].averaged_remainder.toarray()

    @property
    def unitary(self) -> np.ndarray:
        """Total conjugating unitary ``U_1 U_2 ... U_N``."""
        U = None
        for st in self.steps:
            U = st.unitary if U is None else U @ st.unitary
        return U


def normal_form_iterate(
    H,
    V,
    spec: FrequencySpec,
    eps: float,
    N: int,
    band: np.ndarray | None = None,
    V_symbol: WeylSymbol | None = None,
) -> NormalFormResult:
    """N steps of the quantum Birkhoff normal form for ``H + eps V``.

    ``band`` selects the basis states on which residual norms are measured
    (defaults to the reliable band for a degree-2 perturbation).  With
    ``eps == 0`` only the eps-independent series data are computed.
    """
    if not 1 <= N <= 4:
        raise ValueError("N must be between 1 and 4")
    basis = H.basis
    hbar = basis.hbar
    if band is None:
        band = basis.band_mask(spec.omega, degree=2 * N)
    Hs = sp.csr_matrix(_entries(H).astype(complex))
    Vs = V if sp.issparse(V) else sp.csr_matrix(_entries(V).astype(complex))
    zero = sp.csr_matrix(Hs.shape, dtype=complex)
    series = [Hs, Vs.astype(complex)] + [zero.copy() for _ in range(N - 1)]
    P = None
    if eps != 0:
        P = Hs.toarray() + eps * Vs.toarray()
    steps = []
    for j in range(1, N + 1):
        F = solve_quantum_cohomological(series[j], spec, basis)
        series = series_conjugate(series, F, j, hbar)
        U, r = None, 0.0
        if P is not None:
            U = unitary_exp(F, eps**j / hbar)
            P = U.conj().T @ P @ U
            r = band_norm(split_resonant(P, basis, spec)[1], band)
        sym = None
        if j == 1 and V_symbol is not None:
            sym = solve_cohomological(nonresonant_part(V_symbol, spec), spec)
        avg, _ = split_resonant(series[j], basis, spec)
        steps.append(NormalFormStep(j, F, U, avg, r, sym))
    final = None if P is None else OperatorMatrix(basis, P, f"normal form N={N}")
    return NormalFormResult(steps, final, series, steps[-1].residual_norm, band)


def offresonant_residual(P, spec: FrequencySpec, band: np.ndarray) -> float:
    return band_norm(split_resonant(_entries(P), P.basis, spec)[1], band)


def observable_stability(U: np.ndarray, a: WeylSymbol, basis: HermiteBasisSpec, band: np.ndarray) -> float:
    """Band-restricted ``||U Op(a) U^* - Op(a)||``."""
    A = quantize(a, basis).entries
    return band_norm(U @ A @ U.conj().T - A, band)
