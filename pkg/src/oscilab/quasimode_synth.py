"""Quasimodes from superposed propagated coherent states.

The state is a double integral over the reduced torus and a time window::

    sum_tau sum_s  chi_T(s) exp(i (M . tau + E' s) / hbar) psi(tau, s)

where ``psi(tau, s)`` is the leading-order propagated coherent state.  For
an averaged perturbation that is invariant under the reduced torus action,
``psi(tau, s) = exp(-i tau . Htilde / hbar) psi(0, s)`` holds exactly for the
leading-order formula, so the torus sum reduces to a diagonal weight on
the Fock basis.  The time integral uses the trapezoid rule, which is
spectrally accurate because ``chi_T`` vanishes to infinite order at both ends.

Finally the first normal-form unitary ``exp(-i eps F_1 / hbar)`` maps the
quasimode of ``H + eps <V>`` to one of ``H + eps V``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply

from .classical_flow import as_array, averaged_flow, flow_with_frame, rotation_matrix
from .coherent_propagation import StateVector, coherent_frames, gaussian_states
from .frequency import FrequencySpec, ReducedHamiltonianSet, reduced_hamiltonians
from .normal_form import solve_quantum_cohomological
from .quantization import HermiteBasisSpec, _entries, quantize
from .symbol_algebra import WeylSymbol, average, compose_linear


class QuadratureError(RuntimeError):
    pass


class OverlapError(ValueError):
    """Superposed quasimodes live on tori that are too close."""


def _smooth_step(u):
    u = np.asarray(u, dtype=float)
    f = np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)
    g = np.where(u < 1, np.exp(-1.0 / np.where(u < 1, 1.0 - u, 1.0)), 0.0)
    return f / (f + g)


@dataclass(frozen=True)
class BumpFunction:
    """Smooth ``chi`` on (0, 1) with values in [0, 1].

    Product of two smooth steps of width ``ramp``; ``ramp = 0.5`` is the
    plain bump with ``chi(1/2) = 1``.
    """

    ramp: float = 0.5
    samples: int = 20001

    def __post_init__(self):
        if not 0 < self.ramp <= 0.5:
            raise ValueError("ramp must lie in (0, 1/2]")

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        inside = (s > 0) & (s < 1)
        val = _smooth_step(s / self.ramp) * _smooth_step((1 - s) / self.ramp)
        return np.where(inside, val, 0.0)

    def scaled(self, s, T: float):
        """``chi_T(s) = chi(s / T)``."""
        return self(np.asarray(s, dtype=float) / T)

    def _grid(self):
        s = np.linspace(0, 1, self.samples)
        return s, self(s)

    @property
    def l2(self) -> float:
        s, v = self._grid()
        return float(np.sqrt(np.trapezoid(v**2, s)))

    @property
    def l1(self) -> float:
        s, v = self._grid()
        return float(np.trapezoid(v, s))

    @property
    def derivative_l2(self) -> float:
        s, v = self._grid()
        dv = np.gradient(v, s)
        return float(np.sqrt(np.trapezoid(dv**2, s)))

    @property
    def c_chi(self) -> float:
        """``||chi'|| / ||chi||``, the constant in the width estimate."""
        return self.derivative_l2 / self.l2


def _actions(z0) -> np.ndarray:
    z0 = as_array(z0)
    d = len(z0) // 2
    return 0.5 * (z0[:d] ** 2 + z0[d:] ** 2)


def reduced_eigenvalues(reduced: ReducedHamiltonianSet, basis: HermiteBasisSpec) -> np.ndarray:
    """Eigenvalue of each quantized reduced Hamiltonian on each Fock state, (size, d_E)."""
    C = reduced.coeff_matrix
    return basis.hbar * (basis.indices @ C.T + 0.5 * C.sum(axis=1))


@dataclass(frozen=True)
class QuasiEigenvalue:
    value: float
    lattice: np.ndarray
    weights: np.ndarray
    shift: float


def quasi_eigenvalue(
    z0,
    Vavg: WeylSymbol | None,
    eps: float,
    basis: HermiteBasisSpec,
    spec: FrequencySpec,
) -> QuasiEigenvalue:
    """Nearest reduced-lattice values plus the first-order shift.

    ``lattice[j]`` is the eigenvalue of the j-th quantized reduced
    Hamiltonian closest to its classical value at ``z0``; the oscillator
    part of the quasi-eigenvalue weights them with the torus coefficients
    ``v_tilde`` (all ones when the frequencies are commensurable).
    """
    z0 = as_array(z0)
    reduced = reduced_hamiltonians(spec, _actions(z0))
    eig = reduced_eigenvalues(reduced, basis)
    target = reduced.values(z0)
    lattice = np.empty(reduced.d_E)
    for j in range(reduced.d_E):
        vals = np.unique(np.round(eig[:, j], 12))
        lattice[j] = vals[np.argmin(np.abs(vals - target[j]))]
    weights = np.asarray(reduced.v_tilde, dtype=float)
    shift = 0.0
    if Vavg is not None and eps != 0:
        shift = eps * float(np.real(Vavg.evaluate(z0)))
    return QuasiEigenvalue(float(weights @ lattice + shift), lattice, weights, shift)


def target_pairing(
    a: WeylSymbol,
    z0,
    T: float,
    chi: BumpFunction,
    Vavg: WeylSymbol | None,
    spec: FrequencySpec,
    nodes: int = 400,
) -> float:
    """``int chi_T(s)^2 <a>(phi_s z0) ds / ||chi_T||^2`` by the trapezoid rule."""
    abar = average(a, spec)
    s = np.linspace(0, T, nodes + 1)
    w = chi.scaled(s, T) ** 2
    if Vavg is None or Vavg.is_zero():
        pts = np.repeat(as_array(z0)[None], len(s), 0)
    else:
        pts = averaged_flow(z0, s, Vavg, check=False)
    vals = np.real(abar.evaluate(pts))
    return float(np.sum(w * vals) / np.sum(w))


def target_defects(
    observables: dict,
    z0,
    T: float,
    chi: BumpFunction,
    Vavg: WeylSymbol,
    spec: FrequencySpec,
    times,
    s_values,
) -> dict:
    """Defects of the target measure under ``phi_s^<V> o phi_t^H``.

    Same table layout as ``measure_lab.invariance_test``; needs a quadratic
    ``<V>`` so that composed observables stay polynomial.
    """
    if not (Vavg.is_zero() or Vavg.max_degree <= 2):
        raise ValueError("target defects need a quadratic averaged perturbation")
    d = spec.d
    out = {}
    for name, a in observables.items():
        base = target_pairing(a, z0, T, chi, Vavg, spec)
        table = np.zeros((len(times), len(s_values)))
        for k, s in enumerate(s_values):
            G = np.eye(2 * d) if s == 0 or Vavg.is_zero() else flow_with_frame(np.zeros(2 * d), [s], Vavg)[1][0]
            for i, t in enumerate(times):
                moved = compose_linear(a, G @ rotation_matrix(t * spec.omega))
                table[i, k] = abs(target_pairing(moved, z0, T, chi, Vavg, spec) - base)
        out[name] = table
    return out


@dataclass
class QuasimodeResult:
    state: StateVector
    lam: float
    width: float | None
    T: float
    grid: dict
    target_measure: dict
    pre_norm: float
    meta: dict = field(default_factory=dict)


def _normalization(z0, Vavg, reduced, T, chi, hbar, tol=1e-8):
    """Prefactor of the quasimode integral and whether the time leg is degenerate."""
    z0 = as_array(z0)
    d = len(z0) // 2
    C = reduced.coeff_matrix
    # half-gradients: with full gradients the squared norm tends to 2 per integrated direction
    dH = 0.5 * np.concatenate([C * z0[:d], C * z0[d:]], axis=1)
    vol = (2 * np.pi) ** reduced.d_E
    if Vavg is not None and not Vavg.is_zero():
        A = np.vstack([dH, 0.5 * Vavg.gradient(z0)[None]])
        sv = np.linalg.svd(A, compute_uv=False)
        if sv[-1] > tol * sv[0]:
            G = A @ A.T
            CT = np.sqrt(np.linalg.det(G) / np.pi ** (reduced.d_E + 1)) * vol / (T * chi.l2**2)
            return np.sqrt(CT / hbar ** ((reduced.d_E + 1) / 2)), False
    G = dH @ dH.T
    CT = np.sqrt(np.linalg.det(G) / np.pi**reduced.d_E) * vol / (T**2 * chi.l1**2)
    return np.sqrt(CT / hbar ** (reduced.d_E / 2)), True


def _torus_weights(reduced, basis, lattice, n_tau: int) -> np.ndarray:
    """Trapezoid rule for ``mean_tau exp(i (M - lambda_k) . tau / hbar)``."""
    eig = reduced_eigenvalues(reduced, basis)
    m = np.rint((lattice[None, :] - eig) / basis.hbar)
    tau = 2 * np.pi * np.arange(n_tau) / n_tau
    out = np.ones(basis.size, dtype=complex)
    for j in range(reduced.d_E):
        vals, inv = np.unique(m[:, j], return_inverse=True)
        avg = np.exp(1j * np.outer(vals, tau)).mean(axis=1)
        out *= avg[inv]
    return out


def _time_states(z0, reduced, Vavg, Eprime, T, chi, basis, n_s, chunk=256):
    """Trapezoid sums over ``n_s`` and ``2 n_s`` panels of the time integral."""
    hbar = basis.hbar
    s = T * np.arange(1, 2 * n_s) / (2 * n_s)
    w = chi.scaled(s, T) * (T / (2 * n_s))
    keep = w > 1e-300
    s, w = s[keep], w[keep]
    odd = np.flatnonzero(keep) % 2 == 1
    d_E = reduced.d_E
    frames = coherent_frames(z0, np.zeros(d_E), s, Vavg, reduced, ehrenfest=(hbar, 2.0))
    fine = np.zeros(basis.size, dtype=complex)
    coarse = np.zeros(basis.size, dtype=complex)
    for lo in range(0, len(frames), chunk):
        part = frames[lo : lo + chunk]
        vecs = gaussian_states(part, basis)
        gam = np.array([f.gamma for f in part])
        ph = np.exp(1j * (gam + Eprime * s[lo : lo + chunk]) / hbar) * w[lo : lo + chunk]
        fine += ph @ vecs
        sel = odd[lo : lo + chunk]
        coarse += 2 * (ph[sel] @ vecs[sel])
    return fine, coarse, len(s)


def synthesize(
    z0,
    T: float,
    chi: BumpFunction,
    Vavg: WeylSymbol | None,
    eps: float,
    basis: HermiteBasisSpec,
    spec: FrequencySpec,
    V: WeylSymbol | None = None,
    n_tau: int | None = None,
    n_s: int | None = None,
    tol: float = 1e-3,
    max_refine: int = 4,
) -> QuasimodeResult:
    """Quasimode of ``H + eps V`` concentrated along the averaged orbit of ``z0``.

    ``Vavg`` is the averaged perturbation driving the time leg.  With ``V``
    given, the first normal-form unitary is applied and the width is
    measured against the quantized ``H + eps V``.  Grid sizes default to the
    phase-resolution rule and are doubled until the state moves by less than
    ``tol``.
    """
    z0 = as_array(z0)
    hbar = basis.hbar
    if T <= 0:
        raise ValueError("time window must be positive")
    reduced = reduced_hamiltonians(spec, _actions(z0))
    qe = quasi_eigenvalue(z0, Vavg, eps, basis, spec)
    moving = Vavg is not None and not Vavg.is_zero()
    Eprime = float(np.real(Vavg.evaluate(z0))) if moving else 0.0
    prefactor, degenerate = _normalization(z0, Vavg, reduced, T, chi, hbar)

    if n_tau is None:
        n_tau = int(np.ceil(8 * (np.abs(qe.lattice).sum() + 1) / hbar))
    if n_s is None:
        n_s = int(np.ceil(T * (8 * abs(Eprime) + 1) / hbar)) if moving else 8

    D = _torus_weights(reduced, basis, qe.lattice, n_tau)
    D2 = _torus_weights(reduced, basis, qe.lattice, 2 * n_tau)
    tau_change = float(np.max(np.abs(D - D2)))

    for _ in range(max_refine + 1):
        fine, coarse, used = _time_states(z0, reduced, Vavg, Eprime, T, chi, basis, n_s)
        nf = np.linalg.norm(D * fine)
        if nf == 0:
            raise QuadratureError("quasimode integral vanished; the torus misses the lattice")
        s_change = float(np.linalg.norm(D * (fine - coarse)) / nf)
        if s_change < tol:
            break
        n_s *= 2
    else:
        raise QuadratureError(f"time quadrature did not settle (change {s_change:.2e})")
    if tau_change * np.sqrt(basis.size) >= tol:
        raise QuadratureError("torus quadrature did not settle")

    vec = prefactor * (D * fine)
    pre_norm = float(np.linalg.norm(vec))
    vec = vec / pre_norm

    width = None
    if V is not None and eps != 0:
        Vq = quantize(V, basis, sparse=True)
        F1 = solve_quantum_cohomological(sp.csr_matrix(Vq), spec, basis)
        vec = expm_multiply(-1j * (eps / hbar) * F1, vec)
        vec = vec / np.linalg.norm(vec)
        Hq = quantize(WeylSymbol.harmonic(spec.omega), basis, sparse=True)
        P = Hq + eps * Vq
        width = float(np.linalg.norm(P @ vec - qe.value * vec))
    elif eps == 0 or V is None:
        Hq = quantize(WeylSymbol.harmonic(spec.omega), basis, sparse=True)
        P = Hq if Vavg is None or eps == 0 else Hq + eps * quantize(Vavg, basis, sparse=True)
        width = float(np.linalg.norm(P @ vec - qe.value * vec))

    state = StateVector(basis, vec, {"z0": z0.tolist(), "T": T})
    grid = {
        "n_tau": n_tau,
        "n_s": n_s,
        "s_nodes": used,
        "tau_doubling_change": tau_change,
        "s_doubling_change": s_change,
        "degenerate_time_leg": degenerate,
    }
    target = {
        "z0": z0.tolist(),
        "T": T,
        "lattice": qe.lattice.tolist(),
        "E_prime": Eprime,
        "chi_ramp": chi.ramp,
    }
    return QuasimodeResult(state, qe.value, width, T, grid, target, pre_norm, {"prefactor": prefactor})


def width(P, q: QuasimodeResult) -> float:
    """``||P psi - lambda psi||`` for a normalized quasimode."""
    M = P if sp.issparse(P) else _entries(P)
    psi = q.state.coefficients
    return float(np.linalg.norm(M @ psi - q.lam * psi) / np.linalg.norm(psi))


def superpose(
    results: list,
    P=None,
    hbar: float | None = None,
    separation: float = 3.0,
) -> QuasimodeResult:
    """Combine quasimodes with amplitudes ``sqrt(alpha_j)``.

    The tori through the base points must be pairwise separated by more
    than ``separation * sqrt(hbar)`` in action space.  The combined
    quasi-eigenvalue is ``sum alpha_j lambda_j``; the reported bound adds
    each member's width and eigenvalue mismatch.
    """
    alphas = np.array([float(a) for a, _ in results])
    if np.any(alphas <= 0) or abs(alphas.sum() - 1) > 1e-12:
        raise ValueError("weights must be positive and sum to one")
    members = [q for _, q in results]
    if len(members) == 1:
        return members[0]
    basis = members[0].state.basis
    hbar = basis.hbar if hbar is None else hbar
    acts = [_actions(np.asarray(q.target_measure["z0"])) for q in members]
    for i in range(len(acts)):
        for j in range(i):
            if np.max(np.abs(acts[i] - acts[j])) <= separation * np.sqrt(hbar):
                raise OverlapError(f"tori {j} and {i} are not separated")
    lam = float(alphas @ np.array([q.lam for q in members]))
    vec = sum(np.sqrt(a) * q.state.coefficients for a, q in zip(alphas, members))
    pre = float(np.linalg.norm(vec))
    vec = vec / pre
    bound = float(sum(np.sqrt(a) * ((q.width or 0.0) + abs(q.lam - lam)) for a, q in zip(alphas, members)))
    w = None
    if P is not None:
        M = P if sp.issparse(P) else _entries(P)
        w = float(np.linalg.norm(M @ vec - lam * vec))
    T = max(q.T for q in members)
    return QuasimodeResult(
        StateVector(basis, vec, {"members": len(members)}),
        lam,
        w,
        T,
        {"members": [q.grid for q in members]},
        {"weights": alphas.tolist(), "members": [q.target_measure for q in members]},
        pre,
        {"width_bound": bound},
    )
