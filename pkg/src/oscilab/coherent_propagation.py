"""Coherent states, metaplectic Gaussians and leading-order propagation.

A linear symplectic map ``F = [[Re Q, Im Q], [Re P, Im P]]`` sends the
ground state to the Gaussian ``det(Q)^(-1/2) exp(1j B x.x / 2 hbar)`` with
``B = P Q^-1``.  In the Fock basis that Gaussian is
``c0 exp(a^+ S a^+ / 2)|0>`` with ``S = (I - iB)^-1 (I + iB)``, so its
coefficients follow from the first-order recursion

    sqrt(m_j + 1) c[m + e_j] = sum_k S_jk sqrt(m_k) c[m - e_k] + beta_j c[m]

where ``beta = alpha - S conj(alpha)`` carries the displacement.  The
recursion only looks downward, so every coefficient inside the basis is
exact regardless of truncation.

The square root of ``det Q`` is tracked by continuity along the path; over
a full period of the one-dimensional oscillator it returns to ``-1``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.integrate import solve_ivp

from .classical_flow import (
    FlowError,
    LinearizedFrame,
    as_array,
    averaged_flow,
    oscillator_flow,
    rotation_matrix,
    symplectic_J,
    symplectic_defect,
)
from .frequency import ReducedHamiltonianSet
from .quantization import BandError, HermiteBasisSpec, ladder
from .symbol_algebra import WeylSymbol

EXCITATION_CAP = 6


class BranchError(ArithmeticError):
    """The square-root branch of ``det Q`` could not be followed."""


class EhrenfestError(RuntimeError):
    pass


def coherent_alpha(z, hbar: float) -> np.ndarray:
    """Complex amplitudes ``(x + i xi) / sqrt(2 hbar)`` per plane."""
    z = as_array(z)
    d = z.shape[-1] // 2
    return (z[..., :d] + 1j * z[..., d:]) / np.sqrt(2 * hbar)


def _single_displacement(alpha: complex, nmax: int) -> np.ndarray:
    pad = int(np.ceil(abs(alpha) ** 2 + 12 * abs(alpha) + 40))
    n = nmax + pad
    a = ladder(n).toarray()
    G = alpha * a.T - np.conj(alpha) * a
    return sla.expm(G)[:nmax, :nmax]


def displacement(z0, basis: HermiteBasisSpec, tol: float = 1e-10) -> np.ndarray:
    """Matrix of the Weyl-Heisenberg translation ``exp(alpha a^+ - conj(alpha) a)``.

    Each plane is exponentiated in an enlarged Fock space and truncated; the
    planes are combined by Kronecker products.
    """
    alpha = coherent_alpha(z0, basis.hbar)
    if len(alpha) != basis.d:
        raise ValueError("phase point dimension does not match the basis")
    mats = [_single_displacement(complex(al), basis.nmax) for al in alpha]
    for al, M in zip(alpha, mats):
        if 1.0 - np.linalg.norm(M[:, 0]) ** 2 > tol:
            raise BandError(f"coherent amplitude {abs(al):.3g} overflows the basis")
    out = mats[0]
    for M in mats[1:]:
        out = np.kron(out, M)
    return out


def coherent_state(z0, basis: HermiteBasisSpec) -> np.ndarray:
    """Fock coefficients of the coherent state centred at ``z0``."""
    alpha = coherent_alpha(z0, basis.hbar)
    n = np.arange(basis.nmax)
    logfact = np.cumsum(np.log(np.maximum(n, 1)))
    vec = np.ones(1, dtype=complex)
    for al in alpha:
        if al == 0:
            col = (n == 0).astype(complex)
        else:
            col = np.exp(-abs(al) ** 2 / 2 + n * np.log(al) - 0.5 * logfact)
        vec = np.kron(vec, col)
    return vec


@dataclass
class StateVector:
    basis: HermiteBasisSpec
    coefficients: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.coefficients))

    def normalized(self) -> "StateVector":
        return StateVector(self.basis, self.coefficients / self.norm, dict(self.meta))

    def inner(self, other) -> complex:
        vec = other.coefficients if isinstance(other, StateVector) else np.asarray(other)
        return complex(np.vdot(self.coefficients, vec))

    def edge_mass(self, levels: int = 2) -> float:
        """Norm squared carried by the top ``levels`` Fock levels of any plane."""
        edge = np.any(self.basis.indices >= self.basis.nmax - levels, axis=1)
        return float(np.sum(np.abs(self.coefficients[edge]) ** 2))

    def in_band(self, tol: float = 1e-8) -> bool:
        return self.edge_mass() <= tol * max(self.norm**2, 1e-300)

    def to_json(self) -> dict:
        return {
            "basis": self.basis.to_json(),
            "real": self.coefficients.real.tolist(),
            "imag": self.coefficients.imag.tolist(),
            "meta": self.meta,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "StateVector":
        basis = HermiteBasisSpec.from_json(obj["basis"])
        coef = np.asarray(obj["real"]) + 1j * np.asarray(obj["imag"])
        return cls(basis, coef, obj.get("meta", {}))


def split_frame(F: np.ndarray):
    """``(Q, P)`` with ``F = [[Re Q, Im Q], [Re P, Im P]]``."""
    F = np.asarray(F, dtype=float)
    d = F.shape[-1] // 2
    Q = F[..., :d, :d] + 1j * F[..., :d, d:]
    P = F[..., d:, :d] + 1j * F[..., d:, d:]
    return Q, P


@dataclass(frozen=True)
class CoherentFrame:
    z0: np.ndarray
    frame: LinearizedFrame
    sqrt_detQ: complex
    gamma: float = 0.0

    def __post_init__(self):
        Q, _ = split_frame(self.frame.F)
        if abs(np.linalg.det(Q)) < 1e-12:
            raise BranchError("det Q vanishes")
        if np.min(np.linalg.eigvalsh(self.B.imag)) <= 0:
            raise BranchError("Im B is not positive definite")

    @property
    def F(self) -> np.ndarray:
        return self.frame.F

    @property
    def Q(self) -> np.ndarray:
        return split_frame(self.frame.F)[0]

    @property
    def P(self) -> np.ndarray:
        return split_frame(self.frame.F)[1]

    @property
    def B(self) -> np.ndarray:
        Q, P = split_frame(self.frame.F)
        B = P @ np.linalg.inv(Q)
        return 0.5 * (B + B.T)

    @property
    def point(self) -> np.ndarray:
        return self.frame.point

    @classmethod
    def identity(cls, z0) -> "CoherentFrame":
        z0 = as_array(z0)
        d = len(z0) // 2
        lf = LinearizedFrame(F=np.eye(2 * d), tau=np.zeros(d), s=0.0, point=z0)
        return cls(z0, lf, 1.0 + 0j, 0.0)


def follow_sqrt_det(Qs, start: complex = 1.0 + 0j, max_step: float = np.pi / 4) -> np.ndarray:
    """Continuous square roots of ``det Q`` along a sampled path.

    Raises :class:`BranchError` if consecutive samples rotate the
    determinant by ``max_step`` or more, i.e. the path is undersampled.
    """
    dets = np.linalg.det(np.asarray(Qs))
    out = np.empty(len(dets), dtype=complex)
    prev_det = start**2
    prev = start
    for i, D in enumerate(dets):
        if abs(np.angle(D / prev_det)) >= max_step:
            raise BranchError("det Q argument jumps too far between samples")
        r = np.sqrt(D)
        if abs(r - prev) > abs(r + prev):
            r = -r
        out[i] = r
        prev, prev_det = r, D
    return out


def _torus_leg(z0, tau, reduced: ReducedHamiltonianSet | None):
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    angles = reduced.times(tau) if reduced is not None else tau
    return tau, angles, oscillator_flow(z0, angles), rotation_matrix(angles)


def torus_leg_action(z0, tau, reduced: ReducedHamiltonianSet | None = None) -> float:
    """Symmetrized Legendre integral along the reduced multiflow leg.

    The integrand is ``H_j`` times the angular speed of plane ``j``, so the
    result is ``sum_j angle_j H_j(z0)``, which equals ``tau . Htilde(z0)``.
    """
    z0 = as_array(z0)
    _, angles, _, _ = _torus_leg(z0, tau, reduced)
    d = len(z0) // 2
    actions = 0.5 * (z0[:d] ** 2 + z0[d:] ** 2)
    return float(angles @ actions)


def _legendre_density(L: WeylSymbol, pts: np.ndarray) -> np.ndarray:
    # (x . d_x L + xi . d_xi L) / 2, which is (dx/ds . xi - x . dxi/ds) / 2
    g = L.gradient(pts)
    return 0.5 * np.sum(pts * g, axis=-1)


def action_integral(
    z0,
    tau,
    s: float,
    L: WeylSymbol | None,
    reduced: ReducedHamiltonianSet | None = None,
    nodes: int = 16,
    tol: float = 1e-12,
    max_nodes: int = 4096,
) -> float:
    """Action of the averaged-flow leg from ``Phi_tau(z0)`` to time ``s``.

    ``-s L(w) + int_0^s (dx/dr . xi - x . dxi/dr) / 2 dr`` with ``w`` the
    start of the leg.  Gauss-Legendre quadrature on the dense orbit, doubled
    until two successive values agree to ``tol``.
    """
    z0 = as_array(z0)
    if L is None or L.is_zero() or s == 0:
        return 0.0
    _, _, w, _ = _torus_leg(z0, tau, reduced)
    start = float(np.real(L.evaluate(w)))
    prev = None
    n = nodes
    while n <= max_nodes:
        x, wts = np.polynomial.legendre.leggauss(n)
        r = 0.5 * s * (x + 1)
        order = np.argsort(r) if s > 0 else np.argsort(-r)
        pts = np.empty((n, len(z0)))
        pts[order] = averaged_flow(w, r[order], L, check=False)
        val = 0.5 * s * float(np.sum(wts * _legendre_density(L, pts)))
        if prev is not None and abs(val - prev) <= tol * max(1.0, abs(val)):
            return -s * start + val
        prev = val
        n *= 2
    raise FlowError("action quadrature did not converge")


def averaged_leg(w, s_nodes, L: WeylSymbol | None, rtol: float = 1e-12, atol: float = 1e-12):
    """Points, linearizations and Legendre integrals of ``L``'s flow from ``w``.

    One integration of the augmented system (orbit, variational equation,
    action density) evaluated at increasing ``s_nodes``.
    """
    w = as_array(w)
    s_nodes = np.asarray(s_nodes, dtype=float)
    n2 = len(w)
    d = n2 // 2
    n = len(s_nodes)
    if L is None or L.is_zero() or np.all(s_nodes == 0):
        return np.repeat(w[None], n, 0), np.repeat(np.eye(n2)[None], n, 0), np.zeros(n)
    J = symplectic_J(d)

    def rhs(_, y):
        pt = y[:n2]
        F = y[n2 : n2 + n2 * n2].reshape(n2, n2)
        g = L.gradient(pt)
        Hs = L.hessian(pt)
        flow = np.concatenate([g[d:], -g[:d]])
        return np.concatenate([flow, (J @ Hs @ F).ravel(), [0.5 * pt @ g]])

    y0 = np.concatenate([w, np.eye(n2).ravel(), [0.0]])
    t_end = float(s_nodes[np.argmax(np.abs(s_nodes))])
    sol = solve_ivp(rhs, (0.0, t_end), y0, method="DOP853", rtol=rtol, atol=atol, dense_output=True)
    if not sol.success:
        raise FlowError(sol.message)
    Y = sol.sol(s_nodes).T
    return Y[:, :n2], Y[:, n2 : n2 + n2 * n2].reshape(n, n2, n2), Y[:, -1]


def coherent_frames(
    z0,
    tau,
    s_nodes,
    L: WeylSymbol | None,
    reduced: ReducedHamiltonianSet | None = None,
    ehrenfest: tuple[float, float] | None = None,
) -> list[CoherentFrame]:
    """Frames along ``s -> phi_s^L(Phi_tau(z0))`` at increasing ``s_nodes``.

    The torus leg is linear, so its branch ``exp(1j sum(angles) / 2)`` is
    exact.  Along the averaged-flow leg the branch is followed through a
    sampling that is refined until each step turns ``det Q`` by less than
    ``pi / 4``.  ``ehrenfest=(hbar, budget)`` enforces
    ``sqrt(hbar) * max ||F||_Frobenius <= budget``.
    """
    z0 = as_array(z0)
    s_nodes = np.atleast_1d(np.asarray(s_nodes, dtype=float))
    if np.any(np.diff(s_nodes) < 0) or (len(s_nodes) and s_nodes[0] < 0):
        raise ValueError("s_nodes must be nonnegative and increasing")
    tau, angles, w, R = _torus_leg(z0, tau, reduced)
    root = np.exp(0.5j * np.sum(angles))
    L_start = 0.0 if L is None or L.is_zero() else float(np.real(L.evaluate(w)))
    top = float(s_nodes[-1]) if len(s_nodes) else 0.0
    fine = 16
    while True:
        grid = np.union1d(np.linspace(0.0, top, fine + 1), s_nodes)
        pts, Fs, leg = averaged_leg(w, grid, L)
        Ftot = Fs @ R
        try:
            roots = follow_sqrt_det(split_frame(Ftot)[0], start=root)
            break
        except BranchError:
            fine *= 2
            if fine > 2**16:
                raise
    if ehrenfest is not None:
        hbar, budget = ehrenfest
        theta = float(np.max(np.linalg.norm(Ftot, axis=(1, 2))))
        if np.sqrt(hbar) * theta > budget:
            raise EhrenfestError(f"sqrt(hbar) theta = {np.sqrt(hbar) * theta:.3g} exceeds {budget}")
    pick = np.searchsorted(grid, s_nodes)
    frames = []
    for i in pick:
        F = Ftot[i]
        if symplectic_defect(F) > 1e-8:
            raise FlowError("linearized flow lost symplecticity")
        lf = LinearizedFrame(F=F, tau=tau, s=float(grid[i]), point=pts[i])
        gamma = -grid[i] * L_start + leg[i]
        frames.append(CoherentFrame(z0, lf, complex(roots[i]), float(gamma)))
    return frames


def _ground_overlap(Q: np.ndarray, P: np.ndarray, sqrt_detQ: complex) -> complex:
    """``<Psi_0, F Psi_0>`` = ``2^(d/2) det(Q)^(-1/2) det(I - iB)^(-1/2)``."""
    d = len(Q)
    B = P @ np.linalg.inv(Q)
    lam = np.linalg.eigvals(np.eye(d) - 1j * B)
    return 2 ** (d / 2) / sqrt_detQ * np.prod(1 / np.sqrt(lam))


def _squeeze(Q: np.ndarray, P: np.ndarray) -> np.ndarray:
    d = len(Q)
    B = P @ np.linalg.inv(Q)
    B = 0.5 * (B + B.T)
    S = np.linalg.solve(np.eye(d) - 1j * B, np.eye(d) + 1j * B)
    return 0.5 * (S + S.T)


def gaussian_coefficients(S, beta, c0, d: int, nmax: int) -> np.ndarray:
    """Fock coefficients from the downward recursion, batched.

    ``S`` (n, d, d), ``beta`` (n, d), ``c0`` (n,) give an (n, nmax**d)
    array in the C-ordered tensor basis.
    """
    S = np.asarray(S, dtype=complex).reshape(-1, d, d)
    beta = np.asarray(beta, dtype=complex).reshape(-1, d)
    c0 = np.asarray(c0, dtype=complex).reshape(-1)
    n = len(c0)
    C = np.zeros((n,) + (nmax,) * d, dtype=complex)
    C[(slice(None),) + (0,) * d] = c0
    root = np.sqrt(np.arange(nmax + 1, dtype=float))
    for idx in itertools.product(range(nmax), repeat=d):
        j = next((i for i, v in enumerate(idx) if v > 0), None)
        if j is None:
            continue
        m = list(idx)
        m[j] -= 1
        acc = beta[:, j] * C[(slice(None),) + tuple(m)]
        for k in range(d):
            if m[k] > 0:
                mk = list(m)
                mk[k] -= 1
                acc = acc + S[:, j, k] * root[m[k]] * C[(slice(None),) + tuple(mk)]
        C[(slice(None),) + idx] = acc / root[m[j] + 1]
    return C.reshape(n, -1)


def gaussian_states(frames, basis: HermiteBasisSpec, centers=None) -> np.ndarray:
    """Coefficients of ``T(center) F Psi_0`` for each frame, shape (n, size).

    ``centers`` defaults to each frame's orbit point; pass zeros for the
    undisplaced metaplectic image.  No action phase is applied.
    """
    d, hbar = basis.d, basis.hbar
    Ss, betas, c0s = [], [], []
    for i, fr in enumerate(frames):
        Q, P = split_frame(fr.F)
        S = _squeeze(Q, P)
        w = fr.point if centers is None else centers[i]
        al = coherent_alpha(w, hbar)
        g0 = _ground_overlap(Q, P, fr.sqrt_detQ)
        Ss.append(S)
        betas.append(al - S @ np.conj(al))
        c0s.append(g0 * np.exp(-0.5 * np.vdot(al, al).real + 0.5 * np.conj(al) @ S @ np.conj(al)))
    return gaussian_coefficients(np.array(Ss), np.array(betas), np.array(c0s), d, basis.nmax)


def _mode_ops(basis: HermiteBasisSpec, nmax: int):
    a = ladder(nmax)
    eye = sp.identity(nmax, format="csr")
    ops = []
    for j in range(basis.d):
        mats = [a if k == j else eye for k in range(basis.d)]
        M = mats[0]
        for X in mats[1:]:
            M = sp.kron(M, X, format="csr")
        ops.append(M)
    return ops


def metaplectic_state(frame: CoherentFrame, nu, basis: HermiteBasisSpec) -> StateVector:
    """``F Psi_nu`` for the metaplectic operator of ``frame`` (no translation).

    Excitations use ``F a_j^+ F^* = Op(zbar_j o F^-1) / sqrt(2 hbar)``,
    which is ``(sum_k (u - iw)_jk a_k + (u + iw)_jk a_k^+) / 2`` with
    ``u, w`` the x and xi rows of ``zbar o F^-1``.
    """
    nu = tuple(int(v) for v in nu)
    if len(nu) != basis.d or min(nu) < 0:
        raise ValueError("bad excitation multi-index")
    if sum(nu) > EXCITATION_CAP:
        raise ValueError(f"excitation order above {EXCITATION_CAP}")
    d = basis.d
    big = basis.nmax + sum(nu)
    ext = HermiteBasisSpec(d, basis.hbar, big)
    vec = gaussian_states([frame], ext, centers=np.zeros((1, 2 * d)))[0]
    if sum(nu):
        J = symplectic_J(d)
        G = -J @ frame.F.T @ J
        u = G[:d, :d] - 1j * G[d:, :d]
        w = G[:d, d:] - 1j * G[d:, d:]
        lower, upper = u - 1j * w, u + 1j * w
        ops = _mode_ops(ext, big)
        norm = 1.0
        for j, count in enumerate(nu):
            create = sum(0.5 * (lower[j, k] * ops[k] + upper[j, k] * ops[k].T) for k in range(d))
            for c in range(count):
                vec = create @ vec
                norm *= np.sqrt(c + 1)
        vec = vec / norm
    keep = np.all(np.array(list(itertools.product(range(big), repeat=d))) < basis.nmax, axis=1)
    out = StateVector(basis, vec[keep], {"nu": list(nu)})
    if 1.0 - out.norm**2 > 1e-6:
        raise BandError("metaplectic image overflows the basis")
    return out


def propagate_leading(
    z0,
    tau,
    s: float,
    L: WeylSymbol | None,
    basis: HermiteBasisSpec,
    reduced: ReducedHamiltonianSet | None = None,
    ehrenfest_budget: float = 2.0,
    band_tol: float = 1e-8,
) -> StateVector:
    """Leading-order approximation of ``exp(-is L/hbar) exp(-i tau.Htilde/hbar) Psi_z0``.

    Returns ``exp(i theta / hbar) T(z(tau, s)) F(tau, s) Psi_0`` where the
    phase collects the averaged-flow action, the Legendre integral of the
    torus leg, and ``-tau . Htilde(z0)``.  The last two cancel exactly since
    the reduced Hamiltonians are quadratic.  For quadratic ``L`` the result
    is exact.
    """
    z0 = as_array(z0)
    fr = coherent_frames(z0, tau, [float(s)], L, reduced, ehrenfest=(basis.hbar, ehrenfest_budget))[0]
    tau_arr = np.atleast_1d(np.asarray(tau, dtype=float))
    if reduced is not None:
        htilde = float(tau_arr @ reduced.values(z0))
    else:
        d = len(z0) // 2
        htilde = float(tau_arr @ (0.5 * (z0[:d] ** 2 + z0[d:] ** 2)))
    phase = fr.gamma + torus_leg_action(z0, tau, reduced) - htilde
    vec = gaussian_states([fr], basis)[0] * np.exp(1j * phase / basis.hbar)
    out = StateVector(basis, vec, {"tau": tau_arr.tolist(), "s": float(s)})
    if 1.0 - out.norm**2 > band_tol:
        raise BandError("propagated state overflows the basis")
    return out
