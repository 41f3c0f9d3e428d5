"""Classical dynamics: oscillator multiflows, averaged flows, linearizations.

Phase points are plain arrays ``(x_1..x_d, xi_1..xi_d)``; :class:`PhasePoint`
is a small convenience wrapper accepted wherever an array is.  Hamilton's
equations are ``dx/ds = d_xi h`` and ``dxi/ds = -d_x h``, i.e.
``dz/ds = J grad h`` with ``J = [[0, I], [-I, 0]]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .frequency import FrequencySpec, ReducedHamiltonianSet, reduced_hamiltonians
from .symbol_algebra import WeylSymbol


class FlowError(RuntimeError):
    pass


@dataclass(frozen=True)
class PhasePoint:
    x: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).ravel()
        xi = np.asarray(self.xi, dtype=float).ravel()
        if x.shape != xi.shape or not (np.all(np.isfinite(x)) and np.all(np.isfinite(xi))):
            raise ValueError("phase point needs finite x and xi of equal length")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "xi", xi)

    @property
    def d(self) -> int:
        return len(self.x)

    def __array__(self, dtype=None, copy=None):
        return np.concatenate([self.x, self.xi]).astype(dtype or float)

    @classmethod
    def from_array(cls, z) -> "PhasePoint":
        z = np.asarray(z, dtype=float)
        d = len(z) // 2
        return cls(z[:d], z[d:])

    @classmethod
    def from_complex(cls, zc) -> "PhasePoint":
        zc = np.asarray(zc, dtype=complex)
        return cls(zc.real, zc.imag)


def as_array(z) -> np.ndarray:
    return np.asarray(z, dtype=float)


def symplectic_J(d: int) -> np.ndarray:
    eye = np.eye(d)
    zero = np.zeros((d, d))
    return np.block([[zero, eye], [-eye, zero]])


def to_complex(z) -> np.ndarray:
    z = as_array(z)
    d = z.shape[-1] // 2
    return z[..., :d] + 1j * z[..., d:]


def from_complex(zc) -> np.ndarray:
    zc = np.asarray(zc)
    return np.concatenate([zc.real, zc.imag], axis=-1)


def oscillator_flow(z, tau) -> np.ndarray:
    """Rotate plane j by angle ``tau_j``: ``z_j -> exp(-1j tau_j) z_j``.

    Broadcasts over leading axes of ``z`` (..., 2d) and ``tau`` (..., d).
    """
    zc = to_complex(z)
    return from_complex(zc * np.exp(-1j * np.asarray(tau, dtype=float)))


def rotation_matrix(tau) -> np.ndarray:
    """Differential of :func:`oscillator_flow` at angles ``tau``."""
    tau = np.asarray(tau, dtype=float)
    c, s = np.diag(np.cos(tau)), np.diag(np.sin(tau))
    return np.block([[c, s], [-s, c]])


def harmonic_flow(z, spec: FrequencySpec, t: float) -> np.ndarray:
    return oscillator_flow(z, t * spec.omega)


def _gradient_of(h) -> Callable:
    if isinstance(h, WeylSymbol):
        return h.gradient
    return h


def check_gradient(h: WeylSymbol, grad: Callable, z, step: float = 1e-6, tol: float = 1e-5) -> float:
    """Compare a gradient evaluator against central differences of ``h``."""
    z = as_array(z)
    fd = np.empty_like(z)
    for i in range(len(z)):
        e = np.zeros_like(z)
        e[i] = step
        fd[i] = np.real(h.evaluate(z + e) - h.evaluate(z - e)) / (2 * step)
    err = float(np.max(np.abs(fd - np.asarray(grad(z)))))
    if err > tol * max(1.0, float(np.max(np.abs(fd)))):
        raise FlowError(f"gradient evaluator inconsistent with symbol (error {err:.3g})")
    return err


def averaged_flow(
    z,
    s: float | Sequence[float],
    h,
    rtol: float = 1e-12,
    atol: float = 1e-12,
    check: bool = True,
) -> np.ndarray:
    """Hamiltonian flow of ``h`` (a WeylSymbol or gradient callable).

    ``s`` may be a scalar or an increasing sequence of output times.
    Integrated with the embedded 8(5,3) Dormand-Prince scheme.
    """
    z0 = as_array(z)
    d = len(z0) // 2
    grad = _gradient_of(h)
    if check and isinstance(h, WeylSymbol):
        check_gradient(h, grad, z0)
    times = np.atleast_1d(np.asarray(s, dtype=float))
    scalar = np.ndim(s) == 0

    def rhs(_, y):
        g = grad(y)
        return np.concatenate([g[d:], -g[:d]])

    if np.all(times == 0):
        out = np.repeat(z0[None, :], len(times), axis=0)
        return out[0] if scalar else out
    t_end = float(times[np.argmax(np.abs(times))])
    sol = solve_ivp(rhs, (0.0, t_end), z0, method="DOP853", rtol=rtol, atol=atol, dense_output=True)
    if not sol.success:
        raise FlowError(sol.message)
    out = sol.sol(times).T
    return out[0] if scalar else out


def transport(points, s: float, h: WeylSymbol, rtol: float = 1e-10, atol: float = 1e-10) -> np.ndarray:
    """Move a batch of phase points (n, 2d) along the flow of ``h`` for time ``s``.

    All points share one stacked integration, so the step size is set by
    the hardest point.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if s == 0 or len(pts) == 0:
        return pts.copy()
    n, n2 = pts.shape
    d = n2 // 2

    def rhs(_, y):
        g = h.gradient(y.reshape(n, n2))
        return np.concatenate([g[:, d:], -g[:, :d]], axis=1).ravel()

    sol = solve_ivp(rhs, (0.0, float(s)), pts.ravel(), method="DOP853", rtol=rtol, atol=atol)
    if not sol.success:
        raise FlowError(sol.message)
    return sol.y[:, -1].reshape(n, n2)


def flow_with_frame(z, times, h: WeylSymbol, rtol: float = 1e-12, atol: float = 1e-12):
    """Orbit and linearized flow ``F`` with ``dF/ds = J Hess(h) F``, ``F(0)=I``.

    Returns ``(points, frames)`` of shapes (n, 2d) and (n, 2d, 2d).
    """
    z0 = as_array(z)
    n2 = len(z0)
    d = n2 // 2
    J = symplectic_J(d)
    times = np.atleast_1d(np.asarray(times, dtype=float))

    def rhs(_, y):
        pt = y[:n2]
        F = y[n2:].reshape(n2, n2)
        g = h.gradient(pt)
        Hs = h.hessian(pt)
        return np.concatenate([np.concatenate([g[d:], -g[:d]]), (J @ Hs @ F).ravel()])

    y0 = np.concatenate([z0, np.eye(n2).ravel()])
    if np.all(times == 0):
        return np.repeat(z0[None], len(times), 0), np.repeat(np.eye(n2)[None], len(times), 0)
    t_end = float(times[np.argmax(np.abs(times))])
    sol = solve_ivp(rhs, (0.0, t_end), y0, method="DOP853", rtol=rtol, atol=atol, dense_output=True)
    if not sol.success:
        raise FlowError(sol.message)
    Y = sol.sol(times).T
    return Y[:, :n2], Y[:, n2:].reshape(-1, n2, n2)


def symplectic_defect(F: np.ndarray) -> float:
    d = F.shape[-1] // 2
    J = symplectic_J(d)
    return float(np.max(np.abs(np.swapaxes(F, -1, -2) @ J @ F - J)))


def symplectic_polish(F: np.ndarray) -> np.ndarray:
    """Nearby symplectic matrix via one Newton step on ``F^T J F = J``."""
    d = F.shape[-1] // 2
    J = symplectic_J(d)
    E = F.T @ J @ F - J
    return F + 0.5 * F @ J @ E


@dataclass(frozen=True)
class LinearizedFrame:
    F: np.ndarray
    tau: np.ndarray
    s: float
    point: np.ndarray


def linearized_flow(
    z0,
    path: Sequence[tuple[Sequence[float], float]],
    L: WeylSymbol | None,
    reduced: ReducedHamiltonianSet | None = None,
    tol: float = 1e-8,
) -> list[LinearizedFrame]:
    """Frames along ``phi_s^L o Phi^reduced_tau (z0)`` for each ``(tau, s)``.

    The reduced multiflow is linear and handled in closed form; the flow of
    ``L`` is integrated together with its linearization.  Without
    ``reduced``, ``tau`` are plain per-plane angles.
    """
    z0 = as_array(z0)
    frames = []
    for tau, s in path:
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        angles = reduced.times(tau) if reduced is not None else tau
        R = rotation_matrix(angles)
        w = oscillator_flow(z0, angles)
        if L is None or s == 0 or L.is_zero():
            pt, F = w, R
        else:
            pts, Fs = flow_with_frame(w, [s], L)
            pt, F = pts[0], Fs[0] @ R
        if symplectic_defect(F) > tol:
            F = symplectic_polish(F)
            if symplectic_defect(F) > tol:
                raise FlowError("linearized flow lost symplecticity")
        frames.append(LinearizedFrame(F=F, tau=tau, s=float(s), point=pt))
    return frames


def hamiltonian_vector(h: WeylSymbol, z) -> np.ndarray:
    g = h.gradient(z)
    d = g.shape[-1] // 2
    return np.concatenate([g[..., d:], -g[..., :d]], axis=-1)


def theta_growth(
    z0,
    T: float,
    L: WeylSymbol | None,
    spec: FrequencySpec,
    samples: int = 32,
) -> float:
    """Sampled growth constant ``max sqrt(tr(f^T f'))`` over the (t, s) grid.

    ``f(t, s)`` is the differential of ``phi_t^H o phi_s^L`` at ``z0``.
    """
    z0 = as_array(z0)
    if T == 0:
        n2 = len(z0)
        return float(np.sqrt(n2))
    ts = np.linspace(0, 2 * np.pi, samples, endpoint=False)
    ss = np.linspace(0, T, samples)
    if L is None or L.is_zero():
        Fs = np.repeat(np.eye(len(z0))[None], samples, 0)
    else:
        _, Fs = flow_with_frame(z0, ss, L)
    mats = np.array([rotation_matrix(t * spec.omega) @ F for t in ts for F in Fs])
    flat = mats.reshape(len(mats), -1)
    gram = flat @ flat.T
    return float(np.sqrt(max(gram.max(), 0.0)))


@dataclass(frozen=True)
class TorusMeasure:
    """Invariant measure of the reduced multiflow through ``z0``."""

    z0: np.ndarray
    reduced: ReducedHamiltonianSet

    @property
    def d_E(self) -> int:
        return self.reduced.d_E

    @classmethod
    def through(cls, z0, spec: FrequencySpec) -> "TorusMeasure":
        z0 = as_array(z0)
        d = spec.d
        E = 0.5 * (z0[:d] ** 2 + z0[d:] ** 2)
        return cls(z0, reduced_hamiltonians(spec, E))

    def grid(self, n: int) -> np.ndarray:
        """Uniform torus angles, shape (n**d_E, d_E)."""
        ang = 2 * np.pi * np.arange(n) / n
        mesh = np.meshgrid(*([ang] * self.d_E), indexing="ij")
        return np.stack(mesh, axis=-1).reshape(-1, self.d_E)

    def sample(self, n: int) -> np.ndarray:
        return oscillator_flow(self.z0, self.reduced.times(self.grid(n)))


@dataclass(frozen=True)
class BirkhoffAverage:
    T: float
    values: dict
    values_2T: dict
    converged: bool


def birkhoff_average_measure(
    mu: TorusMeasure,
    L: WeylSymbol,
    T: float,
    observables: dict,
    n_tau: int = 16,
    n_s: int = 64,
    tol: float = 1e-2,
) -> BirkhoffAverage:
    """Time averages ``(1/T) int_0^T int a o phi_s^L dmu ds`` at T and 2T."""
    pts0 = mu.sample(n_tau)
    nodes, weights = np.polynomial.legendre.leggauss(n_s)

    def table(TT):
        s = 0.5 * TT * (nodes + 1)
        w = 0.5 * weights
        acc = {name: 0.0 for name in observables}
        for p in pts0:
            traj = averaged_flow(p, s, L, check=False) if not L.is_zero() else np.repeat(p[None], n_s, 0)
            for name, a in observables.items():
                acc[name] += float(np.real(np.sum(w * a(traj))))
        return {k: v / len(pts0) for k, v in acc.items()}

    v1, v2 = table(T), table(2 * T)
    ok = all(abs(v1[k] - v2[k]) < tol for k in v1)
    return BirkhoffAverage(T, v1, v2, ok)
