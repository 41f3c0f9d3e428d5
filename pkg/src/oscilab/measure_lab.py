"""Empirical phase-space measures of states in the Hermite basis.

Husimi densities are evaluated through per-plane coherent overlaps
``<alpha|n> = exp(-|alpha|^2/2) conj(alpha)^n / sqrt(n!)`` contracted with the
tensor of Fock coefficients, which avoids building any d-dimensional
coherent state explicitly.  The density ``|<Psi_z, psi>|^2 / (2 pi hbar)^d``
integrates to one over phase space.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .classical_flow import flow_with_frame, harmonic_flow, rotation_matrix, transport
from .coherent_propagation import StateVector
from .frequency import FrequencySpec
from .quantization import HermiteBasisSpec, hermite_wavefunctions, quantize
from .symbol_algebra import WeylSymbol, compose_linear, poisson


class MeasureError(ValueError):
    pass


def _coeffs(psi) -> np.ndarray:
    return psi.coefficients if isinstance(psi, StateVector) else np.asarray(psi, dtype=complex)


@dataclass(frozen=True)
class PhaseGrid:
    """Square grid per plane: ``n`` points on ``[-extent, extent]`` in x and in xi."""

    extent: float
    n: int

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(-self.extent, self.extent, self.n)

    @property
    def cell(self) -> float:
        step = 2 * self.extent / (self.n - 1)
        return step * step

    @classmethod
    def covering(cls, energy: float, hbar: float, omega_min: float = 1.0, per_sqrt_hbar: float = 2.5):
        """Grid reaching past ``{H_j <= energy}`` by ``5 sqrt(hbar)`` with spacing ``sqrt(hbar)/per_sqrt_hbar``."""
        extent = np.sqrt(2 * energy / omega_min) + 5 * np.sqrt(hbar)
        step = np.sqrt(hbar) / per_sqrt_hbar
        return cls(float(extent), int(np.ceil(2 * extent / step)) + 1)


@dataclass
class EmpiricalMeasure:
    points: np.ndarray
    weights: np.ndarray
    captured: float
    hbar: float
    meta: dict = field(default_factory=dict)

    def integrate(self, f: Callable) -> float:
        return float(np.sum(self.weights * np.real(f(self.points))))

    def pair(self, a: WeylSymbol) -> float:
        return float(np.sum(self.weights * np.real(a.evaluate(self.points))))

    def mode(self) -> np.ndarray:
        return self.points[int(np.argmax(self.weights))]

    def mass_where(self, mask: np.ndarray) -> float:
        return float(np.sum(self.weights[mask]))

    def marginal(self, coord: int, edges: np.ndarray) -> np.ndarray:
        hist, _ = np.histogram(self.points[:, coord], bins=edges, weights=self.weights)
        return hist


def _plane_overlaps(axis: np.ndarray, nmax: int, hbar: float):
    X, XI = np.meshgrid(axis, axis, indexing="ij")
    alpha = ((X + 1j * XI) / np.sqrt(2 * hbar)).ravel()
    n = np.arange(nmax)
    logfact = np.concatenate([[0.0], np.cumsum(np.log(np.arange(1, nmax)))])
    r = np.abs(alpha)
    logr = np.log(np.where(r > 0, r, 1.0))[:, None]
    logabs = np.where((r[:, None] > 0) | (n[None, :] == 0), logr * n[None, :], -np.inf)
    mag = np.exp(-0.5 * np.abs(alpha)[:, None] ** 2 + logabs - 0.5 * logfact[None, :])
    phase = np.exp(-1j * np.angle(alpha)[:, None] * n[None, :])
    return X.ravel(), XI.ravel(), mag * phase


def husimi_values(psi, basis: HermiteBasisSpec, grid: PhaseGrid) -> np.ndarray:
    """Husimi density on the product grid, shape (n*n,)*d flattened plane by plane."""
    C = _coeffs(psi).reshape((basis.nmax,) * basis.d)
    _, _, O = _plane_overlaps(grid.axis, basis.nmax, basis.hbar)
    amp = C
    for j in range(basis.d):
        # contract axis j with the coherent overlaps; new axis goes last
        amp = np.tensordot(amp, O, axes=([0], [1]))
    return np.abs(amp) ** 2 / (2 * np.pi * basis.hbar) ** basis.d


def husimi_cloud(
    psi,
    basis: HermiteBasisSpec,
    grid: PhaseGrid | None = None,
    min_capture: float = 0.9,
    energy: float = 1.5,
) -> EmpiricalMeasure:
    """Weighted point cloud from Husimi values times cell volume."""
    c = _coeffs(psi)
    nrm = np.linalg.norm(c)
    if nrm == 0:
        raise MeasureError("empty state")
    c = c / nrm
    grid = grid or PhaseGrid.covering(energy, basis.hbar)
    Q = husimi_values(c, basis, grid)
    w = Q.ravel() * grid.cell**basis.d
    captured = float(w.sum())
    if captured < min_capture:
        raise MeasureError(f"grid captures only {captured:.3f} of the Husimi mass")
    X, XI, _ = _plane_overlaps(grid.axis, 1, basis.hbar)
    planes = np.stack([X, XI], axis=1)
    d = basis.d
    idx = np.indices((len(X),) * d).reshape(d, -1)
    pts = np.empty((idx.shape[1], 2 * d))
    for j in range(d):
        pts[:, j] = planes[idx[j], 0]
        pts[:, d + j] = planes[idx[j], 1]
    return EmpiricalMeasure(pts, w / captured, captured, basis.hbar, {"grid": (grid.extent, grid.n)})


def torus_distance(points: np.ndarray, E) -> np.ndarray:
    """Euclidean distance to the torus ``{|z_j|^2 / 2 = E_j}``."""
    E = np.asarray(E, dtype=float)
    d = len(E)
    rad = np.sqrt(points[:, :d] ** 2 + points[:, d:] ** 2)
    return np.sqrt(np.sum((rad - np.sqrt(2 * E)) ** 2, axis=1))


def torus_mass(mu: EmpiricalMeasure, E, radius: float) -> float:
    return mu.mass_where(torus_distance(mu.points, E) < radius)


def actions_of(psi, basis: HermiteBasisSpec) -> np.ndarray:
    """Expected actions ``<psi, Op(H_j) psi>``."""
    c = _coeffs(psi)
    p = np.abs(c) ** 2 / np.sum(np.abs(c) ** 2)
    return basis.hbar * (p @ basis.indices + 0.5)


@dataclass
class InvarianceReport:
    times: np.ndarray
    s_values: np.ndarray
    defects: dict
    localization: dict = field(default_factory=dict)

    def max_defect(self, name: str | None = None) -> float:
        names = [name] if name else list(self.defects)
        return float(max(np.max(self.defects[n]) for n in names))

    def rows(self):
        out = []
        for name, table in self.defects.items():
            for i, t in enumerate(self.times):
                for k, s in enumerate(self.s_values):
                    out.append((name, float(t), float(s), float(table[i, k])))
        return out


def _linear_flow_matrix(h: WeylSymbol, s: float) -> np.ndarray:
    n2 = 2 * h.d
    _, Fs = flow_with_frame(np.zeros(n2), [s], h)
    return Fs[0]


def invariance_test(
    psi,
    basis: HermiteBasisSpec,
    spec: FrequencySpec,
    Vavg: WeylSymbol | None,
    observables: dict,
    times,
    s_values,
    cloud: EmpiricalMeasure | None = None,
) -> InvarianceReport:
    """Defects ``|W(a o phi_s^<V> o phi_t^H) - W(a)|`` over a (t, s) grid.

    Linear flows are applied to the observable symbolically so the pairing
    stays exact; otherwise the Husimi cloud is transported.
    """
    c = _coeffs(psi)
    c = c / np.linalg.norm(c)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    s_values = np.atleast_1d(np.asarray(s_values, dtype=float))
    linear = Vavg is None or Vavg.is_zero() or Vavg.max_degree <= 2
    if not linear and cloud is None:
        cloud = husimi_cloud(c, basis)
    defects = {}
    for name, a in observables.items():
        if a.max_degree > 6:
            raise MeasureError("observables are limited to degree 6")
        base = _pair(c, a, basis)
        table = np.zeros((len(times), len(s_values)))
        for k, s in enumerate(s_values):
            if linear:
                G = np.eye(2 * basis.d) if Vavg is None or Vavg.is_zero() or s == 0 else _linear_flow_matrix(Vavg, s)
                for i, t in enumerate(times):
                    M = G @ rotation_matrix(t * spec.omega)
                    table[i, k] = abs(_pair(c, compose_linear(a, M), basis) - base)
            else:
                # the flows commute, so the s-leg is integrated once per s
                shifted = transport(cloud.points, s, Vavg)
                for i, t in enumerate(times):
                    moved = harmonic_flow(shifted, spec, t)
                    table[i, k] = abs(float(np.sum(cloud.weights * np.real(a.evaluate(moved)))) - cloud.pair(a))
        defects[name] = table
    return InvarianceReport(times, s_values, defects)


def _pair(c: np.ndarray, a: WeylSymbol, basis: HermiteBasisSpec) -> float:
    A = quantize(a, basis, sparse=True)
    return float(np.real(np.vdot(c, A @ c)))


def bracket_defect(psi, basis: HermiteBasisSpec, Vavg: WeylSymbol, a: WeylSymbol) -> float:
    """``|W_psi({<V>, a})|``, which vanishes for invariant limit measures."""
    c = _coeffs(psi)
    c = c / np.linalg.norm(c)
    return abs(_pair(c, poisson(Vavg, a), basis))


def localization_test(
    psi,
    basis: HermiteBasisSpec,
    levels: dict,
    radius: float,
    cloud: EmpiricalMeasure | None = None,
) -> dict:
    """Husimi mass outside ``{|f - value| < radius}`` for each ``name: (f, value)``.

    ``f`` is a WeylSymbol or a callable on phase points.
    """
    floor = 2 * np.sqrt(basis.hbar)
    if radius < floor - 1e-12:
        raise MeasureError(f"tube radius {radius:.3g} below the uncertainty floor {floor:.3g}")
    mu = cloud or husimi_cloud(psi, basis)
    out = {}
    for name, (f, value) in levels.items():
        vals = np.real(f.evaluate(mu.points)) if isinstance(f, WeylSymbol) else np.asarray(f(mu.points))
        inside = np.abs(vals - value) < radius
        out[name] = 1.0 - mu.mass_where(inside)
    return out


def position_marginal(psi, basis: HermiteBasisSpec, x, axis: int = 0, tol: float = 1e-6) -> np.ndarray:
    """Density of the ``axis`` coordinate, ``|psi|^2`` integrated over the others."""
    c = _coeffs(psi)
    c = c / np.linalg.norm(c)
    C = np.moveaxis(c.reshape((basis.nmax,) * basis.d), axis, 0).reshape(basis.nmax, -1)
    W = hermite_wavefunctions(basis, np.asarray(x, dtype=float))
    amp = W.T @ C
    rho = np.sum(np.abs(amp) ** 2, axis=1)
    mass = float(np.trapezoid(rho, x))
    if abs(mass - 1) > tol:
        raise MeasureError(f"grid too coarse or too short: mass {mass:.8f}")
    return rho


def wasserstein_1d(x: np.ndarray, p: np.ndarray, q: np.ndarray) -> float:
    """``int |F_p - F_q| dx`` for densities sampled on a sorted grid."""
    x = np.asarray(x, dtype=float)
    dx = np.diff(x)
    cp = np.concatenate([[0.0], np.cumsum(0.5 * (p[1:] + p[:-1]) * dx)])
    cq = np.concatenate([[0.0], np.cumsum(0.5 * (q[1:] + q[:-1]) * dx)])
    cp, cq = cp / cp[-1], cq / cq[-1]
    return float(np.trapezoid(np.abs(cp - cq), x))


def husimi_marginal(mu: EmpiricalMeasure, coord: int, x: np.ndarray) -> np.ndarray:
    """Density of one coordinate of the cloud, binned on cells centred at ``x``."""
    x = np.asarray(x, dtype=float)
    mid = 0.5 * (x[1:] + x[:-1])
    edges = np.concatenate([[x[0] - (mid[0] - x[0])], mid, [x[-1] + (x[-1] - mid[-1])]])
    hist = mu.marginal(coord, edges)
    return hist / np.diff(edges)


WIDTH_BRACKET = {"eps*hbar/4": 0.25, "eps*hbar": 1.0, "4*eps*hbar": 4.0}


def width_bracket(width: float, eps: float, hbar: float) -> dict:
    """Which radii ``c * eps * hbar`` admit a quasimode of the given width."""
    if eps <= 0 or hbar <= 0:
        raise MeasureError("eps and hbar must be positive")
    return {name: bool(width <= c * eps * hbar) for name, c in WIDTH_BRACKET.items()}
