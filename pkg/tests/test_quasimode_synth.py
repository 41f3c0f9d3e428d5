import numpy as np
import pytest

from oscilab.coherent_propagation import StateVector
from oscilab.frequency import FrequencySpec
from oscilab.measure_lab import invariance_test
from oscilab.quantization import HermiteBasisSpec, basis_for, harmonic_matrix, quantize, wigner_pairing
from oscilab.quasimode_synth import (
    BumpFunction,
    OverlapError,
    QuasimodeResult,
    quasi_eigenvalue,
    superpose,
    synthesize,
    target_defects,
    target_pairing,
    width,
)
from oscilab.symbol_algebra import WeylSymbol, average

from conftest import torus_point

x, xi = WeylSymbol.x, WeylSymbol.xi


def circle_point(E):
    return np.array([np.sqrt(2 * E), 0.0])


@pytest.fixture(scope="module")
def spec1():
    return FrequencySpec.from_omega_int([1])


@pytest.fixture(scope="module")
def pair11():
    spec = FrequencySpec.from_omega_int([1, 1])
    V = x(0, 2) * x(1, 2)
    return spec, V, average(V, spec), torus_point(0.7, 0.3, 0.2, 1.1)


def fake_result(basis, vec, lam, z0=(1.0, 0.0)):
    return QuasimodeResult(StateVector(basis, np.asarray(vec, dtype=complex)), lam, None, 1.0, {}, {"z0": list(z0)}, 1.0)


class TestBump:
    def test_support_and_range(self):
        chi = BumpFunction()
        s = np.linspace(-0.5, 1.5, 2001)
        v = chi(s)
        assert np.all((v >= 0) & (v <= 1))
        assert np.all(v[(s <= 0) | (s >= 1)] == 0)
        assert chi(0.5) == pytest.approx(1.0)

    def test_norms(self):
        chi = BumpFunction()
        assert 0 < chi.l2**2 < chi.l1 < 1
        assert chi.c_chi > 0

    def test_plateau(self):
        wide = BumpFunction(ramp=0.2)
        assert wide(0.3) == 1.0 and wide(0.7) == 1.0
        with pytest.raises(ValueError):
            BumpFunction(ramp=0.7)

    def test_scaled(self):
        chi = BumpFunction()
        assert chi.scaled(2.0, 4.0) == chi(0.5)


class TestQuasiEigenvalue:
    def test_lattice_rounding(self, spec1):
        qe = quasi_eigenvalue(circle_point(1.0), None, 0.0, HermiteBasisSpec(1, 0.1, 30), spec1)
        assert round(qe.value, 12) in (0.95, 1.05)

    def test_on_lattice(self, spec1):
        qe = quasi_eigenvalue(circle_point(0.75), None, 0.0, HermiteBasisSpec(1, 0.1, 30), spec1)
        assert qe.value == pytest.approx(0.75)

    def test_first_order_shift(self, spec1):
        b = HermiteBasisSpec(1, 0.1, 30)
        Vavg = WeylSymbol.constant(0.3, 1)
        base = quasi_eigenvalue(circle_point(0.75), None, 0.0, b, spec1).value
        qe = quasi_eigenvalue(circle_point(0.75), Vavg, 1e-3, b, spec1)
        assert qe.value == pytest.approx(base + 3e-4)
        assert qe.shift == pytest.approx(3e-4)


class TestSynthesize:
    def test_circle_gives_fock_state(self, spec1):
        hbar = 0.05
        b = basis_for(1, hbar, 1.5, degree=2)
        q = synthesize(circle_point(hbar * 19.5), 4.0, BumpFunction(), None, 0.0, b, spec1)
        assert abs(q.state.coefficients[19]) > 0.95
        assert q.width < 1e-6
        assert q.state.norm == pytest.approx(1.0)

    def test_width_against_estimate(self, pair11):
        spec, V, Vavg, z0 = pair11
        T = 4.0
        chi = BumpFunction()
        for hbar in (0.1, 0.05):
            b = basis_for(2, hbar, 1.5, degree=2)
            q = synthesize(z0, T, chi, Vavg, hbar**2, b, spec, V=V)
            assert 0 < q.width / hbar**3 <= 10 * chi.c_chi / T
            assert q.grid["degenerate_time_leg"] is False

    def test_grid_doubling(self, pair11):
        spec, V, Vavg, z0 = pair11
        b = basis_for(2, 0.1, 1.5, degree=2)
        q = synthesize(z0, 4.0, BumpFunction(), Vavg, 0.01, b, spec, V=V)
        q2 = synthesize(z0, 4.0, BumpFunction(), Vavg, 0.01, b, spec, V=V, n_tau=2 * q.grid["n_tau"], n_s=2 * q.grid["n_s"])
        assert np.linalg.norm(q.state.coefficients - q2.state.coefficients) < 1e-3

    def test_width_function_matches(self, pair11):
        spec, V, Vavg, z0 = pair11
        hbar = 0.1
        b = basis_for(2, hbar, 1.5, degree=2)
        q = synthesize(z0, 4.0, BumpFunction(), Vavg, hbar**2, b, spec, V=V)
        P = harmonic_matrix(spec, b) + quantize(V, b) * hbar**2
        assert width(P, q) == pytest.approx(q.width, rel=1e-9)

    def test_bad_window(self, spec1):
        with pytest.raises(ValueError):
            synthesize(circle_point(0.75), 0.0, BumpFunction(), None, 0.0, HermiteBasisSpec(1, 0.1, 30), spec1)


class TestWidth:
    def test_exact_eigenpair(self):
        b = HermiteBasisSpec(1, 0.1, 20)
        H = harmonic_matrix(FrequencySpec.from_omega_int([1]), b)
        assert width(H, fake_result(b, b.basis_vector((4,)), 0.45)) < 1e-10

    def test_two_level(self):
        b = HermiteBasisSpec(1, 0.1, 20)
        H = harmonic_matrix(FrequencySpec.from_omega_int([1]), b)
        vec = (b.basis_vector((2,)) + b.basis_vector((5,))) / np.sqrt(2)
        assert width(H, fake_result(b, vec, 0.5 * (0.25 + 0.55))) == pytest.approx(0.15)

    def test_random_vector_bound(self):
        b = HermiteBasisSpec(1, 0.1, 20)
        H = harmonic_matrix(FrequencySpec.from_omega_int([1]), b)
        vec = np.random.default_rng(0).normal(size=b.size)
        vec /= np.linalg.norm(vec)
        radius = np.max(np.abs(np.diag(H.entries).real - 1.0))
        assert width(H, fake_result(b, vec, 1.0)) <= radius


class TestSuperpose:
    def test_single_entry(self, spec1):
        b = HermiteBasisSpec(1, 0.1, 30)
        q = synthesize(circle_point(0.75), 4.0, BumpFunction(), None, 0.0, b, spec1)
        assert superpose([(1.0, q)]) is q

    def test_disjoint_tori(self, spec1):
        hbar = 0.05
        b = basis_for(1, hbar, 1.5, degree=2)
        q1 = synthesize(circle_point(hbar * 5.5), 4.0, BumpFunction(), None, 0.0, b, spec1)
        q2 = synthesize(circle_point(hbar * 24.5), 4.0, BumpFunction(), None, 0.0, b, spec1)
        H = harmonic_matrix(spec1, b)
        out = superpose([(0.5, q1), (0.5, q2)], P=H)
        expected = 0.5 * (wigner_pairing(q1.state.coefficients, WeylSymbol.action(0, 1), b) + wigner_pairing(q2.state.coefficients, WeylSymbol.action(0, 1), b))
        got = wigner_pairing(out.state.coefficients, WeylSymbol.action(0, 1), b)
        assert got == pytest.approx(expected, abs=5e-2)
        assert got == pytest.approx(0.5 * (0.275 + 1.225), abs=5e-2)
        assert out.lam == pytest.approx(0.75)
        # each member sits 0.475 from the mean eigenvalue
        assert out.width == pytest.approx(0.475, abs=1e-6)
        assert out.meta["width_bound"] >= out.width

    def test_overlapping_tori(self, spec1):
        b = HermiteBasisSpec(1, 0.1, 30)
        q1 = synthesize(circle_point(0.75), 4.0, BumpFunction(), None, 0.0, b, spec1)
        q2 = synthesize(circle_point(0.85), 4.0, BumpFunction(), None, 0.0, b, spec1)
        with pytest.raises(OverlapError):
            superpose([(0.5, q1), (0.5, q2)])

    def test_weights_validated(self, spec1):
        b = HermiteBasisSpec(1, 0.1, 30)
        q = synthesize(circle_point(0.75), 4.0, BumpFunction(), None, 0.0, b, spec1)
        with pytest.raises(ValueError):
            superpose([(0.7, q), (0.7, q)])


@pytest.fixture(scope="module")
def defect_tables(pair11):
    spec, V, Vavg, z0 = pair11
    hbar = 0.05
    b = basis_for(2, hbar, 1.5, degree=2)
    obs = {"H1": WeylSymbol.action(0, 2), "x1^2": x(0, 2) ** 2, "x1*xi2": x(0, 2) * xi(1, 2), "x1*xi1": x(0, 2) * xi(0, 2)}
    out = {}
    for T in (8.0, 16.0):
        q = synthesize(z0, T, BumpFunction(), Vavg, hbar**2, b, spec, V=V)
        times, s_values = [0.0, 0.9], [0.0, T / 4, T / 2]
        rep = invariance_test(q.state, b, spec, Vavg, obs, times, s_values)
        out[T] = (rep, target_defects(obs, z0, T, BumpFunction(), Vavg, spec, times, s_values))
    return out


class TestTargetMeasure:
    def test_static_target_is_average(self, pair11):
        spec, _, _, z0 = pair11
        a = x(0, 2) ** 2
        assert target_pairing(a, z0, 4.0, BumpFunction(), None, spec) == pytest.approx(average(a, spec).evaluate(z0).real)

    def test_conserved_quantity(self, pair11):
        spec, _, Vavg, z0 = pair11
        assert target_pairing(Vavg, z0, 6.0, BumpFunction(), Vavg, spec) == pytest.approx(Vavg.evaluate(z0).real, abs=1e-9)

    def test_quartic_rejected(self, pair11):
        spec, _, _, z0 = pair11
        with pytest.raises(ValueError):
            target_defects({"a": x(0, 2)}, z0, 4.0, BumpFunction(), average(x(0, 2) ** 4, spec), spec, [0.0], [0.0])

    def test_quantum_defects_follow_target(self, defect_tables):
        rep, target = defect_tables[8.0]
        for name in rep.defects:
            assert np.max(np.abs(rep.defects[name] - target[name])) < 0.03
        # the short window has not averaged the orbit yet
        assert rep.max_defect("H1") > 0.2

    def test_long_window_is_nearly_invariant(self, defect_tables):
        rep, _ = defect_tables[16.0]
        assert rep.max_defect() < 0.1
        assert rep.max_defect("x1*xi1") < 0.005
