import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm
from scipy.special import eval_hermite

from oscilab import cache
from oscilab.classical_flow import rotation_matrix
from oscilab.frequency import resonance_module
from oscilab.quantization import (
    BandError,
    BasisError,
    ClusterAmbiguityError,
    HermiteBasisSpec,
    ProjectionError,
    basis_for,
    cluster_spectrum,
    edge_weight,
    harmonic_matrix,
    hermite_functions,
    project_to_cluster,
    quantize,
    quantum_average,
    spectrum,
    wigner_pairing,
)
from oscilab.symbol_algebra import WeylSymbol, average, compose_linear

from conftest import sqrt2_spec

x, xi = WeylSymbol.x, WeylSymbol.xi


def hermite_oracle(n, y):
    """Normalized Hermite functions from scipy's physicists' polynomials."""
    return np.array(
        [eval_hermite(k, y) * np.exp(-0.5 * y**2) / math.sqrt(2.0**k * math.factorial(k) * math.sqrt(math.pi)) for k in range(n)]
    )


def symmetrized(p, q, hbar, nmax):
    """Average over every ordering of p position and q momentum operators."""
    n = nmax + p + q + 2
    a = np.diag(np.sqrt(np.arange(1, n)), 1)
    X = np.sqrt(hbar / 2) * (a + a.T)
    XI = 1j * np.sqrt(hbar / 2) * (a.T - a)
    words = set(itertools.permutations("x" * p + "k" * q))
    acc = np.zeros((n, n), dtype=complex)
    for w in words:
        m = np.eye(n, dtype=complex)
        for c in w:
            m = m @ (X if c == "x" else XI)
        acc += m
    return (acc / len(words))[:nmax, :nmax]


monomials = st.tuples(st.integers(0, 3), st.integers(0, 3)).filter(lambda pq: sum(pq) > 0)


class TestBasis:
    def test_invalid(self):
        with pytest.raises(BasisError):
            HermiteBasisSpec(2, 0.1, 1)
        with pytest.raises(BasisError):
            HermiteBasisSpec(2, -0.1, 10)
        with pytest.raises(BasisError):
            HermiteBasisSpec(3, 0.1, 100)

    def test_basis_for_covers_band(self):
        b = basis_for(2, 0.05, 1.2, degree=2)
        assert b.band_limit([1, 1], 2) >= 1.2
        assert HermiteBasisSpec(2, 0.05, b.nmax - 2).band_limit([1, 1], 2) < 1.2

    def test_index_round_trip(self):
        b = HermiteBasisSpec(2, 0.1, 5)
        for i, k in enumerate(b.indices):
            assert b.index_of(k) == i
        with pytest.raises(BasisError):
            b.index_of((5, 0))

    def test_hermite_recurrence_matches_scipy(self):
        y = np.linspace(-6, 6, 41)
        assert np.allclose(hermite_functions(30, y), hermite_oracle(30, y), atol=1e-12)


class TestQuantize:
    def test_harmonic_diagonal(self):
        b = HermiteBasisSpec(2, 0.1, 12)
        Hq = quantize(WeylSymbol.harmonic([1, 1]), b)
        assert Hq.entries[0, 0] == pytest.approx(0.1, abs=1e-15)
        interior = b.band_mask([1, 1])
        M = Hq.entries[np.ix_(interior, interior)]
        assert np.allclose(M, np.diag(b.energies([1, 1])[interior]), atol=1e-13)

    def test_position_entry(self):
        b = HermiteBasisSpec(2, 0.1, 6)
        X = quantize(x(0, 2), b).entries
        assert X[b.index_of((1, 0)), b.index_of((0, 0))] == pytest.approx(np.sqrt(0.05), abs=1e-15)

    def test_constant_is_identity(self):
        b = HermiteBasisSpec(2, 0.1, 6)
        assert np.array_equal(quantize(WeylSymbol.constant(1.0, 2), b).entries, np.eye(b.size))

    @pytest.mark.parametrize("p", [1, 2, 3, 4, 5])
    def test_position_powers_against_quadrature(self, p):
        hbar, nmax = 0.07, 10
        y, w = np.polynomial.hermite.hermgauss(60)
        # hermgauss already carries the e^{-y^2} weight
        phi = hermite_oracle(nmax, y) * np.exp(0.5 * y**2)
        oracle = hbar ** (p / 2) * np.einsum("mi,ni,i->mn", phi, phi, w * y**p)
        M = quantize(x(0, 1) ** p, HermiteBasisSpec(1, hbar, nmax)).entries
        assert np.allclose(M, oracle, atol=1e-12)

    @settings(max_examples=15, deadline=None)
    @given(monomials)
    def test_weyl_ordering_is_full_symmetrization(self, pq):
        p, q = pq
        hbar, nmax = 0.2, 8
        M = quantize(x(0, 1) ** p * xi(0, 1) ** q, HermiteBasisSpec(1, hbar, nmax)).entries
        assert np.allclose(M, symmetrized(p, q, hbar, nmax), atol=1e-12)

    def test_two_dimensional_product(self):
        hbar, nmax = 0.2, 6
        M = quantize(x(0, 2) * xi(0, 2) * xi(1, 2) ** 2, HermiteBasisSpec(2, hbar, nmax)).entries
        oracle = np.kron(symmetrized(1, 1, hbar, nmax), symmetrized(0, 2, hbar, nmax))
        assert np.allclose(M, oracle, atol=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(st.lists(st.floats(-2, 2), min_size=4, max_size=4))
    def test_linear_and_hermitian(self, c):
        b = HermiteBasisSpec(2, 0.1, 6)
        s1 = c[0] * x(0, 2) ** 2 * xi(1, 2) + c[1] * x(1, 2)
        s2 = c[2] * xi(0, 2) ** 3 + c[3] * x(0, 2) * x(1, 2)
        A1, A2 = quantize(s1, b).entries, quantize(s2, b).entries
        assert np.allclose(quantize(s1 + 2.5 * s2, b).entries, A1 + 2.5 * A2, atol=1e-12)
        assert quantize(s1 + s2, b).hermitian_defect() < 1e-12

    def test_dimension_mismatch(self):
        with pytest.raises(BasisError):
            quantize(x(0, 1), HermiteBasisSpec(2, 0.1, 4))

    def test_egorov_for_harmonic_flow(self):
        # conjugation by the oscillator propagator composes with the forward flow
        omega = np.array([1.0, np.sqrt(2)])
        b = basis_for(2, 0.1, 1.0, omega, degree=3)
        a = x(0, 2) ** 2 * xi(1, 2) + x(1, 2)
        t = 0.7
        U = expm(1j * t * np.diag(b.energies(omega)) / b.hbar)
        lhs = U @ quantize(a, b).entries @ U.conj().T
        rhs = quantize(compose_linear(a, rotation_matrix(t * omega)), b).entries
        m = b.band_mask(omega, degree=3)
        assert m.sum() > 20
        assert np.abs((lhs - rhs)[np.ix_(m, m)]).max() < 1e-9


class TestCache:
    def test_round_trip(self, tmp_path, monkeypatch):
        monkeypatch.setenv("OSCILAB_CACHE", str(tmp_path))
        b = HermiteBasisSpec(2, 0.1, 20)
        assert b.size >= cache.MIN_SIZE
        s = x(0, 2) * x(1, 2) + 0.3 * xi(0, 2) ** 2
        first = quantize(s, b)
        assert len(list(tmp_path.glob("*.npy"))) == 1
        second = quantize(s, b)
        assert second.symbol_tag == "cached"
        assert np.array_equal(first.entries, second.entries)

    def test_small_bases_not_cached(self, tmp_path, monkeypatch):
        monkeypatch.setenv("OSCILAB_CACHE", str(tmp_path))
        quantize(x(0, 2), HermiteBasisSpec(2, 0.1, 5))
        assert not list(tmp_path.iterdir())


class TestSpectrum:
    def test_equal_frequency_multiplicity(self, spec11):
        b = basis_for(2, 0.1, 1.05, degree=1)
        pairs = spectrum(quantize(WeylSymbol.harmonic([1, 1]), b), (0.95, 1.05))
        assert np.allclose(pairs.values, 1.0) and len(pairs.values) == 10
        assert pairs.residual < 1e-10

    def test_sqrt2_simple(self):
        om = np.array([1.0, np.sqrt(2)])
        b = basis_for(2, 0.05, 1.3, om, degree=1)
        vals = spectrum(harmonic_matrix(sqrt2_spec(), b), (0.5, 1.3), omega=om).values
        assert len(vals) > 20
        assert np.min(np.diff(vals)) > 1e-3

    def test_zero_perturbation(self, spec11, x1x2):
        b = basis_for(2, 0.1, 1.0)
        H = harmonic_matrix(spec11, b)
        P = H + quantize(x1x2, b) * 0.0
        assert np.allclose(spectrum(P, (0.2, 1.0)).values, spectrum(H, (0.2, 1.0)).values, atol=1e-14)

    def test_window_outside_band(self, spec11):
        b = HermiteBasisSpec(2, 0.1, 10)
        with pytest.raises(BandError):
            spectrum(harmonic_matrix(spec11, b), (0.5, 1.0))


class TestQuantumAverage:
    def test_position_averages_to_zero(self, spec11):
        b = HermiteBasisSpec(2, 0.1, 8)
        assert np.abs(quantum_average(quantize(x(0, 2), b), spec11).entries).max() == 0

    def test_diagonal_unchanged(self, spec11):
        b = HermiteBasisSpec(2, 0.1, 8)
        D = quantize(x(0, 2) ** 2 + xi(0, 2) ** 2, b)
        assert np.array_equal(quantum_average(D, spec11).entries, D.entries)

    def test_matches_symbol_average(self, spec11, x1x2):
        b = HermiteBasisSpec(2, 0.1, 10)
        lhs = quantum_average(quantize(x1x2, b), spec11).entries
        rhs = quantize(0.5 * (x(0, 2) * x(1, 2) + xi(0, 2) * xi(1, 2)), b).entries
        assert np.allclose(lhs, rhs, atol=1e-12)
        assert np.allclose(quantize(average(x1x2, spec11), b).entries, rhs, atol=1e-12)

    @pytest.mark.parametrize("which", ["11", "12", "sqrt2"])
    def test_commutes_and_idempotent(self, which, spec11, spec12, spec_sqrt2):
        spec = {"11": spec11, "12": spec12, "sqrt2": spec_sqrt2}[which]
        b = HermiteBasisSpec(2, 0.1, 9)
        A = quantize(x(0, 2) ** 2 * xi(1, 2) + x(0, 2) * x(1, 2) ** 3, b)
        avg = quantum_average(A, resonance_module(spec))
        H = harmonic_matrix(spec, b).entries
        assert np.abs(avg.entries @ H - H @ avg.entries).max() < 1e-13
        assert np.array_equal(quantum_average(avg, spec).entries, avg.entries)


class TestClusters:
    def test_unperturbed_widths(self, spec11):
        b = basis_for(2, 0.1, 1.05, degree=1)
        H = harmonic_matrix(spec11, b)
        rep = cluster_spectrum(H, H, 0.0, (0.15, 1.05))
        assert rep.max_width == 0.0 and len(rep.clusters) == 9

    def test_first_order_oracle(self, spec11, x1x2):
        hbar = 0.1
        eps = hbar**2
        b = basis_for(2, hbar, 1.2, degree=2)
        H = harmonic_matrix(spec11, b)
        V = quantize(x1x2, b)
        rep = cluster_spectrum(H + V * eps, H, eps, (0.85, 1.15))
        Hd = np.real(np.diag(H.entries))
        for c in rep.clusters:
            sel = np.abs(Hd - c.center) < 1e-9
            first = c.center + eps * np.linalg.eigvalsh(V.entries[np.ix_(sel, sel)])
            assert len(c.members) == sel.sum()
            assert np.max(np.abs(np.sort(first) - c.members)) < 10 * eps**2

    def test_sqrt2_singletons(self, x1x2):
        om = np.array([1.0, np.sqrt(2)])
        hbar = 0.1
        b = basis_for(2, hbar, 1.2, om, degree=2)
        H = harmonic_matrix(sqrt2_spec(), b)
        rep = cluster_spectrum(H + quantize(x1x2, b) * hbar**3, H, hbar**3, (0.5, 1.1), omega=om)
        assert all(len(c.members) == 1 for c in rep.clusters)

    def test_ambiguous(self, spec11, x1x2):
        b = basis_for(2, 0.1, 1.2, degree=2)
        H = harmonic_matrix(spec11, b)
        with pytest.raises(ClusterAmbiguityError):
            cluster_spectrum(H + quantize(x1x2, b), H, 1.0, (0.5, 1.0), vnorm=1.0)


class TestProjection:
    def setup_method(self):
        self.b = HermiteBasisSpec(2, 0.1, 8)
        self.H = harmonic_matrix(sqrt2_spec(), self.b)

    def test_exact_eigenvector(self):
        e = self.b.basis_vector((1, 2))
        lam = self.b.energies(sqrt2_spec().omega)[self.b.index_of((1, 2))]
        out, val, removed = project_to_cluster(e, self.H, lam, 1e-6)
        assert np.array_equal(out, e) and val == pytest.approx(lam) and removed == 0

    def test_removes_far_component(self):
        e = self.b.basis_vector((1, 2))
        far = self.b.basis_vector((4, 0))
        psi = (e + 0.1 * far) / np.sqrt(1.01)
        lam = self.b.energies(sqrt2_spec().omega)[self.b.index_of((1, 2))]
        out, _, removed = project_to_cluster(psi, self.H, lam, 0.01)
        assert removed == pytest.approx(0.1 / np.sqrt(1.01), abs=1e-12)
        assert np.allclose(out, e)

    def test_two_levels_rejected(self):
        with pytest.raises(ProjectionError):
            project_to_cluster(self.b.basis_vector((0, 0)), self.H, 0.2, 0.1)


class TestWignerPairing:
    def test_ground_state_energy(self):
        b = HermiteBasisSpec(2, 0.1, 6)
        psi = b.basis_vector((0, 0))
        assert wigner_pairing(psi, WeylSymbol.harmonic([1, np.sqrt(2)]), b) == pytest.approx(0.05 * (1 + np.sqrt(2)))

    def test_constant(self):
        b = HermiteBasisSpec(2, 0.1, 6)
        psi = np.random.default_rng(0).normal(size=b.size) + 0j
        psi /= np.linalg.norm(psi)
        assert wigner_pairing(psi, WeylSymbol.constant(1.0, 2), b) == pytest.approx(1.0)

    def test_plane_actions(self):
        b = HermiteBasisSpec(2, 0.1, 6)
        psi = b.basis_vector((3, 1))
        assert wigner_pairing(psi, WeylSymbol.action(0, 2), b) == pytest.approx(0.35)
        assert wigner_pairing(psi, WeylSymbol.action(1, 2), b) == pytest.approx(0.15)

    def test_real_symbol_gives_real(self):
        b = HermiteBasisSpec(2, 0.1, 6)
        psi = np.random.default_rng(1).normal(size=b.size) * (1 + 0.5j)
        assert isinstance(wigner_pairing(psi, x(0, 2) * xi(1, 2), b), float)

    def test_edge_weight(self):
        b = HermiteBasisSpec(2, 0.1, 6)
        assert edge_weight(b.basis_vector((5, 0)), b) == 1.0
        assert edge_weight(b.basis_vector((1, 1)), b) == 0.0
