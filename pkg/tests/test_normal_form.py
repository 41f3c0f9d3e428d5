import numpy as np
import pytest
import scipy.sparse as sp
from scipy.linalg import expm

from oscilab.frequency import FrequencySpec

from oscilab.quantization import band_norm, basis_for, harmonic_matrix, quantize
from oscilab.normal_form import (
    conjugate_step,
    normal_form_iterate,
    observable_stability,
    offresonant_residual,
    series_conjugate,
    solve_quantum_cohomological,
    split_resonant,
    unitarity_defect,
    unitary_exp,
)
from oscilab.symbol_algebra import WeylSymbol, average, solve_cohomological

x, xi = WeylSymbol.x, WeylSymbol.xi


@pytest.fixture(scope="module")
def setup11():
    spec = FrequencySpec.from_omega_int([1, 1])
    b = basis_for(2, 0.1, 1.0, degree=3)
    return spec, b, harmonic_matrix(spec, b), b.band_mask([1, 1], degree=3)


def commutator_identity(F, H, V, spec, b):
    avg, _ = split_resonant(V, b, spec)
    lhs = (1j / b.hbar) * (F @ H - H @ F)
    return np.abs(lhs - (avg - V)).max()


class TestCohomological:
    def test_position(self, setup11):
        spec, b, _, _ = setup11
        F = solve_quantum_cohomological(quantize(x(0, 2), b), spec)
        assert np.allclose(F.entries, quantize(-xi(0, 2), b).entries, atol=1e-12)

    def test_diagonal_gives_zero(self, setup11):
        spec, b, _, _ = setup11
        F = solve_quantum_cohomological(quantize(x(0, 2) ** 2 + xi(0, 2) ** 2, b), spec)
        assert np.abs(F.entries).max() == 0

    @pytest.mark.parametrize(
        "sym",
        [x(0, 2) ** 3, x(0, 2) * xi(1, 2), x(0, 2) ** 2 * x(1, 2), xi(0, 2) * xi(1, 2) ** 3],
        ids=["x1^3", "x1*xi2", "x1^2*x2", "xi1*xi2^3"],
    )
    def test_matrix_route_matches_symbol_route(self, setup11, sym):
        spec, b, _, _ = setup11
        F = solve_quantum_cohomological(quantize(sym, b), spec).entries
        G = quantize(solve_cohomological(sym - average(sym, spec), spec), b).entries
        assert np.allclose(F, G, atol=1e-12)

    def test_random_hermitian(self, spec12):
        b = basis_for(2, 0.2, 1.0, spec12.omega, degree=1)
        H = harmonic_matrix(spec12, b).entries
        rng = np.random.default_rng(3)
        for _ in range(20):
            A = rng.normal(size=(b.size, b.size)) + 1j * rng.normal(size=(b.size, b.size))
            V = A + A.conj().T
            _, off = split_resonant(V, b, spec12)
            F = solve_quantum_cohomological(quantize(WeylSymbol.zero(2), b) + off, spec12).entries
            assert np.abs(F - F.conj().T).max() < 1e-12
            assert commutator_identity(F, H, off, spec12, b) < 1e-12

    def test_sparse_route(self, setup11, x1x2):
        spec, b, H, _ = setup11
        V = quantize(x1x2 + 0.5 * xi(0, 2) ** 3, b, sparse=True)
        Fs = solve_quantum_cohomological(V, spec, b)
        Fd = solve_quantum_cohomological(quantize(x1x2 + 0.5 * xi(0, 2) ** 3, b), spec)
        assert sp.issparse(Fs)
        assert np.allclose(Fs.toarray(), Fd.entries, atol=1e-14)


class TestConjugation:
    def test_unitary_exp(self):
        rng = np.random.default_rng(0)
        A = rng.normal(size=(12, 12))
        F = A + A.T
        assert np.allclose(unitary_exp(F, 0.3), expm(-0.3j * F), atol=1e-12)
        assert unitarity_defect(unitary_exp(F, 7.0)) < 1e-12

    def test_eps_zero(self, setup11):
        spec, b, H, _ = setup11
        F = solve_quantum_cohomological(quantize(x(0, 2), b), spec)
        P, U = conjugate_step(H, F, 0.0, b.hbar)
        assert np.allclose(P.entries, H.entries) and np.allclose(U, np.eye(b.size))

    def test_averaged_perturbation_untouched(self, setup11):
        spec, b, H, _ = setup11
        V = quantize(x(0, 2) * x(1, 2) + xi(0, 2) * xi(1, 2), b)
        F = solve_quantum_cohomological(V, spec)
        P, _ = conjugate_step(H + V * 0.05, F, 0.05, b.hbar)
        assert np.abs(F.entries).max() == 0
        assert np.allclose(P.entries, (H + V * 0.05).entries, atol=1e-14)

    def test_second_order_richardson(self, setup11):
        spec, b, H, band = setup11
        V = quantize(x(0, 2), b)
        F = solve_quantum_cohomological(V, spec)
        res = []
        for eps in (0.02, 0.01, 0.005):
            P, _ = conjugate_step(H + V * eps, F, eps, b.hbar)
            # <x1> = 0, so the first-order target is H itself
            res.append(band_norm(P.entries - H.entries, band))
        assert res[0] / res[1] == pytest.approx(4, rel=0.2)
        assert res[1] / res[2] == pytest.approx(4, rel=0.2)

    def test_spectrum_preserved(self, setup11, x1x2):
        spec, b, H, _ = setup11
        V = quantize(x1x2 + 0.3 * xi(0, 2) ** 3, b)
        F = solve_quantum_cohomological(V, spec)
        P0 = H + V * 0.01
        P1, _ = conjugate_step(P0, F, 0.01, b.hbar)
        assert np.allclose(np.linalg.eigvalsh(P1.entries), np.linalg.eigvalsh(P0.entries), atol=1e-9)

    def test_series_matches_dense_conjugation(self, setup11, x1x2):
        spec, b, H, band = setup11
        V = quantize(x1x2, b)
        F = solve_quantum_cohomological(V, spec)
        eps = 1e-3
        series = series_conjugate([sp.csr_matrix(H.entries), sp.csr_matrix(V.entries), sp.csr_matrix(H.entries.shape)], F.entries, 1, b.hbar)
        summed = sum(eps**k * np.asarray(c.todense() if sp.issparse(c) else c) for k, c in enumerate(series))
        P, _ = conjugate_step(H + V * eps, F, eps, b.hbar)
        assert band_norm(P.entries - summed, band) < 10 * eps**3


@pytest.fixture(scope="module")
def V2(setup11):
    return quantize(x(0, 2) * x(1, 2) + 0.3 * xi(0, 2) ** 3, setup11[1])


class TestIterate:
    def test_first_step_matches_conjugate_step(self, setup11, V2):
        spec, b, H, _ = setup11
        res = normal_form_iterate(H, V2, spec, 0.01, 1)
        P, U = conjugate_step(H + V2 * 0.01, solve_quantum_cohomological(V2, spec), 0.01, b.hbar)
        assert np.allclose(res.matrix.entries, P.entries, atol=1e-13)
        assert np.allclose(res.unitary, U)
        assert np.allclose(res.remainder(1), split_resonant(V2.entries, b, spec)[0])

    @pytest.mark.parametrize("N, ratio, rel", [(1, 4, 0.2), (2, 8, 0.3)])
    def test_residual_order(self, setup11, V2, N, ratio, rel):
        spec, _, H, _ = setup11
        r = [normal_form_iterate(H, V2, spec, eps, N).residual_norm for eps in (0.02, 0.01)]
        assert r[0] / r[1] == pytest.approx(ratio, rel=rel)

    def test_unitary_and_resonant(self, setup11, V2):
        spec, b, H, band = setup11
        res = normal_form_iterate(H, V2, spec, 0.01, 2)
        for st in res.steps:
            assert unitarity_defect(st.unitary) < 1e-10
        assert offresonant_residual(res.matrix, spec, res.band) == pytest.approx(res.residual_norm)
        assert res.residual_norm < 1e-6

    def test_symbol_recorded(self, setup11, x1x2):
        spec, b, H, _ = setup11
        res = normal_form_iterate(H, quantize(x1x2, b), spec, 0.0, 1, V_symbol=x1x2)
        assert res.matrix is None
        F = res.steps[0].F_symbol
        assert np.allclose(quantize(F, b).entries, res.steps[0].F.toarray(), atol=1e-12)

    def test_order_cap(self, setup11, x1x2):
        spec, b, H, _ = setup11
        with pytest.raises(ValueError):
            normal_form_iterate(H, quantize(x1x2, b), spec, 0.01, 5)


class TestObservableStability:
    def test_zero_eps(self, setup11):
        _, b, _, band = setup11
        assert observable_stability(np.eye(b.size), x(0, 2) ** 2, b, band) == 0

    def test_first_order_and_halving(self, setup11):
        spec, b, H, band = setup11
        V = quantize(x(0, 2) * x(1, 2) + 0.3 * xi(0, 2) ** 3, b)
        vals = [
            observable_stability(normal_form_iterate(H, V, spec, eps, 1).unitary, WeylSymbol.harmonic([1, 1]), b, band)
            for eps in (0.02, 0.01)
        ]
        first = 0.01 * band_norm(split_resonant(V.entries, b, spec)[1], band)
        assert vals[1] == pytest.approx(first, rel=0.05)
        assert vals[0] / vals[1] == pytest.approx(2, rel=0.15)
