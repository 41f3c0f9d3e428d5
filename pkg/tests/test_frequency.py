import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
import sympy
from hypothesis import given, settings, strategies as st

from oscilab.classical_flow import harmonic_flow, oscillator_flow
from oscilab.frequency import (
    FrequencyError,
    FrequencySpec,
    denominator_profile,
    integer_kernel,
    project_degenerate,
    reduced_hamiltonians,
    resonance_module,
)

from conftest import sqrt2_spec


def saturated(basis: np.ndarray) -> bool:
    """An integer basis spans the full kernel lattice iff its maximal minors are coprime."""
    M = sympy.Matrix(basis.tolist())
    r = M.rows
    minors = [M.extract(list(range(r)), list(cols)).det() for cols in itertools.combinations(range(M.cols), r)]
    return math.gcd(*[int(m) for m in minors]) == 1


class TestSpec:
    def test_json_round_trip(self, spec_sqrt2):
        again = FrequencySpec.from_json(spec_sqrt2.to_json())
        assert again == spec_sqrt2
        assert np.allclose(again.omega, [1, np.sqrt(2)])

    def test_rational_coefficients_collapse(self):
        spec = FrequencySpec.create([(1, 0), (0, 1)], [Fraction(1), Fraction(2)])
        assert spec.d_omega == 1
        assert spec.nu == ((1, 2),)

    def test_float_coefficients_warn_when_dependent(self):
        with pytest.warns(UserWarning):
            FrequencySpec.create([(1, 0), (0, 1)], [0.5, 1.0])

    @pytest.mark.parametrize(
        "nu, v",
        [
            ([(2, 2)], [Fraction(1)]),  # not primitive
            ([(1, 1), (1, 0)], [1.0, np.sqrt(2)]),  # not orthogonal
            ([(1, -1)], [Fraction(1)]),  # negative frequency
        ],
    )
    def test_invalid_specs(self, nu, v):
        with pytest.raises(FrequencyError):
            FrequencySpec(2, tuple(nu), tuple(v))

    def test_missing_key(self):
        with pytest.raises(FrequencyError):
            FrequencySpec.from_json({"d": 2, "nu": [[1, 1]]})


class TestResonanceModule:
    def test_equal_frequencies(self, spec11):
        rm = resonance_module(spec11)
        assert rm.rank == 1
        assert sorted(np.abs(rm.lattice_basis[0])) == [1, 1]
        assert rm.lattice_basis[0].sum() == 0

    def test_one_two(self, spec12):
        rm = resonance_module(spec12)
        k = rm.lattice_basis[0]
        assert rm.rank == 1
        assert tuple(k) in {(2, -1), (-2, 1)}

    def test_diophantine_trivial(self, spec_sqrt2):
        assert resonance_module(spec_sqrt2).rank == 0

    def test_contains(self, spec11):
        rm = resonance_module(spec11)
        assert rm.contains([3, -3]) and not rm.contains([1, 0])

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.integers(1, 9), min_size=2, max_size=4))
    def test_kernel_is_saturated(self, omega):
        spec = FrequencySpec.from_omega_int(omega)
        rm = resonance_module(spec)
        assert rm.rank + spec.d_omega == spec.d
        assert np.all(rm.lattice_basis @ spec.nu_matrix.T == 0)
        assert saturated(rm.lattice_basis)

    def test_integer_kernel_against_sympy_rank(self):
        mat = np.array([[1, 2, 3, 0], [0, 1, -1, 2]])
        K = integer_kernel(mat)
        assert np.all(mat @ K.T == 0)
        assert K.shape[0] == 4 - sympy.Matrix(mat.tolist()).rank()
        assert saturated(K)


class TestProjectDegenerate:
    @pytest.mark.parametrize(
        "E, expected", [((1, 1), (3, 4)), ((1, 0), (3, 0)), ((0, 0), (0, 0))]
    )
    def test_examples(self, E, expected):
        assert tuple(project_degenerate(E, (3, 4))) == expected

    def test_negative_rejected(self):
        with pytest.raises(FrequencyError):
            project_degenerate((-1, 1), (3, 4))


class TestReducedHamiltonians:
    def test_equal_frequencies(self, spec11):
        r = reduced_hamiltonians(spec11, [0.5, 0.5])
        assert r.d_E == 1 and r.coeffs == ((1, 1),) and r.v_tilde == (1.0,)

    def test_degenerate_action(self, spec_sqrt2):
        r = reduced_hamiltonians(spec_sqrt2, [1, 0])
        assert r.d_E == 1 and r.coeffs == ((1, 0),)
        assert r.v_tilde == pytest.approx((1.0,))

    def test_nondegenerate(self, spec_sqrt2):
        r = reduced_hamiltonians(spec_sqrt2, [0.5, 0.25])
        assert r.d_E == 2 and r.coeffs == ((1, 0), (0, 1))
        assert r.v_tilde == pytest.approx((1.0, np.sqrt(2)))

    def test_gcd_reduction(self):
        spec = FrequencySpec.create([(2, 0, 1), (0, 1, 0)], [Fraction(1), np.sqrt(3)])
        r = reduced_hamiltonians(spec, [1.0, 1.0, 0.0])
        # projection of (2,0,1) kills the third entry; gcd 2 moves into v_tilde
        assert r.coeffs[0] == (1, 0, 0) and r.gcds[0] == 2
        assert r.v_tilde[0] == pytest.approx(2.0)

    def test_zero_actions_rejected(self, spec11):
        with pytest.raises(FrequencyError):
            reduced_hamiltonians(spec11, [0, 0])

    @pytest.mark.parametrize("which", ["11", "12", "sqrt2", "sqrt2_degenerate"])
    def test_reduced_flow_reproduces_oscillator(self, which):
        rng = np.random.default_rng(7)
        spec = {
            "11": FrequencySpec.from_omega_int([1, 1]),
            "12": FrequencySpec.from_omega_int([1, 2]),
            "sqrt2": sqrt2_spec(),
            "sqrt2_degenerate": sqrt2_spec(),
        }[which]
        E = np.array([0.3, 0.0]) if which == "sqrt2_degenerate" else np.array([0.3, 0.6])
        r = reduced_hamiltonians(spec, E)
        for _ in range(100):
            ang = rng.uniform(0, 2 * np.pi, 2)
            z = np.concatenate([np.sqrt(2 * E) * np.cos(ang), np.sqrt(2 * E) * np.sin(ang)])
            t = rng.uniform(0, 10)
            lhs = oscillator_flow(z, r.times(t * np.asarray(r.v_tilde)))
            assert np.max(np.abs(lhs - harmonic_flow(z, spec, t))) < 1e-9


class TestDenominatorProfile:
    def test_equal_frequencies(self, spec11):
        p = denominator_profile(spec11, 10)
        assert np.all(p.minima == 1.0) and p.gamma_hat == 0.0

    def test_one_two(self, spec12):
        p = denominator_profile(spec12, 10)
        assert np.all(p.minima == 1.0) and p.gamma_hat == 0.0

    def test_sqrt2(self, spec_sqrt2):
        p = denominator_profile(spec_sqrt2, 50)
        assert np.all(p.minima > 0)
        assert np.all(np.diff(p.minima) <= 0)
        # best approximations of sqrt(2) give |k . omega| ~ c / |k|
        assert 0.8 < p.gamma_hat < 1.2
        shells = p.shells.astype(float)
        c = p.minima * shells
        assert c.min() > 0.1 and c.max() < 2.0

    def test_brute_force_oracle(self, spec_sqrt2):
        K = 12
        best = min(
            abs(a + b * np.sqrt(2))
            for a in range(-K, K + 1)
            for b in range(-K, K + 1)
            if (a, b) != (0, 0)
        )
        assert denominator_profile(spec_sqrt2, K).minima[-1] == pytest.approx(best, rel=1e-12)

    def test_bad_cutoff(self, spec11):
        with pytest.raises(FrequencyError):
            denominator_profile(spec11, 0)
