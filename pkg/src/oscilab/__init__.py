"""Semiclassical toolkit for perturbed harmonic oscillators.

Exact symbol algebra for polynomial Weyl symbols, Hermite-basis quantization,
quantum normal forms, coherent-state propagation along averaged flows,
quasimode synthesis and phase-space measure diagnostics.
"""

from .frequency import FrequencySpec, ReducedHamiltonianSet, reduced_hamiltonians, resonance_module
from .symbol_algebra import WeylSymbol, average, poisson, solve_cohomological
from .quantization import HermiteBasisSpec, OperatorMatrix, basis_for, quantize, spectrum
from .normal_form import normal_form_iterate
from .coherent_propagation import StateVector, coherent_state, propagate_leading
from .quasimode_synth import BumpFunction, synthesize
from .measure_lab import husimi_cloud, invariance_test, localization_test

__version__ = "0.1.0"

__all__ = [
    "BumpFunction",
    "FrequencySpec",
    "HermiteBasisSpec",
    "OperatorMatrix",
    "ReducedHamiltonianSet",
    "StateVector",
    "WeylSymbol",
    "average",
    "basis_for",
    "coherent_state",
    "husimi_cloud",
    "invariance_test",
    "localization_test",
    "normal_form_iterate",
    "poisson",
    "propagate_leading",
    "quantize",
    "reduced_hamiltonians",
    "resonance_module",
    "solve_cohomological",
    "spectrum",
    "synthesize",
]
