"""For the non-resonant pair omega = (1, sqrt 2) every eigenfunction of the
weakly perturbed oscillator sits on one invariant torus: almost all of its
Husimi mass lies within 4 sqrt(hbar) of the torus of its mean actions."""

import numpy as np

from oscilab import FrequencySpec, WeylSymbol
from oscilab.measure_lab import PhaseGrid, actions_of, husimi_cloud, torus_mass
from oscilab.quantization import basis_for, harmonic_matrix, quantize, spectrum

spec = FrequencySpec.from_json({"d": 2, "nu": [[1, 0], [0, 1]], "v": [{"rat": [1, 1]}, {"surd": {"rat": [1, 1], "root": 2}}]})
hbar = 0.1
b = basis_for(2, hbar, 1.2, spec.omega)
P = harmonic_matrix(spec, b) + quantize(WeylSymbol.x(0, 2) * WeylSymbol.x(1, 2), b) * hbar**3
pairs = spectrum(P, (0.9, 1.1), omega=spec.omega)
grid = PhaseGrid.covering(1.5, hbar, per_sqrt_hbar=1.5)
for lam, psi in zip(pairs.values, pairs.vectors.T):
    E = actions_of(psi, b)
    mass = torus_mass(husimi_cloud(psi, b, grid), E, 4 * np.sqrt(hbar))
    print(f"lambda={lam:.5f}  actions=({E[0]:.3f}, {E[1]:.3f})  torus mass={mass:.5f}")
