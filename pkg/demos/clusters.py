"""Spectral clusters of H + eps*x1*x2 for the resonant pair omega = (1, 1).

Each unperturbed level k*hbar splits into k members; the split follows the
eigenvalues of the averaged perturbation restricted to that level.
"""

import numpy as np

from oscilab import FrequencySpec, WeylSymbol
from oscilab.quantization import basis_for, cluster_spectrum, harmonic_matrix, quantize

spec = FrequencySpec.from_omega_int([1, 1])
hbar = 0.05
eps = hbar**2
basis = basis_for(2, hbar, 1.2)
H = harmonic_matrix(spec, basis)
V = quantize(WeylSymbol.x(0, 2) * WeylSymbol.x(1, 2), basis)
rep = cluster_spectrum(H + V * eps, H, eps, (0.85, 1.15), omega=spec.omega)

Hd = np.real(np.diag(H.entries))
print(f"{'level':>8} {'size':>5} {'width/eps':>10} {'first-order error/eps^2':>24}")
for c in rep.clusters:
    shell = np.abs(Hd - c.center) < 1e-9
    first = c.center + eps * np.linalg.eigvalsh(V.entries[np.ix_(shell, shell)])
    if len(first) != len(c.members):
        continue  # level cut by the window
    err = np.abs(np.sort(c.members) - first).max() / eps**2
    print(f"{c.center:8.3f} {len(c.members):5d} {c.width / eps:10.4f} {err:24.4f}")
