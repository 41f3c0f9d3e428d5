"""Build a quasimode on the torus through z0 and compare its phase-space
pairings with the averaged classical measure it should concentrate on."""

from oscilab import FrequencySpec, WeylSymbol
from oscilab.quantization import basis_for, wigner_pairing
from oscilab.quasimode_synth import BumpFunction, synthesize, target_pairing
from oscilab.symbol_algebra import average
from oscilab.xcli import default_point

x, xi = WeylSymbol.x, WeylSymbol.xi
spec = FrequencySpec.from_omega_int([1, 1])
V = x(0, 2) * x(1, 2)
Vavg = average(V, spec)
z0 = default_point(spec)
chi = BumpFunction()

for hbar in (0.1, 0.07, 0.05):
    b = basis_for(2, hbar, 1.5)
    q = synthesize(z0, 4.0, chi, Vavg, hbar**2, b, spec, V=V)
    print(f"hbar={hbar:<5} lambda={q.lam:.6f} width={q.width:.3e} width/hbar^3={q.width / hbar**3:.3f}")

print("\npairings at hbar=0.05 (quantum vs target):")
for name, a in {"x1^2": x(0, 2) ** 2, "x1*xi2": x(0, 2) * xi(1, 2), "H1": WeylSymbol.action(0, 2)}.items():
    print(f"  {name:7s} {wigner_pairing(q.state.coefficients, a, b):+.4f}  {target_pairing(a, z0, 4.0, chi, Vavg, spec):+.4f}")
