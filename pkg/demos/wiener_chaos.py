"""Multiple Wiener integrals on a sampled basis.

A ChaosBasis turns functions on M sample points into an isonormal Gaussian
field.  The isometry E I_k(h^k)^2 = k! |h|^{2k} is checked by simulation,
and the Girsanov-type limit variable J is drawn from the eigen-expansion
of the operator's symmetric kernel.
"""
import math

import numpy as np

from fluctlab import TimeGrid, build_sample_operator, example31_spec, simulate_reference
from fluctlab.mwi import ChaosBasis, ik_product_form, sample_J

M = 500
h = np.sin(np.linspace(0, 3, M))
basis = ChaosBasis(M, seed=2)
norm2 = basis.inner(h, h)
for k in (1, 2, 3):
    x = ik_product_form(basis, h, k).sample(200_000)
    print(f"k={k}: E I_k^2 = {np.mean(x ** 2):.4f}, k!|h|^(2k) = {math.factorial(k) * norm2 ** k:.4f}")

spec = example31_spec()
grid = TimeGrid.from_step(1.0, 0.02)
ref = simulate_reference(spec, 4000, grid, seed=1)
op = build_sample_operator(spec, ref, (0.5, 0.5), M=400, seed=9)
js = sample_J(op)
J = js.sample(200_000)
print(f"J: mean {J.mean():.4f} (closed form {js.mean:.4f}), variance {J.var():.4f} (closed form {js.variance:.4f})")
print(f"E exp(J) = {np.exp(J).mean():.4f}; retained rank {js.basis.R}, captured mass {js.basis.captured_mass:.3f}")
