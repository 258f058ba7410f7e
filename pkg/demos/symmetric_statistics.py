"""Degenerate symmetric statistics of two data types and their chaos limits.

For centered functions the normalized pair sum (2/N) e_2(g(X)) converges to
the second-chaos variable I_2(g (x) g), whose second moment is 2 |g|^4.
"""
import numpy as np

from fluctlab.mwi import ProductKernel, elementary_symmetric, symmetric_statistic

gen = np.random.default_rng(0)
data = gen.standard_normal(8)
g = lambda x: x ** 2 - 1.0
brute = symmetric_statistic(lambda a, b: g(a) * g(b), data, 2)
fast = symmetric_statistic(ProductKernel(g), data, 2)
print(f"pair sum by enumeration {brute:.6f}, by Newton identities {fast:.6f}")

N, R = 2000, 4000
x = gen.standard_normal((R, N))
stat = 2.0 * elementary_symmetric(g(x), 2) / N
print(f"E stat^2 = {np.mean(stat ** 2):.3f}  vs  2 |g|^4 = {2 * 2.0 ** 2:.3f}")
