"""Regenerate the frozen oracle values in frozen.json.

Independent of the package: plain numpy generator, direct evaluation of the
closed-form covariance expressions of the two-type sine example on the
dt = 0.01 grid with left-endpoint time integrals.

Run: python tests/oracles/compute_oracles.py
"""
import json
from pathlib import Path

import numpy as np


def example31_sigmas(paths=4_000_000, dt=0.01, T=1.0, lam=0.5, k1=1.0, k2=1.0, seed=20240101, chunk=50_000):
    n = int(round(T / dt))
    gen = np.random.default_rng(seed)
    c = np.sqrt(lam * (1 - lam))
    s = np.zeros(3)
    s2 = np.zeros(3)
    done = 0
    while done < paths:
        m = min(chunk, paths - done)
        W = np.cumsum(gen.standard_normal((m, n)) * np.sqrt(dt), axis=1)
        left = np.hstack([np.zeros((m, 1)), W[:, :-1]])
        I = dt * np.sin(left).sum(axis=1)
        W1 = W[:, -1]
        v = np.stack([
            k1 ** 2 * ((W1 - (1 - lam) * I) ** 2 + lam * (1 - lam) * I ** 2),
            c * k1 * k2 * (2 * W1 - I) * I,
            k2 ** 2 * ((W1 - lam * I) ** 2 + lam * (1 - lam) * I ** 2),
        ], axis=1)
        s += v.sum(axis=0)
        s2 += (v ** 2).sum(axis=0)
        done += m
    mean = s / paths
    se = np.sqrt((s2 / paths - mean ** 2) / paths)
    return {"sigma11": mean[0], "sigma12": mean[1], "sigma22": mean[2],
            "se11": se[0], "se12": se[1], "se22": se[2], "paths": paths, "seed": seed, "dt": dt}


def main():
    out = {"example31_sin_half": {k: (v if isinstance(v, int) else float(v)) for k, v in example31_sigmas().items()}}
    path = Path(__file__).with_name("frozen.json")
    path.write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    print(json.dumps(out, indent=2))


if __name__ == "__main__":
    main()
