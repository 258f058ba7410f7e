"""Persistence of path ensembles and sample operators.

Ensemble files start with the magic bytes ``FLXENS01``, a little-endian
``uint32`` header length and a JSON header; the body is little-endian
64-bit floats, each array stored particle-major then time-major.
"""
import json
import struct
from pathlib import Path

import numpy as np

from .model import PopulationLayout, TimeGrid
from .simulate import PathEnsemble

__all__ = ["save_ensemble", "load_ensemble", "ensemble_to_csv", "save_operator", "load_operator_matrix"]

MAGIC = b"FLXENS01"
_ARRAYS = ("W", "X", "factor_W", "factor_Y", "moments")


def _header(ens: PathEnsemble, extra=None):
    arrays = []
    for name in _ARRAYS:
        arr = getattr(ens, name)
        if arr is not None:
            arrays.append({"name": name, "shape": list(arr.shape)})
    head = {
        "format": "fluctlab-ensemble",
        "version": 1,
        "dims": {"P": int(ens.layout.N), "steps": int(ens.grid.n), "d": int(ens.d)},
        "grid": ens.grid.to_dict(),
        "layout": ens.layout.to_dict(),
        "seed": int(ens.seed),
        "factor_seed": None if ens.factor_seed is None else int(ens.factor_seed),
        "arrays": arrays,
    }
    if extra:
        head["extra"] = extra
    return head


def save_ensemble(path, ens: PathEnsemble, extra=None):
    """Write ``ens`` to a binary ensemble file; returns the path."""
    path = Path(path)
    head = json.dumps(_header(ens, extra), sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        for name in _ARRAYS:
            arr = getattr(ens, name)
            if arr is not None:
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return path


def load_ensemble(path) -> PathEnsemble:
    """Read an ensemble written by :func:`save_ensemble`."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path} is not an ensemble file")
        (length,) = struct.unpack("<I", fh.read(4))
        head = json.loads(fh.read(length))
        arrays = {}
        for spec in head["arrays"]:
            count = int(np.prod(spec["shape"]))
            data = np.frombuffer(fh.read(8 * count), dtype="<f8")
            if data.size != count:
                raise ValueError(f"{path} is truncated")
            arrays[spec["name"]] = data.reshape(spec["shape"]).astype(float)
    grid = TimeGrid(float(head["grid"]["T"]), int(head["grid"]["n"]))
    layout = PopulationLayout(tuple(head["layout"]["counts"]), tuple(head["layout"]["weights"]))
    return PathEnsemble(
        grid, layout, arrays["W"], arrays["X"], head["seed"],
        arrays.get("factor_W"), arrays.get("factor_Y"), head["factor_seed"], arrays.get("moments"),
    )


def ensemble_to_csv(path, ens: PathEnsemble, comment=None):
    """Long-format CSV ``particle,type,step,t,W1..Wd,X1..Xd`` for small runs.

    ``comment`` is written first as a ``#`` line when given.
    """
    d = ens.d
    times = ens.grid.times
    member = ens.layout.membership
    cols = ["particle", "type", "step", "t"] + [f"W{c + 1}" for c in range(d)] + [f"X{c + 1}" for c in range(d)]
    with open(path, "w", newline="\n") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        fh.write(",".join(cols) + "\n")
        for i in range(ens.layout.N):
            for k in range(ens.grid.n + 1):
                vals = [repr(float(v)) for v in ens.W[i, k]] + [repr(float(v)) for v in ens.X[i, k]]
                fh.write(f"{i},{member[i]},{k},{float(times[k])!r}," + ",".join(vals) + "\n")
    return Path(path)


def save_operator(prefix, op):
    """Store an operator as ``<prefix>.samples.flx``, ``<prefix>.H.npy`` and a JSON index.

    The sample tuples are written as an ensemble with one block of ``M``
    paths per type; the matrix goes to a plain ``.npy`` blob.
    """
    prefix = Path(prefix)
    K, M = op.K, op.M
    W = np.concatenate([op.samples[a][0] for a in range(K)], axis=0)
    X = np.concatenate([op.samples[a][1] for a in range(K)], axis=0)
    layout = PopulationLayout((M,) * K, tuple(op.weights))
    ens = PathEnsemble(op.grid, layout, W, X, int(op.seed))
    ens_path = save_ensemble(prefix.with_suffix(".samples.flx"), ens)
    mat_path = prefix.with_suffix(".H.npy")
    np.save(mat_path, np.ascontiguousarray(op.H, dtype="<f8"))
    index = {
        "samples": ens_path.name,
        "matrix": mat_path.name,
        "M": M,
        "K": K,
        "weights": list(op.weights),
        "seed": int(op.seed),
        "conditional": bool(op.conditional),
    }
    idx_path = prefix.with_suffix(".operator.json")
    with open(idx_path, "w", newline="\n") as fh:
        json.dump(index, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return idx_path


def load_operator_matrix(index_path):
    """Load ``(index, H, samples)`` from :func:`save_operator` output."""
    index_path = Path(index_path)
    with open(index_path) as fh:
        index = json.load(fh)
    H = np.load(index_path.parent / index["matrix"])
    ens = load_ensemble(index_path.parent / index["samples"])
    samples = tuple(ens.paths(a) for a in range(index["K"]))
    return index, H, samples
