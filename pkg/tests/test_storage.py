import json

import numpy as np
import pytest

from fluctlab.model import TimeGrid, build_layout, common_factor_preset, example31_spec
from fluctlab.operators import build_sample_operator
from fluctlab.simulate import simulate_common_factor_interacting, simulate_interacting, simulate_reference
from fluctlab.storage import ensemble_to_csv, load_ensemble, load_operator_matrix, save_ensemble, save_operator

GRID = TimeGrid.from_step(1.0, 0.1)


def test_ensemble_round_trip(tmp_path):
    ens = simulate_interacting(example31_spec(), build_layout(2, counts=(3, 2)), GRID, 4)
    p = save_ensemble(tmp_path / "e.flx", ens, {"config_hash": "abc"})
    back = load_ensemble(p)
    assert np.array_equal(back.X, ens.X) and np.array_equal(back.W, ens.W)
    assert back.layout.counts == ens.layout.counts
    assert back.grid.n == GRID.n and back.grid.T == GRID.T
    assert back.seed == ens.seed


def test_factor_ensemble_round_trip(tmp_path):
    spec = common_factor_preset("factor_drift", K=1, gain=1.0)
    ens = simulate_common_factor_interacting(spec, build_layout(1, N=4), GRID, 1, 2)
    back = load_ensemble(save_ensemble(tmp_path / "f.flx", ens))
    assert np.array_equal(back.factor_Y, ens.factor_Y) and np.array_equal(back.factor_W, ens.factor_W)


def test_save_is_byte_stable(tmp_path):
    ens = simulate_interacting(example31_spec(), build_layout(2, N=4), GRID, 4)
    a = save_ensemble(tmp_path / "a.flx", ens).read_bytes()
    b = save_ensemble(tmp_path / "b.flx", ens).read_bytes()
    assert a == b and a.startswith(b"FLXENS01")


def test_csv_layout(tmp_path):
    ens = simulate_interacting(example31_spec(), build_layout(2, N=4), GRID, 4)
    p = ensemble_to_csv(tmp_path / "e.csv", ens, "config_hash=xyz")
    lines = p.read_text().splitlines()
    assert lines[0] == "# config_hash=xyz"
    assert len(lines) == 2 + 4 * (GRID.n + 1)
    last = lines[-1].split(",")
    assert int(last[0]) == 3 and int(last[1]) == 1
    assert float(last[-1]) == ens.X[3, -1, 0]


def test_operator_round_trip(tmp_path):
    spec = example31_spec()
    ref = simulate_reference(spec, 30, GRID, 1)
    op = build_sample_operator(spec, ref, (0.5, 0.5), 12, 3)
    idx = save_operator(tmp_path / "op", op)
    index, H, samples = load_operator_matrix(idx)
    assert np.array_equal(H, op.H)
    assert index["M"] == 12 and index["K"] == 2 and not index["conditional"]
    assert np.array_equal(samples[1][1], op.samples[1][1])
    assert json.loads(idx.read_text())["seed"] == 3


def test_missing_file_raises(tmp_path):
    with pytest.raises(OSError):
        load_ensemble(tmp_path / "nope.flx")
