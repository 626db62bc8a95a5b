import numpy as np
import pytest

from fanoflow.errors import ConfigurationError, DomainError
from fanoflow.polytopes import preset
from fanoflow.potentials import Grid, PotentialField
from fanoflow.snapshot import (read_snapshot, snapshot_path, write_snapshot)


def _field():
    grid = Grid(half_width=12.0, resolution=32)
    x, y = grid.meshgrid()
    phi = 0.01 * np.sin(x) * np.exp(-0.1 * y * y)
    return PotentialField(preset("bl2"), grid).with_phi(phi, gauge=-0.375)


def test_round_trip_is_bit_exact(tmp_path):
    field = _field()
    p1 = tmp_path / "a.txt"
    write_snapshot(p1, field, t=1.0 / 3.0)
    back, t = read_snapshot(p1)
    assert t == 1.0 / 3.0  # no decimal rounding: hex floats
    assert back.preset.name == "bl2"
    assert back.gauge == field.gauge
    assert np.array_equal(back.phi, field.phi)
    assert np.array_equal(back.reference.weights, field.reference.weights)
    p2 = tmp_path / "b.txt"
    write_snapshot(p2, back, t=t)
    assert p1.read_bytes() == p2.read_bytes()


def test_magic_rejection(tmp_path):
    p = tmp_path / "x.txt"
    p.write_text("not a snapshot\n")
    with pytest.raises(ConfigurationError):
        read_snapshot(p)


def test_truncated_header_rejected(tmp_path):
    field = _field()
    p = tmp_path / "a.txt"
    write_snapshot(p, field, t=0.0)
    text = p.read_text().splitlines()
    (tmp_path / "cut.txt").write_text("\n".join(text[:3]) + "\n")
    with pytest.raises((ConfigurationError, IndexError, ValueError)):
        read_snapshot(tmp_path / "cut.txt")


def test_weight_count_mismatch(tmp_path):
    field = _field()
    p = tmp_path / "a.txt"
    write_snapshot(p, field, t=0.0)
    text = p.read_text().replace("preset = bl2", "preset = cp2")
    (tmp_path / "swap.txt").write_text(text)
    with pytest.raises(DomainError):
        read_snapshot(tmp_path / "swap.txt")


def test_snapshot_path_sorts_by_time(tmp_path):
    names = [snapshot_path(tmp_path, t) for t in (0.0, 0.25, 2.0, 10.0, 50.0)]
    assert names == sorted(names)
