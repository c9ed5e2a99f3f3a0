"""Extended-XYZ I/O, the Morse oracle and dataset splits."""

import math

import numpy as np
import pytest

from freecg.data import (
    Dataset,
    MorseOracle,
    ParseError,
    PlacementError,
    format_extxyz,
    generate_synthetic,
    parse_extxyz,
    read_extxyz,
    symbol_to_z,
    write_extxyz,
)
from freecg.model import MoleculeFrame


def _random_frames(n, seed=0):
    rng = np.random.default_rng(seed)
    frames = []
    for k in range(n):
        m = int(rng.integers(1, 9))
        labelled = k % 3 != 0
        frames.append(MoleculeFrame(
            atomic_numbers=rng.integers(1, 119, size=m),
            positions=rng.normal(scale=10.0, size=(m, 3)),
            energy=float(rng.normal() * 1e3) if labelled else None,
            forces=rng.normal(size=(m, 3)) * 10.0 ** rng.integers(-8, 4) if labelled else None,
        ))
    return frames


# ---------------------------------------------------------------------------
# parsing


def test_minimal_frame():
    (fr,) = parse_extxyz("1\nenergy=0.0\nH 0 0 0\n")
    assert fr.n_atoms == 1 and fr.energy == 0.0
    assert fr.atomic_numbers.tolist() == [1] and fr.forces is None


def test_round_trip_is_value_identical():
    frames = _random_frames(100)
    back = parse_extxyz(format_extxyz(frames))
    assert len(back) == len(frames)
    for a, b in zip(frames, back):
        assert np.array_equal(a.atomic_numbers, b.atomic_numbers)
        assert np.array_equal(a.positions, b.positions)
        assert a.energy == b.energy
        if a.forces is None:
            assert b.forces is None
        else:
            assert np.array_equal(a.forces, b.forces)


def test_file_round_trip(tmp_path):
    ds = generate_synthetic(5, 4, seed=1)
    path = tmp_path / "d.xyz"
    write_extxyz(path, ds.frames)
    for a, b in zip(ds.frames, read_extxyz(path)):
        assert np.array_equal(a.positions, b.positions) and a.energy == b.energy
        assert np.array_equal(a.forces, b.forces)


def test_extra_properties_and_quoting():
    (fr,) = parse_extxyz('2\nenergy=-1.5 comment="two words" pbc="F F F"\nC 0 0 0 1 2 3\nO 1.2 0 0 -1 -2 -3\n')
    assert fr.energy == -1.5
    np.testing.assert_array_equal(fr.forces, [[1, 2, 3], [-1, -2, -3]])


def test_multiple_frames_and_blank_separators():
    text = "1\nenergy=1\nH 0 0 0\n\n2\nenergy=2\nH 0 0 0\nH 0 0 1\n"
    frames = parse_extxyz(text)
    assert [f.n_atoms for f in frames] == [1, 2]
    assert [f.energy for f in frames] == [1.0, 2.0]


@pytest.mark.parametrize(
    "text, line, fragment",
    [
        ("2\nenergy=0\nH 0 0 0\n", 4, "truncated"),
        ("1\nenergy=0\nXx 0 0 0\n", 3, "unknown element"),
        ("1\nenergy=0\nH 0 zero 0\n", 3, "malformed number"),
        ("1\nenergy=abc\nH 0 0 0\n", 2, "malformed number"),
        ("one\nenergy=0\nH 0 0 0\n", 1, "atom count"),
        ("1\nenergy=0\nH 0 0\n", 3, "fields"),
        ("1\nenergy=0 junk\nH 0 0 0\n", 2, "key=value"),
        ("1\nenergy=0\nH 0 0 0\n0\nenergy=0\n", 4, "positive"),
    ],
)
def test_parse_errors_name_the_line(text, line, fragment):
    with pytest.raises(ParseError, match=fragment) as info:
        parse_extxyz(text)
    assert info.value.line == line
    assert f"line {line}" in str(info.value)


def test_partial_forces_rejected():
    with pytest.raises(ParseError, match="all atoms or none"):
        parse_extxyz("2\nenergy=0\nH 0 0 0 1 1 1\nH 0 0 1\n")


def test_symbols():
    assert symbol_to_z("H") == 1 and symbol_to_z("C") == 6 and symbol_to_z("Og") == 118
    with pytest.raises(KeyError):
        symbol_to_z("Q")


# ---------------------------------------------------------------------------
# Morse oracle


def test_forces_vanish_at_equilibrium():
    oracle = MorseOracle()
    De, a, r0 = oracle.pair(1, 6)
    e, f = oracle.energy_and_forces([1, 6], [[0.0, 0.0, 0.0], [r0, 0.0, 0.0]])
    assert abs(e + De) < 1e-12
    assert np.abs(f).max() < 1e-10


def test_oracle_forces_match_finite_differences():
    oracle = MorseOracle()
    ds = generate_synthetic(10, 6, seed=2)
    h = 1e-5
    for fr in ds.frames:
        num = np.zeros_like(fr.positions)
        for i in range(fr.n_atoms):
            for k in range(3):
                p, m = fr.positions.copy(), fr.positions.copy()
                p[i, k] += h
                m[i, k] -= h
                num[i, k] = -(oracle.energy_and_forces(fr.atomic_numbers, p)[0]
                              - oracle.energy_and_forces(fr.atomic_numbers, m)[0]) / (2 * h)
        assert np.abs(num - fr.forces).max() / np.abs(fr.forces).max() < 1e-8


def test_oracle_pair_symmetric_and_complete():
    oracle = MorseOracle()
    assert oracle.pair(8, 1) == oracle.pair(1, 8)
    with pytest.raises(KeyError):
        oracle.pair(1, 7)


def test_oracle_energy_hand_value():
    oracle = MorseOracle(params={(1, 1): (2.0, 1.0, 1.0)})
    e, _ = oracle.energy_and_forces([1, 1], [[0, 0, 0], [0, 0, 2.0]])
    assert abs(e - 2.0 * ((1 - math.exp(-1.0)) ** 2 - 1)) < 1e-14


# ---------------------------------------------------------------------------
# synthetic generation


def test_same_seed_is_bitwise_identical():
    a, b = generate_synthetic(20, 5, seed=3), generate_synthetic(20, 5, seed=3)
    assert format_extxyz(a.frames) == format_extxyz(b.frames)
    c = generate_synthetic(20, 5, seed=4)
    assert format_extxyz(a.frames) != format_extxyz(c.frames)


def test_placement_respects_box_and_separation():
    ds = generate_synthetic(50, 8, seed=5)
    for fr in ds.frames:
        assert fr.positions.min() >= 0.0 and fr.positions.max() <= 6.0
        d = np.linalg.norm(fr.positions[:, None] - fr.positions[None], axis=-1)
        assert d[np.triu_indices(8, 1)].min() >= 0.8
        assert fr.energy is not None and fr.forces.shape == (8, 3)


def test_atom_count_range():
    for n in (1, 17):
        with pytest.raises(ValueError):
            generate_synthetic(1, n, seed=0)


def test_placement_failure():
    with pytest.raises(PlacementError):
        generate_synthetic(1, 16, seed=0, box=1.0, min_separation=0.9, max_attempts=50)


# ---------------------------------------------------------------------------
# splits


def test_splits_disjoint_and_exhaustive():
    ds = Dataset(list(range(103)), seed=7)
    idx = ds.split_indices()
    sets = [set(idx[k].tolist()) for k in ("train", "val", "test")]
    assert sum(len(s) for s in sets) == 103
    assert set().union(*sets) == set(range(103))
    assert [len(s) for s in sets] == [82, 10, 11]


def test_split_is_pure_function_of_seed():
    a = Dataset(list(range(50)), seed=1).split_indices()
    b = Dataset(list(range(50)), seed=1).split_indices()
    c = Dataset(list(range(50)), seed=2).split_indices()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert not np.array_equal(a["train"], c["train"])


def test_subset_returns_frames():
    ds = generate_synthetic(10, 3, seed=0)
    assert sum(len(ds.subset(k)) for k in ("train", "val", "test")) == 10
