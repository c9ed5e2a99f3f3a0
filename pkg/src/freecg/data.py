"""Extended-XYZ I/O, the synthetic Morse oracle and dataset splits.

Units: positions in Angstrom, energies in kcal/mol, forces in kcal/mol/A.
"""

from __future__ import annotations

import math
import shlex
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import MoleculeFrame

__all__ = [
    "ParseError",
    "PlacementError",
    "SYMBOLS",
    "symbol_to_z",
    "parse_extxyz",
    "format_extxyz",
    "read_extxyz",
    "write_extxyz",
    "MorseOracle",
    "Dataset",
    "generate_synthetic",
]

SYMBOLS = (
    "H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Sc Ti V Cr Mn Fe Co Ni Cu Zn "
    "Ga Ge As Se Br Kr Rb Sr Y Zr Nb Mo Tc Ru Rh Pd Ag Cd In Sn Sb Te I Xe Cs Ba La Ce "
    "Pr Nd Pm Sm Eu Gd Tb Dy Ho Er Tm Yb Lu Hf Ta W Re Os Ir Pt Au Hg Tl Pb Bi Po At Rn "
    "Fr Ra Ac Th Pa U Np Pu Am Cm Bk Cf Es Fm Md No Lr Rf Db Sg Bh Hs Mt Ds Rg Cn Nh Fl "
    "Mc Lv Ts Og"
).split()
_Z = {s: i + 1 for i, s in enumerate(SYMBOLS)}


class ParseError(ValueError):
    def __init__(self, line: int, msg: str):
        self.line = line
        super().__init__(f"line {line}: {msg}")


class PlacementError(RuntimeError):
    pass


def symbol_to_z(symbol: str) -> int:
    try:
        return _Z[symbol]
    except KeyError:
        raise KeyError(f"unknown element symbol {symbol!r}") from None


def _float(tok: str, lineno: int) -> float:
    try:
        value = float(tok)
    except ValueError:
        raise ParseError(lineno, f"malformed number {tok!r}") from None
    return value


def _properties(line: str, lineno: int) -> dict[str, str]:
    try:
        tokens = shlex.split(line)
    except ValueError as exc:
        raise ParseError(lineno, f"bad property line: {exc}") from None
    props = {}
    for tok in tokens:
        key, sep, value = tok.partition("=")
        if not sep or not key:
            raise ParseError(lineno, f"expected key=value, got {tok!r}")
        props[key] = value
    return props


def parse_extxyz(text: str) -> list[MoleculeFrame]:
    """Parse concatenated frames.

    Each frame: atom count; ``key=value`` property line (``energy=`` when
    labelled); one ``symbol x y z [fx fy fz]`` line per atom.
    """
    lines = text.splitlines()
    frames = []
    k = 0
    while k < len(lines):
        if not lines[k].strip():
            k += 1
            continue
        head = k + 1
        try:
            n = int(lines[k].strip())
        except ValueError:
            raise ParseError(head, f"expected atom count, got {lines[k].strip()!r}") from None
        if n < 1:
            raise ParseError(head, f"atom count must be positive, got {n}")
        if k + 1 >= len(lines):
            raise ParseError(head + 1, "missing property line")
        props = _properties(lines[k + 1], head + 1)
        energy = _float(props["energy"], head + 1) if "energy" in props else None
        z, pos, frc = [], [], []
        for a in range(n):
            lineno = k + 3 + a
            if k + 2 + a >= len(lines):
                raise ParseError(lineno, f"frame truncated: expected {n} atoms, found {a}")
            tok = lines[k + 2 + a].split()
            if len(tok) not in (4, 7):
                raise ParseError(lineno, f"expected 'symbol x y z [fx fy fz]', got {len(tok)} fields")
            try:
                z.append(symbol_to_z(tok[0]))
            except KeyError as exc:
                raise ParseError(lineno, str(exc)) from None
            pos.append([_float(t, lineno) for t in tok[1:4]])
            if len(tok) == 7:
                frc.append([_float(t, lineno) for t in tok[4:7]])
        if frc and len(frc) != n:
            raise ParseError(k + 3, "forces must be given for all atoms or none")
        frames.append(
            MoleculeFrame(
                atomic_numbers=z,
                positions=pos,
                energy=energy,
                forces=np.asarray(frc) if frc else None,
            )
        )
        k += 2 + n
    return frames


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def format_extxyz(frames) -> str:
    out = []
    for fr in frames:
        out.append(str(fr.n_atoms))
        out.append("" if fr.energy is None else f"energy={_fmt(fr.energy)}")
        for a in range(fr.n_atoms):
            cols = [SYMBOLS[fr.atomic_numbers[a] - 1]] + [_fmt(v) for v in fr.positions[a]]
            if fr.forces is not None:
                cols += [_fmt(v) for v in fr.forces[a]]
            out.append(" ".join(cols))
    return "\n".join(out) + "\n"


def read_extxyz(path) -> list[MoleculeFrame]:
    return parse_extxyz(Path(path).read_text())


def write_extxyz(path, frames) -> None:
    Path(path).write_text(format_extxyz(frames))


# ---------------------------------------------------------------------------
# synthetic labels


_DEFAULT_MORSE = {
    (1, 1): (8.0, 1.8, 0.9),
    (1, 6): (10.0, 1.6, 1.1),
    (1, 8): (12.0, 1.7, 1.0),
    (6, 6): (14.0, 1.4, 1.5),
    (6, 8): (16.0, 1.5, 1.3),
    (8, 8): (12.0, 1.5, 1.4),
}


@dataclass
class MorseOracle:
    """Pairwise Morse potential ``De [(1 - exp(-a (r - r0)))^2 - 1]``.

    ``params`` maps sorted element pairs to ``(De [kcal/mol], a [1/A], r0 [A])``.
    """

    params: dict[tuple[int, int], tuple[float, float, float]] = field(
        default_factory=lambda: dict(_DEFAULT_MORSE)
    )

    def pair(self, z1: int, z2: int):
        key = (min(z1, z2), max(z1, z2))
        if key not in self.params:
            raise KeyError(f"no Morse parameters for element pair {key}")
        return self.params[key]

    def energy_and_forces(self, atomic_numbers, positions):
        z = np.asarray(atomic_numbers)
        pos = np.asarray(positions, dtype=np.float64)
        energy = 0.0
        forces = np.zeros_like(pos)
        for i in range(len(z)):
            for j in range(i + 1, len(z)):
                De, a, r0 = self.pair(int(z[i]), int(z[j]))
                rij = pos[j] - pos[i]
                r = math.sqrt(float(rij @ rij))
                x = math.exp(-a * (r - r0))
                energy += De * ((1 - x) ** 2 - 1)
                dEdr = 2 * De * a * x * (1 - x)
                g = dEdr * rij / r  # dE/dr_j
                forces[j] -= g
                forces[i] += g
        return energy, forces


@dataclass
class Dataset:
    frames: list[MoleculeFrame]
    seed: int = 0
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)

    def split_indices(self) -> dict[str, np.ndarray]:
        """Disjoint train/val/test index sets; a pure function of ``seed`` and size."""
        n = len(self.frames)
        perm = np.random.default_rng(self.seed).permutation(n)
        n_train = int(round(self.fractions[0] * n))
        n_val = int(round(self.fractions[1] * n))
        if n_train + n_val > n:
            n_val = n - n_train
        return {
            "train": np.sort(perm[:n_train]),
            "val": np.sort(perm[n_train : n_train + n_val]),
            "test": np.sort(perm[n_train + n_val :]),
        }

    def subset(self, name: str) -> list[MoleculeFrame]:
        return [self.frames[i] for i in self.split_indices()[name]]


def generate_synthetic(
    n_frames: int,
    n_atoms: int,
    seed: int,
    oracle: MorseOracle | None = None,
    species: tuple[int, ...] = (1, 6, 8),
    box: float = 6.0,
    min_separation: float = 0.8,
    max_attempts: int = 10_000,
) -> Dataset:
    """Random frames inside a cubic box, labelled by the Morse oracle."""
    if not 2 <= n_atoms <= 16:
        raise ValueError(f"n_atoms must lie in [2, 16], got {n_atoms}")
    oracle = oracle or MorseOracle()
    rng = np.random.default_rng(seed)
    frames = []
    for _ in range(n_frames):
        z = rng.choice(np.asarray(species), size=n_atoms)
        pos = np.zeros((n_atoms, 3))
        for a in range(n_atoms):
            for _attempt in range(max_attempts):
                trial = rng.uniform(0.0, box, size=3)
                if a == 0 or np.min(np.linalg.norm(pos[:a] - trial, axis=1)) >= min_separation:
                    pos[a] = trial
                    break
            else:
                raise PlacementError(
                    f"could not place atom {a} with separation {min_separation} A after {max_attempts} attempts"
                )
        energy, forces = oracle.energy_and_forces(z, pos)
        frames.append(MoleculeFrame(atomic_numbers=z, positions=pos, energy=energy, forces=forces))
    return Dataset(frames=frames, seed=seed)
