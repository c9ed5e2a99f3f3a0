"""Property suites: CG oracle, O(3) equivariance, permutation invariance, gradients.

Each suite returns a list of :class:`CheckResult`; a suite passes when every
result does.  The CG oracle integrates with a 26-point Lebedev rule, a
different quadrature from the one that builds the table.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
import torch

from .irreps import (
    LAYOUT_DIM,
    build_cg_table,
    harmonic_polynomials,
    layout_matrix,
    random_rotation,
    spherical_harmonics,
    wigner_d,
)
from .model import FreeCG, MoleculeFrame, collate, energy_and_forces

__all__ = [
    "CheckResult",
    "SUITES",
    "lebedev26",
    "cg_oracle_tensor",
    "random_frame",
    "random_o3",
    "suite_cg_oracle",
    "suite_equivariance",
    "suite_permutation",
    "suite_gradient",
    "run_suite",
]

SUITES = ("equivariance", "permutation", "gradient", "cg-oracle")


@dataclass
class CheckResult:
    name: str
    value: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.value <= self.tolerance)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.value:.3e} (tol {self.tolerance:.0e})"


def lebedev26():
    """26-point Lebedev rule (exact to degree 7); weights sum to 1."""
    pts, w = [], []
    for axis in range(3):
        for s in (1.0, -1.0):
            p = [0.0, 0.0, 0.0]
            p[axis] = s
            pts.append(p)
            w.append(1.0 / 21.0)
    r2 = 1.0 / math.sqrt(2.0)
    for a, b in ((0, 1), (0, 2), (1, 2)):
        for sa, sb in itertools.product((1.0, -1.0), repeat=2):
            p = [0.0, 0.0, 0.0]
            p[a], p[b] = sa * r2, sb * r2
            pts.append(p)
            w.append(4.0 / 105.0)
    r3 = 1.0 / math.sqrt(3.0)
    for signs in itertools.product((1.0, -1.0), repeat=3):
        pts.append([s * r3 for s in signs])
        w.append(27.0 / 840.0)
    return np.asarray(pts), np.asarray(w)


def cg_oracle_tensor(lo: int, l1: int, l2: int) -> np.ndarray:
    """Unnormalised coupling tensor from Lebedev quadrature.

    Even ``lo + l1 + l2``: the triple-harmonic integral over one sphere.
    Odd: a two-sphere projection through the SO(3)-equivariant map
    ``(u, v) -> u x v + 0.5 u - 0.3 v`` placed in the highest-degree slot.
    """
    pts, w = lebedev26()
    if (lo + l1 + l2) % 2 == 0:
        yo, y1, y2 = (harmonic_polynomials(l, pts) for l in (lo, l1, l2))
        return np.einsum("p,po,pa,pb->oab", w, yo, y1, y2)
    degrees = (lo, l1, l2)
    k = int(np.argmax(degrees))
    rest = [i for i in range(3) if i != k]
    u = pts[:, None, :]
    v = pts[None, :, :]
    psi = np.cross(u, v) + 0.5 * u - 0.3 * v
    yk = harmonic_polynomials(degrees[k], psi)
    yu = harmonic_polynomials(degrees[rest[0]], pts)
    yv = harmonic_polynomials(degrees[rest[1]], pts)
    t = np.einsum("uvk,ua,vb,u,v->kab", yk, yu, yv, w, w)
    return np.moveaxis(t, [0, 1, 2], [k, rest[0], rest[1]])


def suite_cg_oracle(seed: int = 0, n_rotations: int = 50) -> list[CheckResult]:
    table = build_cg_table()
    rng = np.random.default_rng(seed)
    results = []

    worst = 0.0
    for key in table.triples():
        c = table.block(*key)
        o = cg_oracle_tensor(*key)
        s = float((c * o).sum() / (o * o).sum())
        worst = max(worst, float(np.abs(c - s * o).max() / np.abs(c).max()))
    results.append(CheckResult("cg coefficients vs Lebedev quadrature (max rel dev)", worst, 1e-8))

    worst = 0.0
    for l1 in range(3):
        for l2 in range(3):
            rows = [table.block(lo, l1, l2).reshape(2 * lo + 1, -1)
                    for lo in range(3) if abs(l1 - l2) <= lo <= l1 + l2]
            M = np.concatenate(rows)
            worst = max(worst, float(np.abs(M @ M.T - np.eye(len(M))).max()))
    results.append(CheckResult("cg orthogonality", worst, 1e-12))

    worst = 0.0
    for _ in range(n_rotations):
        R = random_rotation(rng)
        D = {l: wigner_d(l, R) for l in range(3)}
        for key in table.triples():
            lo, l1, l2 = key
            c = table.block(*key)
            a = rng.standard_normal(2 * l1 + 1)
            b = rng.standard_normal(2 * l2 + 1)
            lhs = D[lo] @ np.einsum("oab,a,b->o", c, a, b)
            rhs = np.einsum("oab,a,b->o", c, D[l1] @ a, D[l2] @ b)
            worst = max(worst, float(np.abs(lhs - rhs).max()))
    results.append(CheckResult(f"cg equivariance over {n_rotations} rotations", worst, 1e-10))

    u = rng.standard_normal((200, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    y = spherical_harmonics(u)
    ym = spherical_harmonics(-u)
    norm_dev = max(float(np.abs(np.linalg.norm(y[:, :3], axis=1) - 1).max()),
                   float(np.abs(np.linalg.norm(y[:, 3:], axis=1) - 1).max()))
    results.append(CheckResult("harmonic block norms", norm_dev, 1e-12))
    parity = max(float(np.abs(ym[:, :3] + y[:, :3]).max()), float(np.abs(ym[:, 3:] - y[:, 3:]).max()))
    results.append(CheckResult("harmonic parity", parity, 1e-14))
    return results


# ---------------------------------------------------------------------------
# model-level suites


def random_frame(rng: np.random.Generator, n_atoms: int, box: float = 3.0, min_sep: float = 0.9,
                 species=(1, 6, 7, 8)) -> MoleculeFrame:
    pos = np.zeros((n_atoms, 3))
    for a in range(n_atoms):
        for _ in range(10_000):
            trial = rng.uniform(0, box, 3)
            if a == 0 or np.linalg.norm(pos[:a] - trial, axis=1).min() >= min_sep:
                pos[a] = trial
                break
        else:
            raise RuntimeError("could not place atoms")
    z = rng.choice(np.asarray(species), n_atoms)
    return MoleculeFrame(atomic_numbers=z, positions=pos)


def random_o3(rng: np.random.Generator, reflect: bool | None = None) -> np.ndarray:
    R = random_rotation(rng)
    if reflect is None:
        reflect = bool(rng.integers(2))
    return -R if reflect else R


def _ef(frame, model):
    e, f = energy_and_forces(frame, model)
    return float(e.detach()), f.detach().numpy()


def suite_equivariance(model: FreeCG, seed: int = 0, n_frames: int = 100) -> list[CheckResult]:
    """Energy invariance and force equivariance under random O(3) + translation."""
    rng = np.random.default_rng(seed)
    reflect_ok = model.cfg.path_mode == "sparse"
    de = df = de_e = 0.0
    for k in range(n_frames):
        fr = random_frame(rng, int(rng.integers(3, 13)))
        g = random_o3(rng, reflect=None if reflect_ok else False)
        shift = rng.uniform(-5, 5, 3)
        e0, f0 = _ef(fr, model)
        moved = MoleculeFrame(fr.atomic_numbers, fr.positions @ g.T + shift)
        e1, f1 = _ef(moved, model)
        de = max(de, abs(e1 - e0))
        df = max(df, float(np.abs(f1 - f0 @ g.T).max()))
        # internal abstract edges rotate blockwise
        with torch.no_grad():
            s0 = model.representation(collate([fr], model.cfg.cutoff, requires_grad=False))
            s1 = model.representation(collate([moved], model.cfg.cutoff, requires_grad=False))
        Dg = layout_matrix(g)
        de_e = max(de_e, float(np.abs(s1.E_bar.numpy() - s0.E_bar.numpy() @ Dg.T).max()))
    what = "O(3)" if reflect_ok else "SO(3)"
    return [
        CheckResult(f"energy invariance under {what}+translation ({n_frames} frames)", de, 1e-9),
        CheckResult(f"force equivariance under {what}+translation ({n_frames} frames)", df, 1e-8),
        CheckResult("abstract edges transform by Wigner-D", de_e, 1e-9),
    ]


def suite_permutation(model: FreeCG, seed: int = 0, n_frames: int = 20) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    de = df = dE = 0.0
    for _ in range(n_frames):
        fr = random_frame(rng, int(rng.integers(3, 13)))
        perm = rng.permutation(fr.n_atoms)
        pf = MoleculeFrame(fr.atomic_numbers[perm], fr.positions[perm])
        e0, f0 = _ef(fr, model)
        e1, f1 = _ef(pf, model)
        de = max(de, abs(e1 - e0))
        df = max(df, float(np.abs(f1 - f0[perm]).max()))
        with torch.no_grad():
            _, t0 = model.representation(collate([fr], model.cfg.cutoff, requires_grad=False), return_trace=True)
            _, t1 = model.representation(collate([pf], model.cfg.cutoff, requires_grad=False), return_trace=True)
        for a, b in zip(t0, t1):
            dE = max(dE, float((b.E_bar - a.E_bar[perm]).abs().max()))
    return [
        CheckResult("per-atom abstract edges under atom permutation", dE, 1e-10),
        CheckResult("energy under atom permutation", de, 1e-10),
        CheckResult("forces under atom permutation", df, 1e-9),
    ]


def finite_difference_forces(frame: MoleculeFrame, model: FreeCG, step: float = 1e-4) -> np.ndarray:
    fd = np.zeros_like(frame.positions)
    for a in range(frame.n_atoms):
        for c in range(3):
            plus = frame.positions.copy()
            minus = frame.positions.copy()
            plus[a, c] += step
            minus[a, c] -= step
            with torch.no_grad():
                ep = model(collate([MoleculeFrame(frame.atomic_numbers, plus)], model.cfg.cutoff, False))
                em = model(collate([MoleculeFrame(frame.atomic_numbers, minus)], model.cfg.cutoff, False))
            fd[a, c] = -(float(ep[0]) - float(em[0])) / (2 * step)
    return fd


def suite_gradient(model: FreeCG, seed: int = 0, n_frames: int = 20, n_atoms: int = 5) -> list[CheckResult]:
    """Forces vs central finite differences; relative error = max|F - F_fd| / max|F_fd|."""
    rng = np.random.default_rng(seed)
    rel = net = 0.0
    for _ in range(n_frames):
        fr = random_frame(rng, n_atoms)
        _, f = _ef(fr, model)
        fd = finite_difference_forces(fr, model)
        rel = max(rel, float(np.abs(f - fd).max() / np.abs(fd).max()))
        net = max(net, float(np.abs(f.sum(axis=0)).max()))
    return [
        CheckResult(f"forces vs finite differences ({n_frames} frames, max rel err)", rel, 1e-6),
        CheckResult("net force", net, 1e-8),
    ]


def run_suite(name: str, model: FreeCG | None = None, seed: int = 0) -> list[CheckResult]:
    if name == "cg-oracle":
        return suite_cg_oracle(seed)
    if model is None:
        raise ValueError(f"suite {name!r} needs a model")
    if name == "equivariance":
        return suite_equivariance(model, seed)
    if name == "permutation":
        return suite_permutation(model, seed)
    if name == "gradient":
        return suite_gradient(model, seed)
    if name == "all":
        out = []
        for s in SUITES:
            out += run_suite(s, model, seed)
        return out
    raise ValueError(f"unknown suite {name!r}")
