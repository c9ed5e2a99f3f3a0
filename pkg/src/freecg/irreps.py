"""O(3) irreps for l <= 2: real spherical harmonics, CG coefficients and Wigner-D.

Every equivariant feature in the model uses the fixed layout
``[(l=1, p=-1), (l=2, p=+1)]`` (8 components).  The l=1 block is the unit
vector itself in ``(x, y, z)`` order.  The l=2 block holds the real quadratic
harmonics, in this order::

    sqrt(3) x y,  sqrt(3) y z,  (3 z^2 - 1) / 2,  sqrt(3) x z,  sqrt(3) / 2 (x^2 - y^2)

so that each block has unit norm on the unit sphere.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import torch

__all__ = [
    "IrrepSpec",
    "LAYOUT",
    "LAYOUT_DIM",
    "Path",
    "PathMode",
    "CgTable",
    "ContractViolation",
    "spherical_harmonics",
    "harmonic_polynomials",
    "build_cg_table",
    "enumerate_paths",
    "wigner_d",
    "layout_matrix",
    "random_rotation",
    "block_slice",
]

SQRT3 = math.sqrt(3.0)
STRUCTURAL_ZERO = 1e-12


class ContractViolation(ValueError):
    """Raised when an operation's precondition does not hold."""


@dataclass(frozen=True)
class IrrepSpec:
    degree: int
    parity: int

    def __post_init__(self):
        if self.degree < 0:
            raise ValueError(f"degree must be >= 0, got {self.degree}")
        if self.parity not in (1, -1):
            raise ValueError(f"parity must be +1 or -1, got {self.parity}")

    @property
    def dim(self) -> int:
        return 2 * self.degree + 1


LAYOUT: tuple[IrrepSpec, ...] = (IrrepSpec(1, -1), IrrepSpec(2, 1))
LAYOUT_DIM = sum(ir.dim for ir in LAYOUT)


def block_slice(degree: int) -> slice:
    """Component range of the given degree inside the 8-component layout."""
    start = 0
    for ir in LAYOUT:
        if ir.degree == degree:
            return slice(start, start + ir.dim)
        start += ir.dim
    raise KeyError(f"degree {degree} is not part of the layout")


class PathMode(str, enum.Enum):
    O3_SPARSE = "sparse"
    SO3_FULL = "full"


class Path(NamedTuple):
    l1: int
    p1: int
    l2: int
    p2: int
    lo: int
    po: int

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.lo, self.l1, self.l2)

    def __str__(self):
        return f"{self.l1}x{self.l2}->{self.lo}"


def _stack(parts, like):
    if isinstance(like, torch.Tensor):
        return torch.stack(parts, dim=-1)
    return np.stack(parts, axis=-1)


def harmonic_polynomials(l: int, xyz):
    """Homogeneous harmonic polynomials of degree ``l`` evaluated at ``xyz``.

    Equal to the real spherical harmonics on the unit sphere; no normalisation
    check is made, so this is also usable on arbitrary vectors.  Works on numpy
    arrays and torch tensors of shape ``(..., 3)``.
    """
    x, y, z = xyz[..., 0], xyz[..., 1], xyz[..., 2]
    if l == 0:
        return _stack([x * 0 + 1], xyz)
    if l == 1:
        return _stack([x, y, z], xyz)
    if l == 2:
        return _stack(
            [
                SQRT3 * x * y,
                SQRT3 * y * z,
                z * z - 0.5 * (x * x + y * y),
                SQRT3 * x * z,
                0.5 * SQRT3 * (x * x - y * y),
            ],
            xyz,
        )
    raise ValueError(f"only l <= 2 is supported, got l={l}")


def spherical_harmonics(u, check: bool = True):
    """Lift unit vectors ``u`` of shape ``(..., 3)`` to the 8-component layout.

    Returns ``Y^1(u) (+) Y^2(u)``.  Raises :class:`ContractViolation` if any
    input deviates from unit norm by more than 1e-9.
    """
    if check:
        if isinstance(u, torch.Tensor):
            norms = torch.linalg.norm(u.detach(), dim=-1)
            bad = bool((norms - 1).abs().max() > 1e-9) if norms.numel() else False
        else:
            u = np.asarray(u, dtype=np.float64)
            norms = np.linalg.norm(u, axis=-1)
            bad = bool(np.abs(norms - 1).max() > 1e-9) if norms.size else False
        if bad:
            raise ContractViolation("spherical_harmonics expects unit vectors (|u| = 1 within 1e-9)")
    y1 = harmonic_polynomials(1, u)
    y2 = harmonic_polynomials(2, u)
    if isinstance(u, torch.Tensor):
        return torch.cat([y1, y2], dim=-1)
    return np.concatenate([y1, y2], axis=-1)


# ---------------------------------------------------------------------------
# Clebsch-Gordan coefficients


def _sphere_product_rule(n_theta: int = 4, n_phi: int = 8):
    """Gauss-Legendre in cos(theta) times trapezoid in phi; weights sum to 1.

    Exact for polynomials of degree < min(2 n_theta, n_phi) on the sphere.
    """
    ct, wt = np.polynomial.legendre.leggauss(n_theta)
    phi = 2 * np.pi * np.arange(n_phi) / n_phi
    st = np.sqrt(1 - ct**2)
    pts = np.stack(
        [
            np.outer(st, np.cos(phi)).ravel(),
            np.outer(st, np.sin(phi)).ravel(),
            np.repeat(ct, n_phi),
        ],
        axis=-1,
    )
    w = np.repeat(wt, n_phi) / (2.0 * n_phi)
    return pts, w


# Fixed SO(3)-equivariant bilinear-ish kernel used for projection.  Cross
# products make odd (pseudo-tensor) couplings reachable, which the plain
# triple-harmonic integral cannot produce.
_KERNEL_COEFFS = (0.7, 1.3, 0.9)


def _project_coupling(lo: int, l1: int, l2: int, pts, w) -> np.ndarray:
    degrees = (lo, l1, l2)
    # the kernel slot must carry the highest degree, otherwise a constant
    # Y^0(kernel) would integrate the remaining harmonics to zero
    k = int(np.argmax(degrees))
    rest = [i for i in range(3) if i != k]
    a, b, c = _KERNEL_COEFFS
    u = pts[:, None, :]
    v = pts[None, :, :]
    phi = a * u + b * v + c * np.cross(u, v)
    yk = harmonic_polynomials(degrees[k], phi)  # (n, n, 2lk+1)
    yu = harmonic_polynomials(degrees[rest[0]], pts)
    yv = harmonic_polynomials(degrees[rest[1]], pts)
    t = np.einsum("uvk,ua,vb,u,v->kab", yk, yu, yv, w, w, optimize=True)
    # axes are currently (k, rest[0], rest[1]); restore (lo, l1, l2)
    return np.moveaxis(t, [0, 1, 2], [k, rest[0], rest[1]])


@dataclass(frozen=True)
class CgTable:
    """All nonzero real-basis CG coefficients for degrees 0..2.

    ``entries`` holds ``(lo, l1, l2, mo, m1, m2, value)`` with ``m`` the
    0-based component index inside each block.  ``paths`` is the
    parity-selected path list for the model layout.  Coefficients are
    normalised so the ``(2lo+1) x (2l1+1)(2l2+1)`` coupling matrix has
    orthonormal rows.
    """

    entries: tuple[tuple[int, int, int, int, int, int, float], ...]
    paths: tuple[Path, ...]
    _dense: dict = field(default_factory=dict, repr=False, compare=False)

    def triples(self) -> list[tuple[int, int, int]]:
        return sorted({e[:3] for e in self.entries})

    def block(self, lo: int, l1: int, l2: int) -> np.ndarray:
        key = (lo, l1, l2)
        if key not in self._dense:
            arr = np.zeros((2 * lo + 1, 2 * l1 + 1, 2 * l2 + 1))
            found = False
            for e in self.entries:
                if e[:3] == key:
                    arr[e[3], e[4], e[5]] = e[6]
                    found = True
            if not found:
                raise KeyError(f"no CG coefficients for (lo={lo}, l1={l1}, l2={l2})")
            arr.setflags(write=False)
            self._dense[key] = arr
        return self._dense[key]

    def nonzero_count(self, lo: int, l1: int, l2: int) -> int:
        return sum(1 for e in self.entries if e[:3] == (lo, l1, l2))


@functools.lru_cache(maxsize=None)
def build_cg_table() -> CgTable:
    pts, w = _sphere_product_rule()
    entries = []
    for lo in range(3):
        for l1 in range(3):
            for l2 in range(3):
                if not abs(l1 - l2) <= lo <= l1 + l2:
                    continue
                t = _project_coupling(lo, l1, l2, pts, w)
                mat = t.reshape(2 * lo + 1, -1)
                gram = mat @ mat.T
                scale = math.sqrt(np.trace(gram) / (2 * lo + 1))
                if scale < 1e-8:
                    raise RuntimeError(f"projection vanished for ({lo},{l1},{l2})")
                t = t / scale
                flat = t.ravel()
                lead = flat[np.argmax(np.abs(flat) > 1e-9)]
                if lead < 0:
                    t = -t
                for (mo, m1, m2), value in np.ndenumerate(t):
                    if abs(value) >= STRUCTURAL_ZERO:
                        entries.append((lo, l1, l2, mo, m1, m2, float(value)))
    return CgTable(entries=tuple(entries), paths=tuple(enumerate_paths(PathMode.O3_SPARSE)))


def enumerate_paths(mode: PathMode | str = PathMode.O3_SPARSE) -> list[Path]:
    """Admissible ``l1 (x) l2 -> lo`` paths over the fixed layout.

    ``SO3_FULL`` keeps every triangle-allowed combination of degrees 1 and 2
    (8 paths); ``O3_SPARSE`` additionally requires ``po = p1 * p2`` with
    ``p = (-1)^l`` (4 paths).
    """
    mode = PathMode(mode)
    parity = {ir.degree: ir.parity for ir in LAYOUT}
    degrees = [ir.degree for ir in LAYOUT]
    out = []
    for l1 in degrees:
        for l2 in degrees:
            for lo in degrees:
                if not abs(l1 - l2) <= lo <= l1 + l2:
                    continue
                p1, p2, po = parity[l1], parity[l2], parity[lo]
                if mode is PathMode.O3_SPARSE and po != p1 * p2:
                    continue
                out.append(Path(l1, p1, l2, p2, lo, po))
    return out


# ---------------------------------------------------------------------------
# Wigner-D


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Haar-random proper rotation."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q @ np.diag(np.sign(np.diag(r)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def _check_rotation(R: np.ndarray, proper: bool = True) -> None:
    if R.shape != (3, 3):
        raise ContractViolation(f"rotation must be 3x3, got {R.shape}")
    if np.abs(R.T @ R - np.eye(3)).max() > 1e-10:
        raise ContractViolation("matrix is not orthogonal within 1e-10")
    if proper and abs(np.linalg.det(R) - 1) > 1e-10:
        raise ContractViolation("rotation must have det = +1")


def wigner_d(l: int, R, seed: int = 0, max_tries: int = 5) -> np.ndarray:
    """Matrix ``D`` with ``Y^l(R u) = D Y^l(u)`` for every unit ``u``.

    Solved by least squares from random sample directions and verified on the
    samples (residual < 1e-10).
    """
    R = np.asarray(R, dtype=np.float64)
    _check_rotation(R)
    d = 2 * l + 1
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        u = rng.standard_normal((max(4 * d, 20), 3))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        yu = harmonic_polynomials(l, u)
        if np.linalg.cond(yu) > 1e6:
            continue
        yru = harmonic_polynomials(l, u @ R.T)
        dt, *_ = np.linalg.lstsq(yu, yru, rcond=None)
        D = dt.T
        if np.abs(yu @ D.T - yru).max() < 1e-10:
            return D
    raise ContractViolation(f"could not construct Wigner-D for l={l}")


def layout_matrix(g) -> np.ndarray:
    """8x8 block-diagonal action of an O(3) element on the feature layout.

    Improper elements ``g = -R`` act as ``p * D^l(R)`` on each block.
    """
    g = np.asarray(g, dtype=np.float64)
    _check_rotation(g, proper=False)
    improper = np.linalg.det(g) < 0
    R = -g if improper else g
    out = np.zeros((LAYOUT_DIM, LAYOUT_DIM))
    for ir in LAYOUT:
        s = block_slice(ir.degree)
        sign = ir.parity if improper else 1
        out[s, s] = sign * wigner_d(ir.degree, R)
    return out
