"""Synthetic input domains with exact kernel eigenbases.

Discrete domains (circle grid, boolean hypercube) carry their full
eigenfunction table ``eigentable[i, j] = phi_i(x_j)``, orthonormal under the
uniform average over the ``M`` points.  The continuous hypersphere is only
represented by sampled point sets.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

MAX_HYPERCUBE_DIM = 14


class ModeFamily(str, Enum):
    CIRCLE_CONSTANT = "circle-constant"
    CIRCLE_COS = "circle-cos"
    CIRCLE_SIN = "circle-sin"
    HYPERCUBE_PARITY = "hypercube-parity"
    SPHERE_HARMONIC = "sphere-harmonic"


@dataclass(frozen=True)
class ModeLabel:
    """Identifies one eigenfunction.

    ``detail`` is the sensitive-bit subset for parity modes (1-based, sorted),
    the index within the degenerate level for sphere harmonics, and ``None``
    otherwise.
    """

    family: ModeFamily
    k: int
    detail: tuple[int, ...] | int | None = None

    def __str__(self) -> str:
        if self.family is ModeFamily.HYPERCUBE_PARITY:
            return "S{" + ",".join(map(str, self.detail or ())) + "}"
        if self.family is ModeFamily.CIRCLE_SIN:
            return f"sin{self.k}"
        if self.family is ModeFamily.SPHERE_HARMONIC:
            return f"Y{self.k}.{self.detail}"
        return f"cos{self.k}"


@dataclass(frozen=True, eq=False)
class DiscreteDomain:
    """A finite input space of ``M`` points with its orthonormal eigenbasis."""

    kind: str
    points: np.ndarray
    eigentable: np.ndarray
    modes: tuple[ModeLabel, ...]
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points.setflags(write=False)
        self.eigentable.setflags(write=False)

    @property
    def M(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def levels(self) -> np.ndarray:
        return np.array([m.k for m in self.modes])

    def unit_points(self) -> np.ndarray:
        """Points rescaled to unit norm (hypercube vertices divided by sqrt(d))."""
        norms = np.linalg.norm(self.points, axis=1, keepdims=True)
        return self.points / norms

    def mode_index(self, label: ModeLabel) -> int:
        return self.modes.index(label)

    def level_modes(self, k: int) -> list[int]:
        return [i for i, m in enumerate(self.modes) if m.k == k]


@dataclass(frozen=True, eq=False)
class SpherePointSet:
    """Uniform samples on the d-sphere, embedded in R^(d+1)."""

    d: int
    points: np.ndarray
    seed: object = None

    @property
    def ambient_dim(self) -> int:
        return self.d + 1


def build_circle(M: int) -> DiscreteDomain:
    """Discretize the unit circle into ``M`` equally spaced points.

    Rows are ordered by frequency with the cosine branch before the sine
    branch.  For even ``M`` the Nyquist frequency ``M/2`` has only a cosine
    row (the sine vanishes on the grid); its values are +-1 so it already has
    unit mean square.
    """
    if int(M) != M or M < 2:
        raise ValueError(f"circle needs M >= 2 points, got {M}")
    M = int(M)
    theta = 2.0 * np.pi * np.arange(1, M + 1) / M
    points = np.column_stack([np.cos(theta), np.sin(theta)])

    rows = [np.ones(M)]
    modes = [ModeLabel(ModeFamily.CIRCLE_CONSTANT, 0)]
    for k in range(1, M // 2 + 1):
        if 2 * k == M:
            # exact +-1 values; avoids cos round-off at the Nyquist frequency
            rows.append(np.where(np.arange(1, M + 1) % 2 == 0, 1.0, -1.0))
            modes.append(ModeLabel(ModeFamily.CIRCLE_COS, k))
            continue
        rows.append(np.sqrt(2.0) * np.cos(k * theta))
        modes.append(ModeLabel(ModeFamily.CIRCLE_COS, k))
        rows.append(np.sqrt(2.0) * np.sin(k * theta))
        modes.append(ModeLabel(ModeFamily.CIRCLE_SIN, k))
    return DiscreteDomain("circle", points, np.array(rows), tuple(modes), {"M": M})


def parity_value(subset, x) -> float:
    """Subset parity ``(-1)^(number of i in subset with x_i = +1)``."""
    count = sum(1 for i in subset if x[i - 1] == 1)
    return -1.0 if count % 2 else 1.0


def build_hypercube(d: int) -> DiscreteDomain:
    """All ``2^d`` sign vectors with the subset-parity eigenbasis.

    Modes are sorted by subset size, then lexicographically.
    """
    if int(d) != d or not 1 <= d <= MAX_HYPERCUBE_DIM:
        raise ValueError(f"hypercube dimension must be in [1, {MAX_HYPERCUBE_DIM}], got {d}")
    d = int(d)
    points = np.array(list(itertools.product((-1.0, 1.0), repeat=d)))
    is_plus = points > 0

    subsets = [s for k in range(d + 1) for s in itertools.combinations(range(1, d + 1), k)]
    table = np.empty((len(subsets), len(points)))
    for r, s in enumerate(subsets):
        if s:
            count = is_plus[:, [i - 1 for i in s]].sum(axis=1)
        else:
            count = np.zeros(len(points), dtype=int)
        table[r] = 1.0 - 2.0 * (count % 2)
    modes = tuple(ModeLabel(ModeFamily.HYPERCUBE_PARITY, len(s), s) for s in subsets)
    return DiscreteDomain("hypercube", points, table, modes, {"d": d})


def level_degeneracies(domain: DiscreteDomain) -> dict[int, int]:
    counts: dict[int, int] = {}
    for m in domain.modes:
        counts[m.k] = counts.get(m.k, 0) + 1
    return counts


def sample_hypersphere(d: int, count: int, seed=None) -> SpherePointSet:
    """Draw ``count`` i.i.d. uniform points on S^d by normalizing Gaussians."""
    if d < 2:
        raise ValueError(f"sphere dimension must be >= 2, got {d}")
    if count < 1:
        raise ValueError(f"need at least one point, got {count}")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((count, d + 1))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    return SpherePointSet(d, x, seed)


def eigenfunction_value(domain: DiscreteDomain, mode: int, point: int) -> float:
    if not (0 <= mode < domain.M and 0 <= point < domain.M):
        raise IndexError(f"mode {mode} / point {point} out of range for M={domain.M}")
    return float(domain.eigentable[mode, point])


def sphere_multiplicity(d: int, k: int) -> int:
    """Number of degree-k spherical harmonics on S^d."""
    return (2 * k + d - 1) * math.factorial(k + d - 2) // (math.factorial(k) * math.factorial(d - 1))
