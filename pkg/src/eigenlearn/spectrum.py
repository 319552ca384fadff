"""Kernel eigenvalues and target eigencoefficients.

Eigenvalues follow the operator convention: they are the eigenvalues of
``f -> E_x[K(., x) f(x)]``, i.e. of ``Gram / M`` on a finite domain.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .domain import DiscreteDomain, ModeFamily, ModeLabel, sphere_multiplicity
from .kernel import KernelSpec, domain_gram

NEGATIVE_TOL = 1e-10


class QuadratureWarning(RuntimeWarning):
    pass


@dataclass(frozen=True, eq=False)
class LevelSpectrum:
    """Eigenvalue per degenerate level with its multiplicity."""

    domain: str
    levels: np.ndarray
    eigenvalues: np.ndarray
    multiplicities: np.ndarray
    params: dict = field(default_factory=dict)

    @property
    def total_modes(self) -> int:
        return int(self.multiplicities.sum())

    def expand(self) -> np.ndarray:
        """Flat per-mode eigenvalues in level order."""
        return np.repeat(self.eigenvalues, self.multiplicities)

    def to_spectrum(self, domain: DiscreteDomain | None = None, coefficients=None) -> "Spectrum":
        """Per-mode spectrum aligned to ``domain``'s eigentable rows, sorted descending."""
        if domain is None:
            lam = self.expand()
            labels = tuple(
                ModeLabel(ModeFamily.SPHERE_HARMONIC, int(k), j)
                for k, m in zip(self.levels, self.multiplicities)
                for j in range(int(m))
            )
            index = np.arange(len(lam))
            M = None
        else:
            by_level = dict(zip(self.levels.tolist(), self.eigenvalues.tolist()))
            lam = np.array([by_level[m.k] for m in domain.modes])
            labels = domain.modes
            index = np.arange(domain.M)
            M = domain.M
        return Spectrum.build(lam, labels=labels, index=index, coefficients=coefficients, M=M)

    def weighted(self) -> tuple[np.ndarray, np.ndarray]:
        return self.eigenvalues, self.multiplicities


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Per-mode eigenvalues sorted in descending order.

    ``index[i]`` is the eigentable row (or empirical eigenvector) of the
    i-th entry; ``coefficients`` (if present) are aligned with ``eigenvalues``.
    ``M`` is ``None`` for continuous or truncated spectra.
    """

    eigenvalues: np.ndarray
    labels: tuple
    index: np.ndarray
    coefficients: np.ndarray | None = None
    M: int | None = None
    truncation: int | None = None

    @classmethod
    def build(cls, eigenvalues, labels=None, index=None, coefficients=None, M=None, truncation=None):
        lam = clip_eigenvalues(eigenvalues)
        n = len(lam)
        labels = tuple(labels) if labels is not None else tuple(range(n))
        index = np.arange(n) if index is None else np.asarray(index)
        order = np.argsort(-lam, kind="stable")
        coef = None if coefficients is None else np.asarray(coefficients, dtype=float)[order]
        return cls(lam[order], tuple(labels[i] for i in order), index[order], coef, M, truncation)

    def __len__(self):
        return len(self.eigenvalues)

    def in_mode_order(self, values=None) -> np.ndarray:
        """Scatter per-entry ``values`` (default eigenvalues) back to eigentable row order."""
        values = self.eigenvalues if values is None else np.asarray(values)
        out = np.empty_like(values)
        out[self.index] = values
        return out


def clip_eigenvalues(eigenvalues) -> np.ndarray:
    lam = np.asarray(eigenvalues, dtype=float)
    if np.any(lam < -NEGATIVE_TOL):
        raise ValueError(f"eigenvalue {lam.min():.3e} below tolerance -{NEGATIVE_TOL:g}")
    return np.maximum(lam, 0.0)


def _circle_first_row(spec: KernelSpec, M: int) -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(M) / M
    return spec.profile(np.cos(angles)) + (spec.jitter if spec.jitter else 0.0) * (np.arange(M) == 0)


def circle_spectrum(spec: KernelSpec, M: int, gram=None) -> LevelSpectrum:
    """Diagonalize the circulant Gram on the M-point circle by a real FFT.

    ``gram`` may be supplied to verify circulant structure first.
    """
    if gram is not None:
        gram = np.asarray(gram)
        rolled = np.roll(np.roll(gram, 1, axis=0), 1, axis=1)
        mismatch = np.max(np.abs(rolled - gram))
        if mismatch > 1e-8:
            raise ValueError(f"Gram matrix is not circulant (max mismatch {mismatch:.2e})")
        row = gram[0]
    else:
        row = _circle_first_row(spec, M)
    lam = np.fft.rfft(row).real / M
    levels = np.arange(len(lam))
    mult = np.where((levels == 0) | (2 * levels == M), 1, 2)
    return LevelSpectrum("circle", levels, clip_eigenvalues(lam), mult, {"M": M})


def krawtchouk(d: int, k: int, w: np.ndarray) -> np.ndarray:
    """Sum of ``phi_S(x) phi_S(1)`` over the points x at Hamming distance w from
    the all-ones vertex, for any fixed subset S with ``|S| = k``."""
    return np.array([
        sum((-1) ** j * math.comb(k, j) * math.comb(d - k, int(wi) - j) for j in range(min(k, int(wi)) + 1))
        for wi in w
    ], dtype=float)


def hypercube_spectrum(spec: KernelSpec, d: int) -> LevelSpectrum:
    """Level eigenvalues on {-1, 1}^d via the d+1 Hamming-distance classes."""
    if not 1 <= d <= 14:
        raise ValueError(f"hypercube dimension must be in [1, 14], got {d}")
    w = np.arange(d + 1)
    kappa = spec.profile((d - 2.0 * w) / d)
    if spec.jitter:
        kappa = kappa + spec.jitter * (w == 0)
    lam = np.array([(kappa * krawtchouk(d, k, w)).sum() for k in range(d + 1)]) / 2.0**d
    mult = np.array([math.comb(d, int(k)) for k in w])
    return LevelSpectrum("hypercube", w.copy(), clip_eigenvalues(lam), mult, {"d": d})


def gegenbauer_normalized(k: int, d: int, t) -> np.ndarray:
    """Degree-k Gegenbauer polynomial for S^d scaled so that P_k(1) = 1."""
    alpha = (d - 1) / 2.0
    t = np.asarray(t, dtype=float)
    if d == 2:
        return special.eval_legendre(k, t)
    return special.eval_gegenbauer(k, alpha, t) / special.eval_gegenbauer(k, alpha, 1.0)


def _gegenbauer_table(k_max: int, d: int, t: np.ndarray) -> np.ndarray:
    """Rows P_0..P_kmax (normalized, P_k(1) = 1) by the three-term recurrence."""
    alpha = (d - 1) / 2.0
    P = np.empty((k_max + 1, len(t)))
    P[0] = 1.0
    if k_max >= 1:
        P[1] = t
    # C_{k+1} = (2(k+a) t C_k - (k+2a-1) C_{k-1}) / (k+1), rescaled by C_k(1)
    for k in range(1, k_max):
        if alpha == 0:
            raise ValueError("d must be >= 2")
        a = 2.0 * (k + alpha) / (k + 2.0 * alpha)
        b = k / (k + 2.0 * alpha)
        P[k + 1] = a * t * P[k] - b * P[k - 1]
    return P


def _sphere_quadrature(profile, d: int, k_max: int, nodes: int) -> np.ndarray:
    # substitute t = cos(theta) and use Gauss-Legendre in theta on [0, pi];
    # robust to the sqrt-type singularity of arc-cosine kernels at t = +-1
    x, wts = special.roots_legendre(nodes)
    theta = 0.5 * np.pi * (x + 1.0)
    wts = 0.5 * np.pi * wts * np.sin(theta) ** (d - 1)
    t = np.cos(theta)
    P = _gegenbauer_table(k_max, d, t)
    kap = profile(t)
    return (P * (kap * wts)).sum(axis=1) / wts.sum()


def sphere_spectrum(spec: KernelSpec, d: int, k_max: int = 70, nodes: int = 4096, tol: float = 1e-8) -> LevelSpectrum:
    """Funk-Hecke eigenvalues of a dot-product kernel on S^d up to level ``k_max``.

    ``lambda_k = E_t[kappa(t) P_k(t)]`` with ``t`` the cosine between two
    uniform points.  The quadrature is repeated at twice the node count and a
    :class:`QuadratureWarning` is issued if any eigenvalue moves by more than
    ``tol`` relative to the largest.
    """
    if d < 2:
        raise ValueError(f"sphere dimension must be >= 2, got {d}")
    if k_max < 0:
        raise ValueError("k_max must be non-negative")
    lam = _sphere_quadrature(spec.profile, d, k_max, nodes)
    check = _sphere_quadrature(spec.profile, d, k_max, 2 * nodes)
    scale = np.abs(check).max()
    change = np.max(np.abs(check - lam)) / scale if scale > 0 else 0.0
    if change > tol:
        warnings.warn(f"sphere quadrature changed by {change:.2e} when doubling nodes", QuadratureWarning)
    levels = np.arange(k_max + 1)
    mult = np.array([sphere_multiplicity(d, int(k)) for k in levels])
    return LevelSpectrum("sphere", levels, clip_eigenvalues(check), mult, {"d": d, "k_max": k_max})


def discrete_spectrum(spec: KernelSpec, domain: DiscreteDomain) -> LevelSpectrum:
    if domain.kind == "circle":
        return circle_spectrum(spec, domain.M)
    if domain.kind == "hypercube":
        return hypercube_spectrum(spec, domain.params["d"])
    raise ValueError(f"no analytic spectrum for domain kind {domain.kind!r}")


def dense_spectrum(spec: KernelSpec, domain: DiscreteDomain) -> np.ndarray:
    """Eigenvalues of ``Gram / M`` by a dense symmetric eigensolver (descending)."""
    K = domain_gram(spec, domain)
    return np.sort(np.linalg.eigvalsh(K / domain.M))[::-1]


def empirical_spectrum(gram, targets) -> Spectrum:
    """Eigensystem of a data-data kernel matrix and projected target coefficients.

    Coefficients are ``u_i . y / sqrt(N)`` so that their squared sum equals the
    mean squared target.
    """
    K = np.asarray(gram, dtype=float)
    y = np.asarray(targets, dtype=float)
    N = K.shape[0]
    if K.ndim != 2 or K.shape[1] != N or N < 2:
        raise ValueError(f"need a square Gram with N >= 2, got shape {K.shape}")
    if not np.allclose(K, K.T, rtol=0, atol=1e-10 * max(1.0, np.abs(K).max())):
        raise ValueError("Gram matrix is not symmetric")
    if y.shape != (N,):
        raise ValueError(f"targets must have length {N}, got shape {y.shape}")
    if not np.all(np.isfinite(y)):
        raise ValueError("targets contain NaN or Inf")
    w, U = np.linalg.eigh(K / N)
    v = U.T @ y / math.sqrt(N)
    return Spectrum.build(w, coefficients=v, M=N)


def decompose_target(domain: DiscreteDomain, f) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape != (domain.M,):
        raise ValueError(f"target must have length {domain.M}, got shape {f.shape}")
    return domain.eigentable @ f / domain.M


def reconstruct_target(domain: DiscreteDomain, v) -> np.ndarray:
    return domain.eigentable.T @ np.asarray(v, dtype=float)


def sphere_target(k: int, d: int, axis, points) -> np.ndarray:
    """Unit mean-square level-k function ``sqrt(m_k) P_k(x . axis)``."""
    t = np.clip(np.asarray(points) @ np.asarray(axis), -1.0, 1.0)
    return math.sqrt(sphere_multiplicity(d, k)) * gegenbauer_normalized(k, d, t)


def yang_salman_violations(levels: LevelSpectrum, rtol: float = 1e-12) -> list[int]:
    """Levels k where lambda_k < lambda_{k+2} (even and odd chains separately)."""
    lam = levels.eigenvalues
    return [k for k in range(len(lam) - 2) if lam[k] < lam[k + 2] * (1 - rtol)]


def write_spectrum_csv(path_or_file, levels: LevelSpectrum | None = None, spectrum: Spectrum | None = None):
    """Write ``index, level, eigenvalue, coefficient`` rows.

    A :class:`LevelSpectrum` writes one row per level with a multiplicity
    column; a :class:`Spectrum` writes one row per mode.
    """
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.writer(fh)
        if levels is not None:
            w.writerow(["index", "level", "eigenvalue", "multiplicity", "coefficient"])
            for i, (k, lam, m) in enumerate(zip(levels.levels, levels.eigenvalues, levels.multiplicities)):
                w.writerow([i, int(k), repr(float(lam)), int(m), ""])
        else:
            w.writerow(["index", "level", "eigenvalue", "coefficient"])
            coef = spectrum.coefficients
            for i, lam in enumerate(spectrum.eigenvalues):
                lab = spectrum.labels[i]
                k = lab.k if isinstance(lab, ModeLabel) else ""
                c = "" if coef is None else repr(float(coef[i]))
                w.writerow([int(spectrum.index[i]), k, repr(float(lam)), c])
    finally:
        if own:
            fh.close()


def read_spectrum_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Return ``(eigenvalues, multiplicities, coefficients or None)`` from a spectrum CSV."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: empty spectrum file")
    lam = np.array([float(r["eigenvalue"]) for r in rows])
    mult = np.array([int(r.get("multiplicity") or 1) for r in rows])
    coef = None
    if all(r.get("coefficient") not in (None, "") for r in rows):
        coef = np.array([float(r["coefficient"]) for r in rows])
    return lam, mult, coef
