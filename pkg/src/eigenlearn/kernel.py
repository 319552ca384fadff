"""Rotation-invariant kernels and Gram matrix assembly.

Every kernel here is a function of the cosine between unit-norm inputs (its
"angular profile"), which is what the spectral machinery needs.  The ReLU
NTK uses the standard fully-connected arc-cosine recursion in NTK
parameterization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.spatial.distance import cdist

COSINE_SLACK = 1e-12
# Profiles behave like sqrt(1 - t) near t = 1, so rounding in a cosine of
# nearly parallel unit vectors would show up at the 1e-8 level; such cosines
# are snapped to exactly 1.
PARALLEL_SNAP = 1e-15

VARIANTS = ("relu-ntk", "gaussian", "laplacian", "tabulated")


@dataclass(frozen=True)
class KernelSpec:
    """Immutable kernel description.

    Parameters
    ----------
    variant : str
        One of ``relu-ntk``, ``gaussian``, ``laplacian``, ``tabulated``.
    depth : int
        Number of hidden layers for ``relu-ntk``.
    sigma_w, sigma_b : float
        Weight and bias standard deviations for ``relu-ntk``.
    bandwidth : float
        Length scale of the Gaussian kernel ``exp(-|x-y|^2 / (2 bandwidth^2))``.
    scale : float
        Length scale of the Laplacian kernel ``exp(-|x-y| / scale)``.
    table : tuple of (t, kappa) arrays
        Samples of an angular profile on [-1, 1] for ``tabulated``.
    jitter : float
        Added to Gram diagonals.
    """

    variant: str = "relu-ntk"
    depth: int = 4
    sigma_w: float = 1.4
    sigma_b: float = 0.1
    bandwidth: float = 1.0
    scale: float = 1.0
    table: tuple | None = field(default=None, compare=False, repr=False)
    jitter: float = 0.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown kernel variant {self.variant!r}; expected one of {VARIANTS}")
        if self.variant == "relu-ntk":
            if self.depth < 1:
                raise ValueError("relu-ntk depth must be >= 1")
            if self.sigma_w <= 0 or self.sigma_b < 0:
                raise ValueError("relu-ntk needs sigma_w > 0 and sigma_b >= 0")
        if self.variant == "gaussian" and self.bandwidth <= 0:
            raise ValueError("gaussian bandwidth must be positive")
        if self.variant == "laplacian" and self.scale <= 0:
            raise ValueError("laplacian scale must be positive")
        if self.variant == "tabulated":
            if self.table is None:
                raise ValueError("tabulated kernel needs a (t, kappa) table")
            t, kap = (np.asarray(a, dtype=float) for a in self.table)
            if t.ndim != 1 or t.shape != kap.shape or len(t) < 2:
                raise ValueError("tabulated profile needs matching 1-d t and kappa arrays")
            order = np.argsort(t)
            t, kap = t[order], kap[order]
            if t[0] > -1 + COSINE_SLACK or t[-1] < 1 - COSINE_SLACK:
                raise ValueError("tabulated profile must cover t in [-1, 1]")
            object.__setattr__(self, "table", (t, kap))
            object.__setattr__(self, "_interp", PchipInterpolator(t, kap))
        if self.jitter < 0:
            raise ValueError("jitter must be non-negative")

    def profile(self, t) -> np.ndarray:
        """Kernel value as a function of cosine for unit-norm inputs."""
        t = _check_cosines(t)
        if self.variant == "relu-ntk":
            return ntk_relu_profile(self.depth, self.sigma_w, self.sigma_b, t)
        if self.variant == "gaussian":
            return np.exp(-(2.0 - 2.0 * t) / (2.0 * self.bandwidth**2))
        if self.variant == "laplacian":
            return np.exp(-np.sqrt(np.maximum(2.0 - 2.0 * t, 0.0)) / self.scale)
        return self._interp(t)

    @property
    def uses_cosine(self) -> bool:
        """True when the kernel only sees the inputs' cosine."""
        return self.variant in ("relu-ntk", "tabulated")


def _check_cosines(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(np.abs(t) > 1.0 + COSINE_SLACK):
        bad = t[np.abs(t) > 1.0 + COSINE_SLACK].flat[0]
        raise ValueError(f"cosine {bad!r} outside [-1, 1]")
    return np.clip(t, -1.0, 1.0)


def load_profile(path, delimiter=None, **kwargs) -> KernelSpec:
    """Read a two-column ``t, kappa`` text file into a tabulated kernel."""
    data = np.loadtxt(path, delimiter=delimiter, ndmin=2)
    if data.shape[1] != 2:
        raise ValueError(f"{path}: expected two columns (t, kappa), got {data.shape[1]}")
    return KernelSpec("tabulated", table=(data[:, 0], data[:, 1]), **kwargs)


def _relu_moments(rho):
    """Gaussian ReLU expectations at unit variances and correlation ``rho``.

    Returns ``(E[relu(u) relu(v)], E[step(u) step(v)])``.
    """
    theta = np.arccos(np.clip(rho, -1.0, 1.0))
    k1 = (np.sin(theta) + (np.pi - theta) * np.cos(theta)) / (2.0 * np.pi)
    k0 = (np.pi - theta) / (2.0 * np.pi)
    return k1, k0


def ntk_relu_profile(depth: int, sigma_w: float, sigma_b: float, cosines) -> np.ndarray:
    """NTK of a depth-``depth`` fully-connected ReLU network on the unit sphere.

    The input layer gives ``Sigma = sigma_w^2 t + sigma_b^2``.  Each hidden
    layer then applies

        Sigma' = sigma_w^2 E[relu(u) relu(v)] + sigma_b^2
        Theta' = Sigma' + sigma_w^2 E[relu'(u) relu'(v)] Theta

    with ``(u, v)`` centered Gaussian with covariance given by the previous
    ``Sigma``.  All inputs share one norm, so a single diagonal suffices.
    """
    t = _check_cosines(cosines)
    sw2, sb2 = sigma_w**2, sigma_b**2
    sigma = sw2 * t + sb2
    diag = sw2 + sb2
    theta = sigma.copy()
    for _ in range(depth):
        k1, k0 = _relu_moments(sigma / diag)
        sigma = sw2 * diag * k1 + sb2
        theta = sigma + sw2 * k0 * theta
        diag = sw2 * diag / 2.0 + sb2
    return theta


def kernel_eval(spec: KernelSpec, x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    return float(kernel_matrix(spec, x[None, :], y[None, :])[0, 0])


def kernel_matrix(spec: KernelSpec, X, Y) -> np.ndarray:
    """Cross-kernel ``K(X, Y)`` without jitter."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    if spec.uses_cosine:
        Xn = X / np.linalg.norm(X, axis=1, keepdims=True)
        Yn = Y / np.linalg.norm(Y, axis=1, keepdims=True)
        t = np.clip(Xn @ Yn.T, -1.0, 1.0)
        t[t > 1.0 - PARALLEL_SNAP] = 1.0
        return spec.profile(t)
    if spec.variant == "gaussian":
        return np.exp(-cdist(X, Y, "sqeuclidean") / (2.0 * spec.bandwidth**2))
    return np.exp(-cdist(X, Y) / spec.scale)


def gram_matrix(spec: KernelSpec, points) -> np.ndarray:
    """Symmetric Gram matrix with ``spec.jitter`` on the diagonal."""
    P = np.atleast_2d(np.asarray(points, dtype=float))
    if P.shape[0] == 0:
        raise ValueError("gram_matrix needs at least one point")
    K = kernel_matrix(spec, P, P)
    K = 0.5 * (K + K.T)
    if spec.jitter:
        K[np.diag_indices_from(K)] += spec.jitter
    return K


def domain_gram(spec: KernelSpec, domain) -> np.ndarray:
    """Gram matrix of a discrete domain evaluated on its unit-normalized points."""
    return gram_matrix(spec, domain.unit_points())
