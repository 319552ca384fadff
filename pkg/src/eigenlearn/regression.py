"""Exact kernel ridge regression and the learning transfer matrix.

Two equivalent routes are provided.  :func:`krr_predict` works with kernel
values at arbitrary points.  :func:`transfer_matrix` and
:func:`fit_coefficients` work in the eigenbasis of a discrete domain, where
the prediction is ``vhat = T v`` with

    T = Lam Phi (Phi^T Lam Phi + ridge I)^-1 Phi^T

and ``Phi`` the eigentable columns of the training points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.linalg import lapack

from .kernel import KernelSpec, kernel_matrix

RCOND_LIMIT = 1e-13


class SingularSystemError(np.linalg.LinAlgError):
    def __init__(self, message, condition=math.inf):
        super().__init__(message)
        self.condition = condition


@dataclass(frozen=True)
class DatasetDraw:
    indices: np.ndarray
    seed: object = None

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=int)
        if len(np.unique(idx)) != len(idx):
            raise ValueError("dataset draw contains repeated indices")
        object.__setattr__(self, "indices", idx)

    @property
    def n(self) -> int:
        return len(self.indices)


def _factor(A: np.ndarray):
    """Cholesky factor of an SPD system plus its reciprocal condition estimate."""
    try:
        c, low = linalg.cho_factor(A, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise SingularSystemError(f"kernel system is not positive definite: {exc}") from None
    anorm = np.abs(A).sum(axis=0).max()
    rcond, info = lapack.dpocon(c, anorm, uplo="L")
    if info != 0 or rcond < RCOND_LIMIT:
        cond = math.inf if rcond == 0 else 1.0 / rcond
        raise SingularSystemError(f"kernel system is ill-conditioned (condition ~ {cond:.3e})", cond)
    return (c, low), rcond


def solve_kernel_system(K: np.ndarray, ridge: float, rhs: np.ndarray) -> np.ndarray:
    """Solve ``(K + ridge I) x = rhs`` by Cholesky, refusing near-singular systems."""
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    A = np.array(K, dtype=float, copy=True)
    if ridge:
        A[np.diag_indices_from(A)] += ridge
    factor, _ = _factor(A)
    return linalg.cho_solve(factor, rhs, check_finite=False)


def krr_predict(spec: KernelSpec, train_points, train_targets, ridge: float, test_points) -> np.ndarray:
    """Kernel ridge regression ``K(x, D) (K(D, D) + ridge I)^-1 f(D)``.

    ``train_targets`` may be 1-d or have one column per target.
    """
    X = np.atleast_2d(np.asarray(train_points, dtype=float))
    y = np.asarray(train_targets, dtype=float)
    if len(y) != len(X):
        raise ValueError(f"{len(X)} training points but {len(y)} targets")
    if len(np.unique(X, axis=0)) != len(X):
        raise ValueError("duplicate training points")
    K = kernel_matrix(spec, X, X)
    K = 0.5 * (K + K.T)
    if spec.jitter:
        K[np.diag_indices_from(K)] += spec.jitter
    alpha = solve_kernel_system(K, ridge, y)
    return kernel_matrix(spec, np.atleast_2d(test_points), X) @ alpha


def _design(eigentable, indices):
    return np.asarray(eigentable)[:, np.asarray(indices, dtype=int)]


def transfer_matrix(eigentable, eigenvalues, indices, ridge: float = 0.0) -> np.ndarray:
    """The M x M learning transfer matrix for one training set.

    ``eigenvalues`` are aligned with the eigentable rows.
    """
    lam = np.asarray(eigenvalues, dtype=float)
    M = len(lam)
    indices = np.asarray(indices, dtype=int)
    if len(indices) == 0:
        return np.zeros((M, M))
    if np.any(lam <= 0):
        raise ValueError("transfer matrix needs strictly positive eigenvalues")
    Phi = _design(eigentable, indices)
    LPhi = lam[:, None] * Phi
    W = solve_kernel_system(Phi.T @ LPhi, ridge, Phi.T)
    return LPhi @ W


def fit_coefficients(eigentable, eigenvalues, indices, V, ridge: float = 0.0, diagonal: bool = False):
    """Predicted coefficients ``T V`` without forming T.

    Returns ``vhat`` (same shape as ``V``), and with ``diagonal=True`` also
    ``diag(T)``.
    """
    lam = np.asarray(eigenvalues, dtype=float)
    V = np.asarray(V, dtype=float)
    indices = np.asarray(indices, dtype=int)
    if len(indices) == 0:
        out = np.zeros_like(V)
        return (out, np.zeros(len(lam))) if diagonal else out
    Phi = _design(eigentable, indices)
    LPhi = lam[:, None] * Phi
    K = Phi.T @ LPhi
    if diagonal:
        W = solve_kernel_system(K, ridge, Phi.T)
        vhat = LPhi @ (W @ V)
        return vhat, np.einsum("ij,ji->i", LPhi, W)
    return LPhi @ solve_kernel_system(K, ridge, Phi.T @ V)


def d_learnability(v, vhat) -> float:
    """Dataset learnability ``<f, fhat> / |f|^2`` in coefficient space."""
    v = np.asarray(v, dtype=float)
    norm2 = float(v @ v)
    if norm2 <= 0:
        raise ValueError("learnability undefined for a zero target")
    return float(v @ np.asarray(vhat, dtype=float)) / norm2


def d_mse(v, vhat, mode: str = "full", indices=None, eigentable=None) -> float:
    """Dataset MSE over the whole domain or over points outside the training set."""
    v = np.asarray(v, dtype=float)
    vhat = np.asarray(vhat, dtype=float)
    if v.shape != vhat.shape:
        raise ValueError(f"coefficient shapes differ: {v.shape} vs {vhat.shape}")
    if mode == "full":
        return float(((v - vhat) ** 2).sum())
    if mode != "ots":
        raise ValueError(f"unknown MSE mode {mode!r}")
    if indices is None or eigentable is None:
        raise ValueError("off-training-set MSE needs the draw and the eigentable")
    table = np.asarray(eigentable)
    M = table.shape[1]
    mask = np.ones(M, dtype=bool)
    mask[np.asarray(indices, dtype=int)] = False
    if not mask.any():
        raise ValueError("off-training-set MSE undefined when n = M")
    resid = table[:, mask].T @ (v - vhat)
    return float((resid**2).mean())


def empirical_msg(values) -> float:
    """Discrete mean squared gradient of a function sampled on the M-point circle.

    Mean squared difference between neighbours, rescaled by ``(M / 2 pi)^2``
    so that ``sqrt(2) cos(k theta)`` gives approximately ``k^2``.
    """
    f = np.asarray(values, dtype=float)
    M = len(f)
    if M < 3:
        raise ValueError("need at least 3 circle points")
    diff = f - np.roll(f, -1)
    return float((diff**2).mean() * (M / (2.0 * np.pi)) ** 2)


def tangent_basis(x: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the tangent space at unit vector ``x`` (rows)."""
    D = len(x)
    _, _, Vt = np.linalg.svd(x[None, :])
    return Vt[1:D]


def sphere_msg(func, points, h: float = 1e-4) -> float:
    """Mean squared tangential gradient by central differences along great circles.

    ``func`` maps an (m, d+1) array of unit vectors to m values.
    """
    P = np.asarray(points, dtype=float)
    m, D = P.shape
    total = np.zeros(m)
    bases = np.stack([tangent_basis(x) for x in P])  # (m, D-1, D)
    for a in range(D - 1):
        u = bases[:, a, :]
        plus = math.cos(h) * P + math.sin(h) * u
        minus = math.cos(h) * P - math.sin(h) * u
        g = (func(plus) - func(minus)) / (2.0 * h)
        total += g**2
    return float(total.mean())
