"""Closed-form learnability and generalization predictions.

Every spectrum argument may carry ``multiplicities``: entry ``i`` then stands
for ``multiplicities[i]`` modes sharing eigenvalue ``eigenvalues[i]``, and all
sums over modes are weighted accordingly.  This keeps degenerate sphere
levels (hundreds of millions of harmonics at high k) cheap.

The ridge enters as in ``K(D, D) + ridge I``, unscaled by n.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MAX_BISECTION_STEPS = 200


class NoFiniteRoot(ValueError):
    """The learnability budget cannot be met: ridge is 0 and n exceeds the mode count."""


@dataclass(frozen=True, eq=False)
class TheoryConstants:
    """Solution of the self-consistency equation at one (n, ridge).

    ``shift`` is ``ridge / M`` in finite-M ridge mode and 0 otherwise;
    ``L`` holds per-entry learnabilities.
    """

    C: float
    q: float
    n: float
    ridge: float
    eigenvalues: np.ndarray
    multiplicities: np.ndarray
    shift: float
    L: np.ndarray

    @property
    def sum_L2(self) -> float:
        return float((self.multiplicities * self.L**2).sum())

    @property
    def sum_rates(self) -> float:
        """``sum_m L_m (1 - L_m)``."""
        return float((self.multiplicities * self.L * (1.0 - self.L)).sum())

    @property
    def ridge_term(self) -> float:
        """``ridge / C`` (0 in finite-M ridge mode, where the ridge lives in the shift)."""
        if self.shift or not self.ridge:
            return 0.0
        return self.ridge / self.C

    @property
    def mse_denominator(self) -> float:
        """``n - sum_m L_m^2``; nonpositive means a divergent MSE."""
        return self.n - self.sum_L2

    def residual(self) -> float:
        """Relative residual of the defining equation."""
        if math.isinf(self.C):
            return 0.0
        lam = self.eigenvalues + self.shift
        total = float((self.multiplicities * lam / (lam + self.C)).sum()) + self.ridge_term
        return abs(total - self.n) / self.n


def _weights(eigenvalues, multiplicities):
    lam = np.asarray(eigenvalues, dtype=float)
    if lam.ndim != 1 or len(lam) == 0:
        raise ValueError("need a non-empty 1-d spectrum")
    if np.any(lam <= 0) or not np.all(np.isfinite(lam)):
        raise ValueError("theory requires strictly positive, finite eigenvalues")
    mult = np.ones_like(lam) if multiplicities is None else np.asarray(multiplicities, dtype=float)
    if mult.shape != lam.shape or np.any(mult <= 0):
        raise ValueError("multiplicities must be positive and match the eigenvalues")
    return lam, mult


def c_upper_bound(eigenvalues, n, ridge=0.0, multiplicities=None, ell: int = 0) -> float:
    """``C <= (ridge + sum_{i > ell} lambda_i) / (n - ell)`` for integer ``ell < n``."""
    lam, mult = _weights(eigenvalues, multiplicities)
    order = np.argsort(-lam, kind="stable")
    flat_tail = _tail_sum(lam[order], mult[order], ell)
    return (ridge + flat_tail) / (n - ell)


def _tail_sum(lam_sorted, mult_sorted, ell):
    """Sum of eigenvalues beyond the ``ell`` largest (counting multiplicity)."""
    keep = np.clip(np.cumsum(mult_sorted) - ell, 0.0, mult_sorted)
    return float((keep * lam_sorted).sum())


def c_lower_bound(eigenvalues, n, ridge=0.0, multiplicities=None) -> float:
    """Best lower bound on C over ``ell >= n`` (uses the ridge-aware form)."""
    lam, mult = _weights(eigenvalues, multiplicities)
    order = np.argsort(-lam, kind="stable")
    lam_s, cum = lam[order], np.cumsum(mult[order])
    ok = cum >= n
    if not ok.any():
        return 0.0
    ell, lam_l = cum[ok], lam_s[ok]
    a = (ell - n) * lam_l + ridge
    bound = (a + np.sqrt(a * a + 4.0 * n * ridge * lam_l)) / (2.0 * n)
    return float(bound.max())


def solve_C(eigenvalues, n: float, ridge: float = 0.0, multiplicities=None, M: int | None = None) -> TheoryConstants:
    """Solve ``sum_i lambda_i / (lambda_i + C) + ridge / C = n`` for C by bisection.

    With ``M`` given, the finite-M ridge variant is used instead: every
    eigenvalue is shifted by ``ridge / M`` and the ``ridge / C`` term is
    dropped.  ``n = 0`` returns ``C = inf``.  Bisection runs on ``log C``
    inside a bracket from the analytic upper/lower bounds on C.
    """
    lam, mult = _weights(eigenvalues, multiplicities)
    if n < 0:
        raise ValueError("n must be non-negative")
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    shift = ridge / M if (M is not None and ridge) else 0.0
    lam_eff = lam + shift
    ridge_term = 0.0 if shift else ridge
    total = float(mult.sum())

    def make(C):
        if math.isinf(C):
            L = np.zeros_like(lam)
            q = 0.0
        else:
            L = lam / (lam_eff + C)
            q = float((mult * lam_eff / (lam_eff + C) ** 2).sum()) + (ridge_term / C**2 if ridge_term else 0.0)
        return TheoryConstants(C, q, float(n), float(ridge), lam, mult, shift, L)

    if n == 0:
        return make(math.inf)
    if ridge_term == 0:
        if n > total * (1 + 1e-12):
            raise NoFiniteRoot(f"no finite C: n = {n} exceeds the {total:g} available modes at zero ridge")
        if n >= total:
            return make(0.0)

    def F(C):
        return float((mult * lam_eff / (lam_eff + C)).sum()) + ridge_term / C

    hi = max(c_upper_bound(lam_eff, n, ridge_term, mult), np.finfo(float).tiny)
    while F(hi) > n:
        hi *= 2.0
    lo = c_lower_bound(lam_eff, n, ridge_term, mult)
    if not lo > 0 or lo >= hi:
        lo = hi
    while F(lo) <= n:
        lo *= 0.5
        if lo == 0.0:
            raise NoFiniteRoot("C underflowed while bracketing; spectrum nearly rank n")
    a, b = math.log(lo), math.log(hi)
    for _ in range(MAX_BISECTION_STEPS):
        mid = 0.5 * (a + b)
        if F(math.exp(mid)) > n:
            a = mid
        else:
            b = mid
        if b - a < 1e-15:
            break
    C = math.exp(0.5 * (a + b))
    return make(C)


def mode_learnability(eigenvalue, constants: TheoryConstants):
    """``lambda / (lambda + C)`` (finite-M ridge mode: ``lambda / (lambda + ridge/M + C)``)."""
    lam = np.asarray(eigenvalue, dtype=float)
    if math.isinf(constants.C):
        return np.zeros_like(lam) if lam.ndim else 0.0
    return lam / (lam + constants.shift + constants.C)


def predict_learnability(v, L) -> float:
    v2 = np.asarray(v, dtype=float) ** 2
    norm2 = v2.sum()
    if norm2 <= 0:
        raise ValueError("learnability undefined for a zero target")
    return float((v2 * np.asarray(L)).sum() / norm2)


def predict_mse(v, L, n: float, sum_L2: float | None = None, noise_var: float = 0.0) -> float:
    """Expected MSE ``n / (n - sum L^2) * (sum_i (1 - L_i)^2 v_i^2 + noise)``.

    ``v`` and ``L`` may cover only the modes the target touches, in which case
    ``sum_L2`` must come from the full spectrum (e.g. ``constants.sum_L2``).
    A nonpositive denominator returns ``inf``.
    """
    v2 = np.asarray(v, dtype=float) ** 2
    L = np.asarray(L, dtype=float)
    bias = float(((1.0 - L) ** 2 * v2).sum()) + noise_var
    if n == 0:
        return bias
    s2 = float((L**2).sum()) if sum_L2 is None else sum_L2
    denom = n - s2
    if denom <= 0:
        return math.inf
    return n / denom * bias


def predict_vhat_covariance(L, mse: float, n: float) -> np.ndarray:
    """Diagonal of ``Cov(vhat)``: ``L_i^2 E / n``."""
    if n <= 0:
        raise ValueError("predictor covariance undefined at n = 0")
    return np.asarray(L, dtype=float) ** 2 * mse / n


def transfer_covariance(i, j, k, l, constants: TheoryConstants) -> float:
    """``Cov(T_ij, T_kl)`` with indices into the constants' eigenvalue entries.

    Indices name distinct modes even when entries carry multiplicities.
    """
    L = constants.L
    if constants.shift:
        lam = constants.eigenvalues
        lam_eff = lam + constants.shift
        C = constants.C
        pref = lam[i] * lam[k] * C / (constants.q * np.prod([lam_eff[x] + C for x in (i, j, k, l)]))
    else:
        denom = constants.mse_denominator
        if denom <= 0:
            raise ValueError("transfer covariance diverges: n - sum L^2 <= 0")
        pref = L[i] * (1 - L[j]) * L[k] * (1 - L[l]) / denom
    delta = (i == k and j == l) + (i == l and j == k) - (i == j and k == l)
    return float(pref * delta)


def learnability_rate(constants: TheoryConstants) -> np.ndarray:
    """``dL_i/dn``, i.e. ``L_i (1 - L_i) / (sum_m L_m (1 - L_m) + ridge / C)``."""
    if math.isinf(constants.C) or constants.C == 0:
        raise ValueError("rates undefined at n = 0 or with every mode saturated")
    lam_eff = constants.eigenvalues + constants.shift
    return constants.eigenvalues / ((lam_eff + constants.C) ** 2 * constants.q)


def mse_slope_at_zero(eigenvalues, ridge: float, eigenvalue, multiplicities=None) -> float:
    """``dE(phi_i)/dn`` at n = 0 for the mode with eigenvalue ``eigenvalue``."""
    lam, mult = _weights(eigenvalues, multiplicities)
    s1 = float((mult * lam).sum()) + ridge
    s2 = float((mult * lam**2).sum())
    return (s2 / s1 - 2.0 * eigenvalue) / s1


def overfit_threshold(eigenvalues, ridge: float = 0.0, multiplicities=None) -> float:
    """Modes with eigenvalue below this value have MSE increasing at small n."""
    lam, mult = _weights(eigenvalues, multiplicities)
    return float((mult * lam**2).sum()) / (2.0 * (float((mult * lam).sum()) + ridge))


def gradient_gram(kind: str, levels, ambient_dim: int | None = None) -> np.ndarray:
    """Diagonal gradient-interaction constants ``E|grad phi|^2`` per mode.

    Circle: ``k^2``.  Sphere in R^D: ``k (k + D - 2)``, the Laplace-Beltrami
    eigenvalue of a degree-k harmonic.
    """
    k = np.asarray(levels, dtype=float)
    if kind == "circle":
        return k**2
    if kind == "sphere":
        if ambient_dim is None:
            raise ValueError("sphere gradient constants need the ambient dimension")
        return k * (k + ambient_dim - 2)
    raise ValueError(f"no gradient interaction constants for domain {kind!r}")


def predict_msg(mean_vhat, var_vhat, G, multiplicities=None) -> float:
    """Mean squared gradient ``sum_ij E[vhat_i vhat_j] G_ij`` with diagonal covariance.

    ``G`` is either the full matrix or its diagonal.  ``multiplicities``
    weight the variance term when entries stand for degenerate levels (the
    mean must then be supported on single modes).
    """
    mean = np.asarray(mean_vhat, dtype=float)
    var = np.asarray(var_vhat, dtype=float)
    G = np.asarray(G, dtype=float)
    if mean.shape != var.shape:
        raise ValueError("mean and variance shapes differ")
    mult = np.ones_like(var) if multiplicities is None else np.asarray(multiplicities, dtype=float)
    if G.ndim == 1:
        if G.shape != mean.shape:
            raise ValueError("G does not match the tracked modes")
        return float((G * (mean**2 + mult * var)).sum())
    if G.shape != (len(mean), len(mean)):
        raise ValueError("G does not match the tracked modes")
    return float(mean @ G @ mean + (mult * var * np.diag(G)).sum())


def parity_bound(d: int, eps: float) -> int:
    """Samples needed to reach MSE ``eps`` on full parity: ``ceil(2^(d-1) (1 - sqrt(eps)))``."""
    if d < 1 or d % 2 == 0:
        raise ValueError("parity bound assumes odd d")
    if not 0 < eps < 1:
        raise ValueError("target MSE must lie in (0, 1)")
    return math.ceil(2 ** (d - 1) * (1.0 - math.sqrt(eps)))


def parity_learnability_cap(d: int, n: float) -> float:
    """Upper bound ``n / 2^(d-1)`` on full-parity learnability (capped at 1)."""
    return min(1.0, n / 2 ** (d - 1))


def parity_mse_bound(d: int, n: float) -> float:
    return (1.0 - parity_learnability_cap(d, n)) ** 2


def noisy_predictions(v_clean, L, n: float, sum_L2: float, noise_var: float):
    """Learnability and MSE observed when fitting targets with label noise ``noise_var``.

    Returns ``(L_noisy, E_noisy)`` with ``L_noisy = |f*|^2 / (|f*|^2 + noise) L(f*)``.
    """
    if noise_var < 0:
        raise ValueError("noise variance must be non-negative")
    v = np.asarray(v_clean, dtype=float)
    norm2 = float(v @ v)
    lrn = norm2 / (norm2 + noise_var) * predict_learnability(v, L)
    return lrn, predict_mse(v, L, n, sum_L2, noise_var)


def ots_correct(L_naive: float, E_naive: float, n: float, M: int):
    """Remove the free credit for memorized training points."""
    if n >= M:
        raise ValueError("off-training-set quantities need n < M")
    frac = 1.0 - n / M
    return (L_naive - n / M) / frac, E_naive / frac


def mse_lower_bound(L: float, norm2: float = 1.0) -> float:
    """``|f|^2 (1 - L)^2``, a lower bound on expected MSE."""
    return norm2 * (1.0 - L) ** 2


def c_truncation_change(coarse: TheoryConstants, fine: TheoryConstants) -> float:
    """Relative change of C between two spectrum truncations at the same (n, ridge)."""
    return abs(fine.C - coarse.C) / fine.C
