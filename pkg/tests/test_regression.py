import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special

from eigenlearn.domain import build_circle, build_hypercube, sample_hypersphere, sphere_multiplicity
from eigenlearn.kernel import KernelSpec
from eigenlearn.regression import (
    DatasetDraw,
    SingularSystemError,
    d_learnability,
    d_mse,
    empirical_msg,
    fit_coefficients,
    krr_predict,
    solve_kernel_system,
    sphere_msg,
    transfer_matrix,
)
from eigenlearn.spectrum import circle_spectrum, decompose_target, hypercube_spectrum, reconstruct_target, sphere_target

NTK = KernelSpec()


def _circle(M, spec=NTK):
    dom = build_circle(M)
    lam = circle_spectrum(spec, M).to_spectrum(dom).in_mode_order()
    return dom, lam


def _draw(M, n, seed):
    return np.sort(np.random.default_rng(seed).choice(M, size=n, replace=False))


def test_single_point_interpolation():
    x = np.array([[0.6, 0.8]])
    assert krr_predict(NTK, x, [1.7], 0.0, x)[0] == pytest.approx(1.7, rel=1e-12)


def test_huge_ridge_shrinks_to_zero():
    pts = build_circle(16).points
    f = np.cos(np.arange(16))
    pred = krr_predict(NTK, pts[:5], f[:5], 1e12, pts)
    assert np.abs(pred).max() < 1e-10


def test_full_dataset_recovers_target():
    dom, lam = _circle(16)
    f = dom.eigentable[1]
    pred = krr_predict(NTK, dom.points, f, 0.0, dom.points)
    np.testing.assert_allclose(pred, f, atol=1e-8)


def test_transfer_empty_and_full():
    dom, lam = _circle(12)
    assert not transfer_matrix(dom.eigentable, lam, []).any()
    np.testing.assert_allclose(transfer_matrix(dom.eigentable, lam, np.arange(12)), np.eye(12), atol=1e-9)


def test_transfer_trace_circle():
    dom, lam = _circle(10)
    T = transfer_matrix(dom.eigentable, lam, [0, 2, 3, 7, 9])
    assert np.trace(T) == pytest.approx(5.0, abs=1e-10)


@pytest.mark.parametrize("ridge", [0.0, 1e-3, 0.5])
def test_krr_and_transfer_agree(ridge):
    dom, lam = _circle(32)
    f = np.sin(3 * 2 * np.pi * np.arange(32) / 32) + 0.3 * np.cos(2 * np.pi * np.arange(32) / 32) ** 3
    idx = _draw(32, 11, 0)
    direct = krr_predict(NTK, dom.points[idx], f[idx], ridge, dom.points)
    via_T = reconstruct_target(dom, transfer_matrix(dom.eigentable, lam, idx, ridge) @ decompose_target(dom, f))
    np.testing.assert_allclose(direct, via_T, atol=1e-8)


def test_krr_and_transfer_agree_on_hypercube():
    dom = build_hypercube(6)
    lam = hypercube_spectrum(NTK, 6).to_spectrum(dom).in_mode_order()
    f = np.prod(dom.points[:, :2], axis=1) + dom.points[:, 3]
    idx = _draw(dom.M, 20, 1)
    direct = krr_predict(NTK, dom.unit_points()[idx], f[idx], 0.0, dom.unit_points())
    via_T = reconstruct_target(dom, transfer_matrix(dom.eigentable, lam, idx) @ decompose_target(dom, f))
    np.testing.assert_allclose(direct, via_T, atol=1e-8)


def test_fit_coefficients_matches_transfer():
    dom, lam = _circle(24)
    idx = _draw(24, 9, 2)
    V = np.random.default_rng(3).standard_normal((24, 3))
    T = transfer_matrix(dom.eigentable, lam, idx, 0.01)
    vhat, diag = fit_coefficients(dom.eigentable, lam, idx, V, 0.01, diagonal=True)
    np.testing.assert_allclose(vhat, T @ V, atol=1e-10)
    np.testing.assert_allclose(diag, np.diag(T), atol=1e-10)
    np.testing.assert_allclose(fit_coefficients(dom.eigentable, lam, idx, V, 0.01), T @ V, atol=1e-10)


def test_monotone_in_dataset_exhaustive_small_circle():
    # adding a point never lowers any mode's dataset learnability
    M = 8
    dom, lam = _circle(M)
    diag = {(): np.zeros(M)}
    for n in range(1, 5):
        for D in itertools.combinations(range(M), n):
            diag[D] = np.diag(transfer_matrix(dom.eigentable, lam, D))
            for drop in range(n):
                smaller = D[:drop] + D[drop + 1:]
                assert (diag[D] >= diag[smaller] - 1e-8).all(), (D, smaller)


def _random_instance(seed, M=16):
    rng = np.random.default_rng(seed)
    dom = build_circle(M)
    lam = np.exp(rng.uniform(-4, 0, M))
    n = int(rng.integers(2, M - 2))
    return dom, lam, _draw(M, n, seed), rng


@pytest.mark.parametrize("seed", range(20))
def test_eigenvalue_competition(seed):
    dom, lam, idx, rng = _random_instance(seed)
    ridge = float(rng.choice([0.0, 0.05]))
    i = int(rng.integers(len(lam)))
    h = 1e-6 * lam[i]
    up = lam.copy()
    up[i] += h
    base = np.diag(transfer_matrix(dom.eigentable, lam, idx, ridge))
    bumped = np.diag(transfer_matrix(dom.eigentable, up, idx, ridge))
    grad = (bumped - base) / h
    assert grad[i] >= -1e-8
    assert (np.delete(grad, i) <= 1e-8).all()


@pytest.mark.parametrize("seed", range(20))
def test_ridge_lowers_learnability(seed):
    dom, lam, idx, rng = _random_instance(seed)
    ridge = float(rng.uniform(0, 0.5))
    base = np.diag(transfer_matrix(dom.eigentable, lam, idx, ridge))
    bumped = np.diag(transfer_matrix(dom.eigentable, lam, idx, ridge + 1e-6))
    assert ((bumped - base) / 1e-6 <= 1e-8).all()


@pytest.mark.parametrize("ridge", [1e-3, 1e-1])
@pytest.mark.parametrize("seed", range(5))
def test_ridge_equals_shifted_spectrum(seed, ridge):
    M, n = 64, 16
    dom = build_circle(M)
    rng = np.random.default_rng(seed)
    lam = np.exp(rng.uniform(-6, 0, M))
    idx = _draw(M, n, seed)
    shifted = lam + ridge / M
    lhs = transfer_matrix(dom.eigentable, lam, idx, ridge)
    rhs = (lam / shifted)[:, None] * transfer_matrix(dom.eigentable, shifted, idx, 0.0)
    np.testing.assert_allclose(lhs, rhs, atol=1e-8)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 15), st.floats(0, 10), st.integers(0, 10**6))
def test_mode_learnability_in_unit_interval(n, ridge, seed):
    dom, lam = _circle(16)
    idx = _draw(16, n, seed)
    T = transfer_matrix(dom.eigentable, lam, idx, ridge)
    for i in range(16):
        L = d_learnability(np.eye(16)[i], T[:, i])
        assert -1e-10 <= L <= 1 + 1e-10


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 16), st.integers(0, 10**6))
def test_trace_equals_sample_count(n, seed):
    dom, lam = _circle(16)
    T = transfer_matrix(dom.eigentable, lam, _draw(16, n, seed))
    assert np.trace(T) == pytest.approx(n, abs=1e-8)


def test_d_learnability_cases():
    v = np.array([0.5, -1.0, 2.0])
    assert d_learnability(v, v) == 1.0
    assert d_learnability(v, np.zeros(3)) == 0.0
    with pytest.raises(ValueError):
        d_learnability(np.zeros(3), v)


def test_d_mse_cases():
    dom = build_circle(8)
    v = np.array([0.0, 1.0, 0, 0, 0, 0, 0.5, 0])
    assert d_mse(v, v) == 0.0
    assert d_mse(v, np.zeros(8)) == pytest.approx(1.25)
    # off-training-set error of the zero predictor is the mean of f^2 over unseen points
    f = reconstruct_target(dom, v)
    idx = [1, 4]
    unseen = np.delete(f, idx)
    assert d_mse(v, np.zeros(8), "ots", idx, dom.eigentable) == pytest.approx((unseen**2).mean(), rel=1e-12)


def test_d_mse_errors():
    dom = build_circle(4)
    v = np.ones(4)
    with pytest.raises(ValueError):
        d_mse(v, np.ones(3))
    with pytest.raises(ValueError):
        d_mse(v, v, "ots")
    with pytest.raises(ValueError):
        d_mse(v, v, "ots", np.arange(4), dom.eigentable)
    with pytest.raises(ValueError):
        d_mse(v, v, "median")


def test_ots_mse_of_unlearnable_target_is_at_least_its_norm():
    # the top circle mode has dataset learnability below n/M; regression then
    # does no better than predicting zero off the training set
    M, n, trials = 32, 8, 400
    dom, lam = _circle(M)
    i = dom.level_modes(16)[0]
    v = np.eye(M)[i]
    L, E = [], []
    for t in range(trials):
        idx = _draw(M, n, 1000 + t)
        vhat = fit_coefficients(dom.eigentable, lam, idx, v)
        L.append(d_learnability(v, vhat))
        E.append(d_mse(v, vhat, "ots", idx, dom.eigentable))
    assert np.mean(L) <= n / M
    assert np.mean(E) >= 1.0 - 2 * np.std(E, ddof=1) / math.sqrt(trials)


def test_circle_msg_constant_and_modes():
    assert empirical_msg(np.full(50, 3.0)) == 0.0
    M = 1024
    theta = 2 * np.pi * np.arange(M) / M
    for k in (1, 3, 7):
        exact = 2.0 * (1.0 - math.cos(2 * math.pi * k / M)) * (M / (2 * math.pi)) ** 2
        value = empirical_msg(math.sqrt(2) * np.cos(k * theta))
        assert value == pytest.approx(exact, rel=1e-9)
        assert abs(value - k**2) <= k**2 * (2 * math.pi * k / M) ** 2


def test_circle_msg_needs_three_points():
    with pytest.raises(ValueError):
        empirical_msg([1.0, 2.0])


@pytest.mark.parametrize("d,k", [(3, 2), (5, 2), (4, 3)])
def test_sphere_msg_matches_analytic_gradient(d, k):
    # f(x) = g(x . a) has tangential gradient g'(t) (a - t x), so |grad f|^2 = g'(t)^2 (1 - t^2)
    pts = sample_hypersphere(d, 500, seed=7).points
    a = np.zeros(d + 1)
    a[0] = 1.0
    alpha = (d - 1) / 2
    scale = math.sqrt(sphere_multiplicity(d, k)) / special.eval_gegenbauer(k, alpha, 1.0)
    t = pts @ a
    dg = scale * 2 * alpha * special.eval_gegenbauer(k - 1, alpha + 1, t)
    exact = float((dg**2 * (1 - t**2)).mean())
    got = sphere_msg(lambda P: sphere_target(k, d, a, P), pts)
    assert got == pytest.approx(exact, rel=1e-6)


def test_sphere_msg_level_average():
    # averaged over the sphere, a unit-norm level-k harmonic has E|grad f|^2 = k (k + d - 1) on S^d
    d, k = 3, 2
    pts = sample_hypersphere(d, 20000, seed=3).points
    a = np.eye(d + 1)[1]
    vals = sphere_msg(lambda P: sphere_target(k, d, a, P), pts)
    assert vals == pytest.approx(k * (k + d - 1), rel=0.05)


def test_singular_system_is_reported():
    K = np.ones((3, 3))
    with pytest.raises(SingularSystemError):
        solve_kernel_system(K, 0.0, np.ones(3))
    # a ridge makes the same system solvable
    solve_kernel_system(K, 0.1, np.ones(3))
    with pytest.raises(ValueError):
        solve_kernel_system(K, -1.0, np.ones(3))


def test_duplicate_points_rejected():
    with pytest.raises(ValueError):
        DatasetDraw([1, 2, 2])
    x = np.array([[1.0, 0.0], [1.0, 0.0]])
    with pytest.raises(ValueError, match="duplicate"):
        krr_predict(NTK, x, [1.0, 1.0], 0.0, x)


def test_transfer_needs_positive_eigenvalues():
    dom = build_circle(4)
    with pytest.raises(ValueError):
        transfer_matrix(dom.eigentable, np.array([1.0, 0.5, 0.0, 0.2]), [0, 1])


def test_multi_target_krr():
    dom = build_circle(16)
    Y = np.stack([np.cos(np.arange(16)), np.sin(np.arange(16))], axis=1)
    idx = _draw(16, 6, 0)
    both = krr_predict(NTK, dom.points[idx], Y[idx], 0.0, dom.points)
    first = krr_predict(NTK, dom.points[idx], Y[idx, 0], 0.0, dom.points)
    np.testing.assert_allclose(both[:, 0], first, atol=1e-12)
