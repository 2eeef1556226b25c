import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dpsched.models import (Dataset, LossModel, ModelError, clip, clip_rows, estimate_spectrum, lipschitz_bound,
                            quadratic_sensitivity_bound, smoothness)


def jacobi_eigenvalues(A, tol=1e-14, sweeps=100):
    """Cyclic Jacobi rotations; an eigen oracle independent of LAPACK."""
    A = np.array(A, dtype=float)
    n = A.shape[0]
    for _ in range(sweeps):
        off = np.sqrt(np.sum(A**2) - np.sum(np.diag(A) ** 2))
        if off < tol * np.linalg.norm(A):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(A[p, q]) < 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2 * A[p, q])
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1))
                c = 1 / math.sqrt(t * t + 1)
                s = t * c
                J = np.eye(n)
                J[p, p] = J[q, q] = c
                J[p, q], J[q, p] = s, -s
                A = J.T @ A @ J
    return np.sort(np.diag(A))


def test_dataset_validation():
    d = Dataset(np.array([[3.0, 4.0], [0.0, 1.0]]))
    assert (d.N, d.D, d.max_norm) == (2, 2, 5.0)
    with pytest.raises(ModelError):
        Dataset(np.zeros((0, 2)))
    with pytest.raises(ModelError):
        Dataset(np.ones((2, 2)), np.array([1.0, 0.0]))
    with pytest.raises(ModelError):
        Dataset(np.ones((2, 2)), np.array([1.0]))
    with pytest.raises(ValueError):
        d.features[0, 0] = 1.0  # read-only


def test_loss_examples():
    one = Dataset(np.array([[1.0]]))
    q = LossModel("quadratic", one)
    assert q.loss([1.0]) == 0.0
    assert q.loss([0.0]) == 0.5
    rng = np.random.default_rng(0)
    lg = LossModel("logistic", Dataset(rng.standard_normal((7, 3)), np.ones(7)))
    assert lg.loss(np.zeros(3)) == pytest.approx(math.log(2))


def test_logistic_overflow_safe():
    lg = LossModel("logistic", Dataset(np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])))
    val = lg.loss([1e4])
    assert math.isfinite(val) and val == pytest.approx(0.5 * 1e4)
    assert np.all(np.isfinite(lg.per_sample_gradients([1e4])))


def test_model_validation():
    d = Dataset(np.ones((2, 2)))
    with pytest.raises(ModelError):
        LossModel("hinge", d)
    with pytest.raises(ModelError):
        LossModel("logistic", d)
    with pytest.raises(ModelError):
        LossModel("quadratic", d, clip_norm=0.0)


def test_gradient_examples():
    q = LossModel("quadratic", Dataset(np.array([[1.0]])))
    assert q.per_sample_gradients([0.0]) == pytest.approx(np.array([[-1.0]]))
    x = np.array([[2.0, -3.0, 0.5]])
    lg = LossModel("logistic", Dataset(x, np.array([1.0])))
    assert lg.per_sample_gradients(np.zeros(3)) == pytest.approx(-x / 2)


def central_diff(f, theta, h=1e-5):
    g = np.zeros_like(theta)
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = h
        g[j] = (f(theta + e) - f(theta - e)) / (2 * h)
    return g


def test_gradients_match_finite_differences(quad, logistic):
    rng = np.random.default_rng(1)
    for m in (quad, logistic):
        th = rng.standard_normal(m.D)
        fd = central_diff(m.loss, th)
        assert np.allclose(m.gradient(th), fd, rtol=1e-6, atol=1e-8)
        assert np.allclose(m.per_sample_gradients(th).mean(axis=0), m.gradient(th))


def test_clip_examples():
    g = np.array([0.0, 8.0])
    assert clip(g, 4.0) == pytest.approx([0.0, 4.0])
    g2 = np.array([2.0, 0.0])
    assert clip(g2, 4.0) is g2 or np.array_equal(clip(g2, 4.0), g2)
    assert np.array_equal(clip(np.zeros(3), 4.0), np.zeros(3))


@settings(max_examples=200)
@given(arrays(float, 5, elements=st.floats(-1e6, 1e6)), st.floats(1e-3, 1e3))
def test_clip_properties(g, C):
    c = clip(g, C)
    assert np.linalg.norm(c) <= C * (1 + 1e-12)
    assert np.array_equal(clip(c, C), c) or np.allclose(clip(c, C), c, rtol=1e-15, atol=0)
    if np.linalg.norm(g) > 0:
        # same direction
        assert float(np.dot(c, g)) >= 0
        assert np.allclose(c / max(np.linalg.norm(c), 1e-300), g / np.linalg.norm(g), atol=1e-12)


def test_clip_rows_matches_clip():
    rng = np.random.default_rng(2)
    G = rng.standard_normal((30, 4)) * 5
    G[0] = 0
    assert np.allclose(clip_rows(G, 3.0), np.array([clip(r, 3.0) for r in G]))


def test_clipped_mean_gradient_matches_rows(quad_clipped, logistic):
    rng = np.random.default_rng(3)
    lg = LossModel("logistic", logistic.data, clip_norm=0.3)
    for m in (quad_clipped, lg):
        th = rng.standard_normal(m.D) * 2
        mean, top = m.clipped_mean_gradient(th)
        rows = m.clipped_gradients(th)
        assert np.allclose(mean, rows.mean(axis=0), rtol=1e-12, atol=1e-14)
        assert top == pytest.approx(np.linalg.norm(rows, axis=1).max())
        assert top <= m.clip_norm * (1 + 1e-12)
        idx = np.array([0, 3, 3, 7])
        assert np.allclose(m.clipped_mean_gradient(th, idx)[0], m.clipped_gradients(th, idx).mean(axis=0))


def test_sensitivity_bound_examples():
    q = LossModel("quadratic", Dataset(np.array([[1.0]])))
    assert quadratic_sensitivity_bound(q, [0.0]) == pytest.approx(1.0)
    assert quadratic_sensitivity_bound(q, [1.0]) == 0.0
    half = LossModel("quadratic", Dataset(np.array([[0.5]])))
    assert quadratic_sensitivity_bound(half, [0.0]) == pytest.approx(0.5)
    lg = LossModel("logistic", Dataset(np.array([[1.0]]), np.array([1.0])))
    with pytest.raises(ModelError):
        quadratic_sensitivity_bound(lg, [0.0])


def test_sensitivity_bound_dominates_replacement():
    # the averaged gradient moves by at most 2x the bound when one sample is replaced by one at least as good
    rng = np.random.default_rng(4)
    X = rng.standard_normal((20, 3))
    th = rng.standard_normal(3) * 0.3
    m = LossModel("quadratic", Dataset(X))
    b = quadratic_sensitivity_bound(m, th)
    per = m.per_sample_gradients(th)
    assert np.max(np.linalg.norm(per, axis=1)) / m.N == pytest.approx(b)


def test_spectrum_examples():
    D = 4
    iso = LossModel("quadratic", Dataset(np.eye(D)))
    s = estimate_spectrum(iso)
    assert s.m_max == pytest.approx(1 / D, rel=1e-10) and s.mu_min == pytest.approx(1 / D, rel=1e-8)
    x = np.array([[0.6, 0.8, 0.0]])
    s = estimate_spectrum(LossModel("quadratic", Dataset(x)))
    assert s.m_max == pytest.approx(1.0, rel=1e-10) and s.mu_min == pytest.approx(1.0, rel=1e-8)


def test_spectrum_matches_jacobi_oracle():
    rng = np.random.default_rng(5)
    for _ in range(5):
        X = rng.standard_normal((5, 3))
        m = LossModel("quadratic", Dataset(X))
        ev = jacobi_eigenvalues(X.T @ X / 5)
        s = estimate_spectrum(m)
        assert s.converged
        assert s.m_max == pytest.approx(ev[-1], rel=1e-8)
        assert s.mu_min == pytest.approx(ev[0], rel=1e-8)
        assert np.allclose(ev, np.linalg.eigvalsh(X.T @ X / 5), rtol=1e-10)


def test_spectrum_rank_deficient_and_errors():
    rng = np.random.default_rng(6)
    X = rng.standard_normal((3, 6))  # rank 3 in 6 dims
    s = estimate_spectrum(LossModel("quadratic", Dataset(X)))
    ev = np.linalg.eigvalsh(X.T @ X / 3)
    nz = ev[ev > 1e-8 * ev[-1]]
    assert s.mu_min == pytest.approx(nz[0], rel=1e-7)
    with pytest.raises(ModelError):
        estimate_spectrum(LossModel("quadratic", Dataset(np.zeros((3, 2)))))
    with pytest.raises(ModelError):
        estimate_spectrum(LossModel("logistic", Dataset(X, np.ones(3))))


def test_lipschitz_examples():
    X = np.array([[6.0, 8.0], [1.0, 0.0]])
    y = np.array([1.0, -1.0])
    assert lipschitz_bound(LossModel("logistic", Dataset(X, y))) == 10.0
    assert lipschitz_bound(LossModel("logistic", Dataset(X, y), clip_norm=4.0)) == 4.0
    assert lipschitz_bound(LossModel("quadratic", Dataset(X), clip_norm=4.0)) == 4.0
    unit = X / np.linalg.norm(X, axis=1, keepdims=True)
    assert lipschitz_bound(LossModel("logistic", Dataset(unit, y))) == pytest.approx(1.0)
    with pytest.raises(ModelError):
        lipschitz_bound(LossModel("quadratic", Dataset(X)))


def test_smoothness_logistic_bound(logistic):
    M = smoothness(logistic)
    rng = np.random.default_rng(7)
    for _ in range(20):
        ev = np.linalg.eigvalsh(logistic.hessian(rng.standard_normal(logistic.D) * 3))
        assert ev[-1] <= M * (1 + 1e-12)


def test_pl_and_smoothness_inequalities():
    rng = np.random.default_rng(8)
    X = rng.standard_normal((8, 5))  # full column rank
    X = X - X.mean(axis=0)
    m = LossModel("quadratic", Dataset(X))
    s = estimate_spectrum(m)
    _, fstar = m.minimum()
    for _ in range(200):
        th = rng.standard_normal(5) * rng.uniform(0.01, 10)
        g = m.gradient(th)
        assert g @ g >= 2 * s.mu_min * (m.loss(th) - fstar) - 1e-8
        y = th + rng.standard_normal(5)
        assert m.loss(y) <= m.loss(th) + g @ (y - th) + 0.5 * s.m_max * np.sum((y - th) ** 2) + 1e-8


def test_hvp_matches_hessian(quad):
    v = np.arange(1.0, quad.D + 1)
    assert np.allclose(quad.hvp(v), quad.hessian() @ v)
