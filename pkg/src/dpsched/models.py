"""Loss models with per-sample gradients, clipping and curvature estimates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray | None = None
    max_norm: float = field(init=False)
    row_norms: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise ModelError(f"features must be a non-empty N x D matrix, got shape {X.shape}")
        X.setflags(write=False)
        object.__setattr__(self, "features", X)
        if self.labels is not None:
            y = np.asarray(self.labels, dtype=float)
            if y.shape != (X.shape[0],):
                raise ModelError(f"expected {X.shape[0]} labels, got shape {y.shape}")
            if not np.all(np.isin(y, (-1.0, 1.0))):
                raise ModelError("labels must be -1 or +1")
            y.setflags(write=False)
            object.__setattr__(self, "labels", y)
        norms = np.linalg.norm(X, axis=1)
        norms.setflags(write=False)
        object.__setattr__(self, "row_norms", norms)
        object.__setattr__(self, "max_norm", float(np.max(norms)))

    @property
    def N(self) -> int:
        return self.features.shape[0]

    @property
    def D(self) -> int:
        return self.features.shape[1]


def clip(g: np.ndarray, C: float) -> np.ndarray:
    """Rescale ``g`` onto the ball of radius C; vectors already inside are returned as is."""
    g = np.asarray(g, dtype=float)
    n = float(np.linalg.norm(g))
    if n <= C:
        return g
    return g * (C / n)


def clip_rows(G: np.ndarray, C: float) -> np.ndarray:
    norms = np.linalg.norm(G, axis=1)
    scale = np.where(norms > C, C / np.where(norms > 0, norms, 1.0), 1.0)
    return G * scale[:, None]


def _log1pexp(z):
    # log(1 + e^z) without overflow
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass(frozen=True)
class LossModel:
    """Empirical risk (1/N) sum_n f(theta; x_n).

    quadratic: f = 0.5 (x^T theta - 1)^2 (constant unit target)
    logistic:  f = log(1 + exp(-y x^T theta))
    """

    kind: str
    data: Dataset
    clip_norm: float | None = None

    def __post_init__(self):
        if self.kind not in ("quadratic", "logistic"):
            raise ModelError(f"unknown model kind {self.kind!r}")
        if self.kind == "logistic" and self.data.labels is None:
            raise ModelError("logistic model needs labels")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ModelError(f"clip norm must be positive, got {self.clip_norm}")

    @property
    def N(self) -> int:
        return self.data.N

    @property
    def D(self) -> int:
        return self.data.D

    def sample_losses(self, theta, idx=None) -> np.ndarray:
        X = self.data.features if idx is None else self.data.features[idx]
        z = X @ np.asarray(theta, dtype=float)
        if self.kind == "quadratic":
            return 0.5 * (z - 1.0) ** 2
        y = self.data.labels if idx is None else self.data.labels[idx]
        return _log1pexp(-y * z)

    def loss(self, theta) -> float:
        return float(np.mean(self.sample_losses(theta)))

    def _grad_coefs(self, theta, idx=None):
        # every per-sample gradient is a scalar multiple c_n of its feature row
        X = self.data.features if idx is None else self.data.features[idx]
        z = X @ np.asarray(theta, dtype=float)
        if self.kind == "quadratic":
            return z - 1.0, X
        y = self.data.labels if idx is None else self.data.labels[idx]
        return -y * _sigmoid(-y * z), X

    def per_sample_gradients(self, theta, idx=None) -> np.ndarray:
        c, X = self._grad_coefs(theta, idx)
        return c[:, None] * X

    def clipped_mean_gradient(self, theta, idx=None) -> tuple[np.ndarray, float]:
        """Mean of the clipped per-sample gradients and the largest clipped norm.

        Uses ||c_n x_n|| = |c_n| ||x_n|| so the N x D gradient matrix is never formed.
        """
        c, X = self._grad_coefs(theta, idx)
        norms = np.abs(c) * (self.data.row_norms if idx is None else self.data.row_norms[idx])
        if self.clip_norm is not None:
            over = norms > self.clip_norm
            if np.any(over):
                c = np.where(over, c * (self.clip_norm / np.where(over, norms, 1.0)), c)
                norms = np.minimum(norms, self.clip_norm)
        return (c @ X) / c.size, float(norms.max())

    def gradient(self, theta) -> np.ndarray:
        return self.per_sample_gradients(theta).mean(axis=0)

    def clipped_gradients(self, theta, idx=None) -> np.ndarray:
        G = self.per_sample_gradients(theta, idx)
        if self.clip_norm is None:
            return G
        return clip_rows(G, self.clip_norm)

    def hessian(self, theta=None) -> np.ndarray:
        X = self.data.features
        if self.kind == "quadratic":
            return X.T @ X / self.N
        z = X @ np.asarray(theta, dtype=float)
        s = _sigmoid(z)
        return (X * (s * (1 - s))[:, None]).T @ X / self.N

    def hvp(self, v) -> np.ndarray:
        """Product with the (constant) quadratic Hessian, without forming it."""
        if self.kind != "quadratic":
            raise ModelError("constant Hessian only exists for the quadratic model")
        X = self.data.features
        return X.T @ (X @ v) / self.N

    def minimum(self) -> tuple[np.ndarray, float]:
        """Minimiser and minimum of the quadratic model (min-norm least squares)."""
        if self.kind != "quadratic":
            raise ModelError("closed-form minimum only for the quadratic model")
        X = self.data.features
        theta, *_ = np.linalg.lstsq(X, np.ones(self.N), rcond=None)
        return theta, self.loss(theta)


def quadratic_sensitivity_bound(model: LossModel, theta) -> float:
    """max_i (1/N) sqrt(2 f(theta; x_i)) ||x_i|| for the unit-target squared loss."""
    if model.kind != "quadratic":
        raise ModelError("sensitivity bound is specific to the squared loss")
    f = model.sample_losses(theta)
    norms = np.linalg.norm(model.data.features, axis=1)
    return float(np.max(np.sqrt(2.0 * f) * norms)) / model.N


@dataclass(frozen=True)
class Spectrum:
    m_max: float
    mu_min: float
    tolerance: float
    iterations: int
    converged: bool


def _power_iteration(matvec, dim, rng, deflate=None, rtol=1e-10, maxiter=10_000, scale_floor=0.0):
    """Dominant eigenpair of a symmetric PSD operator by power iteration.

    ``deflate`` is an orthonormal (dim x k) basis projected out of every
    iterate. Stops once the Rayleigh quotient settles to ``rtol`` and the
    residual is below sqrt(rtol) (the eigenvalue error is then of order
    residual^2 / gap). Both tests are relative to max(|lambda|, scale_floor).
    """

    def project(v):
        if deflate is not None and deflate.shape[1]:
            v = v - deflate @ (deflate.T @ v)
        return v

    v = project(rng.standard_normal(dim))
    v /= np.linalg.norm(v)
    lam = 0.0
    for it in range(1, maxiter + 1):
        w = project(matvec(v))
        lam_new = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0, v, it, True
        resid = float(np.linalg.norm(w - lam_new * v))
        scale = max(abs(lam_new), scale_floor, 1e-300)
        if abs(lam_new - lam) <= rtol * scale and resid <= np.sqrt(rtol) * scale:
            return lam_new, v, it, True
        lam = lam_new
        v = w / nw
    return lam, v, maxiter, False


def estimate_spectrum(model: LossModel, rtol: float = 1e-10, maxiter: int = 10_000,
                      rank_tol: float = 1e-8, seed: int = 0) -> Spectrum:
    """Largest and smallest nonzero eigenvalues of the quadratic Hessian.

    The smallest one comes from power iteration on (m_max I - H); directions
    whose eigenvalue of H falls below ``rank_tol * m_max`` (the null space of
    rank-deficient data) are deflated one at a time and skipped.
    """
    if model.kind != "quadratic":
        raise ModelError("spectrum estimation needs the constant quadratic Hessian")
    rng = np.random.default_rng(seed)
    D = model.D
    m_max, _, it1, ok1 = _power_iteration(model.hvp, D, rng, rtol=rtol, maxiter=maxiter)
    if m_max <= 0.0:
        raise ModelError("data has rank zero; Hessian vanishes")
    shifted = lambda v: m_max * v - model.hvp(v)
    basis = np.zeros((D, 0))
    iters, ok = it1, ok1
    while True:
        if basis.shape[1] >= D:
            raise ModelError("no eigenvalue above the rank threshold")
        lam, v, it, conv = _power_iteration(shifted, D, rng, deflate=basis, rtol=rtol,
                                            maxiter=maxiter, scale_floor=m_max)
        iters += it
        ok = ok and conv
        mu = m_max - lam
        if mu > rank_tol * m_max:
            break
        # null direction of H; polish against the basis and drop it
        v = v - basis @ (basis.T @ v)
        basis = np.column_stack([basis, v / np.linalg.norm(v)])
    return Spectrum(m_max=m_max, mu_min=min(mu, m_max), tolerance=rtol, iterations=iters, converged=ok)


def lipschitz_bound(model: LossModel) -> float:
    """Per-sample gradient norm bound G, capped by the clip norm when clipping is on."""
    C = model.clip_norm
    if model.kind == "logistic":
        G = model.data.max_norm
        return G if C is None else min(G, C)
    if C is None:
        raise ModelError("squared loss has no global Lipschitz bound without clipping")
    return C


def smoothness(model: LossModel) -> float:
    """Smoothness constant M: Hessian top eigenvalue (quadratic) or a quarter of the Gram one (logistic)."""
    if model.kind == "quadratic":
        return estimate_spectrum(model).m_max
    X = model.data.features
    return 0.25 * float(np.linalg.eigvalsh(X.T @ X / model.N)[-1])
