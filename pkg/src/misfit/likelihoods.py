"""Gaussian likelihood heads (GLc and GL) for 1D and 2D outcomes.

All negative log-likelihoods keep their normalization constants so values can
be compared across heads, including the flow heads.

A head turns the network output ``theta`` (shape ``(n, n_outputs)``) into a
conditional density.  Heads share a small duck-typed surface used by the
trainers and the uncertainty code: ``nll``, ``log_prob``, ``mean``,
``sample_from_base`` and ``to_dict``.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad

LOG_2PI = float(np.log(2.0 * np.pi))


def nll_glc_1d(mu, y, sigma):
    """Per-sample NLL of N(y; mu, sigma^2) with fixed sigma."""
    if not np.all(np.asarray(sigma) > 0):
        raise ValueError(f"sigma must be positive, got {sigma}")
    return ad.square(y - mu) / (2.0 * sigma**2) + np.log(sigma) + 0.5 * LOG_2PI


def nll_gl_1d(theta, y):
    """Per-sample NLL with ``theta[..., 0] = mu`` and ``theta[..., 1] = log sigma``."""
    mu, log_sigma = theta[..., 0], theta[..., 1]
    return 0.5 * ad.square(y - mu) * ad.exp(-2.0 * log_sigma) + log_sigma + 0.5 * LOG_2PI


def cov_from_params(log_s1, log_s2, rho_raw):
    """Assemble a 2x2 covariance from log standard deviations and raw correlation.

    Returns ``(cov, logdet, inv)`` as plain arrays; the log-determinant is
    evaluated in the factored form ``log s1^2 + log s2^2 + log(1 - rho^2)``.
    """
    s1, s2, rho = np.exp(log_s1), np.exp(log_s2), np.tanh(rho_raw)
    off = rho * s1 * s2
    cov = np.array([[s1 * s1, off], [off, s2 * s2]])
    one_m = 1.0 - rho * rho
    logdet = 2.0 * log_s1 + 2.0 * log_s2 + np.log(one_m)
    inv = np.array([[1.0 / (s1 * s1), -rho / (s1 * s2)], [-rho / (s1 * s2), 1.0 / (s2 * s2)]]) / one_m
    return cov, logdet, inv


def nll_glc_2d(mu, y, sigma):
    """Per-sample NLL of N(y; mu, sigma^2 I) in two dimensions."""
    if not np.all(np.asarray(sigma) > 0):
        raise ValueError(f"sigma must be positive, got {sigma}")
    sq = ad.sum(ad.square(y - mu), axis=-1)
    return sq / (2.0 * sigma**2) + 2.0 * np.log(sigma) + LOG_2PI


def nll_gl_2d(theta, y):
    """Per-sample NLL with ``theta = [mu1, mu2, log s1, log s2, rho_raw]``."""
    d1 = y[..., 0] - theta[..., 0]
    d2 = y[..., 1] - theta[..., 1]
    log_s1, log_s2 = theta[..., 2], theta[..., 3]
    rho = ad.tanh(theta[..., 4])
    one_m = 1.0 - ad.square(rho)
    z1 = d1 * ad.exp(-log_s1)
    z2 = d2 * ad.exp(-log_s2)
    quad = (ad.square(z1) - 2.0 * rho * z1 * z2 + ad.square(z2)) / one_m
    half_logdet = log_s1 + log_s2 + 0.5 * ad.log(one_m)
    return half_logdet + 0.5 * quad + LOG_2PI


def batch_loss(head, theta, y, n_total: int):
    """Minibatch NLL rescaled to the full dataset size: (N / |B|) * sum of per-sample NLLs."""
    n_batch = np.shape(ad.value_of(theta))[0]
    if n_batch == 0:
        raise ValueError("empty batch")
    return ad.sum(head.nll(theta, y)) * (float(n_total) / n_batch)


class GaussHead1D:
    """Gaussian head for scalar outcomes.

    ``sigma=None`` selects the learned-variance head (GL) with outputs
    ``[mu, log sigma]``; a positive ``sigma`` selects GLc with output ``[mu]``.
    """

    out_dim = 1

    def __init__(self, sigma: float | None = None):
        if sigma is not None and not sigma > 0:
            raise ValueError(f"sigma must be positive, got {sigma}")
        self.sigma = None if sigma is None else float(sigma)

    @property
    def kind(self) -> str:
        return "gl" if self.sigma is None else "glc"

    @property
    def n_outputs(self) -> int:
        return 2 if self.sigma is None else 1

    def nll(self, theta, y):
        y = y[..., 0]
        if self.sigma is None:
            return nll_gl_1d(theta, y)
        return nll_glc_1d(theta[..., 0], y, self.sigma)

    def log_prob(self, theta, y):
        return -self.nll(theta, y)

    def mean(self, theta):
        return np.asarray(theta)[..., :1]

    def std(self, theta):
        theta = np.asarray(theta)
        if self.sigma is None:
            return np.exp(theta[..., 1])
        return np.full(theta.shape[:-1], self.sigma)

    def cov(self, theta):
        return self.std(theta)[..., None, None] ** 2

    def entropy(self, theta):
        return 0.5 * np.log(2.0 * np.pi * np.e * self.std(theta) ** 2)

    def sample_from_base(self, theta, eps):
        """Map standard-normal ``eps`` (n, 1) through N(mu, sigma^2)."""
        return self.mean(theta) + self.std(theta)[..., None] * eps

    def to_dict(self) -> dict:
        return {"type": "gauss1d", "sigma": self.sigma}


class GaussHead2D:
    """Gaussian head for 2D outcomes.

    GLc (``sigma`` given) outputs ``[mu1, mu2]`` with covariance sigma^2 I;
    GL outputs ``[mu1, mu2, log s1, log s2, rho_raw]`` with ``rho = tanh(rho_raw)``.
    """

    out_dim = 2

    def __init__(self, sigma: float | None = None):
        if sigma is not None and not sigma > 0:
            raise ValueError(f"sigma must be positive, got {sigma}")
        self.sigma = None if sigma is None else float(sigma)

    @property
    def kind(self) -> str:
        return "gl" if self.sigma is None else "glc"

    @property
    def n_outputs(self) -> int:
        return 5 if self.sigma is None else 2

    def nll(self, theta, y):
        if self.sigma is None:
            return nll_gl_2d(theta, y)
        return nll_glc_2d(theta[..., :2], y, self.sigma)

    def log_prob(self, theta, y):
        return -self.nll(theta, y)

    def mean(self, theta):
        return np.asarray(theta)[..., :2]

    def cov(self, theta):
        theta = np.asarray(theta)
        n = theta.shape[:-1]
        if self.sigma is not None:
            return np.broadcast_to(self.sigma**2 * np.eye(2), (*n, 2, 2)).copy()
        s1, s2, rho = np.exp(theta[..., 2]), np.exp(theta[..., 3]), np.tanh(theta[..., 4])
        out = np.empty((*n, 2, 2))
        out[..., 0, 0] = s1 * s1
        out[..., 1, 1] = s2 * s2
        out[..., 0, 1] = out[..., 1, 0] = rho * s1 * s2
        return out

    def entropy(self, theta):
        _, logdet = np.linalg.slogdet(self.cov(theta))
        return 1.0 + LOG_2PI + 0.5 * logdet

    def sample_from_base(self, theta, eps):
        chol = np.linalg.cholesky(self.cov(theta))
        return self.mean(theta) + np.einsum("...ij,...j->...i", chol, eps)

    def to_dict(self) -> dict:
        return {"type": "gauss2d", "sigma": self.sigma}
