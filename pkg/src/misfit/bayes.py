"""Mean-field Gaussian variational inference over network weights (Bayes-by-Backprop)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


def softplus_inv(s):
    s = np.asarray(s, dtype=np.float64)
    return s + np.log(-np.expm1(-s))


@dataclass
class MeanFieldGaussian:
    """q(W) = N(mean, diag(softplus(raw_scale)^2))."""

    mean: np.ndarray
    raw_scale: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.raw_scale = np.asarray(self.raw_scale, dtype=np.float64)
        if self.mean.shape != self.raw_scale.shape:
            raise ValueError(f"mean {self.mean.shape} and raw_scale {self.raw_scale.shape} differ")

    @classmethod
    def around(cls, mean, scale: float = 0.05) -> "MeanFieldGaussian":
        mean = np.asarray(mean, dtype=np.float64)
        return cls(mean.copy(), np.full_like(mean, softplus_inv(scale)))

    @property
    def scale(self) -> np.ndarray:
        return np.logaddexp(0.0, self.raw_scale)

    @property
    def flat(self) -> np.ndarray:
        """Variational parameters psi = [mean, raw_scale]."""
        return np.concatenate([self.mean, self.raw_scale])

    @classmethod
    def from_flat(cls, psi) -> "MeanFieldGaussian":
        psi = np.asarray(psi, dtype=np.float64)
        half = len(psi) // 2
        return cls(psi[:half].copy(), psi[half:].copy())


@dataclass(frozen=True)
class WeightPrior:
    sigma: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"prior sigma must be positive, got {self.sigma}")


def reparameterize(mean, raw_scale, eps):
    """mean + softplus(raw_scale) * eps; differentiable in mean and raw_scale."""
    return mean + ad.softplus(raw_scale) * eps


def sample_weights(q: MeanFieldGaussian, seed_or_rng) -> np.ndarray:
    rng = seed_or_rng if isinstance(seed_or_rng, np.random.Generator) else np.random.default_rng(seed_or_rng)
    eps = rng.standard_normal(q.mean.shape)
    return reparameterize(q.mean, q.raw_scale, eps)


def kl_meanfield_to_prior(mean, raw_scale, prior: WeightPrior):
    """Closed-form KL(q || p) for a diagonal Gaussian q and isotropic Gaussian p.

    Accepts arrays or tape nodes for ``mean`` and ``raw_scale``.
    """
    sp = prior.sigma
    sq = ad.softplus(raw_scale)
    terms = np.log(sp) - ad.log(sq) + (ad.square(sq) + ad.square(mean)) / (2.0 * sp * sp) - 0.5
    return ad.sum(terms)


def kl(q: MeanFieldGaussian, prior: WeightPrior) -> float:
    return float(kl_meanfield_to_prior(q.mean, q.raw_scale, prior))


def elbo_loss(nll_fn, mean, raw_scale, prior: WeightPrior, eps: np.ndarray):
    """Negative ELBO: (1/K) sum_k NLL(D; w_k) + KL(q || p).

    ``nll_fn(w)`` returns the dataset NLL for one weight vector; ``eps`` has
    shape (K, n_params) and fixes the reparameterization noise, so the loss is
    a deterministic function of the variational parameters.
    """
    eps = np.atleast_2d(eps)
    if len(eps) < 1:
        raise ValueError("need at least one Monte Carlo sample")
    total = 0.0
    for k, e in enumerate(eps):
        nll = nll_fn(reparameterize(mean, raw_scale, e))
        if not np.isfinite(ad.value_of(nll)):
            raise FloatingPointError(f"non-finite NLL for weight draw {k}")
        total = total + nll
    return total / float(len(eps)) + kl_meanfield_to_prior(mean, raw_scale, prior)
