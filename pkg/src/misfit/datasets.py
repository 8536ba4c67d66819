"""Synthetic regression problems with closed-form ground truth.

Randomness comes from numpy's counter-based Philox generator.  A dataset seed
is expanded with :class:`numpy.random.SeedSequence`; stream 0 draws the inputs,
stream 1 the mixture-mode choices and stream 2 the Gaussian noise, so changing
one part of a generator never shifts the others.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

TRAIN_INTERVAL = (-4.0, 4.0)
NOISE_VAR = 9.0
MODE_SHIFT_1D = 50.0
MODE_SHIFT_2D = 15.0
MODE_COV_2D = np.diag([300.0, 20.0])
ANGLE_2D = np.pi / 4

DATASET_NAMES = ("unimodal1d", "bimodal1d", "bimodal2d")

_LOG_2PI = np.log(2.0 * np.pi)


def rng_stream(seed: int, stream: int) -> np.random.Generator:
    """Independent Philox substream ``stream`` of ``seed``."""
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=(int(stream),))
    return np.random.Generator(np.random.Philox(ss))


def _rotation() -> np.ndarray:
    # clockwise sense: the total covariance comes out with a negative off-diagonal
    c, s = np.cos(ANGLE_2D), np.sin(ANGLE_2D)
    return np.array([[c, s], [-s, c]])


@dataclass(frozen=True)
class GroundTruth:
    """Closed-form conditional p(y | x) of one generator."""

    name: str

    @property
    def out_dim(self) -> int:
        return 2 if self.name == "bimodal2d" else 1

    @property
    def mixture_variance(self) -> float:
        if self.name != "bimodal1d":
            raise AttributeError("mixture_variance is only defined for bimodal1d")
        return NOISE_VAR + 0.25 * (2 * MODE_SHIFT_1D) ** 2

    def components(self, x):
        """Mixture weights, component means ``(n, k, d)`` and covariances ``(k, d, d)``."""
        x = np.atleast_1d(np.asarray(x, dtype=np.float64)).reshape(-1)
        c = x**3
        if self.name == "unimodal1d":
            return np.array([1.0]), c[:, None, None], np.array([[[NOISE_VAR]]])
        if self.name == "bimodal1d":
            means = np.stack([c - MODE_SHIFT_1D, c + MODE_SHIFT_1D], axis=1)[:, :, None]
            return np.array([0.5, 0.5]), means, np.full((2, 1, 1), NOISE_VAR)
        r = _rotation()
        offset = r @ np.array([0.0, MODE_SHIFT_2D])
        centre = np.stack([c, c], axis=1)
        means = np.stack([centre - offset, centre + offset], axis=1)
        cov = r @ MODE_COV_2D @ r.T
        return np.array([0.5, 0.5]), means, np.stack([cov, cov])

    def log_pdf(self, x, y):
        """Log-density at paired ``x`` (n,) and ``y`` (n,) or (n, d)."""
        x = np.atleast_1d(np.asarray(x, dtype=np.float64)).reshape(-1)
        y = np.asarray(y, dtype=np.float64).reshape(len(x), self.out_dim)
        weights, means, covs = self.components(x)
        terms = []
        for k, w in enumerate(weights):
            d = y - means[:, k, :]
            prec = np.linalg.inv(covs[k])
            _, logdet = np.linalg.slogdet(covs[k])
            quad = np.einsum("ni,ij,nj->n", d, prec, d)
            terms.append(np.log(w) - 0.5 * (self.out_dim * _LOG_2PI + logdet + quad))
        return logsumexp(np.stack(terms, axis=1), axis=1)

    def mean(self, x):
        weights, means, _ = self.components(x)
        out = np.einsum("k,nkd->nd", weights, means)
        return out[0] if np.ndim(x) == 0 else out

    def cov(self, x):
        weights, means, covs = self.components(x)
        mu = np.einsum("k,nkd->nd", weights, means)
        d = means - mu[:, None, :]
        out = np.einsum("k,kij->ij", weights, covs)[None] + np.einsum("k,nki,nkj->nij", weights, d, d)
        return out[0] if np.ndim(x) == 0 else out

    def sample(self, x, mode_rng: np.random.Generator, noise_rng: np.random.Generator):
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        weights, means, covs = self.components(x)
        n = len(x)
        k = mode_rng.choice(len(weights), size=n, p=weights) if len(weights) > 1 else np.zeros(n, int)
        chol = np.linalg.cholesky(covs)
        eps = noise_rng.standard_normal((n, self.out_dim))
        return means[np.arange(n), k] + np.einsum("nij,nj->ni", chol[k], eps)


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray  # (n, d_in)
    y: np.ndarray  # (n, d_out)
    name: str
    seed: int

    def __len__(self):
        return len(self.x)

    @property
    def ground_truth(self) -> GroundTruth:
        return GroundTruth(self.name)

    def to_csv(self, path=None) -> str:
        """Serialize; returns the text and writes it to ``path`` if given."""
        buf = io.StringIO(newline="")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([f"x{i}" for i in range(self.x.shape[1])] + [f"y{i}" for i in range(self.y.shape[1])])
        for xi, yi in zip(self.x, self.y):
            writer.writerow([repr(float(v)) for v in (*xi, *yi)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="", encoding="utf-8") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path, name: str, seed: int = -1) -> "Dataset":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], np.array(rows[1:], dtype=np.float64).reshape(-1, len(rows[0]))
        n_x = sum(h.startswith("x") for h in header)
        return cls(x=body[:, :n_x], y=body[:, n_x:], name=name, seed=seed)


def stratified_uniform(n: int, interval, rng: np.random.Generator) -> np.ndarray:
    """One uniform draw in each of ``n`` equal-width strata of ``interval``.

    Each point is marginally uniform on the interval, but the sample cannot
    leave large stretches (notably the interval ends) empty.
    """
    lo, hi = interval
    width = (hi - lo) / n
    return lo + width * (np.arange(n) + rng.uniform(size=n))


def _generate(name: str, n: int, seed: int, interval=TRAIN_INTERVAL, x=None) -> Dataset:
    if name not in DATASET_NAMES:
        raise ValueError(f"unknown dataset {name!r}; valid names: {', '.join(DATASET_NAMES)}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if x is None:
        x = stratified_uniform(n, interval, rng_stream(seed, 0))
    gt = GroundTruth(name)
    y = gt.sample(x, rng_stream(seed, 1), rng_stream(seed, 2))
    return Dataset(x=np.asarray(x, dtype=np.float64).reshape(-1, 1), y=y, name=name, seed=seed)


def gen_unimodal_1d(n: int, seed: int, interval=TRAIN_INTERVAL) -> Dataset:
    """y = x^3 + N(0, 9), x uniform on ``interval``."""
    return _generate("unimodal1d", n, seed, interval)


def gen_bimodal_1d(n: int, seed: int, interval=TRAIN_INTERVAL) -> Dataset:
    """Equal mixture of N(x^3 - 50, 9) and N(x^3 + 50, 9)."""
    return _generate("bimodal1d", n, seed, interval)


def gen_bimodal_2d(n: int, seed: int, interval=TRAIN_INTERVAL) -> Dataset:
    """Two modes at (x^3, x^3 -+ 15) with covariance diag(300, 20), rotated about (x^3, x^3)."""
    return _generate("bimodal2d", n, seed, interval)


GENERATORS = {
    "unimodal1d": gen_unimodal_1d,
    "bimodal1d": gen_bimodal_1d,
    "bimodal2d": gen_bimodal_2d,
}


def generate(name: str, n: int, seed: int) -> Dataset:
    return _generate(name, n, seed)


def make_test_set(name: str, n: int, seed: int, interval=TRAIN_INTERVAL) -> Dataset:
    """Equidistant inputs on ``interval`` with targets drawn from the ground truth."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return _generate(name, n, seed, interval, x=np.linspace(*interval, n))
