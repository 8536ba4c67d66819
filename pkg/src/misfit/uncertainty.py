"""Input-dependent uncertainty: predictive entropy and two disagreement measures.

For a model with weight draws ``w_1..w_K`` (a single draw for deterministic
models) at input ``x``:

* ``H``   differential entropy of the predictive ``(1/K) sum_k p(y | w_k, x)``,
* ``U_V`` mean over output coordinates of the unbiased variance of the head
  parameters ``theta(x; w_k)`` across draws,
* ``U_W`` mean over draws of the 1-Wasserstein distance between
  ``p(y | w_k, x)`` and the pooled predictive (1D outcomes only).

``U_V`` lives in the head's parameter space, so it is only comparable between
curves of the same model class; :class:`UncertaintyCurve` enforces this.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .datasets import TRAIN_INTERVAL
from .likelihoods import GaussHead1D, GaussHead2D
from .nn import MlpSpec, mlp_forward

N_W_SAMPLES = 2048
GRID_POINTS_1D = 4096
GRID_POINTS_2D = 512
GRID_HALF_WIDTH = 8.0
NORMALIZATION_TOL = 1e-2
DEFAULT_X_GRID = np.linspace(-6.0, 6.0, 241)
# substream tag for per-grid-point base samples
_CURVE_STREAM = 20


class ModelClassMismatch(ValueError):
    """Raised when curves of different model classes are combined."""


class UnsupportedDimension(NotImplementedError):
    pass


@dataclass
class PredictiveEnsemble:
    """Predictive distribution represented by a head and a list of weight draws."""

    spec: MlpSpec
    head: object
    draws: list
    provenance: str = "deterministic"
    model_class: str = ""

    def __post_init__(self):
        if len(self.draws) < 1:
            raise ValueError("an ensemble needs at least one weight draw")
        self.draws = [np.asarray(w, dtype=np.float64) for w in self.draws]
        if any(len(w) != self.spec.n_params for w in self.draws):
            raise ValueError(f"every draw must have {self.spec.n_params} parameters")
        if self.provenance not in ("deterministic", "variational"):
            raise ValueError(f"unknown provenance {self.provenance!r}")

    @classmethod
    def from_model(cls, model, n_draws: int | None = None, seed: int | None = None) -> "PredictiveEnsemble":
        provenance = "variational" if model.bayesian else "deterministic"
        draws = model.weight_draws(n_draws, seed)
        return cls(model.spec, model.head, draws, provenance, model.model_class)

    @property
    def out_dim(self) -> int:
        return self.head.out_dim

    def __len__(self):
        return len(self.draws)

    def thetas(self, x) -> np.ndarray:
        """Head parameters of every draw at every input: shape (K, n, n_outputs)."""
        x = np.asarray(x, dtype=np.float64).reshape(-1, self.spec.input_dim)
        return np.stack([mlp_forward(self.spec, w, x) for w in self.draws])

    def samples(self, theta_k: np.ndarray, eps: np.ndarray) -> np.ndarray:
        """Push the same base samples ``eps`` (n, d) through every draw: (K, n, d)."""
        n = len(eps)
        return np.stack([self.head.sample_from_base(np.broadcast_to(t, (n, len(t))), eps) for t in theta_k])


def _is_gaussian(head) -> bool:
    return isinstance(head, (GaussHead1D, GaussHead2D))


def predictive_logdensity(x, ensemble: PredictiveEnsemble, y_grid) -> np.ndarray:
    """Log of the draw-averaged density at scalar input ``x`` on ``y_grid`` (n,) or (n, d)."""
    y = np.asarray(y_grid, dtype=np.float64).reshape(-1, ensemble.out_dim)
    theta = ensemble.thetas(np.atleast_1d(x)[:1])[:, 0, :]
    per_draw = np.stack([np.asarray(ensemble.head.log_prob(np.broadcast_to(t, (len(y), len(t))), y)) for t in theta])
    return logsumexp(per_draw, axis=0) - np.log(len(theta))


def diff_entropy(density, spacing) -> float:
    """Differential entropy ``-integral p ln p`` of a gridded density by the trapezoid rule.

    ``density`` is 1D with scalar ``spacing`` or 2D with a pair of spacings.
    Points with ``p = 0`` contribute nothing.
    """
    p = np.asarray(density, dtype=np.float64)
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError("density must be finite and non-negative")
    spacings = np.atleast_1d(np.asarray(spacing, dtype=np.float64))
    if len(spacings) != p.ndim:
        raise ValueError(f"need {p.ndim} spacings, got {len(spacings)}")
    plogp = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    mass, ent = p, -plogp
    for axis, dx in reversed(list(enumerate(spacings))):
        mass = np.trapezoid(mass, dx=dx, axis=axis)
        ent = np.trapezoid(ent, dx=dx, axis=axis)
    if abs(float(mass) - 1.0) > NORMALIZATION_TOL:
        raise ValueError(f"density integrates to {float(mass):.6g}, not 1; widen or refine the grid")
    return float(ent)


def gaussian_entropy(var) -> float:
    """Closed form ``0.5 ln(2 pi e var)`` (scalar) or ``1 + ln 2pi + 0.5 ln det`` (2x2)."""
    var = np.asarray(var, dtype=np.float64)
    if var.ndim == 0 or var.size == 1:
        return float(0.5 * np.log(2.0 * np.pi * np.e * var.reshape(())))
    d = var.shape[-1]
    return float(0.5 * d * (1.0 + np.log(2.0 * np.pi)) + 0.5 * np.linalg.slogdet(var)[1])


def u_variance(theta_draws) -> float:
    """Mean over coordinates of the unbiased across-draw variance; 0 for one draw."""
    t = np.asarray(theta_draws, dtype=np.float64)
    if t.ndim == 1:
        t = t[:, None]
    if len(t) < 1:
        raise ValueError("need at least one draw")
    if len(t) == 1:
        return 0.0
    return float(np.mean(np.var(t, axis=0, ddof=1)))


def wasserstein1_sorted(a, b) -> float:
    """W1 between two equal-size 1D samples via the order-statistics coupling."""
    a, b = np.sort(np.ravel(a)), np.sort(np.ravel(b))
    if len(a) != len(b):
        raise ValueError("samples must have equal size")
    return float(np.mean(np.abs(a - b)))


def _pooled(per_draw: np.ndarray) -> np.ndarray:
    # sample i of the pooled predictive comes from draw i mod K with the same base noise
    k, n = per_draw.shape[:2]
    return per_draw[np.arange(n) % k, np.arange(n)]


def _u_w_from_samples(per_draw: np.ndarray) -> float:
    if len(per_draw) == 1:
        return 0.0
    pooled = _pooled(per_draw)
    return float(np.mean([wasserstein1_sorted(s, pooled) for s in per_draw]))


def u_wasserstein(x, ensemble: PredictiveEnsemble, n_samples: int = N_W_SAMPLES, seed: int = 0) -> float:
    """Mean over draws of W1 between each draw's predictive and the pooled predictive."""
    if ensemble.out_dim != 1:
        raise UnsupportedDimension("U_W is only defined for 1D outcomes")
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    if len(ensemble) == 1:
        return 0.0
    eps = np.random.default_rng(seed).standard_normal((n_samples, 1))
    theta = ensemble.thetas(np.atleast_1d(x)[:1])[:, 0, :]
    return _u_w_from_samples(ensemble.samples(theta, eps)[..., 0])


def _entropy_at(ensemble, theta_k, samples):
    """Predictive entropy at one input from head parameters (K, p) and pooled samples."""
    head = ensemble.head
    if len(theta_k) == 1 and _is_gaussian(head):
        return gaussian_entropy(head.cov(theta_k)[0])
    sd = samples.std(axis=0)
    lo = samples.min(axis=0) - GRID_HALF_WIDTH * sd
    hi = samples.max(axis=0) + GRID_HALF_WIDTH * sd
    if ensemble.out_dim == 1:
        y = np.linspace(lo[0], hi[0], GRID_POINTS_1D)
        grid, spacing = y[:, None], y[1] - y[0]
        shape = (GRID_POINTS_1D,)
    else:
        axes = [np.linspace(lo[i], hi[i], GRID_POINTS_2D) for i in range(2)]
        mesh = np.meshgrid(*axes, indexing="ij")
        grid = np.stack([m.ravel() for m in mesh], axis=-1)
        spacing = [a[1] - a[0] for a in axes]
        shape = (GRID_POINTS_2D, GRID_POINTS_2D)
    logp = [np.asarray(head.log_prob(np.broadcast_to(t, (len(grid), len(t))), grid)) for t in theta_k]
    dens = np.exp(logsumexp(np.stack(logp), axis=0) - np.log(len(theta_k)))
    return diff_entropy(dens.reshape(shape), spacing)


@dataclass
class UncertaintyCurve:
    x: np.ndarray
    H: np.ndarray
    U_V: np.ndarray
    U_W: np.ndarray
    in_dist: np.ndarray
    model_class: str = ""

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if len(self.x) > 1 and np.any(np.diff(self.x) <= 0):
            raise ValueError("x grid must be strictly increasing")

    def region_means(self, measure: str) -> tuple[float, float]:
        """Mean of ``measure`` over in-distribution and out-of-distribution grid points."""
        v = np.asarray(getattr(self, measure))
        mask = np.asarray(self.in_dist, dtype=bool)
        inside = float(v[mask].mean()) if mask.any() else float("nan")
        outside = float(v[~mask].mean()) if (~mask).any() else float("nan")
        return inside, outside

    def check_comparable(self, other: "UncertaintyCurve"):
        if self.model_class != other.model_class:
            raise ModelClassMismatch(
                f"cannot compare {self.model_class!r} with {other.model_class!r}: parameter spaces differ"
            )

    def difference(self, other: "UncertaintyCurve", measure: str) -> np.ndarray:
        self.check_comparable(other)
        if not np.array_equal(self.x, other.x):
            raise ValueError("curves use different x grids")
        return np.asarray(getattr(self, measure)) - np.asarray(getattr(other, measure))

    def to_csv(self, path=None) -> str:
        buf = io.StringIO(newline="")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["x", "H", "U_V", "U_W", "in_dist"])
        for row in zip(self.x, self.H, self.U_V, self.U_W, self.in_dist):
            writer.writerow([_fmt(v) for v in row[:4]] + [int(bool(row[4]))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="", encoding="utf-8") as fh:
                fh.write(text)
        return text


def _fmt(v) -> str:
    v = float(v)
    return "NA" if np.isnan(v) else repr(v)


def mean_curve(curves: list[UncertaintyCurve], measure: str) -> np.ndarray:
    """Average ``measure`` across curves (e.g. seeds) of a single model class."""
    if not curves:
        raise ValueError("no curves given")
    for c in curves[1:]:
        curves[0].check_comparable(c)
    return np.mean([np.asarray(getattr(c, measure)) for c in curves], axis=0)


def in_distribution(x, interval=TRAIN_INTERVAL) -> np.ndarray:
    lo, hi = interval
    x = np.asarray(x)
    return (x >= lo) & (x <= hi)


def uncertainty_curve(source, x_grid=None, n_samples: int = N_W_SAMPLES, seed: int = 0, n_draws: int | None = None):
    """Evaluate H, U_V and U_W along ``x_grid`` for a trained model or an ensemble.

    U_W is NaN for 2D outcomes.  Each grid point draws its base samples from
    its own substream of ``seed``, so results do not depend on evaluation order.
    """
    ens = source if isinstance(source, PredictiveEnsemble) else PredictiveEnsemble.from_model(source, n_draws, seed)
    x = DEFAULT_X_GRID if x_grid is None else np.asarray(x_grid, dtype=np.float64).reshape(-1)
    if len(x) == 0:
        raise ValueError("x grid is empty")
    thetas = ens.thetas(x)  # (K, G, p)
    d = ens.out_dim
    H, UV, UW = (np.empty(len(x)) for _ in range(3))
    for i in range(len(x)):
        ss = np.random.SeedSequence(seed, spawn_key=(_CURVE_STREAM, i))
        eps = np.random.Generator(np.random.Philox(ss)).standard_normal((n_samples, d))
        per_draw = ens.samples(thetas[:, i, :], eps)  # (K, n, d)
        H[i] = _entropy_at(ens, thetas[:, i, :], _pooled(per_draw))
        UV[i] = u_variance(thetas[:, i, :])
        UW[i] = _u_w_from_samples(per_draw[..., 0]) if d == 1 else np.nan
    return UncertaintyCurve(x, H, UV, UW, in_distribution(x), ens.model_class)
