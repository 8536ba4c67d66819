"""Conditional normalizing flows built from monotonic rational-quadratic splines.

The spline maps ``[-B, B]`` onto itself through ``K`` bins and is the identity
outside; the two boundary knot derivatives are pinned to 1 so the linear tails
join smoothly.  Raw parameters per spline are ``K`` widths, ``K`` heights and
``K - 1`` interior derivatives, i.e. ``3K - 1`` numbers.

Densities are evaluated through the inverse direction (target -> base) and
samples through the forward direction (base -> target).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .likelihoods import LOG_2PI

MIN_BIN = 1e-3
MIN_DERIV = 1e-3
# raw interior derivative that yields exactly 1 after softplus + MIN_DERIV
IDENTITY_DERIV_RAW = float(np.log(np.expm1(1.0 - MIN_DERIV)))


def n_spline_params(bins: int) -> int:
    return 3 * bins - 1


def identity_raw(bins: int) -> np.ndarray:
    """Raw parameters of the identity spline."""
    return np.concatenate([np.zeros(2 * bins), np.full(bins - 1, IDENTITY_DERIV_RAW)])


@dataclass(frozen=True)
class RQSplineParams:
    """Unnormalized parameters of one spline.

    ``raw_derivatives`` holds the ``K - 1`` interior knots; a length ``K + 1``
    array is also accepted and its two boundary entries are ignored.
    """

    raw_widths: np.ndarray
    raw_heights: np.ndarray
    raw_derivatives: np.ndarray
    bound: float = 3.0

    @property
    def bins(self) -> int:
        return len(self.raw_widths)

    def interior_derivatives(self) -> np.ndarray:
        d = np.asarray(self.raw_derivatives, dtype=np.float64)
        if len(d) == self.bins + 1:
            d = d[1:-1]
        if len(d) != self.bins - 1:
            raise ValueError(f"expected {self.bins - 1} interior derivatives, got {len(d)}")
        return d

    @classmethod
    def from_vector(cls, raw, bound: float = 3.0) -> "RQSplineParams":
        raw = np.asarray(raw, dtype=np.float64)
        k = (len(raw) + 1) // 3
        return cls(raw[:k], raw[k : 2 * k], raw[2 * k :], bound)

    @classmethod
    def identity(cls, bins: int = 8, bound: float = 3.0) -> "RQSplineParams":
        return cls.from_vector(identity_raw(bins), bound)


def _knots(raw, bins, bound):
    """Bin sizes and knot positions from raw logits of shape (n, K)."""
    frac = MIN_BIN + (1.0 - MIN_BIN * bins) * ad.softmax(raw, axis=-1)
    c = ad.cumsum(frac, axis=-1)
    n = np.shape(ad.value_of(raw))[0]
    edge = np.full((n, 1), bound)
    knots = ad.concat([-edge, 2.0 * bound * c[:, :-1] - bound, edge], axis=-1)
    sizes = knots[:, 1:] - knots[:, :-1]
    return sizes, knots


def rq_spline(inputs, raw, bound: float, inverse: bool = False):
    """Vectorized rational-quadratic spline.

    ``inputs`` has shape (n,), ``raw`` shape (n, 3K - 1).  Returns the
    transformed values and ``log |d out / d in|``.  Either argument may be a
    tape node.
    """
    rv = ad.value_of(raw)
    n, p = rv.shape
    bins = (p + 1) // 3
    widths, xk = _knots(raw[:, :bins], bins, bound)
    heights, yk = _knots(raw[:, bins : 2 * bins], bins, bound)
    ones = np.ones((n, 1))
    derivs = ad.concat([ones, MIN_DERIV + ad.softplus(raw[:, 2 * bins :]), ones], axis=-1)

    xv = np.asarray(ad.value_of(inputs), dtype=np.float64)
    inside = (xv >= -bound) & (xv <= bound)
    # out-of-range entries take a harmless in-range value; `where` discards them
    safe = ad.where(inside, inputs, 0.0)
    search = ad.value_of(yk if inverse else xk)
    idx = np.sum(np.where(inside, xv, 0.0)[:, None] >= search[:, 1:-1], axis=1)[:, None]

    def pick(a, offset=0):
        return ad.take_along_axis(a, idx + offset, axis=1)[:, 0]

    x0, w, y0, h = pick(xk), pick(widths), pick(yk), pick(heights)
    d0, d1 = pick(derivs), pick(derivs, 1)
    delta = h / w
    curv = d0 + d1 - 2.0 * delta

    if inverse:
        dy = safe - y0
        a = dy * curv + h * (delta - d0)
        b = h * d0 - dy * curv
        c = -delta * dy
        disc = ad.square(b) - 4.0 * a * c
        disc = ad.where(ad.value_of(disc) > 0.0, disc, 1e-300)
        t = 2.0 * c / (-b - ad.sqrt(disc))
        out = t * w + x0
    else:
        t = (safe - x0) / w
        tt = t * (1.0 - t)
        out = y0 + h * (delta * ad.square(t) + d0 * tt) / (delta + curv * tt)
    tt = t * (1.0 - t)
    den = delta + curv * tt
    slope_num = ad.square(delta) * (d1 * ad.square(t) + 2.0 * delta * tt + d0 * ad.square(1.0 - t))
    logdet = ad.log(slope_num) - 2.0 * ad.log(den)
    if inverse:
        logdet = -logdet
    return ad.where(inside, out, inputs), ad.where(inside, logdet, 0.0)


def spline_fwd(z, p: RQSplineParams):
    """Forward map of scalar or 1D-array ``z``; returns ``(y, log_deriv)``."""
    return _scalar_api(z, p, inverse=False)


def spline_inv(y, p: RQSplineParams):
    """Inverse map; returns ``(z, log_deriv_inv)`` with ``log_deriv_inv = -log_deriv``."""
    return _scalar_api(y, p, inverse=True)


def _scalar_api(v, p, inverse):
    arr = np.atleast_1d(np.asarray(v, dtype=np.float64))
    raw = np.concatenate([p.raw_widths, p.raw_heights, p.interior_derivatives()])
    out, ld = rq_spline(arr, np.broadcast_to(raw, (len(arr), len(raw))), p.bound, inverse)
    if np.ndim(v) == 0:
        return float(out[0]), float(ld[0])
    return out, ld


def _std_normal_logpdf(z):
    return -0.5 * ad.square(z) - 0.5 * LOG_2PI


class FlowHead1D:
    """Conditional spline flow for scalar outcomes.

    The base network emits the ``3K - 1`` raw spline parameters.  Targets are
    standardized with a fixed affine map fit on the training targets, and its
    log-scale is part of the density.
    """

    kind = "fl"
    out_dim = 1

    def __init__(self, bins: int = 8, bound: float = 3.0, shift=0.0, scale=1.0):
        self.bins = int(bins)
        self.bound = float(bound)
        self.shift = float(np.ravel(shift)[0])
        self.scale = float(np.ravel(scale)[0])

    @property
    def n_outputs(self) -> int:
        return n_spline_params(self.bins)

    def fit_normalizer(self, y):
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        self.shift = float(y.mean())
        self.scale = float(y.std()) if len(y) > 1 and y.std() > 0 else 1.0
        return self

    def log_prob(self, theta, y):
        u = (np.asarray(y, dtype=np.float64)[..., 0] - self.shift) / self.scale
        z, ld = rq_spline(u, theta, self.bound, inverse=True)
        return _std_normal_logpdf(z) + ld - np.log(self.scale)

    def nll(self, theta, y):
        return -self.log_prob(theta, y)

    def sample_from_base(self, theta, eps):
        u, _ = rq_spline(np.asarray(eps, dtype=np.float64)[..., 0], theta, self.bound)
        return (u * self.scale + self.shift)[:, None]

    def to_dict(self) -> dict:
        return {"type": "flow1d", "bins": self.bins, "bound": self.bound, "shift": self.shift, "scale": self.scale}


class CouplingFlowHead2D:
    """Coupling flow for 2D outcomes whose conditioner weights come from the base network.

    Layer ``l`` transforms coordinate ``l % 2`` with a spline whose raw
    parameters are produced by a small conditioner network
    ``1 -> hidden -> 3K - 1`` (tanh) applied to the other coordinate.  The
    conditioner's weights, one set per layer, are the base network's output,
    so the base network acts as a hypernetwork of the flow.
    """

    kind = "fl"
    out_dim = 2

    def __init__(self, bins: int = 8, bound: float = 3.0, layers: int = 4, hidden: int = 16, shift=(0.0, 0.0), scale=(1.0, 1.0)):
        self.bins = int(bins)
        self.bound = float(bound)
        self.layers = int(layers)
        self.hidden = int(hidden)
        self.shift = np.asarray(shift, dtype=np.float64).reshape(2)
        self.scale = np.asarray(scale, dtype=np.float64).reshape(2)

    @property
    def per_layer(self) -> int:
        h, p = self.hidden, n_spline_params(self.bins)
        return 2 * h + h * p + p

    @property
    def n_outputs(self) -> int:
        return self.layers * self.per_layer

    def fit_normalizer(self, y):
        y = np.asarray(y, dtype=np.float64).reshape(-1, 2)
        self.shift = y.mean(axis=0)
        sd = y.std(axis=0) if len(y) > 1 else np.ones(2)
        self.scale = np.where(sd > 0, sd, 1.0)
        return self

    def _conditioner(self, theta, layer, other):
        h, p = self.hidden, n_spline_params(self.bins)
        off = layer * self.per_layer
        w1 = theta[:, off : off + h]
        b1 = theta[:, off + h : off + 2 * h]
        w2 = ad.reshape(theta[:, off + 2 * h : off + 2 * h + h * p], (-1, h, p))
        b2 = theta[:, off + 2 * h + h * p : off + self.per_layer]
        hid = ad.tanh(w1 * ad.reshape(other, (-1, 1)) + b1)
        return ad.einsum("nh,nhp->np", hid, w2) + b2

    def inverse_layers(self, theta, y):
        """Map targets to base space; returns ``(u0, u1, [per-layer log-dets])``."""
        y = np.asarray(y, dtype=np.float64)
        u = [(y[:, 0] - self.shift[0]) / self.scale[0], (y[:, 1] - self.shift[1]) / self.scale[1]]
        logdets = []
        for layer in reversed(range(self.layers)):
            c = layer % 2
            raw = self._conditioner(theta, layer, u[1 - c])
            u[c], ld = rq_spline(u[c], raw, self.bound, inverse=True)
            logdets.append(ld)
        return u[0], u[1], logdets[::-1]

    def log_prob(self, theta, y):
        u0, u1, logdets = self.inverse_layers(theta, y)
        total = _std_normal_logpdf(u0) + _std_normal_logpdf(u1) - float(np.log(self.scale).sum())
        for ld in logdets:
            total = total + ld
        return total

    def nll(self, theta, y):
        return -self.log_prob(theta, y)

    def forward_layers(self, theta, eps):
        eps = np.asarray(eps, dtype=np.float64)
        u = [eps[:, 0], eps[:, 1]]
        logdets = []
        for layer in range(self.layers):
            c = layer % 2
            raw = self._conditioner(theta, layer, u[1 - c])
            u[c], ld = rq_spline(u[c], raw, self.bound)
            logdets.append(ld)
        return u[0], u[1], logdets

    def sample_from_base(self, theta, eps):
        u0, u1, _ = self.forward_layers(theta, eps)
        return np.stack([u0 * self.scale[0] + self.shift[0], u1 * self.scale[1] + self.shift[1]], axis=-1)

    def to_dict(self) -> dict:
        return {
            "type": "flow2d",
            "bins": self.bins,
            "bound": self.bound,
            "layers": self.layers,
            "hidden": self.hidden,
            "shift": self.shift.tolist(),
            "scale": self.scale.tolist(),
        }
