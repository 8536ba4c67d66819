"""Fully connected networks over a flat parameter vector, and Adam."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True)
class MlpSpec:
    """Architecture of a feed-forward network.

    The flat parameter layout is layer-major; within a layer the
    ``fan_in x fan_out`` weight matrix (row-major) precedes the bias.
    """

    input_dim: int
    hidden_layers: tuple[int, ...]
    output_dim: int
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))
        dims = self.dims
        if any(d < 1 for d in dims):
            raise ValueError(f"all layer sizes must be >= 1, got {dims}")
        if self.activation not in ("relu", "tanh"):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def dims(self) -> tuple[int, ...]:
        return (int(self.input_dim), *self.hidden_layers, int(self.output_dim))

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        d = self.dims
        return list(zip(d[:-1], d[1:]))

    @property
    def n_params(self) -> int:
        return sum((fan_in + 1) * fan_out for fan_in, fan_out in self.layer_shapes)

    def slices(self):
        """Yield ``(weight_slice, bias_slice, (fan_in, fan_out))`` per layer."""
        offset = 0
        for fan_in, fan_out in self.layer_shapes:
            w = slice(offset, offset + fan_in * fan_out)
            offset += fan_in * fan_out
            b = slice(offset, offset + fan_out)
            offset += fan_out
            yield w, b, (fan_in, fan_out)


def init_params(spec: MlpSpec, rng: np.random.Generator) -> np.ndarray:
    """Glorot-uniform weights, zero biases."""
    w = np.zeros(spec.n_params)
    for ws, _, (fan_in, fan_out) in spec.slices():
        a = np.sqrt(6.0 / (fan_in + fan_out))
        w[ws] = rng.uniform(-a, a, size=fan_in * fan_out)
    return w


def mlp_forward(spec: MlpSpec, w, x):
    """Evaluate the network.

    ``x`` is either one input vector of length ``input_dim`` or a batch of
    shape ``(n, input_dim)``.  ``w`` may be a plain array or a tape node; in
    the latter case the result is differentiable with respect to it.
    """
    x = np.asarray(x, dtype=np.float64)
    if np.shape(ad.value_of(w)) != (spec.n_params,):
        raise ValueError(
            f"parameter vector has length {np.size(ad.value_of(w))}, spec needs {spec.n_params}"
        )
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.shape[-1] != spec.input_dim:
        raise ValueError(f"input has dimension {h.shape[-1]}, spec expects {spec.input_dim}")
    act = ad.relu if spec.activation == "relu" else ad.tanh
    layers = list(spec.slices())
    for i, (ws, bs, shape) in enumerate(layers):
        h = ad.matmul(h, ad.reshape(w[ws], shape)) + w[bs]
        if i < len(layers) - 1:
            h = act(h)
    return h[0] if single else h


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, **hyper) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n), **hyper)


def adam_step(state: AdamState, w: np.ndarray, g: np.ndarray) -> tuple[AdamState, np.ndarray]:
    """One bias-corrected Adam update; returns a new state and new parameters."""
    g = np.asarray(g, dtype=np.float64)
    if not (len(w) == len(g) == len(state.m)):
        raise ValueError(f"length mismatch: w={len(w)}, g={len(g)}, moments={len(state.m)}")
    if not np.isfinite(g).all():
        bad = int(np.flatnonzero(~np.isfinite(g))[0])
        raise FloatingPointError(f"non-finite gradient entry at index {bad}")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    w_new = w - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new = AdamState(m=m, v=v, t=t, lr=state.lr, beta1=state.beta1, beta2=state.beta2, eps=state.eps)
    return new, w_new
