import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from misfit import autodiff as ad
from misfit.bayes import (
    MeanFieldGaussian,
    WeightPrior,
    elbo_loss,
    kl,
    kl_meanfield_to_prior,
    reparameterize,
    sample_weights,
    softplus_inv,
)
from misfit.likelihoods import GaussHead1D, batch_loss
from misfit.nn import MlpSpec, init_params, mlp_forward

from conftest import central_diff, max_rel_err


def test_softplus_inverse():
    s = np.array([1e-3, 0.05, 1.0, 20.0])
    assert np.allclose(np.logaddexp(0, softplus_inv(s)), s, rtol=1e-12)


def test_degenerate_posterior_sample_is_mean():
    q = MeanFieldGaussian(np.array([1.0, -2.0, 3.0]), np.full(3, -40.0))
    assert np.allclose(sample_weights(q, 0), q.mean, atol=1e-12)


def test_fixed_seed_identical_draw():
    q = MeanFieldGaussian.around(np.zeros(4), 0.5)
    assert np.array_equal(sample_weights(q, 3), sample_weights(q, 3))


def test_sample_moments():
    q = MeanFieldGaussian(np.array([0.5, -1.0]), softplus_inv(np.array([0.2, 1.5])))
    rng = np.random.default_rng(0)
    draws = np.stack([sample_weights(q, rng) for _ in range(100_000)])
    n = len(draws)
    assert np.all(np.abs(draws.mean(axis=0) - q.mean) <= 3 * q.scale / np.sqrt(n))
    assert np.all(np.abs(draws.std(axis=0) - q.scale) <= 3 * q.scale / np.sqrt(2 * n))


def test_kl_examples():
    p = WeightPrior(1.0)
    assert kl(MeanFieldGaussian(np.zeros(3), softplus_inv(np.ones(3))), p) == pytest.approx(0.0, abs=1e-12)
    assert kl(MeanFieldGaussian(np.ones(1), softplus_inv(np.ones(1))), p) == pytest.approx(0.5, abs=1e-12)
    assert kl(MeanFieldGaussian(np.zeros(1), softplus_inv(np.array([2.0]))), p) == pytest.approx(
        0.5 * (4 - 1 - np.log(4)), abs=1e-12
    )
    assert 0.5 * (4 - 1 - np.log(4)) == pytest.approx(0.806853, abs=1e-6)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(-5, 5), min_size=1, max_size=5),
    st.floats(-6, 4),
    st.floats(0.1, 5),
)
def test_kl_non_negative(mean, raw, sp):
    q = MeanFieldGaussian(np.array(mean), np.full(len(mean), raw))
    assert kl(q, WeightPrior(sp)) >= -1e-12


def test_prior_rejects_bad_sigma():
    with pytest.raises(ValueError):
        WeightPrior(0.0)


def make_problem(seed):
    rng = np.random.default_rng(seed)
    spec = MlpSpec(1, (5,), 2, "tanh")
    head = GaussHead1D()
    x = rng.uniform(-2, 2, size=(10, 1))
    y = x**3 + rng.normal(size=(10, 1))
    w = init_params(spec, rng)

    def nll(wv):
        return batch_loss(head, mlp_forward(spec, wv, x), y, len(x))

    return spec, nll, w, rng


def test_degenerate_elbo_nll_term_equals_deterministic_loss():
    spec, nll, w, rng = make_problem(0)
    raw = np.full(spec.n_params, -40.0)
    eps = rng.standard_normal((3, spec.n_params))
    prior = WeightPrior()
    total = float(elbo_loss(nll, w, raw, prior, eps))
    nll_part = total - float(kl_meanfield_to_prior(w, raw, prior))
    assert nll_part == pytest.approx(float(nll(w)), abs=1e-9)


def test_elbo_monte_carlo_convergence():
    spec, nll, w, rng = make_problem(1)
    raw = np.full(spec.n_params, softplus_inv(0.05))
    prior = WeightPrior()
    one = np.array([float(elbo_loss(nll, w, raw, prior, rng.standard_normal((1, spec.n_params)))) for _ in range(100)])
    many = np.array([float(elbo_loss(nll, w, raw, prior, rng.standard_normal((64, spec.n_params)))) for _ in range(100)])
    se = np.sqrt(one.var(ddof=1) / 100 + many.var(ddof=1) / 100)
    assert abs(one.mean() - many.mean()) <= 3 * se


@pytest.mark.parametrize("seed", range(20))
def test_elbo_gradient_with_frozen_noise(seed):
    spec, nll, w, rng = make_problem(seed)
    psi = MeanFieldGaussian.around(w, 0.1).flat
    eps = rng.standard_normal((3, spec.n_params))
    n = spec.n_params
    prior = WeightPrior()
    f = lambda v: elbo_loss(nll, v[:n], v[n:], prior, eps)
    with ad.Tape() as tape:
        v = tape.variable(psi)
        g = ad.grad(f(v), v)
    assert max_rel_err(g, central_diff(f, psi)) <= 1e-3


def test_elbo_deterministic_given_noise():
    spec, nll, w, rng = make_problem(2)
    raw = np.full(spec.n_params, -2.0)
    eps = rng.standard_normal((5, spec.n_params))
    assert float(elbo_loss(nll, w, raw, WeightPrior(), eps)) == float(elbo_loss(nll, w, raw, WeightPrior(), eps))


def test_elbo_names_bad_draw():
    def nll(wv):
        v = ad.value_of(wv)
        return ad.sum(wv) * (np.inf if v[0] > 0 else 1.0)

    eps = np.array([[-1.0], [1.0]])
    with pytest.raises(FloatingPointError, match="draw 1"):
        elbo_loss(nll, np.zeros(1), np.zeros(1), WeightPrior(), eps)


def test_reparameterize_gradient_flows_to_both_parts():
    with ad.Tape() as tape:
        m = tape.variable(np.array([1.0]))
        r = tape.variable(np.array([0.0]))
        gm, gr = ad.grad(ad.sum(reparameterize(m, r, np.array([2.0]))), m, r)
    assert gm[0] == 1.0
    assert gr[0] == pytest.approx(2.0 * 0.5)


def test_flat_round_trip():
    q = MeanFieldGaussian.around(np.arange(5.0), 0.1)
    back = MeanFieldGaussian.from_flat(q.flat)
    assert np.array_equal(back.mean, q.mean) and np.array_equal(back.raw_scale, q.raw_scale)
    assert np.allclose(q.scale, 0.1)
