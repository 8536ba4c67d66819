import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from misfit.datasets import (
    DATASET_NAMES,
    Dataset,
    GroundTruth,
    gen_bimodal_1d,
    gen_bimodal_2d,
    gen_unimodal_1d,
    generate,
    make_test_set,
    rng_stream,
)

PEAK_9 = -0.5 * np.log(2 * np.pi * 9)


def test_unimodal_peak_density():
    gt = GroundTruth("unimodal1d")
    assert gt.log_pdf(1.5, 1.5**3)[0] == pytest.approx(-2.017551, abs=1e-6)
    assert gt.mean(2.0)[0] == 8.0
    assert gt.cov(2.0)[0, 0] == 9.0


def test_bimodal_1d_values():
    gt = GroundTruth("bimodal1d")
    assert gt.mixture_variance == 2509.0
    assert gt.log_pdf(1.0, 1.0)[0] == pytest.approx(-2500 / 18 - 0.5 * np.log(18 * np.pi), abs=1e-9)
    # the far mode sits 100 away: exp(-100^2/18) underflows to nothing
    assert gt.log_pdf(1.0, 51.0)[0] == pytest.approx(-np.log(2) - 0.5 * np.log(18 * np.pi), abs=1e-12)
    assert gt.cov(0.0)[0, 0] == pytest.approx(2509.0)


def test_mixture_variance_only_for_bimodal1d():
    with pytest.raises(AttributeError):
        GroundTruth("unimodal1d").mixture_variance


def test_bimodal_2d_moments():
    gt = GroundTruth("bimodal2d")
    assert np.allclose(gt.mean(1.5), [1.5**3, 1.5**3])
    assert np.allclose(gt.cov(0.3), [[272.5, -27.5], [-27.5, 272.5]], atol=1e-10)


def test_bimodal_2d_analytic_covariance_oracle():
    # pre-rotation mixture covariance diag(300, 20 + 15^2), rotated by a quarter turn of pi
    c, s = np.cos(np.pi / 4), np.sin(np.pi / 4)
    r = np.array([[c, s], [-s, c]])
    expected = r @ np.diag([300.0, 245.0]) @ r.T
    assert np.allclose(GroundTruth("bimodal2d").cov(-1.0), expected, atol=1e-10)


def test_unimodal_noise_variance_monte_carlo():
    d = gen_unimodal_1d(1_000_000, seed=7)
    resid = d.y[:, 0] - d.x[:, 0] ** 3
    assert resid.var() == pytest.approx(9.0, rel=0.01)


def test_bimodal_2d_empirical_covariance():
    gt = GroundTruth("bimodal2d")
    x = np.full(1_000_000, 0.5)
    y = gt.sample(x, rng_stream(3, 1), rng_stream(3, 2))
    emp = np.cov(y.T)
    assert np.allclose(emp, gt.cov(0.5), rtol=0.02, atol=0.02 * 272.5)
    assert emp[0, 0] == pytest.approx(272.5, rel=0.02)


@pytest.mark.parametrize("name", DATASET_NAMES)
def test_empirical_moments_within_three_standard_errors(name):
    gt = GroundTruth(name)
    for i, x0 in enumerate([-3.0, -1.0, 0.0, 1.5, 3.5]):
        n = 200_000
        y = gt.sample(np.full(n, x0), rng_stream(i, 1), rng_stream(i, 2))
        cov = gt.cov(x0)
        se = np.sqrt(np.diag(cov) / n)
        assert np.all(np.abs(y.mean(axis=0) - gt.mean(x0)) <= 3 * se)
        # variance of the sample variance needs the fourth moment; estimate it empirically
        d = y - y.mean(axis=0)
        se_var = np.sqrt(np.var(d**2, axis=0) / n)
        assert np.all(np.abs(np.var(y, axis=0, ddof=1) - np.diag(cov)) <= 3 * se_var)


@pytest.mark.parametrize("name", ["unimodal1d", "bimodal1d"])
def test_density_normalizes_1d(name):
    gt = GroundTruth(name)
    for x0 in [-2.0, 0.0, 1.7]:
        sd = np.sqrt(gt.cov(x0)[0, 0])
        y = np.linspace(gt.mean(x0)[0] - 6 * sd, gt.mean(x0)[0] + 6 * sd, 4096)
        p = np.exp(gt.log_pdf(np.full_like(y, x0), y))
        assert abs(np.trapezoid(p, y) - 1) <= 1e-3


def test_density_normalizes_2d():
    gt = GroundTruth("bimodal2d")
    x0 = 0.8
    mu = gt.mean(x0)
    half = 6 * np.sqrt(300.0 + 15.0**2)
    a = np.linspace(mu[0] - half, mu[0] + half, 512)
    b = np.linspace(mu[1] - half, mu[1] + half, 512)
    ya, yb = np.meshgrid(a, b, indexing="ij")
    y = np.stack([ya.ravel(), yb.ravel()], axis=1)
    p = np.exp(gt.log_pdf(np.full(len(y), x0), y)).reshape(512, 512)
    assert abs(np.trapezoid(np.trapezoid(p, b, axis=1), a) - 1) <= 1e-3


@pytest.mark.parametrize("name", DATASET_NAMES)
def test_cov_is_symmetric_psd(name):
    c = GroundTruth(name).cov(np.linspace(-4, 4, 9))
    assert np.allclose(c, np.swapaxes(c, 1, 2))
    assert np.all(np.linalg.eigvalsh(c) >= 0)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(DATASET_NAMES), st.integers(1, 200), st.integers(0, 2**63 - 1))
def test_seed_determinism_and_interval(name, n, seed):
    a, b = generate(name, n, seed), generate(name, n, seed)
    assert a.x.tobytes() == b.x.tobytes() and a.y.tobytes() == b.y.tobytes()
    assert np.all((a.x >= -4) & (a.x <= 4))
    assert a.y.shape == (n, GroundTruth(name).out_dim)


def test_different_seeds_differ():
    assert not np.array_equal(gen_bimodal_1d(10, 1).y, gen_bimodal_1d(10, 2).y)


@pytest.mark.parametrize("gen", [gen_unimodal_1d, gen_bimodal_1d, gen_bimodal_2d])
def test_zero_points_rejected(gen):
    with pytest.raises(ValueError):
        gen(0, 1)


def test_unknown_name_lists_valid_names():
    with pytest.raises(ValueError, match="bimodal2d"):
        generate("trimodal", 5, 0)


def test_x_marginally_uniform():
    # stratified draws: every point uniform on the interval, so the mean x is near 0
    xs = np.concatenate([generate("unimodal1d", 20, s).x[:, 0] for s in range(500)])
    assert abs(xs.mean()) < 3 * np.sqrt(64 / 12 / len(xs)) + 0.05
    assert xs.min() >= -4 and xs.max() <= 4


def test_test_set_is_equidistant():
    t = make_test_set("unimodal1d", 50, 0)
    assert np.allclose(np.diff(t.x[:, 0]), 8 / 49)


def test_csv_round_trip(tmp_path):
    d = gen_bimodal_2d(13, 4)
    path = tmp_path / "d.csv"
    text = d.to_csv(path)
    assert text.splitlines()[0] == "x0,y0,y1"
    assert "\r" not in path.read_bytes().decode()
    back = Dataset.from_csv(path, "bimodal2d", 4)
    assert back.x.tobytes() == d.x.tobytes() and back.y.tobytes() == d.y.tobytes()
