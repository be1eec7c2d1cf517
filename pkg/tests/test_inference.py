import math
from dataclasses import replace

import numpy as np
import pytest
from scipy import integrate, stats

from bayesmal.errors import DataError
from bayesmal.inference import (METHODS, GaussianVariationalParams, Posterior, TrainConfig,
                                elbo_loss_grad, gaussian_kl, mean_pairwise_distance,
                                posterior_predict, predict_proba, svgd_kernel, svgd_step, train,
                                train_dropout, train_ensemble, train_map, train_svgd, train_vi)
from bayesmal.network import MlpArchitecture, forward, init_params

from helpers import central_diff, rel_err

ARCH = MlpArchitecture(4, (16,))


def _accuracy(post, d, n=None):
    probs = predict_proba(post, d, n=n, seed=0).mean(axis=1)
    return float(np.mean((probs[:, 1] >= 0.5) == d.y))


# --------------------------------------------------------------------- kernel

def test_svgd_kernel_scalar_example():
    K, grad_k, h = svgd_kernel([[0.0], [1.0], [2.0]])
    assert h == 1.0
    assert K[0, 1] == pytest.approx(math.exp(-0.5), abs=1e-15)
    assert K[0, 2] == pytest.approx(math.exp(-2.0), abs=1e-15)
    assert np.allclose(K, K.T) and np.all(np.diag(K) == 1.0)
    # grad_k[i] = sum_j (t_i - t_j) k_ij / h^2
    expect = [sum((a - b) * K[i, j] for j, b in enumerate([0, 1, 2])) for i, a in enumerate([0, 1, 2])]
    assert np.allclose(grad_k[:, 0], expect, atol=1e-15)


def test_svgd_kernel_degenerate_cases():
    K, grad_k, h = svgd_kernel(np.ones((3, 4)))
    assert h == 1.0 and np.all(K == 1.0) and np.all(grad_k == 0.0)
    K, grad_k, h = svgd_kernel(np.ones((1, 4)))
    assert K.tolist() == [[1.0]] and np.all(grad_k == 0.0) and h == 1.0
    with pytest.raises(DataError):
        svgd_kernel(np.ones((2, 2, 2)))


def test_svgd_kernel_gradient_matches_autodiff_by_hand():
    rng = np.random.default_rng(0)
    P = rng.normal(size=(4, 3))
    K, grad_k, h = svgd_kernel(P)
    # d/dt_j k(t_j, t_i) with h held fixed
    for i in range(4):
        total = np.zeros(3)
        for j in range(4):
            f = lambda t: math.exp(-np.sum((t - P[i]) ** 2) / (2 * h * h))
            total += central_diff(f, P[j])
        assert rel_err(grad_k[i], total) < 1e-6


def test_svgd_step_gamma_zero_hand_update():
    P = np.array([[0.0, 0.0], [3.0, 4.0]])
    G = np.array([[1.0, -1.0], [0.5, 2.0]])
    k = math.exp(-0.5)  # two particles: h equals their distance
    out = svgd_step(P, G, lr=0.1, gamma=0.0)
    assert np.allclose(out[0], P[0] - 0.05 * (G[0] + k * G[1]), atol=1e-15)
    assert np.allclose(out[1], P[1] - 0.05 * (k * G[0] + G[1]), atol=1e-15)


# --------------------------------------------------------------------- trainers

def test_map_trains_separable(separable):
    post = train_map(separable, ARCH, TrainConfig())
    assert _accuracy(post, separable) >= 0.99
    assert np.all(np.diff(post.history) <= 0)


def test_map_zero_epochs_returns_init(separable):
    post = train_map(separable, ARCH, TrainConfig(epochs=0, seed=4))
    assert post.particles[0] == init_params(ARCH, 4)


def test_training_is_deterministic(separable):
    cfg = TrainConfig(epochs=3, n_particles=3, seed=2)
    for method in METHODS:
        a, b = train(method, separable, ARCH, cfg), train(method, separable, ARCH, cfg)
        assert a.particles == b.particles and a.vi == b.vi, method


def test_single_class_rejected(separable):
    only = separable.where(1)
    for method in METHODS:
        with pytest.raises(DataError):
            train(method, only, ARCH, TrainConfig(epochs=1, n_particles=2))


def test_dimension_mismatch_rejected(separable):
    with pytest.raises(DataError):
        train_map(separable, MlpArchitecture(5, (4,)), TrainConfig(epochs=1))


def test_svgd_single_particle_tracks_map_step_for_step(separable):
    cfg = TrainConfig(epochs=3, n_particles=1, seed=6)
    map_steps, svgd_steps = [], []
    train_map(separable, ARCH, cfg, on_step=lambda s, P: map_steps.append(P.copy()))
    train_svgd(separable, ARCH, cfg, on_step=lambda s, P: svgd_steps.append(P.copy()))
    assert len(map_steps) == len(svgd_steps) > 0
    for a, b in zip(map_steps, svgd_steps):
        assert np.max(np.abs(a - b)) <= 1e-10


def test_svgd_gamma_zero_identical_particles_stay_identical(separable):
    cfg = TrainConfig(epochs=3, n_particles=2, svgd_gamma=0.0)
    start = init_params(ARCH, 9)
    post = train_svgd(separable, ARCH, cfg, init=[start, start])
    assert post.particles[0] == post.particles[1]


def test_svgd_repulsion_spreads_particles(separable):
    cfg = TrainConfig(epochs=10, n_particles=4, seed=1)
    spread = mean_pairwise_distance(train_svgd(separable, ARCH, cfg))
    tight = mean_pairwise_distance(train_svgd(separable, ARCH, replace(cfg, svgd_gamma=0.0)))
    assert spread > tight


def test_svgd_bad_init_shape(separable):
    with pytest.raises(DataError):
        train_svgd(separable, ARCH, TrainConfig(epochs=1, n_particles=3), init=[init_params(ARCH, 0)])


def test_ensemble_members_are_independent_map_runs(separable):
    cfg = TrainConfig(epochs=5, n_particles=3, seed=10)
    ens = train_ensemble(separable, ARCH, cfg)
    for i, p in enumerate(ens.particles):
        assert p == train_map(separable, ARCH, replace(cfg, seed=10 + i)).particles[0]
    one = train_ensemble(separable, ARCH, replace(cfg, n_particles=1))
    assert one.particles[0] == train_map(separable, ARCH, cfg).particles[0]


def test_ensemble_members_accurate(separable):
    ens = train_ensemble(separable, ARCH, TrainConfig(n_particles=3))
    for p in ens.particles:
        assert _accuracy(Posterior("MAP", ARCH, [p]), separable) >= 0.99


def test_dropout_rate_zero_equals_map(separable):
    cfg = TrainConfig(epochs=4, dropout_rate=0.0, seed=3)
    assert np.array_equal(train_dropout(separable, ARCH, cfg).particles[0].flat,
                          train_map(separable, ARCH, cfg).particles[0].flat)


def test_dropout_trains_wide_net(separable):
    arch = MlpArchitecture(4, (64,))
    post = train_dropout(separable, arch, TrainConfig(dropout_rate=0.5))
    assert _accuracy(post, separable) >= 0.95
    x = separable.X[0].toarray()[0]
    a, b = posterior_predict(post, x, n=10, seed=5), posterior_predict(post, x, n=10, seed=5)
    assert np.array_equal(a.probs, b.probs)


def test_vi_trains_and_samples_deterministically(separable):
    post = train_vi(separable, ARCH, TrainConfig())
    assert _accuracy(post, separable) >= 0.95
    assert np.all(post.vi.sigma > 0)
    a, b = post.sample_particles(10, seed=1), post.sample_particles(10, seed=1)
    assert a == b and len(a) == 10


def test_vi_last_layer_only(separable):
    post = train_vi(separable, ARCH, TrainConfig(epochs=2, vi_last_layer_only=True))
    first = ARCH.slices()[-1][0].start
    assert post.vi.first_stochastic == first
    draws = post.sample_particles(3, seed=0)
    assert all(np.array_equal(p.flat[:first], post.vi.mu[:first]) for p in draws)
    assert not np.array_equal(draws[0].flat[first:], draws[1].flat[first:])


# --------------------------------------------------------------------- VI objective

def test_gaussian_kl_identical_is_zero():
    assert gaussian_kl(0.0, 2.0, 2.0) == 0.0


@pytest.mark.parametrize("mu,sq,sp", [(0.3, 0.5, 1.0), (-1.2, 2.0, 0.7), (0.0, 0.1, 3.0)])
def test_gaussian_kl_matches_quadrature(mu, sq, sp):
    q, p = stats.norm(mu, sq), stats.norm(0.0, sp)
    integrand = lambda t: q.pdf(t) * (q.logpdf(t) - p.logpdf(t))
    lo, hi = mu - 12 * sq, mu + 12 * sq
    numeric, _ = integrate.quad(integrand, lo, hi, epsabs=1e-12, epsrel=1e-12, limit=200)
    assert float(gaussian_kl(mu, sq, sp)) == pytest.approx(numeric, abs=1e-6)


@pytest.mark.parametrize("first", [0, 5])
def test_elbo_gradient_finite_differences(first):
    rng = np.random.default_rng(3)
    arch = MlpArchitecture(3, (4,))
    mu = rng.normal(0, 0.5, arch.n_params)
    rho = rng.normal(-1.0, 0.3, arch.n_params)
    X = rng.integers(0, 2, (6, 3)).astype(float)
    y = np.array([0, 1, 0, 1, 1, 0])
    eps = rng.standard_normal((2, arch.n_params - first))

    def loss(m, r):
        return elbo_loss_grad(arch, GaussianVariationalParams(m, r, first), X, y, eps, 50, 0.5)[0]

    _, g_mu, g_rho = elbo_loss_grad(arch, GaussianVariationalParams(mu, rho, first), X, y, eps, 50, 0.5)
    assert rel_err(g_mu, central_diff(lambda m: loss(m, rho), mu)) < 1e-4
    assert rel_err(g_rho, central_diff(lambda r: loss(mu, r), rho)) < 1e-4


def test_vi_requires_proper_prior():
    arch = MlpArchitecture(2, (2,))
    vp = GaussianVariationalParams(np.zeros(arch.n_params), np.zeros(arch.n_params))
    with pytest.raises(DataError):
        elbo_loss_grad(arch, vp, np.ones((1, 2)), [0], np.zeros((1, arch.n_params)), 1, 0.0)


# --------------------------------------------------------------------- prediction

def test_posterior_predict_shapes(separable):
    cfg = TrainConfig(epochs=2, n_particles=10)
    x = separable.X[3].toarray()[0]
    for method in METHODS:
        post = train(method, separable, ARCH, cfg)
        s = posterior_predict(post, x, n=10, seed=0)
        expect_rows = 1 if method == "MAP" else 10
        assert s.probs.shape == (expect_rows, 2)
        assert np.all(np.abs(s.probs.sum(axis=1) - 1) <= 1e-12)
        if method == "MAP":
            assert np.array_equal(s.probs[0], forward(post.particles[0], x))


def test_dropout_rate_zero_inference_rows_identical(separable):
    post = train_dropout(separable, ARCH, TrainConfig(epochs=2, dropout_rate=0.0))
    s = posterior_predict(post, separable.X[0].toarray()[0], n=5, seed=3)
    assert np.all(s.probs == s.probs[0])


def test_too_many_particles_requested(separable):
    post = train_ensemble(separable, ARCH, TrainConfig(epochs=1, n_particles=2))
    with pytest.raises(DataError):
        post.sample_particles(3)


def test_posterior_invariants():
    p = init_params(ARCH, 0)
    with pytest.raises(DataError):
        Posterior("MAP", ARCH, [p, p])
    with pytest.raises(DataError):
        Posterior("VI", ARCH, [])
    with pytest.raises(DataError):
        Posterior("Bayes", ARCH, [p])
    with pytest.raises(DataError):
        TrainConfig(n_particles=0)
    with pytest.raises(DataError):
        GaussianVariationalParams(np.zeros(3), np.zeros(2))
