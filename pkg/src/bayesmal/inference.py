"""Posterior approximations over network parameters and MC prediction.

Every trainer is plain mini-batch SGD with a fixed learning rate. Batch order
comes from the stream ``default_rng([seed, 1])``, so MAP, SVGD, Dropout and
VI runs sharing a seed visit identical batches.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.spatial.distance import pdist, squareform
from scipy.special import expit

from . import _parallel
from .data import Dataset
from .errors import DataError, NumericError
from .network import (
    DropoutMask,
    MlpArchitecture,
    ParameterParticle,
    _loss_grad,
    forward,
    init_params,
)
from .uncertainty import PredictiveSample

log = logging.getLogger(__name__)

METHODS = ("MAP", "Dropout", "VI", "Ensemble", "SVGD")

# Named sub-streams of a training seed.
_SHUFFLE, _MASKS, _VI_NOISE = 1, 2, 3


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 64
    learning_rate: float = 0.05
    seed: int = 0
    prior_precision: float = 1e-4
    svgd_gamma: float = 1.0
    dropout_rate: float = 0.5
    n_particles: int = 10
    vi_kl_weight: float = 1.0
    vi_mc_samples: int = 1
    vi_last_layer_only: bool = False
    vi_init_rho: float = -3.0

    def __post_init__(self):
        if self.epochs < 0:
            raise DataError("epochs must be >= 0")
        if self.batch_size < 1 or self.learning_rate <= 0:
            raise DataError("batch_size and learning_rate must be positive")
        if self.n_particles < 1:
            raise DataError("n_particles must be >= 1")
        if self.prior_precision < 0:
            raise DataError("prior_precision must be >= 0")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise DataError("dropout_rate must lie in [0, 1)")
        if self.vi_mc_samples < 1:
            raise DataError("vi_mc_samples must be >= 1")


@dataclass(frozen=True)
class GaussianVariationalParams:
    """Diagonal Gaussian q(theta) = N(mu, softplus(rho)^2).

    Entries before ``first_stochastic`` are point estimates (their rho is
    carried but unused); this is how last-layer-only VI is represented.
    """

    mu: np.ndarray
    rho: np.ndarray
    first_stochastic: int = 0

    def __post_init__(self):
        mu = np.array(self.mu, dtype=np.float64).reshape(-1)
        rho = np.array(self.rho, dtype=np.float64).reshape(-1)
        if mu.shape != rho.shape:
            raise DataError("mu and rho must have equal length")
        if not 0 <= self.first_stochastic <= mu.size:
            raise DataError("first_stochastic out of range")
        mu.flags.writeable = False
        rho.flags.writeable = False
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "rho", rho)

    @property
    def sigma(self) -> np.ndarray:
        return np.logaddexp(0.0, self.rho)

    @property
    def stochastic(self) -> slice:
        return slice(self.first_stochastic, self.mu.size)

    def sample(self, eps: np.ndarray) -> np.ndarray:
        theta = self.mu.copy()
        s = self.stochastic
        theta[s] += self.sigma[s] * eps
        return theta

    def __eq__(self, other):
        if not isinstance(other, GaussianVariationalParams):
            return NotImplemented
        return (self.first_stochastic == other.first_stochastic
                and np.array_equal(self.mu, other.mu) and np.array_equal(self.rho, other.rho))

    __hash__ = None


@dataclass
class Posterior:
    method: str
    arch: MlpArchitecture
    particles: list = field(default_factory=list)
    n_inference: int = 10
    vi: Optional[GaussianVariationalParams] = None
    dropout_rate: float = 0.0
    history: list = field(default_factory=list, compare=False, repr=False)

    def __post_init__(self):
        if self.method not in METHODS:
            raise DataError(f"unknown method {self.method!r}")
        if self.method == "MAP" and len(self.particles) != 1:
            raise DataError("MAP posterior holds exactly one particle")
        if self.method == "Dropout" and len(self.particles) != 1:
            raise DataError("Dropout posterior holds exactly one particle")
        if self.method in ("SVGD", "Ensemble") and not self.particles:
            raise DataError(f"{self.method} posterior needs particles")
        if self.method == "VI" and self.vi is None:
            raise DataError("VI posterior needs variational parameters")

    def sample_particles(self, k: Optional[int] = None, seed=0) -> list:
        """Concrete parameter sets for MC prediction, deterministic given ``seed``.

        MAP always yields its single particle. SVGD/Ensemble yield the first
        ``k`` stored particles. Dropout yields ``k`` mask-thinned copies; VI
        yields ``k`` reparameterised draws.
        """
        if self.method == "MAP":
            return list(self.particles)
        k = self.n_inference if k is None else int(k)
        if k < 1:
            raise DataError("need at least one particle")
        if self.method in ("SVGD", "Ensemble"):
            if k > len(self.particles):
                raise DataError(f"requested {k} particles, posterior stores {len(self.particles)}")
            return list(self.particles[:k])
        rng = np.random.default_rng(seed)
        if self.method == "Dropout":
            base = self.particles[0]
            return [DropoutMask.sample(self.arch, self.dropout_rate, rng).fold_into(base)
                    for _ in range(k)]
        n_stoch = self.vi.mu.size - self.vi.first_stochastic
        eps = rng.standard_normal((k, n_stoch))
        return [ParameterParticle(self.arch, self.vi.sample(e)) for e in eps]


# --------------------------------------------------------------------- helpers

def _dense_rows(d: Dataset, rows) -> np.ndarray:
    return d.X[rows].toarray()


def _batches(n, batch_size, rng):
    perm = rng.permutation(n)
    for s in range(0, n, batch_size):
        yield perm[s:s + batch_size]


def _check_finite(loss, what):
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss during {what} training")


def _prepare(d: Dataset, arch: MlpArchitecture):
    d.require_both_classes()
    if d.dim != arch.input_dim:
        raise DataError(f"dataset dim {d.dim} != architecture input_dim {arch.input_dim}")
    return d.X, np.asarray(d.y, dtype=np.int64)


def dataset_loss(arch, flat, d: Dataset, prior_precision=0.0, chunk=4096) -> float:
    """Mean regularised cross-entropy over the whole dataset."""
    total = 0.0
    n = len(d)
    for s in range(0, n, chunk):
        rows = np.arange(s, min(n, s + chunk))
        loss, _ = _loss_grad(arch, flat, _dense_rows(d, rows), d.y[rows])
        total += loss * rows.size
    total /= n
    if prior_precision:
        total += 0.5 * prior_precision * float(flat @ flat)
    return total


StepCallback = Callable[[int, np.ndarray], None]


# --------------------------------------------------------------------- MAP / ensemble / dropout

def train_map(d: Dataset, arch: MlpArchitecture, cfg: TrainConfig,
              on_step: Optional[StepCallback] = None) -> Posterior:
    X, y = _prepare(d, arch)
    flat = init_params(arch, cfg.seed).flat.copy()
    rng = np.random.default_rng([cfg.seed, _SHUFFLE])
    history = []
    step = 0
    for _ in range(cfg.epochs):
        for rows in _batches(len(y), cfg.batch_size, rng):
            loss, grad = _loss_grad(arch, flat, X[rows].toarray(), y[rows], cfg.prior_precision)
            _check_finite(loss, "MAP")
            flat = flat - cfg.learning_rate * grad
            step += 1
            if on_step is not None:
                on_step(step, flat[None, :])
        history.append(dataset_loss(arch, flat, d, cfg.prior_precision))
    return Posterior("MAP", arch, [ParameterParticle(arch, flat)], n_inference=1, history=history)


def train_ensemble(d: Dataset, arch: MlpArchitecture, cfg: TrainConfig) -> Posterior:
    _prepare(d, arch)
    members = _parallel.ordered_map(
        lambda i: train_map(d, arch, replace(cfg, seed=cfg.seed + i)),
        range(cfg.n_particles),
    )
    particles = [m.particles[0] for m in members]
    history = list(np.mean([m.history for m in members], axis=0)) if cfg.epochs else []
    return Posterior("Ensemble", arch, particles, n_inference=cfg.n_particles, history=history)


def train_dropout(d: Dataset, arch: MlpArchitecture, cfg: TrainConfig,
                  on_step: Optional[StepCallback] = None) -> Posterior:
    X, y = _prepare(d, arch)
    rate = cfg.dropout_rate
    flat = init_params(arch, cfg.seed).flat.copy()
    rng = np.random.default_rng([cfg.seed, _SHUFFLE])
    mask_rng = np.random.default_rng([cfg.seed, _MASKS])
    history = []
    step = 0
    for _ in range(cfg.epochs):
        for rows in _batches(len(y), cfg.batch_size, rng):
            mask = DropoutMask.sample(arch, rate, mask_rng, batch_size=rows.size) if rate > 0 else None
            loss, grad = _loss_grad(arch, flat, X[rows].toarray(), y[rows], cfg.prior_precision, mask)
            _check_finite(loss, "Dropout")
            flat = flat - cfg.learning_rate * grad
            step += 1
            if on_step is not None:
                on_step(step, flat[None, :])
        history.append(dataset_loss(arch, flat, d, cfg.prior_precision))
    return Posterior("Dropout", arch.with_dropout(rate), [ParameterParticle(arch.with_dropout(rate), flat)],
                     n_inference=cfg.n_particles, dropout_rate=rate, history=history)


# --------------------------------------------------------------------- SVGD

def svgd_kernel(particles):
    """RBF kernel matrix with median-distance bandwidth.

    Returns ``(K, grad_k, h)`` where ``K[i, j] = exp(-|t_i - t_j|^2 / 2h^2)``
    and ``grad_k[i] = sum_j d/dt_j k(t_j, t_i)``. The bandwidth falls back to
    1 when there is a single particle or all particles coincide.
    """
    P = np.asarray(particles, dtype=np.float64)
    if P.ndim == 1:
        P = P[:, None]
    if P.ndim != 2 or P.shape[0] < 1:
        raise DataError("particles must form an n x D array with n >= 1")
    n = P.shape[0]
    if n == 1:
        return np.ones((1, 1)), np.zeros_like(P), 1.0
    dist = pdist(P)
    h = float(np.median(dist))
    if not h > 0.0:
        h = 1.0
    K = np.exp(-squareform(dist) ** 2 / (2.0 * h * h))
    grad_k = -(K @ P - K.sum(axis=1)[:, None] * P) / (h * h)
    return K, grad_k, h


def svgd_step(P: np.ndarray, G: np.ndarray, lr: float, gamma: float) -> np.ndarray:
    """One particle update: driving term K @ G, repulsion weighted by gamma."""
    n = P.shape[0]
    K, grad_k, _ = svgd_kernel(P)
    phi = K @ G
    if gamma:
        phi = phi - gamma * grad_k
    return P - (lr / n) * phi


def train_svgd(d: Dataset, arch: MlpArchitecture, cfg: TrainConfig,
               init: Optional[list] = None, on_step: Optional[StepCallback] = None) -> Posterior:
    """Jointly update ``cfg.n_particles`` particles on shared mini-batches.

    Particle ``i`` starts from ``init_params(arch, seed + i)`` unless ``init``
    supplies the starting particles.
    """
    X, y = _prepare(d, arch)
    if init is None:
        P = np.stack([init_params(arch, cfg.seed + i).flat for i in range(cfg.n_particles)])
    else:
        P = np.stack([np.asarray(p.flat if isinstance(p, ParameterParticle) else p, dtype=np.float64)
                      for p in init])
        if P.shape != (cfg.n_particles, arch.n_params):
            raise DataError("init particles do not match n_particles / architecture")
    rng = np.random.default_rng([cfg.seed, _SHUFFLE])
    history = []
    step = 0
    for _ in range(cfg.epochs):
        for rows in _batches(len(y), cfg.batch_size, rng):
            Xb, yb = X[rows].toarray(), y[rows]
            G = np.empty_like(P)
            for i in range(P.shape[0]):
                loss, G[i] = _loss_grad(arch, P[i], Xb, yb, cfg.prior_precision)
                _check_finite(loss, "SVGD")
            P = svgd_step(P, G, cfg.learning_rate, cfg.svgd_gamma)
            step += 1
            if on_step is not None:
                on_step(step, P)
        history.append(float(np.mean([dataset_loss(arch, p, d, cfg.prior_precision) for p in P])))
    particles = [ParameterParticle(arch, p) for p in P]
    return Posterior("SVGD", arch, particles, n_inference=cfg.n_particles, history=history)


def mean_pairwise_distance(post_or_particles) -> float:
    parts = getattr(post_or_particles, "particles", post_or_particles)
    P = np.stack([p.flat if isinstance(p, ParameterParticle) else p for p in parts])
    return float(pdist(P).mean()) if len(P) > 1 else 0.0


# --------------------------------------------------------------------- VI

def gaussian_kl(mu_q, sigma_q, sigma_p, mu_p=0.0):
    """Elementwise KL(N(mu_q, sigma_q^2) || N(mu_p, sigma_p^2))."""
    mu_q, sigma_q = np.asarray(mu_q, dtype=np.float64), np.asarray(sigma_q, dtype=np.float64)
    return (np.log(sigma_p / sigma_q)
            + (sigma_q ** 2 + (mu_q - mu_p) ** 2) / (2.0 * sigma_p ** 2) - 0.5)


def elbo_loss_grad(arch, vp: GaussianVariationalParams, X, y, eps, n_train,
                   prior_precision, kl_weight=1.0):
    """Negative per-sample ELBO for fixed noise ``eps`` (k x n_stochastic) and its gradients.

    loss = mean_k CE(mu + sigma*eps_k) + kl_weight/n_train * KL(q || N(0, 1/prior_precision))
    Point-estimate entries get ordinary weight decay instead of a KL term.
    """
    if prior_precision <= 0:
        raise DataError("VI needs prior_precision > 0 for a proper Gaussian prior")
    eps = np.atleast_2d(eps)
    s = vp.stochastic
    sigma = vp.sigma
    sigma_p = 1.0 / np.sqrt(prior_precision)
    g_mu = np.zeros_like(vp.mu)
    g_rho = np.zeros_like(vp.rho)
    nll = 0.0
    for e in eps:
        loss, g = _loss_grad(arch, vp.sample(e), X, y)
        nll += loss
        g_mu += g
        g_rho[s] += g[s] * e
    k = eps.shape[0]
    nll /= k
    g_mu /= k
    g_rho /= k
    c = kl_weight / n_train
    kl = float(gaussian_kl(vp.mu[s], sigma[s], sigma_p).sum())
    g_mu[s] += c * vp.mu[s] / sigma_p ** 2
    g_rho[s] += c * (-1.0 / sigma[s] + sigma[s] / sigma_p ** 2)
    g_rho[s] *= expit(vp.rho[s])
    det = slice(0, vp.first_stochastic)
    decay = 0.5 * prior_precision * float(vp.mu[det] @ vp.mu[det])
    g_mu[det] += prior_precision * vp.mu[det]
    return nll + c * kl + decay, g_mu, g_rho


def train_vi(d: Dataset, arch: MlpArchitecture, cfg: TrainConfig,
             on_step: Optional[StepCallback] = None) -> Posterior:
    X, y = _prepare(d, arch)
    first = arch.slices()[-1][0].start if cfg.vi_last_layer_only else 0
    mu = init_params(arch, cfg.seed).flat.copy()
    rho = np.full(arch.n_params, cfg.vi_init_rho)
    n_stoch = arch.n_params - first
    rng = np.random.default_rng([cfg.seed, _SHUFFLE])
    noise = np.random.default_rng([cfg.seed, _VI_NOISE])
    history = []
    step = 0
    for _ in range(cfg.epochs):
        epoch_loss, n_batches = 0.0, 0
        for rows in _batches(len(y), cfg.batch_size, rng):
            vp = GaussianVariationalParams(mu, rho, first)
            eps = noise.standard_normal((cfg.vi_mc_samples, n_stoch))
            loss, g_mu, g_rho = elbo_loss_grad(arch, vp, X[rows].toarray(), y[rows], eps, len(y),
                                               cfg.prior_precision, cfg.vi_kl_weight)
            _check_finite(loss, "VI")
            mu = mu - cfg.learning_rate * g_mu
            rho = rho - cfg.learning_rate * g_rho
            epoch_loss += loss
            n_batches += 1
            step += 1
            if on_step is not None:
                on_step(step, mu[None, :])
        history.append(epoch_loss / max(n_batches, 1))
    vp = GaussianVariationalParams(mu, rho, first)
    return Posterior("VI", arch, [], n_inference=cfg.n_particles, vi=vp, history=history)


TRAINERS = {
    "MAP": train_map,
    "Dropout": train_dropout,
    "VI": train_vi,
    "Ensemble": train_ensemble,
    "SVGD": train_svgd,
}


def train(method: str, d: Dataset, arch: MlpArchitecture, cfg: TrainConfig) -> Posterior:
    if method not in TRAINERS:
        raise DataError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    log.info("training %s on %d samples", method, len(d))
    return TRAINERS[method](d, arch, cfg)


# --------------------------------------------------------------------- prediction

def posterior_predict(post: Posterior, x, n: Optional[int] = None, seed=0) -> PredictiveSample:
    """Per-particle class probabilities for one input (MAP always gives one row)."""
    x = x.to_dense() if hasattr(x, "to_dense") else np.asarray(x, dtype=np.float64)
    return PredictiveSample(np.stack([forward(p, x) for p in post.sample_particles(n, seed)]))


def predict_proba(post: Posterior, X, n: Optional[int] = None, seed=0, chunk=4096) -> np.ndarray:
    """``m x n x 2`` per-particle probabilities for a Dataset or dense matrix."""
    particles = post.sample_particles(n, seed)
    if isinstance(X, Dataset):
        X = X.X
    m = X.shape[0]
    out = np.empty((m, len(particles), 2))
    for s in range(0, m, chunk):
        block = X[s:s + chunk]
        block = block.toarray() if hasattr(block, "toarray") else np.asarray(block, dtype=np.float64)
        for j, p in enumerate(particles):
            out[s:s + block.shape[0], j] = forward(p, block)
    return out
