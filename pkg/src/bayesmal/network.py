"""Two-class ReLU feed-forward classifier with exact gradients.

Parameters live in one flat float64 vector. The flattening order is layer 0
weights (``input x output``, row-major), layer 0 biases, layer 1 weights, and
so on through the output layer.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import log_softmax

from .errors import DataError, DimensionMismatchError

N_CLASSES = 2


@dataclass(frozen=True)
class MlpArchitecture:
    input_dim: int
    hidden_sizes: tuple = (512, 256)
    dropout_rate: float = 0.0
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.input_dim < 1:
            raise DataError("input_dim must be >= 1")
        if not self.hidden_sizes or min(self.hidden_sizes) < 1:
            raise DataError("need at least one hidden layer of positive width")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise DataError("dropout_rate must lie in [0, 1)")
        if self.activation != "relu":
            raise DataError(f"unsupported activation {self.activation!r}")

    @property
    def layer_shapes(self) -> list:
        sizes = (self.input_dim,) + self.hidden_sizes + (N_CLASSES,)
        return list(zip(sizes[:-1], sizes[1:]))

    @property
    def n_params(self) -> int:
        return sum(i * o + o for i, o in self.layer_shapes)

    def slices(self) -> list:
        """(weight_slice, bias_slice) into the flat vector, per layer."""
        out, pos = [], 0
        for i, o in self.layer_shapes:
            w = slice(pos, pos + i * o)
            b = slice(w.stop, w.stop + o)
            out.append((w, b))
            pos = b.stop
        return out

    def with_dropout(self, rate: float) -> "MlpArchitecture":
        return MlpArchitecture(self.input_dim, self.hidden_sizes, rate, self.activation)


@dataclass(frozen=True)
class ParameterParticle:
    """One full parameter set, stored flat; ``layers()`` gives (W, b) views."""

    arch: MlpArchitecture
    flat: np.ndarray

    def __post_init__(self):
        flat = np.array(self.flat, dtype=np.float64, copy=True).reshape(-1)
        if flat.size != self.arch.n_params:
            raise DimensionMismatchError(
                f"expected {self.arch.n_params} parameters, got {flat.size}")
        flat.flags.writeable = False
        object.__setattr__(self, "flat", flat)

    def layers(self) -> list:
        return unflatten(self.arch, self.flat)

    @classmethod
    def from_layers(cls, arch, layers) -> "ParameterParticle":
        return cls(arch, flatten(arch, layers))

    def __eq__(self, other):
        if not isinstance(other, ParameterParticle):
            return NotImplemented
        return self.arch == other.arch and np.array_equal(self.flat, other.flat)

    __hash__ = None


def unflatten(arch: MlpArchitecture, flat: np.ndarray) -> list:
    flat = np.asarray(flat)
    if flat.size != arch.n_params:
        raise DimensionMismatchError(f"expected {arch.n_params} parameters, got {flat.size}")
    return [(flat[ws].reshape(shape), flat[bs]) for (ws, bs), shape in zip(arch.slices(), arch.layer_shapes)]


def flatten(arch: MlpArchitecture, layers) -> np.ndarray:
    if len(layers) != len(arch.layer_shapes):
        raise DimensionMismatchError("layer count does not match architecture")
    parts = []
    for (W, b), (i, o) in zip(layers, arch.layer_shapes):
        W = np.asarray(W, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64).reshape(-1)
        if W.shape != (i, o) or b.shape != (o,):
            raise DimensionMismatchError(f"layer shape {W.shape}/{b.shape}, expected {(i, o)}/{(o,)}")
        parts += [W.ravel(), b]
    return np.concatenate(parts)


def init_params(arch: MlpArchitecture, seed=0) -> ParameterParticle:
    """He-scaled uniform weights, U(-sqrt(6/fan_in), +sqrt(6/fan_in)); zero biases."""
    rng = np.random.default_rng(seed)
    flat = np.zeros(arch.n_params)
    for (ws, _), (fan_in, _) in zip(arch.slices(), arch.layer_shapes):
        limit = np.sqrt(6.0 / fan_in)
        flat[ws] = rng.uniform(-limit, limit, size=ws.stop - ws.start)
    return ParameterParticle(arch, flat)


@dataclass(frozen=True)
class DropoutMask:
    """Keep indicators per hidden layer.

    Each entry is either a vector (one thinned network) or a
    ``batch x width`` matrix (independent masks per sample, as in training).
    """

    keep: tuple
    rate: float
    seed: Optional[int] = None

    @property
    def scale(self) -> float:
        return 1.0 / (1.0 - self.rate)

    @classmethod
    def sample(cls, arch: MlpArchitecture, rate: float, rng, batch_size=None) -> "DropoutMask":
        seed = None
        if not isinstance(rng, np.random.Generator):
            seed = rng
            rng = np.random.default_rng(rng)
        keep = []
        for width in arch.hidden_sizes:
            shape = (width,) if batch_size is None else (batch_size, width)
            keep.append((rng.random(shape) >= rate).astype(np.float64))
        return cls(tuple(keep), rate, seed)

    @classmethod
    def drop_all(cls, arch: MlpArchitecture, rate=0.5) -> "DropoutMask":
        return cls(tuple(np.zeros(w) for w in arch.hidden_sizes), rate)

    def fold_into(self, particle: ParameterParticle) -> ParameterParticle:
        """Equivalent deterministic particle: dropped units zeroed, kept ones rescaled."""
        if any(np.ndim(k) != 1 for k in self.keep):
            raise DataError("only per-network (vector) masks can be folded into parameters")
        layers = [(W.copy(), b) for W, b in particle.layers()]
        for l, k in enumerate(self.keep):
            W, b = layers[l + 1]
            layers[l + 1] = (W * (k * self.scale)[:, None], b)
        return ParameterParticle.from_layers(particle.arch, layers)


def _as_batch(arch, X):
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.ndim != 2 or X.shape[1] != arch.input_dim:
        raise DimensionMismatchError(f"input has {X.shape[-1]} features, network expects {arch.input_dim}")
    return X, single


def _forward(arch, flat, X, mask=None):
    """Logits plus the per-layer cache needed for backprop."""
    layers = unflatten(arch, flat)
    h = X
    cache = []
    for l, (W, b) in enumerate(layers[:-1]):
        z = h @ W + b
        a = np.maximum(z, 0.0)
        gate = (z > 0.0).astype(np.float64)
        if mask is not None:
            m = mask.keep[l] * mask.scale
            a = a * m
            gate = gate * m
        cache.append((h, gate))
        h = a
    W, b = layers[-1]
    cache.append((h, None))
    return h @ W + b, cache


def _backward(arch, flat, cache, dlogits, want_params=True, want_input=False):
    layers = unflatten(arch, flat)
    grad = np.empty(arch.n_params) if want_params else None
    delta = dlogits
    dx = None
    for l in range(len(layers) - 1, -1, -1):
        W, _ = layers[l]
        h, _ = cache[l]
        if want_params:
            ws, bs = arch.slices()[l]
            grad[ws] = (h.T @ delta).ravel()
            grad[bs] = delta.sum(axis=0)
        if l == 0 and not want_input:
            break
        delta = delta @ W.T
        if l > 0:
            delta = delta * cache[l - 1][1]
        else:
            dx = delta
    return grad, dx


def forward(p: ParameterParticle, x, mask: Optional[DropoutMask] = None) -> np.ndarray:
    """Class probabilities (benign, malware) for one sample or a batch of rows."""
    X, single = _as_batch(p.arch, x)
    logits, _ = _forward(p.arch, p.flat, X, mask)
    probs = np.exp(log_softmax(logits, axis=1))
    return probs[0] if single else probs


def loss_grad_params(p, X, y, prior_precision=0.0, mask: Optional[DropoutMask] = None):
    """Mean cross-entropy plus ``prior_precision/2 * |theta|^2`` and its gradient."""
    return _loss_grad(p.arch, p.flat, X, y, prior_precision, mask)


def _loss_grad(arch, flat, X, y, prior_precision=0.0, mask=None):
    X, _ = _as_batch(arch, X)
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    if y.size != X.shape[0] or y.size == 0:
        raise DimensionMismatchError("batch must be nonempty with one label per row")
    logits, cache = _forward(arch, flat, X, mask)
    logp = log_softmax(logits, axis=1)
    m = y.size
    loss = -logp[np.arange(m), y].mean()
    dlogits = np.exp(logp)
    dlogits[np.arange(m), y] -= 1.0
    dlogits /= m
    grad, _ = _backward(arch, flat, cache, dlogits)
    if prior_precision:
        loss += 0.5 * prior_precision * float(flat @ flat)
        grad += prior_precision * flat
    return float(loss), grad


def input_gradients(p: ParameterParticle, X, target) -> np.ndarray:
    """Per-row gradient of cross-entropy(target) with respect to the dense input."""
    X, single = _as_batch(p.arch, X)
    target = np.broadcast_to(np.asarray(target, dtype=np.int64), (X.shape[0],))
    logits, cache = _forward(p.arch, p.flat, X)
    dlogits = np.exp(log_softmax(logits, axis=1))
    dlogits[np.arange(X.shape[0]), target] -= 1.0
    _, dx = _backward(p.arch, p.flat, cache, dlogits, want_params=False, want_input=True)
    return dx[0] if single else dx


def loss_grad_input(p: ParameterParticle, x, target_label) -> np.ndarray:
    return input_gradients(p, x, target_label)


def benign_prob_jacobian(p: ParameterParticle, X) -> np.ndarray:
    """d p(benign | x) / d x, per row."""
    Xb, single = _as_batch(p.arch, X)
    probs = forward(p, Xb)
    jac = -probs[:, :1] * input_gradients(p, Xb, 0)
    return jac[0] if single else jac


def mean_input_gradient(particles: Sequence[ParameterParticle], X, target) -> np.ndarray:
    """Average of per-particle input gradients, reduced in particle order."""
    total = None
    for p in particles:
        g = input_gradients(p, X, target)
        total = g if total is None else total + g
    return total / len(particles)


def posterior_grad_input(post, x, target_label, n=None, seed=0) -> np.ndarray:
    """Input gradient of the loss averaged over ``n`` particles drawn from ``post``."""
    return mean_input_gradient(post.sample_particles(n, seed), x, target_label)
