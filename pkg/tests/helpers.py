"""Shared oracles for the test suite (independent of the package internals)."""
import numpy as np

from bayesmal.network import MlpArchitecture, init_params, ParameterParticle


def central_diff(f, x, h=1e-5):
    x = np.array(x, dtype=np.float64)
    g = np.empty_like(x)
    for i in range(x.size):
        old = x.flat[i]
        x.flat[i] = old + h
        up = f(x)
        x.flat[i] = old - h
        down = f(x)
        x.flat[i] = old
        g.flat[i] = (up - down) / (2 * h)
    return g


def rel_err(a, b):
    """Normwise relative error: max |a - b| / max(|a|_inf, |b|_inf)."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0))
    return 0.0 if scale == 0.0 else float(np.abs(a - b).max() / scale)


def random_net(rng, max_in=16, max_hidden=8):
    d = int(rng.integers(1, max_in + 1))
    h = int(rng.integers(1, max_hidden + 1))
    arch = MlpArchitecture(d, (h,))
    p = init_params(arch, int(rng.integers(1 << 30)))
    # random biases so the net is not symmetric about zero
    flat = p.flat.copy()
    for _, bs in arch.slices():
        flat[bs] = rng.normal(0, 0.3, bs.stop - bs.start)
    return ParameterParticle(arch, flat)


def brute_auc(neg, pos):
    """Mann-Whitney pair counting with half credit for ties."""
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(neg) * len(pos))
