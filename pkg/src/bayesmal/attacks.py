"""Feature-space evasion attacks against a posterior.

The attacker is white-box: it differentiates the loss averaged over the
posterior's particles and targets the benign class. Each attack runs on a
whole batch of rows at once; rows never interact, so per-sample results do not
depend on batch composition.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _parallel
from .data import BENIGN, MALWARE, Dataset, FeatureVector
from .errors import DataError, DimensionMismatchError
from .network import benign_prob_jacobian, forward, mean_input_gradient

FAMILIES = ("pgd_l1", "bca", "grosse", "unbounded_gradient")
_CHUNK = 256


@dataclass(frozen=True)
class AttackSpec:
    """What the attacker may do.

    ``epsilon`` is the L1 budget for pgd_l1, the maximum number of added
    features for bca/grosse, and the iteration count for unbounded_gradient.
    ``delta_lb``/``delta_ub`` narrow the default per-feature bounds
    (add_only: [0, 1 - x]; box: [-x, 1 - x]); they never widen them.
    """

    family: str
    epsilon: float
    step_size: float = 1.0
    iterations: int = 50
    direction: Optional[str] = None
    delta_lb: Optional[np.ndarray] = None
    delta_ub: Optional[np.ndarray] = None
    n_particles_for_gradient: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DataError(f"unknown attack family {self.family!r}")
        if self.direction is None:
            object.__setattr__(self, "direction",
                               "box" if self.family == "unbounded_gradient" else "add_only")
        if self.direction not in ("add_only", "box"):
            raise DataError(f"unknown direction {self.direction!r}")
        if not self.epsilon >= 0:
            raise DataError("epsilon must be >= 0")
        if self.family in ("bca", "grosse") and self.direction != "add_only":
            raise DataError(f"{self.family} only supports add_only perturbations")
        if self.direction == "add_only" and self.delta_lb is not None and np.any(np.asarray(self.delta_lb) < 0):
            raise DataError("add_only forbids negative lower bounds")
        if self.step_size <= 0 or self.iterations < 0:
            raise DataError("step_size must be positive and iterations non-negative")

    @property
    def tag(self) -> str:
        return f"attack:{self.family}:{format_epsilon(self.epsilon)}"


def immutable_bounds(dim: int, ranges) -> tuple:
    """(delta_lb, delta_ub) vectors that pin the given [start, stop) column ranges.

    Elsewhere the vectors are loose (-1 / +1) so the default box still applies.
    """
    lb, ub = np.full(dim, -1.0), np.ones(dim)
    for start, stop in ranges:
        lb[start:stop] = ub[start:stop] = 0.0
    lb.flags.writeable = ub.flags.writeable = False
    return lb, ub


def format_epsilon(eps) -> str:
    eps = float(eps)
    return str(int(eps)) if eps.is_integer() else repr(eps)


@dataclass
class PerturbationResult:
    original: FeatureVector
    adversarial: FeatureVector
    flipped_indices: np.ndarray
    l1_cost: float
    evaded: bool
    iterations: int


@dataclass
class AttackSummary:
    n: int
    n_evaded: int

    @property
    def undefined(self) -> bool:
        return self.n == 0

    @property
    def evasion_rate(self) -> Optional[float]:
        return None if self.n == 0 else self.n_evaded / self.n

    def __str__(self):
        return f"{self.n_evaded}/{self.n}" + (" (undefined)" if self.undefined else "")


# --------------------------------------------------------------------- helpers

def _particles(post, spec):
    return post.sample_particles(spec.n_particles_for_gradient, spec.seed)


def benign_probability(particles, X) -> np.ndarray:
    total = np.zeros(X.shape[0])
    for p in particles:
        total += forward(p, X)[:, BENIGN]
    return total / len(particles)


def benign_gradient(particles, X) -> np.ndarray:
    """Ascent direction for the benign objective: -mean d CE(benign)/dx."""
    return -mean_input_gradient(particles, X, BENIGN)


def _bounds(spec, X0):
    if spec.direction == "add_only":
        lb = np.zeros_like(X0)
        ub = 1.0 - X0
    else:
        lb = -X0
        ub = 1.0 - X0
    # user bounds narrow the default box, they never widen it
    if spec.delta_lb is not None:
        lb = np.maximum(lb, np.broadcast_to(np.asarray(spec.delta_lb, dtype=np.float64), X0.shape))
    if spec.delta_ub is not None:
        ub = np.minimum(ub, np.broadcast_to(np.asarray(spec.delta_ub, dtype=np.float64), X0.shape))
    if np.any(lb > 0) or np.any(ub < 0):
        raise DataError("perturbation bounds must satisfy delta_lb <= 0 <= delta_ub")
    return lb, ub


def _normalised(g):
    scale = np.abs(g).max(axis=1, keepdims=True)
    return np.divide(g, scale, out=np.zeros_like(g), where=scale > 0)


def project_l1_box(v, lb, ub, eps, iters=100):
    """Euclidean projection of each row of ``v`` onto {lb <= d <= ub, |d|_1 <= eps}.

    With lb <= 0 <= ub the solution is clip(soft_threshold(v, tau), lb, ub)
    for the smallest tau >= 0 meeting the budget; tau is found by bisection
    and the upper end of the bracket is returned, so the budget always holds.
    """
    v = np.atleast_2d(v)
    out = np.clip(v, lb, ub)
    over = np.abs(out).sum(axis=1) > eps
    if not over.any():
        return out
    vo, lo_b, hi_b = v[over], lb[over], ub[over]

    def shrink(tau):
        return np.clip(np.sign(vo) * np.maximum(np.abs(vo) - tau[:, None], 0.0), lo_b, hi_b)

    lo = np.zeros(vo.shape[0])
    hi = np.abs(vo).max(axis=1)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        too_big = np.abs(shrink(mid)).sum(axis=1) > eps
        lo = np.where(too_big, mid, lo)
        hi = np.where(too_big, hi, mid)
    out[over] = shrink(hi)
    return out


def binarize_delta(X0, delta, eps):
    """Flip the floor(eps) largest coordinates whose |delta| exceeds 0.5."""
    k = int(np.floor(eps + 1e-9))
    mag = np.where(np.abs(delta) > 0.5, np.abs(delta), 0.0)
    out = X0.copy()
    if k <= 0:
        return out
    for r in range(X0.shape[0]):
        cand = np.flatnonzero(mag[r])
        if cand.size > k:
            # stable order on ties: larger magnitude first, then lower index
            cand = cand[np.lexsort((cand, -mag[r, cand]))[:k]]
        out[r, cand] = X0[r, cand] + np.sign(delta[r, cand])
    return out


# --------------------------------------------------------------------- batched cores

def _pgd_l1(particles, X0, spec, binary):
    m = X0.shape[0]
    lb, ub = _bounds(spec, X0)
    eps = float(spec.epsilon)
    best = X0.copy()
    best_score = benign_probability(particles, X0)
    iters = np.zeros(m, dtype=int)
    if eps == 0 or spec.iterations == 0:
        return best, iters
    delta = np.zeros_like(X0)
    for t in range(spec.iterations):
        g = benign_gradient(particles, X0 + delta)
        delta = project_l1_box(delta + spec.step_size * _normalised(g), lb, ub, eps)
        cand = binarize_delta(X0, delta, eps) if binary else X0 + delta
        score = benign_probability(particles, cand)
        better = score > best_score
        best[better] = cand[better]
        best_score[better] = score[better]
        iters[:] = t + 1
    return best, iters


def _greedy_add(particles, X0, spec, use_jacobian):
    m = X0.shape[0]
    _, ub = _bounds(spec, X0)
    X = X0.copy()
    active = np.ones(m, dtype=bool)
    iters = np.zeros(m, dtype=int)
    for _ in range(int(np.floor(spec.epsilon + 1e-9))):
        active &= benign_probability(particles, X) <= 0.5
        if not active.any():
            break
        rows = np.flatnonzero(active)
        Xa = X[rows]
        if use_jacobian:
            score = sum(benign_prob_jacobian(p, Xa) for p in particles) / len(particles)
        else:
            score = benign_gradient(particles, Xa)
        addable = (Xa == 0.0) & (ub[rows] >= 1.0) & (score > 0.0)
        score = np.where(addable, score, -np.inf)
        pick = np.argmax(score, axis=1)
        ok = addable[np.arange(rows.size), pick]
        X[rows[ok], pick[ok]] = 1.0
        iters[rows[ok]] += 1
        active[rows[~ok]] = False
    return X, iters


def _unbounded(particles, X0, spec, binary):
    m = X0.shape[0]
    lb, ub = _bounds(spec, X0)
    lo, hi = X0 + lb, X0 + ub
    X = X0.copy()
    out = X0.copy()
    done = benign_probability(particles, X0) > 0.5
    iters = np.zeros(m, dtype=int)
    for t in range(int(np.floor(spec.epsilon + 1e-9))):
        if done.all():
            break
        rows = np.flatnonzero(~done)
        g = benign_gradient(particles, X[rows])
        X[rows] = np.clip(X[rows] + spec.step_size * _normalised(g), lo[rows], hi[rows])
        cand = np.where(X[rows] > 0.5, 1.0, 0.0) if binary else X[rows]
        out[rows] = cand
        iters[rows] = t + 1
        done[rows] = benign_probability(particles, cand) > 0.5
    return out, iters


def _run(post, X0, spec, binary):
    X0 = np.atleast_2d(np.asarray(X0, dtype=np.float64))
    if X0.shape[1] != post.arch.input_dim:
        raise DimensionMismatchError(
            f"input has {X0.shape[1]} features, model expects {post.arch.input_dim}")
    if spec.family in ("bca", "grosse") and not binary:
        raise DataError(f"{spec.family} requires binary features")
    particles = _particles(post, spec)

    def run_chunk(s):
        Xc = X0[s:s + _CHUNK]
        if spec.family == "pgd_l1":
            return _pgd_l1(particles, Xc, spec, binary)
        if spec.family == "bca":
            return _greedy_add(particles, Xc, spec, use_jacobian=False)
        if spec.family == "grosse":
            return _greedy_add(particles, Xc, spec, use_jacobian=True)
        return _unbounded(particles, Xc, spec, binary)

    parts = _parallel.ordered_map(run_chunk, range(0, X0.shape[0], _CHUNK))
    if not parts:
        return X0.copy(), np.zeros(0, dtype=int), particles
    adv = np.vstack([a for a, _ in parts])
    iters = np.concatenate([i for _, i in parts])
    return adv, iters, particles


def _results(X0, adv, iters, particles):
    evaded = benign_probability(particles, adv) > 0.5 if len(adv) else np.zeros(0, dtype=bool)
    out = []
    for r in range(X0.shape[0]):
        diff = adv[r] - X0[r]
        out.append(PerturbationResult(
            original=FeatureVector.from_dense(X0[r]),
            adversarial=FeatureVector.from_dense(adv[r]),
            flipped_indices=np.flatnonzero(diff),
            l1_cost=float(np.abs(diff).sum()),
            evaded=bool(evaded[r]),
            iterations=int(iters[r]),
        ))
    return out


def _attack_one(post, x, spec, family, binary):
    if spec.family != family:
        raise DataError(f"spec is for {spec.family!r}, not {family!r}")
    x0 = x.to_dense() if isinstance(x, FeatureVector) else np.asarray(x, dtype=np.float64)
    if binary is None:
        binary = bool(np.all((x0 == 0.0) | (x0 == 1.0)))
    adv, iters, particles = _run(post, x0[None, :], spec, binary)
    return _results(x0[None, :], adv, iters, particles)[0]


def attack_pgd_l1(post, x, spec: AttackSpec, y=MALWARE, binary=True) -> PerturbationResult:
    """L1-bounded PGD ascent on log p(benign), then top-floor(eps) binarisation."""
    return _attack_one(post, x, spec, "pgd_l1", binary)


def attack_bca(post, x, spec: AttackSpec, y=MALWARE) -> PerturbationResult:
    """Greedy bit additions along the largest positive benign gradient."""
    return _attack_one(post, x, spec, "bca", True)


def attack_grosse(post, x, spec: AttackSpec, y=MALWARE) -> PerturbationResult:
    """Greedy bit additions along the largest forward derivative of p(benign)."""
    return _attack_one(post, x, spec, "grosse", True)


def attack_unbounded_gradient(post, x, spec: AttackSpec, y=MALWARE, binary=None) -> PerturbationResult:
    """Box-clipped gradient steps; ``spec.epsilon`` is the iteration budget."""
    return _attack_one(post, x, spec, "unbounded_gradient", binary)


def batch_attack(post, d: Dataset, spec: AttackSpec):
    """Attack every row of ``d``; returns (adversarial Dataset, results, summary)."""
    binary = d.profile == "binary"
    X0 = d.dense()
    if len(d) == 0:
        empty = d.subset(np.arange(0), spec.tag)
        return empty, [], AttackSummary(0, 0)
    adv, iters, particles = _run(post, X0, spec, binary)
    results = _results(X0, adv, iters, particles)
    adv_set = Dataset.from_dense(adv, np.full(len(d), MALWARE), d.profile, spec.tag)
    summary = AttackSummary(len(d), sum(r.evaded for r in results))
    return adv_set, results, summary


def true_positive_malware(post, d: Dataset, n=None, seed=0) -> Dataset:
    """Malware rows that ``post`` (MC mean) already labels as malware."""
    from .inference import predict_proba

    mal = d.where(MALWARE)
    if len(mal) == 0:
        return mal
    p_mal = predict_proba(post, mal, n=n, seed=seed).mean(axis=1)[:, MALWARE]
    return mal.subset(np.flatnonzero(p_mal >= 0.5))
