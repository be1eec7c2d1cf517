"""Monte Carlo predictive entropy and mutual information (natural log, nats).

All functions accept either one ``n x C`` matrix of per-particle class
probabilities or a stack ``m x n x C`` and reduce over the particle axis.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import entr

from .errors import DataError

LN2 = float(np.log(2.0))


@dataclass(frozen=True)
class PredictiveSample:
    probs: np.ndarray

    def __post_init__(self):
        probs = np.array(self.probs, dtype=np.float64, copy=True)
        if probs.ndim != 2 or probs.shape[0] < 1:
            raise DataError("PredictiveSample needs an n x C matrix with n >= 1")
        probs.flags.writeable = False
        object.__setattr__(self, "probs", probs)

    @property
    def n(self) -> int:
        return self.probs.shape[0]


def _probs(s):
    p = s.probs if isinstance(s, PredictiveSample) else np.asarray(s, dtype=np.float64)
    if p.ndim < 2 or p.shape[-2] < 1:
        raise DataError("need at least one probability row")
    return p


def entropy(p, axis=-1):
    """-sum p log p with 0 log 0 = 0."""
    return entr(p).sum(axis=axis)


def predictive_mean(s) -> np.ndarray:
    return _probs(s).mean(axis=-2)


def predictive_entropy(s):
    return entropy(predictive_mean(s))


def expected_entropy(s):
    """Mean over particles of each particle's own predictive entropy."""
    return entropy(_probs(s)).mean(axis=-1)


def mutual_information(s, clamp=True):
    p = _probs(s)
    pe = entropy(p.mean(axis=-2))
    mi = pe - entropy(p).mean(axis=-1)
    if clamp:
        mi = np.clip(mi, 0.0, pe)
    return mi


@dataclass
class UncertaintyScores:
    """Per-sample mean malware probability, predictive entropy and MI."""

    p_malware: np.ndarray
    pe: np.ndarray
    mi: np.ndarray
    method: str = ""
    n: int = 0
    labels: np.ndarray = field(default=None, repr=False)

    def __len__(self):
        return len(self.pe)

    def score(self, name: str) -> np.ndarray:
        if name == "pe":
            return self.pe
        if name == "mi":
            return self.mi
        if name == "pred_prob":
            return self.p_malware
        raise DataError(f"unknown score {name!r}")


def scores_from_probs(probs, method="", n=None, labels=None) -> UncertaintyScores:
    """``probs`` is ``m x n x 2``."""
    probs = np.asarray(probs, dtype=np.float64)
    mean = probs.mean(axis=1)
    return UncertaintyScores(
        p_malware=mean[:, 1],
        pe=entropy(mean),
        mi=mutual_information(probs),
        method=method,
        n=probs.shape[1] if n is None else n,
        labels=labels,
    )


def score_dataset(post, d, n=None, seed=0) -> UncertaintyScores:
    """Score every sample of ``d`` under ``post``.

    The same ``n`` particle draws are used for every sample, so each record
    depends only on its own sample.
    """
    from .inference import predict_proba

    probs = predict_proba(post, d, n=n, seed=seed)
    return scores_from_probs(probs, post.method, probs.shape[1], labels=np.asarray(d.y))
