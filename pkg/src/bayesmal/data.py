"""Sparse labeled datasets: loading, synthesis, stratified splits and drift.

On disk a dataset is libsvm-style text with a mandatory dimension header::

    #dim 4
    #provenance synthetic
    1 1:1 3:1
    0 2:1

Indices are 1-based in the file and 0-based in memory.
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from ._fileio import atomic_write_text
from .errors import DataError, DatasetFormatError, DimensionMismatchError

BENIGN = 0
MALWARE = 1
PROFILES = ("binary", "continuous")


@dataclass(frozen=True)
class FeatureVector:
    """One sparse sample: sorted 0-based indices and their values."""

    dim: int
    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        val = np.asarray(self.values, dtype=np.float64)
        if idx.shape != val.shape or idx.ndim != 1:
            raise DataError("indices and values must be 1-D arrays of equal length")
        if idx.size:
            if idx[0] < 0 or idx[-1] >= self.dim:
                raise DataError(f"feature index out of range for dim {self.dim}")
            if np.any(np.diff(idx) <= 0):
                raise DataError("feature indices must be strictly increasing")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)

    @classmethod
    def from_dense(cls, x) -> "FeatureVector":
        x = np.asarray(x, dtype=np.float64)
        idx = np.flatnonzero(x)
        return cls(x.size, idx, x[idx])

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.indices] = self.values
        return out

    def __eq__(self, other):
        if not isinstance(other, FeatureVector):
            return NotImplemented
        return (
            self.dim == other.dim
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.values, other.values)
        )

    def __hash__(self):
        return hash((self.dim, self.indices.tobytes(), self.values.tobytes()))


@dataclass(frozen=True)
class Dataset:
    """Immutable labeled sample matrix (CSR) with a feature profile tag."""

    X: sp.csr_matrix
    y: np.ndarray
    profile: str = "binary"
    provenance: str = ""

    def __post_init__(self):
        X = sp.csr_matrix(self.X, dtype=np.float64, copy=True)
        X.sum_duplicates()
        X.eliminate_zeros()
        X.sort_indices()
        y = np.asarray(self.y, dtype=np.int8).reshape(-1)
        if X.shape[0] != y.size:
            raise DataError(f"{X.shape[0]} samples but {y.size} labels")
        if y.size and not np.isin(y, (BENIGN, MALWARE)).all():
            raise DataError("labels must be 0 (benign) or 1 (malware)")
        if self.profile not in PROFILES:
            raise DataError(f"unknown profile {self.profile!r}")
        if self.profile == "binary" and X.nnz and not np.all(X.data == 1.0):
            raise DataError("binary profile requires feature values in {0, 1}")
        X.data.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @classmethod
    def from_dense(cls, X, y, profile="binary", provenance="") -> "Dataset":
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return cls(sp.csr_matrix(X), y, profile, provenance)

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def __len__(self):
        return self.X.shape[0]

    def __getitem__(self, i) -> FeatureVector:
        row = self.X.getrow(i)
        return FeatureVector(self.dim, row.indices, row.data)

    @property
    def samples(self) -> list:
        return [self[i] for i in range(len(self))]

    def dense(self) -> np.ndarray:
        return self.X.toarray()

    def subset(self, rows, provenance=None) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(
            self.X[rows], self.y[rows], self.profile,
            self.provenance if provenance is None else provenance,
        )

    def where(self, label: int) -> "Dataset":
        return self.subset(np.flatnonzero(self.y == label))

    def class_counts(self) -> tuple:
        return int(np.sum(self.y == BENIGN)), int(np.sum(self.y == MALWARE))

    def require_both_classes(self):
        n_ben, n_mal = self.class_counts()
        if n_ben == 0 or n_mal == 0:
            raise DataError(
                f"training requires both classes, got {n_ben} benign / {n_mal} malware"
            )

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.profile == other.profile
            and self.X.shape == other.X.shape
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.X.indptr, other.X.indptr)
            and np.array_equal(self.X.indices, other.X.indices)
            and np.array_equal(self.X.data, other.X.data)
        )

    __hash__ = None


def concat(datasets: Sequence[Dataset], provenance="") -> Dataset:
    dims = {d.dim for d in datasets}
    if len(dims) != 1:
        raise DimensionMismatchError(f"cannot concatenate dims {sorted(dims)}")
    X = sp.vstack([d.X for d in datasets], format="csr")
    y = np.concatenate([d.y for d in datasets])
    return Dataset(X, y, datasets[0].profile, provenance)


# --------------------------------------------------------------------- text I/O

def _parse(lines: Iterable[str], profile: str) -> Dataset:
    if profile not in PROFILES:
        raise DataError(f"unknown profile {profile!r}")
    dim = None
    provenance = ""
    labels, indptr, indices, values = [], [0], [], []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r\n").strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, rest = line[1:].partition(" ")
            if key == "dim":
                if dim is not None:
                    raise DatasetFormatError("duplicate #dim header", lineno)
                try:
                    dim = int(rest.strip())
                except ValueError:
                    raise DatasetFormatError(f"bad #dim value {rest.strip()!r}", lineno) from None
                if dim < 1:
                    raise DatasetFormatError("#dim must be positive", lineno)
            elif key == "provenance":
                provenance = rest.strip()
            continue
        if dim is None:
            raise DatasetFormatError("missing '#dim <n>' header before first sample", lineno)
        tokens = line.split()
        try:
            label = int(tokens[0])
        except ValueError:
            raise DatasetFormatError(f"bad label {tokens[0]!r}", lineno) from None
        if label not in (BENIGN, MALWARE):
            raise DatasetFormatError(f"label must be 0 or 1, got {label}", lineno)
        row = {}
        for tok in tokens[1:]:
            i_str, sep, v_str = tok.partition(":")
            if not sep:
                raise DatasetFormatError(f"expected <idx>:<val>, got {tok!r}", lineno)
            try:
                idx = int(i_str) - 1
                val = float(v_str)
            except ValueError:
                raise DatasetFormatError(f"malformed entry {tok!r}", lineno) from None
            if idx < 0 or idx >= dim:
                raise DatasetFormatError(
                    f"index {idx + 1} out of range for dim {dim}", lineno)
            if idx in row:
                raise DatasetFormatError(f"duplicate index {idx + 1}", lineno)
            if not np.isfinite(val):
                raise DatasetFormatError(f"non-finite value {v_str!r}", lineno)
            if profile == "binary" and val not in (0.0, 1.0):
                raise DatasetFormatError(
                    f"binary profile requires values in {{0,1}}, got {v_str}", lineno)
            if val != 0.0:
                row[idx] = val
        for idx in sorted(row):
            indices.append(idx)
            values.append(row[idx])
        indptr.append(len(indices))
        labels.append(label)
    if dim is None:
        raise DatasetFormatError("missing '#dim <n>' header")
    X = sp.csr_matrix(
        (np.array(values, dtype=np.float64), np.array(indices, dtype=np.int64),
         np.array(indptr, dtype=np.int64)),
        shape=(len(labels), dim),
    )
    return Dataset(X, np.array(labels, dtype=np.int8), profile, provenance)


def load_dataset(path, profile="binary") -> Dataset:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return _parse(fh, profile)


def loads_dataset(text: str, profile="binary") -> Dataset:
    return _parse(io.StringIO(text, newline=""), profile)


def dumps_dataset(d: Dataset) -> str:
    out = [f"#dim {d.dim}"]
    if d.provenance:
        out.append(f"#provenance {d.provenance}")
    X = d.X
    for i in range(len(d)):
        lo, hi = X.indptr[i], X.indptr[i + 1]
        parts = [str(int(d.y[i]))]
        for j, v in zip(X.indices[lo:hi], X.data[lo:hi]):
            parts.append(f"{j + 1}:{'1' if v == 1.0 else repr(float(v))}")
        out.append(" ".join(parts))
    return "\n".join(out) + "\n"


def save_dataset(d: Dataset, path):
    atomic_write_text(path, dumps_dataset(d))


# --------------------------------------------------------------------- synthesis

@dataclass
class SynthConfig:
    """Per-class Bernoulli feature-activation model."""

    dim: int
    n_benign: int
    n_malware: int
    p_benign: np.ndarray
    p_malware: np.ndarray
    seed: int = 0

    def __post_init__(self):
        self.p_benign = np.asarray(self.p_benign, dtype=np.float64)
        self.p_malware = np.asarray(self.p_malware, dtype=np.float64)
        if self.dim < 1:
            raise DataError("dim must be positive")
        if self.n_benign < 0 or self.n_malware < 0:
            raise DataError("sample counts must be non-negative")
        for name, p in (("p_benign", self.p_benign), ("p_malware", self.p_malware)):
            if p.shape != (self.dim,):
                raise DataError(f"{name} must have length {self.dim}")
            if np.any(p < 0) or np.any(p > 1) or not np.all(np.isfinite(p)):
                raise DataError(f"{name} entries must lie in [0, 1]")


def synth_generate(cfg: SynthConfig) -> Dataset:
    rng = np.random.default_rng(cfg.seed)
    ben = rng.random((cfg.n_benign, cfg.dim)) < cfg.p_benign
    mal = rng.random((cfg.n_malware, cfg.dim)) < cfg.p_malware
    X = np.vstack([ben, mal]).astype(np.float64)
    y = np.concatenate([np.zeros(cfg.n_benign), np.ones(cfg.n_malware)])
    return Dataset(sp.csr_matrix(X), y, "binary", f"synthetic:seed={cfg.seed}")


# Feature layout of the reference synthetic corpus, as fractions of dim.
# indicator blocks carry the class signal; the tail block never fires in
# training data and is where novel (drifted) feature usage lands.
# (block name, share of dim, benign activation range, malware activation range).
# The "unseen" block is never active in clean data; drift and attacks can use it.
REFERENCE_LAYOUT = (
    ("malware_indicators", 0.125, (0.0, 0.03), (0.2, 0.5)),
    ("benign_indicators", 0.125, (0.2, 0.5), (0.0, 0.03)),
    ("unseen", 0.75, (0.0, 0.0), (0.0, 0.0)),
)
REFERENCE_LAYOUT_SEED = 17


def reference_synth_config(dim=128, n_benign=4000, n_malware=1000, seed=0) -> SynthConfig:
    """Desk-scale stand-in for a DREBIN-like binary corpus.

    Activation probabilities are a fixed design (drawn from a constant layout
    seed); ``seed`` only controls the sampled feature vectors.
    """
    rng = np.random.default_rng(REFERENCE_LAYOUT_SEED)
    p_ben = np.zeros(dim)
    p_mal = np.zeros(dim)
    for (name, _, (blo, bhi), (mlo, mhi)) in REFERENCE_LAYOUT:
        lo, hi = reference_blocks(dim)[name]
        p_ben[lo:hi] = rng.uniform(blo, bhi, hi - lo)
        p_mal[lo:hi] = rng.uniform(mlo, mhi, hi - lo)
    return SynthConfig(dim, n_benign, n_malware, p_ben, p_mal, seed)


def reference_blocks(dim=128) -> dict:
    """Block name -> (start, stop) column range under REFERENCE_LAYOUT."""
    bounds = np.cumsum([0] + [int(round(f * dim)) for _, f, _, _ in REFERENCE_LAYOUT])
    bounds[-1] = dim
    return {row[0]: (int(bounds[k]), int(bounds[k + 1])) for k, row in enumerate(REFERENCE_LAYOUT)}


# --------------------------------------------------------------------- split / drift

def split(d: Dataset, train_fraction: float, seed=0) -> tuple:
    """Stratified train/test partition.

    The train size is round(train_fraction * n); it is shared out across the
    classes by largest remainder so both sides keep the input class ratio.
    """
    n = len(d)
    if n == 0:
        raise DataError("cannot split an empty dataset")
    if not 0.0 < train_fraction < 1.0:
        raise DataError("train_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    n_train = int(np.floor(train_fraction * n + 0.5))
    classes = [c for c in (BENIGN, MALWARE) if np.any(d.y == c)]
    counts = np.array([np.sum(d.y == c) for c in classes])
    quota = counts * n_train / n
    take = np.floor(quota).astype(int)
    remainder = quota - take
    for k in sorted(range(len(classes)), key=lambda k: (-remainder[k], classes[k])):
        if take.sum() >= n_train:
            break
        take[k] += 1
    train_rows, test_rows = [], []
    for c, k in zip(classes, take):
        rows = rng.permutation(np.flatnonzero(d.y == c))
        train_rows.append(rows[:k])
        test_rows.append(rows[k:])
    train_rows = np.sort(np.concatenate(train_rows))
    test_rows = np.sort(np.concatenate(test_rows))
    if train_rows.size == 0 or test_rows.size == 0:
        raise DataError(
            f"train_fraction {train_fraction} leaves an empty side "
            f"({train_rows.size} train / {test_rows.size} test)")
    for c, cnt in zip(classes, counts):
        if cnt >= 2 and (not np.any(d.y[train_rows] == c) or not np.any(d.y[test_rows] == c)):
            raise DataError(f"train_fraction {train_fraction} leaves class {c} empty on one side")
    return d.subset(train_rows), d.subset(test_rows)


@dataclass
class DriftConfig:
    flip_rate: float = 0.0
    novel_block: Optional[tuple] = None
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.flip_rate <= 1.0:
            raise DataError("flip_rate must lie in [0, 1]")
        if self.novel_block is not None:
            start, length, prob = self.novel_block
            self.novel_block = (int(start), int(length), float(prob))
            if not 0.0 <= prob <= 1.0:
                raise DataError("novel_block activation probability must lie in [0, 1]")


def drift_shift(d: Dataset, cfg: DriftConfig) -> Dataset:
    """Perturb the malware rows: Bernoulli bit flips, then novel-block activation."""
    if d.profile != "binary":
        raise DataError("drift_shift requires a binary-profile dataset")
    if cfg.novel_block is not None:
        start, length, _ = cfg.novel_block
        if start < 0 or length < 0 or start + length > d.dim:
            raise DataError(f"novel_block [{start}, {start + length}) outside dim {d.dim}")
    rng = np.random.default_rng(cfg.seed)
    mal = np.flatnonzero(d.y == MALWARE)
    dense = d.X[mal].toarray()
    if cfg.flip_rate > 0.0:
        flips = rng.random(dense.shape) < cfg.flip_rate
        dense = np.where(flips, 1.0 - dense, dense)
    if cfg.novel_block is not None:
        start, length, prob = cfg.novel_block
        on = rng.random((dense.shape[0], length)) < prob
        dense[:, start:start + length] = np.maximum(dense[:, start:start + length], on)
    X = d.X.tolil(copy=True)
    if mal.size:
        X[mal] = dense
    tag = f"drift:flip={cfg.flip_rate}:block={cfg.novel_block}:seed={cfg.seed}"
    return Dataset(X.tocsr(), d.y, d.profile, tag)
