"""Acceptance criteria AC1-AC10, run at their stated tolerances.

The summary section printed at the end of the pytest run lists PASS/FAIL
per criterion.
"""
import io
import json
import math
import time
from dataclasses import replace

import numpy as np
import pytest
from scipy import integrate, stats

from bayesmal.attacks import AttackSpec, attack_bca, benign_probability
from bayesmal.cli import run_command
from bayesmal.data import MALWARE, split
from bayesmal.errors import ChecksumError, ModelFileError, ShapeMismatchError, UnrecognizedFormatError
from bayesmal.evaluation import drift_report, roc_auc
from bayesmal.experiment import build_dataset, count_detection_cells, reference_config, reproduce
from bayesmal.inference import (METHODS, Posterior, TrainConfig, gaussian_kl, mean_pairwise_distance,
                                posterior_predict, train, train_map, train_svgd)
from bayesmal.model_io import dumps_posterior, load_posterior, loads_posterior, save_posterior
from bayesmal.network import (MlpArchitecture, ParameterParticle, forward, init_params,
                              loss_grad_input, loss_grad_params)
from bayesmal.uncertainty import LN2, expected_entropy, mutual_information, predictive_entropy

from helpers import brute_auc, central_diff, rel_err

REFERENCE_BUDGET_S = 300.0


@pytest.fixture(scope="module")
def reference(tmp_path_factory):
    out = tmp_path_factory.mktemp("reference")
    t0 = time.perf_counter()
    result = reproduce(reference_config(), out)
    elapsed = time.perf_counter() - t0
    return result, out, elapsed


def _random_small_net(rng):
    d = int(rng.integers(1, 17))
    h = int(rng.integers(1, 9))
    arch = MlpArchitecture(d, (h,))
    flat = init_params(arch, int(rng.integers(1 << 30))).flat.copy()
    for _, bs in arch.slices():
        flat[bs] = rng.normal(0, 0.3, bs.stop - bs.start)
    return ParameterParticle(arch, flat)


def test_ac1_gradient_correctness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        p = _random_small_net(rng)
        X = rng.integers(0, 2, (5, p.arch.input_dim)).astype(float)
        y = rng.integers(0, 2, 5)
        _, g = loss_grad_params(p, X, y, prior_precision=0.01)
        fd = central_diff(lambda v: loss_grad_params(ParameterParticle(p.arch, v), X, y, 0.01)[0], p.flat)
        worst = max(worst, rel_err(g, fd))
        x = rng.normal(size=p.arch.input_dim)
        t = int(rng.integers(2))
        gi = loss_grad_input(p, x, t)
        fdi = central_diff(lambda v: -math.log(forward(p, v)[t]), x)
        worst = max(worst, rel_err(gi, fdi))
    elapsed = time.perf_counter() - t0
    print(f"AC1 worst relative error {worst:.2e}, {elapsed:.2f}s")
    assert worst < 1e-5
    assert elapsed < 30.0


def test_ac2_svgd_reductions(separable):
    arch = MlpArchitecture(4, (16,))
    cfg = TrainConfig(epochs=100, n_particles=1, seed=3)
    a, b = [], []
    train_map(separable, arch, cfg, on_step=lambda s, P: a.append(P.copy()))
    train_svgd(separable, arch, cfg, on_step=lambda s, P: b.append(P.copy()))
    assert len(a) == len(b) >= 200
    assert max(np.max(np.abs(u - v)) for u, v in zip(a, b)) <= 1e-10

    start = init_params(arch, 11)
    twins = train_svgd(separable, arch, replace(cfg, epochs=20, n_particles=2, svgd_gamma=0.0),
                       init=[start, start])
    assert twins.particles[0] == twins.particles[1]

    base = replace(cfg, epochs=20, n_particles=5, seed=1)
    spread = mean_pairwise_distance(train_svgd(separable, arch, base))
    tight = mean_pairwise_distance(train_svgd(separable, arch, replace(base, svgd_gamma=0.0)))
    print(f"AC2 mean pairwise distance gamma=1 {spread:.4f} vs gamma=0 {tight:.4f}")
    assert spread > tight


def test_ac3_uncertainty_identities():
    rng = np.random.default_rng(7)
    for k in range(10_000):
        n = int(rng.integers(1, 21))
        p = rng.random(n)
        if k % 7 == 0:
            p = np.round(p)
        probs = np.column_stack([p, 1.0 - p])
        pe = predictive_entropy(probs)
        mi = mutual_information(probs)
        assert 0.0 <= mi <= pe <= LN2 + 1e-12
        assert abs(mutual_information(probs, clamp=False) + expected_entropy(probs) - pe) <= 1e-12


def _linear_posterior(w, c):
    d = len(w)
    arch = MlpArchitecture(d, (d,))
    V = np.zeros((d, 2))
    V[:, 0] = w
    b2 = np.array([c - 10.0 * np.sum(w), 0.0])
    p = ParameterParticle.from_layers(arch, [(np.eye(d), np.full(d, 10.0)), (V, b2)])
    return Posterior("MAP", arch, [p])


def test_ac4_oracle_equivalences():
    rng = np.random.default_rng(4)
    for _ in range(400):
        neg = np.round(rng.random(int(rng.integers(1, 26))), int(rng.integers(1, 3)))
        pos = np.round(rng.random(int(rng.integers(1, 26))), int(rng.integers(1, 3)))
        assert abs(roc_auc(neg, pos).auc - brute_auc(neg, pos)) <= 1e-12

    for _ in range(300):
        d = int(rng.integers(2, 13))
        post = _linear_posterior(rng.normal(0, 1, d), -5.0)
        x = rng.integers(0, 2, d).astype(float)
        start = benign_probability(post.particles, x[None])[0]
        best, best_j = start, None
        if start <= 0.5:
            for j in np.flatnonzero(x == 0):
                cand = x.copy()
                cand[j] = 1.0
                pb = benign_probability(post.particles, cand[None])[0]
                if pb > best:
                    best, best_j = pb, j
        r = attack_bca(post, x, AttackSpec("bca", 1))
        assert r.flipped_indices.tolist() == ([] if best_j is None else [best_j])

    for mu, sq, sp in [(0.3, 0.5, 1.0), (-1.2, 2.0, 0.7), (0.0, 0.1, 3.0), (2.0, 1.0, 1.0)]:
        q, pr = stats.norm(mu, sq), stats.norm(0.0, sp)
        numeric, _ = integrate.quad(lambda t: q.pdf(t) * (q.logpdf(t) - pr.logpdf(t)),
                                    mu - 12 * sq, mu + 12 * sq, epsabs=1e-12, epsrel=1e-12, limit=200)
        assert abs(float(gaussian_kl(mu, sq, sp)) - numeric) <= 1e-6


def test_ac5_clean_performance(reference):
    result, _, elapsed = reference
    clean = result.report["clean"]
    for m in METHODS:
        print(f"AC5 {m}: auc {clean[m]['auc']:.4f} f1 {clean[m]['f1']:.4f}")
        assert clean[m]["auc"] >= 0.95
        assert clean[m]["f1"] >= 0.90
    print(f"AC5 full reference pipeline {elapsed:.1f}s")
    assert elapsed < REFERENCE_BUDGET_S
    ds = result.report["dataset"]
    assert ds["dim"] == 128 and sum(ds["train_class_counts"]) + sum(ds["test_class_counts"]) == 5000


def test_ac6_detection_trends(reference):
    result, _, _ = reference
    rows = result.report["detection"]["pgd_l1"]
    assert len(rows) == 3
    for eps, row in rows.items():
        map_pe = row["MAP"]["pe"]
        others = [row[m][s] for m in METHODS if m != "MAP" for s in ("pe", "mi")]
        print(f"AC6 eps={eps}: MAP pe {map_pe:.3f}, SVGD mi {row['SVGD']['mi']:.3f}")
        assert all(map_pe <= v for v in others)
        assert row["SVGD"]["mi"] >= 0.85
        assert row["SVGD"]["mi"] - map_pe >= 0.10


def test_ac7_diversity_trend(reference):
    result, _, _ = reference
    values = result.report["diversity"]["values"]
    print("AC7 " + " ".join(f"{m}={v:.4f}" for m, v in values.items()))
    assert values["SVGD"] > values["Dropout"]
    assert values["SVGD"] > values["VI"]
    assert values["MAP"] == 0.0


def test_ac8_drift(reference):
    result, _, _ = reference
    svgd = result.report["drift"]["methods"]["SVGD"]
    print(f"AC8 SVGD drifted mean pe {svgd['drifted_mean']['pe']:.4f} "
          f"vs reference q95 {svgd['thresholds']['pe']:.4f}")
    assert svgd["drifted_mean"]["pe"] > svgd["thresholds"]["pe"]
    assert svgd["drift_flag"] is True
    cfg = reference_config()
    _, test_set = split(build_dataset(cfg), cfg.train_fraction, cfg.seeds["split"])
    ref = test_set.where(MALWARE)
    same = drift_report(result.posteriors["SVGD"], ref, ref, n=cfg.n_inference, seed=cfg.seeds["score"])
    assert same.drift_flag is False


def test_ac9_persistence(separable, tmp_path):
    arch = MlpArchitecture(4, (8, 4))
    cfg = TrainConfig(epochs=2, n_particles=3)
    probe = np.array([1.0, 0.0, 1.0, 0.0])
    for m in METHODS:
        post = train(m, separable, arch, cfg)
        path = tmp_path / f"{m}.bmal"
        save_posterior(post, path)
        back = load_posterior(path)
        assert back.method == m and back.particles == post.particles and back.vi == post.vi
        assert (posterior_predict(back, probe, n=3, seed=1).probs.tobytes()
                == posterior_predict(post, probe, n=3, seed=1).probs.tobytes())
        blob = dumps_posterior(post)
        assert blob == path.read_bytes()
        with pytest.raises(UnrecognizedFormatError):
            loads_posterior(b"NOPE!" + blob[5:])
        corrupt = bytearray(blob)
        corrupt[-9] ^= 0x10
        with pytest.raises(ChecksumError):
            loads_posterior(bytes(corrupt))
        with pytest.raises((ShapeMismatchError, ChecksumError)):
            loads_posterior(blob[:-13])
        with pytest.raises(ModelFileError):
            loads_posterior(blob[:8])


def test_ac10_reproduce_determinism(reference, tmp_path):
    _, first, _ = reference
    out, err = io.StringIO(), io.StringIO()
    code = run_command(["reproduce", "--config", str(first / "run.json"), "--out", str(tmp_path),
                        "--quiet"], out, err)
    assert code == 0, err.getvalue()
    names = sorted(p.name for p in first.iterdir())
    assert names == sorted(p.name for p in tmp_path.iterdir())
    for name in names:
        assert (first / name).read_bytes() == (tmp_path / name).read_bytes(), name
    report = json.loads((first / "report.json").read_text())
    assert count_detection_cells(report) == 5 * 4 * 3 * 2
