"""Declarative experiment config and the end-to-end reproduce pipeline.

A config is a JSON document. Every random choice derives from ``seed`` via
fixed offsets (see ``ExperimentConfig.seeds``), so one file pins a run.
"""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from . import __version__
from ._fileio import atomic_write_text
from .attacks import (FAMILIES, AttackSpec, batch_attack, format_epsilon, immutable_bounds,
                      true_positive_malware)
from .data import (BENIGN, MALWARE, Dataset, DriftConfig, drift_shift, load_dataset,
                   reference_blocks, reference_synth_config, split, synth_generate)
from .errors import DataError
from .evaluation import (classification_metrics, detection_auc, diversity, drift_histogram_csv,
                         drift_report_from_scores)
from .inference import METHODS, TrainConfig, predict_proba, train
from .network import MlpArchitecture
from .uncertainty import score_dataset

SCHEMA_VERSION = 1
DETECTION_SCORES = ("pe", "mi")


@dataclass
class AttackGrid:
    family: str
    epsilons: list
    step_size: float = 1.0
    iterations: int = 50
    n_particles_for_gradient: Optional[int] = None

    def specs(self, seed, dim=None, immutable=()):
        """One AttackSpec per budget; ``immutable`` column ranges get zero-width bounds."""
        lb, ub = immutable_bounds(dim, immutable) if immutable else (None, None)
        for eps in self.epsilons:
            yield AttackSpec(self.family, float(eps), self.step_size, self.iterations,
                             delta_lb=lb if self.family == "unbounded_gradient" else None,
                             delta_ub=ub, n_particles_for_gradient=self.n_particles_for_gradient,
                             seed=seed)


@dataclass
class ExperimentConfig:
    """Everything ``reproduce`` needs.

    ``dataset`` is either ``{"source": "synthetic", "dim", "n_benign",
    "n_malware"}`` (the reference activation layout) or ``{"source": "file",
    "path", "profile"}``.
    """

    seed: int = 0
    dataset: dict = field(default_factory=lambda: {
        "source": "synthetic", "dim": 128, "n_benign": 4000, "n_malware": 1000})
    train_fraction: float = 0.8
    hidden_sizes: list = field(default_factory=lambda: [128, 64])
    methods: list = field(default_factory=lambda: list(METHODS))
    train: dict = field(default_factory=dict)
    train_overrides: dict = field(default_factory=dict)
    n_inference: int = 10
    attacks: list = field(default_factory=list)
    immutable_features: list = field(default_factory=list)
    diversity: dict = field(default_factory=lambda: {
        "source_method": "MAP", "family": "pgd_l1", "epsilon": None})
    drift: dict = field(default_factory=lambda: {
        "flip_rate": 0.0, "novel_block": "unseen", "novel_prob": 0.3, "score": "pe",
        "threshold_quantile": 0.95, "methods": None})
    output_dir: Optional[str] = None

    def __post_init__(self):
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown or not self.methods:
            raise DataError(f"unknown or empty method list: {unknown}")
        self.attacks = [a if isinstance(a, AttackGrid) else AttackGrid(**a) for a in self.attacks]
        for a in self.attacks:
            if a.family not in FAMILIES:
                raise DataError(f"unknown attack family {a.family!r}")
        if self.dataset.get("source") not in ("synthetic", "file"):
            raise DataError("dataset.source must be 'synthetic' or 'file'")
        self.train_config()
        for m in self.train_overrides:
            self.train_config(m)

    # seeds ---------------------------------------------------------------
    @property
    def seeds(self) -> dict:
        s = int(self.seed)
        return {"synth": s, "split": s + 1, "train": s, "attack": s + 2, "score": s + 3, "drift": s + 4}

    def train_config(self, method: Optional[str] = None) -> TrainConfig:
        """Shared training options, with any per-method overrides applied."""
        if method is not None and method not in METHODS:
            raise DataError(f"unknown method {method!r} in train_overrides")
        extra = dict(self.train)
        extra.update(self.train_overrides.get(method, {}) if method else {})
        extra.pop("seed", None)
        names = {f.name for f in fields(TrainConfig)}
        bad = sorted(set(extra) - names)
        if bad:
            raise DataError(f"unknown train options {bad}")
        extra.setdefault("n_particles", self.n_inference)
        return TrainConfig(seed=self.seeds["train"], **extra)

    def arch(self, input_dim) -> MlpArchitecture:
        return MlpArchitecture(int(input_dim), tuple(self.hidden_sizes))

    def immutable_ranges(self, dim) -> list:
        """Column ranges attackers may not touch; entries are block names or [start, stop]."""
        out = []
        for item in self.immutable_features:
            if isinstance(item, str):
                blocks = reference_blocks(dim)
                if item not in blocks:
                    raise DataError(f"unknown feature block {item!r}")
                out.append(blocks[item])
            else:
                start, stop = (int(v) for v in item)
                if not 0 <= start <= stop <= dim:
                    raise DataError(f"immutable range {item} outside [0, {dim}]")
                out.append((start, stop))
        return out

    # serialisation -------------------------------------------------------
    def to_dict(self, include_output=True) -> dict:
        d = asdict(self)
        if not include_output:
            d.pop("output_dir")
        return d

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if "config" in raw and "toolkit_version" in raw:
            raw = raw["config"]  # a run.json written by a previous run
        names = {f.name for f in fields(cls)}
        bad = sorted(set(raw) - names)
        if bad:
            raise DataError(f"unknown config keys {bad}")
        raw = copy.deepcopy(raw)
        base = cls()
        for key in ("diversity", "drift"):
            if key in raw:
                merged = dict(getattr(base, key))
                merged.update(raw[key])
                raw[key] = merged
        return cls(**raw)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise DataError("config must be a JSON object")
        return cls.from_dict(raw)


def reference_config(seed=0) -> ExperimentConfig:
    """The seeded desk-scale experiment used by the acceptance checks."""
    return ExperimentConfig(
        seed=seed,
        # SVGD divides each step by the particle count, so it gets n times the base rate
        train_overrides={"SVGD": {"learning_rate": 0.5}},
        immutable_features=["benign_indicators"],
        attacks=[
            AttackGrid("pgd_l1", [20, 30, 40], step_size=1.0, iterations=50),
            AttackGrid("bca", [10, 20, 30]),
            AttackGrid("grosse", [10, 20, 30]),
            AttackGrid("unbounded_gradient", [5, 10, 20], step_size=0.1),
        ],
    )


# --------------------------------------------------------------------- pipeline

@dataclass
class ExperimentResult:
    report: dict
    curves: dict          # filename -> csv text
    histograms: dict      # filename -> csv text
    posteriors: dict = field(repr=False, default_factory=dict)
    adversarial: dict = field(repr=False, default_factory=dict)


def build_dataset(cfg: ExperimentConfig) -> Dataset:
    ds = cfg.dataset
    if ds["source"] == "file":
        return load_dataset(ds["path"], ds.get("profile", "binary"))
    sc = reference_synth_config(int(ds.get("dim", 128)), int(ds.get("n_benign", 4000)),
                                int(ds.get("n_malware", 1000)), cfg.seeds["synth"])
    return synth_generate(sc)


def drift_config_for(cfg: ExperimentConfig, dim: int) -> DriftConfig:
    dr = cfg.drift
    block = dr.get("novel_block")
    if block == "unseen":
        start, stop = reference_blocks(dim)["unseen"]
        block = (start, stop - start, float(dr.get("novel_prob", 0.15)))
    elif block is not None:
        block = tuple(block)
    return DriftConfig(float(dr.get("flip_rate", 0.0)), block, cfg.seeds["drift"])


def _auc_or_none(benign_scores, adv_scores, name):
    if len(adv_scores) == 0:
        return None
    return detection_auc(benign_scores, adv_scores, name)


def run_experiment(cfg: ExperimentConfig, log=None) -> ExperimentResult:
    """synth/load -> split -> train -> clean metrics -> attacks -> detection AUCs
    -> diversity -> drift. Deterministic given the config."""
    say = log or (lambda msg: None)
    seeds = cfg.seeds
    data = build_dataset(cfg)
    data.require_both_classes()
    train_set, test_set = split(data, cfg.train_fraction, seeds["split"])
    arch = cfg.arch(data.dim)
    benign_test = test_set.where(BENIGN)
    n = cfg.n_inference

    posteriors: dict = {}
    clean: dict = {}
    benign_scores: dict = {}
    for m in cfg.methods:
        say(f"train {m}")
        post = train(m, train_set, arch, cfg.train_config(m))
        post.n_inference = n
        posteriors[m] = post
        p_mal = predict_proba(post, test_set, n=n, seed=seeds["score"]).mean(axis=1)[:, MALWARE]
        clean[m] = classification_metrics(p_mal, test_set.y).as_dict()
        benign_scores[m] = score_dataset(post, benign_test, n=n, seed=seeds["score"])

    tables: dict = {}
    curves: dict = {}
    adversarial: dict = {}
    for grid in cfg.attacks:
        fam_table = tables.setdefault(grid.family, {})
        for spec in grid.specs(seeds["attack"], data.dim, cfg.immutable_ranges(data.dim)):
            eps_key = format_epsilon(spec.epsilon)
            cell_row = fam_table.setdefault(eps_key, {})
            for m in cfg.methods:
                say(f"attack {grid.family} eps={eps_key} vs {m}")
                post = posteriors[m]
                tp = true_positive_malware(post, test_set, n=n, seed=seeds["score"])
                adv, _, summary = batch_attack(post, tp, spec)
                adversarial[(m, grid.family, eps_key)] = adv
                adv_scores = score_dataset(post, adv, n=n, seed=seeds["score"]) if len(adv) else []
                cell = {"n_attacked": summary.n, "evasion_rate": summary.evasion_rate}
                for score in DETECTION_SCORES:
                    roc = _auc_or_none(benign_scores[m], adv_scores, score)
                    cell[score] = None if roc is None else roc.auc
                    if roc is not None:
                        curves[f"roc_{m}_{grid.family}_{eps_key}_{score}.csv"] = roc.to_csv()
                cell_row[m] = cell

    report = {
        "schema_version": SCHEMA_VERSION,
        "toolkit_version": __version__,
        "seed": cfg.seed,
        "dataset": {
            "provenance": data.provenance,
            "dim": data.dim,
            "n_train": len(train_set),
            "n_test": len(test_set),
            "train_class_counts": list(train_set.class_counts()),
            "test_class_counts": list(test_set.class_counts()),
        },
        "methods": list(cfg.methods),
        "scores": list(DETECTION_SCORES),
        "clean": clean,
        "detection": tables,
    }

    # diversity on one shared adversarial set
    dv = cfg.diversity
    if cfg.attacks:
        fam = dv.get("family") or cfg.attacks[0].family
        grid = next((g for g in cfg.attacks if g.family == fam), None)
        if grid is None:
            raise DataError(f"diversity attack {fam!r} is not in the attack list")
        eps = dv.get("epsilon")
        eps_key = format_epsilon(max(grid.epsilons) if eps is None else eps)
        src = dv.get("source_method") or cfg.methods[0]
        adv = adversarial.get((src, fam, eps_key))
        if adv is None:
            raise DataError(f"no adversarial set for {src}/{fam}/{eps_key}")
        values = {}
        if len(adv):
            for m in cfg.methods:
                values[m] = diversity(posteriors[m], adv, n=n, seed=seeds["score"]).diversity
        report["diversity"] = {"source_method": src, "family": fam, "epsilon": eps_key,
                               "n_samples": len(adv), "n": n, "values": values}

    # drift on test malware
    histograms: dict = {}
    dr = cfg.drift
    ref_mal = test_set.where(MALWARE)
    if len(ref_mal):
        drifted = drift_shift(ref_mal, drift_config_for(cfg, data.dim))
        drift_out = {}
        reports = []
        for m in (dr.get("methods") or cfg.methods):
            post = posteriors[m]
            rs = score_dataset(post, ref_mal, n=n, seed=seeds["score"])
            ds_ = score_dataset(post, drifted, n=n, seed=seeds["score"])
            rep = drift_report_from_scores(rs, ds_, m, float(dr.get("threshold_quantile", 0.95)),
                                           dr.get("score", "pe"))
            drift_out[m] = rep.as_dict()
            reports.append(rep)
        for name in DETECTION_SCORES:
            histograms[f"drift_hist_{name}.csv"] = drift_histogram_csv(reports, name)
        report["drift"] = {"provenance": drifted.provenance, "n": len(drifted), "methods": drift_out}
    return ExperimentResult(report, curves, histograms, posteriors, adversarial)


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True, allow_nan=False) + "\n"


def run_record(cfg: ExperimentConfig) -> dict:
    return {
        "toolkit_version": __version__,
        "config": cfg.to_dict(include_output=False),
        "seeds": cfg.seeds,
    }


def write_outputs(cfg: ExperimentConfig, result: ExperimentResult, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "report.json", dumps_report(result.report))
    for name, text in {**result.curves, **result.histograms}.items():
        atomic_write_text(out / name, text)
    atomic_write_text(out / "run.json", json.dumps(run_record(cfg), indent=2, sort_keys=True) + "\n")
    return out


def reproduce(cfg: ExperimentConfig, out_dir=None, log=None) -> ExperimentResult:
    result = run_experiment(cfg, log)
    target = out_dir or cfg.output_dir
    if target is not None:
        write_outputs(cfg, result, target)
    return result


def count_detection_cells(report: dict) -> int:
    return sum(1 for fam in report["detection"].values() for row in fam.values()
               for cell in row.values() for s in report["scores"] if s in cell)
