"""Approximate-Bayesian malware classifiers, uncertainty scoring and evasion attacks."""

__version__ = "0.1.0"

from .data import (BENIGN, MALWARE, Dataset, DriftConfig, FeatureVector, SynthConfig, drift_shift,
                   load_dataset, reference_blocks, reference_synth_config, save_dataset, split,
                   synth_generate)
from .errors import (BayesmalError, ChecksumError, DataError, DatasetFormatError,
                     DimensionMismatchError, ModelFileError, NumericError, ShapeMismatchError,
                     UnrecognizedFormatError)
from .network import (DropoutMask, MlpArchitecture, ParameterParticle, forward, init_params,
                      loss_grad_input, loss_grad_params, posterior_grad_input)
from .inference import (METHODS, GaussianVariationalParams, Posterior, TrainConfig, posterior_predict,
                        predict_proba, svgd_kernel, train, train_dropout, train_ensemble, train_map,
                        train_svgd, train_vi)
from .uncertainty import (PredictiveSample, UncertaintyScores, mutual_information, predictive_entropy,
                          predictive_mean, score_dataset)
from .attacks import (AttackSpec, PerturbationResult, attack_bca, attack_grosse, attack_pgd_l1,
                      attack_unbounded_gradient, batch_attack, immutable_bounds,
                      true_positive_malware)
from .evaluation import (RocCurve, classification_metrics, detection_auc, diversity, drift_report,
                         roc_auc)
from .model_io import load_posterior, save_posterior

__all__ = [
    "__version__",
    "BENIGN",
    "MALWARE",
    "Dataset",
    "DriftConfig",
    "FeatureVector",
    "SynthConfig",
    "drift_shift",
    "load_dataset",
    "reference_blocks",
    "reference_synth_config",
    "save_dataset",
    "split",
    "synth_generate",
    "BayesmalError",
    "ChecksumError",
    "DataError",
    "DatasetFormatError",
    "DimensionMismatchError",
    "ModelFileError",
    "NumericError",
    "ShapeMismatchError",
    "UnrecognizedFormatError",
    "DropoutMask",
    "MlpArchitecture",
    "ParameterParticle",
    "forward",
    "init_params",
    "loss_grad_input",
    "loss_grad_params",
    "posterior_grad_input",
    "METHODS",
    "GaussianVariationalParams",
    "Posterior",
    "TrainConfig",
    "posterior_predict",
    "predict_proba",
    "svgd_kernel",
    "train",
    "train_dropout",
    "train_ensemble",
    "train_map",
    "train_svgd",
    "train_vi",
    "PredictiveSample",
    "UncertaintyScores",
    "mutual_information",
    "predictive_entropy",
    "predictive_mean",
    "score_dataset",
    "AttackSpec",
    "PerturbationResult",
    "attack_bca",
    "attack_grosse",
    "attack_pgd_l1",
    "attack_unbounded_gradient",
    "batch_attack",
    "immutable_bounds",
    "true_positive_malware",
    "RocCurve",
    "classification_metrics",
    "detection_auc",
    "diversity",
    "drift_report",
    "roc_auc",
    "load_posterior",
    "save_posterior",
]
