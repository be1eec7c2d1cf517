"""
Training posteriors on synthetic malware features
=================================================

A small version of the reference dataset: sparse binary features where one
block fires mostly for malware, one mostly for benign software, and the rest
never fires during training.
"""
# %%

from bayesmal import (METHODS, MlpArchitecture, TrainConfig, classification_metrics, predict_proba,
                      reference_synth_config, score_dataset, split, synth_generate, train)

data = synth_generate(reference_synth_config(dim=64, n_benign=800, n_malware=200, seed=0))
train_set, test_set = split(data, 0.8, seed=1)
print(data.provenance, "train", train_set.class_counts(), "test", test_set.class_counts())

# %%
# Fit every method with the same architecture and a short schedule.

arch = MlpArchitecture(data.dim, (32, 16))
cfg = TrainConfig(epochs=10, n_particles=5)
posteriors = {}
for m in METHODS:
    c = cfg if m != "SVGD" else TrainConfig(epochs=10, n_particles=5, learning_rate=0.25)
    posteriors[m] = train(m, train_set, arch, c)

# %%
# Clean performance: all methods separate the classes.

for m, post in posteriors.items():
    p_mal = predict_proba(post, test_set, n=5).mean(axis=1)[:, 1]
    met = classification_metrics(p_mal, test_set.y)
    print(f"{m:9s} auc={met.auc:.3f} f1={met.f1:.3f}")

# %%
# Uncertainty on clean benign test samples is low for every method.

benign = test_set.where(0)
for m, post in posteriors.items():
    s = score_dataset(post, benign, n=5)
    print(f"{m:9s} mean pe={s.pe.mean():.4f} mean mi={s.mi.mean():.4f}")
