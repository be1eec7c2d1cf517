"""
Adversarial malware and uncertainty-based detection
===================================================

We attack the malware a model already catches, then ask whether the
posterior's uncertainty separates the adversarial samples from clean benign
ones. A single deterministic network is confidently fooled; a particle
posterior tends to disagree with itself on the perturbed inputs.
"""
# %%

from bayesmal import (AttackSpec, MlpArchitecture, TrainConfig, batch_attack, detection_auc,
                      immutable_bounds, reference_blocks, reference_synth_config, score_dataset,
                      split, synth_generate, train, true_positive_malware)

dim = 64
data = synth_generate(reference_synth_config(dim=dim, n_benign=800, n_malware=200, seed=0))
train_set, test_set = split(data, 0.8, seed=1)
arch = MlpArchitecture(dim, (32, 16))
models = {
    "MAP": train("MAP", train_set, arch, TrainConfig(epochs=10)),
    "SVGD": train("SVGD", train_set, arch, TrainConfig(epochs=10, n_particles=5, learning_rate=0.25)),
}

# %%
# The attacker may only add features, and may not touch the benign-indicator
# block (a stand-in for problem-space constraints).

_, ub = immutable_bounds(dim, [reference_blocks(dim)["benign_indicators"]])
benign = test_set.where(0)
for m, post in models.items():
    clean = score_dataset(post, benign, n=5)
    tp = true_positive_malware(post, test_set, n=5)
    for eps in (5, 10):
        adv, _, summary = batch_attack(post, tp, AttackSpec("pgd_l1", eps, delta_ub=ub))
        s = score_dataset(post, adv, n=5)
        pe = detection_auc(clean, s, "pe").auc
        mi = detection_auc(clean, s, "mi").auc
        print(f"{m:5s} eps={eps:2d} evaded {summary}  pe-auc={pe:.3f}  mi-auc={mi:.3f}")
