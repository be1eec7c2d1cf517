"""
Predictive entropy and mutual information
=========================================

Both scores start from a stack of per-particle class probabilities.
Predictive entropy measures how unsure the averaged prediction is; mutual
information keeps only the part caused by particles disagreeing.
"""
# %%
import numpy as np

from bayesmal import PredictiveSample, mutual_information, predictive_entropy

# %%
# Two particles that agree on a coin flip: high entropy, no disagreement.

agree = PredictiveSample(np.array([[0.5, 0.5], [0.5, 0.5]]))
print("agree    pe=%.4f mi=%.4f" % (predictive_entropy(agree), mutual_information(agree)))

# %%
# Two confident particles that contradict each other: the mean is still a
# coin flip, but now all of the entropy is epistemic.

clash = PredictiveSample(np.array([[1.0, 0.0], [0.0, 1.0]]))
print("clash    pe=%.4f mi=%.4f" % (predictive_entropy(clash), mutual_information(clash)))

# %%
# A single particle never carries mutual information.

single = PredictiveSample(np.array([[0.3, 0.7]]))
print("single   pe=%.4f mi=%.4f" % (predictive_entropy(single), mutual_information(single)))

# %%
# Random stacks stay inside 0 <= MI <= PE <= ln 2.

rng = np.random.default_rng(0)
p = rng.random((1000, 10))
for row in p:
    s = np.column_stack([row, 1 - row])
    assert 0 <= mutual_information(s) <= predictive_entropy(s) <= np.log(2) + 1e-12
print("bounds hold on 1000 random stacks")
