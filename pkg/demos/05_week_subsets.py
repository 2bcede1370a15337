"""
Week-subset augmentation
========================

Every sequence keeps its first and last week plus each combination of
M - 2 of the ten middle weeks.
"""
from math import comb

from stepwise.cohort import impute_cohort
from stepwise.experiments import augment
from stepwise.features import build_sequences
from stepwise.synth import VOCABULARIES, SynthConfig, generate_cohort

# 275 participants at this seed leave 323 usable instances
series = impute_cohort(generate_cohort(SynthConfig(n_participants=275, seed=12)).series(6))
data = build_sequences(series, 7, 0.05, VOCABULARIES)
print("instances:", len(data))

for M in (12, 11, 10):
    aug = augment(data, M)
    print(f"M={M}: {len(aug):6d} sequences of {aug.steps} steps "
          f"({comb(10, M - 2)} per instance)")

# one participant's subsequences stay together for fold assignment
aug = augment(data, 10)
print("groups preserved:", len(set(aug.groups)) == len(set(data.groups)))
