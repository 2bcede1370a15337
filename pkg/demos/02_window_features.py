"""
Windows and feature vectors
===========================

Cut each 90-day series into k-day windows and turn every window into an
m + 19 feature vector.
"""
import numpy as np

from stepwise.cohort import impute_cohort
from stepwise.features import build_sequences, feature_columns, partition_windows
from stepwise.synth import VOCABULARIES, SynthConfig, generate_cohort

series = impute_cohort(generate_cohort(SynthConfig(n_participants=40, seed=2)).series(6))

# the trailing partial window is dropped: 90 days at k=7 gives 12 steps
for k in (3, 7, 30):
    print(f"k={k:2d} -> {partition_windows(90, k).window_count} windows")

data = build_sequences(series, k=7, crt=0.05, vocabularies=VOCABULARIES)
print("dataset shape (instances, steps, features):", data.X.shape)
print("positive rate: %.2f" % data.y.mean())

# one window of the first participant, feature by feature
for name, value in zip(data.feature_names, data.X[0, 0]):
    print(f"  {name:32s} {value:10.1f}")

# named subsets of the full vector
for fs in ("slots", "slots+demo", "all"):
    print(fs, "->", len(feature_columns(6, fs)), "features")

# more slots per day only changes the slot block
for m in (4, 6, 12):
    d = build_sequences(impute_cohort(generate_cohort(SynthConfig(n_participants=5)).series(m)),
                        7, 0.05, VOCABULARIES)
    print(f"m={m:2d} -> feature size {d.X.shape[2]}")
