"""
Hidden-state responses
======================

How strongly does each week move the top LSTM layer, and which weeks
depend on the daily-average feature?
"""
import numpy as np

from stepwise.cohort import impute_cohort, label
from stepwise.experiments import kfold
from stepwise.features import CohortStats, build_sequences
from stepwise.interpret import ablate_feature, expected_response
from stepwise.model import ModelConfig, train
from stepwise.synth import VOCABULARIES, SynthConfig, generate_cohort

series = impute_cohort(generate_cohort(SynthConfig(seed=4)).series(6))
y = [label(s.bmi_start, s.bmi_end, 0.05) for s in series]
tr, va, _ = kfold(y, [s.participant_id for s in series], 10, 4).rotation(0)
data = build_sequences(series, 7, 0.05, VOCABULARIES,
                       CohortStats.from_series([series[i] for i in tr]))
model = train(data.X[tr], data.y[tr], data.X[va], data.y[va],
              ModelConfig(feature_dim=25, epochs=60, seed=4))

Xn = model.normalize(data.X)
profile = expected_response(model, Xn)
print("mean |delta h| per week (top layer):")
print(np.round(profile.values.mean(axis=1), 3))

# zero one standardized feature (its training mean) and compare
for name in ("daily_avg_steps", "demo_adults_in_household"):
    res = ablate_feature(model, Xn, data.feature_names.index(name))
    print(f"{name:26s} aggregate diff {res.aggregate:.3f}  top weeks {res.top_steps(2)}")
