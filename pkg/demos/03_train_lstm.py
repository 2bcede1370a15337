"""
Training the recurrent model
============================

Fit the embedding + 2-layer LSTM on one cross-validation rotation and
compare it with logistic regression on the single-window features.
"""
import numpy as np

from stepwise.cohort import impute_cohort, label
from stepwise.experiments import kfold
from stepwise.features import CohortStats, build_sequences
from stepwise.model import ModelConfig, predict, train, train_logreg
from stepwise.synth import VOCABULARIES, SynthConfig, generate_cohort

series = impute_cohort(generate_cohort(SynthConfig(seed=0)).series(6))
y = [label(s.bmi_start, s.bmi_end, 0.05) for s in series]

# participant-grouped folds; rotation 0 tests on fold 0, validates on fold 1
plan = kfold(y, [s.participant_id for s in series], folds=10, seed=0)
tr, va, te = plan.rotation(0)
stats = CohortStats.from_series([series[i] for i in tr])  # training split only

weekly = build_sequences(series, 7, 0.05, VOCABULARIES, stats)
config = ModelConfig(feature_dim=weekly.X.shape[2], epochs=60)
model = train(weekly.X[tr], weekly.y[tr], weekly.X[va], weekly.y[va], config)
print("best epoch:", model.best_epoch)
for rec in model.curve[::10]:
    print(f"  epoch {rec.epoch:3d} loss {rec.loss:.3f} val acc {rec.val_accuracy:.3f}")

_, lstm_pred = predict(model, weekly.X[te])
print("LSTM test accuracy: %.3f" % np.mean(lstm_pred == weekly.y[te]))

# the baseline sees one window covering the whole period
flat = build_sequences(series, 90, 0.05, VOCABULARIES, stats)
lr = train_logreg(flat.flat()[tr], flat.y[tr])
print("LR   test accuracy: %.3f" % np.mean(lr.predict(flat.flat()[te]) == flat.y[te]))
print("majority rate:      %.3f" % max(weekly.y[te].mean(), 1 - weekly.y[te].mean()))
