"""
From a raw flow CSV to a trained classifier
===========================================

The real input is a CIC-DDoS2019 style export. Here a synthetic frame with
the same column layout stands in, so the script runs anywhere.
"""

import tempfile
from pathlib import Path

from fasa import anfis, metrics, preprocess
from fasa.synthetic import write_cic_like

work = Path(tempfile.mkdtemp())
write_cic_like(work / "raw.csv", n_benign=800, n_syn=6000, seed=1)

raw = preprocess.load_csv(work / "raw.csv")
print("raw:", raw.n_rows, "rows,", len(raw.columns), "numeric columns")

result = preprocess.run_pipeline(raw)
for s in result.stages:
    print("  %-22s rows %6d -> %6d   cols %3d -> %3d" % (
        s["stage"], s["rows_before"], s["rows_after"], s["cols_before"], s["cols_after"]))

# the synthetic classes separate on one column, so the ranking is one-hot here
print("top of the forest ranking:")
for name, score in result.ranking[:5]:
    print("  %.3f  %s" % (score, name))

ds = result.dataset
print("kept features:", list(ds.columns))

# scale with min/max seen on the training split only
split = preprocess.stratified_split(ds.labels, test_fraction=0.2, seed=0)
train, test = ds.take_rows(~split), ds.take_rows(split)
scaler = preprocess.fit_scaler(train)
Xtr = preprocess.apply_scaler(train, scaler).X
Xte = preprocess.apply_scaler(test, scaler).X

model = anfis.init_grid(Xtr.shape[1], feature_names=ds.columns)
anfis.fit(model, Xtr, train.numeric_labels(), anfis.TrainConfig(epochs=10))
pred, prob = anfis.classify(model, Xte)
r = metrics.evaluate(pred, test.numeric_labels(), prob)
print("held-out: accuracy %.4f  recall %.4f  fpr %.4f  auc %.4f" % (r.accuracy, r.recall, r.fpr, r.auc))
