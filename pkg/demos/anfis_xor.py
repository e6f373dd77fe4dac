"""
Fitting a small ANFIS to the XOR pattern
========================================

Two inputs, two Gaussian sets each, four rules. A single hyperplane cannot
split XOR, but four local linear rules glued together by the firing
strengths can.
"""

import numpy as np

from fasa import anfis, metrics
from fasa.synthetic import xor_2d

X, y = xor_2d(n=2000, seed=0)
print("samples:", X.shape, "positives:", int(y.sum()))

# grid partition over [0, 1]^2, zero consequents to start
model = anfis.init_grid(2, mfs_per_input=2)
print("rules:", model.n_rules)

# each epoch: least-squares consequents, then an ADAM step on the premises
report = anfis.fit(model, X, y, anfis.TrainConfig(epochs=30, learning_rate=0.01))
print("loss first/last epoch: %.4f / %.4f" % (report.losses[0], report.losses[-1]))

pred, prob = anfis.classify(model, X)
result = metrics.evaluate(pred, y, prob)
print("accuracy %.4f  auc %.4f" % (result.accuracy, result.auc))

# which rule fires hardest at each corner of the square
corners = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
for x, w in zip(corners, anfis.firing_strengths(model, corners)):
    print(x, "-> rule", int(np.argmax(w)), "p=%.3f" % anfis.predict_proba(model, x))

# the model document round-trips exactly
text = anfis.serialize(model)
assert anfis.serialize(anfis.deserialize(text)) == text
print("snapshot", anfis.snapshot_id(model))
