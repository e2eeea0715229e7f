"""Training the morphology classifier.

Builds a labelled descriptor set from synthetic scenes, grid-searches the
random forest and compares it with the two-threshold rule on diameter and
eccentricity. Takes a couple of minutes; lower N_PER_CLASS to go faster.

    python tutorials/02_classify.py
"""
import numpy as np

from agglo.classify import confusion_matrix, grid_search, precision_recall, reference_train
from agglo.descriptors import DEFAULT_LAYOUT
from agglo.synth import dataset_arrays, gen_descriptor_dataset

N_PER_CLASS = 200

X, y = dataset_arrays(gen_descriptor_dataset(N_PER_CLASS, seed=0))
rng = np.random.default_rng(0)
perm = rng.permutation(len(y))
test, train = perm[: len(y) // 4], perm[len(y) // 4:]
print(f"{len(train)} training and {len(test)} held-out objects")

res = grid_search(X[train], y[train], seed=0, layout=DEFAULT_LAYOUT)
print("best combination:", res.best)
pred = res.forest.predict(X[test])
cm = confusion_matrix(pred, y[test])
prec, rec = precision_recall(cm)
print("forest confusion (rows truth, columns prediction):\n", cm)
print("precision", np.round(prec, 3), "recall", np.round(rec, 3))

# The reference rule: one diameter threshold, then one eccentricity threshold.
d, e = DEFAULT_LAYOUT.index("d"), DEFAULT_LAYOUT.index("e")
ref = reference_train(X[train, d], X[train, e], y[train])
ref_pred = ref.predict(X[test, d], X[test, e])
print(f"\nreference thresholds d < {ref.d_threshold:.1f} um -> primary, e > {ref.e_threshold:.3f} -> chain")
print("reference confusion:\n", confusion_matrix(ref_pred, y[test]))
print(f"accuracy: forest {np.mean(pred == y[test]):.3f}, reference {np.mean(ref_pred == y[test]):.3f}")

# A trained forest refuses feature vectors with a different layout.
text = res.forest.to_json()
print(f"\nserialized forest: {len(text) // 1024} KiB, layout fingerprint {res.forest.fingerprint}")
