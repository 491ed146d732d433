"""Species confusion matrix, per-class metrics and one-vs-rest ROC AUC."""
import numpy as np

from citruslens.dataset import SPECIES
from citruslens.metrics import binary_auc, classification_report, confusion_matrix

rng = np.random.default_rng(1)
names = SPECIES.names

# %% A mostly-correct classifier with a couple of look-alike confusions
truth = [names[i % 5] for i in range(250)]
pred = list(truth)
pred[4] = "Tangerine"  # a Tangelo called Tangerine
pred[9] = "Tangerine"
pred[5] = "Tangelo"  # a Tangerine called Tangelo
scores = []
for t in truth:
    logits = rng.normal(0, 1, 5)
    logits[names.index(t)] += 2.5
    p = np.exp(logits)
    scores.append(p / p.sum())

cm = confusion_matrix(truth, pred, SPECIES)
print(cm.counts)
report = classification_report(cm, scores=scores, truth=truth)
print("accuracy", report.accuracy, "macro F1", round(report.macro.f1, 4))
print("weighted ROC AUC", round(report.roc_auc, 4))

# %% AUC is an exact fraction: the share of (positive, negative) pairs ranked correctly
auc = binary_auc([0.9, 0.8, 0.8, 0.3], [True, False, True, False])
print("binary AUC", auc, float(auc))
