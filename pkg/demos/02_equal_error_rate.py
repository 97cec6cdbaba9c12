"""
Equal error rate
================

Scores are "higher means bona fide". The EER is where the false-alarm and
miss rates cross; between two operating points it is interpolated.
"""

import numpy as np

from tlsej.augment import TEST_CONDITIONS
from tlsej.evaluate import ScoreSet, compute_eer, condition_report

print(compute_eer([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]))   # perfect
print(compute_eer([0.6, 0.4, 0.5, 0.3], [1, 1, 0, 0]))   # interleaved

# two gaussian classes one standard deviation apart
rng = np.random.default_rng(1)
bona, spoof = rng.normal(1, 1, 2000), rng.normal(0, 1, 2000)
scores = np.r_[bona, spoof]
labels = np.r_[np.ones(2000, int), np.zeros(2000, int)]
eer, theta = compute_eer(scores, labels)
print("EER %.3f at threshold %.3f (theory ~0.309)" % (eer, theta))

# a report over the 19 test conditions, one column per system
def fake_system(shift):
    out = {}
    for i, cond in enumerate(TEST_CONDITIONS):
        gap = shift + 0.1 * (i % 5)
        s = np.r_[rng.normal(gap, 1, 200), rng.normal(0, 1, 200)]
        out[cond] = ScoreSet([f"u{j}" for j in range(400)], s, np.r_[np.ones(200, int), np.zeros(200, int)])
    return out

report = condition_report({"baseline": fake_system(1.0), "enhanced": fake_system(2.0)})
print(report.to_text())
