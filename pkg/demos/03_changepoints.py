"""
Energy-statistic change points
==============================

E-divisive proposes change points with a permutation test. E-Agglo then
merges segments while that improves the goodness of fit.
"""
import numpy as np

from sslgm.changepoint import (Segmentation, SegmentationConfig, e_agglo, e_divisive, energy_divergence,
                               segment_series)

rng = np.random.default_rng(0)
Y = np.vstack([rng.normal(0, 1, (60, 2)), rng.normal(3, 1, (40, 2)), rng.normal(0, 3, (50, 2))])

# the divergence is near zero for samples from the same law
print("same law      %.3f" % energy_divergence(Y[:30], Y[30:60]))
print("shifted mean  %.3f" % energy_divergence(Y[:60], Y[60:100]))

cfg = SegmentationConfig(seed=0)
cps = e_divisive(Y, cfg)
print("e-divisive change points:", cps)

refined = e_agglo(Y, Segmentation.from_changepoints(cps, len(Y)), cfg)
print("after e-agglo:", refined.changepoints)

# the combined procedure, capped at two segments
print("capped:", segment_series(Y, cfg, max_segments=2).changepoints)
