"""
Learning a model from outcome-labeled episodes
==============================================

Generate a cohort from a known model, fit it by segmentation, backward
labeling and EM, then compare the chain parameters.
"""
import warnings

import numpy as np

from sslgm.cohort import CohortSpec, generate_cohort, reference_model
from sslgm.learning import FitConfig, backward_labeling_em

truth = reference_model(separation=2.0)
cohort = generate_cohort(CohortSpec(1000, truth, seed=0))

with warnings.catch_warnings():
    # small cohorts leave the rarely visited ICU state with few steps
    warnings.simplefilter("ignore")
    fit = backward_labeling_em(cohort.records, FitConfig(N=3))

est, ref = fit.model.components[0].chain, truth.components[0].chain
print("p0   fitted", np.round(est.p0, 3), "true", ref.p0)
print("p21  fitted %.3f true %.3f" % (est.P[1, 0], ref.P[1, 0]))
# with q near 1 most dwells last one step, so r is only weakly identified
print("r, q fitted %.3f, %.3f true %.3f, %.3f" % (est.r[1], est.q[1], ref.r[1], ref.q[1]))
print("EM log-likelihood trace (last 3):", np.round(fit.diagnostics["em_loglik_traces"][0][-3:], 2))
print("state occupancy:", fit.diagnostics["occupancy"])
