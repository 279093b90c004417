"""
Evaluating risk scores
======================

Compare the model's peak risk against a logistic regression on summary
features. Then pick an operating point and measure warning lead time.
"""
import warnings

import numpy as np

from sslgm.cohort import CohortSpec, generate_cohort, reference_model
from sslgm.evaluation import (LogisticBaseline, macro_pr_auc, operating_point, pr_auc, summarize,
                              summary_features, timeliness)
from sslgm.inference import score_episode
from sslgm.learning import FitConfig, backward_labeling_em

truth = reference_model(separation=2.0)
train = generate_cohort(CohortSpec(1000, truth, seed=0)).records
test = generate_cohort(CohortSpec(500, truth, seed=1)).records
with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    model = backward_labeling_em(train, FitConfig(N=3)).model

y = np.array([r.F for r in test])
series = [score_episode(model, r).R[1:] for r in test]
scores = [summarize(R) for R in series]
lr = LogisticBaseline.fit([summary_features(r.Y) for r in train], [r.F for r in train])
baseline = lr.predict([summary_features(r.Y) for r in test])

print("ICU PR-AUC: model %.3f  logistic regression %.3f" % (pr_auc(scores, y), pr_auc(baseline, y)))
print("macro ICU/discharge PR-AUC: %.3f" % macro_pr_auc(scores, y))

# with three states, deterioration jumps straight to ICU, so alerts rarely precede it
thr = operating_point(scores, y, "tpr", 0.5)
tm = timeliness(series, thr, [r.J for r in test], y)
print("threshold %.3f: TPR %.2f PPV %.2f mean lead %.1f h" % (thr, tm.tpr, tm.ppv, tm.mean_hours))
