"""
Labeling segments backward from the outcome
===========================================

The final observation of an episode reveals the absorbing state. Earlier
segments get labels that respect the +/-1 transition structure, and
divergence to exemplar segments resolves ambiguous positions.
"""
from sslgm.cohort import CohortSpec, generate_cohort, reference_model
from sslgm.labeling import label_episodes, segment_majority_accuracy
from sslgm.learning import FitConfig, segment_episode

cohort = generate_cohort(CohortSpec(200, reference_model(separation=2.0), seed=3))
cfg = FitConfig(N=3)

episodes = []
for rec in cohort.records:
    seg = segment_episode(rec.Y, cfg.N, cfg.segmentation, rec.id)
    episodes.append((rec.id, rec.Y, seg, rec.F))
labeled = label_episodes(episodes, cfg.N, cfg.segmentation.zeta)

for lab, truth in list(zip(labeled, cohort.truth))[:5]:
    print(lab.episode, "labels", lab.labels, "durations", lab.durations, "| truth", truth.S, truth.T)

acc = segment_majority_accuracy(labeled, [t.step_labels() for t in cohort.truth])
print("segment majority accuracy %.3f" % acc)
