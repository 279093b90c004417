"""
Streaming ICU risk
==================

A scoring session updates the state posterior one observation at a time.
The risk is the posterior-weighted probability of eventual ICU absorption.
"""
import numpy as np

from sslgm.cohort import CohortSpec, generate_cohort, reference_model
from sslgm.inference import ScoringSession, score_episode, smooth_states

model = reference_model(2.0, p0=(0.2, 0.3, 0.3, 0.15, 0.05), p_down=0.5, duration=(2.0, 0.5))
cohort = generate_cohort(CohortSpec(300, model, seed=11))
rec, truth = next((r, t) for r, t in zip(cohort.records, cohort.truth) if r.F == 1 and r.J > 6)

session = ScoringSession(model, rec.q)
print("prior risk %.3f" % session.risk)
for t, y in enumerate(rec.Y, start=1):
    R = session.update(y)
    print("t=%2d  true state %d  risk %.3f  most likely state %d"
          % (t, truth.step_labels()[t - 1], R, np.argmax(session.state_posterior) + 1))

# offline, smoothing uses the whole episode
sm = smooth_states(model, rec.q, rec.Y)
print("smoothed states", sm.states, "\ntrue states     ", truth.step_labels())
print(score_episode(model, rec).to_csv().splitlines()[0])
