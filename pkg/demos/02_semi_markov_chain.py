"""
The explicit-duration chain
===========================

Dwell times are shifted negative binomial draws. Transitions follow a
gambler's-ruin pattern with absorbing discharge (state 1) and ICU (state N).
"""
import numpy as np

from sslgm.semi_markov import (ChainParams, absorption_probs, fit_nb_mle, nb_duration_pmf, nb_hazard,
                               sample_superstate_path)

chain = ChainParams.gamblers_ruin(p0=(0.44, 0.54, 0.02), down=0.94, r=1.4541, q=0.839)
print("P =\n", chain.P)

# most ward stays last a single step; the hazard is high and nearly flat
k = np.arange(1, 7)
print("pmf    ", np.round(nb_duration_pmf(k, 1.4541, 0.839), 4))
print("hazard ", np.round(nb_hazard(6, 1.4541, 0.839), 4))

# absorption in ICU from each starting state, and the prior risk
h = absorption_probs(chain)
print("h =", h, " prior risk = %.4f" % (chain.p0 @ h))

# simulate episodes and refit the duration law from the transient dwells
dwells = []
icu = 0
for k in range(20000):
    seq, _ = sample_superstate_path(chain, k)
    icu += seq.states[-1] == 3
    dwells += [d for s, d in zip(seq.states, seq.durations) if s == 2]
fit = fit_nb_mle(dwells)
print("simulated ICU fraction %.4f" % (icu / 20000))
print("refit from %d dwells: r = %.3f, q = %.3f" % (len(dwells), fit.r, fit.q))
