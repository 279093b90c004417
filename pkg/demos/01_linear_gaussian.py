"""
Filtering and smoothing a linear-Gaussian state
===============================================

Sample a latent path from one state's dynamics, then recover it with the
Kalman filter and the Rauch-Tung-Striebel smoother.
"""
import numpy as np

from sslgm.cohort import reference_model
from sslgm.lgm_core import kalman_filter, rts_smoother, sample_path

# the reference model has three states; take the intermediate one
dynamics = reference_model(separation=2.0).components[0].dynamics[1]
Z, Y = sample_path(dynamics, 50, rng_seed=0)
print("latent dim", dynamics.latent_dim, "observed dim", dynamics.obs_dim)

filtered = kalman_filter(dynamics, Y)
smoothed = rts_smoother(dynamics, filtered)
print("log-likelihood of the path: %.2f" % filtered.loglik)

# smoothing uses future observations too, so its error should be smaller
rmse = lambda est: np.sqrt(np.mean((est - Z) ** 2))
print("filtered RMSE %.3f, smoothed RMSE %.3f" % (rmse(filtered.means), rmse(smoothed.means)))

# a regime sequence is passed as a list of per-step dynamics
model = reference_model(separation=2.0).components[0]
labels = np.r_[np.full(20, 2), np.full(10, 3)]
Z, Y = sample_path(model.dynamics_for(labels), len(labels), rng_seed=1)
print("switching log-likelihood %.2f" % kalman_filter(model.dynamics_for(labels), Y).loglik)
